//! Table CSV persistence.
//!
//! ```text
//! # gpu=titan-v
//! # warps_per_sm=64
//! # sm_count=80
//! # metadata="bench run 17, clocks locked"
//! n,e,c,total_cycles
//! 1,1,0,84
//! ...
//! ```
//!
//! Rows are written sorted by `(n, e, c)`. The optional header
//! `# popc_calibrated=true` marks tables measured with POPC.INC jobs.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{GridCell, ParamTable, TableError};
use crate::gpu::{split_header, GpuSpec};

const COLUMNS: [&str; 4] = ["n", "e", "c", "total_cycles"];

pub fn load_table(path: &Path) -> Result<ParamTable, TableError> {
    let text = fs::read_to_string(path)?;
    parse_table(&text)
}

pub fn save_table(table: &ParamTable, path: &Path) -> Result<(), TableError> {
    let mut out = Vec::with_capacity(table.len() * 12);
    write_table(table, &mut out)?;
    fs::write(path, out)?;
    Ok(())
}

pub fn write_table(table: &ParamTable, out: &mut impl Write) -> std::io::Result<()> {
    let gpu = table.gpu();
    writeln!(out, "# gpu={}", gpu.name)?;
    writeln!(out, "# warps_per_sm={}", gpu.warps_per_sm)?;
    writeln!(out, "# sm_count={}", gpu.sm_count)?;
    // A JSON string literal is a quoted string with escapes for quotes,
    // backslashes and newlines, which is all the header grammar needs.
    let quoted = serde_json::to_string(table.metadata()).expect("strings always serialize");
    writeln!(out, "# metadata={quoted}")?;
    if table.popc_calibrated() {
        writeln!(out, "# popc_calibrated=true")?;
    }
    writeln!(out, "{}", COLUMNS.join(","))?;
    for (cell, t) in table.cells() {
        writeln!(out, "{},{},{},{}", cell.n, cell.e, cell.c, t)?;
    }
    Ok(())
}

struct Headers {
    gpu: Option<String>,
    warps_per_sm: Option<u32>,
    sm_count: Option<u32>,
    metadata: String,
    popc: bool,
}

fn parse_headers(text: &str) -> Result<Headers, TableError> {
    let mut h = Headers {
        gpu: None,
        warps_per_sm: None,
        sm_count: None,
        metadata: String::new(),
        popc: false,
    };
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx as u64 + 1;
        if !line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = split_header(line) else {
            continue;
        };
        let int = |v: &str| {
            v.parse::<u32>().map_err(|_| TableError::Malformed {
                line: line_no,
                msg: format!("`{key}` must be a nonnegative integer, got `{v}`"),
            })
        };
        match key {
            "gpu" => h.gpu = Some(value.to_string()),
            "warps_per_sm" => h.warps_per_sm = Some(int(value)?),
            "sm_count" => h.sm_count = Some(int(value)?),
            "metadata" => {
                h.metadata = if value.starts_with('"') {
                    serde_json::from_str(value).map_err(|e| TableError::Malformed {
                        line: line_no,
                        msg: format!("bad quoted metadata: {e}"),
                    })?
                } else {
                    value.to_string()
                }
            }
            "popc_calibrated" => {
                h.popc = match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(TableError::Malformed {
                            line: line_no,
                            msg: format!("`popc_calibrated` must be true or false, got `{other}`"),
                        })
                    }
                }
            }
            _ => {}
        }
    }
    Ok(h)
}

/// Reads `n,e,c,total_cycles` rows, skipping `#` lines. The column header
/// row is required when `require_header` is set and optional otherwise.
fn read_rows(text: &str, require_header: bool) -> Result<Vec<(GridCell, u64)>, TableError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut rows = Vec::new();
    let mut seen_header = false;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| TableError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if i == 0 && record.iter().eq(COLUMNS.iter().copied()) {
            seen_header = true;
            continue;
        }
        if i == 0 && require_header {
            return Err(TableError::Malformed {
                line,
                msg: format!("expected column header `{}`", COLUMNS.join(",")),
            });
        }
        if record.len() != 4 {
            return Err(TableError::Malformed {
                line,
                msg: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let field = |k: usize| -> Result<u64, TableError> {
            let raw = &record[k];
            raw.parse::<u64>().map_err(|_| TableError::Malformed {
                line,
                msg: format!("`{}` must be a base-10 nonnegative integer, got `{raw}`", COLUMNS[k]),
            })
        };
        let small = |k: usize| -> Result<u32, TableError> {
            u32::try_from(field(k)?).map_err(|_| TableError::Malformed {
                line,
                msg: format!("`{}` is too large", COLUMNS[k]),
            })
        };
        rows.push((GridCell::new(small(0)?, small(1)?, small(2)?), field(3)?));
    }
    if require_header && !seen_header {
        return Err(TableError::Malformed {
            line: 0,
            msg: format!("expected column header `{}`", COLUMNS.join(",")),
        });
    }
    Ok(rows)
}

/// Parses a complete table file.
pub fn parse_table(text: &str) -> Result<ParamTable, TableError> {
    let h = parse_headers(text)?;
    let gpu = GpuSpec::new(
        h.gpu.ok_or(TableError::MissingHeader("gpu"))?,
        h.warps_per_sm.ok_or(TableError::MissingHeader("warps_per_sm"))?,
        h.sm_count.ok_or(TableError::MissingHeader("sm_count"))?,
    )?;
    let rows = read_rows(text, true)?;
    Ok(ParamTable::from_rows(gpu, h.metadata, rows)?.with_popc_calibrated(h.popc))
}

/// Parses raw benchmark output: `n,e,c,total_cycles` rows with an optional
/// column header and optional `#` comment lines.
pub fn parse_bench_rows(text: &str) -> Result<Vec<(GridCell, u64)>, TableError> {
    read_rows(text, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param_table::grid_cells;

    fn small_table(meta: &str) -> ParamTable {
        let gpu = GpuSpec::new("tiny", 3, 2).unwrap();
        ParamTable::from_fn(gpu, meta, |c| 10 * c.n as u64 + c.e as u64 + 3 * c.c as u64).unwrap()
    }

    fn render(t: &ParamTable) -> String {
        let mut out = Vec::new();
        write_table(t, &mut out).unwrap();
        String::from_utf8(out).unwrap()
    }

    #[test]
    fn layout_is_sorted_with_headers() {
        let text = render(&small_table("synthetic"));
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# gpu=tiny"));
        assert_eq!(lines.next(), Some("# warps_per_sm=3"));
        assert_eq!(lines.next(), Some("# sm_count=2"));
        assert_eq!(lines.next(), Some("# metadata=\"synthetic\""));
        assert_eq!(lines.next(), Some("n,e,c,total_cycles"));
        assert_eq!(lines.next(), Some("1,1,0,11"));
        assert_eq!(lines.next(), Some("1,1,1,14"));
        assert_eq!(lines.next(), Some("1,2,0,12"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn metadata_with_commas_and_quotes_round_trips() {
        let meta = "run 4, \"locked\" clocks,\nsecond line \\ done";
        let t = small_table(meta);
        let back = parse_table(&render(&t)).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.metadata(), meta);
    }

    #[test]
    fn popc_flag_round_trips() {
        let t = small_table("").with_popc_calibrated(true);
        let text = render(&t);
        assert!(text.contains("# popc_calibrated=true"));
        assert!(parse_table(&text).unwrap().popc_calibrated());
    }

    #[test]
    fn missing_cell_is_reported() {
        let text = render(&small_table(""));
        let filtered: String = text
            .lines()
            .filter(|l| *l != "3,5,0,35")
            .map(|l| format!("{l}\n"))
            .collect();
        match parse_table(&filtered) {
            Err(TableError::MissingCells { first, .. }) => assert_eq!(first[0], GridCell::new(3, 5, 0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_problems() {
        let text = render(&small_table(""));
        let no_gpu: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_table(&no_gpu), Err(TableError::MissingHeader("gpu"))));

        let bad = text.replace("# warps_per_sm=3", "# warps_per_sm=4");
        assert!(matches!(
            parse_table(&bad),
            Err(TableError::SpecMismatch { declared: 4, found: 3 })
        ));

        let no_cols = text.replace("n,e,c,total_cycles\n", "");
        assert!(matches!(parse_table(&no_cols), Err(TableError::Malformed { .. })));
    }

    #[test]
    fn rejects_non_integers() {
        let text = render(&small_table("")).replace("1,1,0,11", "1,1,0,11.5");
        let err = parse_table(&text).unwrap_err();
        assert!(err.to_string().contains("total_cycles"), "{err}");
        let text = render(&small_table("")).replace("1,1,0,11", "1,1,0,-11");
        assert!(parse_table(&text).is_err());
    }

    #[test]
    fn zero_cycles_rejected() {
        let text = render(&small_table("")).replace("1,1,0,11", "1,1,0,0");
        assert!(matches!(parse_table(&text), Err(TableError::NonPositiveTime(_))));
    }

    #[test]
    fn bench_rows_header_optional() {
        let with = "n,e,c,total_cycles\n1,1,0,5\n# note\n1,1,1,6\n";
        let without = "1,1,0,5\n1,1,1,6\n";
        assert_eq!(parse_bench_rows(with).unwrap(), parse_bench_rows(without).unwrap());
        assert_eq!(parse_bench_rows(without).unwrap().len(), 2);
        assert_eq!(grid_cells(1).count(), 64);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t = small_table("a,b");
        save_table(&t, &path).unwrap();
        assert_eq!(load_table(&path).unwrap(), t);
        assert!(matches!(load_table(&dir.path().join("nope.csv")), Err(TableError::Io(_))));
    }
}
