use serde::{Deserialize, Serialize};

use super::{GridCell, ParamTable, TableError};
use crate::gpu::WARP_SIZE;

/// Which coordinates were pulled back into the table domain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clamps {
    pub n: bool,
    pub e: bool,
    pub c: bool,
}

impl Clamps {
    pub fn any(self) -> bool {
        self.n || self.e || self.c
    }
}

/// An interpolated value and the clamping applied to get it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookup {
    pub cycles: f64,
    /// Load actually used after clamping.
    pub n: f64,
    pub e: f64,
    pub c: f64,
    pub clamps: Clamps,
}

fn finite(axis: &'static str, value: f64) -> Result<f64, TableError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(TableError::OutOfRange { axis, value })
    }
}

impl ParamTable {
    /// Clamps a query into the domain. Negative or non-finite load is an
    /// error; everything else is pulled back and recorded.
    fn clamp_query(&self, n: f64, e: f64, c: f64) -> Result<(f64, f64, f64, Clamps), TableError> {
        let n = finite("n", n)?;
        let e = finite("e", e)?;
        let c = finite("c", c)?;
        if n < 0.0 {
            return Err(TableError::OutOfRange { axis: "n", value: n });
        }
        let mut clamps = Clamps::default();
        let n_max = f64::from(self.n_max());
        let n = if n > n_max {
            clamps.n = true;
            n_max
        } else {
            n
        };
        let e_hi = f64::from(WARP_SIZE);
        let e_clamped = e.clamp(1.0, e_hi);
        clamps.e = e_clamped != e;
        let c_clamped = c.clamp(0.0, n);
        clamps.c = c_clamped != c;
        Ok((n, e_clamped, c_clamped, clamps))
    }

    /// Bilinear value on the `n = layer` plane. `c` is limited to the
    /// layer's own range `0..=layer`.
    fn layer_value(&self, layer: u32, e0: u32, te: f64, c: f64) -> f64 {
        if layer == 0 {
            return 0.0;
        }
        let c = c.min(f64::from(layer));
        let c0 = (c.floor() as u32).min(layer - 1);
        let tc = c - f64::from(c0);
        let at = |e: u32, c: u32| self.samples[Self::index_of(GridCell { n: layer, e, c })] as f64;
        let lo = (1.0 - tc) * at(e0, c0) + tc * at(e0, c0 + 1);
        if te == 0.0 {
            return lo;
        }
        let hi = (1.0 - tc) * at(e0 + 1, c0) + tc * at(e0 + 1, c0 + 1);
        (1.0 - te) * lo + te * hi
    }

    /// Interpolated total time `T(n, e, c)` to drain a closed batch.
    ///
    /// Multilinear over the grid with `T(0, e, c) = 0` as the lower anchor on
    /// the load axis. At integral coordinates the stored sample is returned
    /// unchanged. Between two load layers `c` is clamped to each layer's own
    /// range, so no sample with `c > n` is ever invented.
    pub fn total_time(&self, n: f64, e: f64, c: f64) -> Result<Lookup, TableError> {
        let (n, e, c, clamps) = self.clamp_query(n, e, c)?;
        let mut out = Lookup {
            cycles: 0.0,
            n,
            e,
            c,
            clamps,
        };
        if n == 0.0 {
            return Ok(out);
        }
        let n0 = (n.floor() as u32).min(self.n_max() - 1);
        let tn = n - f64::from(n0);
        let e0 = (e.floor() as u32).min(WARP_SIZE - 1);
        let te = e - f64::from(e0);

        let lo = self.layer_value(n0, e0, te, c);
        out.cycles = if tn == 0.0 {
            lo
        } else {
            (1.0 - tn) * lo + tn * self.layer_value(n0 + 1, e0, te, c)
        };
        Ok(out)
    }

    /// Per-job service time `S = T / n` at the (clamped) load.
    pub fn service_time(&self, n: f64, e: f64, c: f64) -> Result<Lookup, TableError> {
        if n == 0.0 {
            return Err(TableError::ZeroLoad);
        }
        let mut out = self.total_time(n, e, c)?;
        out.cycles /= out.n;
        Ok(out)
    }
}
