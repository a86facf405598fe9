//! Scalar distribution catalog for values and per-dimension costs.
//!
//! Everything here has support inside a known box; values live in [0,1] and
//! each cost dimension lives in [0,1]. The catalog is small on purpose: point
//! mass, uniform, and a normal truncated to the support box.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    /// Degenerate distribution at `at`.
    Point { at: f64 },
    /// Uniform on [lo, hi].
    Uniform { lo: f64, hi: f64 },
    /// Normal(mean, sd) truncated to [0,1] by rejection.
    TruncNormal { mean: f64, sd: f64 },
}

impl Dist {
    pub fn point(at: f64) -> Self {
        Dist::Point { at }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Dist::Uniform { lo, hi }
    }

    /// True when the support is contained in [lo, hi].
    pub fn support_in(&self, lo: f64, hi: f64) -> bool {
        match *self {
            Dist::Point { at } => lo <= at && at <= hi,
            Dist::Uniform { lo: a, hi: b } => a <= b && lo <= a && b <= hi,
            // Truncation clamps the support to [0,1] by construction.
            Dist::TruncNormal { sd, .. } => sd > 0.0 && lo <= 0.0 && 1.0 <= hi,
        }
    }

    /// True when the distribution has an atom (used by the config lint: the
    /// smooth-cost assumption fails for point-mass cost distributions).
    pub fn has_atom(&self) -> bool {
        matches!(self, Dist::Point { .. })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Dist::Point { at } => at,
            Dist::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Dist::TruncNormal { mean, sd } => {
                // Box-Muller with rejection into [0,1]; clamp after a bounded
                // number of attempts so degenerate parameters cannot spin.
                for _ in 0..256 {
                    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                    let u2: f64 = rng.random();
                    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                    let x = mean + sd * z;
                    if (0.0..=1.0).contains(&x) {
                        return x;
                    }
                }
                mean.clamp(0.0, 1.0)
            }
        }
    }
}
