//! Standard normal helpers and a truncated-normal sampler.

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::SQRT_2;

/// Φ(x). Relative accuracy is kept deep into the left tail.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Φ⁻¹(u) for u in (0, 1).
pub fn std_normal_quantile(u: f64) -> f64 {
    debug_assert!(u > 0.0 && u < 1.0, "quantile argument {u} outside (0,1)");
    if u > 0.5 {
        // reflect so the small tail probability is what erfc_inv sees
        SQRT_2 * erfc_inv(2.0 * (1.0 - u))
    } else {
        -SQRT_2 * erfc_inv(2.0 * u)
    }
}

/// Outcome of a truncated draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedDraw {
    pub value: f64,
    /// The interval carried no representable probability mass and the
    /// value was clamped to its midpoint (or nearest finite point).
    pub underflow: bool,
}

/// Beyond this many standard deviations Φ loses too much precision for
/// inverse-CDF sampling and rejection samplers take over.
const TAIL_SWITCH: f64 = 30.0;
const MAX_REJECTIONS: usize = 100_000;
/// Intervals covering (−c, c) hold at least 38% of the mass and are
/// sampled by plain rejection from N(0, 1).
const REJECTION_CORE: f64 = 0.5;

/// Draws from N(mean, sd²) truncated to the open interval (lo, hi).
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> TruncatedDraw {
    debug_assert!(sd > 0.0);
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let draw = sample_truncated_std(a, b, rng);
    let mut value = mean + sd * draw.value;
    // rounding in the affine map can land on or past an endpoint
    if value <= lo {
        value = lo.next_up();
    }
    if value >= hi {
        value = hi.next_down();
    }
    TruncatedDraw {
        value,
        underflow: draw.underflow,
    }
}

/// Draws from the standard normal truncated to (a, b).
pub fn sample_truncated_std<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> TruncatedDraw {
    if !(a < b) {
        return clamp_fallback(a, b);
    }
    if a <= -REJECTION_CORE && b >= REJECTION_CORE {
        loop {
            let x: f64 = rng.sample(StandardNormal);
            if x > a && x < b {
                return TruncatedDraw {
                    value: x,
                    underflow: false,
                };
            }
        }
    }
    if a >= 0.0 {
        // work in the left half-line where Φ has relative precision
        let d = sample_left(-b, -a, rng);
        return TruncatedDraw {
            value: -d.value,
            underflow: d.underflow,
        };
    }
    sample_left(a, b, rng)
}

/// Requires a < 0 and a < b.
fn sample_left<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> TruncatedDraw {
    if b < -TAIL_SWITCH {
        let d = sample_far_tail(-b, -a, rng);
        return TruncatedDraw {
            value: -d.value,
            underflow: d.underflow,
        };
    }
    let pa = std_normal_cdf(a);
    let pb = std_normal_cdf(b);
    let mass = pb - pa;
    if !(mass > 0.0) {
        return clamp_fallback(a, b);
    }
    let u: f64 = rng.random();
    let p = pa + u * mass;
    if !(p > 0.0 && p < 1.0) {
        return clamp_fallback(a, b);
    }
    let x = std_normal_quantile(p);
    TruncatedDraw {
        value: x.clamp(a, b),
        underflow: false,
    }
}

/// Right tail (lo, hi) with lo > TAIL_SWITCH: translated-exponential
/// proposal for wide intervals, uniform proposal for narrow ones.
fn sample_far_tail<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> TruncatedDraw {
    let width = hi - lo;
    if width.is_finite() && width < 1.0 / lo {
        for _ in 0..MAX_REJECTIONS {
            let z = lo + width * rng.random::<f64>();
            let u: f64 = rng.random();
            if u.ln() <= 0.5 * (lo * lo - z * z) {
                return TruncatedDraw {
                    value: z,
                    underflow: false,
                };
            }
        }
        return clamp_fallback(lo, hi);
    }
    let alpha = 0.5 * (lo + (lo * lo + 4.0).sqrt());
    for _ in 0..MAX_REJECTIONS {
        let e = -(1.0 - rng.random::<f64>()).ln() / alpha;
        let z = lo + e;
        if z >= hi {
            continue;
        }
        let u: f64 = rng.random();
        if u.ln() <= -0.5 * (z - alpha) * (z - alpha) {
            return TruncatedDraw {
                value: z,
                underflow: false,
            };
        }
    }
    clamp_fallback(lo, hi)
}

fn clamp_fallback(a: f64, b: f64) -> TruncatedDraw {
    let value = match (a.is_finite(), b.is_finite()) {
        (true, true) => 0.5 * (a + b),
        (true, false) => a,
        (false, true) => b,
        (false, false) => 0.0,
    };
    TruncatedDraw {
        value,
        underflow: true,
    }
}
