//! Scalar numerics used throughout the sampler: standard-normal CDF, log-CDF
//! and quantile, exact truncated-normal sampling, and log-space categorical
//! draws for the three-component truncated-normal mixtures.

use rand::Rng;
use rand_distr::StandardNormal;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Standard normal CDF Phi(x).
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// log Phi(x), accurate deep into the lower tail.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x > -36.0 {
        (0.5 * libm::erfc(-x * FRAC_1_SQRT_2)).ln()
    } else {
        // Asymptotic expansion of the Mills ratio; erfc underflows below here.
        let xx = x * x;
        let corr = -1.0 / xx + 3.0 / (xx * xx) - 15.0 / (xx * xx * xx);
        -0.5 * xx - (-x).ln() - LN_SQRT_2PI + corr.ln_1p()
    }
}

/// log of the standard normal density.
pub fn norm_logpdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// ln(Phi(b) - Phi(a)) for a <= b, stable in either tail.
pub fn ln_norm_mass(a: f64, b: f64) -> f64 {
    if !(a <= b) {
        return f64::NEG_INFINITY;
    }
    if a == b {
        return f64::NEG_INFINITY;
    }
    if a > 0.0 {
        // Reflect into the lower tail where ln_norm_cdf is accurate.
        return ln_norm_mass_lower(-b, -a);
    }
    ln_norm_mass_lower(a, b)
}

// ln(Phi(b) - Phi(a)) assuming a <= 0 (so Phi(a) <= Phi(b) without reflection
// both logs are well conditioned).
fn ln_norm_mass_lower(a: f64, b: f64) -> f64 {
    let la = ln_norm_cdf(a);
    let lb = ln_norm_cdf(b);
    if la == f64::NEG_INFINITY {
        return lb;
    }
    let d = la - lb;
    if d >= 0.0 {
        // Only possible through rounding when a ~ b.
        return f64::NEG_INFINITY;
    }
    lb + (-d.exp()).ln_1p()
}

/// Inverse standard normal CDF (Acklam's rational approximation with one
/// Halley refinement). Returns +/- infinity at p = 1, 0.
pub fn inv_norm_cdf(p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "quantile argument out of [0,1]: {p}");
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }

    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let mut x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Halley refinement; skipped far in the tails where exp(x^2/2) overflows
    // and the raw approximation (~1e-9 relative) is already ample.
    if x.abs() < 37.0 {
        let e = norm_cdf(x) - p;
        let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + x * u / 2.0);
    }
    x
}

/// Draw Z ~ N(0,1) conditional on Z > a for a >= 0 (Robert's exponential
/// rejection sampler; exact).
fn sample_tail<R: Rng + ?Sized>(rng: &mut R, a: f64) -> f64 {
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        let z = a - u.ln() / alpha;
        let v: f64 = 1.0 - rng.random::<f64>();
        if v.ln() <= -0.5 * (z - alpha) * (z - alpha) {
            return z;
        }
    }
}

// Standardized truncated normal on [a, b] (either bound may be infinite).
fn sample_trunc_std<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    debug_assert!(a <= b);
    if a == b {
        return a;
    }
    if b.is_finite() && (b < 0.0 || (a.is_finite() && a.abs() > b.abs())) {
        return -sample_trunc_std(rng, -b, -a);
    }
    if !b.is_finite() {
        // One-sided [a, inf).
        if a == f64::NEG_INFINITY {
            return rng.sample(StandardNormal);
        }
        if a > 6.0 {
            return sample_tail(rng, a);
        }
        let mass = norm_cdf(-a);
        let u: f64 = 1.0 - rng.random::<f64>();
        return -inv_norm_cdf(u * mass);
    }
    // Two-sided with |a| <= |b|.
    if a > 6.0 {
        // Both bounds far in the upper tail.
        if (b - a) * a > 1.0 {
            loop {
                let z = sample_tail(rng, a);
                if z <= b {
                    return z;
                }
            }
        }
        loop {
            let z = a + (b - a) * rng.random::<f64>();
            let v: f64 = 1.0 - rng.random::<f64>();
            if v.ln() <= 0.5 * (a * a - z * z) {
                return z;
            }
        }
    }
    if a >= 0.0 {
        // Work on the complementary side where the CDF values are small and
        // therefore carry full relative precision.
        let hi = norm_cdf(-a);
        let lo = norm_cdf(-b);
        if !(hi > lo) {
            loop {
                let z = sample_tail(rng, a);
                if z <= b {
                    return z;
                }
            }
        }
        let u: f64 = rng.random();
        let v = lo + u * (hi - lo);
        return (-inv_norm_cdf(v)).clamp(a, b);
    }
    // a < 0 <= |b|: the interval contains the bulk, plain inverse CDF.
    let fa = norm_cdf(a);
    let fb = norm_cdf(b);
    let u: f64 = 1.0 - rng.random::<f64>();
    inv_norm_cdf(fa + u * (fb - fa)).clamp(a, b)
}

/// Draw from N(mean, sd^2) truncated to [lo, hi]. Bounds may be infinite.
pub fn sample_trunc_normal<R: Rng + ?Sized>(
    rng: &mut R,
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
) -> f64 {
    debug_assert!(sd > 0.0, "truncated normal needs sd > 0");
    debug_assert!(lo <= hi);
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let z = sample_trunc_std(rng, a, b);
    (mean + sd * z).clamp(lo, hi)
}

/// Pick an index proportionally to exp(log_w), normalizing in log space.
/// Returns None when every weight is -inf or NaN.
pub fn sample_categorical_log<R: Rng + ?Sized>(rng: &mut R, log_w: &[f64]) -> Option<usize> {
    let m = log_w
        .iter()
        .copied()
        .filter(|w| w.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let w: Vec<f64> = log_w
        .iter()
        .map(|&lw| if lw.is_finite() { (lw - m).exp() } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    let mut target = rng.random::<f64>() * total;
    for (k, wk) in w.iter().enumerate() {
        target -= wk;
        if target <= 0.0 {
            return Some(k);
        }
    }
    Some(w.len() - 1)
}

/// SplitMix64 step, used to derive per-chain RNG streams from one seed.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n - 1 divisor).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}
