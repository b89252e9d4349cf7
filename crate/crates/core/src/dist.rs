//! Central and noncentral Student-t distribution functions.
//!
//! The noncentral CDF follows Lenth's series (AS 243): a Poisson-weighted
//! mixture of incomplete beta ratios, summed until the remaining tail mass
//! bound drops below [`SERIES_TOLERANCE`]. Quantiles are found by bracketing
//! followed by bisection and a safeguarded secant refinement.

use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::erf::erfc;

use crate::error::{domain, Result};

/// Truncation bound on the remaining mass of the noncentral series.
pub const SERIES_TOLERANCE: f64 = 1e-12;
const SERIES_MAX_TERMS: usize = 2000;
/// Quantile inversion stops once the CDF residual is below this value.
pub const QUANTILE_TOLERANCE: f64 = 1e-8;

/// Above this many degrees of freedom the incomplete beta continued fraction
/// becomes slow, and the normal approximation error is well below 1e-10.
const LARGE_DF: f64 = 4e5;

/// Degrees of freedom and noncentrality of a (noncentral) t distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistParams {
    pub df: f64,
    pub ncp: f64,
}

impl DistParams {
    pub fn new(df: f64, ncp: f64) -> Result<Self> {
        check_df(df)?;
        if !ncp.is_finite() {
            return domain(format!("noncentrality must be finite, got {ncp}"));
        }
        Ok(Self { df, ncp })
    }

    /// Parameters of the paired t statistic for `n` pairs at standardized effect `d`.
    pub fn paired(n: u64, d: f64) -> Result<Self> {
        if n < 2 {
            return domain(format!("need at least 2 pairs, got {n}"));
        }
        Self::new((n - 1) as f64, d * (n as f64).sqrt())
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        nct_cdf(x, self.df, self.ncp)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        nct_quantile(p, self.df, self.ncp)
    }
}

fn check_df(df: f64) -> Result<()> {
    if !(df > 0.0) || df.is_nan() {
        return domain(format!("degrees of freedom must be positive, got {df}"));
    }
    Ok(())
}

fn check_prob(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("probability must lie in (0, 1), got {p}"));
    }
    Ok(())
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// CDF of the central t distribution with `df` degrees of freedom.
pub fn t_cdf(x: f64, df: f64) -> Result<f64> {
    check_df(df)?;
    if x.is_nan() {
        return domain("t_cdf argument is NaN");
    }
    if !df.is_finite() {
        return domain("degrees of freedom must be finite");
    }
    if x == f64::INFINITY {
        return Ok(1.0);
    }
    if x == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if df > LARGE_DF {
        let s = 1.0 / (4.0 * df);
        return Ok(normal_cdf(x * (1.0 - s) / (1.0 + x * x * 2.0 * s).sqrt()));
    }
    let x2 = x * x;
    // lower tail mass P(T < -|x|)
    let tail = if x2 < df {
        0.5 * (1.0 - beta_reg(0.5, 0.5 * df, x2 / (df + x2)))
    } else {
        0.5 * beta_reg(0.5 * df, 0.5, df / (df + x2))
    };
    Ok(if x > 0.0 { 1.0 - tail } else { tail })
}

/// Quantile of the central t distribution.
pub fn t_quantile(p: f64, df: f64) -> Result<f64> {
    check_prob(p)?;
    check_df(df)?;
    if p == 0.5 {
        return Ok(0.0);
    }
    // use the symmetric branch that keeps the target away from 1
    if p > 0.5 {
        return Ok(-t_quantile(1.0 - p, df)?);
    }
    invert_cdf(|x| t_cdf(x, df), p, 0.0)
}

/// CDF of the noncentral t distribution.
pub fn nct_cdf(x: f64, df: f64, ncp: f64) -> Result<f64> {
    check_df(df)?;
    if x.is_nan() || !ncp.is_finite() || !df.is_finite() {
        return domain(format!("invalid nct_cdf arguments x={x}, df={df}, ncp={ncp}"));
    }
    if ncp == 0.0 {
        return t_cdf(x, df);
    }
    if x == f64::INFINITY {
        return Ok(1.0);
    }
    if x == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let (t, delta, negated) = if x >= 0.0 {
        (x, ncp, false)
    } else {
        (-x, -ncp, true)
    };

    // exp(-delta^2 / 2) underflows past this point
    if df > LARGE_DF || delta * delta > 2.0 * std::f64::consts::LN_2 * 1021.0 {
        let s = 1.0 / (4.0 * df);
        let z = (t * (1.0 - s) - delta) / (1.0 + t * t * 2.0 * s).sqrt();
        let p = normal_cdf(z);
        return Ok(if negated { 1.0 - p } else { p });
    }

    let t2 = t * t;
    let x = t2 / (t2 + df);
    let mut tnc = 0.0;
    if x > 0.0 {
        let lambda = delta * delta;
        let mut p = 0.5 * (-0.5 * lambda).exp();
        let mut q = (2.0 / std::f64::consts::PI).sqrt() * p * delta;
        let mut s = 0.5 - p;
        if s < 1e-7 {
            s = -0.5 * (-0.5 * lambda).exp_m1();
        }
        let mut a = 0.5;
        let b = 0.5 * df;
        let rxb = (df / (t2 + df)).powf(b);
        let log_beta = ln_beta(a, b);
        let mut xodd = beta_reg(a, b, x);
        let mut godd = 2.0 * rxb * (a * x.ln() - log_beta).exp();
        let bx = b * x;
        let mut xeven = if bx < f64::EPSILON { bx } else { 1.0 - rxb };
        let mut geven = bx * rxb;
        tnc = p * xodd + q * xeven;

        for it in 1..=SERIES_MAX_TERMS {
            a += 1.0;
            xodd -= godd;
            xeven -= geven;
            godd *= x * (a + b - 1.0) / a;
            geven *= x * (a + b - 0.5) / (a + 0.5);
            p *= lambda / (2.0 * it as f64);
            q *= lambda / (2.0 * it as f64 + 1.0);
            tnc += p * xodd + q * xeven;
            s -= p;
            if s < -1e-10 || (s <= 0.0 && it > 1) {
                break;
            }
            let bound = 2.0 * s * (xodd - godd);
            if bound.abs() < SERIES_TOLERANCE {
                break;
            }
        }
    }
    tnc += normal_cdf(-delta);
    let tnc = tnc.clamp(0.0, 1.0);
    Ok(if negated { 1.0 - tnc } else { tnc })
}

/// Quantile of the noncentral t distribution.
pub fn nct_quantile(p: f64, df: f64, ncp: f64) -> Result<f64> {
    check_prob(p)?;
    check_df(df)?;
    if !ncp.is_finite() {
        return domain(format!("noncentrality must be finite, got {ncp}"));
    }
    if ncp == 0.0 {
        return t_quantile(p, df);
    }
    invert_cdf(|x| nct_cdf(x, df, ncp), p, ncp)
}

/// Finds `x` with `cdf(x) = p` for a continuous nondecreasing `cdf`.
fn invert_cdf<F>(cdf: F, p: f64, start: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let f = |x: f64| cdf(x).map(|c| c - p);

    let mut step = 1.0;
    let (mut lo, mut hi) = (start - step, start + step);
    let (mut flo, mut fhi) = (f(lo)?, f(hi)?);
    let mut guard = 0;
    while flo > 0.0 {
        hi = lo;
        fhi = flo;
        step *= 2.0;
        lo = start - step;
        flo = f(lo)?;
        guard += 1;
        if guard > 200 {
            return domain(format!("could not bracket quantile for p={p}"));
        }
    }
    while fhi < 0.0 {
        lo = hi;
        flo = fhi;
        step *= 2.0;
        hi = start + step;
        fhi = f(hi)?;
        guard += 1;
        if guard > 200 {
            return domain(format!("could not bracket quantile for p={p}"));
        }
    }
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }

    // coarse bisection
    while hi - lo > 1e-3 * (1.0 + lo.abs().max(hi.abs())) {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm < 0.0 {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
            fhi = fm;
        }
    }

    // Illinois-modified secant inside the bracket
    let mut side = 0i8;
    for _ in 0..200 {
        let mut x = (lo * fhi - hi * flo) / (fhi - flo);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let fx = f(x)?;
        if fx.abs() < QUANTILE_TOLERANCE * 1e-4 || hi - lo < 1e-14 * (1.0 + x.abs()) {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
            flo = fx;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            fhi = fx;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
    }
    let x = 0.5 * (lo + hi);
    let fx = f(x)?;
    if fx.abs() > QUANTILE_TOLERANCE {
        return domain(format!("quantile search did not converge for p={p}"));
    }
    Ok(x)
}
