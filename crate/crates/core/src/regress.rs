//! Least squares, constant regression, power-law learning curves and the
//! paired t-test.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::{Error, Result};

/// Simple linear regression `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination; 1 when all `y` are equal.
    pub r2: f64,
    pub point_count: usize,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub residual_se: f64,
    /// Mean of the regressor, kept for interval estimates.
    pub x_mean: f64,
    /// Sum of squared deviations of the regressor.
    pub x_ss: f64,
}

impl LinearModel {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    pub fn dof(&self) -> usize {
        self.point_count.saturating_sub(2)
    }

    /// Confidence interval for the mean response at `x`.
    pub fn mean_interval(&self, x: f64, level: f64) -> Option<(f64, f64)> {
        self.interval(x, level, 0.0)
    }

    /// Prediction interval for a new observation at `x`.
    pub fn prediction_interval(&self, x: f64, level: f64) -> Option<(f64, f64)> {
        self.interval(x, level, 1.0)
    }

    fn interval(&self, x: f64, level: f64, extra: f64) -> Option<(f64, f64)> {
        let df = self.dof();
        if df == 0 || !(0.0..1.0).contains(&level) {
            return None;
        }
        let q = t_quantile(0.5 + level / 2.0, df as f64);
        let m = self.point_count as f64;
        let dx = x - self.x_mean;
        let half = q * self.residual_se * (extra + 1.0 / m + dx * dx / self.x_ss).sqrt();
        let y = self.predict(x);
        Some((y - half, y + half))
    }
}

/// Ordinary least squares on `(x, y)` points.
pub fn ols(points: &[(f64, f64)]) -> Result<LinearModel> {
    let m = points.len();
    if m < 2 {
        return Err(Error::DegenerateFit(format!(
            "least squares needs at least 2 points, got {m}"
        )));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidArgument("non-finite regression input".into()));
    }
    let x0 = points[0].0;
    if points.iter().all(|&(x, _)| x == x0) {
        return Err(Error::DegenerateFit("all x values are equal".into()));
    }
    let mf = m as f64;
    let x_mean = mean(points.iter().map(|p| p.0));
    // Sums and the normal-equation solution in double-double precision, so
    // that small rational inputs give correctly rounded coefficients.
    let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (Dd::ZERO, Dd::ZERO, Dd::ZERO, Dd::ZERO, Dd::ZERO);
    for &(x, y) in points {
        sx = sx.add(Dd::from(x));
        sy = sy.add(Dd::from(y));
        sxx = sxx.add(Dd::prod(x, x));
        sxy = sxy.add(Dd::prod(x, y));
        syy = syy.add(Dd::prod(y, y));
    }
    let nd = Dd::from(mf);
    let dxx = nd.mul(sxx).sub(sx.mul(sx));
    let dxy = nd.mul(sxy).sub(sx.mul(sy));
    let dyy = nd.mul(syy).sub(sy.mul(sy));
    let slope = dxy.div(dxx).value();
    let intercept = sy.mul(sxx).sub(sx.mul(sxy)).div(dxx).value();
    let sxx = dxx.div(nd).value();
    let ss_res: f64 = points
        .iter()
        .map(|&(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let y0 = points[0].1;
    let r2 = if points.iter().any(|&(_, y)| y != y0) {
        dxy.mul(dxy).div(dxx.mul(dyy)).value().clamp(0.0, 1.0)
    } else {
        1.0
    };
    let residual_se = if m > 2 {
        (ss_res / (mf - 2.0)).sqrt()
    } else {
        0.0
    };
    Ok(LinearModel {
        slope,
        intercept,
        r2,
        point_count: m,
        slope_se: residual_se / sxx.sqrt(),
        intercept_se: residual_se * (1.0 / mf + x_mean * x_mean / sxx).sqrt(),
        residual_se,
        x_mean,
        x_ss: sxx,
    })
}

/// Unevaluated sum `hi + lo` carrying about 106 significant bits.
#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> Self {
        let s = a + b;
        let bb = s - a;
        Dd {
            hi: s,
            lo: (a - (s - bb)) + (b - bb),
        }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let s = hi + lo;
        Dd {
            hi: s,
            lo: lo - (s - hi),
        }
    }

    fn prod(a: f64, b: f64) -> Self {
        let p = a * b;
        Dd {
            hi: p,
            lo: a.mul_add(b, -p),
        }
    }

    fn add(self, o: Dd) -> Self {
        let s = Dd::two_sum(self.hi, o.hi);
        let t = Dd::two_sum(self.lo, o.lo);
        let r = Dd::renorm(s.hi, s.lo + t.hi);
        Dd::renorm(r.hi, r.lo + t.lo)
    }

    fn sub(self, o: Dd) -> Self {
        self.add(Dd {
            hi: -o.hi,
            lo: -o.lo,
        })
    }

    fn mul(self, o: Dd) -> Self {
        let p = Dd::prod(self.hi, o.hi);
        Dd::renorm(p.hi, p.lo + (self.hi * o.lo + self.lo * o.hi))
    }

    fn div(self, o: Dd) -> Self {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul(Dd::from(q1)));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul(Dd::from(q2)));
        let q3 = r.hi / o.hi;
        Dd::renorm(q1, q2).add(Dd::from(q3))
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    accurate_mean(&v)
}

/// Mean of `values`, correctly rounded in all but pathological cases:
/// a compensated sum followed by an fma-corrected division.
fn accurate_mean(values: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    let m = values.len() as f64;
    let q = sum / m;
    let rem = (-q).mul_add(m, sum);
    q + (rem + comp) / m
}

/// The constant minimising mean squared error against `values`: their mean.
pub fn constant_fit(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::DegenerateFit("constant fit of an empty list".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in constant fit".into()));
    }
    Ok(accurate_mean(values))
}

/// Learning curve `a * n^b + asymptote` with a fixed asymptote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawModel {
    pub a: f64,
    pub b: f64,
    pub asymptote: f64,
    pub residual_se: f64,
    pub a_se: f64,
    pub b_se: f64,
    pub point_count: usize,
    pub robust: bool,
    /// False when robust reweighting hit the iteration cap; the parameters
    /// are then the best found so far.
    pub converged: bool,
    pub iterations: usize,
}

impl PowerLawModel {
    pub fn predict(&self, n: f64) -> f64 {
        self.a * n.powf(self.b) + self.asymptote
    }
}

pub const POWER_LAW_B_MIN: f64 = -3.0;
pub const POWER_LAW_B_MAX: f64 = -0.001;
const COARSE_GRID: usize = 600;
const GOLDEN_TOL: f64 = 1e-8;
const HUBER_K: f64 = 1.345;
const MAD_TO_SD: f64 = 1.4826;
const IRLS_MAX_ITER: usize = 50;
const IRLS_TOL: f64 = 1e-10;

/// Fit `e ~ a * n^b + asymptote` by weighted least squares with `a >= 0`
/// and `b` in `[-3, -0.001]`.
///
/// For fixed `b` the optimal `a` is closed-form, so the fit is a 1-D search
/// over `b`: a coarse grid followed by golden-section refinement. With
/// `robust`, Huber weights (`k = 1.345 * s`, with `s` the MAD-based residual
/// standard error) are iterated to convergence.
pub fn fit_power_law(points: &[(f64, f64)], asymptote: f64, robust: bool) -> Result<PowerLawModel> {
    let m = points.len();
    if m < 2 {
        return Err(Error::DegenerateFit(format!(
            "power-law fit needs at least 2 points, got {m}"
        )));
    }
    if !asymptote.is_finite()
        || points
            .iter()
            .any(|&(n, e)| !(n.is_finite() && n > 0.0 && e.is_finite()))
    {
        return Err(Error::InvalidArgument(
            "power-law fit needs positive finite n and finite e".into(),
        ));
    }
    let above = points.iter().filter(|&&(_, e)| e > asymptote).count();
    if above < 2 {
        return Err(Error::NothingToFit(format!(
            "only {above} of {m} points lie above the asymptote {asymptote}"
        )));
    }

    let curve = Curve {
        log_n: points.iter().map(|p| p.0.ln()).collect(),
        excess: points.iter().map(|p| p.1 - asymptote).collect(),
    };
    let mut weights = vec![1.0; m];
    let (mut a, mut b) = curve.fit(&weights);
    let mut iterations = 0;
    let mut converged = true;

    if robust {
        converged = false;
        for it in 1..=IRLS_MAX_ITER {
            iterations = it;
            let s = curve.robust_scale(a, b);
            if s == 0.0 {
                converged = true;
                break;
            }
            let k = HUBER_K * s;
            for (w, r) in weights.iter_mut().zip(curve.residuals(a, b)) {
                *w = if r.abs() <= k { 1.0 } else { k / r.abs() };
            }
            let (na, nb) = curve.fit(&weights);
            let change = (na - a).abs().max((nb - b).abs());
            (a, b) = (na, nb);
            if change < IRLS_TOL {
                converged = true;
                break;
            }
        }
    }

    if a <= 0.0 {
        return Err(Error::NothingToFit(
            "no decreasing power law fits above the asymptote".into(),
        ));
    }
    let residual_se = curve.residual_se(a, b, &weights);
    let (a_se, b_se) = curve.standard_errors(a, b, &weights, residual_se);
    Ok(PowerLawModel {
        a,
        b,
        asymptote,
        residual_se,
        a_se,
        b_se,
        point_count: m,
        robust,
        converged,
        iterations,
    })
}

struct Curve {
    log_n: Vec<f64>,
    /// `e - asymptote`
    excess: Vec<f64>,
}

impl Curve {
    /// Optimal `a >= 0` for fixed `b`, and the weighted SSE it achieves.
    fn profile(&self, b: f64, w: &[f64]) -> (f64, f64) {
        let (mut sxr, mut sxx) = (0.0, 0.0);
        for ((&ln, &r), &wi) in self.log_n.iter().zip(&self.excess).zip(w) {
            let x = (b * ln).exp();
            sxr += wi * x * r;
            sxx += wi * x * x;
        }
        let a = (sxr / sxx).max(0.0);
        let sse = self
            .log_n
            .iter()
            .zip(&self.excess)
            .zip(w)
            .map(|((&ln, &r), &wi)| {
                let d = r - a * (b * ln).exp();
                wi * d * d
            })
            .sum();
        (a, sse)
    }

    fn fit(&self, w: &[f64]) -> (f64, f64) {
        let step = (POWER_LAW_B_MAX - POWER_LAW_B_MIN) / (COARSE_GRID - 1) as f64;
        let grid = |i: usize| POWER_LAW_B_MIN + step * i as f64;
        let mut best = (0, f64::INFINITY);
        for i in 0..COARSE_GRID {
            let sse = self.profile(grid(i), w).1;
            if sse < best.1 {
                best = (i, sse);
            }
        }
        let lo = grid(best.0.saturating_sub(1));
        let hi = grid((best.0 + 1).min(COARSE_GRID - 1));
        let b = golden_section(|b| self.profile(b, w).1, lo, hi, GOLDEN_TOL);
        // Golden section never evaluates the bracket ends; keep the coarse
        // winner if the refinement did not beat it.
        let b = if self.profile(b, w).1 <= best.1 { b } else { grid(best.0) };
        (self.profile(b, w).0, b)
    }

    fn residuals(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        self.log_n
            .iter()
            .zip(&self.excess)
            .map(move |(&ln, &r)| r - a * (b * ln).exp())
    }

    /// Residual standard error estimated robustly, `1.4826 * MAD`, so that
    /// outliers cannot inflate the Huber threshold.
    fn robust_scale(&self, a: f64, b: f64) -> f64 {
        let mut abs: Vec<f64> = self.residuals(a, b).map(f64::abs).collect();
        abs.sort_by(f64::total_cmp);
        let m = abs.len();
        let median = if m % 2 == 1 {
            abs[m / 2]
        } else {
            0.5 * (abs[m / 2 - 1] + abs[m / 2])
        };
        MAD_TO_SD * median
    }

    fn residual_se(&self, a: f64, b: f64, w: &[f64]) -> f64 {
        let m = self.log_n.len();
        if m <= 2 {
            return 0.0;
        }
        let sse: f64 = self.residuals(a, b).zip(w).map(|(r, wi)| wi * r * r).sum();
        (sse / (m - 2) as f64).sqrt()
    }

    /// Asymptotic standard errors from `s^2 (J^T W J)^{-1}` with Jacobian
    /// rows `[n^b, a n^b ln n]`.
    fn standard_errors(&self, a: f64, b: f64, w: &[f64], s: f64) -> (f64, f64) {
        if self.log_n.len() <= 2 {
            return (0.0, 0.0);
        }
        let (mut j00, mut j01, mut j11) = (0.0, 0.0, 0.0);
        for (&ln, &wi) in self.log_n.iter().zip(w) {
            let x = (b * ln).exp();
            let da = x;
            let db = a * x * ln;
            j00 += wi * da * da;
            j01 += wi * da * db;
            j11 += wi * db * db;
        }
        let det = j00 * j11 - j01 * j01;
        if det <= 0.0 {
            return (0.0, 0.0);
        }
        let s2 = s * s;
        ((s2 * j11 / det).sqrt(), (s2 * j00 / det).sqrt())
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    if fc <= fd {
        c
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: usize,
    pub p_two_sided: f64,
    pub mean_diff: f64,
    pub sd_diff: f64,
    /// Zero spread in the differences: `p` is 0 (nonzero mean) or 1.
    pub degenerate: bool,
}

/// Student-t CDF with `df` degrees of freedom via the regularized
/// incomplete beta function.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * t_tail_mass(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided p-value `P(|T| >= |t|)`.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    t_tail_mass(t, df).clamp(0.0, 1.0)
}

/// `P(|T| >= |t|)`. Near zero the complementary form avoids evaluating the
/// incomplete beta function close to 1.
fn t_tail_mass(t: f64, df: f64) -> f64 {
    let t2 = t * t;
    if t2 < df {
        1.0 - beta_reg(0.5, df / 2.0, t2 / (df + t2))
    } else {
        beta_reg(df / 2.0, 0.5, df / (df + t2))
    }
}

/// Inverse of [`t_cdf`] by bisection.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile probability {p} outside (0, 1)");
    let (mut lo, mut hi) = (-1.0, 1.0);
    while t_cdf(lo, df) > p {
        lo *= 2.0;
    }
    while t_cdf(hi, df) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Paired-samples t-test on `(predicted, observed)` pairs.
pub fn paired_t_test(pairs: &[(f64, f64)]) -> Result<TTestResult> {
    let m = pairs.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "paired t-test needs at least 2 pairs, got {m}"
        )));
    }
    let diffs: Vec<f64> = pairs.iter().map(|(p, o)| p - o).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in t-test".into()));
    }
    let mean_diff = accurate_mean(&diffs);
    let ss: f64 = diffs.iter().map(|d| (d - mean_diff).powi(2)).sum();
    let sd_diff = (ss / (m - 1) as f64).sqrt();
    let df = m - 1;
    if sd_diff == 0.0 {
        let (t, p) = if mean_diff == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean_diff), 0.0)
        };
        return Ok(TTestResult {
            t,
            df,
            p_two_sided: p,
            mean_diff,
            sd_diff,
            degenerate: true,
        });
    }
    let t = mean_diff / (sd_diff / (m as f64).sqrt());
    Ok(TTestResult {
        t,
        df,
        p_two_sided: t_two_sided_p(t, df as f64),
        mean_diff,
        sd_diff,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    #[test]
    fn exact_line() {
        let m = ols(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]).unwrap();
        assert_abs_diff_eq!(m.slope, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.intercept, 0.0, epsilon = 1e-15);
        assert_eq!(m.r2, 1.0);
        assert_eq!(m.residual_se, 0.0);
    }

    #[test]
    fn hand_computed_fit() {
        // Normal equations: Sxx = 2, Sxy = 1, SS_tot = 2/3, SS_res = 1/6.
        let m = ols(&[(0.0, 0.0), (1.0, 1.0), (2.0, 1.0)]).unwrap();
        assert_eq!(m.slope, 0.5);
        assert_abs_diff_eq!(m.intercept, 1.0 / 6.0, epsilon = 1e-16);
        assert_abs_diff_eq!(m.r2, 0.75, epsilon = 1e-15);
        // s = sqrt(SS_res / 1); se(slope) = s / sqrt(Sxx)
        let s = (1.0f64 / 6.0).sqrt();
        assert_abs_diff_eq!(m.residual_se, s, epsilon = 1e-15);
        assert_abs_diff_eq!(m.slope_se, s / 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(m.intercept_se, s * (1.0f64 / 3.0 + 0.5).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn constant_y_reports_unit_r2() {
        let m = ols(&[(0.0, 0.4), (1.0, 0.4), (5.0, 0.4)]).unwrap();
        assert_eq!(m.slope, 0.0);
        assert_eq!(m.intercept, 0.4);
        assert_eq!(m.r2, 1.0);
    }

    #[test]
    fn ols_errors() {
        assert!(matches!(ols(&[(1.0, 2.0)]), Err(Error::DegenerateFit(_))));
        assert!(matches!(ols(&[(1.0, 2.0), (1.0, 3.0)]), Err(Error::DegenerateFit(_))));
        assert!(ols(&[(1.0, f64::NAN), (2.0, 3.0)]).is_err());
    }

    #[test]
    fn intervals_nest_and_widen_away_from_mean() {
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|i| (i as f64, 0.3 * i as f64 + ((i * 37) % 7) as f64 * 0.1))
            .collect();
        let m = ols(&pts).unwrap();
        let (ml, mh) = m.mean_interval(m.x_mean, 0.95).unwrap();
        let (pl, ph) = m.prediction_interval(m.x_mean, 0.95).unwrap();
        assert!(pl < ml && mh < ph);
        let (fl, fh) = m.mean_interval(m.x_mean + 30.0, 0.95).unwrap();
        assert!(fh - fl > mh - ml);
        let two = ols(&[(0.0, 0.0), (1.0, 1.0)]).unwrap();
        assert!(two.mean_interval(0.5, 0.95).is_none());
    }

    #[test]
    fn constant_fit_is_the_mean() {
        assert_eq!(constant_fit(&[0.1, 0.2, 0.3]).unwrap(), 0.2);
        assert_eq!(constant_fit(&[0.37]).unwrap(), 0.37);
        assert_eq!(constant_fit(&[0.0, 1.0]).unwrap(), 0.5);
        assert!(constant_fit(&[]).is_err());
    }

    fn curve(a: f64, b: f64, c: f64) -> Vec<(f64, f64)> {
        (100..=1000)
            .step_by(20)
            .map(|n| (n as f64, a * (n as f64).powf(b) + c))
            .collect()
    }

    #[test]
    fn power_law_recovers_noiseless_parameters() {
        for robust in [false, true] {
            let fit = fit_power_law(&curve(2.0, -0.5, 0.1), 0.1, robust).unwrap();
            assert_relative_eq!(fit.a, 2.0, max_relative = 1e-6);
            assert_relative_eq!(fit.b, -0.5, max_relative = 1e-6);
            assert!(fit.converged);
        }
        let grid: Vec<(f64, f64)> = (100..=1000)
            .step_by(100)
            .map(|n| (n as f64, 2.0 * (n as f64).powf(-0.5) + 0.1))
            .collect();
        let fit = fit_power_law(&grid, 0.1, false).unwrap();
        assert_relative_eq!(fit.a, 2.0, max_relative = 1e-6);
        assert_relative_eq!(fit.b, -0.5, max_relative = 1e-6);
    }

    #[test]
    fn power_law_two_points_exact() {
        let fit = fit_power_law(&[(100.0, 0.3), (400.0, 0.2)], 0.1, false).unwrap();
        assert_relative_eq!(fit.a, 2.0, max_relative = 1e-7);
        assert_relative_eq!(fit.b, -0.5, max_relative = 1e-7);
        assert_eq!(fit.residual_se, 0.0);
    }

    #[test]
    fn robust_fit_shrugs_off_an_outlier() {
        let mut pts = curve(2.0, -0.5, 0.1);
        pts[20].1 *= 2.0;
        let plain = fit_power_law(&pts, 0.1, false).unwrap();
        let robust = fit_power_law(&pts, 0.1, true).unwrap();
        assert!((robust.a / 2.0 - 1.0).abs() <= 1e-2, "{robust:?}");
        assert!((robust.b / -0.5 - 1.0).abs() <= 1e-2, "{robust:?}");
        let plain_ok = (plain.a / 2.0 - 1.0).abs() <= 1e-2 && (plain.b / -0.5 - 1.0).abs() <= 1e-2;
        assert!(!plain_ok, "{plain:?}");
    }

    #[test]
    fn power_law_errors() {
        let flat: Vec<(f64, f64)> = (1..10).map(|n| (n as f64 * 100.0, 0.1)).collect();
        assert!(matches!(fit_power_law(&flat, 0.1, true), Err(Error::NothingToFit(_))));
        assert!(fit_power_law(&[(100.0, 0.3)], 0.1, false).is_err());
        assert!(fit_power_law(&[(0.0, 0.3), (1.0, 0.2)], 0.1, false).is_err());
        // Increasing data: the flattest allowed curve wins.
        let rising: Vec<(f64, f64)> = (1..10).map(|n| (n as f64 * 100.0, 0.1 + 0.01 * n as f64)).collect();
        let fit = fit_power_law(&rising, 0.0, false).unwrap();
        assert_abs_diff_eq!(fit.b, POWER_LAW_B_MAX, epsilon = 1e-6);
    }

    #[test]
    fn power_law_standard_errors_scale_with_noise() {
        let mut pts = curve(2.0, -0.5, 0.1);
        for (i, p) in pts.iter_mut().enumerate() {
            p.1 += if i % 2 == 0 { 0.002 } else { -0.002 };
        }
        let fit = fit_power_law(&pts, 0.1, false).unwrap();
        assert!(fit.a_se > 0.0 && fit.b_se > 0.0);
        assert!(fit.a_se < 1.0 && fit.b_se < 0.1);
    }

    #[test]
    fn t_test_examples() {
        let zero = paired_t_test(&[(0.1, 0.1), (0.2, 0.2)]).unwrap();
        assert_eq!((zero.t, zero.p_two_sided), (0.0, 1.0));
        let r = paired_t_test(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]).unwrap();
        assert_abs_diff_eq!(r.t, 2.0 * 3f64.sqrt(), epsilon = 1e-12);
        assert_eq!(r.df, 2);
        // df = 2 has a closed-form CDF: F(t) = 1/2 + t / (2 sqrt(2 + t^2)).
        let closed = 1.0 - (2.0 * 3f64.sqrt()) / 14f64.sqrt();
        assert_abs_diff_eq!(r.p_two_sided, closed, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p_two_sided, 0.0742, epsilon = 1e-4);
        let sym = paired_t_test(&[(-1.0, 0.0), (1.0, 0.0)]).unwrap();
        assert_eq!((sym.t, sym.p_two_sided), (0.0, 1.0));
        let shifted = paired_t_test(&[(1.5, 1.0), (2.5, 2.0)]).unwrap();
        assert!(shifted.degenerate);
        assert_eq!(shifted.p_two_sided, 0.0);
        assert!(paired_t_test(&[(1.0, 0.0)]).is_err());
    }

    #[test]
    fn t_quantile_inverts_cdf() {
        for df in [1.0, 2.0, 5.0, 30.0] {
            for p in [0.025, 0.5, 0.9, 0.975] {
                let q = t_quantile(p, df);
                assert_abs_diff_eq!(t_cdf(q, df), p, epsilon = 1e-10);
            }
        }
        // Published table value t_{0.975, 10} = 2.228
        assert_abs_diff_eq!(t_quantile(0.975, 10.0), 2.228, epsilon = 1e-3);
    }

    proptest! {
        #[test]
        fn ols_residuals_sum_to_zero(
            pts in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40)
        ) {
            prop_assume!(pts.iter().any(|p| p.0 != pts[0].0));
            let m = ols(&pts).unwrap();
            let sum: f64 = pts.iter().map(|&(x, y)| y - m.predict(x)).sum();
            prop_assert!(sum.abs() <= 1e-10 * 100.0 * pts.len() as f64);
        }

        #[test]
        fn r2_invariant_under_affine_x(
            pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30),
            scale in 0.1f64..10.0,
            shift in -50.0f64..50.0,
        ) {
            let x0 = pts[0].0;
            prop_assume!(pts.iter().any(|p| (p.0 - x0).abs() > 1e-3));
            let a = ols(&pts).unwrap();
            let moved: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (scale * x + shift, y)).collect();
            let b = ols(&moved).unwrap();
            prop_assert!((a.r2 - b.r2).abs() < 1e-9);
        }

        #[test]
        fn constant_fit_minimises_mse(values in proptest::collection::vec(-1.0f64..1.0, 1..30)) {
            let c = constant_fit(&values).unwrap();
            let mse = |k: f64| values.iter().map(|v| (v - k).powi(2)).sum::<f64>();
            prop_assert!(mse(c) <= mse(c + 1e-6));
            prop_assert!(mse(c) <= mse(c - 1e-6));
        }

        #[test]
        fn power_law_stays_above_asymptote(
            a in 0.1f64..5.0, b in -1.5f64..-0.1, c in 0.0f64..0.3,
            wobble in proptest::collection::vec(-0.01f64..0.01, 10),
            robust: bool,
        ) {
            let pts: Vec<(f64, f64)> = (0..10)
                .map(|i| {
                    let n = 100.0 * (i + 1) as f64;
                    (n, a * n.powf(b) + c + wobble[i])
                })
                .collect();
            if let Ok(fit) = fit_power_law(&pts, c, robust) {
                for &(n, _) in &pts {
                    prop_assert!(fit.predict(n) >= c);
                }
                prop_assert!(fit.b < 0.0 && fit.a > 0.0);
            }
        }
    }
}
