//! Deviation-inequality constants and empirical checkers.
//!
//! For a function `h` satisfying a Remez-type inequality with constants `(k, A)`
//! under an `s`-concave law, the median `q_h` of `|h(X)|` controls both tails:
//! `P(|h| <= q_h eps) <= eta_lower * eps^(1/k)` (small deviations) and
//! `P(|h| > q_h t)` decays at a rate set by `eta_upper` (large deviations).
//! The constants below combine these into the sub-optimality factors relating
//! `J` and its surrogates.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Remez constants of `||grad g||^2` for polynomial features of total degree `ell + 1`.
pub fn polynomial_remez_constants(ell: usize) -> Result<(f64, f64)> {
    if ell == 0 {
        return Err(Error::InvalidInput("ell must be >= 1".into()));
    }
    Ok((2.0 * ell as f64, 4.0))
}

/// Upper bounds on the Remez constants for trigonometric features with `terms` frequencies.
pub fn trig_remez_constants(terms: usize) -> Result<(f64, f64)> {
    if terms == 0 {
        return Err(Error::InvalidInput("number of terms must be >= 1".into()));
    }
    Ok((2.0 * terms as f64 + 1.0, 316.0))
}

/// Large-deviation constant `eta_upper(A, s)`.
pub fn eta_upper(a: f64, s: f64) -> f64 {
    if s > 0.0 {
        a / (1.0 - 2f64.powf(-s))
    } else if s == 0.0 {
        a / LN_2
    } else {
        (a / (2f64.powf(-s) - 1.0)).max(1.0).powf(-1.0 / s)
    }
}

/// Small-deviation constant `eta_lower(A, s)`, available for `s > 0` only.
pub fn eta_lower(a: f64, s: f64) -> Result<f64> {
    if s > 0.0 {
        Ok(a * (1.0 - 2f64.powf(-s)) / s)
    } else {
        Err(Error::Unsupported(format!(
            "small-deviation constant is only available for s > 0 (got s = {s})"
        )))
    }
}

/// Both eta constants; the lower one is `None` when `s <= 0`.
pub fn eta_constants(a: f64, s: f64) -> (Option<f64>, f64) {
    (eta_lower(a, s).ok(), eta_upper(a, s))
}

/// Parameters entering the deviation and sub-optimality bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationProfile {
    /// Concavity parameter of the input law.
    pub s: f64,
    /// Remez exponent.
    pub k: f64,
    /// Remez factor.
    pub a: f64,
    /// Class degree minus one.
    pub ell: usize,
    pub m: usize,
    /// Integrability exponent of `||grad u||^2` (infinite for bounded gradients).
    pub p_u: f64,
    pub p1: f64,
    pub nu_lower: f64,
    pub nu_upper: f64,
}

impl DeviationProfile {
    /// Polynomial features of total degree `ell + 1` with uniform inputs on a
    /// convex body of `R^d`: `s = 1/d`, `(k, A) = (2 ell, 4)`, bounded gradients, `p1 = 1`.
    pub fn uniform_polynomial(d: usize, ell: usize, m: usize) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::InvalidInput("d and m must be >= 1".into()));
        }
        let (k, a) = polynomial_remez_constants(ell)?;
        Ok(DeviationProfile {
            s: 1.0 / d as f64,
            k,
            a,
            ell,
            m,
            p_u: f64::INFINITY,
            p1: 1.0,
            nu_lower: 1.0,
            nu_upper: 1.0,
        })
    }

    /// Hölder conjugate `p` with `1/p = 1 - 1/p_u`.
    pub fn p(&self) -> f64 {
        1.0 / (1.0 - 1.0 / self.p_u)
    }

    /// `r` with `1/r = 1 - 1/p_u - 1/p1`, when positive.
    pub fn r(&self) -> Option<f64> {
        let inv = 1.0 - 1.0 / self.p_u - 1.0 / self.p1;
        (inv > 0.0).then(|| 1.0 / inv)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.s.is_finite()
            && self.k > 0.0
            && self.a >= 1.0
            && self.ell >= 1
            && self.m >= 1
            && self.p_u > 1.0
            && self.p1 >= 1.0
            && self.nu_lower > 0.0
            && self.nu_upper > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid deviation profile {self:?}")))
        }
    }

    /// Exponent `1 / (1 + p k)` of the surrogate-to-objective bound.
    pub fn rate(&self) -> f64 {
        1.0 / (1.0 + self.p() * self.k)
    }
}

/// Single-feature sub-optimality constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleConstants {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
}

/// `gamma1` (objective bounded by surrogate), `gamma2` (surrogate bounded by
/// objective) and `gamma3 = gamma1 gamma2^(1/(1+pk))`.
pub fn suboptimality_constants(pr: &DeviationProfile) -> Result<SingleConstants> {
    pr.validate()?;
    let (s, k, a, p1) = (pr.s, pr.k, pr.a, pr.p1);
    let expo = k * pr.rate();
    // eta_lower fails for s <= 0, so past this line s > 0
    let el = eta_lower(a, s)?;
    let gamma1 = 2.0 * (el * a * (3.0 * k * p1).min(1.0 / (1.0 - 2f64.powf(-s)))).powf(expo);
    let eta = eta_upper(a, s);
    let gamma2 = if s > 0.0 {
        2.0 * eta.powf(k)
    } else {
        let r = pr.r().ok_or_else(|| {
            Error::InvalidInput("need 1 - 1/p_u - 1/p1 > 0 for s <= 0".into())
        })?;
        if s == 0.0 {
            2.0 * (eta * r).powf(k)
        } else {
            4.0 * eta.powf(1.0 / r)
        }
    };
    Ok(SingleConstants {
        gamma1,
        gamma2,
        gamma3: gamma1 * gamma2.powf(pr.rate()),
    })
}

/// Closed-form upper bounds for polynomial features of total degree `ell + 1`
/// with uniform inputs in dimension `d`:
/// `gamma1 <= 2 (32 min{3 ell, d})^(2 ell/(1+2 ell))`, `gamma2 <= 2 (8 d)^(2 ell)`,
/// `gamma3 <= 4 (256 d min{3 ell, d})^(2 ell/(1+2 ell))`.
pub fn uniform_bounds(d: usize, ell: usize) -> SingleConstants {
    let (d, l) = (d as f64, ell as f64);
    let e = 2.0 * l / (1.0 + 2.0 * l);
    let mn = (3.0 * l).min(d);
    SingleConstants {
        gamma1: 2.0 * (32.0 * mn).powf(e),
        gamma2: 2.0 * (8.0 * d).powf(2.0 * l),
        gamma3: 4.0 * (256.0 * d * mn).powf(e),
    }
}

/// Multi-feature sub-optimality constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiConstants {
    pub gt1: f64,
    pub gt2: f64,
    pub gt3: f64,
}

/// Exact multi-feature constants for polynomial features (`A = 4`, `s > 0`,
/// compactly supported inputs).
pub fn multifeature_constants(pr: &DeviationProfile) -> Result<MultiConstants> {
    pr.validate()?;
    let (s, a, p1) = (pr.s, pr.a, pr.p1);
    let (l, m) = (pr.ell as f64, pr.m as f64);
    let el = eta_lower(4.0, s)?;
    let eu = eta_upper(4.0, s);
    let e = 2.0 * l * m / (1.0 + 2.0 * l * m);
    let gt2 = 2.0 * eu.powf(2.0 * l);
    let inner = 2.0
        * el
        * eu.powf(1.0 - 1.0 / m)
        * m.powf(1.0 / (4.0 * l))
        * eta_upper(a, s).min(6.0 * a * p1 * l * m);
    let gt1 = 2.0 * inner.powf(e);
    let gt3 = gt1 * gt2.powf(1.0 / (1.0 + 2.0 * l * m));
    Ok(MultiConstants { gt1, gt2, gt3 })
}

/// Displayed upper bounds on the multi-feature constants.
pub fn multifeature_bounds(s: f64, ell: usize, m: usize, p1: f64) -> MultiConstants {
    let (l, m) = (ell as f64, m as f64);
    let shared = m.powf(1.0 / (4.0 * l)) / s * (1.0 / s).min(3.0 * l * p1 * m);
    MultiConstants {
        gt1: 2f64.powi(9) * shared,
        gt2: 2f64.powf(1.0 + 6.0 * l) * s.powf(-2.0 * l),
        gt3: 2f64.powi(10) * shared,
    }
}

/// Upper bound on `J(g)` implied by the surrogate value `l1`:
/// `gamma1 nu_lower^(-1/(1+pk)) l1^(1/(1+pk))`.
pub fn suboptimality_envelope(l1: f64, pr: &DeviationProfile) -> Result<f64> {
    if !(l1 >= 0.0) {
        return Err(Error::InvalidInput(format!("surrogate value must be >= 0, got {l1}")));
    }
    let c = suboptimality_constants(pr)?;
    Ok(c.gamma1 * pr.nu_lower.powf(-pr.rate()) * l1.powf(pr.rate()))
}

/// Order-statistic quantile: the value at index `ceil(omega N) - 1` of the sorted sample.
pub fn empirical_quantile(values: &[f64], omega: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("no values".into()));
    }
    if !(omega > 0.0 && omega < 1.0) {
        return Err(Error::InvalidInput(format!("omega must lie in (0,1), got {omega}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("values must be finite".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((omega * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    Ok(v[idx])
}

/// Bounds on the median of `|h|` in terms of `||h||_p`: the upper one holds
/// for any law, the lower one under `s`-concavity and the Remez inequality.
/// Returns `(lower, upper)`; `lower` is `None` outside its range of validity.
pub fn median_bounds(norm_p: f64, p: f64, k: f64, a: f64, s: f64) -> (Option<f64>, f64) {
    let upper = 2f64.powf(1.0 / p) * norm_p;
    let base = norm_p * a.powf(-k);
    let lower = if s > 0.0 {
        Some(base * (1.0 - 2f64.powf(-s)).powf(k))
    } else if s == 0.0 {
        (p * k >= 1.0).then(|| base * (3.0 * p * k).powf(-k))
    } else if p < -1.0 / (s * k) {
        let c = (2f64.powf(-s) - 1.0).powf(1.0 / s);
        Some(base * (1.0 - c / (1.0 + 1.0 / (s * p * k))).powf(-1.0 / p))
    } else {
        None
    };
    (lower, upper)
}

/// Left and right sides of `(1 + 2^y Gamma(y+1))^(1/y) <= 3 y`.
pub fn gamma_lemma(y: f64) -> (f64, f64) {
    let t = y * LN_2 + ln_gamma(y + 1.0);
    // ln(1 + e^t) without overflow
    let log1pexp = if t > 30.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
    ((log1pexp / y).exp(), 3.0 * y)
}

/// `(a^(b/(1+b)), inf_x (a/x + x^b), 2 a^(b/(1+b)))`, the infimum found by
/// golden-section search on `ln x` (the objective is convex in `ln x`).
pub fn inf_lemma(a: f64, b: f64) -> Result<(f64, f64, f64)> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(Error::InvalidInput("need a > 0 and b > 0".into()));
    }
    let f = |t: f64| a * (-t).exp() + (b * t).exp();
    let (mut lo, mut hi) = (-200.0f64, 200.0f64);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..300 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let base = a.powf(b / (1.0 + b));
    Ok((base, f1.min(f2), 2.0 * base))
}

/// One grid point of a deviation check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    /// `eps` for small deviations, `t` for large deviations.
    pub x: f64,
    pub empirical: f64,
    pub bound: f64,
    pub slack: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub kind: String,
    pub n: usize,
    pub q_hat: f64,
    pub rows: Vec<DeviationRow>,
    pub violations: usize,
    /// Set when the bound is rebuilt from its use in a proof rather than stated directly.
    pub reconstructed: bool,
}

/// Three standard errors of a Bernoulli proportion with success probability
/// `min(bound, 1)` estimated from `n` draws.
fn mc_slack(bound: f64, n: usize) -> f64 {
    let p = bound.clamp(0.0, 1.0);
    3.0 * (p * (1.0 - p) / n as f64).sqrt()
}

fn prepare(h: &[f64], grid: &[f64]) -> Result<(Vec<f64>, f64)> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty grid".into()));
    }
    if grid.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
        return Err(Error::InvalidInput("grid values must be positive and finite".into()));
    }
    let abs: Vec<f64> = h.iter().map(|v| v.abs()).collect();
    let q = empirical_quantile(&abs, 0.5)?;
    if !(q > 0.0) {
        return Err(Error::InvalidInput("median of |h| is zero".into()));
    }
    Ok((abs, q))
}

fn report(kind: &str, n: usize, q_hat: f64, rows: Vec<DeviationRow>, reconstructed: bool) -> DeviationReport {
    let violations = rows.iter().filter(|r| r.violated).count();
    DeviationReport {
        kind: kind.into(),
        n,
        q_hat,
        rows,
        violations,
        reconstructed,
    }
}

/// Compares `P(|h| <= q eps)` with `eta_lower eps^(1/k)` on each `eps`.
pub fn check_small_deviation(h: &[f64], k: f64, a: f64, s: f64, eps_grid: &[f64]) -> Result<DeviationReport> {
    let eta = eta_lower(a, s)?;
    let (abs, q) = prepare(h, eps_grid)?;
    let n = abs.len();
    let rows = eps_grid
        .iter()
        .map(|&eps| {
            let empirical = abs.iter().filter(|&&v| v <= q * eps).count() as f64 / n as f64;
            let bound = eta * eps.powf(1.0 / k);
            let slack = mc_slack(bound, n);
            DeviationRow {
                x: eps,
                empirical,
                bound,
                slack,
                violated: empirical > bound + slack,
            }
        })
        .collect();
    Ok(report("small", n, q, rows, false))
}

/// Large-deviation bound on `P(|h| > q t)`.
pub fn large_deviation_bound(t: f64, k: f64, a: f64, s: f64) -> f64 {
    let eta = eta_upper(a, s);
    if s > 0.0 {
        (1.0 - (t.powf(1.0 / k) - 1.0) / eta).max(0.0)
    } else if s == 0.0 {
        (-(t.powf(1.0 / k) - 1.0) / eta).exp()
    } else {
        eta * t.powf(1.0 / (s * k))
    }
}

/// Compares `P(|h| > q t)` with the large-deviation bound on each `t`.
pub fn check_large_deviation(h: &[f64], k: f64, a: f64, s: f64, t_grid: &[f64]) -> Result<DeviationReport> {
    let (abs, q) = prepare(h, t_grid)?;
    let n = abs.len();
    let rows = t_grid
        .iter()
        .map(|&t| {
            let empirical = abs.iter().filter(|&&v| v > q * t).count() as f64 / n as f64;
            let bound = large_deviation_bound(t, k, a, s);
            let slack = mc_slack(bound, n);
            DeviationRow {
                x: t,
                empirical,
                bound,
                slack,
                violated: empirical > bound + slack,
            }
        })
        .collect();
    Ok(report("large", n, q, rows, false))
}

/// Multi-feature small deviations of `||w||^2`, pivoted on the median of
/// `det(grad g^T grad g)`, against
/// `eta_upper(4, s) (2/m)^(1/(4 ell)) sup||M||_F^((m-1)/(2 ell m)) eps^(1/(2 ell m))`.
pub fn check_small_deviation_multi(
    w_sq: &[f64],
    det_m: &[f64],
    sup_frobenius: f64,
    ell: usize,
    m: usize,
    s: f64,
    eps_grid: &[f64],
) -> Result<DeviationReport> {
    if w_sq.len() != det_m.len() {
        return Err(Error::Shape("w and det samples differ in length".into()));
    }
    if s <= 0.0 || ell == 0 || m == 0 {
        return Err(Error::Unsupported("multi-feature check needs s > 0, ell >= 1, m >= 1".into()));
    }
    let (_, q) = prepare(det_m, eps_grid)?;
    let (l, mf) = (ell as f64, m as f64);
    let eta = eta_upper(4.0, s)
        * (2.0 / mf).powf(1.0 / (4.0 * l))
        * sup_frobenius.powf((mf - 1.0) / (2.0 * l * mf));
    let n = w_sq.len();
    let rows = eps_grid
        .iter()
        .map(|&eps| {
            let empirical = w_sq.iter().filter(|&&v| v <= q * eps).count() as f64 / n as f64;
            let bound = eta * eps.powf(1.0 / (2.0 * l * mf));
            let slack = mc_slack(bound, n);
            DeviationRow {
                x: eps,
                empirical,
                bound,
                slack,
                violated: empirical > bound + slack,
            }
        })
        .collect();
    Ok(report("small_multi", n, q, rows, true))
}
