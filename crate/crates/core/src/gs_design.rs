//! Group-sequential design of a diagnostic study with co-primary NPV and PPV
//! endpoints indexed by population percentile.
//!
//! The study rejects only when both statistics cross the efficacy boundary
//! and stops for futility as soon as either crosses the futility boundary.
//! Boundaries come from Hwang–Shih–DeCani error spending evaluated by
//! recursive numerical integration of the canonical independent-increments
//! Gaussian sequence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    cross_cov_coefficients, npv_pct_var_from_value, ppv_pct_var_from_value, DensityRatios, PercentilePoint,
};
use crate::curves::{self, BinormalModel};
use crate::empirical_process::{prefix_len, MarkerSample, Prevalence, PrefixPair, SequentialView};
use crate::error::{domain, Error, Result};
use crate::gaussian_limits::draw_rng;
use crate::kde::{BandwidthRule, KernelPlugin};
use crate::montecarlo::simulate_sample;
use crate::normal;

/// Where the density ratios inside the null standard errors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NullSeDensities {
    /// Null values of NPV/PPV with the density ratios of the model calibrated
    /// to the alternative.
    #[default]
    Alternative,
    /// Everything from the model calibrated to the null values.
    Null,
}

/// Density ratios used in the null standard errors of the test statistics
/// when the study is analysed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisDensities {
    /// Gaussian-kernel estimates (Silverman bandwidths) from the data seen so
    /// far, evaluated at the empirical percentile thresholds.
    #[default]
    KernelPlugin,
    /// The same standard errors as the design.
    Design,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GsDesignSpec {
    pub rho: f64,
    /// Percentile at which NPV is evaluated.
    pub u_npv: f64,
    /// Percentile at which PPV is evaluated.
    pub u_ppv: f64,
    pub npv_null: f64,
    pub ppv_null: f64,
    pub npv_alt: f64,
    pub ppv_alt: f64,
    /// Two-sided level; each statistic is compared with `z_{1−α/2}`.
    pub alpha: f64,
    pub power: f64,
    pub looks: usize,
    /// Cumulative information fractions; equally spaced when absent.
    #[serde(default)]
    pub info_fractions: Option<Vec<f64>>,
    pub gamma_efficacy: f64,
    pub gamma_futility: f64,
    pub binding_futility: bool,
    /// `n_D / n_D̄`.
    pub case_control_ratio: f64,
    #[serde(default)]
    pub null_se_densities: NullSeDensities,
    #[serde(default)]
    pub analysis_densities: AnalysisDensities,
}

impl Default for GsDesignSpec {
    fn default() -> Self {
        Self {
            rho: 0.2,
            u_npv: 0.6,
            u_ppv: 0.9,
            npv_null: 0.9,
            ppv_null: 0.8,
            npv_alt: 0.95,
            ppv_alt: 0.9,
            alpha: 0.05,
            power: 0.9,
            looks: 1,
            info_fractions: None,
            gamma_efficacy: -4.0,
            gamma_futility: -2.0,
            binding_futility: true,
            case_control_ratio: 1.0,
            null_se_densities: NullSeDensities::Alternative,
            analysis_densities: AnalysisDensities::KernelPlugin,
        }
    }
}

impl GsDesignSpec {
    pub fn with_looks(&self, looks: usize) -> Self {
        Self { looks, info_fractions: None, ..self.clone() }
    }

    pub fn prevalence(&self) -> Result<Prevalence> {
        Prevalence::new(self.rho)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        let cfg = |m: String| Err(Error::Config(m));
        if !unit(self.rho) || !unit(self.u_npv) || !unit(self.u_ppv) {
            return cfg("rho, u_npv and u_ppv must lie in (0, 1)".into());
        }
        if !(unit(self.npv_null) && self.npv_null < self.npv_alt && self.npv_alt < 1.0) {
            return cfg(format!("need 0 < npv_null < npv_alt < 1, got {} and {}", self.npv_null, self.npv_alt));
        }
        if !(unit(self.ppv_null) && self.ppv_null < self.ppv_alt && self.ppv_alt < 1.0) {
            return cfg(format!("need 0 < ppv_null < ppv_alt < 1, got {} and {}", self.ppv_null, self.ppv_alt));
        }
        if !unit(self.alpha) {
            return cfg(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if !(self.power > 0.5 && self.power < 1.0) {
            return cfg(format!("power {} outside (0.5, 1)", self.power));
        }
        if self.looks == 0 {
            return cfg("at least one look is required".into());
        }
        if !(self.case_control_ratio > 0.0 && self.case_control_ratio.is_finite()) {
            return cfg("case_control_ratio must be positive".into());
        }
        self.fractions()?;
        Ok(())
    }

    /// Cumulative information fractions of the looks.
    pub fn fractions(&self) -> Result<Vec<f64>> {
        match &self.info_fractions {
            None => Ok((1..=self.looks).map(|k| k as f64 / self.looks as f64).collect()),
            Some(f) => {
                let ok = f.len() == self.looks
                    && f.windows(2).all(|w| w[0] < w[1])
                    && f.first().is_some_and(|&x| x > 0.0)
                    && f.last() == Some(&1.0);
                if !ok {
                    return Err(Error::Config(format!(
                        "info_fractions must be {} increasing values in (0, 1] ending at 1",
                        self.looks
                    )));
                }
                Ok(f.clone())
            }
        }
    }

    /// One-sided level per statistic.
    pub fn alpha_one_sided(&self) -> f64 {
        self.alpha / 2.0
    }

    pub fn z_alpha(&self) -> f64 {
        normal::quantile(1.0 - self.alpha_one_sided())
    }
}

/// Binormal model (controls standard normal) with the requested NPV at `u1`
/// and PPV at `u2`.
///
/// Each target fixes `F_D` at the corresponding mixture quantile, and since
/// `F_D̄ = Φ` the mixture equation then fixes the quantile itself. The two
/// resulting points on the case CDF determine `(μ_D, σ_D)` directly.
pub fn calibrate_binormal(rho: f64, u1: f64, npv_target: f64, u2: f64, ppv_target: f64) -> Result<BinormalModel> {
    let prev = Prevalence::new(rho)?;
    if !(u1 > 0.0 && u1 < 1.0 && u2 > 0.0 && u2 < 1.0) || u1 == u2 {
        return domain("percentiles must be distinct and inside (0, 1)");
    }
    let point = |u: f64, case_cdf: f64| -> Option<(f64, f64)> {
        let control_cdf = (u - rho * case_cdf) / (1.0 - rho);
        let inside = |p: f64| p > 0.0 && p < 1.0;
        (inside(case_cdf) && inside(control_cdf))
            .then(|| (normal::quantile(control_cdf), normal::quantile(case_cdf)))
    };
    let c1 = (u1 / rho) * (1.0 - npv_target);
    let c2 = 1.0 - ((1.0 - u2) / rho) * ppv_target;
    let (Some((x1, q1)), Some((x2, q2))) = (point(u1, c1), point(u2, c2)) else {
        return Err(Error::NoSolution {
            message: format!("targets NPV({u1})={npv_target}, PPV({u2})={ppv_target} are infeasible at rho={rho}"),
            residual: f64::NAN,
        });
    };
    let sigma = (x2 - x1) / (q2 - q1);
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::NoSolution {
            message: format!("targets imply a non-positive case SD ({sigma})"),
            residual: f64::NAN,
        });
    }
    let model = BinormalModel::new(x1 - sigma * q1, sigma)?;
    let residual = (curves::npv_pct_true(&model, prev, u1)? - npv_target)
        .abs()
        .max((curves::ppv_pct_true(&model, prev, u2)? - ppv_target).abs());
    if residual > 1e-9 {
        return Err(Error::NoSolution { message: "calibration did not reproduce the targets".into(), residual });
    }
    Ok(model)
}

/// Per-unit variance of an estimator split by arm: the variance at a view is
/// `case / (n_D r_D) + control / (n_D̄ r_D̄)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceScale {
    pub case: f64,
    pub control: f64,
}

impl VarianceScale {
    pub fn variance(&self, cases_seen: f64, controls_seen: f64) -> f64 {
        self.case / cases_seen + self.control / controls_seen
    }

    /// Variance when `n_case` cases and `n_case / ratio` controls are seen.
    pub fn variance_at(&self, n_case: f64, ratio: f64) -> f64 {
        self.variance(n_case, n_case / ratio)
    }

    pub fn ppv(ppv: f64, u: f64, rho: Prevalence, ratios: DensityRatios) -> Self {
        Self {
            case: ppv_pct_var_from_value(ppv, u, rho, ratios, 1.0, f64::INFINITY),
            control: ppv_pct_var_from_value(ppv, u, rho, ratios, f64::INFINITY, 1.0),
        }
    }

    pub fn npv(npv: f64, u: f64, rho: Prevalence, ratios: DensityRatios) -> Self {
        Self {
            case: npv_pct_var_from_value(npv, u, rho, ratios, 1.0, f64::INFINITY),
            control: npv_pct_var_from_value(npv, u, rho, ratios, f64::INFINITY, 1.0),
        }
    }
}

/// Models and variance scales derived from a spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignModels {
    pub null_model: BinormalModel,
    pub alt_model: BinormalModel,
    pub npv_null_scale: VarianceScale,
    pub ppv_null_scale: VarianceScale,
    pub npv_alt_scale: VarianceScale,
    pub ppv_alt_scale: VarianceScale,
    /// Per-unit `Cov[PPV̂(u_ppv), NPV̂(u_npv)]` under the alternative.
    pub alt_cross: VarianceScale,
}

impl DesignModels {
    pub fn new(spec: &GsDesignSpec) -> Result<Self> {
        spec.validate()?;
        let rho = spec.prevalence()?;
        let null_model = calibrate_binormal(spec.rho, spec.u_npv, spec.npv_null, spec.u_ppv, spec.ppv_null)?;
        let alt_model = calibrate_binormal(spec.rho, spec.u_npv, spec.npv_alt, spec.u_ppv, spec.ppv_alt)?;
        let alt_npv = PercentilePoint::new(&alt_model, rho, spec.u_npv)?;
        let alt_ppv = PercentilePoint::new(&alt_model, rho, spec.u_ppv)?;
        let (se_npv, se_ppv) = match spec.null_se_densities {
            NullSeDensities::Alternative => (alt_npv, alt_ppv),
            NullSeDensities::Null => (
                PercentilePoint::new(&null_model, rho, spec.u_npv)?,
                PercentilePoint::new(&null_model, rho, spec.u_ppv)?,
            ),
        };
        let (case, control) = cross_cov_coefficients(&alt_ppv, &alt_npv, rho);
        let alt_cross = VarianceScale { case, control };
        Ok(Self {
            npv_null_scale: VarianceScale::npv(spec.npv_null, spec.u_npv, rho, (&se_npv).into()),
            ppv_null_scale: VarianceScale::ppv(spec.ppv_null, spec.u_ppv, rho, (&se_ppv).into()),
            npv_alt_scale: VarianceScale::npv(alt_npv.npv, spec.u_npv, rho, (&alt_npv).into()),
            ppv_alt_scale: VarianceScale::ppv(alt_ppv.ppv, spec.u_ppv, rho, (&alt_ppv).into()),
            alt_cross,
            null_model,
            alt_model,
        })
    }
}

fn power_at(models: &DesignModels, spec: &GsDesignSpec, n: f64, correlation: Option<f64>) -> f64 {
    let z = spec.z_alpha();
    let k = spec.case_control_ratio;
    let s0n = models.npv_null_scale.variance_at(n, k).sqrt();
    let s0p = models.ppv_null_scale.variance_at(n, k).sqrt();
    let s1n = models.npv_alt_scale.variance_at(n, k).sqrt();
    let s1p = models.ppv_alt_scale.variance_at(n, k).sqrt();
    let hn = (z * s0n - (spec.npv_alt - spec.npv_null)) / s1n;
    let hp = (z * s0p - (spec.ppv_alt - spec.ppv_null)) / s1p;
    let corr = correlation.unwrap_or_else(|| models.alt_cross.variance_at(n, k) / (s1n * s1p));
    normal::bvn_upper(hn, hp, corr)
}

/// Joint power of the fixed-sample design with `n_case` cases.
pub fn fixed_power(spec: &GsDesignSpec, n_case: f64) -> Result<f64> {
    let models = DesignModels::new(spec)?;
    Ok(power_at(&models, spec, n_case, None))
}

fn smallest_n(models: &DesignModels, spec: &GsDesignSpec, correlation: Option<f64>) -> Result<usize> {
    const CAP: usize = 100_000_000;
    let ok = |n: usize| power_at(models, spec, n as f64, correlation) >= spec.power;
    if !ok(CAP) {
        return Err(Error::NoSolution {
            message: format!("power {} is not reached with {CAP} cases", spec.power),
            residual: spec.power - power_at(models, spec, CAP as f64, correlation),
        });
    }
    let (mut lo, mut hi) = (0usize, CAP);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if mid > 0 && ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Smallest number of cases whose fixed-sample joint power reaches the target.
pub fn fixed_sample_size(spec: &GsDesignSpec) -> Result<usize> {
    smallest_n(&DesignModels::new(spec)?, spec, None)
}

/// As [`fixed_sample_size`] with the correlation between the two statistics
/// overridden.
pub fn fixed_sample_size_with_correlation(spec: &GsDesignSpec, correlation: f64) -> Result<usize> {
    if !(-1.0..=1.0).contains(&correlation) {
        return domain(format!("correlation {correlation} outside [-1, 1]"));
    }
    smallest_n(&DesignModels::new(spec)?, spec, Some(correlation))
}

/// Single-statistic sample size `((z_α σ₀ + z_β σ₁)/δ)²` in per-case units.
pub fn marginal_sample_size(null_scale: VarianceScale, alt_scale: VarianceScale, delta: f64, z_alpha: f64,
                            z_beta: f64, ratio: f64) -> f64 {
    let s0 = null_scale.variance_at(1.0, ratio).sqrt();
    let s1 = alt_scale.variance_at(1.0, ratio).sqrt();
    ((z_alpha * s0 + z_beta * s1) / delta).powi(2)
}

/// Hwang–Shih–DeCani cumulative spend at information fraction `s`.
pub fn hsd_spend(gamma: f64, s: f64, total: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    if gamma == 0.0 {
        total * s
    } else {
        total * (1.0 - (-gamma * s).exp()) / (1.0 - (-gamma).exp())
    }
}

const GRID_R: usize = 18;
const Z_FAR: f64 = 40.0;

/// Continuation-region density of the canonical statistic at one look.
#[derive(Debug, Clone)]
struct LookDensity {
    t: f64,
    z: Vec<f64>,
    /// Simpson weight times density.
    wh: Vec<f64>,
}

/// Jennison–Turnbull grid on `[lo, hi]` around `mu` with Simpson weights.
fn grid(mu: f64, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let r = GRID_R as f64;
    let mut x: Vec<f64> = (1..6 * GRID_R)
        .map(|i| {
            let i = i as f64;
            if i < r {
                mu - 3.0 - 4.0 * (r / i).ln()
            } else if i <= 5.0 * r {
                mu - 3.0 + 3.0 * (i - r) / (2.0 * r)
            } else {
                mu + 3.0 + 4.0 * (r / (6.0 * r - i)).ln()
            }
        })
        .filter(|&v| v > lo && v < hi)
        .collect();
    let first = lo.max(mu - 3.0 - 4.0 * r.ln());
    let last = hi.min(mu + 3.0 + 4.0 * r.ln());
    if last <= first {
        return (vec![], vec![]);
    }
    x.retain(|&v| v > first && v < last);
    x.insert(0, first);
    x.push(last);
    let mut z = Vec::with_capacity(2 * x.len() - 1);
    let mut w = vec![0.0; 2 * x.len() - 1];
    z.push(x[0]);
    for i in 1..x.len() {
        let h = x[i] - x[i - 1];
        z.push(0.5 * (x[i - 1] + x[i]));
        z.push(x[i]);
        w[2 * i - 2] += h / 6.0;
        w[2 * i - 1] += 4.0 * h / 6.0;
        w[2 * i] += h / 6.0;
    }
    (z, w)
}

fn increment_arg(z_next: f64, t_next: f64, prev_z: f64, t_prev: f64, drift: f64) -> f64 {
    let d = t_next - t_prev;
    (z_next * t_next.sqrt() - prev_z * t_prev.sqrt() - drift * d) / d.sqrt()
}

/// `P(continue so far, Z_k > b)`.
fn cross_upper(prev: Option<&LookDensity>, b: f64, t: f64, drift: f64) -> f64 {
    match prev {
        None => normal::sf(b - drift * t.sqrt()),
        Some(p) => p.z.iter().zip(&p.wh).map(|(&z, &wh)| wh * normal::sf(increment_arg(b, t, z, p.t, drift))).sum(),
    }
}

/// `P(continue so far, Z_k < a)`.
fn cross_lower(prev: Option<&LookDensity>, a: f64, t: f64, drift: f64) -> f64 {
    match prev {
        None => normal::cdf(a - drift * t.sqrt()),
        Some(p) => p.z.iter().zip(&p.wh).map(|(&z, &wh)| wh * normal::cdf(increment_arg(a, t, z, p.t, drift))).sum(),
    }
}

fn advance(prev: Option<&LookDensity>, a: f64, b: f64, t: f64, drift: f64) -> LookDensity {
    let (z, w) = grid(drift * t.sqrt(), a, b);
    let wh = z
        .iter()
        .zip(&w)
        .map(|(&x, &wx)| {
            let h = match prev {
                None => normal::pdf(x - drift * t.sqrt()),
                Some(p) => {
                    let d = t - p.t;
                    let jac = t.sqrt() / d.sqrt();
                    p.z.iter()
                        .zip(&p.wh)
                        .map(|(&zj, &whj)| whj * jac * normal::pdf(increment_arg(x, t, zj, p.t, drift)))
                        .sum()
                }
            };
            wx * h
        })
        .collect();
    LookDensity { t, z, wh }
}

/// Solves `f(x) = target` for `f` decreasing on `[lo, hi]` by bisection.
fn solve_decreasing(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    if f(hi) >= target {
        return hi;
    }
    if f(lo) <= target {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Upper (efficacy) and lower (futility) crossing probabilities per look for
/// given boundaries and drift.
pub fn crossing_probabilities(fractions: &[f64], lower: &[f64], upper: &[f64], drift: f64) -> (Vec<f64>, Vec<f64>) {
    let mut prev: Option<LookDensity> = None;
    let mut up = Vec::new();
    let mut down = Vec::new();
    for k in 0..fractions.len() {
        let t = fractions[k];
        up.push(cross_upper(prev.as_ref(), upper[k], t, drift));
        down.push(cross_lower(prev.as_ref(), lower[k], t, drift));
        prev = Some(advance(prev.as_ref(), lower[k], upper[k], t, drift));
    }
    (up, down)
}

/// Efficacy boundaries spending the given cumulative one-sided alpha, with
/// optional binding lower boundaries.
pub fn efficacy_boundaries(fractions: &[f64], cumulative_alpha: &[f64], lower: Option<&[f64]>) -> Result<Vec<f64>> {
    check_spends(fractions, cumulative_alpha)?;
    let mut prev: Option<LookDensity> = None;
    let mut out = Vec::with_capacity(fractions.len());
    let mut spent = 0.0;
    for (k, &t) in fractions.iter().enumerate() {
        let inc = cumulative_alpha[k] - spent;
        spent = cumulative_alpha[k];
        let b = solve_decreasing(|b| cross_upper(prev.as_ref(), b, t, 0.0), inc, -Z_FAR, Z_FAR);
        let a = lower.map_or(-Z_FAR, |l| l[k].min(b));
        prev = Some(advance(prev.as_ref(), a, b, t, 0.0));
        out.push(b);
    }
    Ok(out)
}

fn check_spends(fractions: &[f64], cumulative: &[f64]) -> Result<()> {
    if fractions.len() != cumulative.len() || fractions.is_empty() {
        return Err(Error::Config("spending and information sequences differ in length".into()));
    }
    let mut last = 0.0;
    for &c in cumulative {
        if !(c >= last && c < 1.0) {
            return Err(Error::Config(format!("spend sequence {cumulative:?} is not nondecreasing in [0, 1)")));
        }
        last = c;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundaries {
    pub fractions: Vec<f64>,
    /// Efficacy z-thresholds, shared by both statistics.
    pub efficacy: Vec<f64>,
    /// Futility z-thresholds, shared by both statistics.
    pub futility: Vec<f64>,
    /// Drift `θ√I_max` of the canonical statistic under the alternative.
    pub drift: f64,
    pub inflation_factor: f64,
    pub binding_futility: bool,
}

struct Pass {
    efficacy: Vec<f64>,
    futility: Vec<f64>,
    /// Final futility bound before it is tied to the efficacy bound.
    final_gap: f64,
}

fn design_pass(spec: &GsDesignSpec, fractions: &[f64], drift: f64) -> Pass {
    let alpha = spec.alpha_one_sided();
    let beta = 1.0 - spec.power;
    let k_last = fractions.len() - 1;
    let mut null_prev: Option<LookDensity> = None;
    let mut alt_prev: Option<LookDensity> = None;
    let (mut efficacy, mut futility) = (Vec::new(), Vec::new());
    let (mut a_spent, mut b_spent) = (0.0, 0.0);
    let mut final_gap = 0.0;
    for (k, &t) in fractions.iter().enumerate() {
        let a_cum = if k == k_last { alpha } else { hsd_spend(spec.gamma_efficacy, t, alpha) };
        let b_cum = if k == k_last { beta } else { hsd_spend(spec.gamma_futility, t, beta) };
        let b = solve_decreasing(|x| cross_upper(null_prev.as_ref(), x, t, 0.0), a_cum - a_spent, -Z_FAR, Z_FAR);
        let a_raw = -solve_decreasing(|x| cross_lower(alt_prev.as_ref(), -x, t, drift), b_cum - b_spent, -Z_FAR, Z_FAR);
        a_spent = a_cum;
        b_spent = b_cum;
        let a = if k == k_last {
            final_gap = a_raw - b;
            b
        } else {
            a_raw.min(b)
        };
        let a_null = if spec.binding_futility { a } else { -Z_FAR };
        null_prev = Some(advance(null_prev.as_ref(), a_null, b, t, 0.0));
        alt_prev = Some(advance(alt_prev.as_ref(), a, b, t, drift));
        efficacy.push(b);
        futility.push(a);
    }
    Pass { efficacy, futility, final_gap }
}

/// Boundaries and inflation factor of a group-sequential design.
pub fn boundaries_from_spending(spec: &GsDesignSpec) -> Result<Boundaries> {
    spec.validate()?;
    let fractions = spec.fractions()?;
    let z_a = spec.z_alpha();
    let z_b = normal::quantile(spec.power);
    let fixed = z_a + z_b;
    if fractions.len() == 1 {
        return Ok(Boundaries {
            fractions,
            efficacy: vec![z_a],
            futility: vec![z_a],
            drift: fixed,
            inflation_factor: 1.0,
            binding_futility: spec.binding_futility,
        });
    }
    let gap = |d: f64| design_pass(spec, &fractions, d).final_gap;
    let (mut lo, mut hi) = (fixed, 1.1 * fixed);
    let mut tries = 0;
    while gap(hi) < 0.0 {
        lo = hi;
        hi *= 1.1;
        tries += 1;
        if tries > 40 {
            return numeric_err("could not bracket the design drift");
        }
    }
    if gap(lo) > 0.0 {
        return numeric_err("design drift below the fixed-sample drift");
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let drift = 0.5 * (lo + hi);
    let pass = design_pass(spec, &fractions, drift);
    Ok(Boundaries {
        fractions,
        efficacy: pass.efficacy,
        futility: pass.futility,
        drift,
        inflation_factor: (drift / fixed).powi(2),
        binding_futility: spec.binding_futility,
    })
}

fn numeric_err<T>(msg: &str) -> Result<T> {
    Err(Error::Numeric(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxSampleSize {
    pub looks: usize,
    pub fixed: usize,
    pub inflation_factor: f64,
    /// `⌈fixed × inflation⌉`.
    pub max: usize,
}

/// Maximum number of cases of the group-sequential design.
pub fn max_sample_size(spec: &GsDesignSpec) -> Result<MaxSampleSize> {
    let fixed = fixed_sample_size(spec)?;
    let b = boundaries_from_spending(spec)?;
    Ok(MaxSampleSize {
        looks: spec.looks,
        fixed,
        inflation_factor: b.inflation_factor,
        max: (fixed as f64 * b.inflation_factor - 1e-9).ceil() as usize,
    })
}

/// Everything the design produces, for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub spec: GsDesignSpec,
    pub models: DesignModels,
    pub fixed_sample_size: usize,
    pub fixed_power: f64,
    pub alt_correlation: f64,
    pub boundaries: Boundaries,
    pub max_sample_size: usize,
    pub look_sizes: Vec<usize>,
}

pub fn design(spec: &GsDesignSpec) -> Result<DesignSummary> {
    let models = DesignModels::new(spec)?;
    let fixed = smallest_n(&models, spec, None)?;
    let boundaries = boundaries_from_spending(spec)?;
    let max = (fixed as f64 * boundaries.inflation_factor - 1e-9).ceil() as usize;
    let k = spec.case_control_ratio;
    let nf = fixed as f64;
    let corr = models.alt_cross.variance_at(nf, k)
        / (models.npv_alt_scale.variance_at(nf, k) * models.ppv_alt_scale.variance_at(nf, k)).sqrt();
    Ok(DesignSummary {
        spec: spec.clone(),
        fixed_power: power_at(&models, spec, nf, None),
        alt_correlation: corr,
        look_sizes: look_sizes(max, &boundaries.fractions),
        models,
        fixed_sample_size: fixed,
        boundaries,
        max_sample_size: max,
    })
}

/// Cases accrued at each look: `round(n_max · fraction)`.
pub fn look_sizes(n_max: usize, fractions: &[f64]) -> Vec<usize> {
    fractions.iter().map(|f| ((n_max as f64 * f).round() as usize).max(1)).collect()
}

/// `(Z_NPV, Z_PPV)` at a view of the sample: estimates minus null values,
/// over the null standard errors at the numbers of cases and controls seen.
pub fn z_statistics(sample: &MarkerSample, view: SequentialView, rho: Prevalence, spec: &GsDesignSpec,
                    models: &DesignModels) -> Result<(f64, f64)> {
    let pair = PrefixPair::new(sample, view, rho)?;
    let npv = curves::npv_from_ppv(curves::ppv_pct_from_prefixes(&pair, spec.u_npv)?, spec.u_npv, rho);
    let ppv = curves::ppv_pct_from_prefixes(&pair, spec.u_ppv)?;
    let cases = prefix_len(sample.n_cases(), view.r_case)? as f64;
    let controls = prefix_len(sample.n_controls(), view.r_control)? as f64;
    let (npv_scale, ppv_scale) = match spec.analysis_densities {
        AnalysisDensities::Design => (models.npv_null_scale, models.ppv_null_scale),
        AnalysisDensities::KernelPlugin => {
            let kde = KernelPlugin::new(sample, view, BandwidthRule::Silverman)?;
            let x_npv = pair.mixture_quantile(spec.u_npv)?;
            let x_ppv = pair.mixture_quantile(spec.u_ppv)?;
            (
                VarianceScale::npv(spec.npv_null, spec.u_npv, rho, DensityRatios::at(&kde, rho, x_npv)?),
                VarianceScale::ppv(spec.ppv_null, spec.u_ppv, rho, DensityRatios::at(&kde, rho, x_ppv)?),
            )
        }
    };
    let sn = npv_scale.variance(cases, controls).sqrt();
    let sp = ppv_scale.variance(cases, controls).sqrt();
    Ok(((npv - spec.npv_null) / sn, (ppv - spec.ppv_null) / sp))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Reject,
    Futility,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub outcome: Outcome,
    /// Zero-based look at which the study stopped.
    pub look: usize,
}

/// The joint rule at look `k`: reject when both statistics exceed the
/// efficacy bound, stop for futility when either is at or below the futility
/// bound, and at the final look accept whenever the study does not reject.
pub fn stop_at(k: usize, (zn, zp): (f64, f64), b: &Boundaries) -> Option<Outcome> {
    if zn > b.efficacy[k] && zp > b.efficacy[k] {
        Some(Outcome::Reject)
    } else if k + 1 == b.efficacy.len() || zn <= b.futility[k] || zp <= b.futility[k] {
        Some(Outcome::Futility)
    } else {
        None
    }
}

/// Replays the joint rule over a path of `(Z_NPV, Z_PPV)` pairs; `None` if
/// the path ends before the study stops.
pub fn decide(path: &[(f64, f64)], b: &Boundaries) -> Option<Decision> {
    path.iter()
        .take(b.efficacy.len())
        .enumerate()
        .find_map(|(k, &z)| stop_at(k, z, b).map(|outcome| Decision { outcome, look: k }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub label: String,
    pub looks: usize,
    pub npv: f64,
    pub ppv: f64,
    pub max_sample_size: usize,
    pub look_sizes: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub p_reject: f64,
    pub p_reject_se: f64,
    pub expected_n: f64,
    pub expected_n_se: f64,
    pub stop_reject: Vec<f64>,
    pub stop_futility: Vec<f64>,
}

/// One replicate's z-path and decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub path: Vec<(f64, f64)>,
    pub decision: Decision,
}

/// Simulates one replicate of the design under the given truth.
pub fn simulate_replicate(design: &DesignSummary, truth: &BinormalModel, seed: u64, draw: u64) -> Result<Replicate> {
    let spec = &design.spec;
    let rho = spec.prevalence()?;
    let n_max = design.max_sample_size;
    let controls_max = ((n_max as f64) / spec.case_control_ratio).round().max(1.0) as usize;
    let sample = simulate_sample(truth, n_max, controls_max, &mut draw_rng(seed, draw))?;
    let b = &design.boundaries;
    let mut path = Vec::with_capacity(b.fractions.len());
    for (k, &n_k) in design.look_sizes.iter().enumerate() {
        let r = n_k as f64 / n_max as f64;
        let z = z_statistics(&sample, SequentialView::new(r, r)?, rho, spec, &design.models)?;
        path.push(z);
        if let Some(outcome) = stop_at(k, z, b) {
            return Ok(Replicate { path, decision: Decision { outcome, look: k } });
        }
    }
    unreachable!("the final look always stops")
}

/// Monte Carlo operating characteristics of a design under a binormal truth
/// calibrated to `(npv, ppv)`.
pub fn simulate_oc(design: &DesignSummary, npv: f64, ppv: f64, replications: usize, seed: u64)
                   -> Result<OperatingCharacteristics> {
    if replications == 0 {
        return domain("at least one replication is required");
    }
    let spec = &design.spec;
    let truth = calibrate_binormal(spec.rho, spec.u_npv, npv, spec.u_ppv, ppv)?;
    let reps = (0..replications as u64)
        .into_par_iter()
        .map(|k| simulate_replicate(design, &truth, seed, k).map(|r| r.decision))
        .collect::<Result<Vec<_>>>()?;
    let looks = design.boundaries.fractions.len();
    let n = replications as f64;
    let mut stop_reject = vec![0usize; looks];
    let mut stop_futility = vec![0usize; looks];
    let sizes: Vec<f64> = reps.iter().map(|d| design.look_sizes[d.look] as f64).collect();
    for d in &reps {
        match d.outcome {
            Outcome::Reject => stop_reject[d.look] += 1,
            Outcome::Futility => stop_futility[d.look] += 1,
        }
    }
    let stop_reject: Vec<f64> = stop_reject.into_iter().map(|c| c as f64 / n).collect();
    let stop_futility: Vec<f64> = stop_futility.into_iter().map(|c| c as f64 / n).collect();
    let rejects = reps.iter().filter(|d| d.outcome == Outcome::Reject).count() as f64;
    let p = rejects / n;
    let mean_n = crate::stats::mean(&sizes);
    let var_n = crate::stats::pairwise_sum(&sizes.iter().map(|s| (s - mean_n).powi(2)).collect::<Vec<_>>())
        / (n - 1.0).max(1.0);
    Ok(OperatingCharacteristics {
        label: format!("NPV({})={npv}, PPV({})={ppv}", spec.u_npv, spec.u_ppv),
        looks,
        npv,
        ppv,
        max_sample_size: design.max_sample_size,
        look_sizes: design.look_sizes.clone(),
        replications,
        seed,
        p_reject: p,
        p_reject_se: (p * (1.0 - p) / n).sqrt(),
        expected_n: mean_n,
        expected_n_se: (var_n / n).sqrt(),
        stop_reject,
        stop_futility,
    })
}
