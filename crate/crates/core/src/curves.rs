//! ROC, inverse-ROC, PPV and NPV curves: true curves of a population model
//! and their sequential empirical (plug-in) estimators.

use serde::{Deserialize, Serialize};

use crate::empirical_process::{MarkerSample, Prevalence, PrefixPair, SequentialView, SortedPrefix};
use crate::error::{domain, numeric, Result};
use crate::normal;

/// Marker distributions of the two arms. Everything the true curves and the
/// variance formulas need is derived from the four CDF/density functions.
pub trait Population {
    fn case_cdf(&self, x: f64) -> f64;
    fn control_cdf(&self, x: f64) -> f64;
    fn case_pdf(&self, x: f64) -> f64;
    fn control_pdf(&self, x: f64) -> f64;

    /// `S_D̄⁻¹(t)`: the control threshold with false positive fraction `t`.
    fn control_survival_quantile(&self, t: f64) -> Result<f64> {
        invert_increasing(|x| self.control_cdf(x), |x| self.control_pdf(x), 1.0 - t)
    }

    /// `S_D⁻¹(v)`: the case threshold with true positive fraction `v`.
    fn case_survival_quantile(&self, v: f64) -> Result<f64> {
        invert_increasing(|x| self.case_cdf(x), |x| self.case_pdf(x), 1.0 - v)
    }

    fn mixture_cdf(&self, rho: Prevalence, x: f64) -> f64 {
        let r = rho.value();
        r * self.case_cdf(x) + (1.0 - r) * self.control_cdf(x)
    }

    fn mixture_pdf(&self, rho: Prevalence, x: f64) -> f64 {
        let r = rho.value();
        r * self.case_pdf(x) + (1.0 - r) * self.control_pdf(x)
    }

    /// `F⁻¹(u)` for the prevalence-weighted population.
    fn mixture_quantile(&self, rho: Prevalence, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return domain(format!("percentile {u} outside (0, 1)"));
        }
        invert_increasing(|x| self.mixture_cdf(rho, x), |x| self.mixture_pdf(rho, x), u)
    }
}

/// Solves `cdf(x) = target` for a continuous strictly increasing CDF using
/// Newton steps safeguarded by a bisection bracket.
pub(crate) fn invert_increasing(
    cdf: impl Fn(f64) -> f64,
    pdf: impl Fn(f64) -> f64,
    target: f64,
) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return domain(format!("probability {target} outside (0, 1)"));
    }
    let (mut lo, mut hi) = (-1.0, 1.0);
    while cdf(lo) > target {
        lo *= 2.0;
        if lo < -1e8 {
            return numeric("cannot bracket quantile from below");
        }
    }
    while cdf(hi) < target {
        hi *= 2.0;
        if hi > 1e8 {
            return numeric("cannot bracket quantile from above");
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..300 {
        let g = cdf(x) - target;
        if g.abs() <= 1e-15 {
            return Ok(x);
        }
        if g > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return Ok(x);
        }
        let d = pdf(x);
        let newton = x - g / d;
        x = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(x)
}

/// Controls standard normal, cases `N(μ_D, σ_D²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinormalModel {
    pub mu_case: f64,
    pub sigma_case: f64,
}

impl BinormalModel {
    pub fn new(mu_case: f64, sigma_case: f64) -> Result<Self> {
        if !(sigma_case > 0.0 && sigma_case.is_finite() && mu_case.is_finite()) {
            return domain(format!("invalid binormal parameters ({mu_case}, {sigma_case})"));
        }
        Ok(Self { mu_case, sigma_case })
    }

    /// The simulation scenario with case mean and SD both equal to 1.
    pub fn unit() -> Self {
        Self { mu_case: 1.0, sigma_case: 1.0 }
    }
}

impl Population for BinormalModel {
    fn case_cdf(&self, x: f64) -> f64 {
        normal::cdf((x - self.mu_case) / self.sigma_case)
    }
    fn control_cdf(&self, x: f64) -> f64 {
        normal::cdf(x)
    }
    fn case_pdf(&self, x: f64) -> f64 {
        normal::pdf((x - self.mu_case) / self.sigma_case) / self.sigma_case
    }
    fn control_pdf(&self, x: f64) -> f64 {
        normal::pdf(x)
    }
    fn control_survival_quantile(&self, t: f64) -> Result<f64> {
        check_open(t, "false positive fraction")?;
        Ok(normal::quantile(1.0 - t))
    }
    fn case_survival_quantile(&self, v: f64) -> Result<f64> {
        check_open(v, "true positive fraction")?;
        Ok(self.mu_case + self.sigma_case * normal::quantile(1.0 - v))
    }
}

fn check_open(x: f64, what: &str) -> Result<()> {
    if !(x > 0.0 && x < 1.0) {
        return domain(format!("{what} {x} outside (0, 1)"));
    }
    Ok(())
}

/// Which axis indexes a curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Fpf,
    Tpf,
    Percentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub index: f64,
    pub value: f64,
    pub index_kind: IndexKind,
}

/// The curves that can be evaluated on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Roc,
    RocInverse,
    PpvFpf,
    NpvFpf,
    PpvPct,
    NpvPct,
}

impl CurveKind {
    pub fn index_kind(self) -> IndexKind {
        match self {
            CurveKind::Roc | CurveKind::PpvFpf | CurveKind::NpvFpf => IndexKind::Fpf,
            CurveKind::RocInverse => IndexKind::Tpf,
            CurveKind::PpvPct | CurveKind::NpvPct => IndexKind::Percentile,
        }
    }
}

impl std::str::FromStr for CurveKind {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "roc" => CurveKind::Roc,
            "roc_inverse" => CurveKind::RocInverse,
            "ppv_fpf" => CurveKind::PpvFpf,
            "npv_fpf" => CurveKind::NpvFpf,
            "ppv_pct" => CurveKind::PpvPct,
            "npv_pct" => CurveKind::NpvPct,
            other => return Err(crate::error::Error::Config(format!("unknown curve `{other}`"))),
        })
    }
}

/// `ROC(t) = Φ((μ_D − z_{1−t})/σ_D)`.
pub fn roc_true(model: &BinormalModel, t: f64) -> Result<f64> {
    roc(model, t)
}

/// `ROC(t) = S_D(S_D̄⁻¹(t))` for any population.
pub fn roc<P: Population + ?Sized>(pop: &P, t: f64) -> Result<f64> {
    check_open(t, "false positive fraction")?;
    let x = pop.control_survival_quantile(t)?;
    Ok(1.0 - pop.case_cdf(x))
}

/// `ROC⁻¹(v) = S_D̄(S_D⁻¹(v))`.
pub fn roc_inverse<P: Population + ?Sized>(pop: &P, v: f64) -> Result<f64> {
    check_open(v, "true positive fraction")?;
    let x = pop.case_survival_quantile(v)?;
    Ok(1.0 - pop.control_cdf(x))
}

/// `Ŝ_D(Ŝ_D̄⁻¹(t))` on the prefixes selected by `view`.
pub fn roc_empirical(sample: &MarkerSample, view: SequentialView, t: f64) -> Result<f64> {
    check_open(t, "false positive fraction")?;
    let cases = SortedPrefix::new(sample.cases(), view.r_case)?;
    let controls = SortedPrefix::new(sample.controls(), view.r_control)?;
    roc_from_prefixes(&cases, &controls, t)
}

pub(crate) fn roc_from_prefixes(cases: &SortedPrefix, controls: &SortedPrefix, t: f64) -> Result<f64> {
    Ok(cases.survival(controls.survival_quantile(t)?))
}

/// `Ŝ_D̄(Ŝ_D⁻¹(v))`.
pub fn roc_inverse_empirical(sample: &MarkerSample, view: SequentialView, v: f64) -> Result<f64> {
    check_open(v, "true positive fraction")?;
    let cases = SortedPrefix::new(sample.cases(), view.r_case)?;
    let controls = SortedPrefix::new(sample.controls(), view.r_control)?;
    Ok(controls.survival(cases.survival_quantile(v)?))
}

/// `ROC(t)ρ / (ROC(t)ρ + t(1 − ρ))`.
pub fn ppv_fpf(roc_value: f64, t: f64, rho: Prevalence) -> Result<f64> {
    check_roc_args(roc_value, t)?;
    let r = rho.value();
    let den = roc_value * r + t * (1.0 - r);
    if den <= 0.0 {
        return domain("PPV denominator is zero");
    }
    Ok(roc_value * r / den)
}

/// `(1 − t)(1 − ρ) / ((1 − ROC(t))ρ + (1 − t)(1 − ρ))`.
pub fn npv_fpf(roc_value: f64, t: f64, rho: Prevalence) -> Result<f64> {
    check_roc_args(roc_value, t)?;
    let r = rho.value();
    let den = (1.0 - roc_value) * r + (1.0 - t) * (1.0 - r);
    if den <= 0.0 {
        return domain("NPV denominator is zero");
    }
    Ok((1.0 - t) * (1.0 - r) / den)
}

fn check_roc_args(roc_value: f64, t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&roc_value) {
        return domain(format!("ROC value {roc_value} outside [0, 1]"));
    }
    if !(0.0..=1.0).contains(&t) {
        return domain(format!("false positive fraction {t} outside [0, 1]"));
    }
    Ok(())
}

/// `PPV̂(t)`: the empirical ROC plugged into the PPV-by-FPF map.
pub fn ppv_fpf_empirical(
    sample: &MarkerSample,
    view: SequentialView,
    rho: Prevalence,
    t: f64,
) -> Result<f64> {
    ppv_fpf(roc_empirical(sample, view, t)?, t, rho)
}

pub fn npv_fpf_empirical(
    sample: &MarkerSample,
    view: SequentialView,
    rho: Prevalence,
    t: f64,
) -> Result<f64> {
    npv_fpf(roc_empirical(sample, view, t)?, t, rho)
}

/// `NPV(u) = (u − ρ)/u + ((1 − u)/u)·PPV(u)`.
pub fn npv_from_ppv(ppv: f64, u: f64, rho: Prevalence) -> f64 {
    (u - rho.value()) / u + ((1.0 - u) / u) * ppv
}

/// `PPV̂(u) = Ŝ_D(F̂⁻¹(u))ρ/(1 − u)` from an already-built prefix pair.
pub fn ppv_pct_from_prefixes(pair: &PrefixPair, u: f64) -> Result<f64> {
    let (_, cases_le) = pair.mixture_quantile_with_counts(u)?;
    let n = pair.cases.len();
    let surv = (n - cases_le) as f64 / n as f64;
    Ok(surv * pair.rho.value() / (1.0 - u))
}

pub fn ppv_pct(sample: &MarkerSample, view: SequentialView, rho: Prevalence, u: f64) -> Result<f64> {
    ppv_pct_from_prefixes(&PrefixPair::new(sample, view, rho)?, u)
}

pub fn npv_pct(sample: &MarkerSample, view: SequentialView, rho: Prevalence, u: f64) -> Result<f64> {
    Ok(npv_from_ppv(ppv_pct(sample, view, rho, u)?, u, rho))
}

/// `PPV(u) = S_D(F⁻¹(u))ρ/(1 − u)`.
pub fn ppv_pct_true<P: Population + ?Sized>(pop: &P, rho: Prevalence, u: f64) -> Result<f64> {
    let x = pop.mixture_quantile(rho, u)?;
    Ok((1.0 - pop.case_cdf(x)) * rho.value() / (1.0 - u))
}

pub fn npv_pct_true<P: Population + ?Sized>(pop: &P, rho: Prevalence, u: f64) -> Result<f64> {
    Ok(npv_from_ppv(ppv_pct_true(pop, rho, u)?, u, rho))
}

/// Evaluates an empirical curve on a grid by step-function composition.
pub fn empirical_curve(
    sample: &MarkerSample,
    view: SequentialView,
    rho: Prevalence,
    kind: CurveKind,
    grid: &[f64],
) -> Result<Vec<CurvePoint>> {
    let cases = SortedPrefix::new(sample.cases(), view.r_case)?;
    let controls = SortedPrefix::new(sample.controls(), view.r_control)?;
    let pair = PrefixPair { cases: cases.clone(), controls: controls.clone(), rho };
    grid.iter()
        .map(|&index| {
            check_open(index, "curve index")?;
            let value = match kind {
                CurveKind::Roc => roc_from_prefixes(&cases, &controls, index)?,
                CurveKind::RocInverse => controls.survival(cases.survival_quantile(index)?),
                CurveKind::PpvFpf => ppv_fpf(roc_from_prefixes(&cases, &controls, index)?, index, rho)?,
                CurveKind::NpvFpf => npv_fpf(roc_from_prefixes(&cases, &controls, index)?, index, rho)?,
                CurveKind::PpvPct => ppv_pct_from_prefixes(&pair, index)?,
                CurveKind::NpvPct => npv_from_ppv(ppv_pct_from_prefixes(&pair, index)?, index, rho),
            };
            Ok(CurvePoint { index, value, index_kind: kind.index_kind() })
        })
        .collect()
}

/// Evaluates a true curve of a population model on a grid.
pub fn true_curve<P: Population + ?Sized>(
    pop: &P,
    rho: Prevalence,
    kind: CurveKind,
    grid: &[f64],
) -> Result<Vec<CurvePoint>> {
    grid.iter()
        .map(|&index| {
            let value = match kind {
                CurveKind::Roc => roc(pop, index)?,
                CurveKind::RocInverse => roc_inverse(pop, index)?,
                CurveKind::PpvFpf => ppv_fpf(roc(pop, index)?, index, rho)?,
                CurveKind::NpvFpf => npv_fpf(roc(pop, index)?, index, rho)?,
                CurveKind::PpvPct => ppv_pct_true(pop, rho, index)?,
                CurveKind::NpvPct => npv_pct_true(pop, rho, index)?,
            };
            Ok(CurvePoint { index, value, index_kind: kind.index_kind() })
        })
        .collect()
}
