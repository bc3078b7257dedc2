//! Closed-form asymptotic covariances of the sequential empirical ROC, PPV
//! and NPV estimators.
//!
//! Every estimator is asymptotically a linear functional of two independent
//! Kiefer processes: one driven by the case empirical process at `F_D(x)` and
//! one by the control empirical process at `F_D̄(x)`, where `x` is the marker
//! threshold an index point corresponds to. [`Loading`] stores that linear
//! functional, and [`process_cov`] turns any list of loadings into the
//! covariance of the scaled processes
//! `n_D^{-1/2} [n_D r_D] (θ̂ − θ)`.
//!
//! The explicit variance and covariance displays (ROC points, PPV/NPV by
//! percentile) are implemented separately from the loading engine so the two
//! routes can be checked against each other.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::curves::{self, BinormalModel, Population};
use crate::empirical_process::{prefix_len, Prevalence, SequentialView, ValidityWindow};
use crate::error::{domain, numeric, Result};
use crate::kde::KernelPlugin;

/// Case and control sample sizes of a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyShape {
    pub n_case: usize,
    pub n_control: usize,
}

impl StudyShape {
    pub fn new(n_case: usize, n_control: usize) -> Result<Self> {
        if n_case == 0 || n_control == 0 {
            return domain("sample sizes must be positive");
        }
        Ok(Self { n_case, n_control })
    }

    /// `λ = n_D / n_D̄`.
    pub fn lambda(&self) -> f64 {
        self.n_case as f64 / self.n_control as f64
    }
}

/// Source of the densities the formulas need.
#[derive(Debug, Clone)]
pub enum DensityOracle {
    Binormal(BinormalModel),
    KernelPlugin(KernelPlugin),
}

impl DensityOracle {
    pub fn label(&self) -> String {
        match self {
            DensityOracle::Binormal(m) => {
                format!("binormal(mu_case={}, sigma_case={})", m.mu_case, m.sigma_case)
            }
            DensityOracle::KernelPlugin(k) => {
                let (hc, hb) = k.bandwidths();
                format!("kernel-plugin(gaussian, h_case={hc}, h_control={hb})")
            }
        }
    }
}

impl Population for DensityOracle {
    fn case_cdf(&self, x: f64) -> f64 {
        match self {
            DensityOracle::Binormal(m) => m.case_cdf(x),
            DensityOracle::KernelPlugin(k) => k.case_cdf(x),
        }
    }
    fn control_cdf(&self, x: f64) -> f64 {
        match self {
            DensityOracle::Binormal(m) => m.control_cdf(x),
            DensityOracle::KernelPlugin(k) => k.control_cdf(x),
        }
    }
    fn case_pdf(&self, x: f64) -> f64 {
        match self {
            DensityOracle::Binormal(m) => m.case_pdf(x),
            DensityOracle::KernelPlugin(k) => k.case_pdf(x),
        }
    }
    fn control_pdf(&self, x: f64) -> f64 {
        match self {
            DensityOracle::Binormal(m) => m.control_pdf(x),
            DensityOracle::KernelPlugin(k) => k.control_pdf(x),
        }
    }
    fn control_survival_quantile(&self, t: f64) -> Result<f64> {
        match self {
            DensityOracle::Binormal(m) => m.control_survival_quantile(t),
            DensityOracle::KernelPlugin(k) => k.control_survival_quantile(t),
        }
    }
}

/// Kernel density plug-in oracle for analysis-time variance estimates.
pub fn kernel_density_plugin(
    sample: &crate::empirical_process::MarkerSample,
    view: SequentialView,
    rule: crate::kde::BandwidthRule,
) -> Result<DensityOracle> {
    Ok(DensityOracle::KernelPlugin(KernelPlugin::new(sample, view, rule)?))
}

/// The estimators the engine covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Roc,
    PpvFpf,
    NpvFpf,
    PpvPct,
    NpvPct,
}

impl std::str::FromStr for Endpoint {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "roc" => Endpoint::Roc,
            "ppv_fpf" => Endpoint::PpvFpf,
            "npv_fpf" => Endpoint::NpvFpf,
            "ppv_pct" => Endpoint::PpvPct,
            "npv_pct" => Endpoint::NpvPct,
            other => return Err(crate::error::Error::Config(format!("unknown probe kind `{other}`"))),
        })
    }
}

/// One estimator evaluated at an index point and a view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovProbe {
    pub endpoint: Endpoint,
    pub index: f64,
    pub view: SequentialView,
}

impl CovProbe {
    pub fn new(endpoint: Endpoint, index: f64, r_case: f64, r_control: f64) -> Result<Self> {
        Ok(Self { endpoint, index, view: SequentialView::new(r_case, r_control)? })
    }

    pub fn roc(index: f64, r_case: f64, r_control: f64) -> Result<Self> {
        Self::new(Endpoint::Roc, index, r_case, r_control)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// `n_D^{-1/2}[n_D r_D](θ̂ − θ)`.
    Process,
    /// `θ̂` itself.
    Estimator,
}

/// Covariance of the case/control Kiefer processes:
/// `(t₁∧t₂ − t₁t₂)(r₁∧r₂)`.
pub fn kiefer_cov(t1: f64, r1: f64, t2: f64, r2: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&t1) && (0.0..=1.0).contains(&t2));
    debug_assert!(r1 >= 0.0 && r2 >= 0.0);
    (t1.min(t2) - t1 * t2) * r1.min(r2)
}

/// Coefficients of an estimator on the case and control empirical processes,
/// and the bridge positions at which they act.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loading {
    pub case_pos: f64,
    pub case_coef: f64,
    pub control_pos: f64,
    pub control_coef: f64,
}

impl Loading {
    fn scaled(self, k: f64) -> Self {
        Self { case_coef: k * self.case_coef, control_coef: k * self.control_coef, ..self }
    }
}

fn positive(x: f64, what: &str) -> Result<f64> {
    if !(x.is_finite() && x > 0.0) {
        return numeric(format!("{what} is zero or non-finite ({x})"));
    }
    Ok(x)
}

/// Quantities of the percentile-indexed curves at one `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercentilePoint {
    pub u: f64,
    pub threshold: f64,
    pub ppv: f64,
    pub npv: f64,
    /// `f_D / f` at `F⁻¹(u)`.
    pub case_ratio: f64,
    /// `f_D̄ / f` at `F⁻¹(u)`.
    pub control_ratio: f64,
    /// `F_D(F⁻¹(u))`.
    pub case_cdf: f64,
    /// `F_D̄(F⁻¹(u))`.
    pub control_cdf: f64,
}

impl PercentilePoint {
    pub fn new<P: Population + ?Sized>(pop: &P, rho: Prevalence, u: f64) -> Result<Self> {
        let x = pop.mixture_quantile(rho, u)?;
        let f = positive(pop.mixture_pdf(rho, x), "population density at F⁻¹(u)")?;
        let ppv = (1.0 - pop.case_cdf(x)) * rho.value() / (1.0 - u);
        Ok(Self {
            u,
            threshold: x,
            ppv,
            npv: curves::npv_from_ppv(ppv, u, rho),
            case_ratio: pop.case_pdf(x) / f,
            control_ratio: pop.control_pdf(x) / f,
            case_cdf: pop.case_cdf(x),
            control_cdf: pop.control_cdf(x),
        })
    }
}

/// Influence of an estimator on the case (`ΔF_D`) and control (`ΔF_D̄`)
/// empirical processes, before the sequential `√λ r_D/r_D̄` factor.
pub fn influence<P: Population + ?Sized>(
    pop: &P,
    rho: Prevalence,
    endpoint: Endpoint,
    index: f64,
) -> Result<Loading> {
    let r = rho.value();
    match endpoint {
        Endpoint::Roc | Endpoint::PpvFpf | Endpoint::NpvFpf => {
            let x = pop.control_survival_quantile(index)?;
            let ratio = pop.case_pdf(x) / positive(pop.control_pdf(x), "control density at S_D̄⁻¹(t)")?;
            if !ratio.is_finite() {
                return numeric("density ratio is unbounded");
            }
            let roc = 1.0 - pop.case_cdf(x);
            let base = Loading {
                case_pos: pop.case_cdf(x),
                case_coef: -1.0,
                control_pos: pop.control_cdf(x),
                control_coef: ratio,
            };
            let t = index;
            Ok(match endpoint {
                Endpoint::Roc => base,
                Endpoint::PpvFpf => base.scaled(ppv_fpf_delta(roc, t, rho)),
                _ => {
                    let den = (1.0 - roc) * r + (1.0 - t) * (1.0 - r);
                    base.scaled((1.0 - t) * (1.0 - r) * r / (den * den))
                }
            })
        }
        Endpoint::PpvPct | Endpoint::NpvPct => {
            let p = PercentilePoint::new(pop, rho, index)?;
            let a = r * (1.0 - r) / (1.0 - index);
            let base = Loading {
                case_pos: p.case_cdf,
                case_coef: -a * p.control_ratio,
                control_pos: p.control_cdf,
                control_coef: a * p.case_ratio,
            };
            Ok(if endpoint == Endpoint::PpvPct {
                base
            } else {
                base.scaled((1.0 - index) / index)
            })
        }
    }
}

/// Delta-method factor `t(1 − ρ)ρ / (ROC(t)ρ + t(1 − ρ))²`.
pub fn ppv_fpf_delta(roc: f64, t: f64, rho: Prevalence) -> f64 {
    let r = rho.value();
    let den = roc * r + t * (1.0 - r);
    t * (1.0 - r) * r / (den * den)
}

/// A symmetric covariance matrix tagged with its probes and scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    pub probes: Vec<CovProbe>,
    pub scale: Scale,
    pub matrix: DMatrix<f64>,
}

impl CovMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

fn finish(probes: &[CovProbe], scale: Scale, m: DMatrix<f64>) -> Result<CovMatrix> {
    let sym = (&m + m.transpose()) * 0.5;
    let out = CovMatrix { probes: probes.to_vec(), scale, matrix: sym };
    if out.dim() > 0 {
        let floor = -1e-9 * out.matrix.diagonal().amax().max(1.0);
        let min = out.min_eigenvalue();
        if min < floor {
            return numeric(format!("covariance matrix is not PSD (smallest eigenvalue {min:.3e})"));
        }
    }
    Ok(out)
}

/// Process-scale covariance of arbitrary probes, checked against `window`.
pub fn process_cov_in<P: Population + ?Sized>(
    pop: &P,
    rho: Prevalence,
    probes: &[CovProbe],
    lambda: f64,
    window: &ValidityWindow,
) -> Result<CovMatrix> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return domain(format!("case:control ratio {lambda} must be non-negative"));
    }
    let loads = probes
        .iter()
        .map(|p| {
            window.check(p.index, p.view)?;
            influence(pop, rho, p.endpoint, p.index)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = probes.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = process_entry(&loads[i], probes[i].view, &loads[j], probes[j].view, lambda);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    finish(probes, Scale::Process, m)
}

fn process_entry(li: &Loading, vi: SequentialView, lj: &Loading, vj: SequentialView, lambda: f64) -> f64 {
    let case = li.case_coef * lj.case_coef * kiefer_cov(li.case_pos, vi.r_case, lj.case_pos, vj.r_case);
    let wi = vi.r_case / vi.r_control;
    let wj = vj.r_case / vj.r_control;
    let control = lambda
        * wi
        * wj
        * li.control_coef
        * lj.control_coef
        * kiefer_cov(li.control_pos, vi.r_control, lj.control_pos, vj.r_control);
    case + control
}

/// Process-scale covariance with the default validity window.
pub fn process_cov<P: Population + ?Sized>(
    pop: &P,
    rho: Prevalence,
    probes: &[CovProbe],
    lambda: f64,
) -> Result<CovMatrix> {
    process_cov_in(pop, rho, probes, lambda, &ValidityWindow::default())
}

/// Estimator-scale covariance: the process matrix divided by
/// `[n_D r_i][n_D r_j] / n_D`.
pub fn estimator_cov<P: Population + ?Sized>(
    pop: &P,
    rho: Prevalence,
    probes: &[CovProbe],
    shape: StudyShape,
) -> Result<CovMatrix> {
    let proc = process_cov(pop, rho, probes, shape.lambda())?;
    rescale_to_estimator(&proc, shape)
}

/// Converts a process-scale matrix into estimator scale.
pub fn rescale_to_estimator(proc: &CovMatrix, shape: StudyShape) -> Result<CovMatrix> {
    let counts = proc
        .probes
        .iter()
        .map(|p| prefix_len(shape.n_case, p.view.r_case).map(|k| k as f64))
        .collect::<Result<Vec<_>>>()?;
    let n = shape.n_case as f64;
    let mut m = proc.matrix.clone();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            m[(i, j)] *= n / (counts[i] * counts[j]);
        }
    }
    finish(&proc.probes, Scale::Estimator, m)
}

fn require(probes: &[CovProbe], endpoint: Endpoint) -> Result<()> {
    if let Some(p) = probes.iter().find(|p| p.endpoint != endpoint) {
        return domain(format!("expected {endpoint:?} probes, got {:?}", p.endpoint));
    }
    Ok(())
}

/// Covariance of `R_{r_D,r_D̄}(t)` across probes (limit scale).
pub fn roc_process_cov<P: Population + ?Sized>(
    pop: &P,
    probes: &[CovProbe],
    lambda: f64,
) -> Result<CovMatrix> {
    require(probes, Endpoint::Roc)?;
    // prevalence does not enter the ROC loadings
    process_cov(pop, Prevalence::new(0.5)?, probes, lambda)
}

/// Covariance of the ROC estimators themselves.
pub fn roc_estimator_cov<P: Population + ?Sized>(
    pop: &P,
    probes: &[CovProbe],
    shape: StudyShape,
) -> Result<CovMatrix> {
    require(probes, Endpoint::Roc)?;
    estimator_cov(pop, Prevalence::new(0.5)?, probes, shape)
}

/// Covariance of PPV-by-FPF estimators.
pub fn ppv_fpf_cov<P: Population + ?Sized>(
    pop: &P,
    rho: Prevalence,
    probes: &[CovProbe],
    shape: StudyShape,
) -> Result<CovMatrix> {
    require(probes, Endpoint::PpvFpf)?;
    estimator_cov(pop, rho, probes, shape)
}

/// Variance of a ROC point estimator written out directly:
/// `ROC(1−ROC)/(n_D r_D) + q² t(1−t)/(n_D̄ r_D̄)`.
pub fn roc_point_variance<P: Population + ?Sized>(
    pop: &P,
    t: f64,
    view: SequentialView,
    shape: StudyShape,
) -> Result<f64> {
    roc_point_covariance(pop, (t, view), (t, view), shape)
}

/// Covariance of two ROC point estimators written out directly.
pub fn roc_point_covariance<P: Population + ?Sized>(
    pop: &P,
    (ti, vi): (f64, SequentialView),
    (tj, vj): (f64, SequentialView),
    shape: StudyShape,
) -> Result<f64> {
    let (roc_i, q_i) = roc_and_ratio(pop, ti)?;
    let (roc_j, q_j) = roc_and_ratio(pop, tj)?;
    let nd = shape.n_case as f64;
    let nb = shape.n_control as f64;
    let case = vi.r_case.min(vj.r_case) * (roc_i.min(roc_j) - roc_i * roc_j) / (nd * vi.r_case * vj.r_case);
    let control = q_i * q_j * vi.r_control.min(vj.r_control) * (ti.min(tj) - ti * tj)
        / (nb * vi.r_control * vj.r_control);
    Ok(case + control)
}

fn roc_and_ratio<P: Population + ?Sized>(pop: &P, t: f64) -> Result<(f64, f64)> {
    let x = pop.control_survival_quantile(t)?;
    let q = pop.case_pdf(x) / positive(pop.control_pdf(x), "control density")?;
    Ok((1.0 - pop.case_cdf(x), q))
}

/// Density ratios `f_D/f` and `f_D̄/f` at a percentile threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityRatios {
    pub case_ratio: f64,
    pub control_ratio: f64,
}

impl DensityRatios {
    /// Ratios of a population's densities at threshold `x`.
    pub fn at<P: Population + ?Sized>(pop: &P, rho: Prevalence, x: f64) -> Result<Self> {
        let f = positive(pop.mixture_pdf(rho, x), "population density")?;
        Ok(Self { case_ratio: pop.case_pdf(x) / f, control_ratio: pop.control_pdf(x) / f })
    }
}

impl From<&PercentilePoint> for DensityRatios {
    fn from(p: &PercentilePoint) -> Self {
        Self { case_ratio: p.case_ratio, control_ratio: p.control_ratio }
    }
}

/// `Var PPV̂(u)` in mean–variance form: given the density ratios at `F⁻¹(u)`,
/// the value of `PPV(u)` and the effective numbers of cases and controls
/// observed (`n_D r_D`, `n_D̄ r_D̄`).
pub fn ppv_pct_var_from_value(
    ppv: f64,
    u: f64,
    rho: Prevalence,
    ratios: DensityRatios,
    cases_seen: f64,
    controls_seen: f64,
) -> f64 {
    let r = rho.value();
    let case = (ratios.control_ratio * (1.0 - r)).powi(2) * ppv * (r / (1.0 - u) - ppv) / cases_seen;
    let control =
        (ratios.case_ratio * r).powi(2) * (1.0 - ppv) * ((u - r) / (1.0 - u) + ppv) / controls_seen;
    case + control
}

/// `Var NPV̂(u)` in mean–variance form.
pub fn npv_pct_var_from_value(
    npv: f64,
    u: f64,
    rho: Prevalence,
    ratios: DensityRatios,
    cases_seen: f64,
    controls_seen: f64,
) -> f64 {
    let r = rho.value();
    let case = (ratios.control_ratio * (1.0 - r)).powi(2) * (npv + (r - u) / u) * (1.0 - npv) / cases_seen;
    let control = (ratios.case_ratio * r).powi(2) * npv * ((1.0 - r) / u - npv) / controls_seen;
    case + control
}

fn seen(shape: StudyShape, view: SequentialView) -> (f64, f64) {
    (shape.n_case as f64 * view.r_case, shape.n_control as f64 * view.r_control)
}

/// Asymptotic variance of `PPV̂_{r_D,r_D̄}(u)`.
pub fn ppv_pct_var<P: Population + ?Sized>(
    pop: &P,
    rho: Prevalence,
    u: f64,
    view: SequentialView,
    shape: StudyShape,
) -> Result<f64> {
    ValidityWindow::default().check(u, view)?;
    let p = PercentilePoint::new(pop, rho, u)?;
    let (nd, nb) = seen(shape, view);
    Ok(ppv_pct_var_from_value(p.ppv, u, rho, (&p).into(), nd, nb))
}

/// Asymptotic variance of `NPV̂_{r_D,r_D̄}(u)`.
pub fn npv_pct_var<P: Population + ?Sized>(
    pop: &P,
    rho: Prevalence,
    u: f64,
    view: SequentialView,
    shape: StudyShape,
) -> Result<f64> {
    ValidityWindow::default().check(u, view)?;
    let p = PercentilePoint::new(pop, rho, u)?;
    let (nd, nb) = seen(shape, view);
    Ok(npv_pct_var_from_value(p.npv, u, rho, (&p).into(), nd, nb))
}

/// `Cov[PPV̂(u₁), PPV̂(u₂)]` from the two-branch display.
pub fn ppv_pct_pair_cov<P: Population + ?Sized>(
    pop: &P,
    rho: Prevalence,
    (u1, v1): (f64, SequentialView),
    (u2, v2): (f64, SequentialView),
    shape: StudyShape,
) -> Result<f64> {
    let window = ValidityWindow::default();
    window.check(u1, v1)?;
    window.check(u2, v2)?;
    let p1 = PercentilePoint::new(pop, rho, u1)?;
    let p2 = PercentilePoint::new(pop, rho, u2)?;
    let r = rho.value();
    let (case_w, control_w) = view_weights(v1, v2, shape);
    let bb = p1.control_ratio * p2.control_ratio;
    let aa = p1.case_ratio * p2.case_ratio;
    Ok(if u1 <= u2 {
        let k = u1 / (1.0 - u1);
        (1.0 - r).powi(2) * k * bb * case_w * (1.0 - p1.npv) * p2.ppv
            + r * r * k * aa * control_w * p1.npv * (1.0 - p2.ppv)
    } else {
        let k = u2 / (1.0 - u2);
        (1.0 - r).powi(2) * k * bb * case_w * (1.0 - p2.npv) * p1.ppv
            + r * r * k * aa * control_w * p2.npv * (1.0 - p1.ppv)
    })
}

/// `(r_{D,1}∧r_{D,2})/(n_D r_{D,1} r_{D,2})` and the control analogue.
fn view_weights(v1: SequentialView, v2: SequentialView, shape: StudyShape) -> (f64, f64) {
    let case = v1.r_case.min(v2.r_case) / (shape.n_case as f64 * v1.r_case * v2.r_case);
    let control =
        v1.r_control.min(v2.r_control) / (shape.n_control as f64 * v1.r_control * v2.r_control);
    (case, control)
}

/// Covariance matrix of PPV-by-percentile estimators from the pairwise
/// display.
pub fn ppv_pct_cov<P: Population + ?Sized>(
    pop: &P,
    rho: Prevalence,
    probes: &[CovProbe],
    shape: StudyShape,
) -> Result<CovMatrix> {
    require(probes, Endpoint::PpvPct)?;
    let n = probes.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = ppv_pct_pair_cov(
                pop,
                rho,
                (probes[i].index, probes[i].view),
                (probes[j].index, probes[j].view),
                shape,
            )?;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    finish(probes, Scale::Estimator, m)
}

/// `Cov[PPV̂_{view₁}(u₁), NPV̂_{view₂}(u₂)]` from the two-branch display.
pub fn ppv_npv_cross_cov<P: Population + ?Sized>(
    pop: &P,
    rho: Prevalence,
    (u1, v1): (f64, SequentialView),
    (u2, v2): (f64, SequentialView),
    shape: StudyShape,
) -> Result<f64> {
    let window = ValidityWindow::default();
    window.check(u1, v1)?;
    window.check(u2, v2)?;
    let p1 = PercentilePoint::new(pop, rho, u1)?;
    let p2 = PercentilePoint::new(pop, rho, u2)?;
    Ok(cross_cov_from_points(&p1, &p2, rho, v1, v2, shape))
}

/// Cross-covariance display evaluated from precomputed percentile points.
pub fn cross_cov_from_points(
    p1: &PercentilePoint,
    p2: &PercentilePoint,
    rho: Prevalence,
    v1: SequentialView,
    v2: SequentialView,
    shape: StudyShape,
) -> f64 {
    let (case_w, control_w) = view_weights(v1, v2, shape);
    let (case, control) = cross_cov_coefficients(p1, p2, rho);
    case * case_w + control * control_w
}

/// The two arms' coefficients in `Cov[PPV̂(u₁), NPV̂(u₂)]`: the covariance is
/// `case·(r_{D,1}∧r_{D,2})/(n_D r_{D,1} r_{D,2})` plus the control analogue.
pub fn cross_cov_coefficients(p1: &PercentilePoint, p2: &PercentilePoint, rho: Prevalence) -> (f64, f64) {
    let r = rho.value();
    let (u1, u2) = (p1.u, p2.u);
    let bb = p1.control_ratio * p2.control_ratio;
    let aa = p1.case_ratio * p2.case_ratio;
    if u1 <= u2 {
        let k = u1 * (1.0 - u2) / ((1.0 - u1) * u2);
        (
            k * (1.0 - r).powi(2) * bb * (1.0 - p1.npv) * p2.ppv,
            k * r * r * aa * p1.npv * (1.0 - p2.ppv),
        )
    } else {
        (
            (1.0 - r).powi(2) * bb * (1.0 - p2.npv) * p1.ppv,
            r * r * aa * p2.npv * (1.0 - p1.ppv),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rho(r: f64) -> Prevalence {
        Prevalence::new(r).unwrap()
    }

    fn table1_probes() -> Vec<CovProbe> {
        vec![
            CovProbe::roc(0.4, 0.4, 0.7).unwrap(),
            CovProbe::roc(0.4, 1.0, 1.0).unwrap(),
            CovProbe::roc(0.2, 0.4, 0.7).unwrap(),
            CovProbe::roc(0.2, 1.0, 1.0).unwrap(),
        ]
    }

    #[test]
    fn kiefer_examples() {
        assert_eq!(kiefer_cov(0.5, 1.0, 0.5, 1.0), 0.25);
        assert_eq!(kiefer_cov(0.0, 0.7, 0.3, 0.2), 0.0);
        assert!((kiefer_cov(0.3, 0.4, 0.6, 0.9) - 0.048).abs() < 1e-15);
        assert_eq!(kiefer_cov(0.3, 0.4, 0.6, 0.9), kiefer_cov(0.6, 0.9, 0.3, 0.4));
    }

    #[test]
    fn table1_theoretical_block() {
        let m = roc_process_cov(&BinormalModel::unit(), &table1_probes(), 1.0).unwrap();
        let expect = [
            [0.104, 0.129, 0.081, 0.104],
            [0.129, 0.322, 0.104, 0.26],
            [0.081, 0.104, 0.171, 0.225],
            [0.104, 0.26, 0.225, 0.563],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!((m.get(i, j) - expect[i][j]).abs() <= 1e-3, "({i},{j}) = {}", m.get(i, j));
            }
        }
    }

    #[test]
    fn estimator_scale_matches_direct_display() {
        let model = BinormalModel::new(0.8, 1.4).unwrap();
        let shape = StudyShape::new(200, 250).unwrap();
        let probes = vec![
            CovProbe::roc(0.3, 0.5, 0.4).unwrap(),
            CovProbe::roc(0.6, 1.0, 0.8).unwrap(),
            CovProbe::roc(0.3, 1.0, 1.0).unwrap(),
        ];
        let m = roc_estimator_cov(&model, &probes, shape).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d = roc_point_covariance(
                    &model,
                    (probes[i].index, probes[i].view),
                    (probes[j].index, probes[j].view),
                    shape,
                )
                .unwrap();
                assert!((m.get(i, j) - d).abs() < 1e-15, "({i},{j})");
            }
        }
        // unit binormal, n = 200 per arm: 0.322 / 200
        let one = roc_estimator_cov(&BinormalModel::unit(), &[CovProbe::roc(0.4, 1.0, 1.0).unwrap()],
                                    StudyShape::new(200, 200).unwrap()).unwrap();
        assert!((one.get(0, 0) - 0.00161).abs() < 1e-5);
    }

    #[test]
    fn fixed_sample_reduction() {
        // r = 1: Brownian-bridge variance ROC(1−ROC)/n_D + q² t(1−t)/n_D̄
        let model = BinormalModel::unit();
        let shape = StudyShape::new(120, 80).unwrap();
        let t = 0.35;
        let x = model.control_survival_quantile(t).unwrap();
        let roc = 1.0 - model.case_cdf(x);
        let q = model.case_pdf(x) / model.control_pdf(x);
        let bridge = roc * (1.0 - roc) / 120.0 + q * q * t * (1.0 - t) / 80.0;
        let v = roc_estimator_cov(&model, &[CovProbe::roc(t, 1.0, 1.0).unwrap()], shape).unwrap();
        assert!((v.get(0, 0) - bridge).abs() < 1e-15);
        let p = ppv_fpf_cov(&model, rho(0.2), &[CovProbe::new(Endpoint::PpvFpf, t, 1.0, 1.0).unwrap()], shape)
            .unwrap();
        let d = ppv_fpf_delta(roc, t, rho(0.2));
        assert!((p.get(0, 0) - d * d * bridge).abs() < 1e-15);
    }

    #[test]
    fn ppv_fpf_delta_hand_algebra() {
        // ROC(t) = t: δ = t(1−ρ)ρ / t² = (1−ρ)ρ/t
        let d = ppv_fpf_delta(0.5, 0.5, rho(0.2));
        assert!((d - 0.16 / 0.5).abs() < 1e-15);
    }

    #[test]
    fn percentile_dual_forms_agree() {
        let model = BinormalModel::new(1.6, 1.3).unwrap();
        let shape = StudyShape::new(300, 450).unwrap();
        let view = SequentialView::new(0.6, 0.8).unwrap();
        for &u in &[0.2, 0.5, 0.6, 0.9] {
            let engine = estimator_cov(&model, rho(0.2), &[CovProbe::new(Endpoint::PpvPct, u, 0.6, 0.8).unwrap(),
                                                          CovProbe::new(Endpoint::NpvPct, u, 0.6, 0.8).unwrap()], shape)
                .unwrap();
            let pv = ppv_pct_var(&model, rho(0.2), u, view, shape).unwrap();
            let nv = npv_pct_var(&model, rho(0.2), u, view, shape).unwrap();
            // engine uses floors: 300·0.6 = 180 exactly
            assert!((engine.get(0, 0) - pv).abs() < 1e-10 * pv.max(1e-12) + 1e-15, "u={u}");
            assert!((engine.get(1, 1) - nv).abs() < 1e-10 * nv + 1e-15, "u={u}");
            // linear map N = ((1−u)/u) P
            let c = ppv_npv_cross_cov(&model, rho(0.2), (u, view), (u, view), shape).unwrap();
            assert!((c - (1.0 - u) / u * pv).abs() < 1e-12 * pv);
            assert!((engine.get(0, 1) - c).abs() < 1e-10 * c.abs() + 1e-16);
        }
    }

    #[test]
    fn multi_point_displays_match_engine() {
        let model = BinormalModel::new(1.2, 0.9).unwrap();
        let shape = StudyShape::new(400, 200).unwrap();
        let probes = [
            CovProbe::new(Endpoint::PpvPct, 0.3, 0.5, 0.25).unwrap(),
            CovProbe::new(Endpoint::PpvPct, 0.7, 1.0, 0.75).unwrap(),
            CovProbe::new(Endpoint::PpvPct, 0.9, 0.75, 1.0).unwrap(),
        ];
        let display = ppv_pct_cov(&model, rho(0.3), &probes, shape).unwrap();
        let engine = estimator_cov(&model, rho(0.3), &probes, shape).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let (a, b) = (display.get(i, j), engine.get(i, j));
                assert!((a - b).abs() < 1e-10 * a.abs().max(1e-6), "({i},{j}) {a} vs {b}");
            }
        }
        for pi in &probes {
            for pj in &probes {
                let npv_probe = CovProbe { endpoint: Endpoint::NpvPct, ..*pj };
                let e = estimator_cov(&model, rho(0.3), &[*pi, npv_probe], shape).unwrap();
                let d = ppv_npv_cross_cov(&model, rho(0.3), (pi.index, pi.view), (pj.index, pj.view), shape)
                    .unwrap();
                assert!((e.get(0, 1) - d).abs() < 1e-10 * d.abs().max(1e-6));
            }
        }
    }

    #[test]
    fn branch_symmetry() {
        let model = BinormalModel::new(1.0, 1.5).unwrap();
        let shape = StudyShape::new(100, 100).unwrap();
        let a = (0.4, SequentialView::new(0.5, 0.6).unwrap());
        let b = (0.8, SequentialView::new(1.0, 0.9).unwrap());
        let ab = ppv_pct_pair_cov(&model, rho(0.2), a, b, shape).unwrap();
        let ba = ppv_pct_pair_cov(&model, rho(0.2), b, a, shape).unwrap();
        assert!((ab - ba).abs() < 1e-15 * ab.abs().max(1.0));
        let same = ppv_pct_pair_cov(&model, rho(0.2), a, a, shape).unwrap();
        let var = ppv_pct_var(&model, rho(0.2), a.0, a.1, shape).unwrap();
        assert!((same - var).abs() < 1e-12 * var);
    }

    #[test]
    fn window_and_endpoint_checks() {
        let m = BinormalModel::unit();
        assert!(roc_process_cov(&m, &[CovProbe::roc(0.99, 1.0, 1.0).unwrap()], 1.0).is_err());
        assert!(roc_process_cov(&m, &[CovProbe::roc(0.5, 0.05, 1.0).unwrap()], 1.0).is_err());
        assert!(roc_process_cov(&m, &[CovProbe::new(Endpoint::PpvPct, 0.5, 1.0, 1.0).unwrap()], 1.0).is_err());
    }

    fn arb_probe(endpoint: Endpoint) -> impl Strategy<Value = CovProbe> {
        (0.06f64..0.94, 0.1f64..=1.0, 0.05f64..=1.0)
            .prop_map(move |(i, a, b)| CovProbe::new(endpoint, i, a, b).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn independent_increments(probe in prop_oneof![
                arb_probe(Endpoint::Roc), arb_probe(Endpoint::PpvFpf), arb_probe(Endpoint::NpvFpf),
                arb_probe(Endpoint::PpvPct), arb_probe(Endpoint::NpvPct)],
            grow_c in 0.0f64..1.0, grow_b in 0.0f64..1.0,
            mu in 0.3f64..2.5, sigma in 0.6f64..2.0) {
            let model = BinormalModel::new(mu, sigma).unwrap();
            let shape = StudyShape::new(500, 400).unwrap();
            let later = CovProbe {
                view: SequentialView::new(
                    probe.view.r_case + grow_c * (1.0 - probe.view.r_case),
                    probe.view.r_control + grow_b * (1.0 - probe.view.r_control)).unwrap(),
                ..probe
            };
            // exact n·r so the floors vanish from the comparison
            let snap = |p: CovProbe| CovProbe { view: SequentialView::new(
                (p.view.r_case * 500.0).ceil() / 500.0, p.view.r_control).unwrap(), ..p };
            let (early, later) = (snap(probe), snap(later));
            let m = estimator_cov(&model, rho(0.2), &[early, later], shape).unwrap();
            let var_later = m.get(1, 1);
            prop_assert!((m.get(0, 1) - var_later).abs() <= 1e-12 * var_later.abs().max(1e-300));
        }

        #[test]
        fn matrices_symmetric_psd(probes in prop::collection::vec(arb_probe(Endpoint::PpvPct), 1..6),
                                  mu in 0.3f64..2.5) {
            let model = BinormalModel::new(mu, 1.2).unwrap();
            let m = process_cov(&model, rho(0.25), &probes, 0.7).unwrap();
            prop_assert!((&m.matrix - m.matrix.transpose()).amax() <= 1e-12);
            prop_assert!(m.min_eigenvalue() >= -1e-9);
        }
    }
}
