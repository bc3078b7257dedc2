//! Finite-sample validation of the limit theory: simulate binormal
//! case-control studies, form the scaled processes at a set of probes and
//! compare their mean, normal-percentile coverage and covariance with the
//! closed forms.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{process_cov, CovMatrix, CovProbe, Endpoint, StudyShape};
use crate::curves::{self, BinormalModel, IndexKind};
use crate::empirical_process::{prefix_len, MarkerSample, Prevalence, PrefixPair, SortedPrefix};
use crate::error::{domain, Result};
use crate::gaussian_limits::draw_rng;
use crate::normal;
use crate::stats::{summarize, DrawSummary};

/// Normal percentiles at which coverage is reported.
pub const COVERAGE_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Independent normal draws per arm; arrival order is draw order, controls
/// first.
pub fn simulate_sample<R: Rng + ?Sized>(
    model: &BinormalModel,
    n_case: usize,
    n_control: usize,
    rng: &mut R,
) -> Result<MarkerSample> {
    if n_case == 0 || n_control == 0 {
        return domain("sample sizes must be positive");
    }
    let controls: Vec<f64> = (0..n_control).map(|_| StandardNormal.sample(rng)).collect();
    let case_dist = Normal::new(model.mu_case, model.sigma_case)
        .map_err(|e| crate::error::Error::Domain(e.to_string()))?;
    let cases: Vec<f64> = (0..n_case).map(|_| case_dist.sample(rng)).collect();
    MarkerSample::new(cases, controls)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub model: BinormalModel,
    pub rho: Prevalence,
    pub n_case: usize,
    pub n_control: usize,
    pub probes: Vec<CovProbe>,
    pub replications: usize,
    pub seed: u64,
}

impl SimScenario {
    /// Unit binormal model with four ROC probes at t ∈ {0.4, 0.2} and views
    /// (0.4, 0.7) and (1, 1), with the given per-arm size.
    pub fn table1(n: usize, replications: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            model: BinormalModel::unit(),
            rho: Prevalence::new(0.2)?,
            n_case: n,
            n_control: n,
            probes: vec![
                CovProbe::roc(0.4, 0.4, 0.7)?,
                CovProbe::roc(0.4, 1.0, 1.0)?,
                CovProbe::roc(0.2, 0.4, 0.7)?,
                CovProbe::roc(0.2, 1.0, 1.0)?,
            ],
            replications,
            seed,
        })
    }

    pub fn shape(&self) -> Result<StudyShape> {
        StudyShape::new(self.n_case, self.n_control)
    }

    fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return domain("at least two replications are required");
        }
        if self.probes.is_empty() {
            return domain("no probes given");
        }
        self.shape()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub scenario: SimScenario,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    /// `coverage[i][k]`: fraction of replicates strictly below the
    /// `COVERAGE_LEVELS[k]` percentile of `N(0, theoretical variance)`.
    pub coverage: Vec<[f64; 5]>,
    pub observed: DMatrix<f64>,
    pub observed_se: DMatrix<f64>,
    pub theoretical: CovMatrix,
    /// Largest `|NPV̂ − ((u − ρ)/u + ((1 − u)/u) PPV̂)|` seen over replicates
    /// and percentile probes.
    pub max_identity_gap: f64,
}

fn true_value(model: &BinormalModel, rho: Prevalence, p: &CovProbe) -> Result<f64> {
    let t = p.index;
    match p.endpoint {
        Endpoint::Roc => curves::roc(model, t),
        Endpoint::PpvFpf => curves::ppv_fpf(curves::roc(model, t)?, t, rho),
        Endpoint::NpvFpf => curves::npv_fpf(curves::roc(model, t)?, t, rho),
        Endpoint::PpvPct => curves::ppv_pct_true(model, rho, t),
        Endpoint::NpvPct => curves::npv_pct_true(model, rho, t),
    }
}

/// Estimates at every probe for one sample, plus the largest gap in the
/// percentile PPV/NPV identity.
fn estimates(sample: &MarkerSample, rho: Prevalence, probes: &[CovProbe]) -> Result<(Vec<f64>, f64)> {
    let mut gap: f64 = 0.0;
    let values = probes
        .iter()
        .map(|p| {
            let t = p.index;
            match p.endpoint {
                Endpoint::Roc | Endpoint::PpvFpf | Endpoint::NpvFpf => {
                    let cases = SortedPrefix::new(sample.cases(), p.view.r_case)?;
                    let controls = SortedPrefix::new(sample.controls(), p.view.r_control)?;
                    let roc = curves::roc_from_prefixes(&cases, &controls, t)?;
                    match p.endpoint {
                        Endpoint::Roc => Ok(roc),
                        Endpoint::PpvFpf => curves::ppv_fpf(roc, t, rho),
                        _ => curves::npv_fpf(roc, t, rho),
                    }
                }
                Endpoint::PpvPct | Endpoint::NpvPct => {
                    let pair = PrefixPair::new(sample, p.view, rho)?;
                    let ppv = curves::ppv_pct_from_prefixes(&pair, t)?;
                    let npv = curves::npv_from_ppv(ppv, t, rho);
                    let direct = (t - rho.value()) / t + ((1.0 - t) / t) * ppv;
                    gap = gap.max((npv - direct).abs());
                    Ok(if p.endpoint == Endpoint::PpvPct { ppv } else { npv })
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((values, gap))
}

/// Runs a validation scenario for any mix of probe endpoints.
pub fn run_validation(scenario: &SimScenario) -> Result<SimReport> {
    scenario.validate()?;
    let model = &scenario.model;
    let rho = scenario.rho;
    let shape = scenario.shape()?;
    let probes = &scenario.probes;
    let theoretical = process_cov(model, rho, probes, shape.lambda())?;
    let truth = probes.iter().map(|p| true_value(model, rho, p)).collect::<Result<Vec<_>>>()?;
    let scale = probes
        .iter()
        .map(|p| Ok(prefix_len(scenario.n_case, p.view.r_case)? as f64 / (scenario.n_case as f64).sqrt()))
        .collect::<Result<Vec<_>>>()?;
    let reps: Vec<(Vec<f64>, f64)> = (0..scenario.replications as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = draw_rng(scenario.seed, k);
            let sample = simulate_sample(model, scenario.n_case, scenario.n_control, &mut rng)?;
            let (est, gap) = estimates(&sample, rho, probes)?;
            let scaled = est.iter().zip(&truth).zip(&scale).map(|((e, t), s)| s * (e - t)).collect();
            Ok((scaled, gap))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_identity_gap = reps.iter().map(|r| r.1).fold(0.0, f64::max);
    let rows: Vec<Vec<f64>> = reps.into_iter().map(|r| r.0).collect();
    let summary = summarize(&rows);
    let coverage = coverage(&rows, &theoretical);
    let DrawSummary { mean, mean_se, cov, cov_se, .. } = summary;
    Ok(SimReport {
        scenario: scenario.clone(),
        mean,
        mean_se,
        coverage,
        observed: cov,
        observed_se: cov_se,
        theoretical,
        max_identity_gap,
    })
}

fn coverage(rows: &[Vec<f64>], theoretical: &CovMatrix) -> Vec<[f64; 5]> {
    let n = rows.len() as f64;
    (0..theoretical.dim())
        .map(|i| {
            let sd = theoretical.get(i, i).sqrt();
            let mut out = [0.0; 5];
            for (k, &level) in COVERAGE_LEVELS.iter().enumerate() {
                let cut = sd * normal::quantile(level);
                out[k] = rows.iter().filter(|r| r[i] < cut).count() as f64 / n;
            }
            out
        })
        .collect()
}

/// The ROC study: every probe must be a ROC probe.
pub fn run_table1(scenario: &SimScenario) -> Result<SimReport> {
    if let Some(p) = scenario.probes.iter().find(|p| p.endpoint != Endpoint::Roc) {
        return domain(format!("ROC study given a {:?} probe", p.endpoint));
    }
    run_validation(scenario)
}

/// PPV validation indexed by FPF or by percentile. Probes are re-tagged with
/// the matching PPV endpoint.
pub fn run_ppv_validation(scenario: &SimScenario, index_kind: IndexKind) -> Result<SimReport> {
    let endpoint = match index_kind {
        IndexKind::Fpf => Endpoint::PpvFpf,
        IndexKind::Percentile => Endpoint::PpvPct,
        IndexKind::Tpf => return domain("PPV indexed by TPF is not supported"),
    };
    let mut s = scenario.clone();
    for p in &mut s.probes {
        p.endpoint = endpoint;
    }
    run_validation(&s)
}

/// Frobenius distance between observed and theoretical matrices.
pub fn frobenius_gap(report: &SimReport) -> f64 {
    (&report.observed - &report.theoretical.matrix).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_is_deterministic_and_rejects_empty_arms() {
        let m = BinormalModel::unit();
        let a = simulate_sample(&m, 5, 4, &mut draw_rng(1, 2)).unwrap();
        let b = simulate_sample(&m, 5, 4, &mut draw_rng(1, 2)).unwrap();
        assert_eq!(a, b);
        assert!(simulate_sample(&m, 0, 4, &mut draw_rng(1, 2)).is_err());
    }

    #[test]
    fn sample_means_follow_clt() {
        let m = BinormalModel::new(1.0, 1.0).unwrap();
        let n = 100;
        for k in 0..1000 {
            let s = simulate_sample(&m, n, n, &mut draw_rng(17, k)).unwrap();
            let mc = crate::stats::mean(s.cases());
            let mb = crate::stats::mean(s.controls());
            assert!((mc - 1.0).abs() < 4.0 / (n as f64).sqrt());
            assert!(mb.abs() < 4.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn ppv_validation_agrees_with_closed_forms() {
        let mut sc = SimScenario::table1(1000, 4000, 3).unwrap();
        sc.probes = vec![
            CovProbe::roc(0.6, 0.5, 0.5).unwrap(),
            CovProbe::roc(0.6, 1.0, 1.0).unwrap(),
            CovProbe::roc(0.9, 1.0, 1.0).unwrap(),
        ];
        for kind in [IndexKind::Fpf, IndexKind::Percentile] {
            let r = run_ppv_validation(&sc, kind).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let (o, se, t) = (r.observed[(i, j)], r.observed_se[(i, j)], r.theoretical.get(i, j));
                    assert!((o - t).abs() <= 3.0 * se, "{kind:?} ({i},{j}): {o} vs {t} ± {se}");
                }
            }
            assert!((r.coverage[1][2] - 0.5).abs() <= 0.03, "{kind:?} {:?}", r.coverage[1]);
        }
    }

    #[test]
    fn percentile_identity_holds_pathwise() {
        let mut sc = SimScenario::table1(60, 300, 5).unwrap();
        sc.probes = vec![
            CovProbe::new(Endpoint::PpvPct, 0.6, 0.5, 1.0).unwrap(),
            CovProbe::new(Endpoint::NpvPct, 0.9, 1.0, 1.0).unwrap(),
        ];
        let r = run_validation(&sc).unwrap();
        assert!(r.max_identity_gap <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn table1_rejects_other_endpoints() {
        let mut sc = SimScenario::table1(50, 10, 1).unwrap();
        sc.probes[0].endpoint = Endpoint::PpvPct;
        assert!(run_table1(&sc).is_err());
    }

    #[test]
    fn observed_covariance_approaches_theory() {
        // seed-averaged observed matrix, so Monte Carlo noise does not swamp
        // the shrinking finite-sample bias
        let mut gaps = Vec::new();
        for n in [50, 100, 200] {
            let reports: Vec<SimReport> =
                (0..5).map(|seed| run_table1(&SimScenario::table1(n, 20_000, 100 + seed).unwrap()).unwrap()).collect();
            let avg = reports.iter().fold(DMatrix::zeros(4, 4), |acc, r| acc + &r.observed) / 5.0;
            gaps.push((avg - &reports[0].theoretical.matrix).norm());
        }
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    #[test]
    fn report_independent_of_thread_count() {
        let sc = SimScenario::table1(50, 400, 9).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| run_table1(&sc).unwrap())
        };
        assert_eq!(run(1), run(3));
    }
}
