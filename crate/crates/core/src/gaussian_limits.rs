//! Simulation of Kiefer processes and of the Gaussian limits of the
//! sequential ROC and PPV/NPV-by-percentile processes on finite grids.
//!
//! Draw `k` of a run seeded with `s` always uses ChaCha8 stream `k` of seed
//! `s`, so results do not depend on how draws are spread over threads.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{influence, kiefer_cov, CovProbe, Endpoint, Loading};
use crate::curves::Population;
use crate::empirical_process::{Prevalence, SequentialView};
use crate::error::{domain, numeric, Result};

/// Diagonal jitter tried once when a Cholesky factorisation fails.
pub const CHOLESKY_JITTER: f64 = 1e-10;

const MAX_CHOLESKY_POINTS: usize = 10_000;

/// RNG for draw `draw` of a run seeded with `seed`.
pub fn draw_rng(seed: u64, draw: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    #[default]
    Cholesky,
    BrownianSheet,
}

impl std::str::FromStr for Construction {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cholesky" => Ok(Construction::Cholesky),
            "brownian_sheet" | "brownian-sheet" => Ok(Construction::BrownianSheet),
            other => Err(crate::error::Error::Config(format!("unknown construction `{other}`"))),
        }
    }
}

/// Index points crossed with accrual times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub index_grid: Vec<f64>,
    pub time_grid: Vec<f64>,
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

impl GridSpec {
    pub fn new(index_grid: Vec<f64>, time_grid: Vec<f64>) -> Result<Self> {
        if index_grid.is_empty() || time_grid.is_empty() {
            return domain("grids must be nonempty");
        }
        if !strictly_increasing(&index_grid) || !strictly_increasing(&time_grid) {
            return domain("grids must be strictly increasing");
        }
        if index_grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return domain("index grid must lie in (0, 1)");
        }
        if time_grid.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return domain("time grid must lie in (0, 1]");
        }
        Ok(Self { index_grid, time_grid })
    }

    pub fn len(&self) -> usize {
        self.index_grid.len() * self.time_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One draw of a field on `index_grid × columns`, stored index-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitProcessSample {
    pub index_grid: Vec<f64>,
    /// Column labels: accrual times for a Kiefer field, `(r_D, r_D̄)` views
    /// for the limit processes.
    pub views: Vec<SequentialView>,
    pub values: Vec<f64>,
    pub seed: u64,
    pub draw: u64,
    pub construction: Construction,
    /// Jitter added to the covariance diagonal, if the factorisation needed it.
    pub jitter: Option<f64>,
}

impl LimitProcessSample {
    pub fn at(&self, index: usize, column: usize) -> f64 {
        self.values[index * self.views.len() + column]
    }
}

/// Samples a Kiefer process jointly at an arbitrary list of `(t, r)` points.
#[derive(Debug, Clone)]
pub struct KieferSampler {
    points: Vec<(f64, f64)>,
    construction: Construction,
    factor: Option<DMatrix<f64>>,
    jitter: Option<f64>,
    sheet_t: Vec<f64>,
    sheet_r: Vec<f64>,
    sheet_pos: Vec<(usize, usize)>,
}

fn sorted_unique(xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = xs.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn position(xs: &[f64], x: f64) -> usize {
    xs.binary_search_by(|p| p.total_cmp(&x)).expect("value present in grid")
}

impl KieferSampler {
    pub fn new(points: Vec<(f64, f64)>, construction: Construction) -> Result<Self> {
        for &(t, r) in &points {
            if !((0.0..=1.0).contains(&t) && r >= 0.0 && r.is_finite()) {
                return domain(format!("Kiefer point ({t}, {r}) outside [0,1]×[0,∞)"));
            }
        }
        let mut s = Self {
            points,
            construction,
            factor: None,
            jitter: None,
            sheet_t: Vec::new(),
            sheet_r: Vec::new(),
            sheet_pos: Vec::new(),
        };
        match construction {
            Construction::Cholesky => s.factorize()?,
            Construction::BrownianSheet => {
                s.sheet_t = sorted_unique(s.points.iter().map(|p| p.0).chain([1.0]));
                s.sheet_r = sorted_unique(s.points.iter().map(|p| p.1).filter(|&r| r > 0.0));
                s.sheet_pos = s
                    .points
                    .iter()
                    .map(|&(t, r)| {
                        let ri = if r > 0.0 { position(&s.sheet_r, r) + 1 } else { 0 };
                        (position(&s.sheet_t, t), ri)
                    })
                    .collect();
            }
        }
        Ok(s)
    }

    fn factorize(&mut self) -> Result<()> {
        let n = self.points.len();
        if n > MAX_CHOLESKY_POINTS {
            return domain(format!("{n} points exceed the Cholesky limit of {MAX_CHOLESKY_POINTS}"));
        }
        let cov = DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = (self.points[i], self.points[j]);
            kiefer_cov(a.0, a.1, b.0, b.1)
        });
        if let Some(c) = Cholesky::new(cov.clone()) {
            self.factor = Some(c.l());
            return Ok(());
        }
        let jittered = cov + DMatrix::identity(n, n) * CHOLESKY_JITTER;
        match Cholesky::new(jittered) {
            Some(c) => {
                self.factor = Some(c.l());
                self.jitter = Some(CHOLESKY_JITTER);
                Ok(())
            }
            None => numeric(format!(
                "Kiefer covariance is not positive definite even with jitter {CHOLESKY_JITTER}; \
                 remove duplicate or boundary points or add more jitter"
            )),
        }
    }

    pub fn jitter(&self) -> Option<f64> {
        self.jitter
    }

    pub fn construction(&self) -> Construction {
        self.construction
    }

    /// One joint draw at the sampler's points.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self.construction {
            Construction::Cholesky => {
                let l = self.factor.as_ref().expect("factor computed at construction");
                let z = DVector::from_fn(l.nrows(), |_, _| StandardNormal.sample(rng));
                (l * z).iter().copied().collect()
            }
            Construction::BrownianSheet => {
                let sheet = brownian_sheet_kiefer(&self.sheet_t, &self.sheet_r, rng);
                let cols = self.sheet_r.len() + 1;
                self.sheet_pos.iter().map(|&(ti, ri)| sheet[ti * cols + ri]).collect()
            }
        }
    }
}

/// Kiefer field `K(t, r) = W(t, r) − t·W(1, r)` from a Brownian sheet built out
/// of independent rectangle increments.
///
/// `t_nodes` must be increasing in `[0, 1]` and end at 1; `r_nodes` increasing
/// and positive. The output is index-major with an extra leading column for
/// `r = 0`, where the field vanishes.
pub fn brownian_sheet_kiefer(t_nodes: &[f64], r_nodes: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    debug_assert_eq!(t_nodes.last(), Some(&1.0));
    let nt = t_nodes.len();
    let cols = r_nodes.len() + 1;
    let mut w = vec![0.0; nt * cols];
    for (i, &t) in t_nodes.iter().enumerate() {
        let dt = t - if i == 0 { 0.0 } else { t_nodes[i - 1] };
        for (j, &r) in r_nodes.iter().enumerate() {
            let dr = r - if j == 0 { 0.0 } else { r_nodes[j - 1] };
            let z: f64 = StandardNormal.sample(rng);
            let inc = z * (dt * dr).sqrt();
            let below = if i == 0 { 0.0 } else { w[(i - 1) * cols + j + 1] };
            let left = w[i * cols + j];
            let diag = if i == 0 { 0.0 } else { w[(i - 1) * cols + j] };
            w[i * cols + j + 1] = inc + below + left - diag;
        }
    }
    let last = (nt - 1) * cols;
    let mut k = vec![0.0; nt * cols];
    for (i, &t) in t_nodes.iter().enumerate() {
        for j in 0..cols {
            k[i * cols + j] = if i == nt - 1 { 0.0 } else { w[i * cols + j] - t * w[last + j] };
        }
    }
    k
}

/// Draws a Kiefer field on `grid`.
pub fn sample_kiefer(grid: &GridSpec, construction: Construction, seed: u64, draw: u64) -> Result<LimitProcessSample> {
    let points: Vec<(f64, f64)> = grid
        .index_grid
        .iter()
        .flat_map(|&t| grid.time_grid.iter().map(move |&r| (t, r)))
        .collect();
    let sampler = KieferSampler::new(points, construction)?;
    let values = sampler.draw(&mut draw_rng(seed, draw));
    Ok(LimitProcessSample {
        index_grid: grid.index_grid.clone(),
        views: grid.time_grid.iter().map(|&r| SequentialView { r_case: r, r_control: r }).collect(),
        values,
        seed,
        draw,
        construction,
        jitter: sampler.jitter(),
    })
}

/// Joint sampler of the limit processes at a list of probes.
///
/// Each probe value is `a·K₁(p, r_D) + √λ (r_D/r_D̄) b·K₂(q, r_D̄)` with the
/// loadings `(p, a, q, b)` of [`influence`]; probes share the two Kiefer
/// fields, so for example NPV-by-percentile draws are exactly
/// `((1 − u)/u)` times the PPV draws at the same `u`.
#[derive(Debug, Clone)]
pub struct LimitSampler {
    probes: Vec<CovProbe>,
    loads: Vec<Loading>,
    lambda: f64,
    case_field: KieferSampler,
    control_field: KieferSampler,
    case_slot: Vec<usize>,
    control_slot: Vec<usize>,
}

fn dedup_points(points: &[(f64, f64)]) -> (Vec<(f64, f64)>, Vec<usize>) {
    let mut seen: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    let mut unique = Vec::new();
    let slots = points
        .iter()
        .map(|&(t, r)| {
            *seen.entry((t.to_bits(), r.to_bits())).or_insert_with(|| {
                unique.push((t, r));
                unique.len() - 1
            })
        })
        .collect();
    (unique, slots)
}

impl LimitSampler {
    pub fn new<P: Population + ?Sized>(
        pop: &P,
        rho: Prevalence,
        probes: &[CovProbe],
        lambda: f64,
        construction: Construction,
    ) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return domain(format!("case:control ratio {lambda} must be non-negative"));
        }
        let loads = probes
            .iter()
            .map(|p| influence(pop, rho, p.endpoint, p.index))
            .collect::<Result<Vec<_>>>()?;
        let case_pts: Vec<_> = loads.iter().zip(probes).map(|(l, p)| (l.case_pos, p.view.r_case)).collect();
        let control_pts: Vec<_> =
            loads.iter().zip(probes).map(|(l, p)| (l.control_pos, p.view.r_control)).collect();
        let (case_unique, case_slot) = dedup_points(&case_pts);
        let (control_unique, control_slot) = dedup_points(&control_pts);
        Ok(Self {
            probes: probes.to_vec(),
            loads,
            lambda,
            case_field: KieferSampler::new(case_unique, construction)?,
            control_field: KieferSampler::new(control_unique, construction)?,
            case_slot,
            control_slot,
        })
    }

    pub fn probes(&self) -> &[CovProbe] {
        &self.probes
    }

    pub fn jitter(&self) -> Option<f64> {
        self.case_field.jitter().or(self.control_field.jitter())
    }

    /// Draw number `draw` of the run seeded with `seed`.
    pub fn draw(&self, seed: u64, draw: u64) -> Vec<f64> {
        let mut rng = draw_rng(seed, draw);
        let k1 = self.case_field.draw(&mut rng);
        let k2 = self.control_field.draw(&mut rng);
        let root = self.lambda.sqrt();
        self.probes
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let l = &self.loads[i];
                let w = root * p.view.r_case / p.view.r_control;
                l.case_coef * k1[self.case_slot[i]] + w * l.control_coef * k2[self.control_slot[i]]
            })
            .collect()
    }

    /// `draws` draws, computed in parallel and returned in draw order.
    pub fn draw_many(&self, seed: u64, draws: usize) -> Vec<Vec<f64>> {
        (0..draws as u64).into_par_iter().map(|k| self.draw(seed, k)).collect()
    }
}

fn probes_on_grid(endpoint: Endpoint, index_grid: &[f64], views: &[SequentialView]) -> Vec<CovProbe> {
    index_grid
        .iter()
        .flat_map(|&index| views.iter().map(move |&view| CovProbe { endpoint, index, view }))
        .collect()
}

fn check_views(views: &[SequentialView]) -> Result<()> {
    if views.is_empty() {
        return domain("at least one view is required");
    }
    Ok(())
}

fn sample_endpoint<P: Population + ?Sized>(
    pop: &P,
    rho: Prevalence,
    endpoint: Endpoint,
    index_grid: &[f64],
    views: &[SequentialView],
    lambda: f64,
    construction: Construction,
    seed: u64,
    draw: u64,
) -> Result<LimitProcessSample> {
    check_views(views)?;
    GridSpec::new(index_grid.to_vec(), vec![1.0])?;
    let probes = probes_on_grid(endpoint, index_grid, views);
    let sampler = LimitSampler::new(pop, rho, &probes, lambda, construction)?;
    Ok(LimitProcessSample {
        index_grid: index_grid.to_vec(),
        views: views.to_vec(),
        values: sampler.draw(seed, draw),
        seed,
        draw,
        construction,
        jitter: sampler.jitter(),
    })
}

/// One draw of the ROC limit process on `index_grid × views`.
#[allow(clippy::too_many_arguments)]
pub fn sample_limit_roc<P: Population + ?Sized>(
    pop: &P,
    index_grid: &[f64],
    views: &[SequentialView],
    lambda: f64,
    construction: Construction,
    seed: u64,
    draw: u64,
) -> Result<LimitProcessSample> {
    let rho = Prevalence::new(0.5)?;
    sample_endpoint(pop, rho, Endpoint::Roc, index_grid, views, lambda, construction, seed, draw)
}

/// One draw of the PPV-by-percentile limit process on `index_grid × views`.
#[allow(clippy::too_many_arguments)]
pub fn sample_limit_ppv_pct<P: Population + ?Sized>(
    pop: &P,
    rho: Prevalence,
    index_grid: &[f64],
    views: &[SequentialView],
    lambda: f64,
    construction: Construction,
    seed: u64,
    draw: u64,
) -> Result<LimitProcessSample> {
    sample_endpoint(pop, rho, Endpoint::PpvPct, index_grid, views, lambda, construction, seed, draw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::process_cov;
    use crate::curves::BinormalModel;
    use crate::stats::summarize;

    fn within(obs: f64, se: f64, expect: f64) -> bool {
        (obs - expect).abs() <= 3.0 * se
    }

    #[test]
    fn sheet_is_pinned() {
        let mut rng = draw_rng(3, 0);
        let t = [0.0, 0.25, 0.5, 1.0];
        let r = [0.3, 1.0];
        let k = brownian_sheet_kiefer(&t, &r, &mut rng);
        for j in 0..3 {
            assert_eq!(k[j], 0.0);
            assert_eq!(k[3 * 3 + j], 0.0);
        }
        for i in 0..4 {
            assert_eq!(k[i * 3], 0.0);
        }
    }

    #[test]
    fn bridge_variance_at_half() {
        for construction in [Construction::Cholesky, Construction::BrownianSheet] {
            let s = KieferSampler::new(vec![(0.5, 1.0), (0.2, 0.4)], construction).unwrap();
            let rows: Vec<Vec<f64>> = (0..20_000).map(|k| s.draw(&mut draw_rng(11, k))).collect();
            let sum = summarize(&rows);
            assert!(within(sum.cov[(0, 0)], sum.cov_se[(0, 0)], 0.25), "{construction:?}");
            let c = kiefer_cov(0.5, 1.0, 0.2, 0.4);
            assert!(within(sum.cov[(0, 1)], sum.cov_se[(0, 1)], c), "{construction:?}");
            for i in 0..2 {
                assert!(within(sum.mean[i], sum.mean_se[i], 0.0));
            }
        }
    }

    #[test]
    fn constructions_agree() {
        let grid = GridSpec::new(vec![0.2, 0.5, 0.8], vec![0.3, 1.0]).unwrap();
        let pts: Vec<(f64, f64)> = grid
            .index_grid
            .iter()
            .flat_map(|&t| grid.time_grid.iter().map(move |&r| (t, r)))
            .collect();
        let a = KieferSampler::new(pts.clone(), Construction::Cholesky).unwrap();
        let b = KieferSampler::new(pts, Construction::BrownianSheet).unwrap();
        let sa = summarize(&(0..20_000).map(|k| a.draw(&mut draw_rng(5, k))).collect::<Vec<_>>());
        let sb = summarize(&(0..20_000).map(|k| b.draw(&mut draw_rng(6, k))).collect::<Vec<_>>());
        for i in 0..6 {
            for j in 0..6 {
                let se = (sa.cov_se[(i, j)].powi(2) + sb.cov_se[(i, j)].powi(2)).sqrt();
                assert!((sa.cov[(i, j)] - sb.cov[(i, j)]).abs() <= 3.5 * se, "({i},{j})");
            }
        }
    }

    #[test]
    fn reproducible_from_seed() {
        let grid = GridSpec::new(vec![0.3, 0.6], vec![0.5, 1.0]).unwrap();
        for c in [Construction::Cholesky, Construction::BrownianSheet] {
            let a = sample_kiefer(&grid, c, 42, 7).unwrap();
            let b = sample_kiefer(&grid, c, 42, 7).unwrap();
            assert_eq!(a, b);
            assert_ne!(a.values, sample_kiefer(&grid, c, 42, 8).unwrap().values);
        }
    }

    #[test]
    fn duplicate_points_need_jitter_and_report_it() {
        let s = KieferSampler::new(vec![(0.4, 1.0), (0.4, 1.0)], Construction::Cholesky).unwrap();
        assert_eq!(s.jitter(), Some(CHOLESKY_JITTER));
        let s = KieferSampler::new(vec![(0.4, 1.0), (0.6, 1.0)], Construction::Cholesky).unwrap();
        assert_eq!(s.jitter(), None);
    }

    #[test]
    fn zero_lambda_leaves_case_field_only() {
        let m = BinormalModel::unit();
        let views = [SequentialView::new(0.5, 0.7).unwrap()];
        let s = sample_limit_roc(&m, &[0.3], &views, 0.0, Construction::Cholesky, 1, 0).unwrap();
        let case_only = KieferSampler::new(vec![(m.case_cdf(m.control_survival_quantile(0.3).unwrap()), 0.5)],
                                           Construction::Cholesky)
            .unwrap();
        let k1 = case_only.draw(&mut draw_rng(1, 0));
        assert!((s.values[0] + k1[0]).abs() < 1e-15);
    }

    #[test]
    fn npv_draws_are_scaled_ppv_draws() {
        let m = BinormalModel::new(1.5, 1.2).unwrap();
        let rho = Prevalence::new(0.2).unwrap();
        let probes = [
            CovProbe::new(Endpoint::PpvPct, 0.7, 0.6, 0.5).unwrap(),
            CovProbe::new(Endpoint::NpvPct, 0.7, 0.6, 0.5).unwrap(),
        ];
        let s = LimitSampler::new(&m, rho, &probes, 1.0, Construction::Cholesky).unwrap();
        for k in 0..50 {
            let d = s.draw(9, k);
            assert!((d[1] - 0.3 / 0.7 * d[0]).abs() < 1e-12 * d[0].abs().max(1.0));
        }
    }

    #[test]
    fn ppv_limit_matches_closed_form() {
        let m = BinormalModel::new(1.5, 1.2).unwrap();
        let rho = Prevalence::new(0.2).unwrap();
        let probes = [
            CovProbe::new(Endpoint::PpvPct, 0.9, 1.0, 1.0).unwrap(),
            CovProbe::new(Endpoint::NpvPct, 0.6, 1.0, 1.0).unwrap(),
            CovProbe::new(Endpoint::PpvPct, 0.6, 0.5, 0.5).unwrap(),
        ];
        let s = LimitSampler::new(&m, rho, &probes, 1.0, Construction::Cholesky).unwrap();
        let sum = summarize(&s.draw_many(21, 20_000));
        let exact = process_cov(&m, rho, &probes, 1.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(within(sum.cov[(i, j)], sum.cov_se[(i, j)], exact.get(i, j)), "({i},{j})");
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_draws() {
        let m = BinormalModel::unit();
        let probes = [CovProbe::roc(0.4, 0.4, 0.7).unwrap(), CovProbe::roc(0.2, 1.0, 1.0).unwrap()];
        let s = LimitSampler::new(&m, Prevalence::new(0.2).unwrap(), &probes, 1.0, Construction::Cholesky).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| s.draw_many(4, 500));
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| s.draw_many(4, 500));
        assert_eq!(one, four);
    }
}
