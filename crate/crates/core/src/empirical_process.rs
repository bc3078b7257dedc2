//! Sequential empirical distribution, survival and quantile functions.
//!
//! A sequential estimator sees only the first `⌊r·n⌋` arrivals of an arm.
//! Cases and controls carry their own accrual fractions, and the population
//! (mixture) distribution weights the two arms by a known prevalence.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Slack used when snapping `r·n` and `t·k` onto integer grid points, so that
/// fractions such as `0.6·5` land on `3` rather than `3.0000000000000004`.
const GRID_SLACK: f64 = 1e-9;

/// Case and control marker values in arrival order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSample {
    cases: Vec<f64>,
    controls: Vec<f64>,
}

impl MarkerSample {
    pub fn new(cases: Vec<f64>, controls: Vec<f64>) -> Result<Self> {
        if cases.iter().chain(&controls).any(|v| !v.is_finite()) {
            return domain("marker values must be finite");
        }
        Ok(Self { cases, controls })
    }

    pub fn cases(&self) -> &[f64] {
        &self.cases
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    pub fn n_cases(&self) -> usize {
        self.cases.len()
    }

    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }

    /// Reads a `value,label` CSV with a header row. Labels are `case` or
    /// `control`; file order is arrival order.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Config(format!("line 1: unreadable header: {e}")))?
            .clone();
        let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
        let value_col = col("value")
            .ok_or_else(|| Error::Config("line 1: missing `value` column".into()))?;
        let label_col = col("label")
            .ok_or_else(|| Error::Config("line 1: missing `label` column".into()))?;

        let mut cases = Vec::new();
        let mut controls = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| Error::Config(format!("line {line}: {e}")))?;
            let raw = record
                .get(value_col)
                .ok_or_else(|| Error::Config(format!("line {line}: missing value field")))?;
            let value: f64 = raw
                .parse()
                .map_err(|_| Error::Config(format!("line {line}: invalid marker value `{raw}`")))?;
            if !value.is_finite() {
                return Err(Error::Config(format!("line {line}: marker value must be finite")));
            }
            match record.get(label_col).map(str::to_ascii_lowercase).as_deref() {
                Some("case") => cases.push(value),
                Some("control") => controls.push(value),
                Some(other) => {
                    return Err(Error::Config(format!(
                        "line {line}: label must be `case` or `control`, got `{other}`"
                    )))
                }
                None => return Err(Error::Config(format!("line {line}: missing label field"))),
            }
        }
        Self::new(cases, controls)
    }
}

/// Accrual fractions of cases and controls observed at an analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequentialView {
    pub r_case: f64,
    pub r_control: f64,
}

impl SequentialView {
    pub fn new(r_case: f64, r_control: f64) -> Result<Self> {
        for r in [r_case, r_control] {
            if !(r > 0.0 && r <= 1.0) {
                return domain(format!("accrual fraction {r} outside (0, 1]"));
            }
        }
        Ok(Self { r_case, r_control })
    }

    pub fn full() -> Self {
        Self { r_case: 1.0, r_control: 1.0 }
    }
}

/// Known disease prevalence, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Prevalence(f64);

impl Prevalence {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return domain(format!("prevalence {rho} outside (0, 1)"));
        }
        Ok(Self(rho))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Compact region `[a, b] × [c, 1] × [d, 1]` on which the limit results hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityWindow {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for ValidityWindow {
    fn default() -> Self {
        Self { a: 0.05, b: 0.95, c: 0.1, d: 0.05 }
    }
}

impl ValidityWindow {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let ok = 0.0 < a && a < b && b < 1.0 && 0.0 < c && c < 1.0 && 0.0 < d && d < 1.0;
        if !ok {
            return domain(format!("invalid validity window a={a} b={b} c={c} d={d}"));
        }
        Ok(Self { a, b, c, d })
    }

    /// Checks that an index point and view lie inside the window.
    pub fn check(&self, index: f64, view: SequentialView) -> Result<()> {
        if !(index >= self.a && index <= self.b) {
            return domain(format!("index {index} outside [{}, {}]", self.a, self.b));
        }
        if view.r_case < self.c || view.r_control < self.d {
            return domain(format!(
                "view ({}, {}) below minimum fractions ({}, {})",
                view.r_case, view.r_control, self.c, self.d
            ));
        }
        Ok(())
    }
}

/// Number of observations in the prefix selected by fraction `r`: `⌊r·n⌋`.
pub fn prefix_len(n: usize, r: f64) -> Result<usize> {
    if !(r > 0.0 && r <= 1.0) {
        return domain(format!("accrual fraction {r} outside (0, 1]"));
    }
    let k = ((r * n as f64) + GRID_SLACK).floor() as usize;
    if k == 0 {
        return domain(format!("fraction {r} of {n} observations selects an empty prefix"));
    }
    Ok(k.min(n))
}

/// The sorted first `k` arrivals of one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedPrefix {
    sorted: Vec<f64>,
}

impl SortedPrefix {
    pub fn new(values: &[f64], r: f64) -> Result<Self> {
        let k = prefix_len(values.len(), r)?;
        Ok(Self::from_prefix(&values[..k]))
    }

    /// Sorts a slice that is already the desired prefix. Panics on empty
    /// input.
    pub fn from_prefix(prefix: &[f64]) -> Self {
        assert!(!prefix.is_empty(), "empty prefix");
        let mut sorted = prefix.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self { sorted }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    /// `#{i : X_i ≤ x}`.
    pub fn count_le(&self, x: f64) -> usize {
        self.sorted.partition_point(|&v| v <= x)
    }

    pub fn ecdf(&self, x: f64) -> f64 {
        self.count_le(x) as f64 / self.len() as f64
    }

    pub fn survival(&self, x: f64) -> f64 {
        (self.len() - self.count_le(x)) as f64 / self.len() as f64
    }

    /// Generalised inverse: the `j`-th order statistic for
    /// `t ∈ ((j−1)/k, j/k]`, the minimum at `t = 0`.
    pub fn quantile(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return domain(format!("quantile level {t} outside [0, 1]"));
        }
        let k = self.len();
        let j = ((t * k as f64) - GRID_SLACK).ceil().max(1.0) as usize;
        Ok(self.sorted[j.min(k) - 1])
    }

    /// `Ŝ⁻¹(t) = F̂⁻¹(1 − t)`.
    pub fn survival_quantile(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return domain(format!("quantile level {t} outside [0, 1]"));
        }
        self.quantile(1.0 - t)
    }
}

pub fn seq_ecdf(values: &[f64], r: f64, x: f64) -> Result<f64> {
    Ok(SortedPrefix::new(values, r)?.ecdf(x))
}

pub fn seq_quantile(values: &[f64], r: f64, t: f64) -> Result<f64> {
    SortedPrefix::new(values, r)?.quantile(t)
}

pub fn seq_survival(values: &[f64], r: f64, x: f64) -> Result<f64> {
    Ok(SortedPrefix::new(values, r)?.survival(x))
}

pub fn seq_survival_quantile(values: &[f64], r: f64, t: f64) -> Result<f64> {
    SortedPrefix::new(values, r)?.survival_quantile(t)
}

/// Both sorted prefixes of a sample at one view, plus the prevalence that
/// weights them into the population distribution.
#[derive(Debug, Clone)]
pub struct PrefixPair {
    pub cases: SortedPrefix,
    pub controls: SortedPrefix,
    pub rho: Prevalence,
}

impl PrefixPair {
    pub fn new(sample: &MarkerSample, view: SequentialView, rho: Prevalence) -> Result<Self> {
        Ok(Self {
            cases: SortedPrefix::new(sample.cases(), view.r_case)?,
            controls: SortedPrefix::new(sample.controls(), view.r_control)?,
            rho,
        })
    }

    /// `ρ F̂_D(x) + (1 − ρ) F̂_D̄(x)`.
    pub fn mixture_ecdf(&self, x: f64) -> f64 {
        self.mix(self.cases.count_le(x), self.controls.count_le(x))
    }

    fn mix(&self, case_le: usize, control_le: usize) -> f64 {
        let rho = self.rho.value();
        rho * (case_le as f64 / self.cases.len() as f64)
            + (1.0 - rho) * (control_le as f64 / self.controls.len() as f64)
    }

    /// `inf{x : F̂(x) ≥ u}` by a merged scan over both sorted prefixes.
    pub fn mixture_quantile(&self, u: f64) -> Result<f64> {
        Ok(self.mixture_quantile_with_counts(u)?.0)
    }

    /// Mixture quantile together with the number of cases at or below it.
    pub fn mixture_quantile_with_counts(&self, u: f64) -> Result<(f64, usize)> {
        if !(u > 0.0 && u < 1.0) {
            return domain(format!("percentile {u} outside (0, 1)"));
        }
        let (a, b) = (self.cases.values(), self.controls.values());
        let (mut i, mut j) = (0usize, 0usize);
        while i < a.len() || j < b.len() {
            let x = match (a.get(i), b.get(j)) {
                (Some(&p), Some(&q)) => p.min(q),
                (Some(&p), None) => p,
                (None, Some(&q)) => q,
                (None, None) => unreachable!(),
            };
            while i < a.len() && a[i] <= x {
                i += 1;
            }
            while j < b.len() && b[j] <= x {
                j += 1;
            }
            if self.mix(i, j) >= u {
                return Ok((x, i));
            }
        }
        // F̂ reaches 1 at the largest atom; only rounding can land here.
        Ok((a[a.len() - 1].max(b[b.len() - 1]), a.len()))
    }
}

pub fn mixture_ecdf(
    sample: &MarkerSample,
    view: SequentialView,
    rho: Prevalence,
    x: f64,
) -> Result<f64> {
    Ok(PrefixPair::new(sample, view, rho)?.mixture_ecdf(x))
}

pub fn mixture_quantile(
    sample: &MarkerSample,
    view: SequentialView,
    rho: Prevalence,
    u: f64,
) -> Result<f64> {
    PrefixPair::new(sample, view, rho)?.mixture_quantile(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const V: [f64; 3] = [2.0, 1.0, 3.0];

    #[test]
    fn ecdf_examples() {
        assert_eq!(seq_ecdf(&V, 1.0, 1.5).unwrap(), 1.0 / 3.0);
        assert_eq!(seq_ecdf(&V, 2.0 / 3.0, 1.5).unwrap(), 0.5);
        assert_eq!(seq_ecdf(&V, 1.0, f64::INFINITY).unwrap(), 1.0);
    }

    #[test]
    fn quantile_examples() {
        let v = [5.0, 1.0, 3.0];
        assert_eq!(seq_quantile(&v, 1.0, 0.5).unwrap(), 3.0);
        assert_eq!(seq_quantile(&v, 1.0, 0.0).unwrap(), 1.0);
        assert_eq!(seq_quantile(&v, 2.0 / 3.0, 1.0).unwrap(), 5.0);
        assert!(seq_quantile(&v, 1.0, 1.5).is_err());
        assert!(seq_quantile(&v, 1.0, -0.1).is_err());
    }

    #[test]
    fn survival_examples() {
        let v = [5.0, 1.0, 3.0];
        assert!((seq_survival(&v, 1.0, 2.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(seq_survival_quantile(&v, 1.0, 0.5).unwrap(), 3.0);
        assert_eq!(seq_survival(&v, 1.0, f64::NEG_INFINITY).unwrap(), 1.0);
    }

    #[test]
    fn empty_prefix_is_rejected() {
        assert!(matches!(seq_ecdf(&V, 0.2, 0.0), Err(Error::Domain(_))));
        assert!(seq_ecdf(&[], 1.0, 0.0).is_err());
        assert!(seq_ecdf(&V, 0.0, 0.0).is_err());
        assert!(SequentialView::new(1.2, 0.5).is_err());
    }

    #[test]
    fn grid_snapping() {
        assert_eq!(prefix_len(5, 0.6).unwrap(), 3);
        assert_eq!(prefix_len(3, 2.0 / 3.0).unwrap(), 2);
        // t = 3/5 is the right end of ((2/5, 3/5]] -> third order statistic
        let p = SortedPrefix::from_prefix(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(p.quantile(0.6).unwrap(), 3.0);
    }

    #[test]
    fn mixture_examples() {
        let rho = Prevalence::new(0.2).unwrap();
        let s = MarkerSample::new(vec![1.0], vec![0.0]).unwrap();
        let full = SequentialView::full();
        assert!((mixture_ecdf(&s, full, rho, 0.5).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(mixture_quantile(&s, full, rho, 0.5).unwrap(), 0.0);
        assert_eq!(mixture_quantile(&s, full, rho, 0.9).unwrap(), 1.0);

        let s = MarkerSample::new(vec![1.0, 2.0], vec![0.0, 3.0]).unwrap();
        assert!((mixture_ecdf(&s, full, rho, 2.5).unwrap() - 0.6).abs() < 1e-15);
        // brute-force scan of the pooled atoms {0, 1, 2, 3}
        let oracle = |u: f64| {
            let mut atoms = [0.0, 1.0, 2.0, 3.0];
            atoms.sort_by(f64::total_cmp);
            let f = |x: f64| {
                let cd = [1.0, 2.0].iter().filter(|&&v| v <= x).count() as f64 / 2.0;
                let cb = [0.0, 3.0].iter().filter(|&&v| v <= x).count() as f64 / 2.0;
                0.2 * cd + 0.8 * cb
            };
            *atoms.iter().find(|&&x| f(x) >= u).unwrap()
        };
        for &u in &[0.1, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.99] {
            assert_eq!(mixture_quantile(&s, full, rho, u).unwrap(), oracle(u), "u={u}");
        }
        assert_eq!(mixture_quantile(&s, full, rho, 0.65).unwrap(), 3.0);
        assert!(mixture_quantile(&s, full, rho, 1.0).is_err());
    }

    #[test]
    fn mixture_of_identical_arms_is_either_ecdf() {
        let v = vec![0.3, -1.0, 2.5, 0.3, 7.0];
        let s = MarkerSample::new(v.clone(), v.clone()).unwrap();
        let rho = Prevalence::new(0.5).unwrap();
        for &x in &[-2.0, 0.3, 1.0, 10.0] {
            let m = mixture_ecdf(&s, SequentialView::full(), rho, x).unwrap();
            assert!((m - seq_ecdf(&v, 1.0, x).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn csv_ingestion() {
        let text = "value,label\n1.5,case\n0.2,control\n2.0,case\n";
        let s = MarkerSample::from_csv(text.as_bytes()).unwrap();
        assert_eq!(s.cases(), &[1.5, 2.0]);
        assert_eq!(s.controls(), &[0.2]);

        let err = MarkerSample::from_csv("value\n1.0\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        let err = MarkerSample::from_csv("value,label\n1.0,case\nx,control\n".as_bytes())
            .unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = MarkerSample::from_csv("value,label\n1.0,sick\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    fn brute_ecdf(values: &[f64], k: usize, x: f64) -> f64 {
        values[..k].iter().filter(|&&v| v <= x).count() as f64 / k as f64
    }

    fn brute_quantile(values: &[f64], k: usize, t: f64) -> f64 {
        let mut s = values[..k].to_vec();
        s.sort_by(f64::total_cmp);
        if t == 0.0 {
            return s[0];
        }
        // smallest order statistic whose ecdf reaches t
        for (j, v) in s.iter().enumerate() {
            if (j + 1) as f64 / k as f64 >= t - 1e-12 {
                return *v;
            }
        }
        s[k - 1]
    }

    proptest! {
        #[test]
        fn brute_force_agreement(values in prop::collection::hash_set(-50i32..50, 1..=5),
                                 t in 0.0f64..=1.0, x in -60.0f64..60.0) {
            let values: Vec<f64> = values.into_iter().map(f64::from).collect();
            let n = values.len();
            for k in 1..=n {
                let r = k as f64 / n as f64;
                prop_assert_eq!(seq_ecdf(&values, r, x).unwrap(), brute_ecdf(&values, k, x));
                prop_assert_eq!(seq_quantile(&values, r, t).unwrap(), brute_quantile(&values, k, t));
                for j in 0..=k {
                    let tj = j as f64 / k as f64;
                    prop_assert_eq!(seq_quantile(&values, r, tj).unwrap(), brute_quantile(&values, k, tj));
                }
            }
        }

        #[test]
        fn ecdf_quantile_galois(values in prop::collection::vec(-5.0f64..5.0, 1..40),
                                t in 0.001f64..=1.0) {
            let p = SortedPrefix::from_prefix(&values);
            let q = p.quantile(t).unwrap();
            prop_assert!(p.ecdf(q) >= t - 1e-12);
            let k = p.len();
            let j = (t * k as f64).round();
            if ((t * k as f64) - j).abs() < 1e-12 && values.iter().filter(|&&v| v == q).count() == 1 {
                prop_assert!((p.ecdf(q) - t).abs() < 1e-12);
            }
        }

        #[test]
        fn ecdf_monotone(values in prop::collection::vec(-5.0f64..5.0, 1..30),
                         x in -6.0f64..6.0, dx in 0.0f64..3.0) {
            let p = SortedPrefix::from_prefix(&values);
            let (a, b) = (p.ecdf(x), p.ecdf(x + dx));
            prop_assert!(a <= b && (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        }

        #[test]
        fn prefix_consistency(cases in prop::collection::vec(-5.0f64..5.0, 2..30),
                              controls in prop::collection::vec(-5.0f64..5.0, 2..30),
                              rc in 0.5f64..=1.0, rb in 0.5f64..=1.0,
                              u in 0.01f64..0.99, x in -6.0f64..6.0) {
            let rho = Prevalence::new(0.3).unwrap();
            let full = MarkerSample::new(cases.clone(), controls.clone()).unwrap();
            let view = SequentialView::new(rc, rb).unwrap();
            let kc = prefix_len(cases.len(), rc).unwrap();
            let kb = prefix_len(controls.len(), rb).unwrap();
            let cut = MarkerSample::new(cases[..kc].to_vec(), controls[..kb].to_vec()).unwrap();
            let a = PrefixPair::new(&full, view, rho).unwrap();
            let b = PrefixPair::new(&cut, SequentialView::full(), rho).unwrap();
            prop_assert_eq!(a.mixture_ecdf(x), b.mixture_ecdf(x));
            prop_assert_eq!(a.mixture_quantile(u).unwrap(), b.mixture_quantile(u).unwrap());
            let m = a.mixture_ecdf(x);
            let direct = 0.3 * a.cases.ecdf(x) + 0.7 * a.controls.ecdf(x);
            prop_assert_eq!(m, direct);
        }
    }
}
