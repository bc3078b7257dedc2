//! Gaussian kernel density plug-in for the arm densities.

use serde::{Deserialize, Serialize};

use crate::curves::Population;
use crate::empirical_process::{prefix_len, MarkerSample, SequentialView};
use crate::error::{domain, Result};
use crate::normal;

/// Smallest prefix on which a kernel estimate is attempted.
pub const MIN_KERNEL_PREFIX: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `0.9·min(sd, IQR/1.34)·n^{-1/5}` per arm.
    Silverman,
    Fixed { case: f64, control: f64 },
}

/// Kernel estimates of `f_D`, `f_D̄` (and the smoothed CDFs) from the prefixes
/// of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPlugin {
    cases: Vec<f64>,
    controls: Vec<f64>,
    h_case: f64,
    h_control: f64,
    rule: BandwidthRule,
}

impl KernelPlugin {
    pub fn new(sample: &MarkerSample, view: SequentialView, rule: BandwidthRule) -> Result<Self> {
        let kc = prefix_len(sample.n_cases(), view.r_case)?;
        let kb = prefix_len(sample.n_controls(), view.r_control)?;
        if kc < MIN_KERNEL_PREFIX || kb < MIN_KERNEL_PREFIX {
            return domain(format!(
                "kernel plug-in needs at least {MIN_KERNEL_PREFIX} observations per arm, got {kc} cases and {kb} controls"
            ));
        }
        let cases = sample.cases()[..kc].to_vec();
        let controls = sample.controls()[..kb].to_vec();
        let (h_case, h_control) = match rule {
            BandwidthRule::Silverman => (silverman_bandwidth(&cases)?, silverman_bandwidth(&controls)?),
            BandwidthRule::Fixed { case, control } => {
                if !(case > 0.0 && control > 0.0) {
                    return domain("bandwidths must be positive");
                }
                (case, control)
            }
        };
        Ok(Self { cases, controls, h_case, h_control, rule })
    }

    pub fn bandwidths(&self) -> (f64, f64) {
        (self.h_case, self.h_control)
    }

    pub fn rule(&self) -> BandwidthRule {
        self.rule
    }
}

fn kernel_pdf(data: &[f64], h: f64, x: f64) -> f64 {
    data.iter().map(|&v| normal::pdf((x - v) / h)).sum::<f64>() / (data.len() as f64 * h)
}

fn kernel_cdf(data: &[f64], h: f64, x: f64) -> f64 {
    data.iter().map(|&v| normal::cdf((x - v) / h)).sum::<f64>() / data.len() as f64
}

impl Population for KernelPlugin {
    fn case_cdf(&self, x: f64) -> f64 {
        kernel_cdf(&self.cases, self.h_case, x)
    }
    fn control_cdf(&self, x: f64) -> f64 {
        kernel_cdf(&self.controls, self.h_control, x)
    }
    fn case_pdf(&self, x: f64) -> f64 {
        kernel_pdf(&self.cases, self.h_case, x)
    }
    fn control_pdf(&self, x: f64) -> f64 {
        kernel_pdf(&self.controls, self.h_control, x)
    }
}

/// Silverman's rule of thumb for a Gaussian kernel.
pub fn silverman_bandwidth(data: &[f64]) -> Result<f64> {
    let n = data.len();
    if n < 2 {
        return domain("bandwidth needs at least two observations");
    }
    let mean = data.iter().sum::<f64>() / n as f64;
    let sd = (data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = interpolated_quantile(&sorted, 0.75) - interpolated_quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) {
        return domain("degenerate sample: zero spread");
    }
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

fn interpolated_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
