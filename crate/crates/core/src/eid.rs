//! Expected information distributions.
//!
//! Three ways of turning the uncertainty map `V` and the visibility field `M`
//! into the density the planner covers:
//!
//! * [`EidMethod::Baseline`] uses `V` as is,
//! * [`EidMethod::SmokeMask`] weights it pointwise by visibility,
//! * [`EidMethod::ShannonEntropy`] scores each cell by the entropy of the
//!   measurement likelihood over a set of noisy simulated measurements.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;

/// Cells whose uncertainty is at most this fraction of the map maximum are
/// treated as carrying no information.
pub const DEGENERATE_FRACTION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EidMethod {
    Baseline,
    #[serde(alias = "mask")]
    SmokeMask,
    #[serde(alias = "shannon")]
    ShannonEntropy,
}

impl EidMethod {
    pub const ALL: [EidMethod; 3] = [
        EidMethod::Baseline,
        EidMethod::SmokeMask,
        EidMethod::ShannonEntropy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EidMethod::Baseline => "baseline",
            EidMethod::SmokeMask => "mask",
            EidMethod::ShannonEntropy => "shannon",
        }
    }

    /// Compute this EID. `replan_index` keys the Shannon sample draws.
    pub fn compute(
        self,
        uncertainty: &ScalarField,
        visibility: &ScalarField,
        params: &EntropyParams,
        replan_index: u32,
    ) -> Result<ScalarField> {
        match self {
            EidMethod::Baseline => Ok(eid_baseline(uncertainty)),
            EidMethod::SmokeMask => eid_smoke_mask(uncertainty, visibility),
            EidMethod::ShannonEntropy => {
                eid_shannon_keyed(uncertainty, visibility, params, replan_index)
            }
        }
    }
}

impl fmt::Display for EidMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EidMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(EidMethod::Baseline),
            "mask" | "smoke_mask" | "smokemask" => Ok(EidMethod::SmokeMask),
            "shannon" | "shannon_entropy" | "entropy" => Ok(EidMethod::ShannonEntropy),
            other => Err(Error::param("eid", format!("unknown EID method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyParams {
    /// Likelihood spread `a`.
    pub spread: f64,
    /// Measurement noise standard deviation. `None` means 10% of the map
    /// maximum at the time of evaluation.
    pub noise_sigma: Option<f64>,
    pub sample_count: usize,
    /// Width of the smoothing kernel over the sorted samples, in samples.
    pub filter_sigma: f64,
    pub rng_seed: u64,
}

impl Default for EntropyParams {
    fn default() -> Self {
        Self {
            spread: 1.0,
            noise_sigma: None,
            sample_count: 64,
            filter_sigma: 1.0,
            rng_seed: 0,
        }
    }
}

impl EntropyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.spread.is_finite() && self.spread > 0.0) {
            return Err(Error::param("spread", format!("must be positive, got {}", self.spread)));
        }
        if let Some(s) = self.noise_sigma {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::param("noise_sigma", format!("must be nonnegative, got {s}")));
            }
        }
        if self.sample_count < 2 {
            return Err(Error::param("sample_count", "must be at least 2"));
        }
        if !(self.filter_sigma.is_finite() && self.filter_sigma >= 0.0) {
            return Err(Error::param("filter_sigma", "must be nonnegative"));
        }
        Ok(())
    }

    /// Noise level used for a map whose maximum is `v_max`.
    pub fn sigma_for(&self, v_max: f64) -> f64 {
        self.noise_sigma.unwrap_or(0.1 * v_max.max(0.0))
    }
}

pub fn eid_baseline(uncertainty: &ScalarField) -> ScalarField {
    uncertainty.clone()
}

/// Pointwise product of uncertainty and visibility.
pub fn eid_smoke_mask(uncertainty: &ScalarField, visibility: &ScalarField) -> Result<ScalarField> {
    uncertainty.zip_with(visibility, |v, m| v * m)
}

/// Likelihood of achieving the full uncertainty reduction `v_s` given a
/// measurement `d_s` and visibility `m_s`.
#[inline]
pub fn measurement_likelihood(d_s: f64, v_s: f64, m_s: f64, a: f64) -> f64 {
    let dev = d_s / v_s - m_s;
    (-v_s * dev * dev / a).exp()
}

/// Normalized, truncated Gaussian kernel of radius `ceil(3 * sigma)`.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Smooth a sequence with `kernel`, renormalizing where it overhangs the ends.
fn smooth(values: &[f64], kernel: &[f64]) -> Vec<f64> {
    if kernel.len() == 1 {
        return values.to_vec();
    }
    let radius = (kernel.len() / 2) as isize;
    let n = values.len() as isize;
    (0..n)
        .map(|i| {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (k, w) in kernel.iter().enumerate() {
                let j = i + k as isize - radius;
                if (0..n).contains(&j) {
                    acc += w * values[j as usize];
                    norm += w;
                }
            }
            acc / norm
        })
        .collect()
}

/// The RNG stream for one cell of one replan.
pub fn cell_rng(seed: u64, cell: usize, replan_index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((replan_index as u64) << 32) | cell as u64);
    rng
}

/// Shannon entropy of the likelihood over noisy measurements at one cell.
///
/// The noise offsets are drawn, sorted and smoothed, then added to `v_s`, so
/// a zero noise level reproduces `v_s` exactly.
pub fn cell_entropy(
    v_s: f64,
    m_s: f64,
    sigma: f64,
    params: &EntropyParams,
    kernel: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut offsets: Vec<f64> = (0..params.sample_count)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect();
    offsets.sort_by(f64::total_cmp);
    let offsets = smooth(&offsets, kernel);
    offsets
        .iter()
        .map(|off| {
            let p = measurement_likelihood(v_s + off, v_s, m_s, params.spread).max(f64::MIN_POSITIVE);
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0)
}

pub fn eid_shannon(
    uncertainty: &ScalarField,
    visibility: &ScalarField,
    params: &EntropyParams,
) -> Result<ScalarField> {
    eid_shannon_keyed(uncertainty, visibility, params, 0)
}

/// [`eid_shannon`] with the sample draws keyed by a replan index.
pub fn eid_shannon_keyed(
    uncertainty: &ScalarField,
    visibility: &ScalarField,
    params: &EntropyParams,
    replan_index: u32,
) -> Result<ScalarField> {
    params.validate()?;
    uncertainty.check_same_domain(visibility)?;
    if !uncertainty.is_finite() {
        return Err(Error::param("uncertainty", "contains non-finite values"));
    }
    let v_max = uncertainty.max();
    if v_max <= 0.0 {
        return Ok(ScalarField::zeros(*uncertainty.domain()));
    }
    let threshold = DEGENERATE_FRACTION * v_max;
    let sigma = params.sigma_for(v_max);
    let kernel = gaussian_kernel(params.filter_sigma);
    let values: Vec<f64> = uncertainty
        .values()
        .par_iter()
        .zip(visibility.values().par_iter())
        .enumerate()
        .map(|(cell, (&v_s, &m_s))| {
            if v_s <= threshold {
                0.0
            } else {
                let mut rng = cell_rng(params.rng_seed, cell, replan_index);
                cell_entropy(v_s, m_s, sigma, params, &kernel, &mut rng)
            }
        })
        .collect();
    ScalarField::new(*uncertainty.domain(), values)
}
