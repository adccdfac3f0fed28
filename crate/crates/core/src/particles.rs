//! Weighted particle populations.
//!
//! Weights live in the log domain. A zero weight is stored as `-inf`, which
//! lets uniform ABC kernels (exact zeros) and Gaussian kernels (weights that
//! underflow `f64` by hundreds of orders of magnitude) share one code path.

use rand::Rng;

use crate::error::{Result, SmcError};
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem<F> {
    values: Vec<Vec<F>>,
    log_weights: Vec<F>,
    step: usize,
    normalized: bool,
}

impl<F: Scalar> ParticleSystem<F> {
    /// Builds a population from values and log-weights (`-inf` = zero weight).
    pub fn from_log_weights(values: Vec<Vec<F>>, log_weights: Vec<F>, step: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(SmcError::config("a population needs at least one particle"));
        }
        if values.len() != log_weights.len() {
            return Err(SmcError::DimensionMismatch {
                expected: values.len(),
                found: log_weights.len(),
            });
        }
        let dim = values[0].len();
        if let Some(v) = values.iter().find(|v| v.len() != dim) {
            return Err(SmcError::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        if log_weights.iter().any(|w| w.is_nan() || *w == F::infinity()) {
            return Err(SmcError::config("log-weights must be finite or -inf"));
        }
        Ok(Self {
            values,
            log_weights,
            step,
            normalized: false,
        })
    }

    /// Builds a population from non-negative linear weights.
    pub fn from_weights(values: Vec<Vec<F>>, weights: &[F], step: usize) -> Result<Self> {
        if weights.iter().any(|w| w.is_nan() || *w < F::zero()) {
            return Err(SmcError::config("weights must be non-negative"));
        }
        Self::from_log_weights(values, weights.iter().map(|w| w.ln()).collect(), step)
    }

    /// Equally weighted population, already normalized.
    pub fn uniform(values: Vec<Vec<F>>, step: usize) -> Result<Self> {
        let n = values.len();
        let lw = -F::from_usize_lossy(n.max(1)).ln();
        let mut sys = Self::from_log_weights(values, vec![lw; n], step)?;
        sys.normalized = true;
        Ok(sys)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn values(&self) -> &[Vec<F>] {
        &self.values
    }

    pub fn log_weights(&self) -> &[F] {
        &self.log_weights
    }

    pub fn into_parts(self) -> (Vec<Vec<F>>, Vec<F>) {
        (self.values, self.log_weights)
    }

    /// Copy with log-weights shifted so the linear weights sum to one.
    pub fn normalize(&self) -> Result<Self> {
        let total = log_sum_exp(&self.log_weights);
        if total == F::neg_infinity() {
            return Err(SmcError::DegeneratePopulation);
        }
        Ok(Self {
            values: self.values.clone(),
            log_weights: self.log_weights.iter().map(|&w| w - total).collect(),
            step: self.step,
            normalized: true,
        })
    }

    /// Normalized linear weights.
    pub fn weights(&self) -> Result<Vec<F>> {
        let total = log_sum_exp(&self.log_weights);
        if total == F::neg_infinity() {
            return Err(SmcError::DegeneratePopulation);
        }
        Ok(self.log_weights.iter().map(|&w| (w - total).exp()).collect())
    }

    /// Inverse sum of squared normalized weights, clamped to `[1, N]`.
    pub fn ess(&self) -> Result<F> {
        let total = log_sum_exp(&self.log_weights);
        if total == F::neg_infinity() {
            return Err(SmcError::DegeneratePopulation);
        }
        let doubled: Vec<F> = self.log_weights.iter().map(|&w| w + w).collect();
        let ess = (total + total - log_sum_exp(&doubled)).exp();
        Ok(ess.max(F::one()).min(F::from_usize_lossy(self.len())))
    }

    /// Population variance of the normalized weights around their mean `1/N`.
    pub fn weight_variance(&self) -> Result<F> {
        let w = self.weights()?;
        let n = F::from_usize_lossy(w.len());
        let mean = F::one() / n;
        Ok(w.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / n)
    }

    /// Weighted mean of coordinate `coord`.
    pub fn weighted_mean(&self, coord: usize) -> Result<F> {
        let w = self.weights()?;
        Ok(w.iter().zip(&self.values).map(|(&w, v)| w * v[coord]).sum())
    }

    /// Weighted (plug-in) variance of coordinate `coord`.
    pub fn weighted_variance(&self, coord: usize) -> Result<F> {
        let w = self.weights()?;
        let mean: F = w.iter().zip(&self.values).map(|(&w, v)| w * v[coord]).sum();
        Ok(w.iter()
            .zip(&self.values)
            .map(|(&w, v)| {
                let d = v[coord] - mean;
                w * d * d
            })
            .sum())
    }

    pub(crate) fn with_step(mut self, step: usize) -> Self {
        self.step = step;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleScheme {
    Multinomial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EssThreshold<F> {
    /// Resample at every step.
    Always,
    /// Resample when the ESS falls strictly below `H`.
    Below(F),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampleConfig<F> {
    pub scheme: ResampleScheme,
    pub ess_threshold: EssThreshold<F>,
}

impl<F: Scalar> ResampleConfig<F> {
    pub fn always() -> Self {
        Self {
            scheme: ResampleScheme::Multinomial,
            ess_threshold: EssThreshold::Always,
        }
    }

    pub fn below(h: F) -> Self {
        Self {
            scheme: ResampleScheme::Multinomial,
            ess_threshold: EssThreshold::Below(h),
        }
    }

    /// Conditional resampling at `H = N/2`.
    pub fn conditional_default(n: usize) -> Self {
        Self::below(F::from_usize_lossy(n) / F::lit(2.0))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if let EssThreshold::Below(h) = self.ess_threshold {
            if !(h >= F::one() && h <= F::from_usize_lossy(n)) {
                return Err(SmcError::config(format!("ESS threshold must lie in [1, {n}]")));
            }
        }
        Ok(())
    }

    pub fn should_resample(&self, ess: F) -> bool {
        match self.ess_threshold {
            EssThreshold::Always => true,
            EssThreshold::Below(h) => ess < h,
        }
    }
}

/// `[Σ w_i²]^{-1}` of the normalized weights.
pub fn effective_sample_size<F: Scalar>(sys: &ParticleSystem<F>) -> Result<F> {
    sys.ess()
}

/// Draws `N` particles i.i.d. with replacement in proportion to their weights.
/// The output is equally weighted and keeps the input step index.
pub fn resample_multinomial<F: Scalar, R: Rng + ?Sized>(
    sys: &ParticleSystem<F>,
    rng: &mut R,
) -> Result<ParticleSystem<F>> {
    let weights = sys.weights()?;
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = F::zero();
    for w in &weights {
        acc = acc + *w;
        cumulative.push(acc);
    }
    let total = acc;
    let last_positive = weights
        .iter()
        .rposition(|w| *w > F::zero())
        .ok_or(SmcError::DegeneratePopulation)?;
    let values = (0..sys.len())
        .map(|_| {
            let u = F::unit(rng) * total;
            let idx = cumulative.partition_point(|&c| c <= u).min(last_positive);
            sys.values[idx].clone()
        })
        .collect();
    ParticleSystem::uniform(values, sys.step)
}

/// Empirical `q`-quantile of the strictly positive entries of `values`, with
/// linear interpolation between order statistics (`h = (n-1) q`).
pub fn weighted_quantile<F: Scalar>(values: &[F], q: F) -> Result<F> {
    check_probability(q)?;
    let mut positive: Vec<F> = values.iter().copied().filter(|v| *v > F::zero()).collect();
    if positive.is_empty() {
        return Err(SmcError::AllWeightsZero);
    }
    positive.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let (lo, hi, frac) = interpolation_points(positive.len(), q);
    Ok(positive[lo] + frac * (positive[hi] - positive[lo]))
}

/// The same quantile as [`weighted_quantile`], computed from log-values so
/// that weights below the floating-point range still take part. Entries equal
/// to `-inf` are treated as zero weights and skipped.
pub(crate) fn log_quantile<F: Scalar>(log_values: &[F], q: F) -> Result<F> {
    check_probability(q)?;
    let mut finite: Vec<F> = log_values.iter().copied().filter(|v| *v > F::neg_infinity()).collect();
    if finite.is_empty() {
        return Err(SmcError::AllWeightsZero);
    }
    finite.sort_by(|a, b| a.partial_cmp(b).expect("log-weights are never NaN"));
    let (lo, hi, frac) = interpolation_points(finite.len(), q);
    let (a, b) = (finite[lo], finite[hi]);
    if frac == F::zero() || a == b {
        return Ok(a);
    }
    // ln(e^a + frac (e^b - e^a)) = a + ln(1 + frac (e^{b-a} - 1))
    Ok(a + (frac * (b - a).exp_m1()).ln_1p())
}

fn check_probability<F: Scalar>(q: F) -> Result<()> {
    if !(q >= F::zero() && q <= F::one()) {
        return Err(SmcError::config("quantile level must lie in [0, 1]"));
    }
    Ok(())
}

fn interpolation_points<F: Scalar>(n: usize, q: F) -> (usize, usize, F) {
    let h = F::from_usize_lossy(n - 1) * q;
    let lo = h.floor().to_usize().unwrap_or(0).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    (lo, hi, h - F::from_usize_lossy(lo))
}
