//! Likelihood-free targets.
//!
//! The ABC posterior at tolerance `ε` is estimated pointwise by
//! `π(x) · (1/S) Σ_s K_ε(ρ(T(D), T(D'_s)))` with fresh simulator draws
//! `D'_s ~ π(·|x)`. Plugging this estimate into the PRC sampler with a global
//! kernel gives the PRC-ABC sampler.

use rand::Rng;

use crate::engine::{run_sampler_with, Evaluation, PrcPolicy, SamplerRun, StepDiagnostics, TargetSequence};
use crate::error::{Result, SmcError};
use crate::kernels::{KernelFamily, WeightingDensity, WeightingKind};
use crate::particles::{ParticleSystem, ResampleConfig};
use crate::scalar::{log_sum_exp, Scalar};

/// A prior plus a simulator of summary statistics.
pub trait AbcModel<F: Scalar>: Sync {
    type Data;

    /// Dimension of the parameter `x`.
    fn dim(&self) -> usize;

    /// Dimension of `T(D)`.
    fn summary_dim(&self) -> usize;

    /// `ln π(x)`, `-inf` outside the support.
    fn prior_log_density(&self, x: &[F]) -> F;

    /// Draws `D' ~ π(·|x)`. Errors are treated as a zero likelihood estimate.
    fn simulate<R: Rng + ?Sized>(&self, x: &[F], rng: &mut R) -> Result<Self::Data>;

    fn summary(&self, data: &Self::Data) -> Vec<F>;
}

/// Initial sampling distribution `μ`.
pub trait InitialDistribution<F: Scalar>: Sync {
    fn dim(&self) -> usize;
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F>;
    fn log_density(&self, x: &[F]) -> F;
}

/// Uniform distribution on a box.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformBox<F> {
    lower: Vec<F>,
    upper: Vec<F>,
    log_density: F,
}

impl<F: Scalar> UniformBox<F> {
    pub fn new(lower: Vec<F>, upper: Vec<F>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(SmcError::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.is_empty() || lower.iter().zip(&upper).any(|(a, b)| !(a < b && (*b - *a).is_finite())) {
            return Err(SmcError::config("uniform box needs finite bounds with lower < upper"));
        }
        let log_density = -lower.iter().zip(&upper).map(|(a, b)| (*b - *a).ln()).sum::<F>();
        Ok(Self {
            lower,
            upper,
            log_density,
        })
    }

    pub fn interval(lower: F, upper: F) -> Result<Self> {
        Self::new(vec![lower], vec![upper])
    }
}

impl<F: Scalar> InitialDistribution<F> for UniformBox<F> {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| *a + (*b - *a) * F::unit(rng))
            .collect()
    }

    fn log_density(&self, x: &[F]) -> F {
        let inside = x
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (a, b))| v >= a && v <= b);
        if inside {
            self.log_density
        } else {
            F::neg_infinity()
        }
    }
}

/// Non-increasing tolerances `ε_1 ≥ … ≥ ε_T`; `∞` is allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct ToleranceSchedule<F> {
    epsilons: Vec<F>,
}

impl<F: Scalar> ToleranceSchedule<F> {
    pub fn new(epsilons: Vec<F>) -> Result<Self> {
        if epsilons.is_empty() {
            return Err(SmcError::config("tolerance schedule is empty"));
        }
        if epsilons.iter().any(|e| !(*e > F::zero())) {
            return Err(SmcError::config("tolerances must be positive or infinite"));
        }
        if epsilons.windows(2).any(|w| w[1] > w[0]) {
            return Err(SmcError::config("tolerance schedule must be non-increasing"));
        }
        Ok(Self { epsilons })
    }

    /// `∞` followed by `steps` values spaced geometrically from `first` down to `last`.
    pub fn geometric(first: F, last: F, steps: usize) -> Result<Self> {
        if steps < 2 || !(first >= last && last > F::zero() && first.is_finite()) {
            return Err(SmcError::config(
                "geometric schedule needs first >= last > 0 and at least two steps",
            ));
        }
        let ratio = (last / first).ln() / F::from_usize_lossy(steps - 1);
        let mut eps = vec![F::infinity()];
        eps.extend((0..steps).map(|k| {
            if k == steps - 1 {
                last
            } else {
                first * (ratio * F::from_usize_lossy(k)).exp()
            }
        }));
        Self::new(eps)
    }

    /// Same schedule with every finite value multiplied by `factor`.
    pub fn scaled(&self, factor: F) -> Result<Self> {
        Self::new(self.epsilons.iter().map(|e| *e * factor).collect())
    }

    pub fn len(&self) -> usize {
        self.epsilons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epsilons.is_empty()
    }

    pub fn epsilons(&self) -> &[F] {
        &self.epsilons
    }

    /// `ε_t` for the 1-based step `t`.
    pub fn at(&self, t: usize) -> F {
        self.epsilons[t - 1]
    }
}

/// Everything needed to evaluate `π_ABC(x | D)` at a given tolerance.
#[derive(Debug, Clone)]
pub struct AbcTarget<F, M> {
    pub model: M,
    pub weighting: WeightingDensity<F>,
    pub s_draws: usize,
    pub observed_summary: Vec<F>,
}

impl<F: Scalar, M: AbcModel<F>> AbcTarget<F, M> {
    pub fn new(model: M, weighting: WeightingDensity<F>, s_draws: usize, observed_summary: Vec<F>) -> Result<Self> {
        if s_draws == 0 {
            return Err(SmcError::config("S must be at least 1"));
        }
        if observed_summary.len() != model.summary_dim() {
            return Err(SmcError::DimensionMismatch {
                expected: model.summary_dim(),
                found: observed_summary.len(),
            });
        }
        Ok(Self {
            model,
            weighting,
            s_draws,
            observed_summary,
        })
    }
}

/// Log of the Monte Carlo estimate `π(x) (1/S) Σ_s K_ε(ρ(T(D), T(D'_s)))`.
///
/// `ε = ∞` returns the prior without simulating. A simulator error makes the
/// whole estimate zero and sets `failed`.
pub fn abc_density_estimate<F, M, R>(tgt: &AbcTarget<F, M>, x: &[F], epsilon: F, rng: &mut R) -> Result<Evaluation<F>>
where
    F: Scalar,
    M: AbcModel<F>,
    R: Rng + ?Sized,
{
    if x.len() != tgt.model.dim() {
        return Err(SmcError::DimensionMismatch {
            expected: tgt.model.dim(),
            found: x.len(),
        });
    }
    let weighting = tgt.weighting.with_epsilon(epsilon)?;
    let log_prior = tgt.model.prior_log_density(x);
    if log_prior == F::neg_infinity() || epsilon == F::infinity() {
        return Ok(Evaluation::exact(log_prior));
    }
    let mut terms = Vec::with_capacity(tgt.s_draws);
    let mut calls = 0;
    for _ in 0..tgt.s_draws {
        calls += 1;
        let data = match tgt.model.simulate(x, rng) {
            Ok(d) => d,
            Err(_) => {
                return Ok(Evaluation {
                    log_density: F::neg_infinity(),
                    simulator_calls: calls,
                    failed: true,
                })
            }
        };
        let summary = tgt.model.summary(&data);
        terms.push(weighting.log_eval(&tgt.observed_summary, &summary)?);
    }
    let log_mean = log_sum_exp(&terms) - F::from_usize_lossy(tgt.s_draws).ln();
    Ok(Evaluation {
        log_density: log_prior + log_mean,
        simulator_calls: calls,
        failed: false,
    })
}

/// The sequence `π_ABC,t` driven by a tolerance schedule.
pub struct AbcSequence<'a, F, M, U> {
    pub target: &'a AbcTarget<F, M>,
    pub schedule: &'a ToleranceSchedule<F>,
    pub mu: &'a U,
}

impl<F, M, U> TargetSequence<F> for AbcSequence<'_, F, M, U>
where
    F: Scalar,
    M: AbcModel<F>,
    U: InitialDistribution<F>,
{
    fn len(&self) -> usize {
        self.schedule.len()
    }

    fn dim(&self) -> usize {
        self.target.model.dim()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        self.mu.sample(rng)
    }

    fn initial_log_density(&self, x: &[F]) -> F {
        self.mu.log_density(x)
    }

    fn log_density<R: Rng + ?Sized>(&self, t: usize, x: &[F], rng: &mut R) -> Evaluation<F> {
        // the schedule and dimensions are validated before sampling starts
        abc_density_estimate(self.target, x, self.schedule.at(t), rng).unwrap_or(Evaluation {
            log_density: F::neg_infinity(),
            simulator_calls: 0,
            failed: true,
        })
    }

    fn epsilon(&self, t: usize) -> F {
        self.schedule.at(t)
    }
}

fn check_abc_inputs<F, M, U>(tgt: &AbcTarget<F, M>, schedule: &ToleranceSchedule<F>, mu: &U) -> Result<()>
where
    F: Scalar,
    M: AbcModel<F>,
    U: InitialDistribution<F>,
{
    if schedule.len() < 2 {
        return Err(SmcError::config("the tolerance schedule needs at least two steps"));
    }
    if mu.dim() != tgt.model.dim() {
        return Err(SmcError::DimensionMismatch {
            expected: tgt.model.dim(),
            found: mu.dim(),
        });
    }
    Ok(())
}

/// PRC-ABC sampler: resamples at every step and calls `observer` after each one.
#[allow(clippy::too_many_arguments)]
pub fn run_prc_abc_with<F, M, U>(
    tgt: &AbcTarget<F, M>,
    schedule: &ToleranceSchedule<F>,
    kernel_family: &KernelFamily<F>,
    policy: &PrcPolicy<F>,
    n: usize,
    mu: &U,
    seed: u64,
    observer: impl FnMut(&ParticleSystem<F>, &StepDiagnostics<F>),
) -> Result<SamplerRun<F>>
where
    F: Scalar,
    M: AbcModel<F>,
    U: InitialDistribution<F>,
{
    check_abc_inputs(tgt, schedule, mu)?;
    let sequence = AbcSequence {
        target: tgt,
        schedule,
        mu,
    };
    run_sampler_with(
        &sequence,
        kernel_family,
        policy,
        &ResampleConfig::always(),
        n,
        seed,
        observer,
    )
}

pub fn run_prc_abc<F, M, U>(
    tgt: &AbcTarget<F, M>,
    schedule: &ToleranceSchedule<F>,
    kernel_family: &KernelFamily<F>,
    policy: &PrcPolicy<F>,
    n: usize,
    mu: &U,
    seed: u64,
) -> Result<SamplerRun<F>>
where
    F: Scalar,
    M: AbcModel<F>,
    U: InitialDistribution<F>,
{
    run_prc_abc_with(tgt, schedule, kernel_family, policy, n, mu, seed, |_, _| {})
}

/// Exact ABC posterior of the Gaussian toy model (`D = 0`, `D ~ N(x, 1)`, flat prior).
///
/// Gaussian weighting gives the normalized `N(0, 1 + ε²)` density; uniform
/// weighting gives `(Φ(ε - x) - Φ(-ε - x)) / (2ε)`, which also integrates
/// to one. `ε = 0` returns the `N(0, 1)` limit for both kinds.
pub fn closed_form_abc_posterior<F: Scalar>(kind: WeightingKind, epsilon: F, x: F) -> F {
    let normal_pdf = |x: F, var: F| (-(x * x) / (F::lit(2.0) * var)).exp() / (F::TAU() * var).sqrt();
    if epsilon == F::zero() {
        return normal_pdf(x, F::one());
    }
    match kind {
        WeightingKind::Gaussian => normal_pdf(x, F::one() + epsilon * epsilon),
        WeightingKind::Uniform => ((epsilon - x).normal_cdf() - (-epsilon - x).normal_cdf()) / (F::lit(2.0) * epsilon),
    }
}
