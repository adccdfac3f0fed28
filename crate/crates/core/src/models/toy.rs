//! One observation `D = 0` from `N(x, 1)` under a flat prior.
//!
//! The ABC posterior is available in closed form for both weighting kinds
//! (see [`closed_form_abc_posterior`](crate::abc::closed_form_abc_posterior)),
//! which makes this the calibration model for the sampler.

use rand::Rng;

use crate::abc::{run_prc_abc_with, AbcModel, AbcTarget, ToleranceSchedule, UniformBox};
use crate::engine::{PrcPolicy, SamplerRun, StepDiagnostics};
use crate::error::Result;
use crate::kernels::{Distance, KernelFamily, WeightingDensity, WeightingKind};
use crate::particles::ParticleSystem;
use crate::scalar::Scalar;

/// Tolerances on the Gaussian-kernel scale; the final value is repeated on purpose.
pub const TOY_SCHEDULE_GAUSSIAN: [f64; 10] = [f64::INFINITY, 10.0, 5.0, 2.0, 1.0, 0.5, 0.2, 0.1, 0.05, 0.05];

/// Uniform and Gaussian kernels have equal variance when `ε_g = √3 ε_u`.
pub const GAUSSIAN_TO_UNIFORM: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianToyModel<F> {
    pub observed: F,
    pub mu_lower: F,
    pub mu_upper: F,
}

impl<F: Scalar> Default for GaussianToyModel<F> {
    fn default() -> Self {
        Self {
            observed: F::zero(),
            mu_lower: F::lit(-5.0),
            mu_upper: F::lit(5.0),
        }
    }
}

impl<F: Scalar> GaussianToyModel<F> {
    pub fn mu(&self) -> Result<UniformBox<F>> {
        UniformBox::interval(self.mu_lower, self.mu_upper)
    }
}

impl<F: Scalar> AbcModel<F> for GaussianToyModel<F> {
    type Data = F;

    fn dim(&self) -> usize {
        1
    }

    fn summary_dim(&self) -> usize {
        1
    }

    fn prior_log_density(&self, _x: &[F]) -> F {
        F::zero()
    }

    fn simulate<R: Rng + ?Sized>(&self, x: &[F], rng: &mut R) -> Result<F> {
        Ok(x[0] + F::standard_normal(rng))
    }

    fn summary(&self, data: &F) -> Vec<F> {
        vec![*data]
    }
}

/// The toy schedule for a weighting kind (uniform tolerances are `ε_g / √3`).
pub fn toy_schedule<F: Scalar>(kind: WeightingKind) -> ToleranceSchedule<F> {
    let factor = match kind {
        WeightingKind::Gaussian => 1.0,
        WeightingKind::Uniform => 1.0 / GAUSSIAN_TO_UNIFORM,
    };
    let eps = TOY_SCHEDULE_GAUSSIAN.iter().map(|e| F::lit(e * factor)).collect();
    ToleranceSchedule::new(eps).expect("toy schedule is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig<F> {
    pub n: usize,
    pub weighting: WeightingKind,
    pub s_draws: usize,
    /// Quantile level defining `c_t`.
    pub q: F,
    pub tau2: F,
    /// Tolerances on the Gaussian scale; converted for the uniform kind.
    pub schedule_gaussian: Vec<F>,
}

impl<F: Scalar> ToyConfig<F> {
    pub fn new(weighting: WeightingKind) -> Self {
        Self {
            n: 1000,
            weighting,
            s_draws: 1,
            q: F::lit(0.95),
            tau2: F::one(),
            schedule_gaussian: TOY_SCHEDULE_GAUSSIAN.iter().map(|e| F::lit(*e)).collect(),
        }
    }

    pub fn schedule(&self) -> Result<ToleranceSchedule<F>> {
        let factor = match self.weighting {
            WeightingKind::Gaussian => F::one(),
            WeightingKind::Uniform => F::one() / F::lit(GAUSSIAN_TO_UNIFORM),
        };
        ToleranceSchedule::new(self.schedule_gaussian.iter().map(|e| *e * factor).collect())
    }
}

/// Everything the sampler needs for one toy run.
pub struct ToyBindings<F> {
    pub target: AbcTarget<F, GaussianToyModel<F>>,
    pub schedule: ToleranceSchedule<F>,
    pub kernel_family: KernelFamily<F>,
    pub policy: PrcPolicy<F>,
    pub mu: UniformBox<F>,
}

pub fn toy_model_bindings<F: Scalar>(cfg: &ToyConfig<F>) -> Result<ToyBindings<F>> {
    let model = GaussianToyModel::default();
    let schedule = cfg.schedule()?;
    let weighting = WeightingDensity::new(cfg.weighting, schedule.at(schedule.len()), Distance::absolute())?;
    let mu = model.mu()?;
    let observed = vec![model.observed];
    Ok(ToyBindings {
        target: AbcTarget::new(model, weighting, cfg.s_draws, observed)?,
        schedule,
        kernel_family: KernelFamily::Gaussian { tau2: cfg.tau2 },
        policy: PrcPolicy::quantile(cfg.q),
        mu,
    })
}

pub fn run_toy_with<F: Scalar>(
    cfg: &ToyConfig<F>,
    seed: u64,
    observer: impl FnMut(&ParticleSystem<F>, &StepDiagnostics<F>),
) -> Result<SamplerRun<F>> {
    let b = toy_model_bindings(cfg)?;
    run_prc_abc_with(
        &b.target,
        &b.schedule,
        &b.kernel_family,
        &b.policy,
        cfg.n,
        &b.mu,
        seed,
        observer,
    )
}

pub fn run_toy<F: Scalar>(cfg: &ToyConfig<F>, seed: u64) -> Result<SamplerRun<F>> {
    run_toy_with(cfg, seed, |_, _| {})
}
