//! Sequential Monte Carlo samplers with partial rejection control (PRC)
//! inside the mutation kernel, a likelihood-free (ABC) target layer and two
//! reference models.
//!
//! The numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64`/`*32` aliases below name the common instantiations.
//!
//! ```
//! use smc_prc::models::toy::{run_toy, ToyConfig};
//! use smc_prc::WeightingKind;
//!
//! let cfg = ToyConfig::<f64> { n: 200, ..ToyConfig::new(WeightingKind::Gaussian) };
//! let run = run_toy(&cfg, 7).unwrap();
//! let var = run.population.weighted_variance(0).unwrap();
//! assert!(var > 0.5 && var < 2.0);
//! ```

// `!(x > 0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod abc;
pub mod engine;
pub mod error;
pub mod kernels;
pub mod models;
pub mod particles;
pub mod rng;
pub mod scalar;

pub use abc::{
    abc_density_estimate, closed_form_abc_posterior, run_prc_abc, AbcModel, AbcSequence, AbcTarget,
    InitialDistribution, ToleranceSchedule, UniformBox,
};
pub use engine::{
    alive_accounting, estimate_r_monte_carlo, prc_accept_loop, run_sampler, run_sampler_with, AliveSummary, Evaluation,
    LogDensityFn, MutationOutcome, PrcPolicy, RMode, SamplerRun, StepDiagnostics, StepTarget, TargetSequence,
    ThresholdRule,
};
pub use error::{Result, SmcError, StarvationReport};
pub use kernels::{
    distance_eval, kernel_density, kernel_sample, weighting_density_eval, BackwardKernelChoice, ComponentVariance,
    Distance, GammaSpread, GlobalMixtureKernel, KernelFamily, MutationKernel, WeightingDensity, WeightingKind,
};
pub use particles::{
    effective_sample_size, resample_multinomial, weighted_quantile, EssThreshold, ParticleSystem, ResampleConfig,
    ResampleScheme,
};
pub use rng::{Lane, StreamFactory, StreamRng};
pub use scalar::{log_add_exp, log_sum_exp, Scalar};

pub type ParticleSystem64 = ParticleSystem<f64>;
pub type ParticleSystem32 = ParticleSystem<f32>;
pub type GlobalMixtureKernel64 = GlobalMixtureKernel<f64>;
pub type GlobalMixtureKernel32 = GlobalMixtureKernel<f32>;
pub type PrcPolicy64 = PrcPolicy<f64>;
pub type PrcPolicy32 = PrcPolicy<f32>;
pub type StepDiagnostics64 = StepDiagnostics<f64>;
pub type StepDiagnostics32 = StepDiagnostics<f32>;
pub type SamplerRun64 = SamplerRun<f64>;
pub type SamplerRun32 = SamplerRun<f32>;
pub type WeightingDensity64 = WeightingDensity<f64>;
pub type WeightingDensity32 = WeightingDensity<f32>;
pub type ToleranceSchedule64 = ToleranceSchedule<f64>;
pub type ToleranceSchedule32 = ToleranceSchedule<f32>;
