//! Mutation kernels, distances and ABC weighting densities.

use rand::Rng;

use crate::error::{Result, SmcError};
use crate::particles::ParticleSystem;
use crate::scalar::Scalar;

/// A mutation kernel `M_t(x_{t-1}, x_t)`.
///
/// Global kernels ignore `prev`; the trait keeps the argument so that
/// particle-dependent kernels can be plugged into the normalizing-constant
/// estimator.
pub trait MutationKernel<F: Scalar>: Sync {
    fn dim(&self) -> usize;
    fn sample<R: Rng + ?Sized>(&self, prev: &[F], rng: &mut R) -> Vec<F>;
    fn log_density(&self, prev: &[F], x: &[F]) -> F;
}

/// How the variance of each gamma mixture component is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum GammaSpread<F> {
    /// Variance `k * center^2` (coefficient of variation `sqrt(k)`).
    RelativeToCenter(F),
    /// Variance `k_d * center^2` in dimension `d`.
    RelativePerDim(Vec<F>),
    /// The same absolute variance in every dimension.
    Absolute(F),
    /// Variance `k * weighted population variance` of each coordinate.
    PopulationScaled(F),
    /// Variance `k * cv_d^2 * center^2`, where `cv_d` is the weighted
    /// coefficient of variation of coordinate `d` in the population.
    PopulationRelative(F),
}

/// Recipe for rebuilding the global mixture from a population.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelFamily<F> {
    /// Normal components with variance `tau2` in every dimension.
    Gaussian { tau2: F },
    /// Gamma components with mean equal to the component center.
    Gamma { spread: GammaSpread<F> },
}

impl<F: Scalar> KernelFamily<F> {
    /// Gamma mixture with variance `4 * center^2`.
    pub fn gamma_default() -> Self {
        KernelFamily::Gamma {
            spread: GammaSpread::RelativeToCenter(F::lit(4.0)),
        }
    }

    /// Global mixture centered on the population, weighted by its normalized weights.
    pub fn build(&self, sys: &ParticleSystem<F>) -> Result<GlobalMixtureKernel<F>> {
        let weights = sys.weights()?;
        let centers = sys.values().to_vec();
        match self {
            KernelFamily::Gaussian { tau2 } => GlobalMixtureKernel::gaussian(centers, weights, vec![*tau2; sys.dim()]),
            KernelFamily::Gamma { spread } => {
                let dim = sys.dim();
                let variance = match spread {
                    GammaSpread::RelativeToCenter(k) => ComponentVariance::Relative(*k),
                    GammaSpread::RelativePerDim(k) => ComponentVariance::RelativePerDim(k.clone()),
                    GammaSpread::PopulationRelative(k) => {
                        let mut per_dim = Vec::with_capacity(dim);
                        for d in 0..dim {
                            let mean = sys.weighted_mean(d)?;
                            let cv2 = sys.weighted_variance(d)? / (mean * mean);
                            per_dim.push((*k * cv2).max(F::epsilon()));
                        }
                        ComponentVariance::RelativePerDim(per_dim)
                    }
                    GammaSpread::Absolute(v) => ComponentVariance::PerDim(vec![*v; dim]),
                    GammaSpread::PopulationScaled(k) => {
                        let mut per_dim = Vec::with_capacity(dim);
                        for d in 0..dim {
                            let v = *k * sys.weighted_variance(d)?;
                            // a population collapsed onto one value still needs a proper kernel
                            let floor = F::epsilon() * centers.iter().map(|c| c[d] * c[d]).sum::<F>()
                                / F::from_usize_lossy(centers.len());
                            per_dim.push(v.max(floor).max(F::min_positive_value()));
                        }
                        ComponentVariance::PerDim(per_dim)
                    }
                };
                GlobalMixtureKernel::gamma(centers, weights, variance)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ComponentVariance<F> {
    /// Variance `k * center^2` in every dimension.
    Relative(F),
    /// Variance `k_d * center^2` in dimension `d`.
    RelativePerDim(Vec<F>),
    /// Absolute variance per dimension.
    PerDim(Vec<F>),
}

/// Per-dimension shapes and the shape-only part of the log normalizer.
#[derive(Debug, Clone, PartialEq)]
struct GammaComponent<F> {
    shape: Vec<F>,
    log_norm: Vec<F>,
}

/// `M_t(x) = Σ_j w_j ψ(x | c_j)` with Normal or gamma components.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMixtureKernel<F> {
    centers: Vec<Vec<F>>,
    weights: Vec<F>,
    log_weights: Vec<F>,
    cumulative: Vec<F>,
    family: Family<F>,
}

#[derive(Debug, Clone, PartialEq)]
enum Family<F> {
    Gaussian { sd: Vec<F>, log_norm: F },
    Gamma { components: Vec<GammaComponent<F>> },
}

impl<F: Scalar> GlobalMixtureKernel<F> {
    pub fn gaussian(centers: Vec<Vec<F>>, weights: Vec<F>, variance: Vec<F>) -> Result<Self> {
        let dim = check_components(&centers, &weights)?;
        if variance.len() != dim {
            return Err(SmcError::DimensionMismatch {
                expected: dim,
                found: variance.len(),
            });
        }
        if variance.iter().any(|v| !(*v > F::zero() && v.is_finite())) {
            return Err(SmcError::config("gaussian kernel variance must be positive"));
        }
        let two_pi = F::TAU();
        let log_norm = variance.iter().map(|v| -F::lit(0.5) * (two_pi * *v).ln()).sum();
        let sd = variance.iter().map(|v| v.sqrt()).collect();
        Self::assemble(centers, weights, Family::Gaussian { sd, log_norm })
    }

    pub fn gamma(centers: Vec<Vec<F>>, weights: Vec<F>, variance: ComponentVariance<F>) -> Result<Self> {
        let dim = check_components(&centers, &weights)?;
        if centers.iter().flatten().any(|c| !(*c > F::zero() && c.is_finite())) {
            return Err(SmcError::config("gamma kernel centers must be positive"));
        }
        match &variance {
            ComponentVariance::Relative(k) if !(*k > F::zero() && k.is_finite()) => {
                return Err(SmcError::config("gamma kernel variance must be positive"))
            }
            ComponentVariance::PerDim(v) | ComponentVariance::RelativePerDim(v) if v.len() != dim => {
                return Err(SmcError::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                })
            }
            ComponentVariance::PerDim(v) | ComponentVariance::RelativePerDim(v)
                if v.iter().any(|v| !(*v > F::zero() && v.is_finite())) =>
            {
                return Err(SmcError::config("gamma kernel variance must be positive"))
            }
            _ => {}
        }
        let components = centers
            .iter()
            .map(|c| {
                let shape: Vec<F> = c
                    .iter()
                    .enumerate()
                    .map(|(d, &m)| match &variance {
                        ComponentVariance::Relative(k) => F::one() / *k,
                        ComponentVariance::RelativePerDim(k) => F::one() / k[d],
                        ComponentVariance::PerDim(v) => (m * m / v[d]).max(F::min_positive_value()),
                    })
                    .collect();
                let log_norm = shape.iter().map(|&a| gamma_shape_log_norm(a)).collect();
                GammaComponent { shape, log_norm }
            })
            .collect::<Vec<_>>();
        Self::assemble(centers, weights, Family::Gamma { components })
    }

    fn assemble(centers: Vec<Vec<F>>, weights: Vec<F>, family: Family<F>) -> Result<Self> {
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = F::zero();
        for w in &weights {
            acc = acc + *w;
            cumulative.push(acc);
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            centers,
            weights,
            log_weights,
            cumulative,
            family,
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Vec<F>] {
        &self.centers
    }

    pub fn component_weights(&self) -> &[F] {
        &self.weights
    }

    /// Draws a component by weight, then a point from that component.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        let total = *self.cumulative.last().expect("non-empty mixture");
        let u = F::unit(rng) * total;
        let last = self.weights.iter().rposition(|w| *w > F::zero()).unwrap_or(0);
        let j = self.cumulative.partition_point(|&c| c <= u).min(last);
        let center = &self.centers[j];
        match &self.family {
            Family::Gaussian { sd, .. } => center
                .iter()
                .zip(sd)
                .map(|(&c, &s)| c + s * F::standard_normal(rng))
                .collect(),
            Family::Gamma { components } => {
                let shape = &components[j].shape;
                center
                    .iter()
                    .zip(shape)
                    .map(|(&c, &a)| {
                        // mean c, shape a => scale c / a; the draw can underflow to 0 for tiny shapes
                        F::gamma(a, c / a, rng).max(F::min_positive_value())
                    })
                    .collect()
            }
        }
    }

    /// Log of the mixture density at `x`; `-inf` outside the support.
    pub fn log_eval(&self, x: &[F]) -> F {
        let mut acc = OnlineLogSumExp::new();
        match &self.family {
            Family::Gaussian { sd, log_norm } => {
                for (c, lw) in self.centers.iter().zip(&self.log_weights) {
                    let mut q = F::zero();
                    for ((&xi, &ci), &s) in x.iter().zip(c).zip(sd) {
                        let z = (xi - ci) / s;
                        q = q + z * z;
                    }
                    acc.push(*lw + *log_norm - F::lit(0.5) * q);
                }
            }
            Family::Gamma { components } => {
                if x.iter().any(|v| !(*v > F::zero())) {
                    return F::neg_infinity();
                }
                let log_x: F = x.iter().map(|v| v.ln()).sum();
                for ((c, lw), comp) in self.centers.iter().zip(&self.log_weights).zip(components) {
                    let GammaComponent { shape, log_norm } = comp;
                    let mut s = *lw - log_x;
                    for (((&xi, &ci), &a), &k) in x.iter().zip(c).zip(shape).zip(log_norm) {
                        let r = xi / ci;
                        if !r.is_finite() {
                            // x is astronomically far out in this component's tail
                            s = F::neg_infinity();
                            break;
                        }
                        let d = r - F::one();
                        s = s + k + a * (d.ln_1p() - d);
                    }
                    acc.push(s);
                }
            }
        }
        acc.value()
    }
}

impl<F: Scalar> MutationKernel<F> for GlobalMixtureKernel<F> {
    fn dim(&self) -> usize {
        self.centers[0].len()
    }

    fn sample<R: Rng + ?Sized>(&self, _prev: &[F], rng: &mut R) -> Vec<F> {
        self.draw(rng)
    }

    fn log_density(&self, _prev: &[F], x: &[F]) -> F {
        self.log_eval(x)
    }
}

/// Draws one point from the mixture.
pub fn kernel_sample<F: Scalar, R: Rng + ?Sized>(k: &GlobalMixtureKernel<F>, rng: &mut R) -> Vec<F> {
    k.draw(rng)
}

/// Mixture density at `x` (zero outside the family support).
pub fn kernel_density<F: Scalar>(k: &GlobalMixtureKernel<F>, x: &[F]) -> F {
    k.log_eval(x).exp()
}

fn check_components<F: Scalar>(centers: &[Vec<F>], weights: &[F]) -> Result<usize> {
    if centers.is_empty() {
        return Err(SmcError::config("mixture needs at least one component"));
    }
    if centers.len() != weights.len() {
        return Err(SmcError::DimensionMismatch {
            expected: centers.len(),
            found: weights.len(),
        });
    }
    let dim = centers[0].len();
    if let Some(c) = centers.iter().find(|c| c.len() != dim) {
        return Err(SmcError::DimensionMismatch {
            expected: dim,
            found: c.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= F::zero())) {
        return Err(SmcError::config("component weights must be non-negative"));
    }
    let total: F = weights.iter().copied().sum();
    let tol = F::lit(1e-12).max(F::epsilon() * F::from_usize_lossy(weights.len()) * F::lit(4.0));
    if (total - F::one()).abs() > tol {
        return Err(SmcError::config("component weights must sum to one"));
    }
    Ok(dim)
}

/// `a ln a - a - lnΓ(a)`: with it the gamma log-density at mean `c` reads
/// `K(a) - ln x + a (ln(x/c) - x/c + 1)`, which stays accurate for the huge
/// shapes produced by tight components.
fn gamma_shape_log_norm<F: Scalar>(a: F) -> F {
    if a < F::lit(10.0) {
        return a * a.ln() - a - a.ln_gamma();
    }
    // Stirling series for lnΓ(a) - [(a - 1/2) ln a - a + ln(2π)/2]
    let inv = F::one() / a;
    let inv2 = inv * inv;
    let series = inv
        * (F::one() / F::lit(12.0)
            - inv2 * (F::one() / F::lit(360.0) - inv2 * (F::one() / F::lit(1260.0) - inv2 / F::lit(1680.0))));
    F::lit(0.5) * a.ln() - F::lit(0.5) * F::TAU().ln() - series
}

/// Streaming log-sum-exp that rescales when a larger term arrives.
struct OnlineLogSumExp<F> {
    max: F,
    sum: F,
}

impl<F: Scalar> OnlineLogSumExp<F> {
    fn new() -> Self {
        Self {
            max: F::neg_infinity(),
            sum: F::zero(),
        }
    }

    #[inline]
    fn push(&mut self, v: F) {
        if v == F::neg_infinity() || v.is_nan() {
            return;
        }
        if v <= self.max {
            self.sum = self.sum + (v - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - v).exp() + F::one();
            self.max = v;
        }
    }

    fn value(&self) -> F {
        if self.max == F::neg_infinity() {
            F::neg_infinity()
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// The backward kernel paired with a global mutation kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackwardKernelChoice {
    /// Approximate optimal backward kernel; collapses the incremental weight
    /// to `π_t(x_t) / M_t(x_t)` under a global mixture.
    #[default]
    LOptGlobal,
}

#[derive(Debug, Clone, PartialEq)]
enum Metric<F> {
    Absolute,
    Euclidean,
    /// Inverse standard deviations of a diagonal covariance.
    Diagonal(Vec<F>),
    /// Lower Cholesky factor of a full covariance.
    Full(Vec<Vec<F>>),
}

/// Distance `ρ(a, b)` between summary vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Distance<F> {
    metric: Metric<F>,
}

impl<F: Scalar> Distance<F> {
    /// Sum of absolute differences; `|a - b|` for scalars.
    pub fn absolute() -> Self {
        Self {
            metric: Metric::Absolute,
        }
    }

    pub fn euclidean() -> Self {
        Self {
            metric: Metric::Euclidean,
        }
    }

    /// Mahalanobis distance for covariance `cov`, factorized once here.
    #[allow(clippy::needless_range_loop)]
    pub fn mahalanobis(cov: &[Vec<F>]) -> Result<Self> {
        let n = cov.len();
        if cov.iter().any(|r| r.len() != n) {
            return Err(SmcError::config("covariance must be square"));
        }
        let scale = cov.iter().flatten().fold(F::zero(), |m, v| m.max(v.abs()));
        let tol = F::epsilon() * F::lit(64.0) * scale;
        for i in 0..n {
            for j in 0..i {
                if (cov[i][j] - cov[j][i]).abs() > tol {
                    return Err(SmcError::NotPositiveDefinite);
                }
            }
        }
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || cov[i][j] == F::zero()));
        if diagonal {
            return Self::mahalanobis_diagonal(&(0..n).map(|i| cov[i][i]).collect::<Vec<_>>());
        }
        let mut l = vec![vec![F::zero(); n]; n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = cov[i][j];
                for k in 0..j {
                    s = s - l[i][k] * l[j][k];
                }
                if i == j {
                    if !(s > F::zero()) {
                        return Err(SmcError::NotPositiveDefinite);
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        Ok(Self {
            metric: Metric::Full(l),
        })
    }

    pub fn mahalanobis_diagonal(variances: &[F]) -> Result<Self> {
        if variances.iter().any(|v| !(*v > F::zero() && v.is_finite())) {
            return Err(SmcError::NotPositiveDefinite);
        }
        Ok(Self {
            metric: Metric::Diagonal(variances.iter().map(|v| v.sqrt().recip()).collect()),
        })
    }

    pub fn eval(&self, a: &[F], b: &[F]) -> Result<F> {
        if a.len() != b.len() {
            return Err(SmcError::DimensionMismatch {
                expected: a.len(),
                found: b.len(),
            });
        }
        let expected = match &self.metric {
            Metric::Diagonal(s) => Some(s.len()),
            Metric::Full(l) => Some(l.len()),
            _ => None,
        };
        if let Some(n) = expected.filter(|n| *n != a.len()) {
            return Err(SmcError::DimensionMismatch {
                expected: n,
                found: a.len(),
            });
        }
        let diff = a.iter().zip(b).map(|(&x, &y)| x - y);
        Ok(match &self.metric {
            Metric::Absolute => diff.map(|d| d.abs()).sum(),
            Metric::Euclidean => diff.map(|d| d * d).sum::<F>().sqrt(),
            Metric::Diagonal(inv_sd) => diff
                .zip(inv_sd)
                .map(|(d, &s)| {
                    let z = d * s;
                    z * z
                })
                .sum::<F>()
                .sqrt(),
            Metric::Full(l) => {
                // solve L z = d by forward substitution; ρ = |z|
                let d: Vec<F> = diff.collect();
                let mut z = vec![F::zero(); d.len()];
                for i in 0..d.len() {
                    let mut s = d[i];
                    for k in 0..i {
                        s = s - l[i][k] * z[k];
                    }
                    z[i] = s / l[i][i];
                }
                z.iter().map(|v| *v * *v).sum::<F>().sqrt()
            }
        })
    }
}

pub fn distance_eval<F: Scalar>(d: &Distance<F>, a: &[F], b: &[F]) -> Result<F> {
    d.eval(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightingKind {
    /// `1{ρ ≤ ε}`
    Uniform,
    /// `exp(-ρ² / (2ε²))`, unnormalized.
    Gaussian,
}

/// ABC weighting density `π(D | D', x)` as a smoothing kernel on `ρ(T(D), T(D'))`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightingDensity<F> {
    pub kind: WeightingKind,
    /// Tolerance; `+inf` accepts everything with density one.
    pub epsilon: F,
    pub distance: Distance<F>,
}

impl<F: Scalar> WeightingDensity<F> {
    pub fn new(kind: WeightingKind, epsilon: F, distance: Distance<F>) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self {
            kind,
            epsilon,
            distance,
        })
    }

    pub fn with_epsilon(&self, epsilon: F) -> Result<Self> {
        Self::new(self.kind, epsilon, self.distance.clone())
    }

    /// Log-density at a given distance and tolerance.
    pub fn log_kernel(kind: WeightingKind, rho: F, epsilon: F) -> F {
        if epsilon == F::infinity() {
            return F::zero();
        }
        match kind {
            WeightingKind::Uniform => {
                if rho <= epsilon {
                    F::zero()
                } else {
                    F::neg_infinity()
                }
            }
            WeightingKind::Gaussian => {
                let z = rho / epsilon;
                -F::lit(0.5) * z * z
            }
        }
    }

    pub fn log_eval(&self, summary_obs: &[F], summary_sim: &[F]) -> Result<F> {
        if self.epsilon == F::infinity() {
            if summary_obs.len() != summary_sim.len() {
                return Err(SmcError::DimensionMismatch {
                    expected: summary_obs.len(),
                    found: summary_sim.len(),
                });
            }
            return Ok(F::zero());
        }
        let rho = self.distance.eval(summary_obs, summary_sim)?;
        Ok(Self::log_kernel(self.kind, rho, self.epsilon))
    }

    pub fn eval(&self, summary_obs: &[F], summary_sim: &[F]) -> Result<F> {
        self.log_eval(summary_obs, summary_sim).map(|v| v.exp())
    }
}

pub fn weighting_density_eval<F: Scalar>(w: &WeightingDensity<F>, summary_obs: &[F], summary_sim: &[F]) -> Result<F> {
    w.eval(summary_obs, summary_sim)
}

pub(crate) fn check_epsilon<F: Scalar>(epsilon: F) -> Result<()> {
    if epsilon > F::zero() {
        Ok(())
    } else {
        Err(SmcError::config("tolerance must be positive or +inf"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Lane, StreamFactory};
    use proptest::prelude::*;

    fn single_gaussian(center: f64, tau2: f64) -> GlobalMixtureKernel<f64> {
        GlobalMixtureKernel::gaussian(vec![vec![center]], vec![1.0], vec![tau2]).unwrap()
    }

    /// Composite Simpson rule, used as an independent quadrature oracle.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn standard_normal_density_at_mode() {
        let k = single_gaussian(0.0, 1.0);
        assert!((kernel_density(&k, &[0.0]) - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn coincident_components_collapse() {
        let one = single_gaussian(0.0, 1.0);
        let two = GlobalMixtureKernel::gaussian(vec![vec![0.0], vec![0.0]], vec![0.5, 0.5], vec![1.0]).unwrap();
        for x in [-2.0, 0.3, 1.7] {
            assert!((kernel_density(&one, &[x]) - kernel_density(&two, &[x])).abs() < 1e-15);
        }
    }

    #[test]
    fn gaussian_mixture_integrates_to_one() {
        let k = GlobalMixtureKernel::gaussian(vec![vec![-3.0], vec![0.5], vec![4.0]], vec![0.2, 0.5, 0.3], vec![1.3])
            .unwrap();
        let mass = simpson(|x| kernel_density(&k, &[x]), -20.0, 20.0, 20_000);
        assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
    }

    #[test]
    fn gamma_mixture_integrates_to_one() {
        let k = GlobalMixtureKernel::gamma(
            vec![vec![1.0], vec![2.5]],
            vec![0.4, 0.6],
            ComponentVariance::PerDim(vec![0.3]),
        )
        .unwrap();
        let mass = simpson(|x| kernel_density(&k, &[x]), 1e-9, 30.0, 200_000);
        assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
    }

    #[test]
    fn gamma_density_matches_textbook_form() {
        // shape 3, mean 1.5 => rate 2
        let k = GlobalMixtureKernel::gamma(vec![vec![1.5]], vec![1.0], ComponentVariance::PerDim(vec![0.75])).unwrap();
        let (a, b) = (3.0_f64, 2.0_f64);
        for x in [0.2, 1.0, 3.3] {
            let expected = a * b.ln() - libm::lgamma(a) + (a - 1.0) * f64::ln(x) - b * x;
            assert!((k.log_eval(&[x]) - expected).abs() < 1e-12);
        }
        // large shape goes through the Stirling branch
        let k = GlobalMixtureKernel::gamma(vec![vec![2.0]], vec![1.0], ComponentVariance::PerDim(vec![0.01])).unwrap();
        let (a, b) = (400.0_f64, 200.0_f64);
        let x = 2.03;
        let expected = a * b.ln() - libm::lgamma(a) + (a - 1.0) * f64::ln(x) - b * x;
        assert!((k.log_eval(&[x]) - expected).abs() < 1e-9);
    }

    #[test]
    fn gamma_density_outside_support_is_zero() {
        let k = GlobalMixtureKernel::gamma(vec![vec![1.0]], vec![1.0], ComponentVariance::Relative(4.0)).unwrap();
        assert_eq!(kernel_density(&k, &[0.0]), 0.0);
        assert_eq!(kernel_density(&k, &[-1.0]), 0.0);
    }

    #[test]
    fn gamma_requires_positive_centers() {
        let r = GlobalMixtureKernel::gamma(vec![vec![-1.0]], vec![1.0], ComponentVariance::Relative(4.0));
        assert!(r.is_err());
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(GlobalMixtureKernel::gaussian(vec![vec![0.0], vec![1.0]], vec![0.5, 0.6], vec![1.0]).is_err());
    }

    #[test]
    fn standard_normal_kernel_sample_mean() {
        let k = single_gaussian(0.0, 1.0);
        let mut rng = StreamFactory::new(5).stream(0, Lane::User, 0);
        let n = 100_000;
        let mean = (0..n).map(|_| kernel_sample(&k, &mut rng)[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn gamma_kernel_samples_positive() {
        let k = GlobalMixtureKernel::gamma(vec![vec![0.3, 2.0]], vec![1.0], ComponentVariance::Relative(4.0)).unwrap();
        let mut rng = StreamFactory::new(6).stream(0, Lane::User, 0);
        for _ in 0..10_000 {
            assert!(kernel_sample(&k, &mut rng).iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn symmetric_mixture_splits_evenly() {
        let k = GlobalMixtureKernel::gaussian(vec![vec![-10.0], vec![10.0]], vec![0.5, 0.5], vec![1.0]).unwrap();
        let mut rng = StreamFactory::new(8).stream(0, Lane::User, 0);
        let n = 100_000;
        let pos = (0..n).filter(|_| kernel_sample(&k, &mut rng)[0] > 0.0).count() as f64 / n as f64;
        assert!((pos - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(), "fraction {pos}");
    }

    #[test]
    fn kernel_family_builds_population_kde() {
        let sys = ParticleSystem::uniform(vec![vec![1.0], vec![2.0], vec![4.0]], 1).unwrap();
        let k = KernelFamily::Gaussian { tau2: 1.0 }.build(&sys).unwrap();
        assert_eq!(k.len(), 3);
        let g = KernelFamily::Gamma {
            spread: GammaSpread::PopulationScaled(2.0),
        }
        .build(&sys)
        .unwrap();
        assert!(kernel_density(&g, &[2.0]) > 0.0);
        assert!(KernelFamily::<f64>::gamma_default().build(&sys).is_ok());
    }

    #[test]
    fn distance_examples() {
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let m = Distance::mahalanobis(&eye).unwrap();
        assert!((distance_eval(&m, &[3.0f64, 4.0], &[0.0, 0.0]).unwrap() - 5.0).abs() < 1e-15);
        assert_eq!(distance_eval(&m, &[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        let d = Distance::mahalanobis(&[vec![4.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((d.eval(&[2.0f64, 0.0], &[0.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((Distance::<f64>::absolute().eval(&[0.4], &[0.0]).unwrap() - 0.4).abs() < 1e-15);
        assert!((Distance::<f64>::euclidean().eval(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn full_mahalanobis_matches_closed_form() {
        // Σ = [[2, 1], [1, 2]], Σ^{-1} = [[2, -1], [-1, 2]] / 3
        let d = Distance::mahalanobis(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let v = [1.0, 2.0];
        let q = (2.0 * 1.0 - 2.0 * 1.0 * 2.0 + 2.0 * 4.0) / 3.0;
        assert!((d.eval(&v, &[0.0, 0.0]).unwrap() - f64::sqrt(q)).abs() < 1e-14);
    }

    #[test]
    fn singular_covariance_rejected_at_construction() {
        assert_eq!(
            Distance::mahalanobis(&[vec![1.0, 1.0], vec![1.0, 1.0]]),
            Err(SmcError::NotPositiveDefinite)
        );
        assert_eq!(
            Distance::mahalanobis(&[vec![1.0, 0.5], vec![0.2, 1.0]]),
            Err(SmcError::NotPositiveDefinite)
        );
        assert_eq!(
            Distance::mahalanobis_diagonal(&[1.0, 0.0]),
            Err(SmcError::NotPositiveDefinite)
        );
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let w = WeightingDensity::new(WeightingKind::Uniform, 1.0, Distance::euclidean()).unwrap();
        assert!(w.eval(&[0.0, 1.0], &[0.0]).is_err());
        let d = Distance::mahalanobis_diagonal(&[1.0, 1.0]).unwrap();
        assert!(d.eval(&[0.0], &[0.0]).is_err());
    }

    #[test]
    fn weighting_density_examples() {
        let u = WeightingDensity::new(WeightingKind::Uniform, 0.5, Distance::absolute()).unwrap();
        assert_eq!(weighting_density_eval(&u, &[0.0], &[0.4]).unwrap(), 1.0);
        assert_eq!(weighting_density_eval(&u, &[0.0], &[0.6]).unwrap(), 0.0);
        let g = WeightingDensity::new(WeightingKind::Gaussian, 0.5, Distance::absolute()).unwrap();
        assert_eq!(g.eval(&[0.0], &[0.0]).unwrap(), 1.0);
        let inf = u.with_epsilon(f64::INFINITY).unwrap();
        assert_eq!(inf.eval(&[0.0], &[1e9]).unwrap(), 1.0);
        assert!(u.with_epsilon(0.0).is_err());
    }

    proptest! {
        #[test]
        fn weighting_non_increasing_in_rho(r1 in 0.0f64..10.0, r2 in 0.0f64..10.0, eps in 0.01f64..5.0) {
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            for kind in [WeightingKind::Uniform, WeightingKind::Gaussian] {
                prop_assert!(WeightingDensity::log_kernel(kind, lo, eps) >= WeightingDensity::log_kernel(kind, hi, eps));
            }
            let u = WeightingDensity::log_kernel(WeightingKind::Uniform, r1, eps).exp();
            prop_assert!(u == 0.0 || u == 1.0);
        }

        #[test]
        fn mahalanobis_is_symmetric(
            a in prop::collection::vec(-10.0f64..10.0, 3),
            b in prop::collection::vec(-10.0f64..10.0, 3),
        ) {
            let cov = vec![vec![2.0, 0.3, 0.0], vec![0.3, 1.0, 0.1], vec![0.0, 0.1, 0.5]];
            let d = Distance::mahalanobis(&cov).unwrap();
            let ab = d.eval(&a, &b).unwrap();
            prop_assert!((ab - d.eval(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab == 0.0, a == b);
        }
    }
}
