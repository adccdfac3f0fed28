//! Distribution-free chain ladder: `C_{i,j+1} = f_j C_{i,j} + σ_j √C_{i,j} ε_{i,j+1}`.
//!
//! Classical estimators, the prediction recursion, a conditional residual
//! bootstrap used as the ABC simulator, gamma / inverse-gamma priors and the
//! bindings that run the PRC-ABC sampler on a claims triangle.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::abc::{run_prc_abc_with, AbcModel, AbcTarget, InitialDistribution, ToleranceSchedule};
use crate::engine::{PrcPolicy, SamplerRun, StepDiagnostics};
use crate::error::{Result, SmcError};
use crate::kernels::{Distance, GammaSpread, KernelFamily, WeightingDensity, WeightingKind};
use crate::particles::ParticleSystem;
use crate::rng::{Lane, StreamFactory};
use crate::scalar::Scalar;

/// Dollars per triangle unit.
pub const UNIT_DOLLARS: f64 = 10_000.0;

/// Redraws allowed per cell before the bootstrap gives up on positivity.
pub const DEFAULT_RETRY_BUDGET: usize = 100;

/// Annual (incremental) claims of the reference triangle, in $10,000.
pub const REFERENCE_INCREMENTAL: [&[f64]; 10] = [
    &[
        594.6975, 372.1236, 89.5717, 20.7760, 20.6704, 6.2124, 6.5813, 1.4850, 1.1130, 1.5813,
    ],
    &[
        634.6756, 324.6406, 72.3222, 15.1797, 6.7824, 3.6603, 5.2752, 1.1186, 1.1646,
    ],
    &[626.9090, 297.6223, 84.7053, 26.2768, 15.2703, 6.5444, 5.3545, 0.8924],
    &[586.3015, 268.3224, 72.2532, 19.0653, 13.2976, 8.8340, 4.3329],
    &[577.8885, 274.5229, 65.3894, 27.3395, 23.0288, 10.5224],
    &[618.4793, 282.8338, 57.2765, 24.4899, 10.4957],
    &[560.0184, 289.3207, 56.3114, 22.5517],
    &[528.8066, 244.0103, 52.8043],
    &[529.0793, 235.7936],
    &[567.5568],
];

/// Upper-left run-off triangle of cumulative claims: row `i` holds
/// `C_{i,0}, …, C_{i,I-i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimsTriangle<F> {
    rows: Vec<Vec<F>>,
}

impl<F: Scalar> ClaimsTriangle<F> {
    pub fn new(rows: Vec<Vec<F>>) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(SmcError::Triangle("need at least two accident years".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n - i {
                return Err(SmcError::Triangle(format!(
                    "accident year {i} has {} observed periods, expected {}",
                    row.len(),
                    n - i
                )));
            }
            if let Some(j) = row.iter().position(|c| !(*c > F::zero() && c.is_finite())) {
                return Err(SmcError::Triangle(format!("C[{i},{j}] is not a positive number")));
            }
        }
        Ok(Self { rows })
    }

    /// Builds cumulative claims by summing each row of annual figures.
    pub fn from_incremental(rows: &[&[F]]) -> Result<Self> {
        let cumulative = rows
            .iter()
            .map(|r| {
                r.iter()
                    .scan(F::zero(), |acc, y| {
                        *acc = *acc + *y;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        Self::new(cumulative)
    }

    /// Final accident-year index `I`.
    pub fn last_index(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn accident_years(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<F>] {
        &self.rows
    }

    pub fn get(&self, i: usize, j: usize) -> F {
        self.rows[i][j]
    }

    /// Latest diagonal `C_{i,I-i}`.
    pub fn latest(&self) -> Vec<F> {
        self.rows.iter().map(|r| r[r.len() - 1]).collect()
    }

    pub fn observed_cells(&self) -> usize {
        let n = self.rows.len();
        n * (n + 1) / 2
    }

    /// Observed cells in row-major order.
    pub fn flatten(&self) -> Vec<F> {
        self.rows.iter().flatten().copied().collect()
    }

    pub fn scaled(&self, factor: F) -> Result<Self> {
        Self::new(
            self.rows
                .iter()
                .map(|r| r.iter().map(|c| *c * factor).collect())
                .collect(),
        )
    }

    /// Reads the ragged CSV layout `accident_year,dev_0,dev_1,...`.
    pub fn read_csv<Rd: Read>(reader: Rd) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| SmcError::Triangle(format!("line 1: {e}")))?
            .clone();
        if header.get(0) != Some("accident_year") {
            return Err(SmcError::Triangle(
                "line 1: header must start with accident_year".into(),
            ));
        }
        for (k, name) in header.iter().skip(1).enumerate() {
            if name != format!("dev_{k}") {
                return Err(SmcError::Triangle(format!(
                    "line 1: expected column dev_{k}, found {name}"
                )));
            }
        }
        let mut rows = Vec::new();
        for (k, record) in rdr.records().enumerate() {
            let line = k + 2;
            let record = record.map_err(|e| SmcError::Triangle(format!("line {line}: {e}")))?;
            let year: usize = record
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| SmcError::Triangle(format!("line {line}: bad accident year")))?;
            if year != k {
                return Err(SmcError::Triangle(format!(
                    "line {line}: expected accident year {k}, found {year}"
                )));
            }
            let row = record
                .iter()
                .skip(1)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .and_then(F::from_f64)
                        .ok_or_else(|| SmcError::Triangle(format!("line {line}: cannot parse {s:?}")))
                })
                .collect::<Result<Vec<F>>>()?;
            rows.push(row);
        }
        Self::new(rows)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| SmcError::Triangle(format!("{}: {e}", path.display())))?;
        Self::read_csv(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let io = |e: csv::Error| SmcError::Triangle(e.to_string());
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
        let mut header = vec!["accident_year".to_string()];
        header.extend((0..self.rows.len()).map(|j| format!("dev_{j}")));
        w.write_record(&header).map_err(io)?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| SmcError::Triangle(e.to_string()))
    }
}

/// The reference triangle in $10,000 units.
pub fn reference_triangle() -> ClaimsTriangle<f64> {
    ClaimsTriangle::from_incremental(&REFERENCE_INCREMENTAL).expect("reference triangle is valid")
}

/// Development factors `f_j` and standard deviations `σ_j`, `j = 0..I-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainLadderParams<F> {
    pub f: Vec<F>,
    pub sigma: Vec<F>,
}

impl<F: Scalar> ChainLadderParams<F> {
    pub fn new(f: Vec<F>, sigma: Vec<F>) -> Result<Self> {
        if f.len() != sigma.len() {
            return Err(SmcError::DimensionMismatch {
                expected: f.len(),
                found: sigma.len(),
            });
        }
        if f.iter().chain(&sigma).any(|v| !(*v > F::zero() && v.is_finite())) {
            return Err(SmcError::config("chain-ladder parameters must be positive"));
        }
        Ok(Self { f, sigma })
    }

    /// Splits a stacked vector `(f_0, …, f_{I-1}, σ_0, …, σ_{I-1})`.
    pub fn from_stacked(x: &[F]) -> Result<Self> {
        if !x.len().is_multiple_of(2) {
            return Err(SmcError::config("stacked parameter vector must have even length"));
        }
        let (f, s) = x.split_at(x.len() / 2);
        Self::new(f.to_vec(), s.to_vec())
    }

    pub fn stacked(&self) -> Vec<F> {
        self.f.iter().chain(&self.sigma).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// `σ_j` after converting claims to units `factor` times smaller
    /// (`σ` scales with the square root of the claim unit).
    pub fn sigma_in_units(&self, factor: F) -> Vec<F> {
        let s = factor.sqrt();
        self.sigma.iter().map(|v| *v * s).collect()
    }
}

/// `f̂_j = Σ_i C_{i,j+1} / Σ_i C_{i,j}` over the accident years observed at `j + 1`.
pub fn chain_ladder_factors<F: Scalar>(tri: &ClaimsTriangle<F>) -> Vec<F> {
    let last = tri.last_index();
    (0..last)
        .map(|j| {
            let (num, den) = (0..last - j).fold((F::zero(), F::zero()), |(n, d), i| {
                (n + tri.get(i, j + 1), d + tri.get(i, j))
            });
            num / den
        })
        .collect()
}

/// Classical estimates `f̂_j` and `σ̂_j`.
///
/// `σ̂²_j` is the weighted sample variance of the individual factors for
/// `j ≤ I-2`; the last one uses Mack's extrapolation
/// `σ̂²_{I-1} = min(σ̂⁴_{I-2}/σ̂²_{I-3}, σ̂²_{I-3}, σ̂²_{I-2})`.
pub fn classical_chain_ladder<F: Scalar>(tri: &ClaimsTriangle<F>) -> Result<ChainLadderParams<F>> {
    let last = tri.last_index();
    if last < 3 {
        return Err(SmcError::Triangle(
            "the last standard deviation needs at least four accident years".into(),
        ));
    }
    let f = chain_ladder_factors(tri);
    let mut var: Vec<F> = (0..last - 1)
        .map(|j| {
            let rows = last - j;
            let ss = (0..rows)
                .map(|i| {
                    let c = tri.get(i, j);
                    let d = tri.get(i, j + 1) / c - f[j];
                    c * d * d
                })
                .sum::<F>();
            ss / F::from_usize_lossy(rows - 1)
        })
        .collect();
    let (a, b) = (var[last - 3], var[last - 2]);
    var.push((b * b / a).min(a.min(b)));
    let sigma = var.into_iter().map(|v| v.sqrt()).collect();
    ChainLadderParams::new(f, sigma)
}

/// Completed claims square with reserves.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainLadderPrediction<F> {
    /// `Ĉ_{i,j}` for all `i, j`; observed cells are copied.
    pub completed: Vec<Vec<F>>,
    /// `Ĉ_{i,I} - C_{i,I-i}`.
    pub reserves: Vec<F>,
    pub total_reserve: F,
}

pub fn chain_ladder_predict<F: Scalar>(tri: &ClaimsTriangle<F>, f: &[F]) -> Result<ChainLadderPrediction<F>> {
    let last = tri.last_index();
    if f.len() != last {
        return Err(SmcError::DimensionMismatch {
            expected: last,
            found: f.len(),
        });
    }
    let completed: Vec<Vec<F>> = tri
        .rows()
        .iter()
        .map(|row| {
            let mut full = row.clone();
            for j in row.len() - 1..last {
                let next = full[j] * f[j];
                full.push(next);
            }
            full
        })
        .collect();
    let reserves: Vec<F> = completed
        .iter()
        .zip(tri.rows())
        .map(|(full, row)| full[last] - row[row.len() - 1])
        .collect();
    let total_reserve = reserves.iter().copied().sum();
    Ok(ChainLadderPrediction {
        completed,
        reserves,
        total_reserve,
    })
}

fn check_params<F: Scalar>(tri: &ClaimsTriangle<F>, params: &ChainLadderParams<F>) -> Result<()> {
    if params.len() != tri.last_index() {
        return Err(SmcError::DimensionMismatch {
            expected: tri.last_index(),
            found: params.len(),
        });
    }
    Ok(())
}

/// `ε̃_{i,j+1} = (C_{i,j+1} - f_j C_{i,j}) / (σ_j √C_{i,j})` for every observed
/// transition, in row-major order.
pub fn conditional_residuals<F: Scalar>(tri: &ClaimsTriangle<F>, params: &ChainLadderParams<F>) -> Result<Vec<F>> {
    check_params(tri, params)?;
    let mut out = Vec::with_capacity(tri.observed_cells() - tri.accident_years());
    for row in tri.rows() {
        for j in 0..row.len() - 1 {
            let c = row[j];
            out.push((row[j + 1] - params.f[j] * c) / (params.sigma[j] * c.sqrt()));
        }
    }
    Ok(out)
}

/// Forward recursion from the observed first column, consuming `residuals`
/// in the order of [`conditional_residuals`].
pub fn recursion_with_residuals<F: Scalar>(
    tri: &ClaimsTriangle<F>,
    params: &ChainLadderParams<F>,
    residuals: &[F],
) -> Result<ClaimsTriangle<F>> {
    check_params(tri, params)?;
    let needed = tri.observed_cells() - tri.accident_years();
    if residuals.len() != needed {
        return Err(SmcError::DimensionMismatch {
            expected: needed,
            found: residuals.len(),
        });
    }
    let mut eps = residuals.iter();
    let rows = tri
        .rows()
        .iter()
        .map(|row| {
            let mut out = vec![row[0]];
            for j in 0..row.len() - 1 {
                let c = out[j];
                let e = *eps.next().expect("length checked above");
                out.push(params.f[j] * c + params.sigma[j] * c.sqrt() * e);
            }
            out
        })
        .collect();
    ClaimsTriangle::new(rows)
}

/// Output of one conditional bootstrap draw.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSample<F> {
    pub triangle: ClaimsTriangle<F>,
    /// Sample mean of the resampled residuals that were used.
    pub residual_mean: F,
    /// Sample standard deviation (denominator `n - 1`) of the same residuals.
    pub residual_sd: F,
}

/// Conditional bootstrap: invert the recursion for residuals under `params`,
/// resample them with replacement and regenerate the triangle forward from
/// `C_{i,0}`. A draw that would make a cell non-positive is redrawn, at most
/// `retry_budget` times per cell.
pub fn bootstrap_simulate<F: Scalar, R: Rng + ?Sized>(
    tri: &ClaimsTriangle<F>,
    params: &ChainLadderParams<F>,
    retry_budget: usize,
    rng: &mut R,
) -> Result<BootstrapSample<F>> {
    let pool = conditional_residuals(tri, params)?;
    let mut used = Vec::with_capacity(pool.len());
    let mut rows = Vec::with_capacity(tri.accident_years());
    for (i, row) in tri.rows().iter().enumerate() {
        let mut out = vec![row[0]];
        for j in 0..row.len() - 1 {
            let c = out[j];
            let (mean, scale) = (params.f[j] * c, params.sigma[j] * c.sqrt());
            let mut tries = 0;
            loop {
                let e = pool[rng.random_range(0..pool.len())];
                let next = mean + scale * e;
                if next > F::zero() && next.is_finite() {
                    out.push(next);
                    used.push(e);
                    break;
                }
                tries += 1;
                if tries > retry_budget {
                    return Err(SmcError::SimulatorFailure(format!(
                        "no positive draw for C[{i},{}] after {retry_budget} redraws",
                        j + 1
                    )));
                }
            }
        }
        rows.push(out);
    }
    let n = F::from_usize_lossy(used.len());
    let mean = used.iter().copied().sum::<F>() / n;
    let ss = used.iter().map(|e| (*e - mean) * (*e - mean)).sum::<F>();
    Ok(BootstrapSample {
        triangle: ClaimsTriangle { rows },
        residual_mean: mean,
        residual_sd: (ss / (n - F::one())).sqrt(),
    })
}

/// `T(D') = (D'_I, μ', s')`.
pub fn claims_summary<F: Scalar>(sample: &BootstrapSample<F>) -> Vec<F> {
    let mut t = sample.triangle.flatten();
    t.push(sample.residual_mean);
    t.push(sample.residual_sd);
    t
}

/// `T(D) = (D_I, 0, 1)`.
pub fn observed_summary<F: Scalar>(tri: &ClaimsTriangle<F>) -> Vec<F> {
    let mut t = tri.flatten();
    t.push(F::zero());
    t.push(F::one());
    t
}

/// `ρ(T(D), T(D'))` under the supplied distance.
pub fn claims_summary_and_distance<F: Scalar>(
    tri_obs: &ClaimsTriangle<F>,
    sim: &BootstrapSample<F>,
    distance: &Distance<F>,
) -> Result<F> {
    distance.eval(&observed_summary(tri_obs), &claims_summary(sim))
}

pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Per-component summary variances from `sims` bootstrap draws at `params`,
/// floored at [`VARIANCE_FLOOR`]. Draws that fail are skipped.
pub fn pilot_variances<F: Scalar>(
    tri: &ClaimsTriangle<F>,
    params: &ChainLadderParams<F>,
    sims: usize,
    retry_budget: usize,
    seed: u64,
) -> Result<Vec<F>> {
    let streams = StreamFactory::new(seed);
    let summaries: Vec<Vec<F>> = (0..sims)
        .into_par_iter()
        .filter_map(|k| {
            let mut rng = streams.stream(0, Lane::Pilot, k);
            bootstrap_simulate(tri, params, retry_budget, &mut rng)
                .ok()
                .map(|s| claims_summary(&s))
        })
        .collect();
    if summaries.len() < 2 {
        return Err(SmcError::SimulatorFailure(
            "pilot run produced fewer than two summaries".into(),
        ));
    }
    let dim = summaries[0].len();
    let m = F::from_usize_lossy(summaries.len());
    let floor = F::lit(VARIANCE_FLOOR);
    Ok((0..dim)
        .map(|d| {
            let mean = summaries.iter().map(|s| s[d]).sum::<F>() / m;
            let ss = summaries.iter().map(|s| (s[d] - mean) * (s[d] - mean)).sum::<F>();
            (ss / (m - F::one())).max(floor)
        })
        .collect())
}

/// Independent `f_j ~ Gamma(α_j, β_j)` (shape, scale) and
/// `σ_j ~ InvGamma(a_j, b_j)` (shape, scale).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainLadderPriors<F> {
    pub f_shape: Vec<F>,
    pub f_scale: Vec<F>,
    pub sigma_shape: Vec<F>,
    pub sigma_scale: Vec<F>,
}

impl<F: Scalar> ChainLadderPriors<F> {
    /// Priors with means at `center` and coefficient of variation `cov`.
    ///
    /// Gamma: `α = 1/cov²`, `β = mean/α`. Inverse gamma: `a = 2 + 1/cov²`,
    /// `b = mean (a - 1)`.
    pub fn centered(center: &ChainLadderParams<F>, cov: F) -> Result<Self> {
        if !(cov > F::zero() && cov.is_finite()) {
            return Err(SmcError::config("prior coefficient of variation must be positive"));
        }
        let inv = (cov * cov).recip();
        let a = F::lit(2.0) + inv;
        Ok(Self {
            f_shape: vec![inv; center.len()],
            f_scale: center.f.iter().map(|m| *m / inv).collect(),
            sigma_shape: vec![a; center.len()],
            sigma_scale: center.sigma.iter().map(|m| *m * (a - F::one())).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.f_shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_shape.is_empty()
    }

    pub fn f_means(&self) -> Vec<F> {
        self.f_shape.iter().zip(&self.f_scale).map(|(a, b)| *a * *b).collect()
    }

    pub fn sigma_means(&self) -> Vec<F> {
        self.sigma_shape
            .iter()
            .zip(&self.sigma_scale)
            .map(|(a, b)| *b / (*a - F::one()))
            .collect()
    }

    /// Joint log-density of the stacked vector `(f, σ)`.
    pub fn log_density(&self, x: &[F]) -> F {
        let k = self.len();
        if x.len() != 2 * k {
            return F::neg_infinity();
        }
        self.f_log_density(&x[..k]) + self.sigma_log_density(&x[k..])
    }

    pub fn f_log_density(&self, f: &[F]) -> F {
        let mut lp = F::zero();
        for (j, &v) in f.iter().enumerate() {
            if !(v > F::zero()) {
                return F::neg_infinity();
            }
            let (a, b) = (self.f_shape[j], self.f_scale[j]);
            lp = lp - a.ln_gamma() - a * b.ln() + (a - F::one()) * v.ln() - v / b;
        }
        lp
    }

    pub fn sigma_log_density(&self, sigma: &[F]) -> F {
        let mut lp = F::zero();
        for (j, &v) in sigma.iter().enumerate() {
            if !(v > F::zero()) {
                return F::neg_infinity();
            }
            let (a, b) = (self.sigma_shape[j], self.sigma_scale[j]);
            lp = lp + a * b.ln() - a.ln_gamma() - (a + F::one()) * v.ln() - b / v;
        }
        lp
    }

    pub fn sample_f<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        (0..self.len())
            .map(|j| F::gamma(self.f_shape[j], self.f_scale[j], rng))
            .collect()
    }

    pub fn sample_sigma<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        (0..self.len())
            .map(|j| F::gamma(self.sigma_shape[j], self.sigma_scale[j].recip(), rng).recip())
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        let mut x = self.sample_f(rng);
        x.extend(self.sample_sigma(rng));
        x
    }
}

impl<F: Scalar> InitialDistribution<F> for ChainLadderPriors<F> {
    fn dim(&self) -> usize {
        2 * self.len()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        ChainLadderPriors::sample(self, rng)
    }

    fn log_density(&self, x: &[F]) -> F {
        ChainLadderPriors::log_density(self, x)
    }
}

/// Initial sampler `μ` for the claims model.
#[derive(Debug, Clone, PartialEq)]
pub enum ClaimsInitial<F> {
    /// Sample the prior, so that `W_1 = 1`.
    Prior(ChainLadderPriors<F>),
    /// Factors from independent gammas, standard deviations from their prior.
    CenteredFactors {
        f: ProductGamma<F>,
        priors: ChainLadderPriors<F>,
    },
}

impl<F: Scalar> InitialDistribution<F> for ClaimsInitial<F> {
    fn dim(&self) -> usize {
        match self {
            ClaimsInitial::Prior(p) | ClaimsInitial::CenteredFactors { priors: p, .. } => 2 * p.len(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        match self {
            ClaimsInitial::Prior(p) => p.sample(rng),
            ClaimsInitial::CenteredFactors { f, priors } => {
                let mut x = f.sample(rng);
                x.extend(priors.sample_sigma(rng));
                x
            }
        }
    }

    fn log_density(&self, x: &[F]) -> F {
        match self {
            ClaimsInitial::Prior(p) => p.log_density(x),
            ClaimsInitial::CenteredFactors { f, priors } => {
                let k = priors.len();
                if x.len() != 2 * k {
                    return F::neg_infinity();
                }
                f.log_density(&x[..k]) + priors.sigma_log_density(&x[k..])
            }
        }
    }
}

/// Independent gammas with given means and a common coefficient of variation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductGamma<F> {
    shape: Vec<F>,
    scale: Vec<F>,
    log_norm: Vec<F>,
}

impl<F: Scalar> ProductGamma<F> {
    /// Coordinate `d` has mean `means[d]` and coefficient of variation `covs[d]`.
    pub fn new(means: &[F], covs: &[F]) -> Result<Self> {
        if means.len() != covs.len() {
            return Err(SmcError::DimensionMismatch {
                expected: means.len(),
                found: covs.len(),
            });
        }
        if means.is_empty() || means.iter().any(|m| !(*m > F::zero() && m.is_finite())) {
            return Err(SmcError::config("gamma means must be positive"));
        }
        if covs.iter().any(|c| !(*c > F::zero() && c.is_finite())) {
            return Err(SmcError::config("coefficient of variation must be positive"));
        }
        let shape: Vec<F> = covs.iter().map(|c| (*c * *c).recip()).collect();
        let scale: Vec<F> = means.iter().zip(&shape).map(|(m, a)| *m / *a).collect();
        let log_norm = shape
            .iter()
            .zip(&scale)
            .map(|(a, b)| -a.ln_gamma() - *a * b.ln())
            .collect();
        Ok(Self { shape, scale, log_norm })
    }

    pub fn with_means(means: &[F], cov: F) -> Result<Self> {
        Self::new(means, &vec![cov; means.len()])
    }
}

impl<F: Scalar> InitialDistribution<F> for ProductGamma<F> {
    fn dim(&self) -> usize {
        self.shape.len()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        self.shape
            .iter()
            .zip(&self.scale)
            .map(|(a, b)| F::gamma(*a, *b, rng))
            .collect()
    }

    fn log_density(&self, x: &[F]) -> F {
        let mut lp = F::zero();
        for (d, v) in x.iter().enumerate() {
            if !(*v > F::zero()) {
                return F::neg_infinity();
            }
            lp = lp + self.log_norm[d] + (self.shape[d] - F::one()) * v.ln() - *v / self.scale[d];
        }
        lp
    }
}

/// The chain-ladder ABC model over `x = (f, σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimsModel<F> {
    pub triangle: ClaimsTriangle<F>,
    pub priors: ChainLadderPriors<F>,
    pub retry_budget: usize,
}

impl<F: Scalar> AbcModel<F> for ClaimsModel<F> {
    type Data = BootstrapSample<F>;

    fn dim(&self) -> usize {
        2 * self.triangle.last_index()
    }

    fn summary_dim(&self) -> usize {
        self.triangle.observed_cells() + 2
    }

    fn prior_log_density(&self, x: &[F]) -> F {
        self.priors.log_density(x)
    }

    fn simulate<R: Rng + ?Sized>(&self, x: &[F], rng: &mut R) -> Result<BootstrapSample<F>> {
        let params = ChainLadderParams::from_stacked(x)?;
        bootstrap_simulate(&self.triangle, &params, self.retry_budget, rng)
    }

    fn summary(&self, data: &BootstrapSample<F>) -> Vec<F> {
        claims_summary(data)
    }
}

/// How the initial sampler `μ` is built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialChoice<F> {
    Prior,
    /// Factors from gammas centered on the classical estimates with
    /// coefficient of variation `cov_f`; standard deviations from the prior.
    CenteredFactors {
        cov_f: F,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClaimsConfig<F> {
    pub n: usize,
    pub weighting: WeightingKind,
    pub s_draws: usize,
    /// Quantile level defining `c_t`.
    pub q: F,
    /// Coefficient of variation of the priors.
    pub prior_cov: F,
    pub initial: InitialChoice<F>,
    /// Relative variance (`k` in `k * center^2`) of the kernel components
    /// along the `f` coordinates.
    pub kernel_spread_f: F,
    /// The same along the `σ` coordinates.
    pub kernel_spread_sigma: F,
    pub pilot_sims: usize,
    pub retry_budget: usize,
    /// Tolerances including the leading `∞`.
    pub schedule: Vec<F>,
}

impl<F: Scalar> Default for ClaimsConfig<F> {
    fn default() -> Self {
        Self {
            n: 5000,
            weighting: WeightingKind::Uniform,
            s_draws: 1,
            q: F::zero(),
            prior_cov: F::lit(10.0),
            initial: InitialChoice::CenteredFactors { cov_f: F::lit(0.05) },
            kernel_spread_f: F::lit(1e-4),
            kernel_spread_sigma: F::lit(0.1),
            pilot_sims: 1000,
            retry_budget: DEFAULT_RETRY_BUDGET,
            schedule: default_claims_schedule(),
        }
    }
}

/// `∞` then 21 geometrically spaced tolerances from `300` to `12` on the
/// pilot-Mahalanobis scale. Even at the classical estimates about half of
/// the simulated distances exceed 12, so much smaller tolerances starve.
pub fn default_claims_schedule<F: Scalar>() -> Vec<F> {
    ToleranceSchedule::geometric(F::lit(300.0), F::lit(12.0), 21)
        .expect("valid schedule")
        .epsilons()
        .to_vec()
}

pub struct ClaimsBindings<F> {
    pub target: AbcTarget<F, ClaimsModel<F>>,
    pub schedule: ToleranceSchedule<F>,
    pub kernel_family: KernelFamily<F>,
    pub policy: PrcPolicy<F>,
    pub mu: ClaimsInitial<F>,
    pub classical: ChainLadderParams<F>,
}

/// Wires the triangle into an ABC target; the Mahalanobis variances come from
/// a pilot run at the classical estimates (the prior means).
pub fn claims_model_bindings<F: Scalar>(
    tri: &ClaimsTriangle<F>,
    cfg: &ClaimsConfig<F>,
    seed: u64,
) -> Result<ClaimsBindings<F>> {
    let classical = classical_chain_ladder(tri)?;
    let k = classical.len();
    let priors = ChainLadderPriors::centered(&classical, cfg.prior_cov)?;
    let variances = pilot_variances(tri, &classical, cfg.pilot_sims, cfg.retry_budget, seed)?;
    let schedule = ToleranceSchedule::new(cfg.schedule.clone())?;
    let distance = Distance::mahalanobis_diagonal(&variances)?;
    let weighting = WeightingDensity::new(cfg.weighting, schedule.at(schedule.len()), distance)?;
    let mu = match cfg.initial {
        InitialChoice::CenteredFactors { cov_f } => ClaimsInitial::CenteredFactors {
            f: ProductGamma::with_means(&classical.f, cov_f)?,
            priors: priors.clone(),
        },
        InitialChoice::Prior => ClaimsInitial::Prior(priors.clone()),
    };
    let model = ClaimsModel {
        triangle: tri.clone(),
        priors,
        retry_budget: cfg.retry_budget,
    };
    let observed = observed_summary(tri);
    Ok(ClaimsBindings {
        target: AbcTarget::new(model, weighting, cfg.s_draws, observed)?,
        schedule,
        kernel_family: KernelFamily::Gamma {
            spread: GammaSpread::RelativePerDim(
                [vec![cfg.kernel_spread_f; k], vec![cfg.kernel_spread_sigma; k]].concat(),
            ),
        },
        policy: PrcPolicy::quantile(cfg.q),
        mu,
        classical,
    })
}

/// Classical and posterior estimates side by side.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimsReport<F> {
    pub classical: ChainLadderParams<F>,
    pub posterior_f: Vec<F>,
    pub posterior_sigma: Vec<F>,
    pub classical_prediction: ChainLadderPrediction<F>,
    pub posterior_prediction: ChainLadderPrediction<F>,
    pub run: SamplerRun<F>,
}

pub fn run_claims_with<F: Scalar>(
    tri: &ClaimsTriangle<F>,
    cfg: &ClaimsConfig<F>,
    seed: u64,
    observer: impl FnMut(&ParticleSystem<F>, &StepDiagnostics<F>),
) -> Result<ClaimsReport<F>> {
    let b = claims_model_bindings(tri, cfg, seed)?;
    let run = run_prc_abc_with(
        &b.target,
        &b.schedule,
        &b.kernel_family,
        &b.policy,
        cfg.n,
        &b.mu,
        seed,
        observer,
    )?;
    let k = tri.last_index();
    let means = (0..2 * k)
        .map(|d| run.population.weighted_mean(d))
        .collect::<Result<Vec<F>>>()?;
    let posterior_f = means[..k].to_vec();
    let posterior_sigma = means[k..].to_vec();
    Ok(ClaimsReport {
        classical_prediction: chain_ladder_predict(tri, &b.classical.f)?,
        posterior_prediction: chain_ladder_predict(tri, &posterior_f)?,
        classical: b.classical,
        posterior_f,
        posterior_sigma,
        run,
    })
}

pub fn run_claims<F: Scalar>(tri: &ClaimsTriangle<F>, cfg: &ClaimsConfig<F>, seed: u64) -> Result<ClaimsReport<F>> {
    run_claims_with(tri, cfg, seed, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_ratio_column() {
        let tri = ClaimsTriangle::new(vec![vec![1.0, 2.0], vec![3.0]]).unwrap();
        assert_eq!(chain_ladder_factors(&tri), vec![2.0]);
        assert!(classical_chain_ladder(&tri).is_err());
    }

    #[test]
    fn triangle_validation() {
        assert!(ClaimsTriangle::new(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).is_err());
        assert!(ClaimsTriangle::new(vec![vec![1.0, -2.0], vec![3.0]]).is_err());
        assert!(ClaimsTriangle::<f64>::new(vec![vec![1.0]]).is_err());
    }

    #[test]
    fn unit_factors_give_zero_reserves() {
        let tri = reference_triangle();
        let p = chain_ladder_predict(&tri, &[1.0; 9]).unwrap();
        assert!(p.reserves.iter().all(|r| *r == 0.0));
        assert_eq!(p.completed[9].len(), 10);
    }

    #[test]
    fn csv_round_trip() {
        let tri = reference_triangle();
        let mut buf = Vec::new();
        tri.write_csv(&mut buf).unwrap();
        let back = ClaimsTriangle::<f64>::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, tri);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let bad = "accident_year,dev_0,dev_1\n0,1.0,2.0\n1,x\n";
        let err = ClaimsTriangle::<f64>::read_csv(bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let bad = "year,dev_0\n";
        assert!(ClaimsTriangle::<f64>::read_csv(bad.as_bytes()).is_err());
    }

    #[test]
    fn residual_round_trip() {
        let tri = reference_triangle();
        let params = classical_chain_ladder(&tri).unwrap();
        let eps = conditional_residuals(&tri, &params).unwrap();
        assert_eq!(eps.len(), 45);
        let back = recursion_with_residuals(&tri, &params, &eps).unwrap();
        for (a, b) in back.flatten().iter().zip(tri.flatten()) {
            assert!((a - b).abs() <= 1e-9 * b);
        }
    }

    #[test]
    fn tiny_sigma_bootstrap_follows_the_recursion() {
        let f: Vec<f64> = vec![1.5, 1.1, 1.05, 1.01];
        let sigma = vec![1e-9; 4];
        let truth = ChainLadderParams::new(f.clone(), sigma).unwrap();
        let first = [100.0, 120.0, 90.0, 110.0, 105.0];
        let mut rng = StreamFactory::new(1).stream(0, Lane::User, 0);
        let rows: Vec<Vec<f64>> = first
            .iter()
            .enumerate()
            .map(|(i, c0)| {
                let mut row = vec![*c0];
                for j in 0..4 - i {
                    let c = row[j];
                    row.push(f[j] * c + 1e-9 * c.sqrt() * f64::standard_normal(&mut rng));
                }
                row
            })
            .collect();
        let tri = ClaimsTriangle::new(rows).unwrap();
        let sample = bootstrap_simulate(&tri, &truth, 100, &mut rng).unwrap();
        for (i, row) in sample.triangle.rows().iter().enumerate() {
            let mut c = first[i];
            for (j, v) in row.iter().enumerate().skip(1) {
                c *= f[j - 1];
                assert!((v - c).abs() < 1e-6, "{i},{j}: {v} vs {c}");
            }
        }
    }

    #[test]
    fn bootstrap_output_is_positive() {
        let tri = reference_triangle();
        let mut params = classical_chain_ladder(&tri).unwrap();
        for s in params.sigma.iter_mut() {
            *s *= 5.0;
        }
        let streams = StreamFactory::new(2);
        for k in 0..200 {
            let mut rng = streams.stream(0, Lane::User, k);
            if let Ok(s) = bootstrap_simulate(&tri, &params, 100, &mut rng) {
                assert!(s.triangle.flatten().iter().all(|c| *c > 0.0));
            }
        }
    }

    #[test]
    fn coincident_summaries_have_zero_distance() {
        let tri = reference_triangle();
        let sample = BootstrapSample {
            triangle: tri.clone(),
            residual_mean: 0.0,
            residual_sd: 1.0,
        };
        let d = Distance::mahalanobis_diagonal(&vec![2.0; 57]).unwrap();
        assert_eq!(claims_summary_and_distance(&tri, &sample, &d).unwrap(), 0.0);
        let wrong = Distance::mahalanobis_diagonal(&[1.0; 3]).unwrap();
        assert!(claims_summary_and_distance(&tri, &sample, &wrong).is_err());
    }

    #[test]
    fn priors_center_on_estimates() {
        let params = ChainLadderParams::<f64>::new(vec![1.5, 1.1], vec![2.0, 0.5]).unwrap();
        let p = ChainLadderPriors::centered(&params, 10.0).unwrap();
        assert!((p.f_shape[0] - 0.01).abs() < 1e-15);
        assert!((p.sigma_shape[0] - 2.01).abs() < 1e-12);
        for (a, b) in p.f_means().iter().zip(&params.f) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in p.sigma_means().iter().zip(&params.sigma) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(p.log_density(&[1.0, 1.0, -1.0, 1.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn product_gamma_density_matches_textbook_form() {
        let g = ProductGamma::with_means(&[2.0], 0.5).unwrap();
        // shape 4, scale 0.5
        let x = 1.7f64;
        let expected = 4.0 * 2f64.ln() + 3.0 * x.ln() - 2.0 * x - 6f64.ln();
        assert!((g.log_density(&[x]) - expected).abs() < 1e-12);
    }
}
