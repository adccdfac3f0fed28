//! Batch experiment runner for the PRC-ABC sampler.
//!
//! Every experiment expands into jobs (grid value × weighting kind ×
//! replication). Jobs run on a rayon pool, each with seed `seed + replication`,
//! and their rows are written in job order so the thread count never changes
//! the output.

pub mod args;
pub mod config;
pub mod summarize;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use smc_prc::models::chain_ladder::{
    reference_triangle, run_claims_with, ClaimsConfig, ClaimsReport, ClaimsTriangle, UNIT_DOLLARS,
};
use smc_prc::models::toy::{run_toy_with, ToyConfig};
use smc_prc::{ParticleSystem, SmcError, StepDiagnostics, WeightingKind};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("invalid experiment: {0}")]
    Spec(String),
    #[error("{0}")]
    Io(String),
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("{job}: {source}")]
    Engine { job: String, source: SmcError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    ToySweepQ,
    ToySweepS,
    ClaimsReserving,
    SingleRun,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::ToySweepQ => "toy_sweep_q",
            Experiment::ToySweepS => "toy_sweep_s",
            Experiment::ClaimsReserving => "claims_reserving",
            Experiment::SingleRun => "single_run",
        }
    }
}

pub const DEFAULT_Q_GRID: [f64; 9] = [0.0, 0.5, 0.75, 0.85, 0.9, 0.95, 0.99, 0.995, 0.999];
pub const DEFAULT_S_GRID: [usize; 4] = [1, 10, 50, 100];

pub fn weighting_name(kind: WeightingKind) -> &'static str {
    match kind {
        WeightingKind::Uniform => "uniform",
        WeightingKind::Gaussian => "gaussian",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub replications: usize,
    pub seed: u64,
    pub n: usize,
    pub q_grid: Vec<f64>,
    pub s_grid: Vec<usize>,
    pub weighting: Vec<WeightingKind>,
    /// Toy runs: Gaussian-scale tolerances. Claims: the full schedule.
    pub schedule: Option<Vec<f64>>,
    pub triangle: Option<PathBuf>,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub tau2: f64,
    pub prior_cov: f64,
    /// Leave `wallclock_ms` empty so reruns are byte-identical.
    pub wallclock: bool,
}

impl ExperimentSpec {
    pub fn defaults(experiment: Experiment) -> Self {
        let both = vec![WeightingKind::Uniform, WeightingKind::Gaussian];
        let base = Self {
            experiment,
            replications: 250,
            seed: 1,
            n: 1000,
            q_grid: DEFAULT_Q_GRID.to_vec(),
            s_grid: vec![1],
            weighting: both,
            schedule: None,
            triangle: None,
            out: PathBuf::from("out"),
            threads: None,
            tau2: 1.0,
            prior_cov: 10.0,
            wallclock: true,
        };
        match experiment {
            Experiment::ToySweepQ => base,
            Experiment::ToySweepS => Self {
                q_grid: vec![0.95],
                s_grid: DEFAULT_S_GRID.to_vec(),
                ..base
            },
            Experiment::SingleRun => Self {
                replications: 1,
                q_grid: vec![0.95],
                weighting: vec![WeightingKind::Gaussian],
                ..base
            },
            Experiment::ClaimsReserving => Self {
                replications: 1,
                n: 5000,
                q_grid: vec![0.0],
                weighting: vec![WeightingKind::Uniform],
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Spec(m.to_string()));
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.n < 2 {
            return bad("n must be at least 2");
        }
        if self.q_grid.is_empty() || self.s_grid.is_empty() || self.weighting.is_empty() {
            return bad("grids must be non-empty");
        }
        if self.q_grid.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return bad("q values must lie in [0, 1]");
        }
        if self.s_grid.contains(&0) {
            return bad("S values must be at least 1");
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1");
        }
        if !(self.tau2 > 0.0 && self.tau2.is_finite()) {
            return bad("tau2 must be positive");
        }
        if !(self.prior_cov > 0.0 && self.prior_cov.is_finite()) {
            return bad("prior-cov must be positive");
        }
        if self.triangle.is_some() && self.experiment != Experiment::ClaimsReserving {
            return bad("--triangle only applies to claims-reserving");
        }
        Ok(())
    }

    /// Jobs in output order: grid value, then weighting kind, then replication.
    pub fn jobs(&self) -> Vec<Job> {
        let grid: Vec<f64> = match self.experiment {
            Experiment::ToySweepS => self.s_grid.iter().map(|s| *s as f64).collect(),
            Experiment::ToySweepQ => self.q_grid.clone(),
            Experiment::SingleRun | Experiment::ClaimsReserving => vec![self.q_grid[0]],
        };
        let mut jobs = Vec::new();
        for &grid_value in &grid {
            for &weighting in &self.weighting {
                for replication in 0..self.replications {
                    jobs.push(Job {
                        grid_value,
                        weighting,
                        replication,
                    });
                }
            }
        }
        jobs
    }

    fn toy_config(&self, job: &Job) -> ToyConfig<f64> {
        let mut cfg = ToyConfig::new(job.weighting);
        cfg.n = self.n;
        cfg.tau2 = self.tau2;
        if let Some(s) = &self.schedule {
            cfg.schedule_gaussian = s.clone();
        }
        match self.experiment {
            Experiment::ToySweepS => {
                cfg.s_draws = job.grid_value as usize;
                cfg.q = self.q_grid[0];
            }
            _ => {
                cfg.s_draws = self.s_grid[0];
                cfg.q = job.grid_value;
            }
        }
        cfg
    }

    fn claims_config(&self, job: &Job) -> ClaimsConfig<f64> {
        let mut cfg = ClaimsConfig {
            n: self.n,
            weighting: job.weighting,
            s_draws: self.s_grid[0],
            q: job.grid_value,
            prior_cov: self.prior_cov,
            ..ClaimsConfig::default()
        };
        if let Some(s) = &self.schedule {
            cfg.schedule = s.clone();
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub grid_value: f64,
    pub weighting: WeightingKind,
    pub replication: usize,
}

impl Job {
    fn label(&self, exp: Experiment) -> String {
        format!(
            "{} {} grid={} rep={}",
            exp.name(),
            weighting_name(self.weighting),
            self.grid_value,
            self.replication
        )
    }
}

pub const CSV_HEADER: [&str; 13] = [
    "experiment",
    "weighting_kind",
    "grid_value",
    "replication",
    "step",
    "ess",
    "weight_variance",
    "mean_rejections",
    "attempts_total",
    "simulator_calls",
    "posterior_mean",
    "posterior_variance",
    "wallclock_ms",
];

/// One sampler step of one job. Posterior moments are of the first coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub experiment: Experiment,
    pub weighting: WeightingKind,
    pub grid_value: f64,
    pub replication: usize,
    pub step: usize,
    pub ess: f64,
    pub weight_variance: f64,
    pub mean_rejections: f64,
    pub attempts_total: u64,
    pub simulator_calls: u64,
    pub posterior_mean: f64,
    pub posterior_variance: f64,
    pub wallclock_ms: Option<u128>,
}

impl Row {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.experiment.name().to_string(),
            weighting_name(self.weighting).to_string(),
            self.grid_value.to_string(),
            self.replication.to_string(),
            self.step.to_string(),
            self.ess.to_string(),
            self.weight_variance.to_string(),
            self.mean_rejections.to_string(),
            self.attempts_total.to_string(),
            self.simulator_calls.to_string(),
            self.posterior_mean.to_string(),
            self.posterior_variance.to_string(),
            self.wallclock_ms.map(|w| w.to_string()).unwrap_or_default(),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct JobOutput {
    pub job: Job,
    pub rows: Vec<Row>,
    pub claims: Option<ClaimsReport<f64>>,
}

impl JobOutput {
    pub fn final_row(&self) -> &Row {
        self.rows.last().expect("a finished job has at least one step")
    }
}

fn step_row(
    spec: &ExperimentSpec,
    job: &Job,
    sys: &ParticleSystem<f64>,
    d: &StepDiagnostics<f64>,
    start: &Instant,
) -> Row {
    Row {
        experiment: spec.experiment,
        weighting: job.weighting,
        grid_value: job.grid_value,
        replication: job.replication,
        step: d.step,
        ess: d.ess,
        weight_variance: d.weight_variance,
        mean_rejections: d.mean_rejections_per_particle,
        attempts_total: d.attempts_total,
        simulator_calls: d.simulator_calls,
        posterior_mean: sys.weighted_mean(0).unwrap_or(f64::NAN),
        posterior_variance: sys.weighted_variance(0).unwrap_or(f64::NAN),
        wallclock_ms: spec.wallclock.then(|| start.elapsed().as_millis()),
    }
}

pub fn run_job(spec: &ExperimentSpec, job: &Job, triangle: &ClaimsTriangle<f64>) -> Result<JobOutput, SmcError> {
    let seed = spec.seed.wrapping_add(job.replication as u64);
    let start = Instant::now();
    let mut rows = Vec::new();
    let observer = |sys: &ParticleSystem<f64>, d: &StepDiagnostics<f64>| rows.push(step_row(spec, job, sys, d, &start));
    let claims = match spec.experiment {
        Experiment::ClaimsReserving => Some(run_claims_with(triangle, &spec.claims_config(job), seed, observer)?),
        _ => {
            run_toy_with(&spec.toy_config(job), seed, observer)?;
            None
        }
    };
    Ok(JobOutput {
        job: *job,
        rows,
        claims,
    })
}

fn load_triangle(spec: &ExperimentSpec) -> Result<ClaimsTriangle<f64>, CliError> {
    match &spec.triangle {
        Some(path) => ClaimsTriangle::from_path(path).map_err(|e| CliError::Io(e.to_string())),
        None => Ok(reference_triangle()),
    }
}

/// Runs every job; returns the outputs preceding the first failure (in job
/// order) together with that failure.
pub fn run_jobs(spec: &ExperimentSpec) -> Result<(Vec<JobOutput>, Option<CliError>), CliError> {
    spec.validate()?;
    let triangle = load_triangle(spec)?;
    let jobs = spec.jobs();
    let work =
        || -> Vec<Result<JobOutput, SmcError>> { jobs.par_iter().map(|job| run_job(spec, job, &triangle)).collect() };
    let results = match spec.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Spec(e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut done = Vec::with_capacity(results.len());
    for (job, res) in jobs.iter().zip(results) {
        match res {
            Ok(out) => done.push(out),
            Err(source) => {
                let err = CliError::Engine {
                    job: job.label(spec.experiment),
                    source,
                };
                return Ok((done, Some(err)));
            }
        }
    }
    Ok((done, None))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_rows<W: Write>(w: W, outputs: &[JobOutput], failure: Option<&CliError>) -> Result<(), CliError> {
    let csv_err = |e: csv::Error| CliError::Io(e.to_string());
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(CSV_HEADER).map_err(csv_err)?;
    for out in outputs {
        for row in &out.rows {
            wtr.write_record(row.record()).map_err(csv_err)?;
        }
    }
    if let Some(err) = failure {
        let mut status = vec![String::new(); CSV_HEADER.len()];
        status[0] = "#status".into();
        status[1] = "failed".into();
        status[2] = err.to_string();
        wtr.write_record(&status).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| CliError::Io(e.to_string()))
}

/// Classical and posterior values side by side: `f`, `sigma` (dollars),
/// per-year ultimate and reserve (dollars), then the total reserve.
pub fn write_claims_report<W: Write>(w: W, outputs: &[JobOutput]) -> Result<(), CliError> {
    let csv_err = |e: csv::Error| CliError::Io(e.to_string());
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["replication", "quantity", "index", "classical", "posterior"])
        .map_err(csv_err)?;
    let sigma_scale = UNIT_DOLLARS.sqrt();
    for out in outputs {
        let Some(rep) = &out.claims else { continue };
        let r = out.job.replication.to_string();
        let mut put =
            |q: &str, i: String, c: f64, p: f64| wtr.write_record([r.as_str(), q, &i, &c.to_string(), &p.to_string()]);
        for j in 0..rep.posterior_f.len() {
            put("f", j.to_string(), rep.classical.f[j], rep.posterior_f[j]).map_err(csv_err)?;
        }
        for j in 0..rep.posterior_sigma.len() {
            put(
                "sigma",
                j.to_string(),
                rep.classical.sigma[j] * sigma_scale,
                rep.posterior_sigma[j] * sigma_scale,
            )
            .map_err(csv_err)?;
        }
        let (cp, pp) = (&rep.classical_prediction, &rep.posterior_prediction);
        for i in 0..cp.reserves.len() {
            let last = cp.completed[i].len() - 1;
            put(
                "ultimate",
                i.to_string(),
                cp.completed[i][last] * UNIT_DOLLARS,
                pp.completed[i][last] * UNIT_DOLLARS,
            )
            .map_err(csv_err)?;
        }
        for i in 0..cp.reserves.len() {
            put(
                "reserve",
                i.to_string(),
                cp.reserves[i] * UNIT_DOLLARS,
                pp.reserves[i] * UNIT_DOLLARS,
            )
            .map_err(csv_err)?;
        }
        put(
            "total_reserve",
            String::new(),
            cp.total_reserve * UNIT_DOLLARS,
            pp.total_reserve * UNIT_DOLLARS,
        )
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentFiles {
    pub rows: PathBuf,
    pub report: Option<PathBuf>,
}

/// Runs the experiment and writes `<out>/<experiment>.csv` (plus
/// `<out>/claims_reserving_report.csv` for the claims model). On engine
/// failure the rows finished so far are kept, followed by a status row, and
/// the error is returned.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentFiles, CliError> {
    let (outputs, failure) = run_jobs(spec)?;
    std::fs::create_dir_all(&spec.out).map_err(io_err(&spec.out))?;
    let rows = spec.out.join(format!("{}.csv", spec.experiment.name()));
    let file = File::create(&rows).map_err(io_err(&rows))?;
    write_rows(BufWriter::new(file), &outputs, failure.as_ref())?;
    let report = if spec.experiment == Experiment::ClaimsReserving {
        let path = spec.out.join("claims_reserving_report.csv");
        let file = File::create(&path).map_err(io_err(&path))?;
        write_claims_report(BufWriter::new(file), &outputs)?;
        Some(path)
    } else {
        None
    };
    match failure {
        Some(err) => Err(err),
        None => Ok(ExperimentFiles { rows, report }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(exp: Experiment) -> ExperimentSpec {
        ExperimentSpec {
            n: 50,
            replications: 2,
            ..ExperimentSpec::defaults(exp)
        }
    }

    #[test]
    fn default_sweep_q_shape() {
        let spec = ExperimentSpec::defaults(Experiment::ToySweepQ);
        assert_eq!(spec.jobs().len(), 9 * 2 * 250);
        assert_eq!(spec.n, 1000);
    }

    #[test]
    fn job_order_is_grid_kind_replication() {
        let mut spec = small(Experiment::ToySweepS);
        spec.s_grid = vec![1, 10];
        let jobs = spec.jobs();
        assert_eq!(jobs.len(), 8);
        assert_eq!((jobs[0].grid_value, jobs[0].replication), (1.0, 0));
        assert_eq!((jobs[1].grid_value, jobs[1].replication), (1.0, 1));
        assert_eq!(jobs[2].weighting, WeightingKind::Gaussian);
        assert_eq!(jobs[4].grid_value, 10.0);
    }

    #[test]
    fn validation() {
        let ok = small(Experiment::ToySweepQ);
        assert!(ok.validate().is_ok());
        for broken in [
            ExperimentSpec { n: 1, ..ok.clone() },
            ExperimentSpec {
                replications: 0,
                ..ok.clone()
            },
            ExperimentSpec {
                q_grid: vec![],
                ..ok.clone()
            },
            ExperimentSpec {
                q_grid: vec![1.5],
                ..ok.clone()
            },
            ExperimentSpec {
                s_grid: vec![0],
                ..ok.clone()
            },
            ExperimentSpec {
                threads: Some(0),
                ..ok.clone()
            },
            ExperimentSpec {
                triangle: Some("t.csv".into()),
                ..ok.clone()
            },
        ] {
            assert!(matches!(broken.validate(), Err(CliError::Spec(_))), "{broken:?}");
        }
    }

    #[test]
    fn toy_rows_and_attempt_identity() {
        let spec = ExperimentSpec {
            q_grid: vec![0.5],
            ..small(Experiment::ToySweepQ)
        };
        let (outs, failure) = run_jobs(&spec).unwrap();
        assert!(failure.is_none());
        assert_eq!(outs.len(), 4);
        for out in &outs {
            assert_eq!(out.rows.len(), 10);
            for r in &out.rows {
                assert!(r.ess >= 1.0 - 1e-9 && r.ess <= 50.0 + 1e-9);
                assert!(r.mean_rejections >= 0.0);
                let implied = 50.0 * (1.0 + r.mean_rejections);
                assert!((implied - r.attempts_total as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn failure_keeps_earlier_rows_and_adds_status() {
        let spec = ExperimentSpec {
            // a tolerance of zero under uniform weighting accepts nothing
            schedule: Some(vec![f64::INFINITY, 0.0]),
            weighting: vec![WeightingKind::Uniform],
            q_grid: vec![0.5],
            replications: 1,
            ..small(Experiment::ToySweepQ)
        };
        let (outs, failure) = run_jobs(&spec).unwrap();
        assert!(outs.is_empty());
        let failure = failure.expect("zero tolerance must fail");
        let mut buf = Vec::new();
        write_rows(&mut buf, &outs, Some(&failure)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let last = text.lines().last().unwrap();
        assert!(last.starts_with("#status,failed,"), "{last}");
    }
}
