//! Command-line surface. Precedence: flag, then config file, then
//! `SMC_PRC_THREADS` (threads only), then the experiment defaults.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use smc_prc::WeightingKind;

use crate::config::{parse_f64_list, parse_usize_list, read_config, ConfigMap};
use crate::summarize::{summarize, write_summary};
use crate::{run_experiment, CliError, Experiment, ExperimentSpec};

pub const THREADS_ENV: &str = "SMC_PRC_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "smc-prc",
    version,
    about = "SMC sampler with partial rejection control: experiment runner"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep the PRC quantile level q on the toy model.
    ToySweepQ(RunArgs),
    /// Sweep the number of simulator draws S on the toy model.
    ToySweepS(RunArgs),
    /// Posterior for the chain-ladder claims model.
    ClaimsReserving(RunArgs),
    /// One toy run.
    SingleRun(RunArgs),
    /// Median and IQR of final-step diagnostics per grid point.
    Summarize {
        input: PathBuf,
        /// Output CSV (default: `<input stem>_summary.csv` next to the input).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingChoice {
    Uniform,
    Gaussian,
    Both,
}

impl WeightingChoice {
    fn kinds(self) -> Vec<WeightingKind> {
        match self {
            WeightingChoice::Uniform => vec![WeightingKind::Uniform],
            WeightingChoice::Gaussian => vec![WeightingKind::Gaussian],
            WeightingChoice::Both => vec![WeightingKind::Uniform, WeightingKind::Gaussian],
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// `key = value` file using the long flag names as keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated PRC quantile levels.
    #[arg(long)]
    pub q_grid: Option<String>,
    /// Comma-separated simulator draw counts.
    #[arg(long)]
    pub s_grid: Option<String>,
    #[arg(long, value_enum)]
    pub weighting: Option<WeightingChoice>,
    /// Comma-separated tolerances, starting with `inf`.
    #[arg(long)]
    pub schedule: Option<String>,
    /// Cumulative claims triangle CSV (claims-reserving only).
    #[arg(long)]
    pub triangle: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Gaussian kernel variance (toy model).
    #[arg(long)]
    pub tau2: Option<f64>,
    /// Coefficient of variation of the claims priors.
    #[arg(long)]
    pub prior_cov: Option<f64>,
    /// Leave the wallclock column empty.
    #[arg(long)]
    pub no_wallclock: bool,
}

fn from_flag<T>(
    flag: &Option<String>,
    name: &str,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<Option<T>, CliError> {
    flag.as_deref()
        .map(|s| parse(s).map_err(|e| CliError::Spec(format!("--{name}: {e}"))))
        .transpose()
}

fn from_config<T>(
    cfg: &ConfigMap,
    key: &str,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<Option<T>, CliError> {
    match cfg.get(key) {
        None => Ok(None),
        Some((value, line)) => parse(value).map(Some).map_err(|message| CliError::Config {
            line: *line,
            message: format!("{key}: {message}"),
        }),
    }
}

fn parse_scalar<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| e.to_string())
}

fn parse_weighting(s: &str) -> Result<WeightingChoice, String> {
    WeightingChoice::from_str(s, true)
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("`{other}` is not a boolean")),
    }
}

impl RunArgs {
    /// Merges flags, config file and environment over the experiment defaults.
    pub fn resolve(&self, experiment: Experiment, env_threads: Option<String>) -> Result<ExperimentSpec, CliError> {
        let cfg = match &self.config {
            Some(path) => read_config(path)?,
            None => ConfigMap::new(),
        };
        let mut spec = ExperimentSpec::defaults(experiment);
        if let Some(v) = self.n.or(from_config(&cfg, "n", parse_scalar)?) {
            spec.n = v;
        }
        if let Some(v) = self.replications.or(from_config(&cfg, "replications", parse_scalar)?) {
            spec.replications = v;
        }
        if let Some(v) = self.seed.or(from_config(&cfg, "seed", parse_scalar)?) {
            spec.seed = v;
        }
        if let Some(v) =
            from_flag(&self.q_grid, "q-grid", parse_f64_list)?.or(from_config(&cfg, "q-grid", parse_f64_list)?)
        {
            spec.q_grid = v;
        }
        if let Some(v) =
            from_flag(&self.s_grid, "s-grid", parse_usize_list)?.or(from_config(&cfg, "s-grid", parse_usize_list)?)
        {
            spec.s_grid = v;
        }
        if let Some(v) = self.weighting.or(from_config(&cfg, "weighting", parse_weighting)?) {
            spec.weighting = v.kinds();
        }
        if let Some(v) =
            from_flag(&self.schedule, "schedule", parse_f64_list)?.or(from_config(&cfg, "schedule", parse_f64_list)?)
        {
            spec.schedule = Some(v);
        }
        if let Some(v) = self
            .triangle
            .clone()
            .or(from_config(&cfg, "triangle", |s| Ok(PathBuf::from(s)))?)
        {
            spec.triangle = Some(v);
        }
        if let Some(v) = self.out.clone().or(from_config(&cfg, "out", |s| Ok(PathBuf::from(s)))?) {
            spec.out = v;
        }
        if let Some(v) = self.tau2.or(from_config(&cfg, "tau2", parse_scalar)?) {
            spec.tau2 = v;
        }
        if let Some(v) = self.prior_cov.or(from_config(&cfg, "prior-cov", parse_scalar)?) {
            spec.prior_cov = v;
        }
        spec.wallclock = !(self.no_wallclock || from_config(&cfg, "no-wallclock", parse_bool)?.unwrap_or(false));
        let env = match env_threads {
            Some(s) => Some(
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| CliError::Spec(format!("{THREADS_ENV}: {e}")))?,
            ),
            None => None,
        };
        spec.threads = self.threads.or(from_config(&cfg, "threads", parse_scalar)?).or(env);
        spec.validate()?;
        Ok(spec)
    }
}

/// Executes a parsed command line and returns a message for the user.
pub fn execute(cli: Cli) -> Result<String, CliError> {
    let env_threads = std::env::var(THREADS_ENV).ok();
    let (experiment, args) = match cli.command {
        Command::Summarize { input, out } => {
            let rows = summarize(&input)?;
            let out = out.unwrap_or_else(|| {
                let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("experiment");
                input.with_file_name(format!("{stem}_summary.csv"))
            });
            let file = std::fs::File::create(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
            write_summary(std::io::BufWriter::new(file), &rows)?;
            return Ok(format!("wrote {}", out.display()));
        }
        Command::ToySweepQ(a) => (Experiment::ToySweepQ, a),
        Command::ToySweepS(a) => (Experiment::ToySweepS, a),
        Command::ClaimsReserving(a) => (Experiment::ClaimsReserving, a),
        Command::SingleRun(a) => (Experiment::SingleRun, a),
    };
    let spec = args.resolve(experiment, env_threads)?;
    let files = run_experiment(&spec)?;
    let mut msg = format!("wrote {}", files.rows.display());
    if let Some(report) = files.report {
        msg.push_str(&format!(" and {}", report.display()));
    }
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("smc-prc").chain(args.iter().copied())).unwrap()
    }

    fn run_args(cli: Cli) -> RunArgs {
        match cli.command {
            Command::ToySweepQ(a) | Command::ToySweepS(a) | Command::ClaimsReserving(a) | Command::SingleRun(a) => a,
            Command::Summarize { .. } => panic!("not a run command"),
        }
    }

    #[test]
    fn flags_parse() {
        let a = run_args(parse(&[
            "toy-sweep-q",
            "--n",
            "20",
            "--q-grid",
            "0,0.5",
            "--weighting",
            "gaussian",
        ]));
        let spec = a.resolve(Experiment::ToySweepQ, None).unwrap();
        assert_eq!(spec.n, 20);
        assert_eq!(spec.q_grid, vec![0.0, 0.5]);
        assert_eq!(spec.weighting, vec![WeightingKind::Gaussian]);
        assert_eq!(spec.replications, 250);
    }

    #[test]
    fn flags_beat_config_and_config_beats_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "n = 30\nseed = 9\nthreads = 2\n").unwrap();
        let a = run_args(parse(&["single-run", "--config", path.to_str().unwrap(), "--n", "40"]));
        let spec = a.resolve(Experiment::SingleRun, Some("5".into())).unwrap();
        assert_eq!((spec.n, spec.seed, spec.threads), (40, 9, Some(2)));

        let a = run_args(parse(&["single-run"]));
        assert_eq!(
            a.resolve(Experiment::SingleRun, Some("3".into())).unwrap().threads,
            Some(3)
        );
        assert!(a.resolve(Experiment::SingleRun, Some("x".into())).is_err());
    }

    #[test]
    fn bad_config_value_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "n = 30\nq_grid = 0, zero\n").unwrap();
        let a = run_args(parse(&["toy-sweep-q", "--config", path.to_str().unwrap()]));
        match a.resolve(Experiment::ToySweepQ, None) {
            Err(CliError::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
