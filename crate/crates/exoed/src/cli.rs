//! Command-line front end. Exit codes: 0 success, 2 configuration or input
//! error, 3 solver failure, 4 failed global verification.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use exoed_core::design::{Criterion, Method};
use exoed_core::estimation::Noise;
use exoed_core::stats::{chi2_quantile, f_quantile};

use crate::config::{NoiseConfig, Overrides, RunConfig};
use crate::error::{ExoedError, Result};
use crate::{io, study};

#[derive(Debug, Parser)]
#[command(
    name = "exoed",
    version,
    about = "Optimal experiment design on exact confidence regions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one design and write design_<name>_<criterion>_<method>_N<n>.json.
    Design(RunArgs),
    /// Solve every configured row; writes table.csv and the design files.
    Table(RunArgs),
    /// Monte Carlo robustness of the designs at one sample count.
    Robustness {
        #[command(flatten)]
        run: RunArgs,
        /// Directory with design files from an earlier `table` run.
        #[arg(long)]
        designs: Option<PathBuf>,
    },
    /// CSV plot data of exact regions, ellipses, anchors and farthest pairs.
    PlotData {
        #[command(flatten)]
        run: RunArgs,
        /// Design to plot (flat, comma separated) instead of solving.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        u: Option<Vec<f64>>,
        /// Measured dataset (tau_index, u_1.., y_1..) to plot around its fit.
        #[arg(long, conflicts_with = "u")]
        data: Option<PathBuf>,
    },
    /// Chi-squared or Fisher quantile.
    Quantile {
        #[arg(long, value_enum)]
        dist: Distribution,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        dof: u32,
        /// Denominator degrees of freedom of the Fisher distribution.
        #[arg(long)]
        dof2: Option<u32>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Distribution {
    Chi2,
    F,
}

fn criterion(s: &str) -> std::result::Result<Criterion, String> {
    s.parse().map_err(|e: exoed_core::Error| e.to_string())
}

fn method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: exoed_core::Error| e.to_string())
}

fn constant(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    Ok((k.to_string(), v.parse().map_err(|_| format!("`{v}` is not a number"))?))
}

/// Flags shared by the solving subcommands; they override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub name: Option<String>,
    /// Built-in model: bod or second-order.
    #[arg(long)]
    pub model: Option<String>,
    /// Model constant, e.g. b0=-4.
    #[arg(long, value_parser = constant, allow_hyphen_values = true)]
    pub constant: Vec<(String, f64)>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub p_hat: Option<Vec<f64>>,
    /// Known noise standard deviation per output.
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    /// Design-time variance for an unknown noise level.
    #[arg(long)]
    pub s2: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_delimiter = ',', value_parser = criterion)]
    pub criterion: Option<Vec<Criterion>>,
    #[arg(long, value_delimiter = ',', value_parser = method)]
    pub method: Option<Vec<Method>>,
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Grid spacing of the D criterion.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Noise level of the simulated trials.
    #[arg(long, value_delimiter = ',')]
    pub trial_sigma: Option<Vec<f64>>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Write runtime_s = 0 so repeated runs give identical files.
    #[arg(long)]
    pub no_timing: bool,
}

impl RunArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            name: self.name.clone(),
            model: self.model.clone(),
            constants: self.constant.clone(),
            p_hat: self.p_hat.clone(),
            sigma: self.sigma.clone(),
            s2: self.s2,
            alpha: self.alpha,
            criteria: self.criterion.clone(),
            methods: self.method.clone(),
            n: self.n.clone(),
            epsilon: self.epsilon,
            seed: self.seed,
            output: self.out.clone(),
            trials: self.trials,
            trial_sigma: self.trial_sigma.clone(),
            restarts: self.restarts,
            max_iterations: self.max_iterations,
            no_timing: self.no_timing,
        }
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), &self.overrides())
    }
}

/// Runs one parsed command and returns its exit code. Output goes to stdout;
/// errors are returned for the caller to report.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Design(args) => {
            let cfg = args.resolve()?;
            let rows = cfg.rows();
            let [(m, c, n)] = rows[..] else {
                return Err(ExoedError::Config(format!(
                    "design needs exactly one criterion, method and N ({} rows given); use `table` for batches",
                    rows.len()
                )));
            };
            let r = study::solve(&cfg.problem(c, m, n)?, cfg.timing)?;
            io::create_dir(&cfg.output)?;
            let path = cfg.output.join(study::design_file_name(&cfg.name, m, c, n));
            io::write_json(&path, &r)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&r).map_err(|e| ExoedError::parse(&path, e))?
            );
            Ok(0)
        }
        Command::Table(args) => {
            let cfg = args.resolve()?;
            let table = study::run_case_study(&cfg)?;
            study::write_case_study(&table, &cfg.output)?;
            for r in &table.rows {
                match &r.outcome {
                    Ok(d) => println!(
                        "{:<12} {} N={} U*={:?} phi={:.6}",
                        r.method.name(),
                        r.criterion.name(),
                        r.n,
                        d.flat(),
                        d.objective_exact
                    ),
                    Err(f) => println!(
                        "{:<12} {} N={} failed: {}",
                        r.method.name(),
                        r.criterion.name(),
                        r.n,
                        f.message
                    ),
                }
            }
            Ok(table.exit_code())
        }
        Command::Robustness { run, designs } => {
            let cfg = run.resolve()?;
            let solved = study::robustness_designs(&cfg, designs.as_deref())?;
            io::create_dir(&cfg.output)?;
            if designs.is_none() {
                for (_, r) in &solved {
                    let path = cfg
                        .output
                        .join(study::design_file_name(&cfg.name, r.method, r.criterion, r.n));
                    io::write_json(&path, r)?;
                }
            }
            let list: Vec<_> = solved.into_iter().map(|(d, _)| d).collect();
            let seed = cfg.robustness.seed.unwrap_or(cfg.seed);
            let sigma = cfg.trial_sigma()?;
            let (report, trials) = study::robustness_study(&cfg, &list, cfg.robustness.trials, seed, &sigma)?;
            study::write_trials(&cfg.output.join("robustness.csv"), &trials)?;
            io::write_json(&cfg.output.join("robustness.json"), &report)?;
            for d in &report.designs {
                println!(
                    "{:<12} {} nominal={:.6} mean={:.6} var={:.3e} worst={:.6} failed={}",
                    d.method.name(),
                    d.criterion.name(),
                    d.nominal,
                    d.mean,
                    d.variance,
                    d.worst,
                    d.failed
                );
            }
            Ok(0)
        }
        Command::PlotData { run, u, data } => {
            let cfg = run.resolve()?;
            let dir = cfg.output.join("plots");
            if let Some(path) = data {
                let model = cfg.model()?;
                let noise = match &cfg.noise {
                    NoiseConfig::Known { sigma } => Noise::KnownSigma(sigma.clone()),
                    NoiseConfig::Unknown { .. } => Noise::UnknownVariance,
                };
                let ds = io::read_dataset(&path, model.num_inputs(), model.num_outputs(), noise)?;
                let (p, files) = study::export_dataset_plots(&cfg, ds, &dir)?;
                println!("fit p_hat = {p:?}; wrote {}", files.exact.display());
                return Ok(0);
            }
            if let Some(u) = u {
                let n_u = cfg.model()?.num_inputs();
                if u.is_empty() || u.len() % n_u != 0 {
                    return Err(ExoedError::Config("--u needs N * n_u values".into()));
                }
                let c = cfg.criteria[0];
                let m = cfg.methods[0];
                let problem = cfg.problem(
                    c,
                    if crate::config::applicable(m, c) {
                        m
                    } else {
                        Method::Classical
                    },
                    u.len() / n_u,
                )?;
                let files = study::export_region_plots(&cfg, &problem, &u, &dir)?;
                println!("wrote {}", files.exact.display());
                return Ok(0);
            }
            let mut code = 0;
            for (m, c, n) in cfg.rows() {
                let problem = cfg.problem(c, m, n)?;
                match study::solve(&problem, cfg.timing) {
                    Ok(r) => {
                        let files = study::export_region_plots(&cfg, &problem, &r.flat(), &dir)?;
                        println!("wrote {}", files.exact.display());
                    }
                    Err(e) => {
                        eprintln!("{} {} N={n}: {e}", m.name(), c.name());
                        code = code.max(e.exit_code());
                    }
                }
            }
            Ok(code)
        }
        Command::Quantile { dist, alpha, dof, dof2 } => {
            let q = match dist {
                Distribution::Chi2 => chi2_quantile(alpha, dof)?,
                Distribution::F => {
                    let d2 = dof2.ok_or_else(|| ExoedError::Config("the F quantile needs --dof2".into()))?;
                    f_quantile(alpha, dof, d2)?
                }
            };
            println!("{q}");
            Ok(0)
        }
    }
}
