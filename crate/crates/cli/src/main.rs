use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use supersim_core::coupling::{self, Coalescence};
use supersim_core::io::{self as out, FixedPointDump, SimulationSummary};
use supersim_core::meanfield::{self, MeanFieldState};
use supersim_core::oracle::{self, CappedChainSpec};
use supersim_core::simulator::{self, SamplingPlan, DEFAULT_INTERVAL};
use supersim_core::theory;
use supersim_core::verify::{self, Mode, Verdict};
use supersim_core::{ModelParams, QueueState};

#[derive(Parser)]
#[command(name = "supersim", version, about = "Supermarket-model simulation, coupling and verification")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Number of queues.
    #[arg(long, global = true, default_value_t = 1000)]
    n: usize,
    /// Arrival rate per queue, in (0, 1).
    #[arg(long, global = true, default_value_t = 0.7)]
    lambda: f64,
    /// Number of queues sampled per arrival.
    #[arg(long, global = true, default_value_t = 2)]
    d: usize,
    #[arg(long, global = true, env = "SUPERSIM_SEED", default_value_t = verify::DEFAULT_SEED)]
    seed: u64,
    /// Warm-up time before sampling (default 40 ln n / (1 - lambda)).
    #[arg(long, global = true)]
    warmup: Option<f64>,
    /// Time between snapshots.
    #[arg(long, global = true, default_value_t = DEFAULT_INTERVAL)]
    interval: f64,
    /// Snapshots, trials or replicas, depending on the command.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Time horizon (integration end, censoring horizon, grid end, ...).
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CoupleMode {
    /// `x` against `x` plus one customer at a uniform queue.
    Adjacent,
    /// Empty state against an independently warmed-up state.
    Path,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form predictions as JSON.
    Predict,
    /// Spaced snapshots of one trajectory started empty.
    Simulate,
    /// Coalescence times under shared streams.
    Couple {
        #[arg(long, value_enum, default_value_t = CoupleMode::Adjacent)]
        mode: CoupleMode,
    },
    /// Coupled mixing profile from the empty state.
    Mix {
        /// Grid spacing.
        #[arg(long, default_value_t = 0.25)]
        step: f64,
    },
    /// Integrate the mean-field ODE from the empty state.
    Meanfield {
        /// Truncation level (default: first level below 1e-12).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = meanfield::DEFAULT_DT)]
        dt: f64,
    },
    /// Exact stationary (or transient, with --horizon) law of the capped chain.
    Oracle {
        #[arg(long, default_value_t = 12)]
        cap: u32,
    },
    /// Run named acceptance checks.
    Verify {
        /// Check to run; repeatable. All checks when omitted.
        #[arg(long = "check")]
        checks: Vec<String>,
        /// Smaller sample sizes.
        #[arg(long)]
        quick: bool,
        /// List check names and exit.
        #[arg(long)]
        list: bool,
    },
}

fn writer(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn json<T: serde::Serialize>(c: &Common, value: &T) -> Result<()> {
    let mut w = writer(&c.out)?;
    out::write_json(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn params(c: &Common) -> Result<ModelParams> {
    Ok(ModelParams::new(c.n, c.lambda, c.d)?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let c = &cli.common;
    match &cli.command {
        Command::Predict => {
            let report = theory::prediction_report(c.n as u64, c.lambda, c.d)?;
            json(c, &report)?;
        }
        Command::Simulate => {
            let p = params(c)?;
            let warmup = c.warmup.unwrap_or_else(|| simulator::default_warmup(&p));
            let plan = SamplingPlan::new(warmup, c.interval, c.samples.unwrap_or(1000))?;
            let snaps = simulator::run_trajectory(&p, &QueueState::zeros(p.n), &plan, c.seed)?;
            let est = simulator::estimate_tail(&snaps)?;
            if est.warmup_suspect() {
                log::warn!("first and second half means differ (z = {:.2}): warm-up may be too short", est.warmup_z);
            }
            match c.format {
                Format::Csv => out::write_snapshots_csv(writer(&c.out)?, &snaps)?,
                Format::Json => json(c, &SimulationSummary::new(p, plan, &est))?,
            }
        }
        Command::Couple { mode } => {
            let p = params(c)?;
            let horizon = c.horizon.unwrap_or_else(|| coupling::default_censoring_horizon(&p));
            let trials = c.samples.unwrap_or(500);
            let samples: Vec<Coalescence> = match mode {
                CoupleMode::Adjacent => {
                    coupling::adjacent_coalescence_samples(&p, &QueueState::zeros(p.n), trials, c.seed, horizon)?
                }
                CoupleMode::Path => {
                    let warmup = c.warmup.unwrap_or_else(|| simulator::default_warmup(&p));
                    coupling::path_coalescence_samples(&p, trials, c.seed, warmup, horizon)?
                        .into_iter()
                        .map(|r| r.outcome)
                        .collect()
                }
            };
            let censored = samples.iter().filter(|s| s.time().is_none()).count();
            if censored > 0 {
                log::warn!("{censored} of {trials} trials censored at t = {horizon}");
            }
            match c.format {
                Format::Csv => out::write_coalescence_csv(writer(&c.out)?, &samples)?,
                Format::Json => json(c, &samples)?,
            }
        }
        Command::Mix { step } => {
            let p = params(c)?;
            if !(*step > 0.0) {
                bail!("--step must be positive");
            }
            let end = c.horizon.unwrap_or_else(|| verify::mixing_deadline(&p));
            let points = (end / step).floor() as usize;
            let grid: Vec<f64> = (0..=points).map(|i| i as f64 * step).collect();
            let profile = coupling::mixing_profile(&p, &grid, c.samples.unwrap_or(500), c.seed, c.warmup)?;
            if let Some(fit) = &profile.fit {
                log::info!("fitted decay rate {:.4} (R^2 = {:.4})", fit.rate, fit.r_squared);
            }
            match c.format {
                Format::Csv => out::write_mixing_csv(writer(&c.out)?, &profile)?,
                Format::Json => json(c, &profile)?,
            }
        }
        Command::Meanfield { k, dt } => {
            let k = k.unwrap_or_else(|| meanfield::default_truncation(c.lambda, c.d));
            match c.format {
                Format::Csv => {
                    let run = meanfield::integrate(
                        &MeanFieldState::zeros(k)?,
                        c.lambda,
                        c.d,
                        c.horizon.unwrap_or(50.0),
                        *dt,
                    )?;
                    log::info!("step-halving error {:.3e}", run.halving_error);
                    out::write_meanfield_csv(writer(&c.out)?, &run.trajectory)?;
                }
                Format::Json => {
                    let fp = meanfield::fixed_point(c.lambda, c.d, k)?;
                    let residual = meanfield::derivative(&fp, c.lambda, c.d)
                        .iter()
                        .map(|v| v.abs())
                        .fold(0.0, f64::max);
                    json(
                        c,
                        &FixedPointDump {
                            lambda: c.lambda,
                            d: c.d,
                            truncation: k,
                            values: fp.values().to_vec(),
                            residual,
                        },
                    )?;
                }
            }
        }
        Command::Oracle { cap } => {
            let spec = CappedChainSpec::new(c.n, c.lambda, c.d, *cap)?;
            let p = match c.horizon {
                Some(t) => oracle::transient(&spec, &vec![0; spec.n], t)?,
                None => {
                    let st = oracle::stationary(&spec)?;
                    log::info!(
                        "residual {:.2e}, boundary mass {:.2e} ({})",
                        st.residual,
                        st.boundary_mass,
                        st.method
                    );
                    st.pi
                }
            };
            match c.format {
                Format::Csv => out::write_distribution_csv(writer(&c.out)?, &spec, &p)?,
                Format::Json => json(
                    c,
                    &serde_json::json!({
                        "spec": spec,
                        "time": c.horizon,
                        "boundary_mass": oracle::boundary_mass(&spec, &p),
                        "tail": oracle::tail_fractions(&spec, &p),
                        "prob": p,
                    }),
                )?,
            }
        }
        Command::Verify { checks, quick, list } => {
            if *list {
                for info in &verify::CHECKS {
                    println!("{:<24} {}", info.name, info.summary);
                }
                return Ok(ExitCode::SUCCESS);
            }
            let names: Vec<String> = if checks.is_empty() {
                verify::check_names().map(String::from).collect()
            } else {
                checks.clone()
            };
            if let Some(bad) = names.iter().find(|n| !verify::check_names().any(|k| k == n.as_str())) {
                bail!(
                    "unknown check '{bad}'; known checks: {}",
                    verify::check_names().collect::<Vec<_>>().join(", ")
                );
            }
            let ctx = verify::Context::new(if *quick { Mode::Quick } else { Mode::Full }, c.seed);
            let mut verdicts: Vec<Verdict> = Vec::new();
            for name in &names {
                let v = verify::run_or_fail(name, &ctx);
                eprintln!("{}", v.line());
                verdicts.push(v);
            }
            let passed = verdicts.iter().filter(|v| v.passed).count();
            eprintln!("{passed}/{} checks passed", verdicts.len());
            if c.format == Format::Json || c.out.is_some() {
                json(c, &verdicts)?;
            }
            return Ok(if passed == verdicts.len() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            });
        }
    }
    Ok(ExitCode::SUCCESS)
}
