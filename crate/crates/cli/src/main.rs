use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use shiftpred::config::Config;
use shiftpred::data::{load_site_dataset, load_sites, load_target_covariates, write_sites_csv, Corpus};
use shiftpred::estimators::{OutcomeSource, WeightSource};
use shiftpred::harness::{self, HarnessConfig, Method, Scenario};
use shiftpred::rng::SeedTree;
use shiftpred::sim::{run_clt_experiment, simulate_corpus};
use shiftpred::{Error, Result};

#[derive(Parser)]
#[command(name = "shiftpred", version, about = "Generalization intervals across sites under random distribution shift")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override the root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the interval level alpha.
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated interval methods, e.g. IID,Const,WorstCaseKL.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
}

#[derive(Args, Clone)]
struct DataArgs {
    #[command(flatten)]
    common: Common,
    /// Multi-site CSV. When omitted the corpus is simulated from the
    /// `randshift_sim.corpus` configuration.
    #[arg(short, long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load, clean and harmonize a multi-site CSV.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Multi-site CSV to clean.
        #[arg(short, long)]
        data: PathBuf,
        /// Where to write the cleaned CSV.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Shift measures for every ordered site pair.
    Measure {
        #[command(flatten)]
        args: DataArgs,
        /// CSV with one row per ordered site pair.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Intervals for one source site and a target known by its covariates.
    Generalize {
        #[command(flatten)]
        common: Common,
        /// CSV with the full source data of one site and hypothesis.
        #[arg(long)]
        source: PathBuf,
        /// CSV with the target covariates. Other columns are ignored.
        #[arg(long)]
        target: PathBuf,
        /// Debug: replace the density ratio by unit weights.
        #[arg(long)]
        force_unit_weights: bool,
        /// Debug: replace the outcome model by zero.
        #[arg(long)]
        force_zero_outcome_model: bool,
        /// JSON output; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Evaluate every ordered pair of every hypothesis.
    Evaluate {
        #[command(flatten)]
        args: DataArgs,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Calibrate bounds on revealed data and evaluate the rest.
    Scenario {
        #[command(flatten)]
        args: DataArgs,
        /// over-study, over-site or over-both.
        #[arg(short, long)]
        scenario: String,
        /// Permutations of the reveal order; overrides the configuration.
        #[arg(long)]
        permutations: Option<usize>,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Random-shift simulator.
    #[command(subcommand)]
    Simulate(SimCommand),
}

#[derive(Subcommand)]
enum SimCommand {
    /// Monte-Carlo check of the random-shift central limit theorem.
    Clt {
        #[command(flatten)]
        common: Common,
        /// JSON report.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Simulate a multi-site corpus and write it as CSV.
    Corpus {
        #[command(flatten)]
        common: Common,
        /// CSV in the multi-site layout.
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.harness_cli.seed = seed;
        cfg.randshift_sim.clt.seed = seed;
        cfg.randshift_sim.corpus.seed = seed;
    }
    if let Some(a) = common.alpha {
        cfg.intervals.alpha = a;
    }
    if let Some(ms) = &common.methods {
        cfg.intervals.methods = ms.iter().map(|m| m.parse::<Method>()).collect::<Result<_>>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_corpus(cfg: &Config, data: Option<&Path>) -> Result<Corpus> {
    match data {
        Some(path) => {
            let sites = load_sites(path, &cfg.data_model.schema)?;
            Corpus::from_sites(sites, |id, s| cfg.data_model.estimand(id, s))
        }
        None => simulate_corpus(&cfg.randshift_sim.corpus),
    }
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| Error::io(p, e)),
        None => match writeln!(std::io::stdout().lock(), "{text}") {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
            _ => Ok(()),
        },
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { common, data, out } => {
            let cfg = load_config(&common)?;
            let sites = load_sites(&data, &cfg.data_model.schema)?;
            write_sites_csv(&out, &sites)?;
            let summary: Vec<_> = sites
                .iter()
                .map(|s| {
                    json!({
                        "hypothesis": s.hypothesis,
                        "site": s.site,
                        "n": s.n(),
                        "covariates": s.covariates,
                        "treatment": s.t.is_some(),
                    })
                })
                .collect();
            write_json(None, &json!(summary))
        }
        Command::Measure { args, out } => {
            let cfg = load_config(&args.common)?;
            let corpus = load_corpus(&cfg, args.data.as_deref())?;
            let hc = HarnessConfig {
                methods: vec![Method::Const],
                ..cfg.harness()
            };
            let pairs = harness::compute_pairs(&corpus, &hc)?;
            let rows: Vec<_> = corpus
                .hypotheses
                .iter()
                .zip(&pairs)
                .flat_map(|(h, hp)| hp.iter().map(move |p| p.measures(h)))
                .collect();
            harness::emit_measures(&rows, &out)
        }
        Command::Generalize {
            common,
            source,
            target,
            force_unit_weights,
            force_zero_outcome_model,
            out,
        } => {
            let cfg = load_config(&common)?;
            let src = load_site_dataset(&source, &cfg.data_model.schema)?;
            let tx = load_target_covariates(&target, &src.covariates)?;
            let estimand = cfg.data_model.estimand(&src.hypothesis, std::slice::from_ref(&src))?;
            let mut hc = cfg.harness();
            hc.methods.retain(|m| !matches!(m, Method::Oracle | Method::WorstCaseKl | Method::Adaptive));
            if force_unit_weights {
                hc.nuisance.weights = WeightSource::Unit;
            }
            if force_zero_outcome_model {
                hc.nuisance.outcome = OutcomeSource::Zero;
            }
            let seed = SeedTree::new(hc.seed).seed("generalize");
            let r = harness::generalize_pair(&src, &tx, &estimand, &hc, seed)?;
            let intervals: Vec<_> = r
                .intervals
                .iter()
                .map(|(m, iv)| json!({"method": m.name(), "lo": iv.lo, "hi": iv.hi, "width": iv.width()}))
                .collect();
            write_json(
                out.as_deref(),
                &json!({
                    "hypothesis": src.hypothesis,
                    "source": src.site,
                    "estimand": estimand,
                    "theta_source": r.theta_source,
                    "eb": r.eb,
                    "dr": r.dr,
                    "t_x": r.t_x,
                    "s_yx": r.s_yx,
                    "intervals": intervals,
                }),
            )
        }
        Command::Evaluate { args, out } => {
            let cfg = load_config(&args.common)?;
            let corpus = load_corpus(&cfg, args.data.as_deref())?;
            let result = harness::evaluate_direct(&corpus, &cfg.harness())?;
            for f in harness::emit_direct(&result, &out)? {
                log::info!("wrote {}", f.display());
            }
            let overall: Vec<_> = result
                .overall
                .iter()
                .map(|s| json!({"method": s.method.name(), "coverage": s.coverage, "mean_width": s.mean_width, "pairs": s.pairs}))
                .collect();
            write_json(None, &json!(overall))
        }
        Command::Scenario {
            args,
            scenario,
            permutations,
            out,
        } => {
            let mut cfg = load_config(&args.common)?;
            if let Some(p) = permutations {
                cfg.harness_cli.permutations = p;
            }
            let scenario: Scenario = scenario.parse()?;
            let mut hc = cfg.harness();
            if !hc.methods.contains(&Method::Adaptive) {
                hc.methods.push(Method::Adaptive);
            }
            let corpus = load_corpus(&cfg, args.data.as_deref())?;
            let result = harness::run_scenario(&corpus, scenario, &hc)?;
            harness::emit_scenario(&result, &out)?;
            Ok(())
        }
        Command::Simulate(SimCommand::Clt { common, out }) => {
            let cfg = load_config(&common)?;
            let exp = run_clt_experiment(&cfg.randshift_sim.clt)?;
            write_json(Some(&out), &serde_json::to_value(&exp.report)?)
        }
        Command::Simulate(SimCommand::Corpus { common, out }) => {
            let cfg = load_config(&common)?;
            let corpus = simulate_corpus(&cfg.randshift_sim.corpus)?;
            let sites: Vec<_> = corpus.sites().cloned().collect();
            write_sites_csv(&out, &sites)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
