use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use corrspec::budget::Budget;
use corrspec::ensembles::{EnsembleSpec, ModelArgs, ModelRegistry, VDist};
use corrspec::fk::{classify_sentence_edges, graph_of, enumerate_fk_classes, fk_syllabify, Word};
use corrspec::harness::{self, ExperimentConfig, ExperimentRegistry, SpikeConfig};
use corrspec::linear_ensemble::{check_q_conditions, compute_bvh_params, PsiDist, QFamily, QThresholds};
use corrspec::pool::Workers;
use corrspec::rng::stream;
use corrspec::wick::{exact_trace_moment, mc_trace_moment, MomentMethod};
use corrspec::Error;

#[derive(Parser)]
#[command(name = "corrspec", version, about = "Correlated Gaussian random matrix experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one matrix and print it as JSON.
    Sample {
        #[command(flatten)]
        model: ModelOpts,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Monte Carlo samples of the top eigenvalue of n^{-1/2} X.
    EigMc {
        #[command(flatten)]
        model: ModelOpts,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Spectra against the semicircle law.
    Esd {
        #[command(flatten)]
        model: ModelOpts,
        #[command(flatten)]
        run: RunOpts,
        #[arg(long, default_value_t = 50)]
        bins: usize,
    },
    /// Exact and Monte Carlo trace moments.
    Moments {
        #[command(subcommand)]
        mode: MomentsMode,
    },
    /// FK word combinatorics.
    Fk {
        #[command(subcommand)]
        mode: FkMode,
    },
    /// Fluctuations of the top eigenvalue of the spiked model.
    Fluct {
        #[command(flatten)]
        model: ModelOpts,
        #[command(flatten)]
        run: RunOpts,
        /// Spike strength lambda = coef * n^exponent.
        #[arg(long)]
        lambda_exponent: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        lambda_coef: f64,
        /// Spike strength given directly.
        #[arg(long, conflicts_with = "lambda_exponent")]
        lambda: Option<f64>,
    },
    /// Universality parameters of a linear ensemble.
    BvhParams {
        #[command(flatten)]
        model: ModelOpts,
    },
    /// Build a sparse Rademacher family and check its conditions.
    RadConstruct {
        #[arg(long)]
        n: usize,
        #[arg(long = "N")]
        big_n: usize,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        q_seed: u64,
        /// Largest allowed norm deviation.
        #[arg(long, default_value_t = 0.1)]
        norm_dev_max: f64,
        #[arg(long, default_value_t = 10.0)]
        inner_prod_const: f64,
    },
    /// Run an experiment config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        workers: Option<Workers>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum MomentsMode {
    /// E Tr[(n^{-1/2} X)^{2k}] by the Wick formula.
    Exact {
        #[command(flatten)]
        model: ModelOpts,
        #[arg(long, required = true, num_args = 1..)]
        two_k: Vec<usize>,
        #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
        method: MethodArg,
    },
    /// Monte Carlo estimate of the same moment.
    Mc {
        #[command(flatten)]
        model: ModelOpts,
        #[arg(long, required = true, num_args = 1..)]
        two_k: Vec<usize>,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum FkMode {
    /// Syllabify a word and report its edge classes.
    Parse { word: String },
    /// Count FK sentence classes in one (k, l, m) cell.
    Enumerate {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        l: usize,
        #[arg(long)]
        m: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Auto,
    Naive,
    Reduced,
}

impl From<MethodArg> for MomentMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Auto => MomentMethod::Auto,
            MethodArg::Naive => MomentMethod::Naive,
            MethodArg::Reduced => MomentMethod::Reduced,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VDistArg {
    Rademacher,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum PsiArg {
    Rademacher,
    Uniform,
    Gaussian,
    TruncatedGaussian,
}

#[derive(Args)]
struct ModelOpts {
    /// iid, test-model, three-param, linear (or a variant name).
    #[arg(long, default_value = "iid")]
    model: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum)]
    v_dist: Option<VDistArg>,
    #[arg(long = "N")]
    big_n: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, value_enum)]
    psi_dist: Option<PsiArg>,
    #[arg(long, default_value_t = 3.0)]
    psi_cutoff: f64,
    #[arg(long)]
    q_seed: Option<u64>,
}

impl ModelOpts {
    fn spec(&self) -> corrspec::Result<EnsembleSpec> {
        let args = ModelArgs {
            n: self.n,
            epsilon: self.epsilon,
            gamma: self.gamma,
            v_dist: self.v_dist.map(|v| match v {
                VDistArg::Rademacher => VDist::Rademacher,
                VDistArg::Gaussian => VDist::Gaussian,
            }),
            big_n: self.big_n,
            p: self.p,
            psi_dist: self.psi_dist.map(|d| match d {
                PsiArg::Rademacher => PsiDist::Rademacher,
                PsiArg::Uniform => PsiDist::Uniform,
                PsiArg::Gaussian => PsiDist::Gaussian,
                PsiArg::TruncatedGaussian => PsiDist::TruncatedGaussian {
                    cutoff: self.psi_cutoff,
                },
            }),
            q_seed: self.q_seed,
        };
        ModelRegistry::with_defaults().spec(&self.model, &args)
    }
}

#[derive(Args)]
struct RunOpts {
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "auto")]
    workers: Workers,
    /// Directory for CSV tables and summary.json.
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
}

impl RunOpts {
    fn config(&self, experiment: &str, model: EnsembleSpec, spike: Option<SpikeConfig>, params: Value) -> ExperimentConfig {
        let Value::Object(params) = params else {
            unreachable!("params are built as objects")
        };
        ExperimentConfig {
            experiment: experiment.into(),
            model,
            spike,
            reps: self.reps,
            master_seed: self.seed,
            workers: self.workers,
            output_dir: self.output_dir.clone(),
            params,
        }
    }
}

fn run_config(config: &ExperimentConfig, budget: &Budget) -> corrspec::Result<Value> {
    let res = harness::run(config, &ExperimentRegistry::with_defaults(), budget)?;
    Ok(json!({
        "summary": res.summary,
        "artifacts": res.artifacts,
        "wall_time": res.wall_time,
    }))
}

fn execute(cmd: Command) -> anyhow::Result<Value> {
    let budget = Budget::from_env();
    let out = match cmd {
        Command::Sample { model, seed } => {
            let spec = model.spec()?;
            let m = spec.build()?;
            let x = m.sample(&mut stream(seed, "sample", 1));
            let n = x.n();
            let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| x.get(i, j)).collect()).collect();
            json!({"model": spec, "seed": seed, "matrix": rows})
        }
        Command::EigMc { model, run } => {
            let cfg = run.config("edge_histogram", model.spec()?, None, json!({}));
            run_config(&cfg, &budget)?
        }
        Command::Esd { model, run, bins } => {
            let params = json!({"histogram": {"bins": bins, "lo": -2.5, "hi": 2.5}});
            let cfg = run.config("esd", model.spec()?, None, params);
            run_config(&cfg, &budget)?
        }
        Command::Moments { mode } => match mode {
            MomentsMode::Exact { model, two_k, method } => {
                let m = model.spec()?.build()?;
                let mut rows = Vec::new();
                for tk in two_k {
                    rows.push(serde_json::to_value(exact_trace_moment(m.as_ref(), tk, method.into(), &budget)?)?);
                }
                Value::Array(rows)
            }
            MomentsMode::Mc { model, two_k, reps, seed } => {
                let m = model.spec()?.build()?;
                let mut rows = Vec::new();
                for tk in two_k {
                    let mut rng = stream(seed, &format!("moments_mc/{tk}"), 1);
                    let r = mc_trace_moment(m.as_ref(), tk, reps, &mut rng)?;
                    rows.push(json!({"n": m.n(), "two_k": tk, "value": r.mean, "stderr": r.std_err, "reps": r.reps}));
                }
                Value::Array(rows)
            }
        },
        Command::Fk { mode } => match mode {
            FkMode::Parse { word } => {
                let w: Word = word.parse()?;
                let s = fk_syllabify(&w);
                let classes = classify_sentence_edges(&s.words);
                let word_graph = graph_of(&w);
                json!({
                    "word": w,
                    "word_passages": word_graph.passages.iter().map(|(e, k)| json!({"edge": e, "passages": k})).collect::<Vec<_>>(),
                    "word_edge_classes": classify_sentence_edges(std::slice::from_ref(&w)),
                    "words": s.words,
                    "m": s.m(),
                    "weight": s.weight(),
                    "sentence_passages": s.graph.passages.iter().map(|(e, k)| json!({"edge": e, "passages": k})).collect::<Vec<_>>(),
                    "sentence_edge_classes": classes,
                    "identity_rhs": s.identity_rhs(),
                    "identity_holds": s.m() as i64 == s.identity_rhs(),
                    "violation": s.validate().err(),
                })
            }
            FkMode::Enumerate { k, l, m } => serde_json::to_value(enumerate_fk_classes(k, l, m, &budget)?)?,
        },
        Command::Fluct {
            model,
            run,
            lambda_exponent,
            lambda_coef,
            lambda,
        } => {
            let spike = SpikeConfig {
                lambda,
                coef: lambda_exponent.map(|_| lambda_coef),
                exponent: lambda_exponent,
                d_const: None,
            };
            if lambda.is_none() && lambda_exponent.is_none() {
                return Err(Error::invalid("lambda", "give --lambda or --lambda-exponent").into());
            }
            let cfg = run.config("fluct", model.spec()?, Some(spike), json!({}));
            run_config(&cfg, &budget)?
        }
        Command::BvhParams { model } => {
            let EnsembleSpec::LinearEnsemble(spec) = model.spec()? else {
                return Err(Error::invalid("model", "bvh-params needs --model linear").into());
            };
            serde_json::to_value(compute_bvh_params(&spec, &budget)?)?
        }
        Command::RadConstruct {
            n,
            big_n,
            p,
            epsilon,
            q_seed,
            norm_dev_max,
            inner_prod_const,
        } => {
            let fam = QFamily::new(n, big_n, p, q_seed)?;
            let ln_n = (n as f64).ln();
            let thresholds = QThresholds {
                epsilon,
                norm_dev_const: norm_dev_max * ln_n * ln_n,
                inner_prod_const,
            };
            let report = check_q_conditions(&fam, thresholds, &budget)?;
            json!({"family": fam, "report": report})
        }
        Command::Run {
            config,
            workers,
            output_dir,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(d) = output_dir {
                cfg.output_dir = d;
            }
            run_config(&cfg, &budget).with_context(|| format!("running {}", config.display()))?
        }
    };
    Ok(out)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(v) => {
            let mut out = std::io::stdout().lock();
            // a closed pipe downstream is not an error
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
