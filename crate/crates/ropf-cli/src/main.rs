//! Command-line front end for the reduced optimal power flow toolkit.
//!
//! Subcommands cover the whole pipeline: `generate` labeled datasets,
//! `train` the two screening models, `predict` labels for a load profile,
//! `solve` one dispatch problem with any of the four methods, and `bench`
//! the methods head to head on a test dataset.
//!
//! Exit codes: 0 success, 2 usage error, 3 input-validation error,
//! 4 infeasible base problem. Failures also emit one machine-parsable
//! JSON line on stderr.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ropf_core::bench::{
    errors_csv, log_csv, report_csv, run_benchmark, BenchConfig, BenchError, Screening,
    REFERENCE_GEN_ERRORS_PCT, REFERENCE_LINE_ERRORS_PCT, REFERENCE_MAX_COST_GAP_PCT,
    REFERENCE_TIME_SAVING_PCT,
};
use ropf_core::bench::build_spec_from_predictions;
use ropf_core::datagen::{generate, read_dataset, write_dataset, GenConfig, GenError};
use ropf_core::gnn::{classify, predict_lines, predict_max_gens, train, GnnModel, Stage, TrainConfig};
use ropf_core::graph::{build_features, expand, normalize_adjacency};
use ropf_core::grid::{parse_case, validate, Network};
use ropf_core::lp::LpStatus;
use ropf_core::opf::{solve_with_fallback, LoadVector, Method, OpfSolution, RopfSpec, VerificationReport};

#[derive(Parser)]
#[command(name = "ropf", version, about = "Reduced optimal power flow toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Line,
    Gen,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Stage {
        match s {
            StageArg::Line => Stage::Line,
            StageArg::Gen => Stage::Gen,
        }
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::from_str(s)
}

fn parse_split(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected two comma-separated fractions, e.g. 0.9,0.1".into());
    }
    let train: f64 = parts[0].trim().parse().map_err(|_| format!("bad fraction {:?}", parts[0]))?;
    let val: f64 = parts[1].trim().parse().map_err(|_| format!("bad fraction {:?}", parts[1]))?;
    Ok((train, val))
}

#[derive(Subcommand)]
enum Command {
    /// Sample perturbed load profiles, solve the full dispatch problem for
    /// each, and write a labeled dataset.
    Generate {
        /// Grid case file (JSON).
        #[arg(long, value_name = "FILE")]
        case: PathBuf,
        /// Number of samples to generate.
        #[arg(long, value_name = "N")]
        samples: u64,
        /// Half-width of the multiplicative load perturbation band.
        #[arg(long, default_value_t = 0.10)]
        perturb: f64,
        /// Loading fraction above which a line is labeled congested.
        #[arg(long, default_value_t = 0.7)]
        tau: f64,
        /// Relative tolerance for the at-maximum generator label.
        #[arg(long, default_value_t = 1e-6)]
        eps_gen: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train,validation fractions (must sum to 1).
        #[arg(long, default_value = "0.9,0.1", value_parser = parse_split)]
        split: (f64, f64),
        /// Output dataset file (line-delimited JSON).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Draw one shared scale factor per sample instead of one per bus.
        #[arg(long)]
        global_scale: bool,
        /// Record wall-clock solve time per sample. Off by default so that
        /// regenerating with the same seed is byte-identical.
        #[arg(long)]
        timing: bool,
    },
    /// Train a screening model on a generated dataset.
    Train {
        /// Dataset file from `generate`.
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Which classifier to train: congested lines or at-max generators.
        #[arg(long, value_enum)]
        stage: StageArg,
        /// Trained line model (required for --stage gen, whose input
        /// features include the line model's predictions).
        #[arg(long, value_name = "FILE", required_if_eq("stage", "gen"))]
        line_model: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        /// Hidden width of every message-passing layer.
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Cap on the positive-class weight used to counter imbalance.
        #[arg(long, default_value_t = 50.0)]
        pos_weight_cap: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output model file (JSON). A `.history.csv` sidecar with the
        /// per-epoch loss/accuracy curves is written next to it.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Predict congested lines (and optionally at-max generators) for one
    /// load profile.
    Predict {
        #[arg(long, value_name = "FILE")]
        case: PathBuf,
        /// Trained line model.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Trained generator model; adds generator predictions.
        #[arg(long, value_name = "FILE")]
        gen_model: Option<PathBuf>,
        /// Load profile: JSON object mapping bus id to MW.
        #[arg(long, value_name = "FILE")]
        loads: PathBuf,
        /// Output predictions file (JSON).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Solve one dispatch problem with a chosen method.
    Solve {
        #[arg(long, value_name = "FILE")]
        case: PathBuf,
        /// Load profile (JSON object bus id -> MW); defaults to the case's
        /// base loads.
        #[arg(long, value_name = "FILE")]
        loads: Option<PathBuf>,
        /// fopf solves the full problem; ropfl/ropfg/ropflg screen with
        /// the models and fall back to the full problem on any violation.
        #[arg(long, value_parser = parse_method)]
        method: Method,
        /// Trained line model (required for ropfl, ropfg, and ropflg).
        #[arg(long, value_name = "FILE")]
        line_model: Option<PathBuf>,
        /// Trained generator model (required for ropfg and ropflg).
        #[arg(long, value_name = "FILE")]
        gen_model: Option<PathBuf>,
        /// Write the full solution and verification report as JSON.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Benchmark methods against each other on a test dataset.
    Bench {
        #[arg(long, value_name = "FILE")]
        case: PathBuf,
        /// Test dataset; every sample in the file is benchmarked.
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        line_model: PathBuf,
        #[arg(long, value_name = "FILE")]
        gen_model: PathBuf,
        /// Comma-separated list; must include fopf, the baseline.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "fopf,ropfl,ropfg,ropflg",
            value_parser = parse_method
        )]
        methods: Vec<Method>,
        /// Echoed into the metadata sidecar for provenance.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Aggregated report CSV. Screening-error and metadata sidecars
        /// are written next to it.
        #[arg(long, value_name = "FILE")]
        out_report: PathBuf,
        /// Per-sample log CSV.
        #[arg(long, value_name = "FILE")]
        out_log: PathBuf,
        /// Skip the timing pass; all time columns become 0 and outputs are
        /// byte-stable.
        #[arg(long)]
        no_timing: bool,
    },
}

enum Failure {
    Usage(String),
    Input(String),
    Infeasible(String),
}

impl Failure {
    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Input(_) => "input",
            Failure::Infeasible(_) => "infeasible",
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Input(_) => 3,
            Failure::Infeasible(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Input(m) | Failure::Infeasible(m) => m,
        }
    }
}

fn fail(failure: Failure) -> ! {
    let record = serde_json::json!({
        "error": failure.kind(),
        "message": failure.message(),
    });
    eprintln!("{record}");
    std::process::exit(failure.exit_code());
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                // Keep clap's human-readable block, then the machine line.
                let _ = e.print();
                fail(Failure::Usage(e.to_string()));
            }
            // Help and version go to stdout with exit 0.
            let _ = e.print();
            std::process::exit(0);
        }
    };
    if let Err(failure) = run(cli) {
        fail(failure);
    }
}

fn input<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Input(e.to_string())
}

fn load_case(path: &Path) -> Result<Network, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read case {}: {e}", path.display())))?;
    let net = parse_case(&text)
        .map_err(|e| Failure::Input(format!("case {}: {e}", path.display())))?;
    let report = validate(&net);
    if !report.is_valid() {
        let mut msg = format!("case {} is invalid:", path.display());
        for v in &report.violations {
            write!(msg, " [{}]", v).expect("string write");
        }
        return Err(Failure::Input(msg));
    }
    Ok(net)
}

fn load_model(path: &Path, expected: Stage) -> Result<GnnModel, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read model {}: {e}", path.display())))?;
    let model = GnnModel::from_json(&text)
        .map_err(|e| Failure::Input(format!("model {}: {e}", path.display())))?;
    if model.stage != expected {
        return Err(Failure::Input(format!(
            "model {} is a {} model, expected {}",
            path.display(),
            model.stage.as_str(),
            expected.as_str()
        )));
    }
    Ok(model)
}

fn load_loads(path: &Path) -> Result<LoadVector, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read loads {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Input(format!("loads {}: expected a JSON object mapping bus id to MW: {e}", path.display())))
}

fn base_loads(net: &Network) -> LoadVector {
    net.buses.iter().map(|b| (b.id, b.load_mw)).collect()
}

fn write_text(path: &Path, content: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Failure::Input(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, content)
        .map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))
}

fn status_str(status: LpStatus) -> &'static str {
    match status {
        LpStatus::Optimal => "optimal",
        LpStatus::Infeasible => "infeasible",
        LpStatus::Unbounded => "unbounded",
    }
}

fn history_csv(epochs: &[ropf_core::gnn::EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,train_accuracy,val_accuracy\n");
    for (i, e) in epochs.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{}",
            i, e.train_loss, e.val_loss, e.train_accuracy, e.val_accuracy
        )
        .expect("string write");
    }
    out
}

/// Predictions produced once per invocation for the reduced methods.
struct ScreeningOut {
    line_probs: BTreeMap<u32, f64>,
    line_labels: BTreeMap<u32, u8>,
    gen_probs: Option<BTreeMap<u32, f64>>,
    gen_labels: Option<BTreeMap<u32, u8>>,
}

fn screen(
    net: &Network,
    loads: &LoadVector,
    line_model: &GnnModel,
    gen_model: Option<&GnnModel>,
) -> Result<ScreeningOut, Failure> {
    let graph = expand(net);
    let a_hat = normalize_adjacency(&graph);
    let x1 = build_features(&graph, net, loads, None).map_err(input)?;
    let line_probs = predict_lines(line_model, &graph, &a_hat, &x1, net).map_err(input)?;
    let line_labels = classify(&line_probs, line_model.decision_threshold);
    let (gen_probs, gen_labels) = match gen_model {
        Some(gen) => {
            let x2 = build_features(&graph, net, loads, Some(&line_probs)).map_err(input)?;
            let probs = predict_max_gens(gen, &graph, &a_hat, &x2, net, false).map_err(input)?;
            let labels = classify(&probs, gen.decision_threshold);
            (Some(probs), Some(labels))
        }
        None => (None, None),
    };
    Ok(ScreeningOut { line_probs, line_labels, gen_probs, gen_labels })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate {
            case,
            samples,
            perturb,
            tau,
            eps_gen,
            seed,
            split,
            out,
            global_scale,
            timing,
        } => {
            let net = load_case(&case)?;
            let config = GenConfig {
                n_samples: samples,
                perturb,
                tau,
                eps_gen,
                seed,
                split_fractions: split,
                global_scale,
                record_timing: timing,
            };
            let dataset = generate(&net, &config).map_err(|e| match e {
                GenError::BaseInfeasible(_) | GenError::TooManyRedraws { .. } => {
                    Failure::Infeasible(e.to_string())
                }
                GenError::BadSplitFractions(..) => Failure::Usage(e.to_string()),
                GenError::Opf(_) => input(e),
            })?;
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent).map_err(|e| {
                        Failure::Input(format!("cannot create {}: {e}", parent.display()))
                    })?;
                }
            }
            write_dataset(&dataset, &out).map_err(input)?;
            let n_train = dataset.split_samples(ropf_core::datagen::Split::Train).len();
            let n_val = dataset.samples.len() - n_train;
            println!(
                "generated {} samples (train {}, val {}) for case {} with {} redraws -> {}",
                dataset.samples.len(),
                n_train,
                n_val,
                net.name,
                dataset.header.redraws,
                out.display()
            );
            if dataset.header.redraw_warning {
                println!(
                    "warning: {} redraws exceed 10% of the sample count; the perturbation \
                     band strains feasibility on this case",
                    dataset.header.redraws
                );
            }
            Ok(())
        }

        Command::Train {
            data,
            stage,
            line_model,
            epochs,
            hidden,
            layers,
            lr,
            pos_weight_cap,
            seed,
            out,
        } => {
            let dataset = read_dataset(&data).map_err(input)?;
            let stage = Stage::from(stage);
            let line = match (stage, &line_model) {
                (Stage::Gen, Some(path)) => Some(load_model(path, Stage::Line)?),
                _ => None,
            };
            let mut config = TrainConfig::new(stage, seed);
            config.epochs = epochs;
            config.hidden_dim = hidden;
            config.n_layers = layers;
            config.learning_rate = lr;
            config.pos_weight_cap = pos_weight_cap;
            let (model, history) = train(&config, &dataset, line.as_ref()).map_err(input)?;
            write_text(&out, &model.to_json())?;
            let history_path = out.with_extension("history.csv");
            let curve = history_csv(&history.epochs);
            write_text(&history_path, &curve)?;
            print!("{curve}");
            let last = history.epochs.last();
            println!(
                "trained {} model: {} epochs, positive-class weight {}, {} train / {} val \
                 samples, final train accuracy {}, val accuracy {} -> {}",
                stage.as_str(),
                history.epochs.len(),
                history.pos_weight,
                history.n_train,
                history.n_val,
                last.map_or(0.0, |e| e.train_accuracy),
                last.map_or(0.0, |e| e.val_accuracy),
                out.display()
            );
            Ok(())
        }

        Command::Predict { case, model, gen_model, loads, out } => {
            let net = load_case(&case)?;
            let loads = load_loads(&loads)?;
            let line = load_model(&model, Stage::Line)?;
            let gen = gen_model.as_deref().map(|p| load_model(p, Stage::Gen)).transpose()?;
            let screening = screen(&net, &loads, &line, gen.as_ref())?;

            #[derive(Serialize)]
            struct PredictionsDoc {
                case: String,
                line_decision_threshold: f64,
                line_probs: BTreeMap<u32, f64>,
                line_labels: BTreeMap<u32, u8>,
                #[serde(skip_serializing_if = "Option::is_none")]
                gen_decision_threshold: Option<f64>,
                #[serde(skip_serializing_if = "Option::is_none")]
                gen_probs: Option<BTreeMap<u32, f64>>,
                #[serde(skip_serializing_if = "Option::is_none")]
                gen_labels: Option<BTreeMap<u32, u8>>,
            }
            let n_lines = screening.line_labels.values().filter(|&&v| v == 1).count();
            let n_gens = screening
                .gen_labels
                .as_ref()
                .map(|m| m.values().filter(|&&v| v == 1).count());
            let doc = PredictionsDoc {
                case: net.name.clone(),
                line_decision_threshold: line.decision_threshold,
                line_probs: screening.line_probs,
                line_labels: screening.line_labels,
                gen_decision_threshold: gen.as_ref().map(|g| g.decision_threshold),
                gen_probs: screening.gen_probs,
                gen_labels: screening.gen_labels,
            };
            let mut text = serde_json::to_string_pretty(&doc).expect("predictions serialize");
            text.push('\n');
            write_text(&out, &text)?;
            match n_gens {
                Some(g) => println!(
                    "predicted {} congested lines and {} at-max generators -> {}",
                    n_lines,
                    g,
                    out.display()
                ),
                None => println!("predicted {} congested lines -> {}", n_lines, out.display()),
            }
            Ok(())
        }

        Command::Solve { case, loads, method, line_model, gen_model, out } => {
            let net = load_case(&case)?;
            let loads = match loads {
                Some(path) => load_loads(&path)?,
                None => base_loads(&net),
            };
            let needs_line = method != Method::Fopf;
            let needs_gen = matches!(method, Method::Ropfg | Method::Ropflg);
            if needs_line && line_model.is_none() {
                return Err(Failure::Usage(format!("method {method} requires --line-model")));
            }
            if needs_gen && gen_model.is_none() {
                return Err(Failure::Usage(format!("method {method} requires --gen-model")));
            }
            let spec = if method == Method::Fopf {
                RopfSpec::full(&net)
            } else {
                let line = load_model(line_model.as_ref().expect("checked"), Stage::Line)?;
                let gen = gen_model.as_deref().map(|p| load_model(p, Stage::Gen)).transpose()?;
                let screening = screen(&net, &loads, &line, gen.as_ref())?;
                build_spec_from_predictions(
                    &net,
                    method,
                    &screening.line_labels,
                    &screening.gen_labels.unwrap_or_default(),
                )
            };
            let (solution, verification) =
                solve_with_fallback(&net, &loads, &spec).map_err(input)?;
            if solution.status != LpStatus::Optimal {
                return Err(Failure::Infeasible(format!(
                    "base problem is {}; no dispatch exists for these loads",
                    status_str(solution.status)
                )));
            }
            println!(
                "method={} status={} cost={} fell_back={} monitored={} fixed={} iterations={}",
                method,
                status_str(solution.status),
                solution.objective_cost,
                solution.fell_back,
                spec.monitored_lines.len(),
                spec.fixed_max_gens.len(),
                solution.iterations
            );
            if let Some(path) = out {
                #[derive(Serialize)]
                struct SolveDoc {
                    n_monitored: usize,
                    n_fixed: usize,
                    solution: OpfSolution,
                    verification: VerificationReport,
                }
                let doc = SolveDoc {
                    n_monitored: spec.monitored_lines.len(),
                    n_fixed: spec.fixed_max_gens.len(),
                    solution,
                    verification,
                };
                let mut text = serde_json::to_string_pretty(&doc).expect("solution serialize");
                text.push('\n');
                write_text(&path, &text)?;
            }
            Ok(())
        }

        Command::Bench {
            case,
            data,
            line_model,
            gen_model,
            methods,
            seed,
            out_report,
            out_log,
            no_timing,
        } => {
            let net = load_case(&case)?;
            let dataset = read_dataset(&data).map_err(input)?;
            if dataset.header.network != net {
                return Err(Failure::Input(format!(
                    "dataset {} was generated from a different network than case {}",
                    data.display(),
                    case.display()
                )));
            }
            let line = load_model(&line_model, Stage::Line)?;
            let gen = load_model(&gen_model, Stage::Gen)?;
            let config =
                BenchConfig { methods, seed, record_timing: !no_timing };
            let screening = Screening::Models { line: &line, gen: &gen };
            let output = run_benchmark(&net, &dataset.samples, screening, &config)
                .map_err(|e| match e {
                    BenchError::MissingBaseline | BenchError::DuplicateMethod(_) => {
                        Failure::Usage(e.to_string())
                    }
                    other => input(other),
                })?;

            let report = report_csv(&output.rows);
            let errors = errors_csv(&output.errors);
            write_text(&out_report, &report)?;
            let errors_path = out_report.with_extension("errors.csv");
            write_text(&errors_path, &errors)?;

            let reference_savings: BTreeMap<&str, f64> = REFERENCE_TIME_SAVING_PCT
                .iter()
                .map(|(m, pct)| (m.as_str(), *pct))
                .collect();
            let metadata = serde_json::json!({
                "tool_version": env!("CARGO_PKG_VERSION"),
                "case": net.name,
                "dataset": data.display().to_string(),
                "n_samples": dataset.samples.len(),
                "methods": config.methods,
                "seed": config.seed,
                "timing": config.record_timing,
                "dataset_tau": dataset.header.tau,
                "dataset_eps_gen": dataset.header.eps_gen,
                "dataset_perturb": dataset.header.perturb,
                // Magnitudes from the original desk-scale experiments, for
                // comparison only; they shift with case size and hardware.
                "reference": {
                    "time_saving_pct": reference_savings,
                    "max_cost_gap_pct": REFERENCE_MAX_COST_GAP_PCT,
                    "line_errors_pct": {
                        "false_positive": REFERENCE_LINE_ERRORS_PCT.0,
                        "false_negative": REFERENCE_LINE_ERRORS_PCT.1,
                    },
                    "gen_errors_pct": {
                        "false_positive": REFERENCE_GEN_ERRORS_PCT.0,
                        "false_negative": REFERENCE_GEN_ERRORS_PCT.1,
                    },
                },
            });
            let meta_path = out_report.with_extension("meta.json");
            let mut meta_text =
                serde_json::to_string_pretty(&metadata).expect("metadata serialize");
            meta_text.push('\n');
            write_text(&meta_path, &meta_text)?;
            write_text(&out_log, &log_csv(&output.log))?;

            print!("{report}");
            print!("{errors}");
            println!(
                "report -> {}, errors -> {}, metadata -> {}, log -> {}",
                out_report.display(),
                errors_path.display(),
                meta_path.display(),
                out_log.display()
            );
            Ok(())
        }
    }
}
