//! `asd`: anomalous sound detection pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::warn;

use asd_core::model::ModelFamily;
use asd_core::pipeline::{
    self, evaluate_stage, extract_features, fit_norm, generate_synthetic, ingest, load_config,
    parse_override, report_stage, save_tables, scan_dcase, score_stage, train_stage,
    write_manifest, RunConfig, ScoresInput, SynthSpec, Workspace, ROOT_ENV,
};
use asd_core::Error;

mod exit {
    pub const CONFIG: u8 = 1;
    pub const INGEST: u8 = 2;
    pub const TRAIN: u8 = 3;
    pub const SCORE: u8 = 4;
    pub const EVALUATE: u8 = 5;
    pub const PARTIAL: u8 = 6;
    pub const SELFTEST: u8 = 7;
}

#[derive(Parser, Debug)]
#[command(name = "asd", version, about = "Anomalous sound detection with gammatone autoencoders")]
struct Cli {
    /// Cache and output root.
    #[arg(long, global = true, env = ROOT_ENV)]
    root: Option<PathBuf>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.batch_size=16`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// unsupervised | semisupervised | baseline
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// pAUC false-positive-rate bound.
    #[arg(long, global = true)]
    p: Option<f64>,
    /// Print the resolved configuration.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a manifest CSV and record it in the workspace.
    Ingest { manifest: PathBuf },
    /// Compute and cache spectrograms, then fit normalization on train clips.
    ExtractFeatures,
    /// Refit normalization statistics from cached train features.
    FitNorm,
    /// Train the configured model.
    Train,
    /// Score every test clip.
    Score {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// AUC / pAUC tables from scores files (`name=path` or `path`).
    Evaluate {
        #[arg(required = true)]
        scores: Vec<String>,
        /// Compare files from different data.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluation tables next to the published results.
    Report {
        #[arg(required = true)]
        scores: Vec<String>,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a manifest for a DCASE 2020 Task 2 style directory tree.
    GenManifestDcase {
        dataset: PathBuf,
        /// Defaults to `<dataset>/manifest.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthetic tone corpus with burst anomalies.
    GenSynthetic {
        dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "synth")]
        types: Vec<String>,
        #[arg(long, default_value_t = 60)]
        train: usize,
        #[arg(long, default_value_t = 20)]
        test_normal: usize,
        #[arg(long, default_value_t = 20)]
        test_anomaly: usize,
        #[arg(long, default_value_t = 2.0)]
        seconds: f64,
    },
    /// Gradient checks of every operator and metric oracles.
    Selftest {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8) -> impl Fn(Error) -> Failure {
    move |e| Failure {
        code: if matches!(e, Error::Config(_)) {
            exit::CONFIG
        } else {
            code
        },
        message: e.to_string(),
    }
}

fn overrides(cli: &Cli) -> Result<Vec<(String, String)>, Error> {
    let mut v: Vec<(String, String)> = cli
        .set
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<_, _>>()?;
    if let Some(m) = &cli.model {
        v.push(("model.family".into(), format!("\"{}\"", ModelFamily::parse(m)?.name())));
    }
    let mut push = |k: &str, val: Option<String>| {
        if let Some(val) = val {
            v.push((k.into(), val));
        }
    };
    let float = |x: f64| format!("{x:?}");
    push("model.loss_weights.alpha", cli.alpha.map(float));
    push("model.loss_weights.beta", cli.beta.map(float));
    push("seed", cli.seed.map(|s| s.to_string()));
    push("train.max_epochs", cli.epochs.map(|s| s.to_string()));
    push("train.batch_size", cli.batch_size.map(|s| s.to_string()));
    push("train.lr_initial", cli.lr.map(float));
    push("eval.p", cli.p.map(float));
    Ok(v)
}

fn resolve(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = load_config(cli.config.as_deref(), &overrides(cli)?)?;
    if let Some(r) = &cli.root {
        cfg.root = Some(r.clone());
    }
    Ok(cfg)
}

fn inputs(args: &[String]) -> Vec<ScoresInput> {
    args.iter().map(|a| ScoresInput::parse(a)).collect()
}

fn print_tables(out: &pipeline::EvalOutcome, dir: &Path) -> Result<(), Error> {
    for w in &out.warnings {
        warn!("{w}");
    }
    println!("{}", out.auc.render("AUC (%)"));
    println!("{}", out.pauc.render("pAUC (%)"));
    save_tables(out, dir)?;
    println!("tables written to {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = resolve(&cli).map_err(fail(exit::CONFIG))?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
    }
    let ws = Workspace::new(cfg.root());
    let Some(cmd) = cli.command else {
        return Ok(());
    };
    match cmd {
        Command::Ingest { manifest } => {
            let ing = ingest(&ws, &manifest).map_err(fail(exit::INGEST))?;
            println!("ingested {} clips, data {}", ing.clips.len(), ing.data_hash);
        }
        Command::ExtractFeatures => {
            let r = extract_features(&ws, &cfg).map_err(fail(exit::INGEST))?;
            println!(
                "features: {} computed, {} cached, {} failed; normalization {}",
                r.computed,
                r.cached,
                r.failures.len(),
                if r.norm_written { "written" } else { "unchanged" }
            );
            if !r.failures.is_empty() {
                let list: Vec<String> = r.failures.iter().map(|(c, e)| format!("  {c}: {e}")).collect();
                return Err(Failure {
                    code: exit::PARTIAL,
                    message: format!("{} clip(s) failed:\n{}", r.failures.len(), list.join("\n")),
                });
            }
        }
        Command::FitNorm => {
            let s = fit_norm(&ws, &cfg).map_err(fail(exit::INGEST))?;
            println!("normalization {} over {} frames", s.hash(), s.n_frames_fitted);
        }
        Command::Train => {
            let out = train_stage(&ws, &cfg, |r| {
                println!(
                    "epoch {:>3}  train {:.6}  val {:.6}  mse {:.6}  cce {:.6}  lr {:.3e}",
                    r.epoch, r.train_loss, r.val_loss, r.mse, r.cce, r.lr
                )
            })
            .map_err(fail(exit::TRAIN))?;
            let best = out.history.best().epoch;
            println!(
                "stopped after {} epochs ({:?}), best epoch {best}; run {}",
                out.history.records.len(),
                out.history.stop_reason,
                out.run_dir.display()
            );
        }
        Command::Score { checkpoint, out } => {
            let s = score_stage(&ws, &cfg, checkpoint.as_deref(), out.as_deref())
                .map_err(fail(exit::SCORE))?;
            println!("{} clips scored -> {}", s.records.len(), s.path.display());
        }
        Command::Evaluate { scores, force, out } => {
            let o = evaluate_stage(&inputs(&scores), cfg.eval.p, force).map_err(fail(exit::EVALUATE))?;
            print_tables(&o, &out.unwrap_or_else(|| ws.results_dir())).map_err(fail(exit::EVALUATE))?;
        }
        Command::Report { scores, force, out } => {
            let o = report_stage(&inputs(&scores), cfg.eval.p, force).map_err(fail(exit::EVALUATE))?;
            print_tables(&o, &out.unwrap_or_else(|| ws.results_dir().join("report")))
                .map_err(fail(exit::EVALUATE))?;
        }
        Command::GenManifestDcase { dataset, out } => {
            let mut entries = scan_dcase(&dataset).map_err(fail(exit::INGEST))?;
            let dest = match out {
                Some(o) => {
                    for e in &mut entries {
                        e.clip_id = std::path::absolute(&e.path)
                            .unwrap_or_else(|_| e.path.clone())
                            .to_string_lossy()
                            .into_owned();
                    }
                    o
                }
                None => dataset.join("manifest.csv"),
            };
            write_manifest(&dest, &entries).map_err(fail(exit::INGEST))?;
            println!("{} entries -> {}", entries.len(), dest.display());
        }
        Command::GenSynthetic {
            dir,
            types,
            train,
            test_normal,
            test_anomaly,
            seconds,
        } => {
            let spec = SynthSpec {
                machine_types: types,
                n_train: train,
                n_test_normal: test_normal,
                n_test_anomaly: test_anomaly,
                seconds,
                seed: cfg.seed,
                ..SynthSpec::default()
            };
            let m = generate_synthetic(&dir, &spec).map_err(fail(exit::INGEST))?;
            println!("manifest {}", m.display());
        }
        Command::Selftest { seeds } => {
            let checks = pipeline::selftest::gradient_suite(seeds).map_err(fail(exit::SELFTEST))?;
            let mut ok = true;
            for c in &checks {
                println!(
                    "{} gradient {:<18} max rel err {:.2e} over {} seeds",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.worst,
                    c.runs
                );
                ok &= c.passed;
            }
            let m = pipeline::selftest::metric_suite(200, 0).map_err(fail(exit::SELFTEST))?;
            let m_ok = m < pipeline::selftest::METRIC_TOLERANCE;
            println!(
                "{} metrics  AUC/pAUC vs pairwise sums, max abs diff {m:.2e}",
                if m_ok { "PASS" } else { "FAIL" }
            );
            if !(ok && m_ok) {
                return Err(Failure {
                    code: exit::SELFTEST,
                    message: "selftest failed".into(),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
