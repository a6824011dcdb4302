//! Command-line surface: train, eval, grad-check, loss-demo, sweep.
//!
//! Exit codes: 0 ok, 1 check failure, 2 config error, 3 data error,
//! 4 model mismatch.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use emofuse::config::TrainConfig;
use emofuse::data::SynthSpec;
use emofuse::error::Error;
use emofuse::gradcheck;
use emofuse::report::sweep_csv;
use emofuse::run::{run_eval, run_lossdemo, run_sweep, run_train, DataSource, SweepParam};

#[derive(Parser)]
#[command(
    name = "emofuse",
    about = "Stimulus-feature fusion network for visual emotion classification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a model file plus a JSON report.
    Train {
        /// JSON config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSONL fixture, split per the config fractions.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Synthetic data: a spec path, or the builtin default spec when
        /// the flag carries no value.
        #[arg(long, num_args = 0..=1, default_missing_value = "")]
        synth: Option<String>,
        /// Output directory for model.bin and report.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Overrides the config (and synth spec) seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a trained model on a JSONL fixture.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the metrics JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify every backward pass against central finite differences.
    #[command(name = "grad-check")]
    GradCheck {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Seeds per component.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
    },
    /// Print the worked loss table for the four prediction scenarios.
    #[command(name = "loss-demo")]
    LossDemo,
    /// Train once per value of a swept knob and emit CSV.
    Sweep {
        /// Which knob to sweep.
        #[arg(long, value_enum, ignore_case = true)]
        param: Param,
        /// Comma-separated values, e.g. "0,0.5,1,1.5,2".
        #[arg(long)]
        values: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, num_args = 0..=1, default_missing_value = "")]
        synth: Option<String>,
        /// CSV output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    Lambda,
    N,
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::CheckFailed(_) => 1,
        Error::Data(_) | Error::NonFinite(_) => 3,
        Error::ModelFormat(_) => 4,
        _ => 2,
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<TrainConfig, Error> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            TrainConfig::from_json(&text)
        }
    }
}

fn load_source(
    data: &Option<PathBuf>,
    synth: &Option<String>,
    seed: Option<u64>,
) -> Result<DataSource, Error> {
    match (data, synth) {
        (Some(_), Some(_)) => Err(Error::Config(
            "pass either --data or --synth, not both".into(),
        )),
        (Some(path), None) => Ok(DataSource::Jsonl(path.clone())),
        (None, Some(spec)) => {
            let mut spec = if spec.is_empty() {
                SynthSpec::default()
            } else {
                let text = std::fs::read_to_string(spec)
                    .map_err(|e| Error::Config(format!("cannot read {spec}: {e}")))?;
                SynthSpec::from_json(&text)?
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            Ok(DataSource::Synth(spec))
        }
        (None, None) => Err(Error::Config("pass --data or --synth".into())),
    }
}

fn parse_values(text: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad sweep value \"{s}\"")))
        })
        .collect()
}

fn cmd_train(
    config: Option<PathBuf>,
    data: Option<PathBuf>,
    synth: Option<String>,
    out: PathBuf,
    seed: Option<u64>,
) -> Result<(), Error> {
    let mut cfg = load_config(&config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let source = load_source(&data, &synth, seed)?;

    let epochs = cfg.epochs;
    let outcome = run_train(&cfg, &source, |s| {
        println!(
            "epoch {}/{} lr={:.3e} L_emo={:.4} L_pol={:.4} L_total={:.4}",
            s.epoch + 1,
            epochs,
            s.lr,
            s.l_emo,
            s.l_pol,
            s.l_total
        );
    })?;

    std::fs::create_dir_all(&out)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", out.display())))?;
    let model_path = out.join("model.bin");
    let report_path = out.join("report.json");
    outcome.model.save(&model_path)?;
    std::fs::write(&report_path, outcome.report.to_json())
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", report_path.display())))?;

    let m = &outcome.report.final_metrics;
    println!(
        "done in {:.2}s: emotion accuracy {:.4}, polarity accuracy {:.4}",
        outcome.report.wall_clock_secs, m.emotion_accuracy, m.polarity_accuracy
    );
    println!("model: {}", model_path.display());
    println!("report: {}", report_path.display());
    Ok(())
}

fn cmd_eval(model: PathBuf, data: PathBuf, out: Option<PathBuf>) -> Result<(), Error> {
    let metrics = run_eval(&model, &data)?;
    let json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    println!("{json}");
    if let Some(out) = out {
        std::fs::write(&out, &json)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", out.display())))?;
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64, seeds: usize) -> Result<(), Error> {
    let report = gradcheck::run_all(seed, seeds);
    println!("{:<22} {:>14}  result", "component", "max rel err");
    for c in &report.components {
        println!(
            "{:<22} {:>14.3e}  {}",
            c.component,
            c.max_rel_err,
            if c.pass() { "PASS" } else { "FAIL" }
        );
    }
    if report.all_pass() {
        println!(
            "all {} components < {:.0e}",
            report.components.len(),
            gradcheck::REL_TOL
        );
        Ok(())
    } else {
        let failing: Vec<&str> = report
            .components
            .iter()
            .filter(|c| !c.pass())
            .map(|c| c.component.as_str())
            .collect();
        Err(Error::CheckFailed(format!(
            "gradient check failed for: {}",
            failing.join(", ")
        )))
    }
}

fn cmd_lossdemo() {
    println!(
        "{:<12} {:>8} {:>8} {:>8}  (lambda = 1)",
        "scenario", "L_emo", "L_pol", "L_total"
    );
    for row in run_lossdemo() {
        println!(
            "{:<12} {:>8.4} {:>8.4} {:>8.4}",
            row.scenario, row.l_emo, row.l_pol, row.l_total
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    param: Param,
    values: String,
    config: Option<PathBuf>,
    data: Option<PathBuf>,
    synth: Option<String>,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<(), Error> {
    let mut cfg = load_config(&config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let source = load_source(&data, &synth, seed)?;
    let values = parse_values(&values)?;
    let param = match param {
        Param::Lambda => SweepParam::Lambda,
        Param::N => SweepParam::N,
    };
    let rows = run_sweep(&cfg, &source, param, &values, |idx, v| {
        eprintln!("sweep {}/{}: value {v}", idx + 1, values.len());
    })?;
    let csv = sweep_csv(&rows);
    match out {
        None => print!("{csv}"),
        Some(path) => std::fs::write(&path, csv)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            data,
            synth,
            out,
            seed,
        } => cmd_train(config, data, synth, out, seed),
        Command::Eval { model, data, out } => cmd_eval(model, data, out),
        Command::GradCheck { seed, seeds } => cmd_gradcheck(seed, seeds),
        Command::LossDemo => {
            cmd_lossdemo();
            Ok(())
        }
        Command::Sweep {
            param,
            values,
            config,
            data,
            synth,
            out,
            seed,
        } => cmd_sweep(param, values, config, data, synth, out, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
