//! End-to-end pipelines behind the CLI subcommands, shared with the
//! C ABI layer: train, eval, the worked-loss table, and ablation sweeps.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::TrainConfig;
use crate::data::{
    infer_dims, parse_jsonl, prepare, split_records, synth_generate, PreparedSample, SampleRecord,
    SynthSpec,
};
use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::head::{hierarchical_loss, EmotionProbs};
use crate::model::{Model, RawDims};
use crate::report::{RunReport, SweepRow};
use crate::taxonomy::Taxonomy;
use crate::training::{evaluate, train, EpochSummary, Metrics};

/// Where training data comes from.
#[derive(Clone, Debug)]
pub enum DataSource {
    Jsonl(PathBuf),
    Synth(SynthSpec),
}

struct LoadedData {
    train: Vec<SampleRecord>,
    test: Vec<SampleRecord>,
}

fn load_source(cfg: &TrainConfig, taxonomy: &Taxonomy, source: &DataSource) -> Result<LoadedData> {
    match source {
        DataSource::Jsonl(path) => {
            let records = parse_jsonl(path, taxonomy, cfg.n_max)?;
            if records.is_empty() {
                return Err(Error::Data(format!("{} holds no records", path.display())));
            }
            let (train, _val, test) = split_records(&records, cfg.split, cfg.seed);
            Ok(LoadedData { train, test })
        }
        DataSource::Synth(spec) => {
            let data = synth_generate(spec)?;
            Ok(LoadedData {
                train: data.train,
                test: data.test,
            })
        }
    }
}

fn resolve_raw_dims(
    cfg: &TrainConfig,
    train: &[SampleRecord],
    test: &[SampleRecord],
) -> Result<RawDims> {
    let all: Vec<SampleRecord> = train.iter().chain(test.iter()).cloned().collect();
    let dims = infer_dims(&all)?;
    if let Some(f) = dims.object {
        if f != cfg.dims.f {
            return Err(Error::Data(format!(
                "object feature length {f} vs configured F = {}",
                cfg.dims.f
            )));
        }
    }
    Ok(RawDims {
        global: dims.global,
        // A dataset with no faces never runs the expression encoder;
        // give it the output width so the model file stays well-formed.
        face: dims.face.unwrap_or(cfg.dims.d3),
    })
}

/// A finished training run.
pub struct TrainOutcome {
    pub model: Model,
    pub report: RunReport,
}

/// Train a fresh model per the config on the given source and evaluate
/// on the held-out split (falling back to the training split when the
/// source has no test records).
pub fn run_train(
    cfg: &TrainConfig,
    source: &DataSource,
    mut progress: impl FnMut(&EpochSummary),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let taxonomy = cfg.resolve_taxonomy()?;
    let started = Instant::now();

    let data = load_source(cfg, &taxonomy, source)?;
    let raw = resolve_raw_dims(cfg, &data.train, &data.test)?;
    let train_set = prepare(&data.train, &taxonomy, cfg.n_max)?;
    let test_set = prepare(&data.test, &taxonomy, cfg.n_max)?;

    let mut model = Model::from_config(cfg, taxonomy, raw)?;
    let rows = train(&mut model, &train_set, cfg, &mut progress)?;
    let final_metrics = if test_set.is_empty() {
        evaluate(&model, &train_set)?
    } else {
        evaluate(&model, &test_set)?
    };

    Ok(TrainOutcome {
        model,
        report: RunReport {
            config: cfg.clone(),
            epochs: rows,
            final_metrics,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        },
    })
}

/// Load a model file and evaluate it on a JSONL fixture.
pub fn run_eval(model_path: &Path, data_path: &Path) -> Result<Metrics> {
    let model = Model::load(model_path)?;
    let records = parse_jsonl(data_path, model.taxonomy(), model.n_max())?;
    if records.is_empty() {
        return Err(Error::Data(format!(
            "{} holds no records",
            data_path.display()
        )));
    }
    let dims = infer_dims(&records)?;
    model.check_data_dims(&dims)?;
    let samples: Vec<PreparedSample> = prepare(&records, model.taxonomy(), model.n_max())?;
    evaluate(&model, &samples)
}

/// The swept knob: the polarity-loss weight or the object cap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    N,
}

/// One full train+eval per value. Every run draws a fresh seed derived
/// from the config seed and the value's position, so rows are
/// independent but reproducible. A synthetic source keeps its own seed,
/// which holds the dataset fixed across values.
pub fn run_sweep(
    cfg: &TrainConfig,
    source: &DataSource,
    param: SweepParam,
    values: &[f64],
    mut progress: impl FnMut(usize, f64),
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs a non-empty values list".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for (idx, &value) in values.iter().enumerate() {
        let mut cfg_v = cfg.clone();
        cfg_v.seed = cfg.seed.wrapping_add(1000 * (idx as u64 + 1));
        match param {
            SweepParam::Lambda => {
                if value < 0.0 {
                    return Err(Error::Config(format!("lambda {value} is negative")));
                }
                cfg_v.lambda = value;
            }
            SweepParam::N => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!(
                        "N value {value} must be a positive integer"
                    )));
                }
                cfg_v.n_max = value as usize;
            }
        }
        progress(idx, value);
        let outcome = run_train(&cfg_v, source, |_| {})?;
        let last = outcome
            .report
            .epochs
            .last()
            .expect("at least one epoch ran");
        rows.push(SweepRow {
            value,
            emotion_acc: outcome.report.final_metrics.emotion_accuracy,
            polarity_acc: outcome.report.final_metrics.polarity_accuracy,
            l_emo: last.l_emo,
            l_pol: last.l_pol,
            l_total: last.l_total,
        });
    }
    Ok(rows)
}

/// One row of the worked-loss table.
#[derive(Clone, Debug)]
pub struct LossDemoRow {
    pub scenario: &'static str,
    pub l_emo: f64,
    pub l_pol: f64,
    pub l_total: f64,
}

/// The four canonical prediction scenarios at lambda = 1, evaluated on
/// the Mikel taxonomy with the label at index 1 (amusement).
///
/// - true: confident correct prediction;
/// - false: wrong category, polarity mass split evenly;
/// - easy false: wrong category, 0.9 of the mass on the labeled
///   polarity side;
/// - hard false: wrong category, only 0.2 on the labeled side.
///
/// Both false cases give the same emotion loss (label probability
/// 0.1003, -ln = 2.30); the polarity term separates them (0.11 vs 1.61).
pub fn run_lossdemo() -> Vec<LossDemoRow> {
    let taxonomy = Taxonomy::mikel_default();
    let label = 1;
    let lambda = 1.0;
    let scenarios: [(&'static str, Vec<f64>); 4] = [
        (
            "true",
            vec![0.03, 0.90, 0.02, 0.01, 0.01, 0.01, 0.01, 0.01],
        ),
        (
            "false",
            vec![0.35, 0.1003, 0.025, 0.0247, 0.35, 0.05, 0.05, 0.05],
        ),
        (
            "easy false",
            vec![0.70, 0.1003, 0.05, 0.0497, 0.025, 0.025, 0.025, 0.025],
        ),
        (
            "hard false",
            vec![0.05, 0.1003, 0.025, 0.0247, 0.70, 0.025, 0.025, 0.05],
        ),
    ];
    scenarios
        .into_iter()
        .map(|(scenario, probs)| {
            let e = EmotionProbs::new(Tensor::vector(probs).expect("finite"))
                .expect("scenario sums to 1");
            let b = hierarchical_loss(&taxonomy, &e, label, lambda).expect("valid label");
            LossDemoRow {
                scenario,
                l_emo: b.l_emo,
                l_pol: b.l_pol,
                l_total: b.l_total,
            }
        })
        .collect()
}
