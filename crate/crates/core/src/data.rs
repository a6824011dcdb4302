//! Dataset ingestion and synthesis.
//!
//! Fixtures are JSON-lines with fields `{id, label, global, objects,
//! face}`: one precomputed feature record per image, objects in detector
//! confidence order, `face` null when no face was detected. The
//! synthetic generator builds class-mean clusters whose geometry encodes
//! the polarity structure: same-polarity classes sit closer together
//! than cross-polarity ones, so the polarity loss has something to bite
//! on at desk scale.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffmath::{Rng, Tensor};
use crate::encoders::FaceInput;
use crate::error::{Error, Result};
use crate::taxonomy::{Polarity, Taxonomy};

/// One image's stimulus features, as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub label: String,
    pub global: Vec<f64>,
    pub objects: Vec<Vec<f64>>,
    pub face: Option<Vec<f64>>,
}

fn check_finite(what: &str, line: usize, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("line {line}: non-finite value in {what}")));
    }
    Ok(())
}

/// Parse a JSONL fixture. Labels must exist in the taxonomy; object
/// lists longer than `n_max` are truncated (fixture order is detector
/// confidence order) with a warning on stderr.
pub fn parse_jsonl(path: &Path, taxonomy: &Taxonomy, n_max: usize) -> Result<Vec<SampleRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Data(format!("line {line_no}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut record: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {line_no}: {e}")))?;
        if taxonomy.index_of(&record.label).is_none() {
            return Err(Error::Data(format!(
                "line {line_no}: unknown label \"{}\"",
                record.label
            )));
        }
        check_finite("global", line_no, &record.global)?;
        for obj in &record.objects {
            check_finite("objects", line_no, obj)?;
        }
        if let Some(face) = &record.face {
            check_finite("face", line_no, face)?;
        }
        if record.objects.len() > n_max {
            eprintln!(
                "warning: line {line_no}: {} objects exceed n_max={n_max}, keeping the first {n_max}",
                record.objects.len()
            );
            record.objects.truncate(n_max);
        }
        records.push(record);
    }
    Ok(records)
}

/// Serialize records to the JSONL fixture form; finite values round-trip
/// bitwise.
pub fn to_jsonl(records: &[SampleRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        let _ = writeln!(out, "{line}");
    }
    out
}

pub fn write_jsonl(path: &Path, records: &[SampleRecord]) -> Result<()> {
    std::fs::write(path, to_jsonl(records))
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

/// A record resolved against a taxonomy and lifted into tensors.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub label: usize,
    pub global: Tensor,
    pub objects: Vec<Tensor>,
    pub face: FaceInput,
}

/// Convert parsed records into prepared samples, keeping at most `n_max`
/// objects per record (in stored order).
pub fn prepare(
    records: &[SampleRecord],
    taxonomy: &Taxonomy,
    n_max: usize,
) -> Result<Vec<PreparedSample>> {
    records
        .iter()
        .map(|r| {
            let label = taxonomy
                .index_of(&r.label)
                .ok_or_else(|| Error::Data(format!("unknown label \"{}\"", r.label)))?;
            Ok(PreparedSample {
                label,
                global: Tensor::vector(r.global.clone())?,
                objects: r
                    .objects
                    .iter()
                    .take(n_max)
                    .map(|o| Tensor::vector(o.clone()))
                    .collect::<Result<_>>()?,
                face: match &r.face {
                    Some(f) => FaceInput::present(Tensor::vector(f.clone())?),
                    None => FaceInput::absent(),
                },
            })
        })
        .collect()
}

/// Raw vector lengths observed in a dataset. `object` and `face` are
/// None when no record carries them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InferredDims {
    pub global: usize,
    pub object: Option<usize>,
    pub face: Option<usize>,
}

/// Check dimensional consistency across records and report the lengths.
pub fn infer_dims(records: &[SampleRecord]) -> Result<InferredDims> {
    let mut global: Option<usize> = None;
    let mut object: Option<usize> = None;
    let mut face: Option<usize> = None;
    for r in records {
        match global {
            None => global = Some(r.global.len()),
            Some(g) if g != r.global.len() => {
                return Err(Error::Data(format!(
                    "record {}: global length {} vs {} seen earlier",
                    r.id,
                    r.global.len(),
                    g
                )));
            }
            _ => {}
        }
        for o in &r.objects {
            match object {
                None => object = Some(o.len()),
                Some(f) if f != o.len() => {
                    return Err(Error::Data(format!(
                        "record {}: object feature length {} vs {} seen earlier",
                        r.id,
                        o.len(),
                        f
                    )));
                }
                _ => {}
            }
        }
        if let Some(fv) = &r.face {
            match face {
                None => face = Some(fv.len()),
                Some(f) if f != fv.len() => {
                    return Err(Error::Data(format!(
                        "record {}: face length {} vs {} seen earlier",
                        r.id,
                        fv.len(),
                        f
                    )));
                }
                _ => {}
            }
        }
    }
    let global = global.ok_or_else(|| Error::Data("empty dataset".into()))?;
    Ok(InferredDims {
        global,
        object,
        face,
    })
}

/// Deterministic split into (train, val, test) by seeded shuffle and
/// floor-sized train/val slices, remainder to test.
pub fn split_records(
    records: &[SampleRecord],
    split: crate::config::SplitSpec,
    seed: u64,
) -> (Vec<SampleRecord>, Vec<SampleRecord>, Vec<SampleRecord>) {
    let mut order: Vec<usize> = (0..records.len()).collect();
    Rng::derive(seed, "split").shuffle(&mut order);
    let n = records.len() as f64;
    let n_train = (n * split.train).floor() as usize;
    let n_val = (n * split.val).floor() as usize;
    let take = |idx: &[usize]| idx.iter().map(|i| records[*i].clone()).collect();
    (
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_val]),
        take(&order[n_train + n_val..]),
    )
}

fn default_synth_taxonomy() -> serde_json::Value {
    serde_json::Value::String("mikel".into())
}
fn default_train_per_class() -> usize {
    250
}
fn default_test_per_class() -> usize {
    50
}
fn default_global_dim() -> usize {
    32
}
fn default_object_dim() -> usize {
    16
}
fn default_face_dim() -> usize {
    16
}
fn default_noise() -> f64 {
    0.25
}
fn default_face_prob() -> f64 {
    0.7
}
fn default_objects_max() -> usize {
    5
}
fn default_polarity_scale() -> f64 {
    1.5
}
fn default_class_scale() -> f64 {
    1.0
}
fn default_synth_seed() -> u64 {
    42
}

/// Synthetic dataset recipe. Class means are `polarity_sign *
/// polarity_base + class_offset` per feature family, with
/// `polarity_scale > class_scale` pulling same-polarity classes
/// together.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "default_synth_taxonomy")]
    pub taxonomy: serde_json::Value,
    #[serde(default = "default_train_per_class")]
    pub train_per_class: usize,
    #[serde(default)]
    pub val_per_class: usize,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "default_global_dim")]
    pub global_dim: usize,
    #[serde(default = "default_object_dim")]
    pub object_dim: usize,
    #[serde(default = "default_face_dim")]
    pub face_dim: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_face_prob")]
    pub face_prob: f64,
    #[serde(default)]
    pub objects_min: usize,
    #[serde(default = "default_objects_max")]
    pub objects_max: usize,
    #[serde(default = "default_polarity_scale")]
    pub polarity_scale: f64,
    #[serde(default = "default_class_scale")]
    pub class_scale: f64,
    #[serde(default = "default_synth_seed")]
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> SynthSpec {
        serde_json::from_str("{}").expect("defaults fill an empty spec")
    }
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<SynthSpec> {
        let spec: SynthSpec =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("synth spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_per_class == 0 {
            return Err(Error::Config("train_per_class must be positive".into()));
        }
        for (name, v) in [
            ("global_dim", self.global_dim),
            ("object_dim", self.object_dim),
            ("face_dim", self.face_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.noise < 0.0 {
            return Err(Error::Config("noise must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.face_prob) {
            return Err(Error::Config("face_prob must be in [0, 1]".into()));
        }
        if self.objects_min > self.objects_max {
            return Err(Error::Config("objects_min exceeds objects_max".into()));
        }
        self.resolve_taxonomy()?;
        Ok(())
    }

    pub fn resolve_taxonomy(&self) -> Result<Taxonomy> {
        match &self.taxonomy {
            serde_json::Value::String(name) => match name.as_str() {
                "mikel" => Ok(Taxonomy::mikel_default()),
                "emotionroi" => Ok(Taxonomy::emotionroi_default()),
                other => Err(Error::Config(format!("unknown taxonomy \"{other}\""))),
            },
            obj @ serde_json::Value::Object(_) => Taxonomy::load(&obj.to_string())
                .map_err(|e| Error::Config(format!("inline taxonomy: {e}"))),
            _ => Err(Error::Config("taxonomy must be a name or an object".into())),
        }
    }
}

/// The generated splits.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub train: Vec<SampleRecord>,
    pub val: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
}

fn draw_vec(rng: &mut Rng, mean: &[f64], noise: f64) -> Vec<f64> {
    mean.iter().map(|m| m + noise * rng.normal()).collect()
}

/// Generate the three splits from one seeded stream. Draw order is
/// fixed: polarity bases, then per-class offsets, then samples split by
/// split, class by class.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let taxonomy = spec.resolve_taxonomy()?;
    let mut rng = Rng::derive(spec.seed, "synth");

    let pol_g: Vec<f64> = (0..spec.global_dim)
        .map(|_| spec.polarity_scale * rng.normal())
        .collect();
    let pol_o: Vec<f64> = (0..spec.object_dim)
        .map(|_| spec.polarity_scale * rng.normal())
        .collect();
    let pol_f: Vec<f64> = (0..spec.face_dim)
        .map(|_| spec.polarity_scale * rng.normal())
        .collect();

    let mut means = Vec::with_capacity(taxonomy.count());
    for c in 0..taxonomy.count() {
        let sign = match taxonomy.polarity_of(c)? {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        };
        let mean_of = |base: &[f64], rng: &mut Rng| -> Vec<f64> {
            base.iter()
                .map(|b| sign * b + spec.class_scale * rng.normal())
                .collect()
        };
        let g = mean_of(&pol_g, &mut rng);
        let o = mean_of(&pol_o, &mut rng);
        let f = mean_of(&pol_f, &mut rng);
        means.push((g, o, f));
    }

    let mut generate_split = |split_name: &str, per_class: usize| -> Result<Vec<SampleRecord>> {
        let mut out = Vec::with_capacity(per_class * taxonomy.count());
        for (c, (mean_g, mean_o, mean_f)) in means.iter().enumerate() {
            let label = taxonomy.name_of(c)?.to_string();
            for k in 0..per_class {
                let global = draw_vec(&mut rng, mean_g, spec.noise);
                let span = spec.objects_max - spec.objects_min + 1;
                let n_obj = spec.objects_min + rng.below(span);
                let objects = (0..n_obj)
                    .map(|_| draw_vec(&mut rng, mean_o, spec.noise))
                    .collect();
                let face = if rng.unit() < spec.face_prob {
                    Some(draw_vec(&mut rng, mean_f, spec.noise))
                } else {
                    None
                };
                out.push(SampleRecord {
                    id: format!("{split_name}-{label}-{k}"),
                    label: label.clone(),
                    global,
                    objects,
                    face,
                });
            }
        }
        Ok(out)
    };

    Ok(SynthData {
        train: generate_split("train", spec.train_per_class)?,
        val: generate_split("val", spec.val_per_class)?,
        test: generate_split("test", spec.test_per_class)?,
    })
}
