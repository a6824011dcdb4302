//! The assembled network: two branch encoders, the semantic stack, and
//! the fusion head, with deterministic initialization and a versioned
//! binary serialization.
//!
//! Parameter order is fixed by `visit_params` (global encoder,
//! expression encoder, semantic branch, classifier) and is the single
//! source of truth for initialization draws, the optimizer state layout,
//! and the model file layout.

use std::path::Path;

use crate::config::{Dims, SnetKind, TrainConfig};
use crate::data::PreparedSample;
use crate::diffmath::{concat_split, HasParams, Param, Rng, Tensor};
use crate::encoders::{
    encode_backward, encode_expression, encode_global, expression_backward, EncodeTrace,
    EncoderMode, EncoderParams,
};
use crate::error::{Error, Result};
use crate::head::{
    classify, head_backward, fuse, ClassifierParams, EmotionProbs, LossBreakdown,
};
use crate::semantic::{
    fc_semantic_backward, fc_semantic_forward, semantic_backward, semantic_forward,
    FcSemanticParams, FcSemanticTrace, SemanticNetParams, SemanticTrace,
};
use crate::taxonomy::Taxonomy;

const MAGIC: &[u8; 4] = b"EMOF";
const VERSION: u32 = 1;

/// Raw stimulus vector lengths the encoders consume.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawDims {
    pub global: usize,
    pub face: usize,
}

/// Step-count policy for the semantic stack: one step per object, or a
/// fixed count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TSteps {
    Auto,
    Fixed(usize),
}

impl TSteps {
    /// Config encoding: 0 is auto, anything positive is fixed.
    pub fn from_config(t: usize) -> TSteps {
        if t == 0 {
            TSteps::Auto
        } else {
            TSteps::Fixed(t)
        }
    }

    pub fn to_config(self) -> usize {
        match self {
            TSteps::Auto => 0,
            TSteps::Fixed(t) => t,
        }
    }

    fn effective(self, n_objects: usize) -> usize {
        match self {
            TSteps::Auto => n_objects.max(1),
            TSteps::Fixed(t) => t,
        }
    }
}

/// Which semantic branch the model carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemanticKind {
    Lstm,
    Fc,
}

impl From<SnetKind> for SemanticKind {
    fn from(k: SnetKind) -> SemanticKind {
        match k {
            SnetKind::Lstm => SemanticKind::Lstm,
            SnetKind::Fc => SemanticKind::Fc,
        }
    }
}

#[derive(Clone, Debug)]
enum SemanticBranch {
    Lstm(Box<SemanticNetParams>),
    Fc(Box<FcSemanticParams>),
}

#[derive(Clone, Debug)]
pub enum SemanticBranchTrace {
    Lstm(SemanticTrace),
    Fc(FcSemanticTrace),
}

/// Forward intermediates of one sample, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct SampleTrace {
    pub v_g: Tensor,
    pub v_s: Tensor,
    pub v_e: Tensor,
    pub v_emo: Tensor,
    pub probs: EmotionProbs,
    genc: EncodeTrace,
    eenc: EncodeTrace,
    semantic: SemanticBranchTrace,
}

/// The full trainable network.
#[derive(Clone, Debug)]
pub struct Model {
    taxonomy: Taxonomy,
    dims: Dims,
    raw: RawDims,
    t_steps: TSteps,
    n_max: usize,
    global_enc: EncoderParams,
    expr_enc: EncoderParams,
    semantic: SemanticBranch,
    classifier: ClassifierParams,
}

impl Model {
    /// Build with fresh parameters. Initialization draws from one
    /// seed-derived stream in visit order: global encoder, expression
    /// encoder, semantic branch, classifier.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        taxonomy: Taxonomy,
        dims: Dims,
        raw: RawDims,
        kind: SemanticKind,
        global_mode: EncoderMode,
        expr_mode: EncoderMode,
        t_steps: TSteps,
        seed: u64,
    ) -> Model {
        let mut rng = Rng::derive(seed, "init");
        let global_enc = match global_mode {
            EncoderMode::Trainable => EncoderParams::trainable(raw.global, dims.d1, &mut rng),
            EncoderMode::Passthrough => EncoderParams::passthrough(raw.global),
        };
        let expr_enc = match expr_mode {
            EncoderMode::Trainable => EncoderParams::trainable(raw.face, dims.d3, &mut rng),
            EncoderMode::Passthrough => EncoderParams::passthrough(raw.face),
        };
        let semantic = match kind {
            SemanticKind::Lstm => SemanticBranch::Lstm(Box::new(SemanticNetParams::new(
                dims.f, dims.h, dims.m, &mut rng,
            ))),
            SemanticKind::Fc => {
                SemanticBranch::Fc(Box::new(FcSemanticParams::new(dims.f, dims.h, &mut rng)))
            }
        };
        let fused = global_enc.d_out() + dims.h + expr_enc.d_out();
        let classifier = ClassifierParams::new(taxonomy.count(), fused, &mut rng);
        Model {
            taxonomy,
            dims,
            raw,
            t_steps,
            n_max: 10,
            global_enc,
            expr_enc,
            semantic,
            classifier,
        }
    }

    /// Build from a validated config plus the raw dims observed in the
    /// dataset.
    pub fn from_config(cfg: &TrainConfig, taxonomy: Taxonomy, raw: RawDims) -> Result<Model> {
        if cfg.encoders.global == crate::config::EncoderModeConfig::Passthrough
            && raw.global != cfg.dims.d1
        {
            return Err(Error::Config(format!(
                "passthrough global encoder needs raw dim {} == d1 {}",
                raw.global, cfg.dims.d1
            )));
        }
        if cfg.encoders.expression == crate::config::EncoderModeConfig::Passthrough
            && raw.face != cfg.dims.d3
        {
            return Err(Error::Config(format!(
                "passthrough expression encoder needs raw dim {} == d3 {}",
                raw.face, cfg.dims.d3
            )));
        }
        let mut model = Model::new(
            taxonomy,
            cfg.dims,
            raw,
            cfg.snet.into(),
            cfg.encoders.global.into(),
            cfg.encoders.expression.into(),
            TSteps::from_config(cfg.t_steps),
            cfg.seed,
        );
        model.n_max = cfg.n_max;
        Ok(model)
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn raw_dims(&self) -> RawDims {
        self.raw
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn t_steps(&self) -> TSteps {
        self.t_steps
    }

    pub fn semantic_kind(&self) -> SemanticKind {
        match self.semantic {
            SemanticBranch::Lstm(_) => SemanticKind::Lstm,
            SemanticBranch::Fc(_) => SemanticKind::Fc,
        }
    }

    /// Validate a dataset's raw dims against this model's.
    pub fn check_data_dims(&self, dims: &crate::data::InferredDims) -> Result<()> {
        if dims.global != self.raw.global {
            return Err(Error::ModelFormat(format!(
                "data global dim {} vs model {}",
                dims.global, self.raw.global
            )));
        }
        if let Some(f) = dims.object {
            if f != self.dims.f {
                return Err(Error::ModelFormat(format!(
                    "data object dim {f} vs model {}",
                    self.dims.f
                )));
            }
        }
        if let Some(face) = dims.face {
            if face != self.raw.face {
                return Err(Error::ModelFormat(format!(
                    "data face dim {face} vs model {}",
                    self.raw.face
                )));
            }
        }
        Ok(())
    }

    /// Forward one sample to emotion probabilities.
    pub fn forward(&self, sample: &PreparedSample) -> Result<(EmotionProbs, SampleTrace)> {
        let (v_g, genc) = encode_global(&self.global_enc, &sample.global)?;
        let t_eff = self.t_steps.effective(sample.objects.len());
        let (v_s, semantic) = match &self.semantic {
            SemanticBranch::Lstm(p) => {
                let (v, tr) = semantic_forward(p, &sample.objects, t_eff)?;
                (v, SemanticBranchTrace::Lstm(tr))
            }
            SemanticBranch::Fc(p) => {
                let (v, tr) = fc_semantic_forward(p, &sample.objects)?;
                (v, SemanticBranchTrace::Fc(tr))
            }
        };
        let (v_e, eenc) = encode_expression(&self.expr_enc, &sample.face)?;
        let v_emo = fuse(&v_g, &v_s, &v_e)?;
        let (probs, _) = classify(&self.classifier, &v_emo)?;
        Ok((
            probs.clone(),
            SampleTrace {
                v_g,
                v_s,
                v_e,
                v_emo,
                probs,
                genc,
                eenc,
                semantic,
            },
        ))
    }

    /// Forward plus the combined loss for the sample's label.
    pub fn loss_forward(
        &self,
        sample: &PreparedSample,
        lambda: f64,
    ) -> Result<(LossBreakdown, SampleTrace)> {
        let (probs, trace) = self.forward(sample)?;
        let breakdown =
            crate::head::hierarchical_loss(&self.taxonomy, &probs, sample.label, lambda)?;
        Ok((breakdown, trace))
    }

    /// Backward from the combined loss, scaled by `grad_scale` (1/batch
    /// for a batch mean). Gradients accumulate into every parameter.
    pub fn backward(
        &mut self,
        sample: &PreparedSample,
        trace: &SampleTrace,
        lambda: f64,
        grad_scale: f64,
    ) -> Result<()> {
        let fused = trace.v_emo.len();
        let mut grad_v_emo = Tensor::zeros_vector(fused);
        head_backward(
            &self.taxonomy,
            &mut self.classifier,
            &trace.v_emo,
            &trace.probs,
            sample.label,
            lambda,
            grad_scale,
            &mut grad_v_emo,
        )?;
        let parts = concat_split(
            &grad_v_emo,
            &[trace.v_g.len(), trace.v_s.len(), trace.v_e.len()],
        );
        encode_backward(
            &mut self.global_enc,
            &sample.global,
            &trace.genc,
            &parts[0],
            None,
        )?;
        match (&mut self.semantic, &trace.semantic) {
            (SemanticBranch::Lstm(p), SemanticBranchTrace::Lstm(tr)) => {
                semantic_backward(p, tr, &sample.objects, &parts[1], None)?;
            }
            (SemanticBranch::Fc(p), SemanticBranchTrace::Fc(tr)) => {
                fc_semantic_backward(p, tr, &sample.objects, &parts[1], None)?;
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "trace from a different semantic branch".into(),
                ))
            }
        }
        expression_backward(
            &mut self.expr_enc,
            &sample.face,
            &trace.eenc,
            &parts[2],
            None,
        )?;
        Ok(())
    }

    /// Serialize to the versioned binary model format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        for v in [
            self.dims.d1,
            self.dims.d2,
            self.dims.d3,
            self.dims.h,
            self.dims.m,
            self.dims.f,
            self.taxonomy.count(),
            self.raw.global,
            self.raw.face,
            self.n_max,
            self.t_steps.to_config(),
            match self.semantic_kind() {
                SemanticKind::Lstm => 0,
                SemanticKind::Fc => 1,
            },
            match self.global_enc.mode {
                EncoderMode::Trainable => 0,
                EncoderMode::Passthrough => 1,
            },
            match self.expr_enc.mode {
                EncoderMode::Trainable => 0,
                EncoderMode::Passthrough => 1,
            },
        ] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let tax_json = self.taxonomy.serialize();
        buf.extend_from_slice(&(tax_json.len() as u32).to_le_bytes());
        buf.extend_from_slice(tax_json.as_bytes());
        buf.extend_from_slice(&self.taxonomy.digest().to_le_bytes());

        let mut tensors: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut me = self.clone();
        me.visit_params(&mut |_, p| {
            tensors.push((p.value.len(), p.value.as_slice().to_vec()));
        });
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (len, values) in tensors {
            buf.extend_from_slice(&(len as u64).to_le_bytes());
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, buf)
            .map_err(|e| Error::ModelFormat(format!("cannot write {}: {e}", path.display())))
    }

    /// Load a model file, verifying magic, version, taxonomy digest, and
    /// parameter layout.
    pub fn load(path: &Path) -> Result<Model> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::ModelFormat(format!("cannot read {}: {e}", path.display())))?;
        let mut cur = Cursor::new(&bytes);

        let magic = cur.take(4)?;
        if magic != MAGIC {
            return Err(Error::ModelFormat("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let mut header = [0usize; 14];
        for h in header.iter_mut() {
            *h = cur.u32()? as usize;
        }
        let [d1, d2, d3, h, m, f, classes, raw_global, raw_face, n_max, t_steps, kind, gmode, emode] =
            header;

        let tax_len = cur.u32()? as usize;
        let tax_json = std::str::from_utf8(cur.take(tax_len)?)
            .map_err(|_| Error::ModelFormat("taxonomy is not utf-8".into()))?;
        let taxonomy = Taxonomy::load(tax_json)
            .map_err(|e| Error::ModelFormat(format!("stored taxonomy: {e}")))?;
        let digest = cur.u64()?;
        if digest != taxonomy.digest() {
            return Err(Error::ModelFormat("taxonomy digest mismatch".into()));
        }
        if taxonomy.count() != classes {
            return Err(Error::ModelFormat("taxonomy size vs header mismatch".into()));
        }

        let dims = Dims { d1, d2, d3, h, m, f };
        let kind = match kind {
            0 => SemanticKind::Lstm,
            1 => SemanticKind::Fc,
            other => return Err(Error::ModelFormat(format!("unknown semantic kind {other}"))),
        };
        let gmode = decode_mode(gmode)?;
        let emode = decode_mode(emode)?;
        let mut model = Model::new(
            taxonomy,
            dims,
            RawDims {
                global: raw_global,
                face: raw_face,
            },
            kind,
            gmode,
            emode,
            TSteps::from_config(t_steps),
            0,
        );
        model.n_max = n_max;

        let tensor_count = cur.u32()? as usize;
        let mut expected = 0usize;
        model.visit_params(&mut |_, _| expected += 1);
        if tensor_count != expected {
            return Err(Error::ModelFormat(format!(
                "{tensor_count} stored tensors vs {expected} in the model"
            )));
        }
        let mut failed: Option<String> = None;
        model.visit_params(&mut |name, p| {
            if failed.is_some() {
                return;
            }
            let mut run = || -> Result<()> {
                let len = cur.u64()? as usize;
                if len != p.value.len() {
                    return Err(Error::ModelFormat(format!(
                        "param {name}: stored {len} values vs expected {}",
                        p.value.len()
                    )));
                }
                for i in 0..len {
                    let raw = cur.take(8)?;
                    p.value.as_mut_slice()[i] =
                        f64::from_le_bytes(raw.try_into().expect("8 bytes"));
                }
                Ok(())
            };
            if let Err(e) = run() {
                failed = Some(e.to_string());
            }
        });
        if let Some(msg) = failed {
            return Err(Error::ModelFormat(msg));
        }
        if !cur.at_end() {
            return Err(Error::ModelFormat("trailing bytes in model file".into()));
        }
        Ok(model)
    }
}

fn decode_mode(v: usize) -> Result<EncoderMode> {
    match v {
        0 => Ok(EncoderMode::Trainable),
        1 => Ok(EncoderMode::Passthrough),
        other => Err(Error::ModelFormat(format!("unknown encoder mode {other}"))),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Cursor<'a> {
        Cursor { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::ModelFormat("truncated model file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

impl HasParams for Model {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.global_enc
            .visit_params(&mut |name, p| f(&format!("global_enc.{name}"), p));
        self.expr_enc
            .visit_params(&mut |name, p| f(&format!("expr_enc.{name}"), p));
        match &mut self.semantic {
            SemanticBranch::Lstm(s) => {
                s.visit_params(&mut |name, p| f(&format!("semantic.{name}"), p))
            }
            SemanticBranch::Fc(s) => {
                s.visit_params(&mut |name, p| f(&format!("semantic.{name}"), p))
            }
        }
        self.classifier
            .visit_params(&mut |name, p| f(&format!("classifier.{name}"), p));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::FaceInput;

    fn tiny_model(seed: u64) -> Model {
        Model::new(
            Taxonomy::mikel_default(),
            Dims {
                d1: 3,
                d2: 4,
                d3: 2,
                h: 4,
                m: 3,
                f: 3,
            },
            RawDims { global: 4, face: 3 },
            SemanticKind::Lstm,
            EncoderMode::Trainable,
            EncoderMode::Trainable,
            TSteps::Auto,
            seed,
        )
    }

    fn sample(rng: &mut Rng, with_face: bool, n_objects: usize) -> PreparedSample {
        let vec = |rng: &mut Rng, n: usize| {
            Tensor::vector((0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
        };
        PreparedSample {
            label: rng.below(8),
            global: vec(rng, 4),
            objects: (0..n_objects).map(|_| vec(rng, 3)).collect(),
            face: if with_face {
                FaceInput::present(vec(rng, 3))
            } else {
                FaceInput::absent()
            },
        }
    }

    #[test]
    fn forward_shapes_and_fallbacks() {
        let model = tiny_model(1);
        let mut rng = Rng::seed_from_u64(2);
        let s = sample(&mut rng, false, 0);
        let (probs, trace) = model.forward(&s).unwrap();
        assert_eq!(probs.count(), 8);
        // Both fallbacks: no objects, no face.
        assert_eq!(trace.v_s.as_slice(), &[0.0; 4]);
        assert_eq!(trace.v_e.as_slice(), &[0.0; 2]);
        assert_eq!(trace.v_emo.len(), 3 + 4 + 2);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let mut a = tiny_model(7);
        let mut b = tiny_model(7);
        let mut c = tiny_model(8);
        let flat = |m: &mut Model| {
            let mut v = Vec::new();
            m.visit_params(&mut |_, p| v.extend_from_slice(p.value.as_slice()));
            v
        };
        assert_eq!(flat(&mut a), flat(&mut b));
        assert_ne!(flat(&mut a), flat(&mut c));
    }

    #[test]
    fn backward_accumulates_into_all_live_params() {
        let mut model = tiny_model(3);
        let mut rng = Rng::seed_from_u64(4);
        let s = sample(&mut rng, true, 2);
        let (_, trace) = model.loss_forward(&s, 1.0).unwrap();
        model.backward(&s, &trace, 1.0, 1.0).unwrap();
        let mut nonzero = 0;
        model.visit_params(&mut |_, p| {
            if p.grad.as_slice().iter().any(|g| *g != 0.0) {
                nonzero += 1;
            }
        });
        // Every tensor should receive signal on a full sample.
        let mut total = 0;
        model.visit_params(&mut |_, _| total += 1);
        assert_eq!(nonzero, total);
    }

    #[test]
    fn save_load_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let mut model = tiny_model(5);
        model.save(&path).unwrap();
        let mut loaded = Model::load(&path).unwrap();

        let flat = |m: &mut Model| {
            let mut v = Vec::new();
            m.visit_params(&mut |_, p| v.extend_from_slice(p.value.as_slice()));
            v
        };
        assert_eq!(flat(&mut model), flat(&mut loaded));
        assert_eq!(loaded.taxonomy().count(), 8);
        assert_eq!(loaded.dims(), model.dims());
        assert_eq!(loaded.raw_dims(), model.raw_dims());
        assert_eq!(loaded.t_steps(), model.t_steps());
        assert_eq!(loaded.semantic_kind(), model.semantic_kind());

        // Same predictions after reload.
        let mut rng = Rng::seed_from_u64(6);
        let s = sample(&mut rng, true, 2);
        let (p1, _) = model.forward(&s).unwrap();
        let (p2, _) = loaded.forward(&s).unwrap();
        assert_eq!(p1.as_tensor().as_slice(), p2.as_tensor().as_slice());
    }

    #[test]
    fn load_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        tiny_model(5).save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Model::load(&path), Err(Error::ModelFormat(_))));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'E';
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Model::load(&path), Err(Error::ModelFormat(_))));
    }

    #[test]
    fn check_data_dims_mismatch() {
        let model = tiny_model(1);
        let good = crate::data::InferredDims {
            global: 4,
            object: Some(3),
            face: Some(3),
        };
        model.check_data_dims(&good).unwrap();
        let bad = crate::data::InferredDims {
            global: 5,
            object: Some(3),
            face: None,
        };
        assert!(matches!(
            model.check_data_dims(&bad),
            Err(Error::ModelFormat(_))
        ));
    }
}
