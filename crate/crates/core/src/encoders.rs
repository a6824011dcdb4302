//! Branch encoders for the global and expression stimuli.
//!
//! Fixtures deliver raw stimulus vectors; an encoder maps them to the
//! fixed-length branch feature. Trainable mode is an affine projection
//! followed by tanh; passthrough hands the raw vector through unchanged
//! for fixtures that already carry embedding-space features. An absent
//! face encodes to an exact zero vector and leaves the encoder
//! parameters untouched by backward.

use crate::diffmath::{
    affine, affine_backward, tanh_backward, tanh_map, HasParams, Param, Rng, Tensor,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderMode {
    Trainable,
    Passthrough,
}

/// Projection parameters for one branch.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub mode: EncoderMode,
    proj: Option<Param>,
    bias: Option<Param>,
    d_raw: usize,
    d_out: usize,
}

impl EncoderParams {
    pub fn trainable(d_raw: usize, d_out: usize, rng: &mut Rng) -> EncoderParams {
        EncoderParams {
            mode: EncoderMode::Trainable,
            proj: Some(Param::new(crate::diffmath::init_matrix(rng, d_out, d_raw))),
            bias: Some(Param::new(Tensor::zeros_vector(d_out))),
            d_raw,
            d_out,
        }
    }

    /// Identity encoder; requires d_out = d_raw by construction.
    pub fn passthrough(d: usize) -> EncoderParams {
        EncoderParams {
            mode: EncoderMode::Passthrough,
            proj: None,
            bias: None,
            d_raw: d,
            d_out: d,
        }
    }

    pub fn d_raw(&self) -> usize {
        self.d_raw
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }
}

impl HasParams for EncoderParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        if let Some(p) = &mut self.proj {
            f("proj", p);
        }
        if let Some(b) = &mut self.bias {
            f("bias", b);
        }
    }
}

/// Forward intermediates: the tanh output, absent for passthrough and
/// for the missing-face case.
pub type EncodeTrace = Option<Tensor>;

/// Encode the global stimulus vector: `tanh(W raw + b)` in trainable
/// mode, the identity in passthrough mode.
pub fn encode_global(p: &EncoderParams, raw: &Tensor) -> Result<(Tensor, EncodeTrace)> {
    let n = raw.expect_vector("encoder input")?;
    if n != p.d_raw {
        return Err(Error::ShapeMismatch(format!(
            "encoder: input {} vs expected [{}]",
            raw.shape(),
            p.d_raw
        )));
    }
    match p.mode {
        EncoderMode::Passthrough => Ok((raw.clone(), None)),
        EncoderMode::Trainable => {
            let proj = p.proj.as_ref().expect("trainable encoder has weights");
            let bias = p.bias.as_ref().expect("trainable encoder has bias");
            let y = tanh_map(&affine(&proj.value, raw, Some(&bias.value))?);
            Ok((y.clone(), Some(y)))
        }
    }
}

/// Backward of [`encode_global`].
pub fn encode_backward(
    p: &mut EncoderParams,
    raw: &Tensor,
    trace: &EncodeTrace,
    grad_out: &Tensor,
    grad_raw: Option<&mut Tensor>,
) -> Result<()> {
    match p.mode {
        EncoderMode::Passthrough => {
            if let Some(gr) = grad_raw {
                gr.add_assign(grad_out);
            }
            Ok(())
        }
        EncoderMode::Trainable => {
            let y = trace
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("encoder backward without trace".into()))?;
            let mut d_pre = Tensor::zeros_vector(p.d_out);
            tanh_backward(y, grad_out, &mut d_pre);
            let proj = p.proj.as_mut().expect("trainable encoder has weights");
            let bias = p.bias.as_mut().expect("trainable encoder has bias");
            affine_backward(
                &proj.value,
                raw,
                &d_pre,
                &mut proj.grad,
                grad_raw,
                Some(&mut bias.grad),
            );
            Ok(())
        }
    }
}

/// Face stimulus input: a raw vector when a face was detected, nothing
/// otherwise.
#[derive(Clone, Debug, Default)]
pub struct FaceInput {
    raw: Option<Tensor>,
}

impl FaceInput {
    pub fn present(raw: Tensor) -> FaceInput {
        FaceInput { raw: Some(raw) }
    }

    pub fn absent() -> FaceInput {
        FaceInput { raw: None }
    }

    pub fn is_present(&self) -> bool {
        self.raw.is_some()
    }

    pub fn raw(&self) -> Option<&Tensor> {
        self.raw.as_ref()
    }
}

/// Encode the face stimulus. An absent face yields an exact zero vector
/// that contributes no gradient to the encoder.
pub fn encode_expression(p: &EncoderParams, face: &FaceInput) -> Result<(Tensor, EncodeTrace)> {
    match face.raw() {
        None => Ok((Tensor::zeros_vector(p.d_out), None)),
        Some(raw) => encode_global(p, raw),
    }
}

/// Backward of [`encode_expression`]; a no-op for absent faces.
pub fn expression_backward(
    p: &mut EncoderParams,
    face: &FaceInput,
    trace: &EncodeTrace,
    grad_out: &Tensor,
    grad_raw: Option<&mut Tensor>,
) -> Result<()> {
    match face.raw() {
        None => Ok(()),
        Some(raw) => encode_backward(p, raw, trace, grad_out, grad_raw),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;

    #[test]
    fn passthrough_is_identity_bitwise() {
        let p = EncoderParams::passthrough(2);
        let raw = Tensor::vector(vec![0.1, 0.2]).unwrap();
        let (y, trace) = encode_global(&p, &raw).unwrap();
        assert_eq!(y.as_slice(), raw.as_slice());
        assert!(trace.is_none());
    }

    #[test]
    fn trainable_zero_params_give_zero() {
        let mut rng = Rng::seed_from_u64(0);
        let mut p = EncoderParams::trainable(3, 2, &mut rng);
        p.visit_params(&mut |_, param| param.value.fill(0.0));
        let raw = Tensor::vector(vec![1.0, -2.0, 0.5]).unwrap();
        let (y, _) = encode_global(&p, &raw).unwrap();
        assert_eq!(y.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = Rng::seed_from_u64(1);
        let p = EncoderParams::trainable(3, 2, &mut rng);
        let raw = Tensor::vector(vec![1.0, 2.0]).unwrap();
        assert!(encode_global(&p, &raw).is_err());
        let face = FaceInput::present(raw);
        assert!(encode_expression(&p, &face).is_err());
    }

    #[test]
    fn absent_face_is_bitwise_zero_with_zero_grads() {
        let mut rng = Rng::seed_from_u64(2);
        let mut p = EncoderParams::trainable(3, 4, &mut rng);
        let face = FaceInput::absent();
        let (v, trace) = encode_expression(&p, &face).unwrap();
        assert_eq!(v.as_slice(), &[0.0; 4]);
        assert_eq!(v.len(), p.d_out());

        let grad = Tensor::vector(vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        expression_backward(&mut p, &face, &trace, &grad, None).unwrap();
        p.visit_params(&mut |name, param| {
            for g in param.grad.as_slice() {
                assert_eq!(*g, 0.0, "{name} grad not zero for absent face");
            }
        });
    }

    #[test]
    fn output_length_fixed_regardless_of_presence() {
        let mut rng = Rng::seed_from_u64(3);
        let p = EncoderParams::trainable(3, 5, &mut rng);
        let (absent, _) = encode_expression(&p, &FaceInput::absent()).unwrap();
        let raw = Tensor::vector(vec![0.1, 0.2, 0.3]).unwrap();
        let (present, _) = encode_expression(&p, &FaceInput::present(raw)).unwrap();
        assert_eq!(absent.len(), 5);
        assert_eq!(present.len(), 5);
    }

    #[test]
    fn trainable_backward_matches_oracle() {
        let mut rng = Rng::seed_from_u64(4);
        let mut p = EncoderParams::trainable(4, 3, &mut rng);
        let raw = Tensor::vector(vec![0.2, -0.4, 0.8, 0.1]).unwrap();
        let probe = Tensor::vector(vec![1.0, -0.5, 0.25]).unwrap();

        let (_, trace) = encode_global(&p, &raw).unwrap();
        let mut grad_raw = Tensor::zeros_vector(4);
        encode_backward(&mut p, &raw, &trace, &probe, Some(&mut grad_raw)).unwrap();

        let analytic = gradcheck::flat_param_grads(&mut p);
        let fd = gradcheck::fd_param_grads(
            &mut p,
            |e| {
                let (y, _) = encode_global(e, &raw).unwrap();
                y.as_slice()
                    .iter()
                    .zip(probe.as_slice())
                    .map(|(a, b)| a * b)
                    .sum()
            },
            1e-6,
        );
        assert!(gradcheck::max_rel_err(&analytic, &fd) < 1e-4);

        let fd_raw = crate::diffmath::finite_diff_grad(
            |v| {
                let (y, _) = encode_global(&p, &Tensor::vector(v.to_vec()).unwrap()).unwrap();
                y.as_slice()
                    .iter()
                    .zip(probe.as_slice())
                    .map(|(a, b)| a * b)
                    .sum()
            },
            raw.as_slice(),
            1e-6,
        );
        assert!(gradcheck::max_rel_err(grad_raw.as_slice(), &fd_raw) < 1e-4);
    }
}
