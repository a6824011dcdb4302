//! Object-set fusion: the attention-LSTM / additive-attention /
//! correlation-LSTM stack that turns N object feature vectors into one
//! semantic vector.
//!
//! Per step t (states start at zero, f_mean is constant per image):
//!
//! 1. the attention LSTM consumes `[h_cor(t-1), f_mean]`,
//! 2. additive attention scores every object against `h_att(t)` and
//!    softmax-normalizes the scores,
//! 3. the correlation LSTM consumes `[h_att(t-1), f_att(t)]` where
//!    `f_att` is the attention-weighted sum of the object features.
//!
//! The semantic vector is the correlation hidden state after the last
//! step. An empty object set short-circuits to a zero vector, mirroring
//! the absent-face convention of the expression branch.

use crate::diffmath::{
    affine, affine_backward, concat, concat_split, mean_rows, sigmoid_backward, sigmoid_map,
    softmax, softmax_backward, tanh_backward, tanh_map, weighted_sum, weighted_sum_backward,
    HasParams, Param, Rng, Tensor,
};
use crate::error::{Error, Result};

/// Gate order of every LSTM in this crate: input, forget, cell-candidate,
/// output. The forget bias starts at 1.0, the others at zero.
pub const GATE_NAMES: [&str; 4] = ["input", "forget", "cell", "output"];
const GATE_FORGET: usize = 1;
const GATE_CELL: usize = 2;

/// One LSTM layer: per-gate input weights [H x I], recurrent weights
/// [H x H], and biases [H].
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w_x: [Param; 4],
    pub w_h: [Param; 4],
    pub bias: [Param; 4],
    input_size: usize,
    hidden_size: usize,
}

impl LstmParams {
    /// Weights drawn uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) in visit
    /// order; biases zero except the forget gate at 1.0.
    pub fn new(input_size: usize, hidden_size: usize, rng: &mut Rng) -> LstmParams {
        let w_x = std::array::from_fn(|_| {
            Param::new(crate::diffmath::init_matrix(rng, hidden_size, input_size))
        });
        let w_h = std::array::from_fn(|_| {
            Param::new(crate::diffmath::init_matrix(rng, hidden_size, hidden_size))
        });
        let bias = std::array::from_fn(|g| {
            let mut b = Tensor::zeros_vector(hidden_size);
            if g == GATE_FORGET {
                b.fill(1.0);
            }
            Param::new(b)
        });
        LstmParams {
            w_x,
            w_h,
            bias,
            input_size,
            hidden_size,
        }
    }

    /// All-zero parameters, forget bias included. Test scaffolding.
    pub fn zeroed(input_size: usize, hidden_size: usize) -> LstmParams {
        let mut p = LstmParams::new(input_size, hidden_size, &mut Rng::seed_from_u64(0));
        p.visit_params(&mut |_, param| param.value.fill(0.0));
        p
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }
}

impl HasParams for LstmParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (g, p) in self.w_x.iter_mut().enumerate() {
            f(&format!("w_x.{}", GATE_NAMES[g]), p);
        }
        for (g, p) in self.w_h.iter_mut().enumerate() {
            f(&format!("w_h.{}", GATE_NAMES[g]), p);
        }
        for (g, p) in self.bias.iter_mut().enumerate() {
            f(&format!("bias.{}", GATE_NAMES[g]), p);
        }
    }
}

/// Hidden and cell state of one LSTM layer.
#[derive(Clone, Debug)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(hidden_size: usize) -> LstmState {
        LstmState {
            h: Tensor::zeros_vector(hidden_size),
            c: Tensor::zeros_vector(hidden_size),
        }
    }
}

/// Stored forward intermediates of one LSTM step, enough for an exact
/// backward pass.
#[derive(Clone, Debug)]
pub struct LstmStepTrace {
    pub x: Tensor,
    pub h_prev: Tensor,
    pub c_prev: Tensor,
    /// Post-activation gates in gate order.
    pub gates: [Tensor; 4],
    pub c_new: Tensor,
    pub tanh_c_new: Tensor,
    pub h_new: Tensor,
}

/// Standard gated update: c' = f (.) c + i (.) g, h' = o (.) tanh(c').
pub fn lstm_step(
    p: &LstmParams,
    x: &Tensor,
    state: &LstmState,
) -> Result<(LstmState, LstmStepTrace)> {
    if x.expect_vector("lstm input")? != p.input_size {
        return Err(Error::ShapeMismatch(format!(
            "lstm_step: input {} vs expected [{}]",
            x.shape(),
            p.input_size
        )));
    }
    let mut gates = Vec::with_capacity(4);
    for g in 0..4 {
        let mut z = affine(&p.w_x[g].value, x, Some(&p.bias[g].value))?;
        z.add_assign(&affine(&p.w_h[g].value, &state.h, None)?);
        gates.push(if g == GATE_CELL { tanh_map(&z) } else { sigmoid_map(&z) });
    }
    let gates: [Tensor; 4] = gates.try_into().expect("four gates");

    let h = p.hidden_size;
    let mut c_new = Tensor::zeros_vector(h);
    for j in 0..h {
        c_new.as_mut_slice()[j] =
            gates[1].at(j) * state.c.at(j) + gates[0].at(j) * gates[2].at(j);
    }
    let tanh_c_new = tanh_map(&c_new);
    let mut h_new = Tensor::zeros_vector(h);
    for j in 0..h {
        h_new.as_mut_slice()[j] = gates[3].at(j) * tanh_c_new.at(j);
    }

    let trace = LstmStepTrace {
        x: x.clone(),
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        gates,
        c_new: c_new.clone(),
        tanh_c_new,
        h_new: h_new.clone(),
    };
    Ok((LstmState { h: h_new, c: c_new }, trace))
}

/// Backward of [`lstm_step`]. Takes gradients w.r.t. the new hidden and
/// cell state, accumulates into the params, and returns gradients w.r.t.
/// the input and the previous state (x, h_prev, c_prev).
pub fn lstm_step_backward(
    p: &mut LstmParams,
    trace: &LstmStepTrace,
    grad_h: &Tensor,
    grad_c: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let h = p.hidden_size;
    let mut d_gates: [Tensor; 4] = std::array::from_fn(|_| Tensor::zeros_vector(h));
    let mut dc_prev = Tensor::zeros_vector(h);
    for j in 0..h {
        let t = trace.tanh_c_new.at(j);
        // h' = o (.) tanh(c')
        d_gates[3].as_mut_slice()[j] = grad_h.at(j) * t;
        let dct = grad_c.at(j) + grad_h.at(j) * trace.gates[3].at(j) * (1.0 - t * t);
        // c' = f (.) c + i (.) g
        d_gates[0].as_mut_slice()[j] = dct * trace.gates[2].at(j);
        d_gates[1].as_mut_slice()[j] = dct * trace.c_prev.at(j);
        d_gates[2].as_mut_slice()[j] = dct * trace.gates[0].at(j);
        dc_prev.as_mut_slice()[j] = dct * trace.gates[1].at(j);
    }

    let mut dx = Tensor::zeros_vector(p.input_size);
    let mut dh_prev = Tensor::zeros_vector(h);
    for (g, d_gate) in d_gates.iter().enumerate() {
        let mut d_pre = Tensor::zeros_vector(h);
        if g == GATE_CELL {
            tanh_backward(&trace.gates[g], d_gate, &mut d_pre);
        } else {
            sigmoid_backward(&trace.gates[g], d_gate, &mut d_pre);
        }
        affine_backward(
            &p.w_x[g].value,
            &trace.x,
            &d_pre,
            &mut p.w_x[g].grad,
            Some(&mut dx),
            Some(&mut p.bias[g].grad),
        );
        affine_backward(
            &p.w_h[g].value,
            &trace.h_prev,
            &d_pre,
            &mut p.w_h[g].grad,
            Some(&mut dh_prev),
            None,
        );
    }
    (dx, dh_prev, dc_prev)
}

/// Additive attention parameters: each object is scored as
/// `omega . tanh(W_f f_i + W_h h_att)`.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub w_f: Param,
    pub w_h: Param,
    pub omega: Param,
}

impl AttentionParams {
    pub fn new(attn_size: usize, feat_size: usize, hidden_size: usize, rng: &mut Rng) -> Self {
        AttentionParams {
            w_f: Param::new(crate::diffmath::init_matrix(rng, attn_size, feat_size)),
            w_h: Param::new(crate::diffmath::init_matrix(rng, attn_size, hidden_size)),
            omega: Param::new(crate::diffmath::init_vector(rng, attn_size, attn_size)),
        }
    }
}

impl HasParams for AttentionParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("w_f", &mut self.w_f);
        f("w_h", &mut self.w_h);
        f("omega", &mut self.omega);
    }
}

/// Normalized attention weights over the object features, conditioned on
/// the attention-LSTM hidden state. Also returns the per-object
/// `tanh(W_f f_i + W_h h_att)` vectors for the backward pass.
pub fn attention_weights(
    p: &AttentionParams,
    objects: &[Tensor],
    h_att: &Tensor,
) -> Result<(Tensor, Vec<Tensor>)> {
    if objects.is_empty() {
        return Err(Error::InvalidArgument(
            "attention over empty object set".into(),
        ));
    }
    let shared = affine(&p.w_h.value, h_att, None)?;
    let mut tanh_scores = Vec::with_capacity(objects.len());
    let mut raw = Vec::with_capacity(objects.len());
    for f_i in objects {
        let mut u = affine(&p.w_f.value, f_i, None)?;
        u.add_assign(&shared);
        let t = tanh_map(&u);
        let mut score = 0.0;
        for (w, v) in p.omega.value.as_slice().iter().zip(t.as_slice()) {
            score += w * v;
        }
        raw.push(score);
        tanh_scores.push(t);
    }
    let alpha = softmax(&Tensor::vector(raw)?)?;
    Ok((alpha, tanh_scores))
}

/// Backward of [`attention_weights`] given the gradient w.r.t. alpha.
/// Accumulates into the attention params and the per-object gradients,
/// and returns the gradient w.r.t. `h_att`.
fn attention_backward(
    p: &mut AttentionParams,
    tanh_scores: &[Tensor],
    alpha: &Tensor,
    objects: &[Tensor],
    h_att: &Tensor,
    grad_alpha: &Tensor,
    obj_grads: &mut [Tensor],
) -> Tensor {
    let attn_size = p.omega.value.len();
    let hidden = h_att.len();

    let mut d_scores = Tensor::zeros_vector(objects.len());
    softmax_backward(alpha, grad_alpha, &mut d_scores);

    let mut grad_h = Tensor::zeros_vector(hidden);
    for (i, f_i) in objects.iter().enumerate() {
        let ds = d_scores.at(i);
        p.omega.grad.add_scaled(&tanh_scores[i], ds);
        let mut d_tanh = Tensor::zeros_vector(attn_size);
        d_tanh.add_scaled(&p.omega.value, ds);
        let mut du = Tensor::zeros_vector(attn_size);
        tanh_backward(&tanh_scores[i], &d_tanh, &mut du);
        affine_backward(
            &p.w_f.value,
            f_i,
            &du,
            &mut p.w_f.grad,
            Some(&mut obj_grads[i]),
            None,
        );
        affine_backward(
            &p.w_h.value,
            h_att,
            &du,
            &mut p.w_h.grad,
            Some(&mut grad_h),
            None,
        );
    }
    grad_h
}

/// The full stack: two LSTM layers plus the attention module. Both
/// layers share the hidden size H and consume inputs of size H + F.
#[derive(Clone, Debug)]
pub struct SemanticNetParams {
    pub att_lstm: LstmParams,
    pub cor_lstm: LstmParams,
    pub attention: AttentionParams,
    hidden_size: usize,
    feat_size: usize,
}

impl SemanticNetParams {
    pub fn new(feat_size: usize, hidden_size: usize, attn_size: usize, rng: &mut Rng) -> Self {
        SemanticNetParams {
            att_lstm: LstmParams::new(hidden_size + feat_size, hidden_size, rng),
            cor_lstm: LstmParams::new(hidden_size + feat_size, hidden_size, rng),
            attention: AttentionParams::new(attn_size, feat_size, hidden_size, rng),
            hidden_size,
            feat_size,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn feat_size(&self) -> usize {
        self.feat_size
    }
}

impl HasParams for SemanticNetParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.att_lstm
            .visit_params(&mut |name, p| f(&format!("att_lstm.{name}"), p));
        self.cor_lstm
            .visit_params(&mut |name, p| f(&format!("cor_lstm.{name}"), p));
        self.attention
            .visit_params(&mut |name, p| f(&format!("attention.{name}"), p));
    }
}

/// Per-step forward intermediates of the full stack.
#[derive(Clone, Debug)]
pub struct SemanticStepTrace {
    pub att: LstmStepTrace,
    pub tanh_scores: Vec<Tensor>,
    pub alpha: Tensor,
    pub f_att: Tensor,
    pub cor: LstmStepTrace,
}

/// Everything `semantic_backward` needs; one entry per executed step.
#[derive(Clone, Debug, Default)]
pub struct SemanticTrace {
    pub n_objects: usize,
    pub f_mean: Option<Tensor>,
    pub steps: Vec<SemanticStepTrace>,
}

/// Run the stack for `t_steps` steps over the object set and return the
/// semantic vector (the last correlation hidden state) plus the trace.
///
/// An empty object set returns a zero vector and an empty trace.
pub fn semantic_forward(
    p: &SemanticNetParams,
    objects: &[Tensor],
    t_steps: usize,
) -> Result<(Tensor, SemanticTrace)> {
    if t_steps < 1 {
        return Err(Error::InvalidArgument("semantic_forward: t_steps < 1".into()));
    }
    if objects.is_empty() {
        return Ok((
            Tensor::zeros_vector(p.hidden_size),
            SemanticTrace::default(),
        ));
    }
    for f_i in objects {
        if f_i.expect_vector("object feature")? != p.feat_size {
            return Err(Error::ShapeMismatch(format!(
                "object feature {} vs configured [{}]",
                f_i.shape(),
                p.feat_size
            )));
        }
    }

    let f_mean = mean_rows(objects)?;
    let mut att_state = LstmState::zeros(p.hidden_size);
    let mut cor_state = LstmState::zeros(p.hidden_size);
    let mut steps = Vec::with_capacity(t_steps);

    for _ in 0..t_steps {
        let h_att_prev = att_state.h.clone();
        let x_att = concat(&[&cor_state.h, &f_mean])?;
        let (att_next, att_trace) = lstm_step(&p.att_lstm, &x_att, &att_state)?;
        let (alpha, tanh_scores) = attention_weights(&p.attention, objects, &att_next.h)?;
        let f_att = weighted_sum(objects, &alpha)?;
        let x_cor = concat(&[&h_att_prev, &f_att])?;
        let (cor_next, cor_trace) = lstm_step(&p.cor_lstm, &x_cor, &cor_state)?;

        steps.push(SemanticStepTrace {
            att: att_trace,
            tanh_scores,
            alpha,
            f_att,
            cor: cor_trace,
        });
        att_state = att_next;
        cor_state = cor_next;
    }

    Ok((
        cor_state.h,
        SemanticTrace {
            n_objects: objects.len(),
            f_mean: Some(f_mean),
            steps,
        },
    ))
}

/// Exact reverse of [`semantic_forward`]: accumulates gradients into the
/// params and, when requested, into the per-object feature gradients.
pub fn semantic_backward(
    p: &mut SemanticNetParams,
    trace: &SemanticTrace,
    objects: &[Tensor],
    grad_v: &Tensor,
    obj_grads: Option<&mut [Tensor]>,
) -> Result<()> {
    if objects.len() != trace.n_objects {
        return Err(Error::ShapeMismatch(format!(
            "semantic_backward: {} objects vs trace with {}",
            objects.len(),
            trace.n_objects
        )));
    }
    if trace.steps.is_empty() {
        // N = 0: the forward contributed nothing.
        return Ok(());
    }
    if grad_v.expect_vector("grad_v")? != p.hidden_size {
        return Err(Error::ShapeMismatch(format!(
            "semantic_backward: grad {} vs hidden [{}]",
            grad_v.shape(),
            p.hidden_size
        )));
    }

    let h = p.hidden_size;
    let f = p.feat_size;
    let n = objects.len();

    let mut local_obj_grads = vec![Tensor::zeros_vector(f); n];
    let mut df_mean = Tensor::zeros_vector(f);

    let mut dh_cor = grad_v.clone();
    let mut dc_cor = Tensor::zeros_vector(h);
    let mut dh_att = Tensor::zeros_vector(h);
    let mut dc_att = Tensor::zeros_vector(h);

    for step in trace.steps.iter().rev() {
        // Correlation LSTM at t: x = [h_att(t-1), f_att(t)].
        let (dx_cor, dh_cor_rec, dc_cor_prev) =
            lstm_step_backward(&mut p.cor_lstm, &step.cor, &dh_cor, &dc_cor);
        let parts = concat_split(&dx_cor, &[h, f]);
        let dh_att_from_xcor = &parts[0];
        let df_att = &parts[1];

        // Attended sum: f_att = sum_i alpha_i f_i.
        let mut d_alpha = Tensor::zeros_vector(n);
        weighted_sum_backward(
            objects,
            &step.alpha,
            df_att,
            &mut local_obj_grads,
            Some(&mut d_alpha),
        );

        // Attention scores condition on h_att(t) = the hidden state the
        // attention LSTM produced this step.
        let dh_att_from_scores = attention_backward(
            &mut p.attention,
            &step.tanh_scores,
            &step.alpha,
            objects,
            &step.att.h_new,
            &d_alpha,
            &mut local_obj_grads,
        );
        dh_att.add_assign(&dh_att_from_scores);

        // Attention LSTM at t: x = [h_cor(t-1), f_mean].
        let (dx_att, dh_att_rec, dc_att_prev) =
            lstm_step_backward(&mut p.att_lstm, &step.att, &dh_att, &dc_att);
        let parts = concat_split(&dx_att, &[h, f]);
        let dh_cor_from_xatt = &parts[0];
        df_mean.add_assign(&parts[1]);

        dh_cor = dh_cor_rec;
        dh_cor.add_assign(dh_cor_from_xatt);
        dc_cor = dc_cor_prev;
        dh_att = dh_att_rec;
        dh_att.add_assign(dh_att_from_xcor);
        dc_att = dc_att_prev;
    }

    // f_mean distributes 1/N of its gradient to every object.
    let scale = 1.0 / n as f64;
    for og in &mut local_obj_grads {
        og.add_scaled(&df_mean, scale);
    }
    if let Some(out) = obj_grads {
        for (o, l) in out.iter_mut().zip(&local_obj_grads) {
            o.add_assign(l);
        }
    }
    Ok(())
}

/// Ablation variant of the stack: mean-pool the object features and map
/// through two affine+tanh layers. Same zero fallback for an empty set.
#[derive(Clone, Debug)]
pub struct FcSemanticParams {
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
    hidden_size: usize,
    feat_size: usize,
}

impl FcSemanticParams {
    pub fn new(feat_size: usize, hidden_size: usize, rng: &mut Rng) -> Self {
        FcSemanticParams {
            w1: Param::new(crate::diffmath::init_matrix(rng, hidden_size, feat_size)),
            b1: Param::new(Tensor::zeros_vector(hidden_size)),
            w2: Param::new(crate::diffmath::init_matrix(rng, hidden_size, hidden_size)),
            b2: Param::new(Tensor::zeros_vector(hidden_size)),
            hidden_size,
            feat_size,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn feat_size(&self) -> usize {
        self.feat_size
    }
}

impl HasParams for FcSemanticParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("w1", &mut self.w1);
        f("b1", &mut self.b1);
        f("w2", &mut self.w2);
        f("b2", &mut self.b2);
    }
}

#[derive(Clone, Debug, Default)]
pub struct FcSemanticTrace {
    pub f_mean: Option<Tensor>,
    pub y1: Option<Tensor>,
    pub y2: Option<Tensor>,
}

pub fn fc_semantic_forward(
    p: &FcSemanticParams,
    objects: &[Tensor],
) -> Result<(Tensor, FcSemanticTrace)> {
    if objects.is_empty() {
        return Ok((
            Tensor::zeros_vector(p.hidden_size),
            FcSemanticTrace::default(),
        ));
    }
    let f_mean = mean_rows(objects)?;
    let y1 = tanh_map(&affine(&p.w1.value, &f_mean, Some(&p.b1.value))?);
    let y2 = tanh_map(&affine(&p.w2.value, &y1, Some(&p.b2.value))?);
    Ok((
        y2.clone(),
        FcSemanticTrace {
            f_mean: Some(f_mean),
            y1: Some(y1),
            y2: Some(y2),
        },
    ))
}

pub fn fc_semantic_backward(
    p: &mut FcSemanticParams,
    trace: &FcSemanticTrace,
    objects: &[Tensor],
    grad_v: &Tensor,
    obj_grads: Option<&mut [Tensor]>,
) -> Result<()> {
    let (Some(f_mean), Some(y1), Some(y2)) = (&trace.f_mean, &trace.y1, &trace.y2) else {
        return Ok(()); // N = 0
    };
    let mut d_pre2 = Tensor::zeros_vector(p.hidden_size);
    tanh_backward(y2, grad_v, &mut d_pre2);
    let mut dy1 = Tensor::zeros_vector(p.hidden_size);
    affine_backward(
        &p.w2.value,
        y1,
        &d_pre2,
        &mut p.w2.grad,
        Some(&mut dy1),
        Some(&mut p.b2.grad),
    );
    let mut d_pre1 = Tensor::zeros_vector(p.hidden_size);
    tanh_backward(y1, &dy1, &mut d_pre1);
    let mut df_mean = Tensor::zeros_vector(p.feat_size);
    affine_backward(
        &p.w1.value,
        f_mean,
        &d_pre1,
        &mut p.w1.grad,
        Some(&mut df_mean),
        Some(&mut p.b1.grad),
    );
    if let Some(out) = obj_grads {
        let scale = 1.0 / objects.len() as f64;
        for og in out.iter_mut() {
            og.add_scaled(&df_mean, scale);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rand_objects(rng: &mut Rng, n: usize, f: usize) -> Vec<Tensor> {
        (0..n)
            .map(|_| {
                Tensor::vector((0..f).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_params_zero_state_stay_zero() {
        let p = LstmParams::zeroed(3, 2);
        let x = Tensor::vector(vec![0.4, -1.0, 2.0]).unwrap();
        let (s, _) = lstm_step(&p, &x, &LstmState::zeros(2)).unwrap();
        assert_eq!(s.h.as_slice(), &[0.0, 0.0]);
        assert_eq!(s.c.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn lstm_rejects_bad_input_size() {
        let p = LstmParams::zeroed(3, 2);
        let x = Tensor::vector(vec![1.0, 2.0]).unwrap();
        assert!(lstm_step(&p, &x, &LstmState::zeros(2)).is_err());
    }

    // With a saturated forget gate and everything else zero, the cell
    // state passes through almost unchanged.
    #[test]
    fn saturated_forget_gate_preserves_cell() {
        let mut p = LstmParams::zeroed(2, 3);
        p.bias[1].value.fill(20.0);
        let state = LstmState {
            h: Tensor::zeros_vector(3),
            c: Tensor::vector(vec![0.3, -0.9, 0.5]).unwrap(),
        };
        let x = Tensor::vector(vec![1.0, -1.0]).unwrap();
        let (s, _) = lstm_step(&p, &x, &state).unwrap();
        for j in 0..3 {
            assert!((s.c.at(j) - state.c.at(j)).abs() < 1e-8);
        }
    }

    #[test]
    fn lstm_step_backward_matches_oracle() {
        let mut rng = Rng::seed_from_u64(17);
        let (input, hidden) = (3, 2);
        let mut p = LstmParams::new(input, hidden, &mut rng);
        let x = Tensor::vector(vec![0.2, -0.4, 0.9]).unwrap();
        let state = LstmState {
            h: Tensor::vector(vec![0.1, -0.2]).unwrap(),
            c: Tensor::vector(vec![0.3, 0.05]).unwrap(),
        };
        let probe_h = Tensor::vector(vec![0.7, -1.1]).unwrap();
        let probe_c = Tensor::vector(vec![0.4, 0.6]).unwrap();

        let (_, trace) = lstm_step(&p, &x, &state).unwrap();
        let (dx, dh_prev, dc_prev) = lstm_step_backward(&mut p, &trace, &probe_h, &probe_c);

        // Scalar loss = probe_h . h' + probe_c . c'.
        let loss_with = |p: &LstmParams, x: &Tensor, state: &LstmState| {
            let (s, _) = lstm_step(p, x, state).unwrap();
            let mut l = 0.0;
            for j in 0..hidden {
                l += probe_h.at(j) * s.h.at(j) + probe_c.at(j) * s.c.at(j);
            }
            l
        };

        // Input and previous-state grads.
        let fd_x = crate::diffmath::finite_diff_grad(
            |v| loss_with(&p, &Tensor::vector(v.to_vec()).unwrap(), &state),
            x.as_slice(),
            1e-6,
        );
        for (a, fd) in dx.as_slice().iter().zip(&fd_x) {
            assert_relative_eq!(a, fd, max_relative = 1e-4, epsilon = 1e-7);
        }
        let fd_h = crate::diffmath::finite_diff_grad(
            |v| {
                let s = LstmState {
                    h: Tensor::vector(v.to_vec()).unwrap(),
                    c: state.c.clone(),
                };
                loss_with(&p, &x, &s)
            },
            state.h.as_slice(),
            1e-6,
        );
        for (a, fd) in dh_prev.as_slice().iter().zip(&fd_h) {
            assert_relative_eq!(a, fd, max_relative = 1e-4, epsilon = 1e-7);
        }
        let fd_c = crate::diffmath::finite_diff_grad(
            |v| {
                let s = LstmState {
                    h: state.h.clone(),
                    c: Tensor::vector(v.to_vec()).unwrap(),
                };
                loss_with(&p, &x, &s)
            },
            state.c.as_slice(),
            1e-6,
        );
        for (a, fd) in dc_prev.as_slice().iter().zip(&fd_c) {
            assert_relative_eq!(a, fd, max_relative = 1e-4, epsilon = 1e-7);
        }

        // Parameter grads through the visitor-based harness.
        let analytic = crate::gradcheck::flat_param_grads(&mut p);
        let fd = crate::gradcheck::fd_param_grads(
            &mut p,
            |p| loss_with(p, &x, &state),
            1e-6,
        );
        assert!(crate::gradcheck::max_rel_err(&analytic, &fd) < 1e-4);
    }

    #[test]
    fn attention_singleton_is_one() {
        let mut rng = Rng::seed_from_u64(3);
        let p = AttentionParams::new(3, 4, 2, &mut rng);
        let objects = rand_objects(&mut rng, 1, 4);
        let h = Tensor::vector(vec![0.5, -0.5]).unwrap();
        let (alpha, _) = attention_weights(&p, &objects, &h).unwrap();
        assert_eq!(alpha.as_slice(), &[1.0]);
    }

    #[test]
    fn attention_identical_objects_uniform() {
        let mut rng = Rng::seed_from_u64(4);
        let p = AttentionParams::new(3, 4, 2, &mut rng);
        let obj = Tensor::vector(vec![0.3, -0.2, 0.9, 0.1]).unwrap();
        let objects = vec![obj.clone(), obj.clone(), obj];
        let h = Tensor::vector(vec![0.5, -0.5]).unwrap();
        let (alpha, _) = attention_weights(&p, &objects, &h).unwrap();
        for a in alpha.as_slice() {
            assert_relative_eq!(*a, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn attention_zero_maps_uniform() {
        let mut rng = Rng::seed_from_u64(5);
        let mut p = AttentionParams::new(3, 4, 2, &mut rng);
        p.w_f.value.fill(0.0);
        p.w_h.value.fill(0.0);
        let objects = rand_objects(&mut rng, 4, 4);
        let h = Tensor::vector(vec![0.5, -0.5]).unwrap();
        let (alpha, _) = attention_weights(&p, &objects, &h).unwrap();
        for a in alpha.as_slice() {
            assert_relative_eq!(*a, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn semantic_empty_objects_is_zero() {
        let mut rng = Rng::seed_from_u64(6);
        let p = SemanticNetParams::new(3, 4, 3, &mut rng);
        let (v, trace) = semantic_forward(&p, &[], 2).unwrap();
        assert_eq!(v.as_slice(), &[0.0; 4]);
        assert!(trace.steps.is_empty());
    }

    #[test]
    fn semantic_zero_params_give_zero_vector() {
        let mut p = SemanticNetParams::new(3, 4, 3, &mut Rng::seed_from_u64(0));
        p.visit_params(&mut |_, param| param.value.fill(0.0));
        let objects = rand_objects(&mut Rng::seed_from_u64(8), 1, 3);
        let (v, _) = semantic_forward(&p, &objects, 1).unwrap();
        assert_eq!(v.as_slice(), &[0.0; 4]);
    }

    #[test]
    fn semantic_rejects_zero_steps() {
        let p = SemanticNetParams::new(3, 4, 3, &mut Rng::seed_from_u64(0));
        assert!(semantic_forward(&p, &[], 0).is_err());
    }

    #[test]
    fn alpha_is_probability_vector_each_step() {
        let mut rng = Rng::seed_from_u64(10);
        let p = SemanticNetParams::new(3, 4, 3, &mut rng);
        let objects = rand_objects(&mut rng, 5, 3);
        let (_, trace) = semantic_forward(&p, &objects, 4).unwrap();
        assert_eq!(trace.steps.len(), 4);
        for step in &trace.steps {
            let sum: f64 = step.alpha.as_slice().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for a in step.alpha.as_slice() {
                assert!(*a > 0.0);
            }
        }
    }

    #[test]
    fn semantic_is_deterministic() {
        let build = || {
            let mut rng = Rng::seed_from_u64(99);
            let p = SemanticNetParams::new(3, 4, 3, &mut rng);
            let objects = rand_objects(&mut rng, 3, 3);
            let (v, _) = semantic_forward(&p, &objects, 3).unwrap();
            v
        };
        assert_eq!(build().as_slice(), build().as_slice());
    }

    // With zero attention params the weights are uniform, so v_s must be
    // invariant under permuting the object order (up to roundoff).
    #[test]
    fn uniform_attention_is_permutation_invariant() {
        let mut rng = Rng::seed_from_u64(12);
        let mut p = SemanticNetParams::new(3, 4, 3, &mut rng);
        p.attention.w_f.value.fill(0.0);
        p.attention.w_h.value.fill(0.0);
        let objects = rand_objects(&mut rng, 4, 3);
        let (v1, _) = semantic_forward(&p, &objects, 2).unwrap();
        let permuted: Vec<Tensor> = vec![
            objects[2].clone(),
            objects[0].clone(),
            objects[3].clone(),
            objects[1].clone(),
        ];
        let (v2, _) = semantic_forward(&p, &permuted, 2).unwrap();
        for (a, b) in v1.as_slice().iter().zip(v2.as_slice()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn semantic_backward_zero_grad_gives_zero() {
        let mut rng = Rng::seed_from_u64(14);
        let mut p = SemanticNetParams::new(3, 4, 3, &mut rng);
        let objects = rand_objects(&mut rng, 2, 3);
        let (_, trace) = semantic_forward(&p, &objects, 2).unwrap();
        let zero = Tensor::zeros_vector(4);
        let mut obj_grads = vec![Tensor::zeros_vector(3); 2];
        semantic_backward(&mut p, &trace, &objects, &zero, Some(&mut obj_grads)).unwrap();
        p.visit_params(&mut |name, param| {
            for g in param.grad.as_slice() {
                assert_eq!(*g, 0.0, "{name} grad not zero");
            }
        });
        for og in &obj_grads {
            assert_eq!(og.as_slice(), &[0.0; 3]);
        }
    }

    #[test]
    fn semantic_backward_rejects_object_count_mismatch() {
        let mut rng = Rng::seed_from_u64(15);
        let mut p = SemanticNetParams::new(3, 4, 3, &mut rng);
        let objects = rand_objects(&mut rng, 2, 3);
        let (_, trace) = semantic_forward(&p, &objects, 2).unwrap();
        let grad = Tensor::zeros_vector(4);
        assert!(semantic_backward(&mut p, &trace, &objects[..1], &grad, None).is_err());
    }

    // Full-network gradient check on the tiny instance: every parameter
    // and every input feature against central differences.
    #[test]
    fn semantic_backward_matches_oracle() {
        let mut rng = Rng::seed_from_u64(16);
        let (n, t, f, h, m) = (2, 2, 3, 4, 3);
        let mut p = SemanticNetParams::new(f, h, m, &mut rng);
        let objects = rand_objects(&mut rng, n, f);
        let probe = Tensor::vector((0..h).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();

        let loss_with = |p: &SemanticNetParams, objects: &[Tensor]| {
            let (v, _) = semantic_forward(p, objects, t).unwrap();
            v.as_slice()
                .iter()
                .zip(probe.as_slice())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };

        let (v, trace) = semantic_forward(&p, &objects, t).unwrap();
        assert_eq!(v.len(), h);
        let mut obj_grads = vec![Tensor::zeros_vector(f); n];
        semantic_backward(&mut p, &trace, &objects, &probe, Some(&mut obj_grads)).unwrap();

        // Input gradients.
        for i in 0..n {
            let fd = crate::diffmath::finite_diff_grad(
                |v| {
                    let mut objs = objects.clone();
                    objs[i] = Tensor::vector(v.to_vec()).unwrap();
                    loss_with(&p, &objs)
                },
                objects[i].as_slice(),
                1e-6,
            );
            for (a, fd) in obj_grads[i].as_slice().iter().zip(&fd) {
                assert_relative_eq!(a, fd, max_relative = 1e-4, epsilon = 1e-7);
            }
        }

        // Parameter gradients.
        let analytic = crate::gradcheck::flat_param_grads(&mut p);
        let fd =
            crate::gradcheck::fd_param_grads(&mut p, |p| loss_with(p, &objects), 1e-6);
        assert!(crate::gradcheck::max_rel_err(&analytic, &fd) < 1e-4);
    }

    #[test]
    fn fc_variant_forward_and_backward() {
        let mut rng = Rng::seed_from_u64(20);
        let (f, h) = (3, 4);
        let mut p = FcSemanticParams::new(f, h, &mut rng);

        // Empty set falls back to zero.
        let (v, _) = fc_semantic_forward(&p, &[]).unwrap();
        assert_eq!(v.as_slice(), &[0.0; 4]);

        let objects = rand_objects(&mut rng, 3, f);
        let probe = Tensor::vector((0..h).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let (_, trace) = fc_semantic_forward(&p, &objects).unwrap();
        let mut obj_grads = vec![Tensor::zeros_vector(f); 3];
        fc_semantic_backward(&mut p, &trace, &objects, &probe, Some(&mut obj_grads)).unwrap();

        let loss_with = |p: &FcSemanticParams, objects: &[Tensor]| {
            let (v, _) = fc_semantic_forward(p, objects).unwrap();
            v.as_slice()
                .iter()
                .zip(probe.as_slice())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        for i in 0..3 {
            let fd = crate::diffmath::finite_diff_grad(
                |v| {
                    let mut objs = objects.clone();
                    objs[i] = Tensor::vector(v.to_vec()).unwrap();
                    loss_with(&p, &objs)
                },
                objects[i].as_slice(),
                1e-6,
            );
            for (a, fd) in obj_grads[i].as_slice().iter().zip(&fd) {
                assert_relative_eq!(a, fd, max_relative = 1e-4, epsilon = 1e-7);
            }
        }

        let analytic = crate::gradcheck::flat_param_grads(&mut p);
        let fd =
            crate::gradcheck::fd_param_grads(&mut p, |p| loss_with(p, &objects), 1e-6);
        assert!(crate::gradcheck::max_rel_err(&analytic, &fd) < 1e-4);
    }
}
