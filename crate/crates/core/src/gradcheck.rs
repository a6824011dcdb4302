//! Finite-difference verification of every backward pass.
//!
//! The harness perturbs one parameter coordinate at a time through the
//! [`HasParams`] visitor, evaluates a scalar loss, and compares central
//! differences against the analytic gradients accumulated by the
//! backward passes. `run_all` is the engine behind `emofuse grad-check`.

use crate::diffmath::{self, HasParams, Rng, Tensor};

/// Relative tolerance for a passing gradient check.
pub const REL_TOL: f64 = 1e-4;
/// Differences below this absolute floor always pass; central
/// differences on O(1) losses carry roundoff noise around 1e-10.
pub const ABS_FLOOR: f64 = 1e-7;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Masked relative error: elements whose absolute difference is under
/// the floor count as zero.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        let diff = (a - n).abs();
        if diff <= ABS_FLOOR {
            continue;
        }
        let rel = diff / a.abs().max(n.abs());
        if rel > worst {
            worst = rel;
        }
    }
    worst
}

/// Add `delta` to coordinate `i` of the `k`-th visited parameter.
pub fn perturb_param<M: HasParams>(m: &mut M, k: usize, i: usize, delta: f64) {
    let mut idx = 0;
    m.visit_params(&mut |_, p| {
        if idx == k {
            p.value.as_mut_slice()[i] += delta;
        }
        idx += 1;
    });
}

/// Central-difference gradient of `loss` w.r.t. every parameter
/// coordinate, flattened in visit order.
pub fn fd_param_grads<M: HasParams>(
    m: &mut M,
    mut loss: impl FnMut(&mut M) -> f64,
    h: f64,
) -> Vec<f64> {
    let mut layout = Vec::new();
    m.visit_params(&mut |_, p| layout.push(p.value.len()));
    let mut out = Vec::new();
    for (k, len) in layout.iter().enumerate() {
        for i in 0..*len {
            perturb_param(m, k, i, h);
            let fp = loss(m);
            perturb_param(m, k, i, -2.0 * h);
            let fm = loss(m);
            perturb_param(m, k, i, h);
            out.push((fp - fm) / (2.0 * h));
        }
    }
    out
}

/// Currently accumulated analytic gradients, flattened in visit order.
pub fn flat_param_grads<M: HasParams>(m: &mut M) -> Vec<f64> {
    let mut out = Vec::new();
    m.visit_params(&mut |_, p| out.extend_from_slice(p.grad.as_slice()));
    out
}

/// Outcome of one component's check: the worst relative error observed
/// over all seeds and coordinates.
#[derive(Clone, Debug)]
pub struct ComponentReport {
    pub component: String,
    pub max_rel_err: f64,
}

impl ComponentReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err < REL_TOL
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub components: Vec<ComponentReport>,
}

impl GradCheckReport {
    pub fn all_pass(&self) -> bool {
        self.components.iter().all(ComponentReport::pass)
    }
}

fn rand_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

fn rand_tensor(rng: &mut Rng, n: usize) -> Tensor {
    Tensor::vector(rand_vec(rng, n)).expect("finite")
}

fn probe_loss(y: &Tensor, probe: &Tensor) -> f64 {
    y.as_slice()
        .iter()
        .zip(probe.as_slice())
        .map(|(a, b)| a * b)
        .sum()
}

fn check_affine(seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let (m, n) = (2 + rng.below(3), 2 + rng.below(3));
    let w = Tensor::matrix(m, n, rand_vec(&mut rng, m * n)).unwrap();
    let x = rand_tensor(&mut rng, n);
    let b = rand_tensor(&mut rng, m);
    let probe = rand_tensor(&mut rng, m);

    let mut gw = Tensor::zeros_matrix(m, n);
    let mut gx = Tensor::zeros_vector(n);
    let mut gb = Tensor::zeros_vector(m);
    diffmath::affine_backward(&w, &x, &probe, &mut gw, Some(&mut gx), Some(&mut gb));

    let loss = |wd: &[f64], xd: &[f64], bd: &[f64]| {
        let w = Tensor::matrix(m, n, wd.to_vec()).unwrap();
        let x = Tensor::vector(xd.to_vec()).unwrap();
        let b = Tensor::vector(bd.to_vec()).unwrap();
        probe_loss(&diffmath::affine(&w, &x, Some(&b)).unwrap(), &probe)
    };
    let fd_w =
        diffmath::finite_diff_grad(|v| loss(v, x.as_slice(), b.as_slice()), w.as_slice(), FD_STEP);
    let fd_x =
        diffmath::finite_diff_grad(|v| loss(w.as_slice(), v, b.as_slice()), x.as_slice(), FD_STEP);
    let fd_b =
        diffmath::finite_diff_grad(|v| loss(w.as_slice(), x.as_slice(), v), b.as_slice(), FD_STEP);
    max_rel_err(gw.as_slice(), &fd_w)
        .max(max_rel_err(gx.as_slice(), &fd_x))
        .max(max_rel_err(gb.as_slice(), &fd_b))
}

fn check_elementwise(seed: u64, tanh: bool) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let n = 3 + rng.below(4);
    let x = rand_tensor(&mut rng, n);
    let probe = rand_tensor(&mut rng, n);

    let fwd = |x: &Tensor| {
        if tanh {
            diffmath::tanh_map(x)
        } else {
            diffmath::sigmoid_map(x)
        }
    };
    let y = fwd(&x);
    let mut gx = Tensor::zeros_vector(n);
    if tanh {
        diffmath::tanh_backward(&y, &probe, &mut gx);
    } else {
        diffmath::sigmoid_backward(&y, &probe, &mut gx);
    }
    let fd = diffmath::finite_diff_grad(
        |v| probe_loss(&fwd(&Tensor::vector(v.to_vec()).unwrap()), &probe),
        x.as_slice(),
        FD_STEP,
    );
    max_rel_err(gx.as_slice(), &fd)
}

fn check_softmax(seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let n = 2 + rng.below(5);
    let x = rand_tensor(&mut rng, n);
    let probe = rand_tensor(&mut rng, n);
    let y = diffmath::softmax(&x).unwrap();
    let mut gx = Tensor::zeros_vector(n);
    diffmath::softmax_backward(&y, &probe, &mut gx);
    let fd = diffmath::finite_diff_grad(
        |v| {
            probe_loss(
                &diffmath::softmax(&Tensor::vector(v.to_vec()).unwrap()).unwrap(),
                &probe,
            )
        },
        x.as_slice(),
        FD_STEP,
    );
    max_rel_err(gx.as_slice(), &fd)
}

fn check_weighted_sum(seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let n = 2 + rng.below(3);
    let d = 2 + rng.below(3);
    let rows: Vec<Tensor> = (0..n).map(|_| rand_tensor(&mut rng, d)).collect();
    let alpha = rand_tensor(&mut rng, n);
    let probe = rand_tensor(&mut rng, d);

    let mut row_grads = vec![Tensor::zeros_vector(d); n];
    let mut ga = Tensor::zeros_vector(n);
    diffmath::weighted_sum_backward(&rows, &alpha, &probe, &mut row_grads, Some(&mut ga));

    let fd_a = diffmath::finite_diff_grad(
        |v| {
            let a = Tensor::vector(v.to_vec()).unwrap();
            probe_loss(&diffmath::weighted_sum(&rows, &a).unwrap(), &probe)
        },
        alpha.as_slice(),
        FD_STEP,
    );
    let mut worst = max_rel_err(ga.as_slice(), &fd_a);
    for i in 0..n {
        let fd = diffmath::finite_diff_grad(
            |v| {
                let mut rows = rows.clone();
                rows[i] = Tensor::vector(v.to_vec()).unwrap();
                probe_loss(&diffmath::weighted_sum(&rows, &alpha).unwrap(), &probe)
            },
            rows[i].as_slice(),
            FD_STEP,
        );
        worst = worst.max(max_rel_err(row_grads[i].as_slice(), &fd));
    }
    worst
}

fn check_mean_rows(seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let n = 1 + rng.below(4);
    let d = 2 + rng.below(3);
    let rows: Vec<Tensor> = (0..n).map(|_| rand_tensor(&mut rng, d)).collect();
    let probe = rand_tensor(&mut rng, d);
    let mut row_grads = vec![Tensor::zeros_vector(d); n];
    diffmath::mean_rows_backward(&probe, &mut row_grads);
    let mut worst = 0.0f64;
    for i in 0..n {
        let fd = diffmath::finite_diff_grad(
            |v| {
                let mut rows = rows.clone();
                rows[i] = Tensor::vector(v.to_vec()).unwrap();
                probe_loss(&diffmath::mean_rows(&rows).unwrap(), &probe)
            },
            rows[i].as_slice(),
            FD_STEP,
        );
        worst = worst.max(max_rel_err(row_grads[i].as_slice(), &fd));
    }
    worst
}

fn check_nll(seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let n = 2 + rng.below(5);
    let p = diffmath::softmax(&rand_tensor(&mut rng, n)).unwrap();
    let target = rng.below(n);
    let mut gp = Tensor::zeros_vector(n);
    diffmath::nll_backward(&p, target, 1.0, &mut gp);
    let fd = diffmath::finite_diff_grad(
        |v| diffmath::nll_from_probs(&Tensor::vector(v.to_vec()).unwrap(), target).unwrap(),
        p.as_slice(),
        FD_STEP,
    );
    max_rel_err(gp.as_slice(), &fd)
}

fn check_lstm_step(seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let (input, hidden) = (3, 2);
    let mut p = crate::semantic::LstmParams::new(input, hidden, &mut rng);
    let x = rand_tensor(&mut rng, input);
    let state = crate::semantic::LstmState {
        h: rand_tensor(&mut rng, hidden),
        c: rand_tensor(&mut rng, hidden),
    };
    let probe = rand_tensor(&mut rng, hidden);

    let (_, trace) = crate::semantic::lstm_step(&p, &x, &state).unwrap();
    let zero_c = Tensor::zeros_vector(hidden);
    let (dx, _, _) = crate::semantic::lstm_step_backward(&mut p, &trace, &probe, &zero_c);

    let loss = |p: &mut crate::semantic::LstmParams| {
        let (s, _) = crate::semantic::lstm_step(p, &x, &state).unwrap();
        probe_loss(&s.h, &probe)
    };
    let analytic = flat_param_grads(&mut p);
    let fd = fd_param_grads(&mut p, loss, FD_STEP);
    let mut worst = max_rel_err(&analytic, &fd);

    let fd_x = diffmath::finite_diff_grad(
        |v| {
            let (s, _) =
                crate::semantic::lstm_step(&p, &Tensor::vector(v.to_vec()).unwrap(), &state)
                    .unwrap();
            probe_loss(&s.h, &probe)
        },
        x.as_slice(),
        FD_STEP,
    );
    worst = worst.max(max_rel_err(dx.as_slice(), &fd_x));
    worst
}

/// Tiny-instance dimensions for the full-stack check.
pub const TINY_N: usize = 2;
pub const TINY_T: usize = 2;
pub const TINY_F: usize = 3;
pub const TINY_H: usize = 4;
pub const TINY_M: usize = 3;

fn check_semantic_net(seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let mut p = crate::semantic::SemanticNetParams::new(TINY_F, TINY_H, TINY_M, &mut rng);
    let objects: Vec<Tensor> = (0..TINY_N).map(|_| rand_tensor(&mut rng, TINY_F)).collect();
    let probe = rand_tensor(&mut rng, TINY_H);

    let (_, trace) = crate::semantic::semantic_forward(&p, &objects, TINY_T).unwrap();
    let mut obj_grads = vec![Tensor::zeros_vector(TINY_F); TINY_N];
    crate::semantic::semantic_backward(&mut p, &trace, &objects, &probe, Some(&mut obj_grads))
        .unwrap();

    let analytic = flat_param_grads(&mut p);
    let fd = fd_param_grads(
        &mut p,
        |p| {
            let (v, _) = crate::semantic::semantic_forward(p, &objects, TINY_T).unwrap();
            probe_loss(&v, &probe)
        },
        FD_STEP,
    );
    let mut worst = max_rel_err(&analytic, &fd);

    for i in 0..TINY_N {
        let fd = diffmath::finite_diff_grad(
            |v| {
                let mut objs = objects.clone();
                objs[i] = Tensor::vector(v.to_vec()).unwrap();
                let (out, _) = crate::semantic::semantic_forward(&p, &objs, TINY_T).unwrap();
                probe_loss(&out, &probe)
            },
            objects[i].as_slice(),
            FD_STEP,
        );
        worst = worst.max(max_rel_err(obj_grads[i].as_slice(), &fd));
    }
    worst
}

fn check_fc_semantic(seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let mut p = crate::semantic::FcSemanticParams::new(TINY_F, TINY_H, &mut rng);
    let objects: Vec<Tensor> = (0..TINY_N).map(|_| rand_tensor(&mut rng, TINY_F)).collect();
    let probe = rand_tensor(&mut rng, TINY_H);

    let (_, trace) = crate::semantic::fc_semantic_forward(&p, &objects).unwrap();
    crate::semantic::fc_semantic_backward(&mut p, &trace, &objects, &probe, None).unwrap();

    let analytic = flat_param_grads(&mut p);
    let fd = fd_param_grads(
        &mut p,
        |p| {
            let (v, _) = crate::semantic::fc_semantic_forward(p, &objects).unwrap();
            probe_loss(&v, &probe)
        },
        FD_STEP,
    );
    max_rel_err(&analytic, &fd)
}

fn check_encoder_global(seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let (d_raw, d_out) = (4, 3);
    let mut enc = crate::encoders::EncoderParams::trainable(d_raw, d_out, &mut rng);
    let raw = rand_tensor(&mut rng, d_raw);
    let probe = rand_tensor(&mut rng, d_out);

    let (y, trace) = crate::encoders::encode_global(&enc, &raw).unwrap();
    crate::encoders::encode_backward(&mut enc, &raw, &trace, &probe, None).unwrap();
    let _ = y;

    let analytic = flat_param_grads(&mut enc);
    let fd = fd_param_grads(
        &mut enc,
        |e| {
            let (y, _) = crate::encoders::encode_global(e, &raw).unwrap();
            probe_loss(&y, &probe)
        },
        FD_STEP,
    );
    max_rel_err(&analytic, &fd)
}

fn check_encoder_expression(seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let (d_raw, d_out) = (4, 3);
    let mut enc = crate::encoders::EncoderParams::trainable(d_raw, d_out, &mut rng);
    let face = crate::encoders::FaceInput::present(rand_tensor(&mut rng, d_raw));
    let probe = rand_tensor(&mut rng, d_out);

    let (_, trace) = crate::encoders::encode_expression(&enc, &face).unwrap();
    crate::encoders::expression_backward(&mut enc, &face, &trace, &probe, None).unwrap();

    let analytic = flat_param_grads(&mut enc);
    let fd = fd_param_grads(
        &mut enc,
        |e| {
            let (y, _) = crate::encoders::encode_expression(e, &face).unwrap();
            probe_loss(&y, &probe)
        },
        FD_STEP,
    );
    max_rel_err(&analytic, &fd)
}

fn check_head(seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let tax = crate::taxonomy::Taxonomy::mikel_default();
    let c = tax.count();
    let d = 5;
    let lambda = rng.uniform(0.0, 2.0);
    let target = rng.below(c);
    let mut cls = crate::head::ClassifierParams::new(c, d, &mut rng);
    let v_emo = rand_tensor(&mut rng, d);

    let (probs, _) = crate::head::classify(&cls, &v_emo).unwrap();
    let breakdown = crate::head::hierarchical_loss(&tax, &probs, target, lambda).unwrap();
    let _ = breakdown;
    let mut grad_v = Tensor::zeros_vector(d);
    crate::head::head_backward(&tax, &mut cls, &v_emo, &probs, target, lambda, 1.0, &mut grad_v)
        .unwrap();

    let analytic = flat_param_grads(&mut cls);
    let fd = fd_param_grads(
        &mut cls,
        |cls| {
            let (probs, _) = crate::head::classify(cls, &v_emo).unwrap();
            crate::head::hierarchical_loss(&tax, &probs, target, lambda)
                .unwrap()
                .l_total
        },
        FD_STEP,
    );
    let mut worst = max_rel_err(&analytic, &fd);

    let fd_v = diffmath::finite_diff_grad(
        |v| {
            let (probs, _) = crate::head::classify(&cls, &Tensor::vector(v.to_vec()).unwrap())
                .unwrap();
            crate::head::hierarchical_loss(&tax, &probs, target, lambda)
                .unwrap()
                .l_total
        },
        v_emo.as_slice(),
        FD_STEP,
    );
    worst = worst.max(max_rel_err(grad_v.as_slice(), &fd_v));
    worst
}

fn check_composite(seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let tax = crate::taxonomy::Taxonomy::mikel_default();
    let dims = crate::config::Dims {
        d1: 3,
        d2: TINY_H,
        d3: 2,
        h: TINY_H,
        m: TINY_M,
        f: TINY_F,
    };
    let raw = crate::model::RawDims { global: 4, face: 3 };
    let mut model = crate::model::Model::new(
        tax,
        dims,
        raw,
        crate::model::SemanticKind::Lstm,
        crate::encoders::EncoderMode::Trainable,
        crate::encoders::EncoderMode::Trainable,
        crate::model::TSteps::Fixed(TINY_T),
        seed,
    );

    let sample = crate::data::PreparedSample {
        label: rng.below(model.taxonomy().count()),
        global: rand_tensor(&mut rng, 4),
        objects: (0..TINY_N).map(|_| rand_tensor(&mut rng, TINY_F)).collect(),
        face: crate::encoders::FaceInput::present(rand_tensor(&mut rng, 3)),
    };
    let lambda = 1.0;

    let (breakdown, trace) = model.loss_forward(&sample, lambda).unwrap();
    let _ = breakdown;
    model.backward(&sample, &trace, lambda, 1.0).unwrap();

    let analytic = flat_param_grads(&mut model);
    let fd = fd_param_grads(
        &mut model,
        |m| m.loss_forward(&sample, lambda).unwrap().0.l_total,
        FD_STEP,
    );
    max_rel_err(&analytic, &fd)
}

type CheckFn = fn(u64) -> f64;

/// Run every component check over `seeds` consecutive seeds starting at
/// `base_seed`; each component reports its worst relative error.
pub fn run_all(base_seed: u64, seeds: usize) -> GradCheckReport {
    let checks: &[(&str, CheckFn)] = &[
        ("affine", check_affine),
        ("tanh", |s| check_elementwise(s, true)),
        ("sigmoid", |s| check_elementwise(s, false)),
        ("softmax", check_softmax),
        ("weighted_sum", check_weighted_sum),
        ("mean_rows", check_mean_rows),
        ("nll_from_probs", check_nll),
        ("lstm_step", check_lstm_step),
        ("semantic_net", check_semantic_net),
        ("semantic_fc_variant", check_fc_semantic),
        ("encoder_global", check_encoder_global),
        ("encoder_expression", check_encoder_expression),
        ("fusion_head", check_head),
        ("composite_loss", check_composite),
    ];
    let mut report = GradCheckReport::default();
    for (name, check) in checks {
        let mut worst = 0.0f64;
        for s in 0..seeds {
            worst = worst.max(check(base_seed + s as u64));
        }
        report.components.push(ComponentReport {
            component: (*name).to_string(),
            max_rel_err: worst,
        });
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_masks_below_floor() {
        let a = [1e-9, 1.0];
        let n = [2e-9, 1.00005];
        let err = max_rel_err(&a, &n);
        assert!(err < 1e-4, "err {err}");
    }

    #[test]
    fn rel_err_catches_corruption() {
        // Negative control: a deliberately wrong analytic gradient must
        // push the error above the tolerance.
        let numeric = [0.5, -0.25, 0.125];
        let corrupted = [0.5, -0.25 * 1.01, 0.125];
        assert!(max_rel_err(&corrupted, &numeric) > REL_TOL);
    }

    #[test]
    fn full_run_passes() {
        let report = run_all(1000, 3);
        for c in &report.components {
            assert!(
                c.pass(),
                "{} failed with max rel err {}",
                c.component,
                c.max_rel_err
            );
        }
    }
}
