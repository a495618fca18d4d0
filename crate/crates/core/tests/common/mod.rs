#![allow(dead_code)]

use mvrpstw::autodiff::{Tape, Tensor, Var, NEG_INF};
use mvrpstw::instance_gen::{generate, GenConfig};
use mvrpstw::maam::{rollout, rollout_with_gradients, DecodeMode, ModelConfig, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Step and tolerance for single ops and small composed blocks.
pub const OP_STEP: f64 = 1e-5;
pub const OP_TOL: f64 = 1e-6;
/// Step and tolerance for the full encoder and decoder.
pub const MODEL_STEP: f64 = 1e-6;
pub const MODEL_TOL: f64 = 1e-5;

/// Norm-wise relative error between two gradient vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Entries bounded away from zero, for ops with a kink there.
pub fn off_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let x: f64 = rng.gen_range(0.05..1.0);
            if rng.gen() {
                x
            } else {
                -x
            }
        })
        .collect()
}

/// Checks d/dx of `sum(op(x) * w)` for fixed random `w` against central
/// differences, for every input.
pub fn check_op(name: &str, inputs: Vec<(Vec<usize>, Vec<f64>)>, op: impl Fn(&mut Tape<'_>, &[Var]) -> Var, seed: u64) {
    let forward = |inputs: &[(Vec<usize>, Vec<f64>)], weights: Option<&[f64]>| -> (f64, Vec<Vec<f64>>, Vec<f64>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|(s, d)| tape.leaf(Tensor::new(s.clone(), d.clone()).unwrap().requiring_grad()))
            .collect();
        let out = op(&mut tape, &vars);
        let n = tape.value(out).len();
        let w = match weights {
            Some(w) => w.to_vec(),
            None => random(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xabc), n),
        };
        let wv = tape.constant(tape.shape(out).to_vec(), w.clone()).unwrap();
        let prod = tape.mul(out, wv).unwrap();
        let loss = tape.sum(prod);
        let value = tape.item(loss);
        let g = tape.backward(loss).unwrap();
        let grads = vars.iter().map(|v| g.wrt(*v).unwrap().to_vec()).collect();
        (value, grads, w)
    };
    let (_, analytic, w) = forward(&inputs, None);
    for (k, (_, data)) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; data.len()];
        for i in 0..data.len() {
            let mut plus = inputs.clone();
            plus[k].1[i] += OP_STEP;
            let mut minus = inputs.clone();
            minus[k].1[i] -= OP_STEP;
            numeric[i] = (forward(&plus, Some(&w)).0 - forward(&minus, Some(&w)).0) / (2.0 * OP_STEP);
        }
        let err = rel_err(&analytic[k], &numeric);
        assert!(err <= OP_TOL, "{name} input {k} seed {seed}: relative error {err:e}");
    }
}

/// Runs every op check for one seed.
pub fn check_ops(seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random(&mut rng, 12);
    let b = random(&mut rng, 20);
    let row = random(&mut rng, 5);
    let same = random(&mut rng, 12);
    let mask: Vec<bool> = (0..12).map(|i| i % 3 == 1).collect();
    let row_mask: Vec<bool> = vec![false, true, false, false];

    check_op(
        "matmul",
        vec![(vec![3, 4], a.clone()), (vec![4, 5], b.clone())],
        |t, v| t.matmul(v[0], v[1]).unwrap(),
        seed,
    );
    check_op(
        "add",
        vec![(vec![3, 4], a.clone()), (vec![3, 4], same.clone())],
        |t, v| t.add(v[0], v[1]).unwrap(),
        seed,
    );
    check_op(
        "add broadcast",
        vec![(vec![4, 5], b.clone()), (vec![5], row.clone())],
        |t, v| t.add(v[0], v[1]).unwrap(),
        seed,
    );
    check_op(
        "mul",
        vec![(vec![3, 4], a.clone()), (vec![3, 4], same.clone())],
        |t, v| t.mul(v[0], v[1]).unwrap(),
        seed,
    );
    check_op("scale", vec![(vec![3, 4], a.clone())], |t, v| t.scale(v[0], -1.7), seed);
    check_op(
        "concat",
        vec![(vec![3, 4], a.clone()), (vec![3, 4], same.clone())],
        |t, v| t.concat(&[v[0], v[1]]).unwrap(),
        seed,
    );
    for axis in 0..2 {
        check_op(
            "mean",
            vec![(vec![3, 4], a.clone())],
            move |t, v| t.mean(v[0], axis).unwrap(),
            seed,
        );
    }
    check_op("sum", vec![(vec![3, 4], a.clone())], |t, v| t.sum(v[0]), seed);
    check_op("softmax", vec![(vec![3, 4], a.clone())], |t, v| t.softmax(v[0]), seed);
    check_op(
        "log_softmax",
        vec![(vec![3, 4], a.clone())],
        |t, v| t.log_softmax(v[0]),
        seed,
    );
    check_op("tanh", vec![(vec![3, 4], a.clone())], |t, v| t.tanh(v[0]), seed);
    check_op(
        "relu",
        vec![(vec![3, 4], off_zero(&mut rng, 12))],
        |t, v| t.relu(v[0]),
        seed,
    );
    check_op(
        "masked_fill",
        vec![(vec![3, 4], a.clone())],
        |t, v| t.masked_fill(v[0], &mask, -3.0).unwrap(),
        seed,
    );
    check_op(
        "masked log_softmax",
        vec![(vec![3, 4], a.clone())],
        |t, v| {
            let m = t.masked_fill(v[0], &row_mask, NEG_INF).unwrap();
            let l = t.log_softmax(m);
            t.masked_fill(l, &row_mask, 0.0).unwrap()
        },
        seed,
    );
    check_op(
        "transpose",
        vec![(vec![3, 4], a.clone())],
        |t, v| t.transpose(v[0]).unwrap(),
        seed,
    );
    check_op(
        "slice_rows",
        vec![(vec![4, 5], b.clone())],
        |t, v| t.slice_rows(v[0], 1, 2).unwrap(),
        seed,
    );
    check_op(
        "row",
        vec![(vec![4, 5], b.clone())],
        |t, v| t.row(v[0], 3).unwrap(),
        seed,
    );
    check_op(
        "slice_cols",
        vec![(vec![4, 5], b.clone())],
        |t, v| t.slice_cols(v[0], 2, 3).unwrap(),
        seed,
    );
    check_op(
        "index",
        vec![(vec![3, 4], a.clone())],
        |t, v| t.index(v[0], 7).unwrap(),
        seed,
    );
    check_op(
        "attention block",
        vec![
            (vec![3, 4], a.clone()),
            (vec![4, 5], b.clone()),
            (vec![4, 5], random(&mut rng, 20)),
            (vec![4, 5], random(&mut rng, 20)),
        ],
        |t, v| {
            let q = t.matmul(v[0], v[1]).unwrap();
            let k = t.matmul(v[0], v[2]).unwrap();
            let val = t.matmul(v[0], v[3]).unwrap();
            let kt = t.transpose(k).unwrap();
            let s = t.matmul(q, kt).unwrap();
            let s = t.scale(s, 0.5);
            let p = t.softmax(s);
            let o = t.matmul(p, val).unwrap();
            let o = t.tanh(o);
            t.mean(o, 0).unwrap()
        },
        seed,
    );
}

fn small_instance(seed: u64) -> mvrpstw::problem::Instance {
    let mut cfg = GenConfig::preset("20C-2V").unwrap().with_seed(seed);
    cfg.n_customers = 4;
    generate(&cfg, 1).unwrap().remove(0)
}

/// Relative error of the rollout log-prob gradient for one seed.
pub fn model_gradient_error(seed: u64) -> f64 {
    let inst = small_instance(seed);
    let config = ModelConfig::new(16, 2, 4, 2, 10.0);
    let params = ModelParams::init(config, 100 + seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sampled, grads) = rollout_with_gradients(&inst, &params, &DecodeMode::Sample, &mut rng).unwrap();
    let forced = DecodeMode::Forced(sampled.actions.clone());
    let log_prob = |p: &ModelParams| {
        rollout(&inst, p, &forced, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap()
            .log_prob
    };
    assert_eq!(log_prob(&params), sampled.log_prob);

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut probe = params.clone();
    for (idx, g) in grads.tagged() {
        analytic.extend_from_slice(g);
        for i in 0..g.len() {
            let orig = probe.tensors()[*idx].data()[i];
            probe.tensors_mut()[*idx].data_mut()[i] = orig + MODEL_STEP;
            let up = log_prob(&probe);
            probe.tensors_mut()[*idx].data_mut()[i] = orig - MODEL_STEP;
            let down = log_prob(&probe);
            probe.tensors_mut()[*idx].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * MODEL_STEP));
        }
    }
    assert_eq!(analytic.len(), params.n_weights());
    rel_err(&analytic, &numeric)
}

/// One-sided p-value P(T <= t) by Simpson integration of the t density.
pub fn t_cdf_quadrature(t: f64, df: f64) -> f64 {
    let ln_gamma = |x: f64| statrs::function::gamma::ln_gamma(x);
    let c = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt();
    let pdf = |x: f64| c * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
    let steps = 20_000;
    let h = t.abs() / steps as f64;
    let mut s = pdf(0.0) + pdf(t.abs());
    for i in 1..steps {
        s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let half = s * h / 3.0;
    if t < 0.0 {
        0.5 - half
    } else {
        0.5 + half
    }
}
