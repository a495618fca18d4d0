use super::params::{LayerIdx, ModelParams, NODE_FEATURES};
use super::ModelError;
use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::problem::Instance;

/// Final node embeddings (row 0 is the depot) and the mean customer embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub node_embeddings: Tensor,
    pub graph_embedding: Tensor,
}

/// Output of one encoder layer together with each head's attention weights
/// (`nodes x nodes`, rows are queries).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    pub output: Tensor,
    pub weights: Vec<Tensor>,
}

/// Spread of a uniform variable on `[0, 1]` after [`node_features`]
/// rescales it: `sqrt(12)` gives unit variance.
const FEATURE_SCALE: f64 = 3.464_101_615_137_754_6;

/// Row-major `(N + 1) x 5` features `[x, y, demand, open, close]`.
/// Coordinates and windows are divided by `depot_horizon` (travel time
/// equals distance), shifted by -0.5 and multiplied by `sqrt(12)`; demand is
/// divided by the vehicle capacity and multiplied by `sqrt(12)`. The depot
/// has demand 0, window open 0 and window close at the horizon.
pub fn node_features(inst: &Instance, depot_horizon: f64) -> Vec<f64> {
    let t = depot_horizon;
    let q = inst.capacity();
    let time = |v: f64| (v / t - 0.5) * FEATURE_SCALE;
    let d = inst.depot();
    let mut out = Vec::with_capacity((inst.n_customers() + 1) * NODE_FEATURES);
    out.extend_from_slice(&[time(d[0]), time(d[1]), 0.0, time(0.0), time(t)]);
    for c in inst.customers() {
        out.extend_from_slice(&[
            time(c.coord[0]),
            time(c.coord[1]),
            c.demand / q * FEATURE_SCALE,
            time(c.window_open),
            time(c.window_close),
        ]);
    }
    out
}

pub(crate) struct Encoded {
    pub nodes: Var,
    pub graph: Var,
}

pub(crate) fn embed_on_tape(
    tape: &mut Tape<'_>,
    vars: &[Var],
    params: &ModelParams,
    inst: &Instance,
) -> Result<Var, AutodiffError> {
    let l = &params.layout;
    let x = tape.constant(
        vec![inst.n_customers() + 1, NODE_FEATURES],
        node_features(inst, params.config().depot_horizon),
    )?;
    let h = tape.matmul(x, vars[l.init_w])?;
    tape.add(h, vars[l.init_b])
}

/// Multi-head self-attention with skip, then the feed-forward sublayer with skip.
pub(crate) fn layer_on_tape(
    tape: &mut Tape<'_>,
    vars: &[Var],
    idx: &LayerIdx,
    head_dim: usize,
    h: Var,
    weights: Option<&mut Vec<Var>>,
) -> Result<Var, AutodiffError> {
    let inv = 1.0 / (head_dim as f64).sqrt();
    let mut combined: Option<Var> = None;
    let mut kept = Vec::new();
    for z in 0..idx.query.len() {
        let q = tape.matmul(h, vars[idx.query[z]])?;
        let k = tape.matmul(h, vars[idx.key[z]])?;
        let v = tape.matmul(h, vars[idx.value[z]])?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, inv);
        let a = tape.softmax(scores);
        kept.push(a);
        let heads = tape.matmul(a, v)?;
        let o = tape.matmul(heads, vars[idx.out[z]])?;
        combined = Some(match combined {
            None => o,
            Some(acc) => tape.add(acc, o)?,
        });
    }
    if let Some(w) = weights {
        *w = kept;
    }
    let h_hat = tape.add(h, combined.expect("at least one head"))?;
    let hidden = tape.matmul(h_hat, vars[idx.ff_in_w])?;
    let hidden = tape.add(hidden, vars[idx.ff_in_b])?;
    let hidden = tape.relu(hidden);
    let ff = tape.matmul(hidden, vars[idx.ff_out_w])?;
    let ff = tape.add(ff, vars[idx.ff_out_b])?;
    tape.add(h_hat, ff)
}

pub(crate) fn encode_on_tape(
    tape: &mut Tape<'_>,
    vars: &[Var],
    params: &ModelParams,
    inst: &Instance,
    depth: usize,
) -> Result<Encoded, AutodiffError> {
    let mut h = embed_on_tape(tape, vars, params, inst)?;
    let dk = params.config().head_dim();
    for idx in &params.layout.layers[..depth] {
        h = layer_on_tape(tape, vars, idx, dk, h, None)?;
    }
    // mean over customer rows as a [1, D] row
    let n = inst.n_customers();
    let w = tape.constant(vec![1, n], vec![1.0 / n as f64; n])?;
    let customers = tape.slice_rows(h, 1, n)?;
    let graph = tape.matmul(w, customers)?;
    Ok(Encoded { nodes: h, graph })
}

fn to_tensor(tape: &Tape<'_>, v: Var) -> Tensor {
    Tensor::new(tape.shape(v).to_vec(), tape.value(v).to_vec()).expect("tape values are consistent")
}

/// Initial `(N + 1) x embed_dim` embeddings.
pub fn embed_inputs(inst: &Instance, params: &ModelParams) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let h = embed_on_tape(&mut tape, &vars, params, inst)?;
    Ok(to_tensor(&tape, h))
}

/// Apply encoder layer `layer` of `params` to `h_in`.
pub fn attention_layer(h_in: &Tensor, params: &ModelParams, layer: usize) -> Result<LayerOutput, ModelError> {
    let cfg = params.config();
    let idx = params
        .layout
        .layers
        .get(layer)
        .ok_or_else(|| ModelError::Config(format!("layer {layer} of {}", cfg.n_layers)))?;
    let s = h_in.shape();
    if s.len() != 2 || s[1] != cfg.embed_dim || s[0] == 0 {
        return Err(AutodiffError::Shape(format!("attention input {s:?}, expected [nodes, {}]", cfg.embed_dim)).into());
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let h = tape.constant(s.to_vec(), h_in.data().to_vec())?;
    let mut w = Vec::new();
    let out = layer_on_tape(&mut tape, &vars, idx, cfg.head_dim(), h, Some(&mut w))?;
    Ok(LayerOutput {
        output: to_tensor(&tape, out),
        weights: w.into_iter().map(|a| to_tensor(&tape, a)).collect(),
    })
}

/// Full encoder.
pub fn encode(inst: &Instance, params: &ModelParams) -> Result<EncoderOutput, ModelError> {
    encode_with_depth(inst, params, params.config().n_layers)
}

/// Encoder using only the first `depth` layers.
pub fn encode_with_depth(inst: &Instance, params: &ModelParams, depth: usize) -> Result<EncoderOutput, ModelError> {
    if depth > params.config().n_layers {
        return Err(ModelError::Config(format!(
            "depth {depth} exceeds {} layers",
            params.config().n_layers
        )));
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let enc = encode_on_tape(&mut tape, &vars, params, inst, depth)?;
    Ok(EncoderOutput {
        node_embeddings: to_tensor(&tape, enc.nodes),
        graph_embedding: Tensor::new(vec![params.config().embed_dim], tape.value(enc.graph).to_vec())?,
    })
}
