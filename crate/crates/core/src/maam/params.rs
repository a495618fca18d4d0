use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::checkpoint::{read_tensors, write_tensors};
use crate::autodiff::{Tape, Tensor, Var};

/// Raw features per node: x, y, demand, window open, window close.
pub const NODE_FEATURES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Number of stacked encoder attention layers.
    pub n_layers: usize,
    pub n_heads: usize,
    pub fleet_size: usize,
    /// Hidden width of the encoder feed-forward sublayer.
    pub ff_hidden: usize,
    /// Window-close feature given to the depot.
    pub depot_horizon: f64,
    /// Optional multiplier on the tanh-bounded logits; `None` keeps them in (-1, 1).
    pub logit_clip: Option<f64>,
    /// Also mask customers whose service would leave the rest unpackable
    /// into the remaining vehicle capacity.
    #[serde(default = "default_guard")]
    pub feasibility_guard: bool,
}

fn default_guard() -> bool {
    true
}

impl ModelConfig {
    pub fn new(embed_dim: usize, n_layers: usize, n_heads: usize, fleet_size: usize, depot_horizon: f64) -> Self {
        Self {
            embed_dim,
            n_layers,
            n_heads,
            fleet_size,
            ff_hidden: 4 * embed_dim,
            depot_horizon,
            logit_clip: None,
            feasibility_guard: true,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    /// Length of the decoder context: graph embedding plus, per vehicle,
    /// its last node embedding and remaining capacity.
    pub fn context_dim(&self) -> usize {
        self.embed_dim * (self.fleet_size + 1) + self.fleet_size
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 || self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "embed_dim {} must be a positive multiple of n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.fleet_size == 0 || self.ff_hidden == 0 {
            return Err(ModelError::Config("fleet_size and ff_hidden must be positive".into()));
        }
        if !self.depot_horizon.is_finite() {
            return Err(ModelError::Config("depot horizon must be finite".into()));
        }
        Ok(())
    }
}

/// Tensor indices of one encoder layer.
#[derive(Debug, Clone)]
pub(crate) struct LayerIdx {
    pub query: Vec<usize>,
    pub key: Vec<usize>,
    pub value: Vec<usize>,
    pub out: Vec<usize>,
    pub ff_in_w: usize,
    pub ff_in_b: usize,
    pub ff_out_w: usize,
    pub ff_out_b: usize,
}

/// Position of every named tensor, derived from the config.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub init_w: usize,
    pub init_b: usize,
    pub layers: Vec<LayerIdx>,
    pub glimpse_query: Vec<usize>,
    pub glimpse_key: Vec<usize>,
    pub glimpse_value: Vec<usize>,
    pub glimpse_out: Vec<usize>,
    pub out_query: usize,
    pub out_key: usize,
}

/// Names, shapes and fan-in of every tensor, in storage order.
fn spec(cfg: &ModelConfig) -> (Vec<(String, Vec<usize>, usize)>, Layout) {
    let d = cfg.embed_dim;
    let dk = cfg.head_dim();
    let h = cfg.ff_hidden;
    let c = cfg.context_dim();
    let mut entries: Vec<(String, Vec<usize>, usize)> = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, fan_in: usize| {
        entries.push((name, shape, fan_in));
        entries.len() - 1
    };
    let init_w = add("init.weight".into(), vec![NODE_FEATURES, d], NODE_FEATURES);
    let init_b = add("init.bias".into(), vec![d], NODE_FEATURES);
    let mut layers = Vec::new();
    for l in 0..cfg.n_layers {
        let mut idx = LayerIdx {
            query: vec![],
            key: vec![],
            value: vec![],
            out: vec![],
            ff_in_w: 0,
            ff_in_b: 0,
            ff_out_w: 0,
            ff_out_b: 0,
        };
        for z in 0..cfg.n_heads {
            idx.query
                .push(add(format!("encoder.{l}.head.{z}.query"), vec![d, dk], d));
            idx.key.push(add(format!("encoder.{l}.head.{z}.key"), vec![d, dk], d));
            idx.value
                .push(add(format!("encoder.{l}.head.{z}.value"), vec![d, dk], d));
            idx.out.push(add(format!("encoder.{l}.head.{z}.out"), vec![dk, d], dk));
        }
        idx.ff_in_w = add(format!("encoder.{l}.ff.in.weight"), vec![d, h], d);
        idx.ff_in_b = add(format!("encoder.{l}.ff.in.bias"), vec![h], d);
        idx.ff_out_w = add(format!("encoder.{l}.ff.out.weight"), vec![h, d], h);
        idx.ff_out_b = add(format!("encoder.{l}.ff.out.bias"), vec![d], h);
        layers.push(idx);
    }
    let (mut gq, mut gk, mut gv, mut go) = (vec![], vec![], vec![], vec![]);
    for z in 0..cfg.n_heads {
        gq.push(add(format!("decoder.glimpse.head.{z}.query"), vec![c, dk], c));
        gk.push(add(format!("decoder.glimpse.head.{z}.key"), vec![d, dk], d));
        gv.push(add(format!("decoder.glimpse.head.{z}.value"), vec![d, dk], d));
        go.push(add(format!("decoder.glimpse.head.{z}.out"), vec![dk, d], dk));
    }
    let out_query = add("decoder.pointer.query".into(), vec![d, d], d);
    let out_key = add("decoder.pointer.key".into(), vec![d, d], d);
    let layout = Layout {
        init_w,
        init_b,
        layers,
        glimpse_query: gq,
        glimpse_key: gk,
        glimpse_value: gv,
        glimpse_out: go,
        out_query,
        out_key,
    };
    (entries, layout)
}

/// All learnable weights of the encoder and decoder.
#[derive(Debug, Clone)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    pub(crate) layout: Layout,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.names == other.names && self.tensors == other.tensors
    }
}

impl ModelParams {
    /// Matrices drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`,
    /// biases zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, |shape, fan_in| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            if shape.len() == 1 {
                return vec![0.0; n];
            }
            (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
        })
    }

    /// Every weight zero.
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        Self::build(config, |shape, _| vec![0.0; shape.iter().product()])
    }

    fn build(config: ModelConfig, mut fill: impl FnMut(&[usize], usize) -> Vec<f64>) -> Result<Self, ModelError> {
        config.validate()?;
        let (entries, layout) = spec(&config);
        let mut names = Vec::with_capacity(entries.len());
        let mut tensors = Vec::with_capacity(entries.len());
        for (name, shape, fan_in) in entries {
            let data = fill(&shape, fan_in);
            tensors.push(Tensor::new(shape, data)?.requiring_grad());
            names.push(name);
        }
        Ok(Self {
            config,
            names,
            tensors,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn n_weights(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.zero_grad());
    }

    /// Put every tensor on `tape`. With `track` the leaves are tagged by
    /// storage index so gradients can be collected; otherwise they are
    /// constants.
    pub fn register<'p>(&'p self, tape: &mut Tape<'p>, track: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(t, track.then_some(i)))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        let header = serde_json::to_string(&self.config).expect("config serializes");
        let entries: Vec<(&str, &Tensor)> = self.names.iter().map(String::as_str).zip(self.tensors.iter()).collect();
        write_tensors(&mut w, &header, &entries)?;
        std::io::Write::flush(&mut w).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    /// Load a checkpoint, checking every expected name and shape.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        let (header, entries) = read_tensors(&mut BufReader::new(file))?;
        let config: ModelConfig =
            serde_json::from_str(&header).map_err(|e| ModelError::Checkpoint(format!("bad config header: {e}")))?;
        let mut params = Self::zeros(config)?;
        if entries.len() != params.tensors.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                params.tensors.len(),
                entries.len()
            )));
        }
        for (i, (name, tensor)) in entries.into_iter().enumerate() {
            if name != params.names[i] {
                return Err(ModelError::Checkpoint(format!(
                    "expected tensor {:?} at position {i}, found {name:?}",
                    params.names[i]
                )));
            }
            if tensor.shape() != params.tensors[i].shape() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    tensor.shape(),
                    params.tensors[i].shape()
                )));
            }
            params.tensors[i] = tensor.requiring_grad();
        }
        Ok(params)
    }

    /// Overwrite all weights with those of `other` (same config).
    pub fn copy_from(&mut self, other: &ModelParams) {
        assert_eq!(self.config, other.config, "copying weights across configs");
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            dst.data_mut().copy_from_slice(src.data());
        }
    }
}
