//! Seeded instance sampling and the line-per-instance file format.
//!
//! Sampling uses ChaCha8 seeded from the 64-bit config seed, drawing uniforms
//! with `rand`'s standard `f64` conversion, so a given `(GenConfig, count)`
//! produces the same instances on every platform. Instances are drawn in
//! this order: depot x, depot y, then per customer x, y, demand, window,
//! early coefficient, late coefficient. An instance whose total demand
//! exceeds the fleet capacity is discarded and redrawn from the same stream.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::{find_packing, Customer, Instance, ProblemError};

/// Total number of rejected draws tolerated across one `generate` call.
pub const MAX_RESAMPLES: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("no feasible instance after {0} resamples")]
    GenerationFailure(usize),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Parameters of the instance distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_customers: usize,
    pub fleet_size: usize,
    pub capacity: f64,
    /// Side of the square `[0, box]^2` holding depot and customers.
    pub coord_box: f64,
    pub window_horizon: f64,
    /// Fixed window length; `None` draws both window ends.
    pub window_length: Option<f64>,
    pub demand_max: f64,
    pub alpha_range: (f64, f64),
    pub beta_range: (f64, f64),
    pub seed: u64,
}

/// Names accepted by [`GenConfig::preset`].
pub const PRESETS: &[&str] = &[
    "6C-2V", "10C-2V", "20C-2V", "20C-3V", "50C-2V", "50C-3V", "50C-4V", "50C-5V", "100C-2V", "100C-3V", "100C-4V",
    "100C-5V", "150C-5V",
];

impl GenConfig {
    /// Distribution presets. `6C-2V` and `10C-2V` are small desk-scale
    /// variants sharing the 20-customer distributions.
    pub fn preset(name: &str) -> Result<Self, GenError> {
        let unknown = || GenError::UnknownPreset(name.to_string());
        let (c, v) = name
            .strip_suffix('V')
            .and_then(|s| s.split_once("C-"))
            .ok_or_else(unknown)?;
        let n: usize = c.parse().map_err(|_| unknown())?;
        let m: usize = v.parse().map_err(|_| unknown())?;
        let base = GenConfig {
            n_customers: n,
            fleet_size: m,
            capacity: 60.0,
            coord_box: 10.0,
            window_horizon: 10.0,
            window_length: None,
            demand_max: 10.0,
            alpha_range: (0.0, 0.2),
            beta_range: (0.0, 1.0),
            seed: 0,
        };
        // demand upper bound by fleet size for the 50/100 settings
        let demand_by_fleet = |m: usize| match m {
            2 => Some(10.0),
            3 => Some(15.0),
            4 => Some(20.0),
            5 => Some(25.0),
            _ => None,
        };
        let cfg = match (n, m) {
            (6 | 10, 2) | (20, 2) => base,
            (20, 3) => GenConfig {
                demand_max: 15.0,
                ..base
            },
            (50, 2..=5) => GenConfig {
                capacity: 150.0,
                window_horizon: 20.0,
                demand_max: demand_by_fleet(m).ok_or_else(unknown)?,
                ..base
            },
            (100, 2..=5) => GenConfig {
                capacity: 300.0,
                window_horizon: 40.0,
                demand_max: demand_by_fleet(m).ok_or_else(unknown)?,
                ..base
            },
            (150, 5) => GenConfig {
                capacity: 180.0,
                window_horizon: 60.0,
                window_length: Some(20.0),
                alpha_range: (0.1, 0.1),
                beta_range: (0.5, 0.5),
                ..base
            },
            _ => return Err(unknown()),
        };
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::InvalidConfig(m.to_string()));
        if self.n_customers == 0 || self.fleet_size == 0 {
            return bad("customer and fleet counts must be positive");
        }
        if !(self.capacity > 0.0 && self.demand_max > 0.0 && self.coord_box > 0.0) {
            return bad("capacity, demand_max and coord_box must be positive");
        }
        if !(self.window_horizon >= 0.0) {
            return bad("window horizon must be nonnegative");
        }
        if let Some(len) = self.window_length {
            if !(0.0..=self.window_horizon).contains(&len) {
                return bad("window length must lie in [0, horizon]");
            }
        }
        for (lo, hi) in [self.alpha_range, self.beta_range] {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return bad("penalty ranges must be nonnegative intervals");
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        lo + (hi - lo) * rng.gen::<f64>()
    }
}

fn sample_one(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> (crate::problem::Point, Vec<Customer>) {
    let side = cfg.coord_box;
    let depot = [uniform(rng, 0.0, side), uniform(rng, 0.0, side)];
    let customers = (1..=cfg.n_customers)
        .map(|id| {
            let coord = [uniform(rng, 0.0, side), uniform(rng, 0.0, side)];
            // (0, demand_max]: zero demand is reserved for virtual customers
            let demand = cfg.demand_max * (1.0 - rng.gen::<f64>());
            let (e, l) = match cfg.window_length {
                Some(len) => {
                    let e = uniform(rng, 0.0, cfg.window_horizon - len);
                    (e, e + len)
                }
                None => {
                    let a = uniform(rng, 0.0, cfg.window_horizon);
                    let b = uniform(rng, 0.0, cfg.window_horizon);
                    (a.min(b), a.max(b))
                }
            };
            let alpha = uniform(rng, cfg.alpha_range.0, cfg.alpha_range.1);
            let beta = uniform(rng, cfg.beta_range.0, cfg.beta_range.1);
            Customer {
                id,
                coord,
                demand,
                window_open: e,
                window_close: l,
                early_coeff: alpha,
                late_coeff: beta,
            }
        })
        .collect();
    (depot, customers)
}

/// Draw `count` instances from the distribution described by `cfg`.
pub fn generate(cfg: &GenConfig, count: usize) -> Result<Vec<Instance>, GenError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(count);
    let mut rejected = 0usize;
    while out.len() < count {
        let (depot, customers) = sample_one(cfg, &mut rng);
        match Instance::new(depot, customers, cfg.fleet_size, cfg.capacity) {
            Ok(inst) if find_packing(&inst).is_some() => out.push(inst),
            Ok(_) | Err(ProblemError::InvalidInstance(_)) => {
                rejected += 1;
                if rejected >= MAX_RESAMPLES {
                    return Err(GenError::GenerationFailure(rejected));
                }
            }
            Err(e) => unreachable!("sampler produced {e}"),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomerRecord {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub demand: f64,
    pub e: f64,
    pub l: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// On-disk form of an [`Instance`], one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub depot: [f64; 2],
    pub capacity: f64,
    pub fleet_size: usize,
    pub customers: Vec<CustomerRecord>,
}

impl From<&Instance> for InstanceRecord {
    fn from(inst: &Instance) -> Self {
        InstanceRecord {
            depot: inst.depot(),
            capacity: inst.capacity(),
            fleet_size: inst.fleet_size(),
            customers: inst
                .customers()
                .iter()
                .map(|c| CustomerRecord {
                    id: c.id,
                    x: c.coord[0],
                    y: c.coord[1],
                    demand: c.demand,
                    e: c.window_open,
                    l: c.window_close,
                    alpha: c.early_coeff,
                    beta: c.late_coeff,
                })
                .collect(),
        }
    }
}

impl TryFrom<InstanceRecord> for Instance {
    type Error = ProblemError;

    fn try_from(rec: InstanceRecord) -> Result<Self, Self::Error> {
        let customers = rec
            .customers
            .into_iter()
            .map(|c| Customer {
                id: c.id,
                coord: [c.x, c.y],
                demand: c.demand,
                window_open: c.e,
                window_close: c.l,
                early_coeff: c.alpha,
                late_coeff: c.beta,
            })
            .collect();
        Instance::new(rec.depot, customers, rec.fleet_size, rec.capacity)
    }
}

/// Serialize one instance to its single-line form (no trailing newline).
pub fn instance_to_line(inst: &Instance) -> String {
    serde_json::to_string(&InstanceRecord::from(inst)).expect("instance records always serialize")
}

/// Parse one line of an instance file.
pub fn instance_from_line(line: &str) -> Result<Instance, String> {
    let rec: InstanceRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    Instance::try_from(rec).map_err(|e| e.to_string())
}

pub(crate) fn read_lines<T>(path: &Path, mut parse: impl FnMut(&str) -> Result<T, String>) -> Result<Vec<T>, IoError> {
    let io_err = |source| IoError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let item = parse(&line).map_err(|message| IoError::Parse { line: idx + 1, message })?;
        out.push(item);
    }
    Ok(out)
}

pub(crate) fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<(), IoError> {
    let io_err = |source| IoError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for line in lines {
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_instances(path: impl AsRef<Path>) -> Result<Vec<Instance>, IoError> {
    read_lines(path.as_ref(), instance_from_line)
}

pub fn write_instances(path: impl AsRef<Path>, instances: &[Instance]) -> Result<(), IoError> {
    write_lines(path.as_ref(), instances.iter().map(instance_to_line))
}
