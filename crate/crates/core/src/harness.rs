//! Experiment drivers behind the command-line tool: benchmarks over a
//! seeded instance set, hyperparameter sweeps and robustness conditions.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::heuristics::{initial_routes, solve_ga, solve_ils, GaConfig, HeuristicError, IlsConfig};
use crate::instance_gen::{generate, instance_to_line, GenConfig, GenError};
use crate::maam::{rollout, DecodeMode, ModelError, ModelParams};
use crate::oracle::{solve_exact, OracleError, MAX_CUSTOMERS};
use crate::problem::{evaluate_solution, pad_virtual_customers, scale_capacity, Instance, ProblemError, Solution};
use crate::trainer::{train_with_progress, TrainConfig, TrainError};

/// Search-node cap handed to the exact solver.
pub const ORACLE_NODE_LIMIT: u64 = 2_000_000_000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("{method} failed on instance {index}: {message}")]
    Solve {
        method: Method,
        index: usize,
        message: String,
    },
    #[error("training with {axis} = {value} failed: {source}")]
    Sweep {
        axis: SweepAxis,
        value: usize,
        source: TrainError,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Generation(#[from] GenError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit code: 2 for a failed validation, 3 for bad configuration
    /// or arguments, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) => 2,
            HarnessError::Config(_) | HarnessError::InvalidArgument(_) | HarnessError::Generation(_) => 3,
            HarnessError::Train(TrainError::InvalidConfig(_)) => 3,
            HarnessError::Model(
                ModelError::Config(_) | ModelError::Checkpoint(_) | ModelError::FleetMismatch { .. },
            ) => 3,
            _ => 1,
        }
    }
}

/// A solver that can appear in a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ga1,
    Ga2,
    Ils1,
    Ils2,
    Oracle,
    /// Round-robin nearest neighbor, the local search's starting solution.
    Nn,
    Maam,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Ga1,
        Method::Ga2,
        Method::Ils1,
        Method::Ils2,
        Method::Oracle,
        Method::Nn,
        Method::Maam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ga1 => "ga1",
            Method::Ga2 => "ga2",
            Method::Ils1 => "ils1",
            Method::Ils2 => "ils2",
            Method::Oracle => "oracle",
            Method::Nn => "nn",
            Method::Maam => "maam",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown method {s:?}")))
    }
}

/// Decoding used when the model solves an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaamMode {
    Greedy,
    /// Best of this many sampled rollouts.
    Sample(usize),
}

/// A trained model together with how to decode with it.
#[derive(Debug, Clone)]
pub struct MaamSolver {
    pub params: ModelParams,
    pub mode: MaamMode,
}

/// Everything a report run needs besides the instances.
#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    pub maam: Option<MaamSolver>,
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
}

/// Seed of the stochastic solvers on instance `index`.
pub fn instance_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.gen()
}

/// Solve one instance. `index` only feeds the solver seed.
pub fn solve_one(
    method: Method,
    inst: &Instance,
    seed: u64,
    index: usize,
    maam: Option<&MaamSolver>,
) -> Result<Solution, HarnessError> {
    let s = instance_seed(seed, index);
    let fail = |message: String| HarnessError::Solve { method, index, message };
    let heuristic = |e: HeuristicError| fail(e.to_string());
    match method {
        Method::Ga1 => solve_ga(inst, &GaConfig::ga1(s)).map_err(heuristic),
        Method::Ga2 => solve_ga(inst, &GaConfig::ga2(s)).map_err(heuristic),
        Method::Ils1 => solve_ils(inst, &IlsConfig::ils1(s)).map_err(heuristic),
        Method::Ils2 => solve_ils(inst, &IlsConfig::ils2(s)).map_err(heuristic),
        Method::Nn => {
            let routes = initial_routes(inst).map_err(heuristic)?;
            Ok(evaluate_solution(inst, &routes)?)
        }
        Method::Oracle => solve_exact(inst, ORACLE_NODE_LIMIT)
            .map(|r| r.best)
            .map_err(|e: OracleError| fail(e.to_string())),
        Method::Maam => {
            let solver = maam.ok_or_else(|| HarnessError::Config("maam needs a checkpoint".into()))?;
            solve_maam(inst, solver, s).map_err(|e| fail(e.to_string()))
        }
    }
}

/// Decode with the model; sampled decoding keeps the cheapest rollout.
pub fn solve_maam(inst: &Instance, solver: &MaamSolver, seed: u64) -> Result<Solution, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match solver.mode {
        MaamMode::Greedy => Ok(rollout(inst, &solver.params, &DecodeMode::Greedy, &mut rng)?.solution),
        MaamMode::Sample(k) => {
            let mut best: Option<Solution> = None;
            for _ in 0..k.max(1) {
                let sol = rollout(inst, &solver.params, &DecodeMode::Sample, &mut rng)?.solution;
                if best.as_ref().map_or(true, |b| sol.cost.total < b.cost.total) {
                    best = Some(sol);
                }
            }
            Ok(best.expect("at least one sample"))
        }
    }
}

/// Model decode on `padded`, mapped back onto `original` by dropping the
/// virtual customers (ids beyond the original count).
pub fn solve_maam_padded(
    original: &Instance,
    padded: &Instance,
    solver: &MaamSolver,
    seed: u64,
) -> Result<Solution, HarnessError> {
    let sol = solve_maam(padded, solver, seed)?;
    let n = original.n_customers();
    let routes: Vec<Vec<usize>> = sol
        .routes
        .iter()
        .map(|r| r.iter().copied().filter(|&id| id <= n).collect())
        .collect();
    Ok(evaluate_solution(original, &routes)?)
}

/// Outcome of one solve, with its wall time.
#[derive(Debug, Clone)]
pub struct SolveRecord {
    pub solution: Solution,
    pub seconds: f64,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))
}

/// Run `solve` on every instance, in parallel, results in instance order.
fn solve_all(
    jobs: usize,
    count: usize,
    solve: impl Fn(usize) -> Result<Solution, HarnessError> + Sync,
) -> Result<Vec<SolveRecord>, HarnessError> {
    pool(jobs)?.install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let start = Instant::now();
                let solution = solve(i)?;
                Ok(SolveRecord {
                    solution,
                    seconds: start.elapsed().as_secs_f64(),
                })
            })
            .collect()
    })
}

/// Solve every instance with `method`, in instance order.
pub fn solve_instances(
    method: Method,
    instances: &[Instance],
    seed: u64,
    opts: &SolveOptions,
) -> Result<Vec<SolveRecord>, HarnessError> {
    check_method(method, instances, opts)?;
    solve_all(opts.jobs, instances.len(), |i| {
        solve_one(method, &instances[i], seed, i, opts.maam.as_ref())
    })
}

/// Reject a method that cannot run on these instances before solving any.
fn check_method(method: Method, instances: &[Instance], opts: &SolveOptions) -> Result<(), HarnessError> {
    match method {
        Method::Maam => {
            let solver = opts
                .maam
                .as_ref()
                .ok_or_else(|| HarnessError::Config("method maam requires a checkpoint".into()))?;
            let m = solver.params.config().fleet_size;
            if let Some(inst) = instances.iter().find(|i| i.fleet_size() != m) {
                return Err(HarnessError::Config(format!(
                    "checkpoint drives {m} vehicles, instances have {}",
                    inst.fleet_size()
                )));
            }
        }
        Method::Oracle => {
            if let Some(inst) = instances.iter().find(|i| i.n_customers() > MAX_CUSTOMERS) {
                return Err(HarnessError::Config(format!(
                    "oracle handles at most {MAX_CUSTOMERS} customers, instances have {}",
                    inst.n_customers()
                )));
            }
        }
        _ => {}
    }
    Ok(())
}

/// One aggregated line of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub preset: String,
    pub n_customers: usize,
    pub fleet_size: usize,
    pub mean_cost: f64,
    pub mean_travel: f64,
    pub mean_penalty: f64,
    pub mean_seconds: f64,
    pub n_instances: usize,
    pub seed: u64,
    /// SHA-256 of the instance set the method was run on.
    pub instance_hash: String,
}

impl ReportRow {
    pub fn from_records(
        method: Method,
        preset: &str,
        instances: &[Instance],
        records: &[SolveRecord],
        seed: u64,
    ) -> Self {
        let n = records.len() as f64;
        let mean = |f: &dyn Fn(&SolveRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        let mean_travel = mean(&|r| r.solution.cost.travel);
        let mean_penalty = mean(&|r| r.solution.cost.penalty);
        Self {
            method: method.name().to_string(),
            preset: preset.to_string(),
            n_customers: instances.first().map_or(0, |i| i.n_customers()),
            fleet_size: instances.first().map_or(0, |i| i.fleet_size()),
            mean_cost: mean_travel + mean_penalty,
            mean_travel,
            mean_penalty,
            mean_seconds: mean(&|r| r.seconds),
            n_instances: records.len(),
            seed,
            instance_hash: instance_hash(instances),
        }
    }
}

/// Hex SHA-256 over the instances' serialized lines.
pub fn instance_hash(instances: &[Instance]) -> String {
    let mut h = Sha256::new();
    for inst in instances {
        h.update(instance_to_line(inst).as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn row(&self, method: &str, preset: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.preset == preset)
    }

    /// Checks that costs add up and that method/preset pairs are unique.
    pub fn check(&self) -> Result<(), HarnessError> {
        for (i, r) in self.rows.iter().enumerate() {
            if (r.mean_cost - r.mean_travel - r.mean_penalty).abs() > 1e-9 {
                return Err(HarnessError::Validation(format!(
                    "row {i}: mean cost {} is not travel {} plus penalty {}",
                    r.mean_cost, r.mean_travel, r.mean_penalty
                )));
            }
            if self.rows[..i]
                .iter()
                .any(|o| o.method == r.method && o.preset == r.preset)
            {
                return Err(HarnessError::Validation(format!(
                    "duplicate row for {} on {}",
                    r.method, r.preset
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, w: impl Write) -> Result<(), HarnessError> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        out.write_record(REPORT_HEADER)?;
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv(r: impl Read) -> Result<Self, HarnessError> {
        let mut rdr = csv::Reader::from_reader(r);
        let rows = rdr.deserialize().collect::<Result<Vec<ReportRow>, _>>()?;
        Ok(Self { rows })
    }
}

const REPORT_HEADER: [&str; 11] = [
    "method",
    "preset",
    "n_customers",
    "fleet_size",
    "mean_cost",
    "mean_travel",
    "mean_penalty",
    "mean_seconds",
    "n_instances",
    "seed",
    "instance_hash",
];

fn check_checkpoint(methods: &[Method], opts: &SolveOptions) -> Result<(), HarnessError> {
    if methods.contains(&Method::Maam) && opts.maam.is_none() {
        return Err(HarnessError::Config("method maam requires a checkpoint".into()));
    }
    Ok(())
}

/// Generate `count` instances of `preset` from `seed` and run every method
/// on them. `count == 0` gives an empty report.
pub fn run_benchmark(
    methods: &[Method],
    preset: &str,
    count: usize,
    seed: u64,
    opts: &SolveOptions,
) -> Result<ExperimentReport, HarnessError> {
    check_checkpoint(methods, opts)?;
    let cfg = GenConfig::preset(preset)?.with_seed(seed);
    let instances = generate(&cfg, count)?;
    for &m in methods {
        check_method(m, &instances, opts)?;
    }
    let mut report = ExperimentReport::default();
    if count == 0 {
        return Ok(report);
    }
    for &m in methods {
        let records = solve_instances(m, &instances, seed, opts)?;
        report
            .rows
            .push(ReportRow::from_records(m, preset, &instances, &records, seed));
    }
    Ok(report)
}

/// Hyperparameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Dim,
    Layers,
    Heads,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Dim => "dim",
            SweepAxis::Layers => "layers",
            SweepAxis::Heads => "heads",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dim" => Ok(SweepAxis::Dim),
            "layers" => Ok(SweepAxis::Layers),
            "heads" => Ok(SweepAxis::Heads),
            _ => Err(HarnessError::Config(format!("unknown sweep axis {s:?}"))),
        }
    }
}

/// Eval cost after `epoch` for one sweep value; epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub value: usize,
    pub eval_cost: f64,
}

pub fn write_curve_csv(points: &[CurvePoint], w: impl Write) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    for p in points {
        out.serialize(p)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_curve_csv(r: impl Read) -> Result<Vec<CurvePoint>, HarnessError> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<Result<Vec<CurvePoint>, _>>()?)
}

/// Train one model per value of `axis`, everything else as in `base`.
pub fn run_sensitivity(axis: SweepAxis, values: &[usize], base: &TrainConfig) -> Result<Vec<CurvePoint>, HarnessError> {
    if values.len() < 2 {
        return Err(HarnessError::InvalidArgument(
            "a sweep needs at least two values".into(),
        ));
    }
    let mut points = Vec::new();
    for &value in values {
        let mut cfg = base.clone();
        let m = &mut cfg.model;
        match axis {
            SweepAxis::Dim => {
                m.embed_dim = value;
                m.ff_hidden = 4 * value;
            }
            SweepAxis::Layers => m.n_layers = value,
            SweepAxis::Heads => m.n_heads = value,
        }
        let wrap = |source| HarnessError::Sweep { axis, value, source };
        let outcome = train_with_progress(&cfg, |_| {}).map_err(wrap)?;
        points.push(CurvePoint {
            epoch: 0,
            value,
            eval_cost: outcome.log.initial_eval_cost,
        });
        points.extend(outcome.log.records.iter().map(|r| CurvePoint {
            epoch: r.epoch,
            value,
            eval_cost: r.eval_cost_mean,
        }));
    }
    Ok(points)
}

/// Conditions of a robustness run.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessSpec {
    /// Preset the model was trained on; its size is the padding target.
    pub base_preset: String,
    pub customer_counts: Vec<usize>,
    pub capacity_factors: Vec<f64>,
    /// Baselines to run next to the model.
    pub baselines: Vec<Method>,
    pub count: usize,
    pub seed: u64,
}

/// Row label of a customer-count condition.
pub fn count_label(base: &str, n: usize) -> String {
    format!("{base}/n{n}")
}

/// Row label of a capacity-factor condition.
pub fn factor_label(base: &str, factor: f64) -> String {
    format!("{base}/q{factor}")
}

/// Evaluate the model away from its training distribution. Smaller
/// instances are padded with virtual customers for the model only;
/// capacity factors rescale capacity and demand for every solver.
pub fn run_robustness(spec: &RobustnessSpec, opts: &SolveOptions) -> Result<ExperimentReport, HarnessError> {
    let solver = opts
        .maam
        .as_ref()
        .ok_or_else(|| HarnessError::Config("robustness runs need a checkpoint".into()))?;
    let base = GenConfig::preset(&spec.base_preset)?;
    let trained = base.n_customers;
    if solver.params.config().fleet_size != base.fleet_size {
        return Err(HarnessError::Config(format!(
            "checkpoint drives {} vehicles, {} has {}",
            solver.params.config().fleet_size,
            spec.base_preset,
            base.fleet_size
        )));
    }
    if let Some(&n) = spec.customer_counts.iter().find(|&&n| n > trained || n == 0) {
        return Err(HarnessError::InvalidArgument(format!(
            "customer count {n} must lie in 1..={trained}, the trained size"
        )));
    }
    if let Some(f) = spec.capacity_factors.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
        return Err(HarnessError::InvalidArgument(format!(
            "capacity factor {f} must be positive"
        )));
    }
    for &m in &spec.baselines {
        if m == Method::Maam {
            return Err(HarnessError::InvalidArgument(
                "maam is always evaluated; list only baselines".into(),
            ));
        }
    }

    let mut conditions: Vec<(String, Vec<Instance>)> = Vec::new();
    for &n in &spec.customer_counts {
        let mut cfg = base.clone().with_seed(spec.seed);
        cfg.n_customers = n;
        conditions.push((count_label(&spec.base_preset, n), generate(&cfg, spec.count)?));
    }
    if !spec.capacity_factors.is_empty() {
        let insts = generate(&base.clone().with_seed(spec.seed), spec.count)?;
        for &f in &spec.capacity_factors {
            let scaled = insts
                .iter()
                .map(|i| scale_capacity(i, f))
                .collect::<Result<Vec<_>, _>>()?;
            conditions.push((factor_label(&spec.base_preset, f), scaled));
        }
    }

    let mut report = ExperimentReport::default();
    if spec.count == 0 {
        return Ok(report);
    }
    for (label, instances) in &conditions {
        let padded = instances
            .iter()
            .map(|i| pad_virtual_customers(i, trained))
            .collect::<Result<Vec<_>, _>>()?;
        let records = solve_all(opts.jobs, instances.len(), |i| {
            solve_maam_padded(&instances[i], &padded[i], solver, instance_seed(spec.seed, i))
        })?;
        report.rows.push(ReportRow::from_records(
            Method::Maam,
            label,
            instances,
            &records,
            spec.seed,
        ));
        for &m in &spec.baselines {
            let records = solve_instances(m, instances, spec.seed, opts)?;
            report
                .rows
                .push(ReportRow::from_records(m, label, instances, &records, spec.seed));
        }
    }
    Ok(report)
}

/// One solved instance as written by `solve` and re-checked by `validate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRow {
    pub index: usize,
    pub method: String,
    pub cost: f64,
    pub travel: f64,
    pub penalty: f64,
    pub seconds: f64,
    /// Routes as space-separated ids, vehicles separated by `|`.
    pub routes: String,
}

pub fn format_routes(routes: &[Vec<usize>]) -> String {
    routes
        .iter()
        .map(|r| r.iter().map(usize::to_string).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("|")
}

pub fn parse_routes(s: &str) -> Result<Vec<Vec<usize>>, HarnessError> {
    s.split('|')
        .map(|r| {
            r.split_whitespace()
                .map(|id| {
                    id.parse()
                        .map_err(|_| HarnessError::Validation(format!("bad customer id {id:?} in {s:?}")))
                })
                .collect()
        })
        .collect()
}

pub fn solution_rows(method: Method, records: &[SolveRecord]) -> Vec<SolutionRow> {
    records
        .iter()
        .enumerate()
        .map(|(index, r)| SolutionRow {
            index,
            method: method.name().to_string(),
            cost: r.solution.cost.total,
            travel: r.solution.cost.travel,
            penalty: r.solution.cost.penalty,
            seconds: r.seconds,
            routes: format_routes(&r.solution.routes),
        })
        .collect()
}

pub fn write_solutions(rows: &[SolutionRow], w: impl Write) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_solutions(r: impl Read) -> Result<Vec<SolutionRow>, HarnessError> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<Result<Vec<SolutionRow>, _>>()?)
}

/// Re-check every row against its instance: routes must be valid and the
/// recorded costs must match a fresh evaluation.
pub fn validate_solutions(instances: &[Instance], rows: &[SolutionRow]) -> Result<(), HarnessError> {
    if rows.len() != instances.len() {
        return Err(HarnessError::Validation(format!(
            "{} solutions for {} instances",
            rows.len(),
            instances.len()
        )));
    }
    for (i, row) in rows.iter().enumerate() {
        let inst = instances
            .get(row.index)
            .ok_or_else(|| HarnessError::Validation(format!("row {i} names instance {}", row.index)))?;
        let routes = parse_routes(&row.routes)?;
        let sol = evaluate_solution(inst, &routes)
            .map_err(|e| HarnessError::Validation(format!("instance {}: {e}", row.index)))?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(1.0);
        if !(close(sol.cost.total, row.cost)
            && close(sol.cost.travel, row.travel)
            && close(sol.cost.penalty, row.penalty))
        {
            return Err(HarnessError::Validation(format!(
                "instance {}: recorded cost {} but routes cost {}",
                row.index, row.cost, sol.cost.total
            )));
        }
    }
    Ok(())
}
