use rand::Rng;

use super::encoder::{encode_on_tape, Encoded};
use super::params::ModelParams;
use super::ModelError;
use crate::autodiff::{Gradients, Tape, Var, NEG_INF};
use crate::problem::{evaluate_solution, find_packing, Instance, Solution};

/// Partial solution during decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    /// Customers served so far.
    pub t: usize,
    /// Indexed by customer id; entry 0 (depot) is unused.
    pub visited: Vec<bool>,
    /// Remaining capacity per vehicle, clamped at zero.
    pub remaining: Vec<f64>,
    /// Load carried per vehicle; used for the capacity mask.
    pub load: Vec<f64>,
    /// Last node per vehicle (0 = depot).
    pub last: Vec<usize>,
    /// Travel time per vehicle up to its last node.
    pub elapsed: Vec<f64>,
    /// Arrival time per customer, indexed by id - 1; NaN until served.
    pub arrival: Vec<f64>,
    pub routes: Vec<Vec<usize>>,
    pub retired: Vec<bool>,
    /// Vehicle whose turn it is.
    pub cursor: usize,
    /// Vehicle planned for each customer (index `id - 1`) in a packing of
    /// the unvisited customers that still fits; `None` when unguarded or no
    /// packing was found.
    plan: Option<Vec<usize>>,
    guard: bool,
}

/// Planned vehicle of an already served customer.
const SERVED: usize = usize::MAX;

impl DecoderState {
    /// State with the packing guard on.
    pub fn new(inst: &Instance) -> Self {
        Self::with_guard(inst, true)
    }

    /// With `guard` off only served customers and those exceeding the
    /// remaining capacity are masked, which can strand customers when the
    /// remaining capacity is fragmented across vehicles.
    pub fn with_guard(inst: &Instance, guard: bool) -> Self {
        let m = inst.fleet_size();
        let q = inst.capacity();
        let mut state = Self {
            t: 0,
            visited: vec![false; inst.n_customers() + 1],
            remaining: vec![q; m],
            load: vec![0.0; m],
            last: vec![0; m],
            elapsed: vec![0.0; m],
            arrival: vec![f64::NAN; inst.n_customers()],
            routes: vec![Vec::new(); m],
            retired: vec![false; m],
            cursor: 0,
            plan: None,
            guard,
        };
        if guard {
            state.plan = state.repack(inst).or_else(|| {
                let mut plan = vec![SERVED; inst.n_customers()];
                for (m, route) in find_packing(inst)?.iter().enumerate() {
                    route.iter().for_each(|&id| plan[id - 1] = m);
                }
                Some(plan)
            });
        }
        state
    }

    pub fn is_done(&self) -> bool {
        self.t + 1 == self.visited.len()
    }

    pub fn unvisited(&self) -> usize {
        self.visited.len() - 1 - self.t
    }

    /// Vehicle acting next, or `None` once every vehicle is retired.
    pub fn active_vehicle(&self) -> Option<usize> {
        (!self.retired[self.cursor]).then_some(self.cursor)
    }

    /// Customer mask for `vehicle` over ids `1..=N` (index `id - 1`); `true`
    /// means unavailable: already served, not fitting the remaining capacity,
    /// or (guarded) leaving the other unvisited customers unpackable.
    pub fn customer_mask(&self, inst: &Instance, vehicle: usize) -> Vec<bool> {
        let mut mask: Vec<bool> = inst
            .customers()
            .iter()
            .map(|c| self.visited[c.id] || inst.over_capacity(self.load[vehicle] + c.demand))
            .collect();
        let Some(plan) = &self.plan else {
            return mask;
        };
        if self.has_slack(inst) {
            return mask;
        }
        let mut probe = self.clone();
        probe.plan = None;
        for c in inst.customers() {
            let i = c.id - 1;
            if mask[i] || plan[i] == vehicle {
                continue;
            }
            probe.visited[c.id] = true;
            probe.load[vehicle] += c.demand;
            mask[i] = probe.repack(inst).is_none();
            probe.visited[c.id] = false;
            probe.load[vehicle] = self.load[vehicle];
        }
        mask
    }

    /// True when any assignment order packs the unvisited customers: every
    /// active vehicle can absorb at least its residual minus the largest
    /// unvisited demand, and those amounts cover the unvisited demand.
    fn has_slack(&self, inst: &Instance) -> bool {
        let (mut total, mut largest) = (0.0_f64, 0.0_f64);
        for c in inst.customers() {
            if !self.visited[c.id] {
                total += c.demand;
                largest = largest.max(c.demand);
            }
        }
        let room: f64 = (0..self.load.len())
            .filter(|&m| !self.retired[m])
            .map(|m| (inst.capacity() - self.load[m] - largest).max(0.0))
            .sum();
        room >= total
    }

    /// First-fit-decreasing packing of the unvisited customers into the
    /// residual capacity of the active vehicles.
    fn repack(&self, inst: &Instance) -> Option<Vec<usize>> {
        let mut ids: Vec<usize> = (1..self.visited.len()).filter(|&id| !self.visited[id]).collect();
        ids.sort_by(|&a, &b| {
            inst.customer(b)
                .demand
                .total_cmp(&inst.customer(a).demand)
                .then(a.cmp(&b))
        });
        let mut load = self.load.clone();
        let mut plan = vec![SERVED; self.visited.len() - 1];
        for id in ids {
            let d = inst.customer(id).demand;
            let m = (0..load.len()).find(|&m| !self.retired[m] && !inst.over_capacity(load[m] + d))?;
            load[m] += d;
            plan[id - 1] = m;
        }
        Some(plan)
    }

    fn advance_cursor(&mut self) {
        let m = self.retired.len();
        for step in 1..=m {
            let v = (self.cursor + step) % m;
            if !self.retired[v] {
                self.cursor = v;
                return;
            }
        }
    }

    fn retire(&mut self, vehicle: usize) {
        self.retired[vehicle] = true;
        self.advance_cursor();
    }

    /// Serve `id` with `vehicle` and pass the turn on.
    pub fn serve(&mut self, inst: &Instance, vehicle: usize, id: usize) {
        let c = inst.customer(id);
        self.visited[id] = true;
        self.remaining[vehicle] = (self.remaining[vehicle] - c.demand).max(0.0);
        self.load[vehicle] += c.demand;
        self.elapsed[vehicle] += inst.dist(self.last[vehicle], id);
        self.arrival[id - 1] = self.elapsed[vehicle];
        self.last[vehicle] = id;
        self.routes[vehicle].push(id);
        self.t += 1;
        if let Some(plan) = &mut self.plan {
            if plan[id - 1] == vehicle {
                plan[id - 1] = SERVED;
            } else {
                self.plan = self.repack(inst);
            }
        }
        self.advance_cursor();
    }
}

/// How the decoder picks among available customers.
#[derive(Debug, Clone, PartialEq)]
pub enum DecodeMode {
    /// Most probable customer; ties go to the lowest id.
    Greedy,
    /// Draw from the policy distribution.
    Sample,
    /// Replay the given customer ids in order.
    Forced(Vec<usize>),
}

/// Outcome of one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Served {
        vehicle: usize,
        customer: usize,
        log_prob: f64,
        /// Probability per customer, index `id - 1`.
        probs: Vec<f64>,
    },
    /// No customer fits this vehicle; it takes no further turns.
    Retired { vehicle: usize },
}

/// Encoded instance plus the tape holding every decoding step.
pub struct Decoder<'a> {
    tape: Tape<'a>,
    inst: &'a Instance,
    params: &'a ModelParams,
    vars: Vec<Var>,
    enc: Encoded,
    glimpse_keys_t: Vec<Var>,
    glimpse_values: Vec<Var>,
    pointer_keys_t: Var,
    log_probs: Vec<Var>,
}

impl<'a> Decoder<'a> {
    /// Encode `inst`. With `track` the tape records what is needed for
    /// gradients of the summed log-probability.
    pub fn new(inst: &'a Instance, params: &'a ModelParams, track: bool) -> Result<Self, ModelError> {
        let cfg = params.config();
        if inst.fleet_size() != cfg.fleet_size {
            return Err(ModelError::FleetMismatch {
                expected: cfg.fleet_size,
                found: inst.fleet_size(),
            });
        }
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, track);
        let enc = encode_on_tape(&mut tape, &vars, params, inst, cfg.n_layers)?;
        let l = &params.layout;
        let mut glimpse_keys_t = Vec::new();
        let mut glimpse_values = Vec::new();
        for z in 0..cfg.n_heads {
            let k = tape.matmul(enc.nodes, vars[l.glimpse_key[z]])?;
            glimpse_keys_t.push(tape.transpose(k)?);
            glimpse_values.push(tape.matmul(enc.nodes, vars[l.glimpse_value[z]])?);
        }
        let k = tape.matmul(enc.nodes, vars[l.out_key])?;
        let pointer_keys_t = tape.transpose(k)?;
        Ok(Self {
            tape,
            inst,
            params,
            vars,
            enc,
            glimpse_keys_t,
            glimpse_values,
            pointer_keys_t,
            log_probs: Vec::new(),
        })
    }

    /// Final node embeddings, row-major `(N + 1) x embed_dim`.
    pub fn node_embeddings(&self) -> &[f64] {
        self.tape.value(self.enc.nodes)
    }

    pub fn graph_embedding(&self) -> &[f64] {
        self.tape.value(self.enc.graph)
    }

    /// Context blocks in the order vehicles `order` lists them, capacities
    /// multiplied by `cap_scale`.
    fn context_var(&mut self, state: &DecoderState, order: &[usize], cap_scale: f64) -> Result<Var, ModelError> {
        let mut parts = Vec::with_capacity(1 + 2 * order.len());
        parts.push(self.enc.graph);
        for &m in order {
            parts.push(self.tape.row(self.enc.nodes, state.last[m])?);
            parts.push(self.tape.constant(vec![1, 1], vec![state.remaining[m] * cap_scale])?);
        }
        Ok(self.tape.concat(&parts)?)
    }

    /// Context vector: graph embedding, then per vehicle its last node's
    /// embedding and remaining capacity.
    pub fn context(&mut self, state: &DecoderState) -> Result<Vec<f64>, ModelError> {
        let order: Vec<usize> = (0..state.last.len()).collect();
        let c = self.context_var(state, &order, 1.0)?;
        Ok(self.tape.value(c).to_vec())
    }

    /// What the glimpse query sees: the context with the vehicle blocks
    /// rotated to start at the acting vehicle and capacities as fractions
    /// of the vehicle capacity.
    pub fn query_input(&mut self, state: &DecoderState, vehicle: usize) -> Result<Vec<f64>, ModelError> {
        let c = self.query_var(state, vehicle)?;
        Ok(self.tape.value(c).to_vec())
    }

    fn query_var(&mut self, state: &DecoderState, vehicle: usize) -> Result<Var, ModelError> {
        let m = state.last.len();
        let order: Vec<usize> = (0..m).map(|j| (vehicle + j) % m).collect();
        let scale = 1.0 / self.inst.capacity();
        self.context_var(state, &order, scale)
    }

    /// One decoding step for the active vehicle.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        state: &mut DecoderState,
        mode: &DecodeMode,
        rng: &mut R,
    ) -> Result<Step, ModelError> {
        let inst = self.inst;
        let vehicle = state.active_vehicle().ok_or(ModelError::InfeasibleDecode {
            unvisited: state.unvisited(),
        })?;
        let mask = state.customer_mask(inst, vehicle);
        if mask.iter().all(|&m| m) {
            state.retire(vehicle);
            if state.active_vehicle().is_none() && !state.is_done() {
                return Err(ModelError::InfeasibleDecode {
                    unvisited: state.unvisited(),
                });
            }
            return Ok(Step::Retired { vehicle });
        }

        let cfg = self.params.config();
        let l = &self.params.layout;
        let ctx = self.query_var(state, vehicle)?;
        let mut node_mask = Vec::with_capacity(mask.len() + 1);
        node_mask.push(false);
        node_mask.extend_from_slice(&mask);

        let tape = &mut self.tape;
        let inv_dk = 1.0 / (cfg.head_dim() as f64).sqrt();
        let mut glimpse: Option<Var> = None;
        for z in 0..cfg.n_heads {
            let q = tape.matmul(ctx, self.vars[l.glimpse_query[z]])?;
            let s = tape.matmul(q, self.glimpse_keys_t[z])?;
            let s = tape.scale(s, inv_dk);
            let s = tape.masked_fill(s, &node_mask, NEG_INF)?;
            let a = tape.softmax(s);
            let h = tape.matmul(a, self.glimpse_values[z])?;
            let o = tape.matmul(h, self.vars[l.glimpse_out[z]])?;
            glimpse = Some(match glimpse {
                None => o,
                Some(acc) => tape.add(acc, o)?,
            });
        }
        let q = tape.matmul(glimpse.expect("at least one head"), self.vars[l.out_query])?;
        let u = tape.matmul(q, self.pointer_keys_t)?;
        let u = tape.scale(u, 1.0 / (cfg.embed_dim as f64).sqrt());
        let mut u = tape.tanh(u);
        if let Some(c) = cfg.logit_clip {
            u = tape.scale(u, c);
        }
        let u = tape.slice_cols(u, 1, inst.n_customers())?;
        let u = tape.masked_fill(u, &mask, NEG_INF)?;
        let logp = tape.log_softmax(u);
        let lp = tape.value(logp);
        let probs: Vec<f64> = lp
            .iter()
            .zip(&mask)
            .map(|(x, &masked)| if masked { 0.0 } else { x.exp() })
            .collect();

        let choice = match mode {
            DecodeMode::Greedy => {
                let mut best = None;
                for (i, &masked) in mask.iter().enumerate() {
                    if !masked && best.map_or(true, |b: usize| lp[i] > lp[b]) {
                        best = Some(i);
                    }
                }
                best.expect("an unmasked customer exists")
            }
            DecodeMode::Sample => draw(&probs, rng.gen()),
            DecodeMode::Forced(actions) => {
                let id = actions.get(state.t).copied().unwrap_or(0);
                if id == 0 || id > mask.len() || mask[id - 1] {
                    return Err(ModelError::ForcedAction {
                        step: state.t,
                        action: id,
                    });
                }
                id - 1
            }
        };
        let log_prob = lp[choice];
        let chosen = tape.index(logp, choice)?;
        self.log_probs.push(chosen);
        let customer = choice + 1;
        state.serve(inst, vehicle, customer);
        Ok(Step::Served {
            vehicle,
            customer,
            log_prob,
            probs,
        })
    }

    /// Summed log-probability of every action taken so far.
    pub fn log_prob(&self) -> f64 {
        self.log_probs.iter().map(|&v| self.tape.item(v)).sum()
    }

    /// Gradients of the summed log-probability, keyed by parameter index.
    /// Only meaningful for a decoder built with `track`.
    pub fn gradients(&mut self) -> Result<Gradients, ModelError> {
        let total = match self.log_probs.len() {
            0 => self.tape.constant(vec![1], vec![0.0])?,
            _ => {
                let all = self.tape.concat(&self.log_probs)?;
                self.tape.sum(all)
            }
        };
        Ok(self.tape.backward(total)?)
    }
}

/// Index drawn from `probs` by inverse-CDF with uniform `r` in `[0, 1)`;
/// zero-probability entries are never returned.
pub fn draw(probs: &[f64], r: f64) -> usize {
    let mut acc = 0.0;
    let mut pick = None;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        pick = Some(i);
        if r < acc {
            break;
        }
    }
    pick.expect("some entry has positive probability")
}

/// Decoded solution and its probability under the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub solution: Solution,
    /// Sum of per-step log-probabilities.
    pub log_prob: f64,
    /// Customers in the order they were chosen.
    pub actions: Vec<usize>,
    pub step_log_probs: Vec<f64>,
    /// Per-step probability vectors, when traced.
    pub per_step_probs: Option<Vec<Vec<f64>>>,
    /// Vehicle acting at each served step.
    pub vehicles: Vec<usize>,
}

fn run<R: Rng + ?Sized>(
    decoder: &mut Decoder<'_>,
    inst: &Instance,
    mode: &DecodeMode,
    rng: &mut R,
    trace: bool,
) -> Result<RolloutResult, ModelError> {
    let mut state = DecoderState::with_guard(inst, decoder.params.config().feasibility_guard);
    let mut actions = Vec::with_capacity(inst.n_customers());
    let mut vehicles = Vec::with_capacity(inst.n_customers());
    let mut step_log_probs = Vec::with_capacity(inst.n_customers());
    let mut probs_trace = trace.then(Vec::new);
    while !state.is_done() {
        if let Step::Served {
            vehicle,
            customer,
            log_prob,
            probs,
        } = decoder.step(&mut state, mode, rng)?
        {
            actions.push(customer);
            vehicles.push(vehicle);
            step_log_probs.push(log_prob);
            if let Some(t) = probs_trace.as_mut() {
                t.push(probs);
            }
        }
    }
    let solution = evaluate_solution(inst, &state.routes)?;
    Ok(RolloutResult {
        solution,
        log_prob: step_log_probs.iter().sum(),
        actions,
        step_log_probs,
        per_step_probs: probs_trace,
        vehicles,
    })
}

/// Decode a full solution.
pub fn rollout<R: Rng + ?Sized>(
    inst: &Instance,
    params: &ModelParams,
    mode: &DecodeMode,
    rng: &mut R,
) -> Result<RolloutResult, ModelError> {
    let mut decoder = Decoder::new(inst, params, false)?;
    run(&mut decoder, inst, mode, rng, false)
}

/// Like [`rollout`], also recording per-step probabilities.
pub fn rollout_traced<R: Rng + ?Sized>(
    inst: &Instance,
    params: &ModelParams,
    mode: &DecodeMode,
    rng: &mut R,
) -> Result<RolloutResult, ModelError> {
    let mut decoder = Decoder::new(inst, params, false)?;
    run(&mut decoder, inst, mode, rng, true)
}

/// Decode a full solution and return the gradient of its log-probability
/// with respect to every parameter.
pub fn rollout_with_gradients<R: Rng + ?Sized>(
    inst: &Instance,
    params: &ModelParams,
    mode: &DecodeMode,
    rng: &mut R,
) -> Result<(RolloutResult, Gradients), ModelError> {
    let mut decoder = Decoder::new(inst, params, true)?;
    let result = run(&mut decoder, inst, mode, rng, false)?;
    let grads = decoder.gradients()?;
    Ok((result, grads))
}
