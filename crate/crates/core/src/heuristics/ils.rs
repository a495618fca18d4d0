//! Iterated local search: best-improvement descent over intra-route 2-opt,
//! inter-route relocate and inter-route swap; random relocate perturbation;
//! only improving local optima are accepted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::construct::initial_routes;
use super::{HeuristicError, IlsConfig, STALL_EPS};
use crate::problem::{evaluate_solution, Instance, Solution};

/// Moves must improve the total by more than this.
const MOVE_EPS: f64 = 1e-10;

#[derive(Clone)]
struct State<'a> {
    inst: &'a Instance,
    routes: Vec<Vec<usize>>,
    cost: Vec<f64>,
    load: Vec<f64>,
}

enum Move {
    TwoOpt {
        r: usize,
        i: usize,
        j: usize,
    },
    Relocate {
        from: usize,
        i: usize,
        to: usize,
        pos: usize,
    },
    Swap {
        r: usize,
        i: usize,
        s: usize,
        j: usize,
    },
}

impl<'a> State<'a> {
    fn new(inst: &'a Instance, routes: Vec<Vec<usize>>) -> Self {
        let cost = routes.iter().map(|r| route_total(inst, r)).collect();
        let load = routes
            .iter()
            .map(|r| r.iter().map(|&id| inst.customer(id).demand).sum())
            .collect();
        Self {
            inst,
            routes,
            cost,
            load,
        }
    }

    fn total(&self) -> f64 {
        self.cost.iter().sum()
    }

    fn demand(&self, id: usize) -> f64 {
        self.inst.customer(id).demand
    }

    /// Best improving move, if any, with its delta.
    fn best_move(&self, buf: &mut Vec<usize>) -> Option<(Move, f64)> {
        let inst = self.inst;
        let m = self.routes.len();
        let mut best: Option<(Move, f64)> = None;
        let consider = |mv: Move, delta: f64, best: &mut Option<(Move, f64)>| {
            if delta < -MOVE_EPS && best.as_ref().map_or(true, |(_, d)| delta < *d) {
                *best = Some((mv, delta));
            }
        };

        for r in 0..m {
            let route = &self.routes[r];
            for i in 0..route.len() {
                for j in i + 1..route.len() {
                    buf.clear();
                    buf.extend_from_slice(route);
                    buf[i..=j].reverse();
                    let delta = route_total(inst, buf) - self.cost[r];
                    consider(Move::TwoOpt { r, i, j }, delta, &mut best);
                }
            }
        }

        for from in 0..m {
            for i in 0..self.routes[from].len() {
                let id = self.routes[from][i];
                buf.clear();
                buf.extend_from_slice(&self.routes[from]);
                buf.remove(i);
                let removed = route_total(inst, buf) - self.cost[from];
                for to in 0..m {
                    if to == from || inst.over_capacity(self.load[to] + self.demand(id)) {
                        continue;
                    }
                    for pos in 0..=self.routes[to].len() {
                        buf.clear();
                        buf.extend_from_slice(&self.routes[to]);
                        buf.insert(pos, id);
                        let delta = removed + route_total(inst, buf) - self.cost[to];
                        consider(Move::Relocate { from, i, to, pos }, delta, &mut best);
                    }
                }
            }
        }

        for r in 0..m {
            for s in r + 1..m {
                for i in 0..self.routes[r].len() {
                    for j in 0..self.routes[s].len() {
                        let a = self.routes[r][i];
                        let b = self.routes[s][j];
                        let shift = self.demand(b) - self.demand(a);
                        if inst.over_capacity(self.load[r] + shift) || inst.over_capacity(self.load[s] - shift) {
                            continue;
                        }
                        buf.clear();
                        buf.extend_from_slice(&self.routes[r]);
                        buf[i] = b;
                        let dr = route_total(inst, buf) - self.cost[r];
                        buf.clear();
                        buf.extend_from_slice(&self.routes[s]);
                        buf[j] = a;
                        let ds = route_total(inst, buf) - self.cost[s];
                        consider(Move::Swap { r, i, s, j }, dr + ds, &mut best);
                    }
                }
            }
        }
        best
    }

    fn refresh(&mut self, r: usize) {
        self.cost[r] = route_total(self.inst, &self.routes[r]);
        self.load[r] = self.routes[r].iter().map(|&id| self.inst.customer(id).demand).sum();
    }

    fn apply(&mut self, mv: Move) {
        match mv {
            Move::TwoOpt { r, i, j } => {
                self.routes[r][i..=j].reverse();
                self.refresh(r);
            }
            Move::Relocate { from, i, to, pos } => {
                let id = self.routes[from].remove(i);
                self.routes[to].insert(pos, id);
                self.refresh(from);
                self.refresh(to);
            }
            Move::Swap { r, i, s, j } => {
                let a = self.routes[r][i];
                self.routes[r][i] = self.routes[s][j];
                self.routes[s][j] = a;
                self.refresh(r);
                self.refresh(s);
            }
        }
    }

    fn descend(&mut self) {
        let mut buf = Vec::new();
        while let Some((mv, _)) = self.best_move(&mut buf) {
            self.apply(mv);
        }
    }

    /// `strength` random capacity-feasible relocations between routes.
    fn perturb(&mut self, strength: usize, rng: &mut ChaCha8Rng) {
        let m = self.routes.len();
        if m < 2 {
            // single vehicle: random reinsertion within the route
            for _ in 0..strength {
                let len = self.routes[0].len();
                if len < 2 {
                    return;
                }
                let id = self.routes[0].remove(rng.gen_range(0..len));
                let pos = rng.gen_range(0..len);
                self.routes[0].insert(pos, id);
            }
            self.refresh(0);
            return;
        }
        for _ in 0..strength {
            let occupied: Vec<usize> = (0..m).filter(|&r| !self.routes[r].is_empty()).collect();
            if occupied.is_empty() {
                return;
            }
            // a few tries to find a customer that fits elsewhere
            for _ in 0..8 {
                let from = occupied[rng.gen_range(0..occupied.len())];
                let i = rng.gen_range(0..self.routes[from].len());
                let id = self.routes[from][i];
                let targets: Vec<usize> = (0..m)
                    .filter(|&t| t != from && !self.inst.over_capacity(self.load[t] + self.demand(id)))
                    .collect();
                if targets.is_empty() {
                    continue;
                }
                let to = targets[rng.gen_range(0..targets.len())];
                let pos = rng.gen_range(0..=self.routes[to].len());
                self.apply(Move::Relocate { from, i, to, pos });
                break;
            }
        }
    }
}

fn route_total(inst: &Instance, route: &[usize]) -> f64 {
    let (t, p) = inst.route_cost(route);
    t + p
}

pub fn solve_ils(inst: &Instance, cfg: &IlsConfig) -> Result<Solution, HeuristicError> {
    solve_ils_traced(inst, cfg).map(|(s, _)| s)
}

/// Like [`solve_ils`], also returning the best cost after each iteration
/// (index 0 is the first local optimum).
pub fn solve_ils_traced(inst: &Instance, cfg: &IlsConfig) -> Result<(Solution, Vec<f64>), HeuristicError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best = State::new(inst, initial_routes(inst)?);
    best.descend();
    let mut best_cost = best.total();
    let mut trace = vec![best_cost];
    let mut stall = 0;
    for _ in 0..cfg.max_iters {
        let mut cand = best.clone();
        cand.perturb(cfg.perturbation_strength, &mut rng);
        cand.descend();
        let cost = cand.total();
        if best_cost - cost < STALL_EPS {
            stall += 1;
        } else {
            stall = 0;
        }
        if cost < best_cost {
            best = cand;
            best_cost = cost;
        }
        trace.push(best_cost);
        if stall >= cfg.stall_limit {
            break;
        }
    }
    let sol = evaluate_solution(inst, &best.routes).expect("local search keeps routes feasible");
    Ok((sol, trace))
}
