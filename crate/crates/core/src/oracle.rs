//! Exact solver for tiny instances and an independent cost routine.
//!
//! The search enumerates set partitions of the customers into at most `M`
//! blocks (vehicles are identical, so partitions are taken up to vehicle
//! relabeling) and, for every capacity-feasible block, every visiting order.
//! Block optima are memoized by customer bitmask.

use thiserror::Error;

use crate::problem::{evaluate_solution, Customer, Instance, Point, Solution};

/// Largest instance the oracle accepts.
pub const MAX_CUSTOMERS: usize = 9;

/// Costs closer than this are treated as ties.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance has {0} customers; the exact solver accepts at most {MAX_CUSTOMERS}")]
    TooLarge(usize),
    #[error("node limit must be positive")]
    ZeroNodeLimit,
    #[error("node limit {limit} exhausted")]
    NodeLimit {
        limit: u64,
        incumbent: Option<Box<Solution>>,
    },
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub best: Solution,
    pub optimal_cost: f64,
    pub nodes_explored: u64,
}

/// Cost of `routes` computed directly from coordinates, independently of
/// [`crate::problem`]. Returns `(travel, penalty, total)`; legs and penalties
/// are summed route by route in visiting order.
pub fn independent_cost(inst: &Instance, routes: &[Vec<usize>]) -> (f64, f64, f64) {
    fn leg(a: Point, b: Point) -> f64 {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        (dx * dx + dy * dy).sqrt()
    }
    fn lateness(t: f64, c: &Customer) -> f64 {
        let early = (c.window_open - t).max(0.0) * c.early_coeff;
        let late = (t - c.window_close).max(0.0) * c.late_coeff;
        early + late
    }
    let customers = inst.customers();
    let mut travel = 0.0;
    let mut penalty = 0.0;
    for route in routes {
        let mut here = inst.depot();
        let mut t = 0.0;
        for &id in route {
            let c = &customers[id - 1];
            t += leg(here, c.coord);
            penalty += lateness(t, c);
            here = c.coord;
        }
        if !route.is_empty() {
            t += leg(here, inst.depot());
        }
        travel += t;
    }
    (travel, penalty, travel + penalty)
}

struct Search<'a> {
    inst: &'a Instance,
    limit: u64,
    nodes: u64,
    /// Best order and cost per feasible customer bitmask.
    blocks: Vec<Option<(Vec<usize>, f64)>>,
    best: Option<(f64, Vec<Vec<usize>>)>,
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

fn canonical(routes: &[Vec<usize>], fleet: usize) -> Vec<Vec<usize>> {
    let mut r: Vec<Vec<usize>> = routes.iter().filter(|r| !r.is_empty()).cloned().collect();
    r.sort();
    r.resize(fleet, Vec::new());
    r
}

impl<'a> Search<'a> {
    fn tick(&mut self) -> Result<(), ()> {
        self.nodes += 1;
        if self.nodes > self.limit {
            Err(())
        } else {
            Ok(())
        }
    }

    fn solve_blocks(&mut self) -> Result<(), ()> {
        let n = self.inst.n_customers();
        for mask in 1usize..(1 << n) {
            let mut ids: Vec<usize> = (0..n).filter(|b| mask >> b & 1 == 1).map(|b| b + 1).collect();
            let load: f64 = ids.iter().map(|&id| self.inst.customer(id).demand).sum();
            if self.inst.over_capacity(load) {
                continue;
            }
            let mut best: Option<(Vec<usize>, f64)> = None;
            loop {
                self.tick()?;
                let (t, p) = self.inst.route_cost(&ids);
                let cost = t + p;
                if best.as_ref().map_or(true, |(_, b)| cost < b - TIE_EPS) {
                    best = Some((ids.clone(), cost));
                }
                if !next_permutation(&mut ids) {
                    break;
                }
            }
            self.blocks[mask] = best;
        }
        Ok(())
    }

    fn partition(&mut self, next: usize, masks: &mut Vec<usize>) -> Result<(), ()> {
        let n = self.inst.n_customers();
        if next > n {
            self.tick()?;
            let mut cost = 0.0;
            let mut routes = Vec::with_capacity(masks.len());
            for &m in masks.iter() {
                let (order, c) = self.blocks[m].as_ref().expect("pruned infeasible block");
                cost += c;
                routes.push(order.clone());
            }
            let routes = canonical(&routes, self.inst.fleet_size());
            let better = match &self.best {
                None => true,
                Some((b, r)) => cost < b - TIE_EPS || ((cost - b).abs() <= TIE_EPS && routes < *r),
            };
            if better {
                self.best = Some((cost, routes));
            }
            return Ok(());
        }
        let bit = 1 << (next - 1);
        for k in 0..masks.len() {
            masks[k] |= bit;
            if self.blocks[masks[k]].is_some() {
                self.partition(next + 1, masks)?;
            }
            masks[k] &= !bit;
        }
        if masks.len() < self.inst.fleet_size() && self.blocks[bit].is_some() {
            masks.push(bit);
            self.partition(next + 1, masks)?;
            masks.pop();
        }
        Ok(())
    }

    fn incumbent(&self) -> Option<Box<Solution>> {
        self.best
            .as_ref()
            .and_then(|(_, r)| evaluate_solution(self.inst, r).ok())
            .map(Box::new)
    }
}

/// Globally optimal solution by exhaustive enumeration. Ties are broken
/// toward the lexicographically smallest route set (non-empty routes sorted,
/// empty routes last).
pub fn solve_exact(inst: &Instance, node_limit: u64) -> Result<OracleResult, OracleError> {
    let n = inst.n_customers();
    if n > MAX_CUSTOMERS {
        return Err(OracleError::TooLarge(n));
    }
    if node_limit == 0 {
        return Err(OracleError::ZeroNodeLimit);
    }
    let mut search = Search {
        inst,
        limit: node_limit,
        nodes: 0,
        blocks: vec![None; 1 << n],
        best: None,
    };
    let exhausted = |s: &Search| OracleError::NodeLimit {
        limit: node_limit,
        incumbent: s.incumbent(),
    };
    if search.solve_blocks().is_err() {
        return Err(exhausted(&search));
    }
    if n == 0 {
        search.best = Some((0.0, vec![Vec::new(); inst.fleet_size()]));
    } else if search.partition(1, &mut Vec::new()).is_err() {
        return Err(exhausted(&search));
    }
    let (_, routes) = search.best.expect("fleet capacity covers total demand");
    let best = evaluate_solution(inst, &routes).expect("oracle routes are feasible");
    Ok(OracleResult {
        optimal_cost: best.cost.total,
        best,
        nodes_explored: search.nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::tests::cust;

    #[test]
    fn single_customer() {
        let inst = Instance::new([0.0, 0.0], vec![cust(1, [3.0, 4.0], 1.0, 0.0, 100.0, 0.1, 0.1)], 1, 5.0).unwrap();
        let res = solve_exact(&inst, 1_000).unwrap();
        assert_eq!(res.optimal_cost, 10.0);
        assert_eq!(res.best.routes, vec![vec![1]]);
    }

    #[test]
    fn symmetric_pair_uses_both_vehicles() {
        let inst = Instance::new(
            [0.0, 0.0],
            vec![
                cust(1, [1.0, 0.0], 0.0, 0.0, 100.0, 0.0, 0.0),
                cust(2, [-1.0, 0.0], 0.0, 0.0, 100.0, 0.0, 0.0),
            ],
            2,
            1.0,
        )
        .unwrap();
        let res = solve_exact(&inst, 1_000).unwrap();
        assert_eq!(res.optimal_cost, 4.0);
        assert_eq!(res.best.routes, vec![vec![1], vec![2]]);
    }

    #[test]
    fn capacity_forces_split() {
        // one vehicle could do 1 -> 2 cheaply but cannot carry both
        let inst = Instance::new(
            [0.0, 0.0],
            vec![
                cust(1, [1.0, 0.0], 3.0, 0.0, 100.0, 0.0, 0.0),
                cust(2, [1.0, 0.1], 3.0, 0.0, 100.0, 0.0, 0.0),
            ],
            2,
            4.0,
        )
        .unwrap();
        let res = solve_exact(&inst, 1_000).unwrap();
        assert_eq!(res.best.routes.iter().filter(|r| !r.is_empty()).count(), 2);
    }

    #[test]
    fn refuses_large_and_limits_nodes() {
        let customers = (1..=10)
            .map(|i| cust(i, [i as f64, 0.0], 0.0, 0.0, 100.0, 0.0, 0.0))
            .collect();
        let big = Instance::new([0.0, 0.0], customers, 2, 1.0).unwrap();
        assert!(matches!(solve_exact(&big, 10), Err(OracleError::TooLarge(10))));

        let customers = (1..=6)
            .map(|i| cust(i, [i as f64, 1.0], 1.0, 0.0, 100.0, 0.0, 0.0))
            .collect();
        let inst = Instance::new([0.0, 0.0], customers, 2, 6.0).unwrap();
        assert!(matches!(solve_exact(&inst, 0), Err(OracleError::ZeroNodeLimit)));
        match solve_exact(&inst, 50) {
            Err(OracleError::NodeLimit { limit: 50, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        // enough budget for the block phase but not the partitions
        let block_nodes: u64 = (1..=6u64).map(|k| binom(6, k) * fact(k)).sum();
        match solve_exact(&inst, block_nodes + 3) {
            Err(OracleError::NodeLimit { incumbent: Some(s), .. }) => {
                assert!(evaluate_solution(&inst, &s.routes).is_ok())
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn fact(k: u64) -> u64 {
        (1..=k).product()
    }

    fn binom(n: u64, k: u64) -> u64 {
        fact(n) / (fact(k) * fact(n - k))
    }

    #[test]
    fn next_permutation_is_lexicographic() {
        let mut v = vec![1, 2, 3];
        let mut seen = vec![v.clone()];
        while next_permutation(&mut v) {
            seen.push(v.clone());
        }
        assert_eq!(seen.len(), 6);
        assert!(seen.windows(2).all(|w| w[0] < w[1]));
    }
}
