//! Routing environment: instances, route validation, the soft time-window
//! penalty and the total cost that every solver in this crate minimizes.
//!
//! Node indexing is shared by all modules: node `0` is the depot and node
//! `i >= 1` is the customer with id `i`. Routes are stored without the depot;
//! every route implicitly starts and ends there.
//!
//! Timing rules:
//! - vehicles travel at unit speed, so travel time equals Euclidean distance;
//! - service time is zero and a vehicle arriving early does not wait, it pays
//!   the early penalty and leaves immediately;
//! - arrival times are per route, vehicles do not interact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point in the plane.
pub type Point = [f64; 2];

/// Relative slack used by every capacity comparison, so that demand and
/// capacity scaled by the same factor compare the same way after rounding.
pub const CAPACITY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("invalid routes: {0}")]
    Validation(RouteDefects),
    #[error("route {route} exceeds capacity {capacity} after prefix {prefix:?} (load {load})")]
    CapacityExceeded {
        route: usize,
        prefix: Vec<usize>,
        load: f64,
        capacity: f64,
    },
}

/// Offending customer ids found while validating a route set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RouteDefects {
    pub duplicated: Vec<usize>,
    pub missing: Vec<usize>,
    pub unknown: Vec<usize>,
    /// Set when more routes than vehicles were supplied.
    pub too_many_routes: Option<(usize, usize)>,
}

impl RouteDefects {
    pub fn is_empty(&self) -> bool {
        self.duplicated.is_empty()
            && self.missing.is_empty()
            && self.unknown.is_empty()
            && self.too_many_routes.is_none()
    }
}

impl std::fmt::Display for RouteDefects {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts = Vec::new();
        if !self.duplicated.is_empty() {
            parts.push(format!("duplicated {:?}", self.duplicated));
        }
        if !self.missing.is_empty() {
            parts.push(format!("missing {:?}", self.missing));
        }
        if !self.unknown.is_empty() {
            parts.push(format!("unknown {:?}", self.unknown));
        }
        if let Some((got, fleet)) = self.too_many_routes {
            parts.push(format!("{got} routes for a fleet of {fleet}"));
        }
        write!(f, "{}", parts.join("; "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Customer {
    pub id: usize,
    pub coord: Point,
    pub demand: f64,
    pub window_open: f64,
    pub window_close: f64,
    /// Penalty per time unit of early arrival.
    pub early_coeff: f64,
    /// Penalty per time unit of late arrival.
    pub late_coeff: f64,
}

impl Customer {
    fn check(&self) -> Result<(), String> {
        let finite = self.coord.iter().all(|c| c.is_finite())
            && self.demand.is_finite()
            && self.window_open.is_finite()
            && self.window_close.is_finite()
            && self.early_coeff.is_finite()
            && self.late_coeff.is_finite();
        if !finite {
            return Err(format!("customer {} has non-finite fields", self.id));
        }
        if self.window_open < 0.0 || self.window_open > self.window_close {
            return Err(format!(
                "customer {} has window [{}, {}]",
                self.id, self.window_open, self.window_close
            ));
        }
        if self.demand < 0.0 || self.early_coeff < 0.0 || self.late_coeff < 0.0 {
            return Err(format!(
                "customer {} has a negative demand or penalty coefficient",
                self.id
            ));
        }
        Ok(())
    }
}

/// One problem instance. Immutable once constructed; the distance matrix
/// over all nodes is computed up front.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    depot: Point,
    customers: Vec<Customer>,
    fleet_size: usize,
    capacity: f64,
    dist: Vec<f64>,
}

impl Instance {
    pub fn new(depot: Point, customers: Vec<Customer>, fleet_size: usize, capacity: f64) -> Result<Self, ProblemError> {
        if !depot.iter().all(|c| c.is_finite()) {
            return Err(ProblemError::InvalidInstance("non-finite depot".into()));
        }
        if fleet_size == 0 {
            return Err(ProblemError::InvalidInstance("fleet size must be positive".into()));
        }
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(ProblemError::InvalidInstance(format!(
                "capacity must be positive, got {capacity}"
            )));
        }
        for (pos, c) in customers.iter().enumerate() {
            if c.id != pos + 1 {
                return Err(ProblemError::InvalidInstance(format!(
                    "customer at position {pos} has id {}, expected {}",
                    c.id,
                    pos + 1
                )));
            }
            c.check().map_err(ProblemError::InvalidInstance)?;
        }
        let total: f64 = customers.iter().map(|c| c.demand).sum();
        let fleet_capacity = fleet_size as f64 * capacity;
        if exceeds(total, fleet_capacity) {
            return Err(ProblemError::InvalidInstance(format!(
                "total demand {total} exceeds fleet capacity {fleet_capacity}"
            )));
        }

        let n = customers.len() + 1;
        let coord = |i: usize| if i == 0 { depot } else { customers[i - 1].coord };
        let mut dist = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                dist[a * n + b] = plane_distance(coord(a), coord(b));
            }
        }
        Ok(Self {
            depot,
            customers,
            fleet_size,
            capacity,
            dist,
        })
    }

    pub fn depot(&self) -> Point {
        self.depot
    }

    pub fn customers(&self) -> &[Customer] {
        &self.customers
    }

    /// Customer by id (1-based).
    pub fn customer(&self, id: usize) -> &Customer {
        &self.customers[id - 1]
    }

    pub fn n_customers(&self) -> usize {
        self.customers.len()
    }

    pub fn fleet_size(&self) -> usize {
        self.fleet_size
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn total_demand(&self) -> f64 {
        self.customers.iter().map(|c| c.demand).sum()
    }

    /// Coordinate of a node (0 = depot).
    pub fn coord(&self, node: usize) -> Point {
        if node == 0 {
            self.depot
        } else {
            self.customers[node - 1].coord
        }
    }

    /// Distance between two nodes (0 = depot).
    #[inline]
    pub fn dist(&self, a: usize, b: usize) -> f64 {
        self.dist[a * (self.customers.len() + 1) + b]
    }

    /// Whether `load` exceeds this instance's vehicle capacity.
    #[inline]
    pub fn over_capacity(&self, load: f64) -> bool {
        exceeds(load, self.capacity)
    }

    /// Travel and penalty of one route, without validation.
    pub fn route_cost(&self, route: &[usize]) -> (f64, f64) {
        let mut travel = 0.0;
        let mut penalty = 0.0;
        let mut prev = 0;
        for &id in route {
            travel += self.dist(prev, id);
            penalty += window_penalty(travel, self.customer(id));
            prev = id;
        }
        if !route.is_empty() {
            travel += self.dist(prev, 0);
        }
        (travel, penalty)
    }

    /// Total cost of a route set, without validation.
    pub fn routes_cost(&self, routes: &[Vec<usize>]) -> f64 {
        let (travel, penalty) = routes.iter().fold((0.0, 0.0), |(t, p), r| {
            let (rt, rp) = self.route_cost(r);
            (t + rt, p + rp)
        });
        travel + penalty
    }
}

fn exceeds(load: f64, capacity: f64) -> bool {
    load > capacity + CAPACITY_EPS * capacity.max(1.0)
}

fn plane_distance(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub travel: f64,
    pub penalty: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn new(travel: f64, penalty: f64) -> Self {
        Self {
            travel,
            penalty,
            total: travel + penalty,
        }
    }
}

/// A validated route set with its arrival times and cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// One id sequence per vehicle; the depot is implicit at both ends.
    pub routes: Vec<Vec<usize>>,
    /// Arrival time per customer, indexed by `id - 1`.
    pub arrival_times: Vec<f64>,
    pub cost: CostBreakdown,
}

impl Solution {
    pub fn arrival(&self, id: usize) -> f64 {
        self.arrival_times[id - 1]
    }
}

/// Euclidean distance between two points.
pub fn euclidean_distance(a: Point, b: Point) -> Result<f64, ProblemError> {
    if !a.iter().chain(b.iter()).all(|c| c.is_finite()) {
        return Err(ProblemError::InvalidArgument(format!(
            "non-finite coordinate in {a:?} / {b:?}"
        )));
    }
    Ok(plane_distance(a, b))
}

/// Piecewise-linear soft time-window penalty: `alpha * (e - t)` before the
/// window opens, `beta * (t - l)` after it closes, zero inside.
#[inline]
pub fn window_penalty(arrival: f64, cust: &Customer) -> f64 {
    if arrival < cust.window_open {
        cust.early_coeff * (cust.window_open - arrival)
    } else if arrival > cust.window_close {
        cust.late_coeff * (arrival - cust.window_close)
    } else {
        0.0
    }
}

/// Check coverage and capacity of `routes`, returning them padded with empty
/// routes up to the fleet size.
pub fn validate_routes(inst: &Instance, routes: &[Vec<usize>]) -> Result<Vec<Vec<usize>>, ProblemError> {
    let n = inst.n_customers();
    let mut defects = RouteDefects::default();
    if routes.len() > inst.fleet_size() {
        defects.too_many_routes = Some((routes.len(), inst.fleet_size()));
    }
    let mut seen = vec![0usize; n + 1];
    for &id in routes.iter().flatten() {
        if id == 0 || id > n {
            if !defects.unknown.contains(&id) {
                defects.unknown.push(id);
            }
        } else {
            seen[id] += 1;
            if seen[id] == 2 {
                defects.duplicated.push(id);
            }
        }
    }
    defects.missing = (1..=n).filter(|&id| seen[id] == 0).collect();
    if !defects.is_empty() {
        defects.duplicated.sort_unstable();
        defects.unknown.sort_unstable();
        return Err(ProblemError::Validation(defects));
    }

    for (r, route) in routes.iter().enumerate() {
        let mut load = 0.0;
        for (pos, &id) in route.iter().enumerate() {
            load += inst.customer(id).demand;
            if inst.over_capacity(load) {
                return Err(ProblemError::CapacityExceeded {
                    route: r,
                    prefix: route[..=pos].to_vec(),
                    load,
                    capacity: inst.capacity(),
                });
            }
        }
    }
    let mut padded = routes.to_vec();
    padded.resize(inst.fleet_size(), Vec::new());
    Ok(padded)
}

/// Validate `routes` and compute arrival times and the cost breakdown.
///
/// Travel sums every leg of every route, including the return leg; the
/// penalty sums the window penalty of each customer at its arrival time.
/// Both sums run route by route in visiting order.
pub fn evaluate_solution(inst: &Instance, routes: &[Vec<usize>]) -> Result<Solution, ProblemError> {
    let routes = validate_routes(inst, routes)?;
    let mut arrival_times = vec![0.0; inst.n_customers()];
    let mut travel = 0.0;
    let mut penalty = 0.0;
    for route in &routes {
        let mut clock = 0.0;
        let mut prev = 0;
        for &id in route {
            clock += inst.dist(prev, id);
            arrival_times[id - 1] = clock;
            penalty += window_penalty(clock, inst.customer(id));
            prev = id;
        }
        if !route.is_empty() {
            clock += inst.dist(prev, 0);
        }
        travel += clock;
    }
    Ok(Solution {
        routes,
        arrival_times,
        cost: CostBreakdown::new(travel, penalty),
    })
}

/// Search nodes allowed once first-fit decreasing has failed.
pub const PACKING_BUDGET: u64 = 1_000_000;

/// Routes (in no particular visiting order) that serve every customer
/// within capacity, if such an assignment is found: first-fit decreasing,
/// then a depth-first search over vehicle assignments limited to
/// [`PACKING_BUDGET`] nodes.
pub fn find_packing(inst: &Instance) -> Option<Vec<Vec<usize>>> {
    let mut ids: Vec<usize> = (1..=inst.n_customers()).collect();
    ids.sort_by(|&a, &b| {
        inst.customer(b)
            .demand
            .total_cmp(&inst.customer(a).demand)
            .then(a.cmp(&b))
    });
    let m = inst.fleet_size();
    let mut load = vec![0.0; m];
    let mut routes = vec![Vec::new(); m];
    let first_fit = ids.iter().all(|&id| {
        let d = inst.customer(id).demand;
        match (0..m).find(|&v| !inst.over_capacity(load[v] + d)) {
            Some(v) => {
                load[v] += d;
                routes[v].push(id);
                true
            }
            None => false,
        }
    });
    if first_fit {
        return Some(routes);
    }
    let mut assign = vec![0usize; ids.len()];
    let mut load = vec![0.0; m];
    let mut nodes = 0u64;
    if pack_search(inst, &ids, 0, &mut load, &mut assign, &mut nodes) {
        let mut routes = vec![Vec::new(); m];
        for (k, &id) in ids.iter().enumerate() {
            routes[assign[k]].push(id);
        }
        return Some(routes);
    }
    None
}

fn pack_search(
    inst: &Instance,
    ids: &[usize],
    k: usize,
    load: &mut [f64],
    assign: &mut [usize],
    nodes: &mut u64,
) -> bool {
    if k == ids.len() {
        return true;
    }
    *nodes += 1;
    if *nodes > PACKING_BUDGET {
        return false;
    }
    let d = inst.customer(ids[k]).demand;
    for v in 0..load.len() {
        // vehicles with equal load are interchangeable
        if (0..v).any(|u| load[u] == load[v]) || inst.over_capacity(load[v] + d) {
            continue;
        }
        load[v] += d;
        assign[k] = v;
        if pack_search(inst, ids, k + 1, load, assign, nodes) {
            return true;
        }
        load[v] -= d;
        if *nodes > PACKING_BUDGET {
            return false;
        }
    }
    false
}

/// Reinforcement-learning reward of a solution: its negated total cost.
pub fn reward(sol: &Solution) -> f64 {
    -sol.cost.total
}

/// Append zero-demand copies of customer 1 until the instance has
/// `target_n` customers.
pub fn pad_virtual_customers(inst: &Instance, target_n: usize) -> Result<Instance, ProblemError> {
    let n = inst.n_customers();
    if n == 0 {
        return Err(ProblemError::InvalidArgument(
            "cannot pad an instance without customers".into(),
        ));
    }
    if target_n < n {
        return Err(ProblemError::InvalidArgument(format!(
            "target size {target_n} is below the current {n} customers"
        )));
    }
    let source = inst.customer(1).clone();
    let mut customers = inst.customers().to_vec();
    for id in n + 1..=target_n {
        customers.push(Customer {
            id,
            demand: 0.0,
            ..source.clone()
        });
    }
    Instance::new(inst.depot(), customers, inst.fleet_size(), inst.capacity())
}

/// Multiply the vehicle capacity and every demand by `factor`.
pub fn scale_capacity(inst: &Instance, factor: f64) -> Result<Instance, ProblemError> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(ProblemError::InvalidArgument(format!(
            "capacity factor must be positive, got {factor}"
        )));
    }
    let customers = inst
        .customers()
        .iter()
        .map(|c| Customer {
            demand: c.demand * factor,
            ..c.clone()
        })
        .collect();
    Instance::new(inst.depot(), customers, inst.fleet_size(), inst.capacity() * factor)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn cust(id: usize, coord: Point, demand: f64, e: f64, l: f64, a: f64, b: f64) -> Customer {
        Customer {
            id,
            coord,
            demand,
            window_open: e,
            window_close: l,
            early_coeff: a,
            late_coeff: b,
        }
    }

    fn window(e: f64, l: f64, a: f64, b: f64) -> Customer {
        cust(1, [0.0, 0.0], 0.0, e, l, a, b)
    }

    #[test]
    fn distance_examples() {
        assert_eq!(euclidean_distance([0.0, 0.0], [3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(euclidean_distance([2.0, 2.0], [2.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            euclidean_distance([0.0, 0.0], [1.0, 1.0]).unwrap(),
            2f64.sqrt(),
            epsilon = 1e-15
        );
        assert!(euclidean_distance([f64::NAN, 0.0], [0.0, 0.0]).is_err());
        assert!(euclidean_distance([0.0, 0.0], [f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn penalty_examples() {
        let c = window(2.0, 5.0, 0.1, 0.5);
        assert_abs_diff_eq!(window_penalty(1.0, &c), 0.1, epsilon = 1e-12);
        assert_eq!(window_penalty(3.0, &c), 0.0);
        assert_abs_diff_eq!(window_penalty(7.0, &c), 1.0, epsilon = 1e-12);
        assert_eq!(window_penalty(2.0, &c), 0.0);
        assert_eq!(window_penalty(5.0, &c), 0.0);
    }

    #[test]
    fn single_customer_round_trip() {
        let inst = Instance::new([0.0, 0.0], vec![cust(1, [3.0, 4.0], 1.0, 0.0, 10.0, 0.0, 0.0)], 1, 10.0).unwrap();
        let sol = evaluate_solution(&inst, &[vec![1]]).unwrap();
        assert_eq!(sol.cost.travel, 10.0);
        assert_eq!(sol.arrival(1), 5.0);
        assert_eq!(sol.cost.penalty, 0.0);
        assert_eq!(sol.cost.total, 10.0);
        assert_eq!(reward(&sol), -10.0);
    }

    #[test]
    fn early_arrival_is_penalized_without_waiting() {
        let inst = Instance::new([0.0, 0.0], vec![cust(1, [3.0, 4.0], 1.0, 6.0, 10.0, 0.2, 0.0)], 1, 10.0).unwrap();
        let sol = evaluate_solution(&inst, &[vec![1]]).unwrap();
        assert_eq!(sol.arrival(1), 5.0);
        assert_abs_diff_eq!(sol.cost.penalty, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.cost.total, 10.2, epsilon = 1e-12);
        // no waiting: the return leg starts at time 5
        assert_eq!(sol.cost.travel, 10.0);
    }

    fn three() -> Instance {
        Instance::new(
            [0.0, 0.0],
            vec![
                cust(1, [1.0, 0.0], 4.0, 0.0, 9.0, 0.1, 0.5),
                cust(2, [0.0, 1.0], 4.0, 0.0, 9.0, 0.1, 0.5),
                cust(3, [1.0, 1.0], 4.0, 0.0, 9.0, 0.1, 0.5),
            ],
            2,
            8.0,
        )
        .unwrap()
    }

    #[test]
    fn validation_lists_offenders() {
        let inst = three();
        match evaluate_solution(&inst, &[vec![1, 1], vec![7]]) {
            Err(ProblemError::Validation(d)) => {
                assert_eq!(d.duplicated, vec![1]);
                assert_eq!(d.unknown, vec![7]);
                assert_eq!(d.missing, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            evaluate_solution(&inst, &[vec![1], vec![2], vec![3]]),
            Err(ProblemError::Validation(RouteDefects {
                too_many_routes: Some((3, 2)),
                ..
            }))
        ));
    }

    #[test]
    fn capacity_violation_names_route_and_prefix() {
        let inst = three();
        match evaluate_solution(&inst, &[vec![], vec![2, 3, 1]]) {
            Err(ProblemError::CapacityExceeded { route, prefix, .. }) => {
                assert_eq!(route, 1);
                assert_eq!(prefix, vec![2, 3, 1]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_routes_are_legal_and_padded() {
        let inst = Instance::new([0.0, 0.0], vec![cust(1, [1.0, 0.0], 1.0, 0.0, 9.0, 0.0, 0.0)], 3, 5.0).unwrap();
        let sol = evaluate_solution(&inst, &[vec![1]]).unwrap();
        assert_eq!(sol.routes, vec![vec![1], vec![], vec![]]);
        assert_eq!(sol.cost.travel, 2.0);
    }

    #[test]
    fn instance_invariants() {
        let bad_ids = Instance::new([0.0, 0.0], vec![cust(2, [0.0, 0.0], 1.0, 0.0, 1.0, 0.0, 0.0)], 1, 5.0);
        assert!(bad_ids.is_err());
        let bad_window = Instance::new([0.0, 0.0], vec![cust(1, [0.0, 0.0], 1.0, 3.0, 1.0, 0.0, 0.0)], 1, 5.0);
        assert!(bad_window.is_err());
        let overloaded = Instance::new([0.0, 0.0], vec![cust(1, [0.0, 0.0], 6.0, 0.0, 1.0, 0.0, 0.0)], 1, 5.0);
        assert!(overloaded.is_err());
        let negative = Instance::new([0.0, 0.0], vec![cust(1, [0.0, 0.0], -1.0, 0.0, 1.0, 0.0, 0.0)], 1, 5.0);
        assert!(negative.is_err());
    }

    #[test]
    fn padding_clones_customer_one() {
        let inst = three();
        let padded = pad_virtual_customers(&inst, 5).unwrap();
        assert_eq!(padded.n_customers(), 5);
        assert_eq!(&padded.customers()[..3], inst.customers());
        for id in 4..=5 {
            let v = padded.customer(id);
            assert_eq!(v.demand, 0.0);
            assert_eq!(v.coord, inst.customer(1).coord);
            assert_eq!(v.window_open, inst.customer(1).window_open);
            assert_eq!(v.window_close, inst.customer(1).window_close);
            assert_eq!(v.early_coeff, inst.customer(1).early_coeff);
            assert_eq!(v.late_coeff, inst.customer(1).late_coeff);
        }
        assert_eq!(pad_virtual_customers(&inst, 3).unwrap(), inst);
        assert!(pad_virtual_customers(&inst, 2).is_err());
    }

    #[test]
    fn virtual_customer_after_its_source_adds_only_its_own_penalty() {
        // customer 1 is reached late so its clone pays the same lateness
        let inst = Instance::new(
            [0.0, 0.0],
            vec![
                cust(1, [3.0, 4.0], 2.0, 0.0, 4.0, 0.1, 0.5),
                cust(2, [0.0, 2.0], 2.0, 0.0, 9.0, 0.1, 0.5),
            ],
            1,
            10.0,
        )
        .unwrap();
        let padded = pad_virtual_customers(&inst, 3).unwrap();
        let plain = evaluate_solution(&inst, &[vec![2, 1]]).unwrap();
        let with_virtual = evaluate_solution(&padded, &[vec![2, 1, 3]]).unwrap();
        assert_eq!(plain.cost.travel, with_virtual.cost.travel);
        let shared_arrival = plain.arrival(1);
        assert_eq!(with_virtual.arrival(3), shared_arrival);
        let own = window_penalty(shared_arrival, padded.customer(3));
        assert!(own > 0.0);
        assert_abs_diff_eq!(with_virtual.cost.penalty, plain.cost.penalty + own, epsilon = 1e-12);
    }

    #[test]
    fn capacity_scaling() {
        let inst = three();
        let doubled = scale_capacity(&inst, 2.0).unwrap();
        assert_eq!(doubled.capacity(), 16.0);
        for (a, b) in inst.customers().iter().zip(doubled.customers()) {
            assert_eq!(b.demand, 2.0 * a.demand);
        }
        assert_eq!(scale_capacity(&inst, 1.0).unwrap(), inst);
        assert!(scale_capacity(&inst, 0.0).is_err());
        assert!(scale_capacity(&inst, -1.0).is_err());
        let routes = vec![vec![1, 3], vec![2]];
        assert_eq!(
            evaluate_solution(&inst, &routes).unwrap().cost,
            evaluate_solution(&doubled, &routes).unwrap().cost
        );
    }

    #[test]
    fn reversing_a_route_keeps_its_travel() {
        let inst = three();
        let fwd = evaluate_solution(&inst, &[vec![1, 3], vec![2]]).unwrap();
        let rev = evaluate_solution(&inst, &[vec![3, 1], vec![2]]).unwrap();
        assert_abs_diff_eq!(fwd.cost.travel, rev.cost.travel, epsilon = 1e-12);
        assert_ne!(fwd.arrival(1), rev.arrival(1));
    }
}
