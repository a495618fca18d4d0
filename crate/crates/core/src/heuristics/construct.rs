use super::split::bin_pack_routes;
use super::HeuristicError;
use crate::problem::{find_packing, Instance};

/// Round-robin nearest-neighbor construction.
///
/// Vehicles take turns; the active vehicle moves to the closest unvisited
/// customer that still fits its remaining capacity (ties to the lowest id).
/// A vehicle with no fitting customer is retired. Returns `None` if every
/// vehicle retires while customers remain.
pub fn nearest_neighbor_routes(inst: &Instance) -> Option<Vec<Vec<usize>>> {
    let n = inst.n_customers();
    let m = inst.fleet_size();
    let mut routes = vec![Vec::new(); m];
    let mut load = vec![0.0; m];
    let mut here = vec![0usize; m];
    let mut retired = vec![false; m];
    let mut visited = vec![false; n + 1];
    let mut remaining = n;
    let mut vehicle = 0;
    while remaining > 0 {
        if retired.iter().all(|&r| r) {
            return None;
        }
        if retired[vehicle] {
            vehicle = (vehicle + 1) % m;
            continue;
        }
        let mut pick: Option<(usize, f64)> = None;
        for id in 1..=n {
            if visited[id] || inst.over_capacity(load[vehicle] + inst.customer(id).demand) {
                continue;
            }
            let d = inst.dist(here[vehicle], id);
            if pick.map_or(true, |(_, best)| d < best) {
                pick = Some((id, d));
            }
        }
        match pick {
            Some((id, _)) => {
                visited[id] = true;
                remaining -= 1;
                load[vehicle] += inst.customer(id).demand;
                here[vehicle] = id;
                routes[vehicle].push(id);
            }
            None => retired[vehicle] = true,
        }
        vehicle = (vehicle + 1) % m;
    }
    Some(routes)
}

/// Starting route set of the local search: round-robin nearest neighbor,
/// falling back to first-fit-decreasing packing if it strands customers.
pub fn initial_routes(inst: &Instance) -> Result<Vec<Vec<usize>>, HeuristicError> {
    if let Some(r) = nearest_neighbor_routes(inst) {
        return Ok(r);
    }
    let ids: Vec<usize> = (1..=inst.n_customers()).collect();
    bin_pack_routes(inst, &ids)
        .or_else(|| find_packing(inst))
        .ok_or(HeuristicError::NoFeasibleSolution(1))
}
