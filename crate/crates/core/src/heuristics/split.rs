//! Giant-tour decoding.

use crate::problem::Instance;

/// Optimal split of a giant tour into at most `M` consecutive,
/// capacity-feasible routes, minimizing travel plus window penalty.
///
/// Dynamic program over (routes used, customers covered); empty routes are
/// allowed. Returns `None` when no feasible split exists.
pub fn split_giant_tour(inst: &Instance, tour: &[usize]) -> Option<(Vec<Vec<usize>>, f64)> {
    let n = tour.len();
    let m = inst.fleet_size();
    // seg[i][j]: cost of serving tour[i..j] as one route
    let mut seg = vec![f64::INFINITY; (n + 1) * (n + 1)];
    for i in 0..n {
        let mut load = 0.0;
        let mut clock = 0.0;
        let mut penalty = 0.0;
        let mut prev = 0;
        for j in i..n {
            let id = tour[j];
            let c = inst.customer(id);
            load += c.demand;
            if inst.over_capacity(load) {
                break;
            }
            clock += inst.dist(prev, id);
            penalty += crate::problem::window_penalty(clock, c);
            prev = id;
            seg[i * (n + 1) + j + 1] = clock + inst.dist(id, 0) + penalty;
        }
    }

    let mut cost = vec![f64::INFINITY; n + 1];
    cost[0] = 0.0;
    // cut[k][j]: start of the k-th route when covering tour[..j]
    let mut cut = vec![vec![usize::MAX; n + 1]; m + 1];
    for k in 1..=m {
        let prev = cost.clone();
        for j in 0..=n {
            // the k-th route stays empty
            let mut best = prev[j];
            let mut arg = j;
            for i in 0..j {
                let c = prev[i] + seg[i * (n + 1) + j];
                if c < best {
                    best = c;
                    arg = i;
                }
            }
            cost[j] = best;
            cut[k][j] = arg;
        }
    }
    if !cost[n].is_finite() {
        return None;
    }
    let mut routes = Vec::with_capacity(m);
    let mut j = n;
    for k in (1..=m).rev() {
        let i = cut[k][j];
        routes.push(tour[i..j].to_vec());
        j = i;
    }
    debug_assert_eq!(j, 0);
    routes.reverse();
    Some((routes, cost[n]))
}

/// First-fit-decreasing assignment of customers to vehicles, keeping the
/// relative order of `tour` inside each vehicle. Used to repair giant tours
/// with no feasible split.
pub fn bin_pack_routes(inst: &Instance, tour: &[usize]) -> Option<Vec<Vec<usize>>> {
    let m = inst.fleet_size();
    let mut by_demand: Vec<usize> = tour.to_vec();
    by_demand.sort_by(|a, b| {
        inst.customer(*b)
            .demand
            .total_cmp(&inst.customer(*a).demand)
            .then(a.cmp(b))
    });
    let mut load = vec![0.0; m];
    let mut bin_of = vec![usize::MAX; inst.n_customers() + 1];
    for id in by_demand {
        let d = inst.customer(id).demand;
        let bin = (0..m).find(|&b| !inst.over_capacity(load[b] + d))?;
        load[bin] += d;
        bin_of[id] = bin;
    }
    let mut routes = vec![Vec::new(); m];
    for &id in tour {
        routes[bin_of[id]].push(id);
    }
    Some(routes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance_gen::{generate, GenConfig};
    use crate::problem::{evaluate_solution, tests::cust};
    use approx::assert_abs_diff_eq;

    fn brute_force_split(inst: &Instance, tour: &[usize]) -> f64 {
        // every way to place at most M-1 cut points
        let n = tour.len();
        let m = inst.fleet_size();
        let mut best = f64::INFINITY;
        let mut cuts = vec![0usize; m - 1];
        fn rec(inst: &Instance, tour: &[usize], cuts: &mut Vec<usize>, k: usize, lo: usize, best: &mut f64) {
            if k == cuts.len() {
                let mut bounds = vec![0];
                bounds.extend(cuts.iter().copied());
                bounds.push(tour.len());
                let routes: Vec<Vec<usize>> = bounds.windows(2).map(|w| tour[w[0]..w[1]].to_vec()).collect();
                if let Ok(sol) = evaluate_solution(inst, &routes) {
                    *best = best.min(sol.cost.total);
                }
                return;
            }
            for c in lo..=tour.len() {
                cuts[k] = c;
                rec(inst, tour, cuts, k + 1, c, best);
            }
        }
        let _ = n;
        rec(inst, tour, &mut cuts, 0, 0, &mut best);
        best
    }

    #[test]
    fn matches_brute_force_cut_enumeration() {
        let cfg = GenConfig::preset("6C-2V").unwrap().with_seed(5);
        let mut cfg3 = cfg.clone();
        cfg3.fleet_size = 3;
        cfg3.capacity = 12.0;
        for cfg in [cfg, cfg3] {
            for inst in generate(&cfg, 20).unwrap() {
                let tour: Vec<usize> = (1..=inst.n_customers()).rev().collect();
                let expected = brute_force_split(&inst, &tour);
                match split_giant_tour(&inst, &tour) {
                    Some((routes, cost)) => {
                        assert_abs_diff_eq!(cost, expected, epsilon = 1e-9);
                        let sol = evaluate_solution(&inst, &routes).unwrap();
                        assert_abs_diff_eq!(sol.cost.total, cost, epsilon = 1e-9);
                        assert_eq!(routes.concat(), tour);
                    }
                    None => assert!(expected.is_infinite()),
                }
            }
        }
    }

    #[test]
    fn repair_by_bin_packing() {
        // demands 3, 3, 1, 1 in tour order cannot be cut into two loads of <= 4
        let inst = Instance::new(
            [0.0, 0.0],
            vec![
                cust(1, [1.0, 0.0], 3.0, 0.0, 9.0, 0.0, 0.0),
                cust(2, [2.0, 0.0], 1.0, 0.0, 9.0, 0.0, 0.0),
                cust(3, [3.0, 0.0], 1.0, 0.0, 9.0, 0.0, 0.0),
                cust(4, [4.0, 0.0], 3.0, 0.0, 9.0, 0.0, 0.0),
            ],
            2,
            4.0,
        )
        .unwrap();
        let tour = [1, 4, 2, 3];
        assert!(split_giant_tour(&inst, &tour).is_none());
        let routes = bin_pack_routes(&inst, &tour).unwrap();
        evaluate_solution(&inst, &routes).unwrap();
        assert!(split_giant_tour(&inst, &routes.concat()).is_some());
    }
}
