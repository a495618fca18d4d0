//! Genetic algorithm over giant tours: tournament selection (size 2), order
//! crossover, per-gene swap mutation, elitism of one, optimal split decoding.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::split::{bin_pack_routes, split_giant_tour};
use super::{GaConfig, HeuristicError, STALL_EPS};
use crate::problem::{evaluate_solution, find_packing, Instance, Solution};

/// Fresh random tours tried before giving up on a population slot.
const RESAMPLE_BUDGET: usize = 1_000;

#[derive(Clone)]
struct Individual {
    tour: Vec<usize>,
    routes: Vec<Vec<usize>>,
    cost: f64,
}

/// Split `tour`, repairing it by first-fit-decreasing (or a packing search)
/// when no feasible split exists. The repaired tour replaces the original.
fn decode(inst: &Instance, mut tour: Vec<usize>) -> Option<Individual> {
    if let Some((routes, cost)) = split_giant_tour(inst, &tour) {
        return Some(Individual { tour, routes, cost });
    }
    tour = bin_pack_routes(inst, &tour).or_else(|| find_packing(inst))?.concat();
    let (routes, cost) = split_giant_tour(inst, &tour)?;
    Some(Individual { tour, routes, cost })
}

fn random_individual(inst: &Instance, rng: &mut ChaCha8Rng) -> Result<Individual, HeuristicError> {
    let mut tour: Vec<usize> = (1..=inst.n_customers()).collect();
    for _ in 0..RESAMPLE_BUDGET {
        tour.shuffle(rng);
        if let Some(ind) = decode(inst, tour.clone()) {
            return Ok(ind);
        }
    }
    Err(HeuristicError::NoFeasibleSolution(RESAMPLE_BUDGET))
}

/// Order crossover (OX1): copy `p1[a..=b]`, fill the rest with the genes of
/// `p2` in their order starting after `b`, wrapping around.
pub fn order_crossover(p1: &[usize], p2: &[usize], a: usize, b: usize) -> Vec<usize> {
    let n = p1.len();
    let (a, b) = (a.min(b), a.max(b));
    let max_gene = p1.iter().copied().max().unwrap_or(0);
    let mut taken = vec![false; max_gene + 1];
    let mut child = vec![0usize; n];
    for i in a..=b {
        child[i] = p1[i];
        taken[p1[i]] = true;
    }
    let mut pos = (b + 1) % n;
    for k in 0..n {
        let gene = p2[(b + 1 + k) % n];
        if !taken[gene] {
            child[pos] = gene;
            taken[gene] = true;
            pos = (pos + 1) % n;
        }
    }
    child
}

fn tournament<'a>(pop: &'a [Individual], rng: &mut ChaCha8Rng) -> &'a Individual {
    let x = &pop[rng.gen_range(0..pop.len())];
    let y = &pop[rng.gen_range(0..pop.len())];
    if y.cost < x.cost {
        y
    } else {
        x
    }
}

fn best_of(pop: &[Individual]) -> &Individual {
    pop.iter()
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .expect("population is never empty")
}

pub fn solve_ga(inst: &Instance, cfg: &GaConfig) -> Result<Solution, HeuristicError> {
    solve_ga_traced(inst, cfg).map(|(s, _)| s)
}

/// Like [`solve_ga`], also returning the best cost after each generation
/// (index 0 is the initial population).
pub fn solve_ga_traced(inst: &Instance, cfg: &GaConfig) -> Result<(Solution, Vec<f64>), HeuristicError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = inst.n_customers();
    if n == 0 {
        let sol = evaluate_solution(inst, &[]).expect("empty instance");
        return Ok((sol, vec![0.0]));
    }
    let mut pop = (0..cfg.population)
        .map(|_| random_individual(inst, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let mut best = best_of(&pop).clone();
    let mut trace = vec![best.cost];
    let mut stall = 0;

    for _ in 0..cfg.max_iters {
        let mut next = Vec::with_capacity(cfg.population);
        next.push(best.clone());
        while next.len() < cfg.population {
            let p1 = tournament(&pop, &mut rng);
            let p2 = tournament(&pop, &mut rng);
            let mut child = if rng.gen::<f64>() < cfg.crossover_rate {
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(0..n);
                order_crossover(&p1.tour, &p2.tour, a, b)
            } else {
                p1.tour.clone()
            };
            for i in 0..n {
                if rng.gen::<f64>() < cfg.mutation_rate {
                    let j = rng.gen_range(0..n);
                    child.swap(i, j);
                }
            }
            let ind = match decode(inst, child) {
                Some(ind) => ind,
                None => random_individual(inst, &mut rng)?,
            };
            next.push(ind);
        }
        pop = next;
        let gen_best = best_of(&pop);
        if best.cost - gen_best.cost < STALL_EPS {
            stall += 1;
        } else {
            stall = 0;
        }
        if gen_best.cost < best.cost {
            best = gen_best.clone();
        }
        trace.push(best.cost);
        if stall >= cfg.stall_limit {
            break;
        }
    }
    let sol = evaluate_solution(inst, &best.routes).expect("split routes are feasible");
    Ok((sol, trace))
}
