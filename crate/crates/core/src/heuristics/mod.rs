//! Classical baselines: a genetic algorithm over giant tours and an
//! iterated local search, plus the round-robin nearest-neighbor construction
//! that seeds the local search.

mod construct;
mod ga;
mod ils;
mod split;

use thiserror::Error;

pub use construct::{initial_routes, nearest_neighbor_routes};
pub use ga::{order_crossover, solve_ga, solve_ga_traced};
pub use ils::{solve_ils, solve_ils_traced};
pub use split::{bin_pack_routes, split_giant_tour};

/// Improvements smaller than this do not reset the stall counter.
pub const STALL_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HeuristicError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("no capacity-feasible route set found after {0} attempts")]
    NoFeasibleSolution(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaConfig {
    pub population: usize,
    pub max_iters: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub stall_limit: usize,
    pub seed: u64,
}

impl GaConfig {
    /// Population 100, 300 generations.
    pub fn ga1(seed: u64) -> Self {
        Self {
            population: 100,
            max_iters: 300,
            crossover_rate: 0.8,
            mutation_rate: 0.05,
            stall_limit: 5,
            seed,
        }
    }

    /// Population 300, 1000 generations.
    pub fn ga2(seed: u64) -> Self {
        Self {
            population: 300,
            max_iters: 1000,
            ..Self::ga1(seed)
        }
    }

    fn validate(&self) -> Result<(), HeuristicError> {
        let rates_ok = (0.0..=1.0).contains(&self.crossover_rate) && (0.0..=1.0).contains(&self.mutation_rate);
        if self.population < 2 || !rates_ok || self.stall_limit == 0 {
            return Err(HeuristicError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IlsConfig {
    pub max_iters: usize,
    pub stall_limit: usize,
    pub perturbation_strength: usize,
    pub seed: u64,
}

impl IlsConfig {
    /// 100 iterations.
    pub fn ils1(seed: u64) -> Self {
        Self {
            max_iters: 100,
            stall_limit: 5,
            perturbation_strength: 2,
            seed,
        }
    }

    /// 500 iterations.
    pub fn ils2(seed: u64) -> Self {
        Self {
            max_iters: 500,
            ..Self::ils1(seed)
        }
    }

    fn validate(&self) -> Result<(), HeuristicError> {
        if self.max_iters == 0 || self.perturbation_strength == 0 || self.stall_limit == 0 {
            return Err(HeuristicError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}
