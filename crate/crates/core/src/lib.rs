//! Multi-vehicle routing with soft time windows.

pub mod autodiff;
pub mod harness;
pub mod heuristics;
pub mod instance_gen;
pub mod maam;
pub mod oracle;
pub mod problem;
pub mod trainer;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/problem.md")]
    struct Problem;
    #[doc = include_str!("../../../book/src/solvers.md")]
    struct Solvers;
    #[doc = include_str!("../../../book/src/autodiff.md")]
    struct Autodiff;
    #[doc = include_str!("../../../book/src/model.md")]
    struct Model;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
