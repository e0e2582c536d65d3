//! A path-sensitive symbolic-execution static analyzer for MiniC, a small C subset.

pub mod frontend;
pub mod pmap;
pub mod cfg;
pub mod solver;
pub mod symstate;
pub mod memmodel;
pub mod engine;
pub mod checkers;
pub mod refutation;
pub mod ctu;
pub mod driver;
