//! Discrete-event simulator of a multicore host with caches, a memory
//! controller and a bulk-bitwise PIM memory, plus a litmus explorer.

pub mod cache;
pub mod config;
pub mod engine;
pub mod exec;
pub mod litmus;
pub mod memory;
pub mod program;
pub mod recipe;
pub mod runner;
pub mod sim;
pub mod stats;
pub mod types;
pub mod workloads;
