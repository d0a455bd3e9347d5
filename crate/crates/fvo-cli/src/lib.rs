//! Scenario-driven co-simulation harness for the fvo library: scenario
//! loading, the grid/controller/oracle loop, metrics, trace output, run
//! comparison, and asset-count scaling benchmarks. The `fvo` binary exposes
//! the same machinery on the command line.

pub mod assets;
pub mod bench;
pub mod compare;
pub mod metrics;
pub mod scenario;
pub mod sim;
pub mod trace;
