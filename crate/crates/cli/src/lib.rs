//! Library side of the `agentwall` command line: the benchmark harness and
//! the on-disk layout under `AGENTWALL_HOME`.

pub mod bench;
pub mod paths;
