//! Shared setup for the criterion benches: a small trained transformer run
//! whose trajectory the benchmarks replay pieces of.

use epk_core::config::{preset, RunConfig};
use epk_core::dataset::SplitData;
use epk_core::train::train;
use epk_core::trajectory::{MemorySink, TrajectoryLog};

/// Desk-scale transformer shortened to keep bench setup under a second.
pub fn bench_run(steps: usize) -> (RunConfig, SplitData, TrajectoryLog) {
    let mut flat = preset("desk_transformer").expect("preset");
    flat.steps = steps;
    flat.eval_every = steps;
    let cfg = flat.to_run_config().expect("config");
    let data = cfg.data.generate().expect("data");
    let mut sink = MemorySink::new();
    train(&cfg, &data, &mut sink).expect("train");
    (cfg, data, sink.into_log().expect("log"))
}
