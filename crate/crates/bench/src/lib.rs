//! Benchmark inputs shared by the criterion targets.

use fairdyn::records::write_records;
use fairdyn::synth::{generate, TrajectorySpec};

/// A serialized record file from the default synthetic scenario, scaled by
/// `prompts_per_group`.
pub fn record_file(prompts_per_group: usize) -> Vec<u8> {
    let spec = TrajectorySpec { prompts_per_group, ..TrajectorySpec::default() };
    let out = generate(&spec, 7).expect("default spec is valid");
    let mut buf = Vec::new();
    write_records(&out.records, &mut buf).expect("in-memory write");
    buf
}

/// `n` evenly spread, tie-free values starting at `offset`.
pub fn spread(n: usize, offset: f64) -> Vec<f64> {
    (0..n).map(|i| offset + i as f64 * 1.37).collect()
}
