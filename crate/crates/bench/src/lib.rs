//! Benchmark inputs shared by the criterion targets.

use maskseg_core::phantom::{generate_phantom, PhantomSpec};
use maskseg_core::{Sample, Tensor};

/// Deterministic pseudo-random tensor; values lie in [-1, 1).
pub fn wave(shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |i| (i as f32 * 0.618_034).fract() * 2.0 - 1.0).expect("valid shape")
}

/// The first `n` samples of the default phantom set, left side.
pub fn phantoms(n: usize) -> Vec<Sample> {
    let spec = PhantomSpec::default();
    (0..n)
        .map(|i| {
            let (volume, label, _) = generate_phantom(&spec, i as u64).expect("default spec is valid");
            Sample { id: format!("phantom_{i:03}"), volume, label, fold: 0 }
        })
        .collect()
}
