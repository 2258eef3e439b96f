//! Shared fixtures for the criterion benchmarks.

use voxaug_core::Volume3;

/// Deterministic mixed-sign volume, cheap to build at any size.
pub fn patterned(shape: (usize, usize, usize)) -> Volume3 {
    Volume3::from_fn(shape, |x, y, z| {
        ((x * 31 + y * 17 + z * 7) % 13) as f32 - 6.25
    })
}
