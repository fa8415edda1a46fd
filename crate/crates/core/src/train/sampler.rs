//! Uniform random patch-origin sampling.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Dims;
use crate::rng::Stream;

/// Draw `count` cubic patch origins uniformly over all valid positions,
/// reproducible per seed.  Every voxel of the volume has nonzero probability
/// of being covered.
pub fn sample_patches(
    dims: Dims,
    patch_size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<[usize; 3]>> {
    let mut rng = Stream::new(seed);
    sample_patches_with(&mut rng, dims, patch_size, count)
}

/// Same as [`sample_patches`] but drawing from an existing stream.
pub fn sample_patches_with(
    rng: &mut Stream,
    dims: Dims,
    patch_size: usize,
    count: usize,
) -> Result<Vec<[usize; 3]>> {
    if patch_size == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    let sizes = [dims.0, dims.1, dims.2];
    if sizes.iter().any(|&n| n < patch_size) {
        return Err(Error::invalid("patch does not fit inside the volume"));
    }
    let ranges: [u64; 3] = core::array::from_fn(|a| (sizes[a] - patch_size + 1) as u64);
    let mut origins = Vec::with_capacity(count);
    for _ in 0..count {
        origins.push(core::array::from_fn(|a| rng.next_below(ranges[a]) as usize));
    }
    Ok(origins)
}
