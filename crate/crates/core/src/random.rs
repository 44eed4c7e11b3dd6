//! Seeded random streams shared by every sampler in the workspace.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Generator for stream `stream` under `seed`. Streams are independent and the
/// generator is fully determined by the pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; derives child seeds from a master seed and an index.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `rows × cols` matrix of i.i.d. standard normals, filled row by row.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let it = (0..rows * cols).map(|_| -> f64 { StandardNormal.sample(rng) });
    DMatrix::from_row_iterator(rows, cols, it.collect::<Vec<_>>())
}

/// The feature matrix `F ∈ R^{p×d}` associated with `seed`.
pub fn feature_matrix(p: usize, d: usize, seed: u64) -> DMatrix<f64> {
    gaussian_matrix(p, d, &mut stream_rng(seed, 0))
}
