//! Inputs shared by the benchmarks.

use rmflab::{random_haar_martingale, HaarKind, SimpleMartingale, Space, Vector};

/// Deterministic vectors with entries in `(-1, 1)`.
pub fn vectors(space: Space, n: usize) -> Vec<Vector> {
    (0..n)
        .map(|j| {
            let coords = (0..space.dim()).map(|i| ((7 * j + 3 * i + 1) as f64 * 0.618_033_988_7).fract() * 2.0 - 1.0).collect();
            Vector::new(space, coords).expect("coordinates match the space")
        })
        .collect()
}

/// The unit basis of `space`.
pub fn basis(space: Space) -> Vec<Vector> {
    (0..space.dim()).map(|i| Vector::basis(space, i).expect("index within dimension")).collect()
}

/// A standard Haar martingale on `2^grid_k` atoms.
pub fn martingale(grid_k: u32, steps: usize, space: Space, seed: u64) -> SimpleMartingale {
    random_haar_martingale(grid_k, steps, space, HaarKind::Standard, seed).expect("valid generator arguments")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_the_requested_shape() {
        let space = Space::lp(1.0, 3).unwrap();
        assert_eq!(vectors(space, 5).len(), 5);
        assert!(vectors(space, 5).iter().all(|v| v.coords().iter().all(|c| c.abs() < 1.0)));
        assert_eq!(basis(space).len(), 3);
        assert_eq!(martingale(4, 6, space, 1).base().len(), 16);
    }
}
