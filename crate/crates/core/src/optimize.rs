//! Multi-restart projected ascent on the Euclidean unit sphere.
//!
//! Every ratio estimated in this crate is homogeneous of degree zero in
//! its coefficients, so maximizing over the unit sphere loses nothing.
//! Gradients are central differences; steps follow the tangent direction
//! and are renormalized back onto the sphere with a backtracking search.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Tuning knobs for [`maximize_on_sphere`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentOptions {
    /// Total number of starts, canonical starts included.
    pub restarts: usize,
    pub seed: u64,
    /// Relative improvement below which a run is considered converged.
    pub tol: f64,
    pub max_iter: usize,
    pub fd_step: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions { restarts: 32, seed: 0, tol: 1e-12, max_iter: 200, fd_step: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentResult {
    pub value: f64,
    pub point: Vec<f64>,
    /// Index of the winning start (canonical starts come first).
    pub start_index: usize,
    pub evaluations: usize,
}

fn normalize(x: &mut [f64]) -> bool {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    x.iter_mut().for_each(|v| *v /= n);
    true
}

/// Maximize a degree-zero homogeneous objective over the unit sphere of `R^dim`.
///
/// Starts are the normalized `canonical` points followed by seeded Gaussian
/// points until `opts.restarts` starts have been used; canonical starts are
/// always run even when they outnumber `opts.restarts`. The first start whose
/// value beats every earlier one by more than `1e-12` wins. When `ceiling`
/// is given and reached, the remaining starts are skipped.
pub fn maximize_on_sphere<F>(dim: usize, objective: F, canonical: &[Vec<f64>], ceiling: Option<f64>, opts: &AscentOptions) -> AscentResult
where
    F: Fn(&[f64]) -> f64,
{
    assert!(dim > 0, "sphere dimension must be positive");
    let mut starts: Vec<Vec<f64>> = canonical
        .iter()
        .filter_map(|c| {
            let mut c = c.clone();
            (c.len() == dim && normalize(&mut c)).then_some(c)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    while starts.len() < opts.restarts.max(1) {
        let mut x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if normalize(&mut x) {
            starts.push(x);
        }
    }

    let mut evaluations = 0usize;
    let mut best: Option<AscentResult> = None;
    for (idx, start) in starts.into_iter().enumerate() {
        let (value, point, evals) = ascend(dim, &objective, start, opts);
        evaluations += evals;
        let better = match &best {
            None => true,
            Some(b) => value > b.value + 1e-12,
        };
        if better {
            best = Some(AscentResult { value, point, start_index: idx, evaluations: 0 });
        }
        if let (Some(c), Some(b)) = (ceiling, &best) {
            if b.value >= c - 1e-12 {
                break;
            }
        }
    }
    let mut best = best.expect("at least one start");
    best.evaluations = evaluations;
    best
}

fn ascend<F: Fn(&[f64]) -> f64>(dim: usize, f: &F, mut x: Vec<f64>, opts: &AscentOptions) -> (f64, Vec<f64>, usize) {
    let mut fx = f(&x);
    let mut evals = 1usize;
    if dim == 1 {
        return (fx, x, evals);
    }
    let h = opts.fd_step;
    let mut step = 0.25;
    let mut grad = vec![0.0; dim];
    let mut probe = x.clone();
    let mut stalls = 0;
    for _ in 0..opts.max_iter {
        for i in 0..dim {
            let xi = x[i];
            probe[i] = xi + h;
            let up = f(&probe);
            probe[i] = xi - h;
            let down = f(&probe);
            probe[i] = xi;
            grad[i] = (up - down) / (2.0 * h);
        }
        evals += 2 * dim;
        let radial: f64 = grad.iter().zip(&x).map(|(g, v)| g * v).sum();
        grad.iter_mut().zip(&x).for_each(|(g, v)| *g -= radial * v);
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(gnorm > 1e-12) {
            break;
        }
        let mut accepted = None;
        while step * gnorm.min(1.0) > 1e-12 {
            let mut y: Vec<f64> = x.iter().zip(&grad).map(|(v, g)| v + step * g / gnorm).collect();
            if normalize(&mut y) {
                let fy = f(&y);
                evals += 1;
                if fy > fx {
                    accepted = Some((y, fy));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((y, fy)) = accepted else { break };
        let gain = fy - fx;
        x = y;
        fx = fy;
        probe.copy_from_slice(&x);
        step = (step * 2.0).min(1.0);
        if gain <= opts.tol * fx.abs().max(1.0) {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    (fx, x, evals)
}
