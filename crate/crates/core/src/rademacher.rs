//! Randomized moments over sign patterns, Khintchine-Kahane ratios and
//! type/cotype constants.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::optimize::{maximize_on_sphere, AscentOptions};
use crate::spaces::{common_space, Space, Vector};

/// How sign expectations are evaluated and how ratio searches are run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnumConfig {
    /// Largest number of signs enumerated exactly; beyond it Monte Carlo is used.
    pub exact_threshold: usize,
    pub mc_samples: usize,
    pub seed: u64,
    /// Starts per ratio search, canonical starts included.
    pub restarts: usize,
    /// Relative convergence tolerance of the ascent.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EnumConfig {
    fn default() -> Self {
        EnumConfig { exact_threshold: 20, mc_samples: 100_000, seed: 0, restarts: 32, tol: 1e-12, max_iter: 200 }
    }
}

impl EnumConfig {
    pub fn with_seed(seed: u64) -> Self {
        EnumConfig { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.exact_threshold < 1 || self.exact_threshold > 30 {
            return Err(domain("exact_threshold must lie in 1..=30"));
        }
        if self.mc_samples < 1 {
            return Err(domain("mc_samples must be positive"));
        }
        if !(self.tol >= 0.0) {
            return Err(domain("tol must be nonnegative"));
        }
        Ok(())
    }

    pub(crate) fn ascent(&self) -> AscentOptions {
        AscentOptions { restarts: self.restarts, seed: self.seed, tol: self.tol, max_iter: self.max_iter, ..AscentOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMode {
    Exact,
    MonteCarlo,
}

/// `(E ||sum eps_j x_j||^p)^(1/p)` together with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub mode: MomentMode,
    /// Sign patterns evaluated (half the cube in exact mode).
    pub samples: usize,
    pub stderr: f64,
}

/// Best ratio found by a search together with the vectors attaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioEstimate {
    pub value: f64,
    pub witness: Vec<Vector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeCotype {
    Type,
    Cotype,
}

#[inline]
pub(crate) fn pow_p(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else if p == 1.0 {
        x
    } else {
        x.powf(p)
    }
}

/// Averages of two functionals of `sum eps_j row_j` over the sign cube.
pub(crate) struct SignAverage {
    pub mean: [f64; 2],
    /// Variance of each sample mean (zero in exact mode).
    pub var: [f64; 2],
    pub samples: usize,
    pub mode: MomentMode,
}

const EXACT_CHUNKS: usize = 64;
const PARALLEL_EXACT_MIN: usize = 1 << 14;
const MC_CHUNK: usize = 1024;

/// Averages `eval(sum eps_j row_j)` over all sign patterns.
///
/// `data` holds `n` rows of `width` reals. Both functionals must be even in
/// the sum, which lets the first sign be pinned to `+1`. Exact enumeration
/// walks a Gray code so each pattern costs one row update; fixed chunk
/// boundaries keep the floating-point sum independent of the thread pool.
pub(crate) fn sign_average<E>(data: &[f64], n: usize, width: usize, cfg: &EnumConfig, eval: &E) -> SignAverage
where
    E: Fn(&[f64]) -> [f64; 2] + Sync,
{
    debug_assert_eq!(data.len(), n * width);
    assert!(n >= 1);
    if n <= cfg.exact_threshold {
        let total = 1usize << (n - 1);
        let chunks = if total >= PARALLEL_EXACT_MIN { EXACT_CHUNKS } else { 1 };
        let per = total / chunks;
        let run = |c: usize| gray_chunk(data, n, width, c * per, (c + 1) * per, eval);
        let partials: Vec<[f64; 2]> = if chunks > 1 { (0..chunks).into_par_iter().map(run).collect() } else { vec![run(0)] };
        let mut sum = [0.0; 2];
        for part in partials {
            sum[0] += part[0];
            sum[1] += part[1];
        }
        let t = total as f64;
        SignAverage { mean: [sum[0] / t, sum[1] / t], var: [0.0; 2], samples: total, mode: MomentMode::Exact }
    } else {
        let samples = cfg.mc_samples;
        let chunks = samples.div_ceil(MC_CHUNK);
        let partials: Vec<[f64; 4]> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let lo = c * MC_CHUNK;
                let hi = (lo + MC_CHUNK).min(samples);
                mc_chunk(data, n, width, cfg.seed, c as u64, hi - lo, eval)
            })
            .collect();
        let mut acc = [0.0; 4];
        for part in partials {
            for k in 0..4 {
                acc[k] += part[k];
            }
        }
        let m = samples as f64;
        let mean = [acc[0] / m, acc[1] / m];
        let var = if samples > 1 {
            [
                ((acc[2] / m - mean[0] * mean[0]).max(0.0)) * m / (m - 1.0) / m,
                ((acc[3] / m - mean[1] * mean[1]).max(0.0)) * m / (m - 1.0) / m,
            ]
        } else {
            [0.0; 2]
        };
        SignAverage { mean, var, samples, mode: MomentMode::MonteCarlo }
    }
}

fn gray_chunk<E>(data: &[f64], n: usize, width: usize, start: usize, end: usize, eval: &E) -> [f64; 2]
where
    E: Fn(&[f64]) -> [f64; 2],
{
    let row = |j: usize| &data[j * width..(j + 1) * width];
    let mut s = row(0).to_vec();
    let g = start ^ (start >> 1);
    for j in 1..n {
        let sign = if (g >> (j - 1)) & 1 == 1 { -1.0 } else { 1.0 };
        for (a, b) in s.iter_mut().zip(row(j)) {
            *a += sign * b;
        }
    }
    let mut sum = eval(&s);
    for k in start + 1..end {
        let bit = k.trailing_zeros() as usize;
        let now_negative = ((k ^ (k >> 1)) >> bit) & 1 == 1;
        let factor = if now_negative { -2.0 } else { 2.0 };
        for (a, b) in s.iter_mut().zip(row(bit + 1)) {
            *a += factor * b;
        }
        let v = eval(&s);
        sum[0] += v[0];
        sum[1] += v[1];
    }
    sum
}

fn mc_chunk<E>(data: &[f64], n: usize, width: usize, seed: u64, stream: u64, count: usize, eval: &E) -> [f64; 4]
where
    E: Fn(&[f64]) -> [f64; 2],
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut s = vec![0.0; width];
    let mut acc = [0.0; 4];
    for _ in 0..count {
        s.iter_mut().for_each(|v| *v = 0.0);
        let mut bits = 0u64;
        for j in 0..n {
            if j % 64 == 0 {
                bits = rng.next_u64();
            }
            let sign = if (bits >> (j % 64)) & 1 == 1 { -1.0 } else { 1.0 };
            for (a, b) in s.iter_mut().zip(&data[j * width..(j + 1) * width]) {
                *a += sign * b;
            }
        }
        let v = eval(&s);
        acc[0] += v[0];
        acc[1] += v[1];
        acc[2] += v[0] * v[0];
        acc[3] += v[1] * v[1];
    }
    acc
}

pub(crate) fn check_moment_exponent(p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(domain(format!("moment exponent must lie in [1, inf), got {p}")));
    }
    Ok(())
}

/// Moment of the rows of `data` (each of length `space.dim()`), without validation.
pub(crate) fn moment_raw(space: &Space, data: &[f64], n: usize, p: f64, cfg: &EnumConfig) -> MomentEstimate {
    let avg = sign_average(data, n, space.dim(), cfg, &|s: &[f64]| [pow_p(space.norm_of(s), p), 0.0]);
    let value = avg.mean[0].powf(1.0 / p);
    let stderr = if avg.mode == MomentMode::Exact || avg.mean[0] == 0.0 {
        0.0
    } else {
        // Delta method for the p-th root.
        value / (p * avg.mean[0]) * avg.var[0].sqrt()
    };
    MomentEstimate { value, mode: avg.mode, samples: avg.samples, stderr }
}

/// `(E ||sum eps_j x_j||^p)^(1/p)`, exact up to `cfg.exact_threshold` vectors.
pub fn rademacher_moment(vectors: &[Vector], p: f64, cfg: &EnumConfig) -> Result<MomentEstimate> {
    check_moment_exponent(p)?;
    cfg.validate()?;
    let space = common_space(vectors)?;
    let data: Vec<f64> = vectors.iter().flat_map(|v| v.coords().iter().copied()).collect();
    Ok(moment_raw(&space, &data, vectors.len(), p, cfg))
}

fn split_witness(space: Space, z: &[f64], n: usize) -> Vec<Vector> {
    let d = space.dim();
    (0..n).map(|j| Vector::new(space, z[j * d..(j + 1) * d].to_vec()).expect("slice has the space dimension")).collect()
}

/// Canonical starts for searches over `n`-tuples in a `dim`-dimensional space.
fn tuple_starts(n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut layout = vec![0.0; n * dim];
    for j in 0..n {
        layout[j * dim + j % dim] = 1.0;
    }
    let mut aligned = vec![0.0; n * dim];
    for j in 0..n {
        aligned[j * dim] = 1.0;
    }
    vec![layout, vec![1.0; n * dim], aligned]
}

/// Best found `moment_p / moment_q` over `n`-tuples: a lower bound for `K_{p,q}`.
pub fn kk_ratio_estimate(space: Space, p: f64, q: f64, n: usize, cfg: &EnumConfig) -> Result<RatioEstimate> {
    check_moment_exponent(p)?;
    check_moment_exponent(q)?;
    cfg.validate()?;
    if n == 0 {
        return Err(domain("need at least one vector"));
    }
    let dim = space.dim();
    let objective = |z: &[f64]| {
        let avg = sign_average(z, n, dim, cfg, &|s: &[f64]| {
            let r = space.norm_of(s);
            [pow_p(r, p), pow_p(r, q)]
        });
        if p == q {
            return 1.0;
        }
        avg.mean[0].powf(1.0 / p) / avg.mean[1].powf(1.0 / q)
    };
    let best = maximize_on_sphere(n * dim, objective, &tuple_starts(n, dim), None, &cfg.ascent());
    Ok(RatioEstimate { value: best.value, witness: split_witness(space, &best.point, n) })
}

/// Best found type-`exponent` (or cotype) ratio over `n`-tuples.
///
/// Type: `(E ||sum eps_j x_j||^2)^(1/2) / (sum ||x_j||^p)^(1/p)`.
/// Cotype: the inverse ratio with `q`, using the max norm when `q` is infinite.
pub fn type_cotype_estimate(kind: TypeCotype, space: Space, exponent: f64, n: usize, cfg: &EnumConfig) -> Result<RatioEstimate> {
    match kind {
        TypeCotype::Type if !(1.0..=2.0).contains(&exponent) => {
            return Err(domain(format!("type exponent must lie in [1, 2], got {exponent}")))
        }
        TypeCotype::Cotype if !(exponent >= 2.0) => return Err(domain(format!("cotype exponent must lie in [2, inf], got {exponent}"))),
        _ => {}
    }
    cfg.validate()?;
    if n == 0 {
        return Err(domain("need at least one vector"));
    }
    let dim = space.dim();
    let objective = |z: &[f64]| {
        let avg = sign_average(z, n, dim, cfg, &|s: &[f64]| {
            let r = space.norm_of(s);
            [r * r, 0.0]
        });
        let moment = avg.mean[0].sqrt();
        let norms: Vec<f64> = (0..n).map(|j| space.norm_of(&z[j * dim..(j + 1) * dim])).collect();
        let side = crate::spaces::lp_norm_slice(&norms, exponent);
        match kind {
            TypeCotype::Type => moment / side,
            TypeCotype::Cotype => {
                if moment == 0.0 {
                    0.0
                } else {
                    side / moment
                }
            }
        }
    };
    let best = maximize_on_sphere(n * dim, objective, &tuple_starts(n, dim), None, &cfg.ascent());
    Ok(RatioEstimate { value: best.value, witness: split_witness(space, &best.point, n) })
}
