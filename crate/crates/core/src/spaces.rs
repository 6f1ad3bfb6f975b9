//! Finite-dimensional normed spaces and their vectors.
//!
//! Three families are provided: the sequence spaces `l^p_n`, the Schatten
//! classes `S_p` of `rows x cols` matrices, and the operator space
//! `L(H, E)` between two Euclidean spaces with the operator norm. Matrices
//! are stored row-major; an operator `H -> E` is a `dim_e x dim_h` matrix.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, structural, LabError, Result};
use crate::linalg::singular_values;

/// A finite-dimensional real normed space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "SpaceRepr")]
pub enum Space {
    Lp {
        #[serde(with = "exponent_serde")]
        p: f64,
        dim: usize,
    },
    Schatten {
        #[serde(with = "exponent_serde")]
        p: f64,
        rows: usize,
        cols: usize,
    },
    HilbertOp {
        dim_h: usize,
        dim_e: usize,
    },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum SpaceRepr {
    Lp {
        #[serde(with = "exponent_serde")]
        p: f64,
        dim: usize,
    },
    Schatten {
        #[serde(with = "exponent_serde")]
        p: f64,
        rows: usize,
        cols: usize,
    },
    HilbertOp {
        dim_h: usize,
        dim_e: usize,
    },
}

impl TryFrom<SpaceRepr> for Space {
    type Error = LabError;

    fn try_from(repr: SpaceRepr) -> Result<Self> {
        match repr {
            SpaceRepr::Lp { p, dim } => Space::lp(p, dim),
            SpaceRepr::Schatten { p, rows, cols } => Space::schatten(p, rows, cols),
            SpaceRepr::HilbertOp { dim_h, dim_e } => Space::hilbert_op(dim_h, dim_e),
        }
    }
}

impl Space {
    pub fn lp(p: f64, dim: usize) -> Result<Self> {
        check_exponent(p)?;
        if dim == 0 {
            return Err(domain("l^p dimension must be positive"));
        }
        Ok(Space::Lp { p, dim })
    }

    pub fn schatten(p: f64, rows: usize, cols: usize) -> Result<Self> {
        check_exponent(p)?;
        if p.is_infinite() {
            return Err(domain("Schatten exponent must be finite"));
        }
        if rows == 0 || cols == 0 {
            return Err(domain("Schatten class dimensions must be positive"));
        }
        Ok(Space::Schatten { p, rows, cols })
    }

    pub fn hilbert_op(dim_h: usize, dim_e: usize) -> Result<Self> {
        if dim_h == 0 || dim_e == 0 {
            return Err(domain("operator space dimensions must be positive"));
        }
        Ok(Space::HilbertOp { dim_h, dim_e })
    }

    /// Number of stored coordinates.
    pub fn dim(&self) -> usize {
        match *self {
            Space::Lp { dim, .. } => dim,
            Space::Schatten { rows, cols, .. } => rows * cols,
            Space::HilbertOp { dim_h, dim_e } => dim_h * dim_e,
        }
    }

    /// Whether the norm comes from an inner product, so that randomized
    /// second moments equal square sums exactly.
    pub fn is_hilbert(&self) -> bool {
        match *self {
            Space::Lp { p, .. } => p == 2.0,
            Space::Schatten { p, .. } => p == 2.0,
            // Column or row operators carry the Euclidean norm.
            Space::HilbertOp { dim_h, dim_e } => dim_h == 1 || dim_e == 1,
        }
    }

    /// Norm of a raw coordinate slice. The slice length must be `self.dim()`.
    pub fn norm_of(&self, coords: &[f64]) -> f64 {
        debug_assert_eq!(coords.len(), self.dim());
        match *self {
            Space::Lp { p, .. } => lp_norm_slice(coords, p),
            Space::Schatten { p, rows, cols } => {
                if p == 2.0 {
                    lp_norm_slice(coords, 2.0)
                } else {
                    lp_norm_slice(&singular_values(coords, rows, cols), p)
                }
            }
            Space::HilbertOp { dim_h, dim_e } => {
                if dim_h == 1 || dim_e == 1 {
                    lp_norm_slice(coords, 2.0)
                } else {
                    singular_values(coords, dim_e, dim_h)[0]
                }
            }
        }
    }

    pub fn norm(&self, v: &Vector) -> Result<f64> {
        if v.space != *self {
            return Err(structural("vector belongs to a different space"));
        }
        Ok(self.norm_of(&v.coords))
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if p.is_nan() || p < 1.0 {
        return Err(domain(format!("exponent {p} is below 1")));
    }
    Ok(())
}

/// `(sum |x_i|^p)^(1/p)`, with `p = inf` giving the maximum.
pub fn lp_norm_slice(x: &[f64], p: f64) -> f64 {
    if p == 1.0 {
        x.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    } else if p.is_infinite() {
        x.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else {
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        scale * x.iter().map(|v| (v.abs() / scale).powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// The Hölder conjugate `p'` with `1/p + 1/p' = 1`.
pub fn dual_exponent(p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    })
}

/// A vector of a [`Space`], stored as a flat coordinate array.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    space: Space,
    coords: Vec<f64>,
}

impl Vector {
    pub fn new(space: Space, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != space.dim() {
            return Err(structural(format!("expected {} coordinates, got {}", space.dim(), coords.len())));
        }
        Ok(Vector { space, coords })
    }

    pub fn zeros(space: Space) -> Self {
        Vector { space, coords: vec![0.0; space.dim()] }
    }

    /// The `i`-th coordinate unit vector.
    pub fn basis(space: Space, i: usize) -> Result<Self> {
        if i >= space.dim() {
            return Err(domain(format!("basis index {i} out of range")));
        }
        let mut v = Vector::zeros(space);
        v.coords[i] = 1.0;
        Ok(v)
    }

    /// Square matrix with the given diagonal (Schatten or operator spaces).
    pub fn diagonal(space: Space, diag: &[f64]) -> Result<Self> {
        let (rows, cols) = match space {
            Space::Schatten { rows, cols, .. } => (rows, cols),
            Space::HilbertOp { dim_h, dim_e } => (dim_e, dim_h),
            Space::Lp { .. } => return Err(structural("diagonal matrix in a sequence space")),
        };
        if diag.len() > rows.min(cols) {
            return Err(structural("diagonal longer than the matrix"));
        }
        let mut v = Vector::zeros(space);
        for (i, d) in diag.iter().enumerate() {
            v.coords[i * cols + i] = *d;
        }
        Ok(v)
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn norm(&self) -> f64 {
        self.space.norm_of(&self.coords)
    }

    pub fn scaled(&self, c: f64) -> Vector {
        Vector { space: self.space, coords: self.coords.iter().map(|x| c * x).collect() }
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Vector, f: impl Fn(f64, f64) -> f64) -> Result<Vector> {
        if self.space != other.space {
            return Err(structural("vectors belong to different spaces"));
        }
        Ok(Vector { space: self.space, coords: self.coords.iter().zip(&other.coords).map(|(a, b)| f(*a, *b)).collect() })
    }

    /// Apply an operator of `L(H, E)` to a vector of `H`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let Space::HilbertOp { dim_h, dim_e } = self.space else {
            return Err(structural("only operator-space vectors can be applied"));
        };
        if x.len() != dim_h {
            return Err(structural("argument has the wrong dimension"));
        }
        Ok((0..dim_e).map(|r| (0..dim_h).map(|c| self.coords[r * dim_h + c] * x[c]).sum()).collect())
    }
}

/// The shared space of a nonempty list of vectors.
pub fn common_space(vectors: &[Vector]) -> Result<Space> {
    let first = vectors.first().ok_or_else(|| domain("empty vector list"))?;
    if vectors.iter().any(|v| v.space != first.space) {
        return Err(structural("vectors belong to different spaces"));
    }
    Ok(first.space)
}

/// Deterministic random vector of norm one.
pub fn random_unit_vector(space: Space, seed: u64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let coords: Vec<f64> = (0..space.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = space.norm_of(&coords);
        if n > 1e-300 {
            let mut v = Vector { space, coords: coords.into_iter().map(|x| x / n).collect() };
            // One refinement pass absorbs the rounding of the first division.
            let n2 = v.norm();
            v.coords.iter_mut().for_each(|x| *x /= n2);
            return v;
        }
    }
}

/// Serde helper writing exponents as numbers or the string `"inf"`.
pub mod exponent_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &f64, s: S) -> Result<S::Ok, S::Error> {
        if p.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*p)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) if t == "inf" || t == "infinity" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("invalid exponent {t:?}"))),
        }
    }
}
