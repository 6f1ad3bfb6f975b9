//! Lower/upper brackets for R-bounds of finite sets of vectors and operators.

use serde::{Deserialize, Serialize};

use crate::error::{domain, structural, Result};
use crate::optimize::maximize_on_sphere;
use crate::rademacher::{check_moment_exponent, pow_p, sign_average, EnumConfig};
use crate::spaces::{common_space, Space, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RBoundMode {
    /// Closed form for Hilbert spaces at exponent 2.
    HilbertExact,
    /// Best value found by the multi-restart ascent.
    Optimized,
    /// Exhaustive evaluation on a sphere grid.
    GridCertified,
}

/// Certified bracket `lower <= R_p <= upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RBoundBracket {
    pub lower: f64,
    pub upper: f64,
    /// Coefficients (scalar case) or stacked arguments (operator case) attaining `lower`.
    pub witness: Vec<f64>,
    /// Member index used at each position of the witness.
    pub selection: Vec<usize>,
    pub mode: RBoundMode,
    pub p: f64,
}

/// Selection layout: `multiplicity` consecutive copies of `0..n`.
fn repeated_selection(n: usize, multiplicity: usize) -> Vec<usize> {
    (0..multiplicity).flat_map(|_| 0..n).collect()
}

/// Maps a witness for `old_n` members onto `new_n >= old_n` members at the
/// same multiplicity, or onto a larger multiplicity, padding with zeros.
///
/// The first `old_n` members of the larger set must be the old members.
pub fn embed_witness(witness: &[f64], old_n: usize, new_n: usize, new_multiplicity: usize) -> Vec<f64> {
    assert!(old_n > 0 && new_n >= old_n && witness.len() % old_n == 0);
    let old_m = witness.len() / old_n;
    assert!(new_multiplicity >= old_m);
    let mut out = vec![0.0; new_n * new_multiplicity];
    for r in 0..old_m {
        for i in 0..old_n {
            out[r * new_n + i] = witness[r * old_n + i];
        }
    }
    out
}

/// Scalar-coefficient ratio `(E||sum eps_k l_k y_k||^p)^(1/p) / (E|sum eps_k l_k|^p)^(1/p)`.
///
/// `rows` holds the selected vectors, one per coefficient.
pub(crate) fn scalar_ratio(space: &Space, rows: &[f64], lambda: &[f64], p: f64, cfg: &EnumConfig, buf: &mut Vec<f64>) -> f64 {
    let d = space.dim();
    let n = lambda.len();
    let w = d + 1;
    buf.clear();
    buf.resize(n * w, 0.0);
    for k in 0..n {
        for i in 0..d {
            buf[k * w + i] = lambda[k] * rows[k * d + i];
        }
        buf[k * w + d] = lambda[k];
    }
    let avg = sign_average(buf, n, w, cfg, &|s: &[f64]| [pow_p(space.norm_of(&s[..d]), p), pow_p(s[d].abs(), p)]);
    if avg.mean[1] == 0.0 {
        return 0.0;
    }
    if p == 2.0 {
        (avg.mean[0] / avg.mean[1]).sqrt()
    } else {
        (avg.mean[0] / avg.mean[1]).powf(1.0 / p)
    }
}

/// Scalar R-bound bracket of `n` row vectors in `space`, without validation.
pub(crate) fn rbound_scalar_raw(
    space: &Space,
    members: &[f64],
    n: usize,
    p: f64,
    multiplicity: usize,
    cfg: &EnumConfig,
    warm: &[Vec<f64>],
) -> RBoundBracket {
    let d = space.dim();
    let norms: Vec<f64> = (0..n).map(|j| space.norm_of(&members[j * d..(j + 1) * d])).collect();
    let upper: f64 = norms.iter().sum();
    let (arg_max, max_norm) =
        norms.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let selection = repeated_selection(n, multiplicity);
    let len = selection.len();
    let unit_at = |i: usize| {
        let mut w = vec![0.0; len];
        w[i] = 1.0;
        w
    };

    if space.is_hilbert() && p == 2.0 {
        return RBoundBracket { lower: max_norm, upper: max_norm, witness: unit_at(arg_max), selection, mode: RBoundMode::HilbertExact, p };
    }
    let floor =
        RBoundBracket { lower: max_norm, upper, witness: unit_at(arg_max), selection: selection.clone(), mode: RBoundMode::Optimized, p };
    let nonzero = norms.iter().filter(|&&v| v > 0.0).count();
    if nonzero <= 1 || len == 1 {
        // A single nonzero member has R-bound equal to its norm.
        return RBoundBracket { upper: max_norm.max(0.0), ..floor };
    }

    let rows: Vec<f64> = selection.iter().flat_map(|&j| members[j * d..(j + 1) * d].iter().copied()).collect();
    let mut starts: Vec<Vec<f64>> = warm.iter().filter(|w| w.len() == len).cloned().collect();
    starts.push(vec![1.0; len]);
    let mut by_norm: Vec<usize> = (0..len).collect();
    by_norm.sort_by(|&a, &b| norms[selection[b]].total_cmp(&norms[selection[a]]));
    starts.extend(by_norm.into_iter().take(4).map(unit_at));
    let objective = |lambda: &[f64]| {
        let mut buf = Vec::new();
        scalar_ratio(space, &rows, lambda, p, cfg, &mut buf)
    };
    let best = maximize_on_sphere(len, objective, &starts, Some(upper), &cfg.ascent());
    if best.value > max_norm {
        RBoundBracket { lower: best.value.min(upper), witness: best.point, ..floor }
    } else {
        floor
    }
}

fn validate_scalar(vectors: &[Vector], p: f64, multiplicity: usize, cfg: &EnumConfig) -> Result<(Space, Vec<f64>)> {
    if vectors.is_empty() {
        return Err(domain("R-bound of an empty set"));
    }
    check_moment_exponent(p)?;
    cfg.validate()?;
    if multiplicity == 0 {
        return Err(domain("multiplicity must be at least 1"));
    }
    let space = common_space(vectors)?;
    let data = vectors.iter().flat_map(|v| v.coords().iter().copied()).collect();
    Ok((space, data))
}

/// Bracket for the R-bound of a set of vectors with scalar coefficients.
///
/// Each member may be selected up to `multiplicity` times. In a Hilbert
/// space at `p = 2` the answer is exact: the largest norm.
pub fn rbound_scalar(vectors: &[Vector], p: f64, multiplicity: usize, cfg: &EnumConfig) -> Result<RBoundBracket> {
    rbound_scalar_warm(vectors, p, multiplicity, cfg, &[])
}

/// [`rbound_scalar`] with extra starting coefficient vectors for the search.
///
/// Use [`embed_witness`] to carry a witness from a subset or a smaller
/// multiplicity; with such a start the lower bound cannot decrease.
pub fn rbound_scalar_warm(vectors: &[Vector], p: f64, multiplicity: usize, cfg: &EnumConfig, warm: &[Vec<f64>]) -> Result<RBoundBracket> {
    let (space, data) = validate_scalar(vectors, p, multiplicity, cfg)?;
    Ok(rbound_scalar_raw(&space, &data, vectors.len(), p, multiplicity, cfg, warm))
}

fn multisets(k: usize, n: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, n: usize, from: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for i in from..k {
            cur.push(i);
            rec(k, n, i, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, n, 0, &mut Vec::with_capacity(n), &mut out);
    out
}

/// Bracket for the R-bound of Hilbert-space operators, over selections of length `n`.
///
/// Every multiset of `n` operators is tried and the argument tuple is
/// optimized for each. Between Hilbert spaces at `p = 2` the R-bound is
/// the largest operator norm, returned exactly.
pub fn rbound_operator(operators: &[Vector], p: f64, n: usize, cfg: &EnumConfig) -> Result<RBoundBracket> {
    if operators.is_empty() {
        return Err(domain("R-bound of an empty set"));
    }
    check_moment_exponent(p)?;
    cfg.validate()?;
    let space = common_space(operators)?;
    let Space::HilbertOp { dim_h, dim_e } = space else {
        return Err(structural(format!("operators must live in a hilbert_op space, got {space:?}")));
    };
    if n < operators.len() {
        return Err(domain(format!("selection length {n} is shorter than the {} operators", operators.len())));
    }
    let norms: Vec<f64> = operators.iter().map(|t| t.norm()).collect();
    let upper: f64 = norms.iter().sum();
    let (arg_max, max_norm) = norms.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, v)| if v > a.1 { (i, v) } else { a });

    let top = top_right_singular_vector(operators[arg_max].coords(), dim_e, dim_h);
    let mut witness = vec![0.0; n * dim_h];
    witness[..dim_h].copy_from_slice(&top);
    let mut selection = vec![arg_max; n];
    if space_pair_is_exact(p) {
        return Ok(RBoundBracket { lower: max_norm, upper: max_norm, witness, selection, mode: RBoundMode::HilbertExact, p });
    }

    let mut lower = max_norm;
    let euclid = |s: &[f64]| s.iter().map(|x| x * x).sum::<f64>().sqrt();
    for sel in multisets(operators.len(), n) {
        let objective = |x: &[f64]| {
            let w = dim_e + dim_h;
            let mut buf = vec![0.0; n * w];
            for (k, &t) in sel.iter().enumerate() {
                let xk = &x[k * dim_h..(k + 1) * dim_h];
                let tx = operators[t].apply(xk).expect("argument has the domain dimension");
                buf[k * w..k * w + dim_e].copy_from_slice(&tx);
                buf[k * w + dim_e..(k + 1) * w].copy_from_slice(xk);
            }
            let avg = sign_average(&buf, n, w, cfg, &|s: &[f64]| [pow_p(euclid(&s[..dim_e]), p), pow_p(euclid(&s[dim_e..]), p)]);
            if avg.mean[1] == 0.0 {
                0.0
            } else {
                (avg.mean[0] / avg.mean[1]).powf(1.0 / p)
            }
        };
        let mut starts = Vec::new();
        let mut aligned = vec![0.0; n * dim_h];
        for k in 0..n {
            let v = top_right_singular_vector(operators[sel[k]].coords(), dim_e, dim_h);
            aligned[k * dim_h..(k + 1) * dim_h].copy_from_slice(&v);
        }
        starts.push(aligned);
        starts.push(vec![1.0; n * dim_h]);
        let best = maximize_on_sphere(n * dim_h, objective, &starts, Some(upper), &cfg.ascent());
        if best.value > lower + 1e-12 {
            lower = best.value.min(upper);
            witness = best.point;
            selection = sel;
        }
        if lower >= upper - 1e-12 {
            break;
        }
    }
    Ok(RBoundBracket { lower, upper, witness, selection, mode: RBoundMode::Optimized, p })
}

fn space_pair_is_exact(p: f64) -> bool {
    // Domain and range are both Hilbert spaces, so only the exponent matters.
    p == 2.0
}

/// Top right singular vector of a row-major `rows x cols` matrix by power iteration on `A^T A`.
fn top_right_singular_vector(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut ata = vec![0.0; cols * cols];
    for r in 0..rows {
        for i in 0..cols {
            for j in 0..cols {
                ata[i * cols + j] += a[r * cols + i] * a[r * cols + j];
            }
        }
    }
    let mut x: Vec<f64> = (0..cols).map(|i| 1.0 + 0.1 * i as f64).collect();
    for _ in 0..500 {
        let y: Vec<f64> = (0..cols).map(|i| (0..cols).map(|j| ata[i * cols + j] * x[j]).sum()).collect();
        let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            break;
        }
        x = y.into_iter().map(|v| v / n).collect();
    }
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.iter().map(|v| v / n).collect()
}

/// Result of [`rbound_certify_grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCertificate {
    /// Largest ratio found on the grid: a true lower bound.
    pub lower: f64,
    /// Grid point attaining `lower`.
    pub point: Vec<f64>,
    /// Bound on `sup - lower` from a Lipschitz estimate of the ratio.
    pub error_bound: f64,
    pub evaluations: usize,
}

/// Exhaustive grid evaluation of the scalar-coefficient ratio for at most three vectors.
///
/// Every point of the unit sphere lies within geodesic distance `grid_step`
/// of some grid point (up to the sign symmetry of the ratio), so the
/// supremum exceeds the returned value by at most the reported error term.
pub fn rbound_certify_grid(vectors: &[Vector], p: f64, grid_step: f64) -> Result<GridCertificate> {
    if vectors.is_empty() {
        return Err(domain("R-bound of an empty set"));
    }
    if vectors.len() > 3 {
        return Err(domain(format!("grid certification supports at most 3 vectors, got {}", vectors.len())));
    }
    if !(grid_step > 0.0 && grid_step < 1.0) {
        return Err(domain("grid step must lie in (0, 1)"));
    }
    check_moment_exponent(p)?;
    let space = common_space(vectors)?;
    let n = vectors.len();
    let rows: Vec<f64> = vectors.iter().flat_map(|v| v.coords().iter().copied()).collect();
    let cfg = EnumConfig::default();
    let mut buf = Vec::new();
    let mut eval = |lambda: &[f64]| scalar_ratio(&space, &rows, lambda, p, &cfg, &mut buf);

    let norms: Vec<f64> = vectors.iter().map(|v| v.norm()).collect();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut evaluations = 0;
    let mut consider = |lambda: Vec<f64>, value: f64| {
        evaluations += 1;
        if value > best.0 {
            best = (value, lambda);
        }
    };
    let h = match n {
        1 => {
            let v = eval(&[1.0]);
            consider(vec![1.0], v);
            0.0
        }
        2 => {
            let m = (std::f64::consts::PI / grid_step).ceil() as usize;
            for k in 0..m {
                let t = std::f64::consts::PI * k as f64 / m as f64;
                let l = [t.cos(), t.sin()];
                let v = eval(&l);
                consider(l.to_vec(), v);
            }
            grid_step / 2.0
        }
        _ => {
            let half_pi = std::f64::consts::FRAC_PI_2;
            let rings = (half_pi / grid_step).ceil() as usize;
            for i in 0..=rings {
                let theta = half_pi * i as f64 / rings as f64;
                let (st, ct) = theta.sin_cos();
                let m = ((2.0 * std::f64::consts::PI * st / grid_step).ceil() as usize).max(1);
                for k in 0..m {
                    let phi = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
                    let l = [st * phi.cos(), st * phi.sin(), ct];
                    let v = eval(&l);
                    consider(l.to_vec(), v);
                }
            }
            grid_step
        }
    };

    // Lipschitz constant of A/B on the sphere: (L_A + G L_B) / b_min with
    // L_A = sqrt(sum ||y||^2), G = sum ||y|| bounding the ratio, and the
    // scalar moment B bounded below by b_min and Lipschitz with L_B.
    let l_a = norms.iter().map(|v| v * v).sum::<f64>().sqrt();
    let g = norms.iter().sum::<f64>();
    let (b_min, l_b) = if p >= 2.0 { (1.0, (n as f64).sqrt()) } else { (std::f64::consts::FRAC_1_SQRT_2, 1.0) };
    let error_bound = (l_a + g * l_b) / b_min * h;
    Ok(GridCertificate { lower: best.0, point: best.1, error_bound, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn basis(space: Space) -> Vec<Vector> {
        (0..space.dim()).map(|i| Vector::basis(space, i).unwrap()).collect()
    }

    fn quick() -> EnumConfig {
        EnumConfig { restarts: 6, ..EnumConfig::default() }
    }

    #[test]
    fn hilbert_short_circuit() {
        let s = Space::lp(2.0, 3).unwrap();
        let vs = vec![
            Vector::new(s, vec![1.0, 2.0, 2.0]).unwrap(),
            Vector::new(s, vec![0.0, 4.0, 0.0]).unwrap(),
            Vector::new(s, vec![-1.0, 0.0, 0.0]).unwrap(),
        ];
        let b = rbound_scalar(&vs, 2.0, 1, &quick()).unwrap();
        assert_eq!(b.mode, RBoundMode::HilbertExact);
        assert_eq!((b.lower, b.upper), (4.0, 4.0));
        assert_eq!(b.witness, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn l1_basis_pair() {
        let b = rbound_scalar(&basis(Space::lp(1.0, 2).unwrap()), 2.0, 1, &quick()).unwrap();
        assert_eq!(b.mode, RBoundMode::Optimized);
        assert!((b.lower - 2f64.sqrt()).abs() < 1e-4, "{b:?}");
        assert_eq!(b.upper, 2.0);
    }

    #[test]
    fn singletons_are_exact() {
        let v = Vector::new(Space::lp(3.0, 2).unwrap(), vec![1.0, -2.0]).unwrap();
        for p in [1.0, 2.0, 3.0] {
            for m in [1, 2, 3] {
                let b = rbound_scalar(std::slice::from_ref(&v), p, m, &quick()).unwrap();
                assert_abs_diff_eq!(b.lower, v.norm(), epsilon = 1e-12);
                assert!(b.lower <= b.upper + 1e-9);
            }
        }
    }

    #[test]
    fn zero_members_do_not_raise_the_bracket() {
        let s = Space::lp(1.0, 2).unwrap();
        let mut vs = basis(s);
        let plain = rbound_scalar(&vs, 2.0, 1, &quick()).unwrap();
        vs.push(Vector::zeros(s));
        let padded = rbound_scalar(&vs, 2.0, 1, &quick()).unwrap();
        assert_eq!(padded.upper, plain.upper);
        assert!(padded.lower <= plain.upper);
        assert!((padded.lower - plain.lower).abs() < 1e-6);
    }

    #[test]
    fn empty_set_is_a_domain_error() {
        assert!(matches!(rbound_scalar(&[], 2.0, 1, &quick()), Err(crate::LabError::Domain(_))));
    }

    #[test]
    fn witness_embedding_layout() {
        assert_eq!(embed_witness(&[1.0, 2.0, 3.0, 4.0], 2, 3, 2), vec![1.0, 2.0, 0.0, 3.0, 4.0, 0.0]);
        assert_eq!(embed_witness(&[1.0, 2.0], 2, 2, 2), vec![1.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_operators() {
        let s = Space::hilbert_op(2, 2).unwrap();
        let id = Vector::diagonal(s, &[1.0, 1.0]).unwrap();
        for p in [1.0, 3.0] {
            let b = rbound_operator(&[id.clone(), id.clone()], p, 2, &quick()).unwrap();
            assert_abs_diff_eq!(b.lower, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn diagonal_projections() {
        let s = Space::hilbert_op(2, 2).unwrap();
        let ops = [Vector::diagonal(s, &[1.0, 0.0]).unwrap(), Vector::diagonal(s, &[0.0, 1.0]).unwrap()];
        let b = rbound_operator(&ops, 3.0, 2, &quick()).unwrap();
        assert!(b.lower >= 1.0 - 1e-12);
        assert_eq!(b.upper, 2.0);
        let exact = rbound_operator(&ops, 2.0, 2, &quick()).unwrap();
        assert_eq!(exact.mode, RBoundMode::HilbertExact);
        assert_eq!(exact.lower, 1.0);
    }

    #[test]
    fn singleton_operator() {
        let s = Space::hilbert_op(2, 3).unwrap();
        let t = Vector::new(s, vec![1.0, 2.0, 0.0, 1.0, -1.0, 0.5]).unwrap();
        let b = rbound_operator(std::slice::from_ref(&t), 1.5, 1, &quick()).unwrap();
        assert_abs_diff_eq!(b.lower, t.norm(), epsilon = 1e-9);
        assert!(matches!(
            rbound_operator(&[Vector::basis(Space::lp(2.0, 2).unwrap(), 0).unwrap()], 2.0, 1, &quick()),
            Err(crate::LabError::Structural(_))
        ));
    }

    #[test]
    fn grid_certificate_l1_pair() {
        let c = rbound_certify_grid(&basis(Space::lp(1.0, 2).unwrap()), 2.0, 1e-3).unwrap();
        assert!((c.lower - 2f64.sqrt()).abs() < 1e-2);
        assert!(c.lower <= 2f64.sqrt() + 1e-12);
        assert!(c.lower + c.error_bound >= 2f64.sqrt());
    }

    #[test]
    fn grid_certificate_singleton_and_limits() {
        let v = Vector::new(Space::lp(1.0, 2).unwrap(), vec![0.5, -1.0]).unwrap();
        let c = rbound_certify_grid(std::slice::from_ref(&v), 3.0, 0.1).unwrap();
        assert_eq!(c.lower, 1.5);
        assert_eq!(c.error_bound, 0.0);
        assert!(rbound_certify_grid(&basis(Space::lp(1.0, 4).unwrap()), 2.0, 0.1).is_err());
    }

    #[test]
    fn grid_certificate_euclidean_pair() {
        let s = Space::lp(2.0, 2).unwrap();
        let vs = [Vector::new(s, vec![0.3, 0.4]).unwrap(), Vector::new(s, vec![1.0, 1.0]).unwrap()];
        let c = rbound_certify_grid(&vs, 2.0, 1e-3).unwrap();
        assert!((c.lower - 2f64.sqrt()).abs() < 1e-2);
    }

    #[test]
    fn grid_certificate_triple_on_the_sphere() {
        let s = Space::lp(1.0, 3).unwrap();
        let c = rbound_certify_grid(&basis(s), 2.0, 0.02).unwrap();
        assert!(c.lower <= 3f64.sqrt() + 1e-12);
        assert!(c.lower + c.error_bound >= 3f64.sqrt());
        assert!((c.lower - 3f64.sqrt()).abs() < 1e-2);
    }

    fn vector_set() -> impl Strategy<Value = (usize, Vec<Vec<f64>>)> {
        (1usize..4, 1usize..4)
            .prop_flat_map(|(dim, n)| (Just(dim), proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, dim), n)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn bracket_invariants((dim, rows) in vector_set(), p in prop::sample::select(vec![1.0, 1.5, 2.0, 3.0]), q in prop::sample::select(vec![1.0, 2.0, f64::INFINITY])) {
            let space = Space::lp(q, dim).unwrap();
            let vs: Vec<Vector> = rows.into_iter().map(|r| Vector::new(space, r).unwrap()).collect();
            let b = rbound_scalar(&vs, p, 1, &EnumConfig { restarts: 3, ..EnumConfig::default() }).unwrap();
            let max = vs.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let sum: f64 = vs.iter().map(|v| v.norm()).sum();
            prop_assert!(b.lower <= b.upper + 1e-9);
            prop_assert!(b.lower >= max - 1e-9);
            if b.mode == RBoundMode::Optimized {
                prop_assert!((b.upper - sum).abs() <= 1e-12 * sum.max(1.0));
            }
        }

        #[test]
        fn inclusion_monotone_under_warm_start((dim, rows) in vector_set(), extra_seed in 0u64..1000) {
            let space = Space::lp(1.0, dim).unwrap();
            let vs: Vec<Vector> = rows.into_iter().map(|r| Vector::new(space, r).unwrap()).collect();
            let cfg = EnumConfig { restarts: 2, ..EnumConfig::default() };
            let small = rbound_scalar(&vs, 2.0, 1, &cfg).unwrap();
            let mut bigger = vs.clone();
            bigger.push(crate::spaces::random_unit_vector(space, extra_seed));
            let warm = embed_witness(&small.witness, vs.len(), bigger.len(), 1);
            let big = rbound_scalar_warm(&bigger, 2.0, 1, &cfg, &[warm]).unwrap();
            prop_assert!(small.lower <= big.lower + 1e-9);
        }

        #[test]
        fn multiplicity_monotone_under_warm_start((dim, rows) in vector_set()) {
            let space = Space::lp(f64::INFINITY, dim).unwrap();
            let vs: Vec<Vector> = rows.into_iter().map(|r| Vector::new(space, r).unwrap()).collect();
            let cfg = EnumConfig { restarts: 2, ..EnumConfig::default() };
            let m1 = rbound_scalar(&vs, 3.0, 1, &cfg).unwrap();
            let warm = embed_witness(&m1.witness, vs.len(), vs.len(), 2);
            let m2 = rbound_scalar_warm(&vs, 3.0, 2, &cfg, &[warm]).unwrap();
            prop_assert!(m1.lower <= m2.lower + 1e-9);
        }

        #[test]
        fn hilbert_one_step_and_sumset(
            rows in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 3), 2..6),
            shift in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 3), 1..4),
        ) {
            let space = Space::lp(2.0, 3).unwrap();
            let vs: Vec<Vector> = rows.into_iter().map(|r| Vector::new(space, r).unwrap()).collect();
            let cfg = EnumConfig::default();
            let r = |set: &[Vector]| rbound_scalar(set, 2.0, 1, &cfg).unwrap().lower;
            let j = vs.len();
            let step = vs[j - 1].sub(&vs[j - 2]).unwrap().norm();
            prop_assert!(r(&vs) <= r(&vs[..j - 1]) + step);
            let ss: Vec<Vector> = shift.into_iter().map(|c| Vector::new(space, c).unwrap()).collect();
            let sumset: Vec<Vector> = vs.iter().flat_map(|a| ss.iter().map(move |b| a.add(b).unwrap())).collect();
            prop_assert!(r(&sumset) <= r(&vs) + r(&ss));
        }
    }
}
