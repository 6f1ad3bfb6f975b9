//! Doob and Rademacher maximal functions over filtrations, L^p norms and
//! RMF ratios, plus the telescoping and product-space constructions.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{domain, structural, Result};
use crate::filtration::{conditional_expectation, dyadic_filtration_on, AtomicMeasureSpace, Filtration, ProductBase, StepFunction};
use crate::rademacher::{check_moment_exponent, EnumConfig};
use crate::rbound::{rbound_scalar_raw, RBoundBracket, RBoundMode};
use crate::spaces::{common_space, Space, Vector};

/// Exponents whose L^p norms every report carries.
pub const REPORT_EXPONENTS: [f64; 3] = [1.0, 2.0, f64::INFINITY];

/// Settings for Rademacher maximal functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaximalConfig {
    pub enumeration: EnumConfig,
    /// Exponent of the R-bound.
    pub p: f64,
    pub multiplicity: usize,
    /// Use only levels `0..=N`.
    pub truncation: Option<usize>,
}

impl Default for MaximalConfig {
    fn default() -> Self {
        MaximalConfig { enumeration: EnumConfig::default(), p: 2.0, multiplicity: 1, truncation: None }
    }
}

impl MaximalConfig {
    pub fn with_enumeration(enumeration: EnumConfig) -> Self {
        MaximalConfig { enumeration, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaximalReport {
    /// Value at every atom (the lower bracket for Rademacher reports).
    pub pointwise: Vec<f64>,
    /// Upper bracket at every atom; equal to `pointwise` when exact.
    pub upper: Vec<f64>,
    /// `(p, norm)` for each of [`REPORT_EXPONENTS`].
    pub lp_norms: Vec<(f64, f64)>,
    /// R-bound mode, `None` for Doob reports.
    pub mode: Option<RBoundMode>,
    pub truncation: Option<usize>,
}

impl MaximalReport {
    fn new(base: &AtomicMeasureSpace, pointwise: Vec<f64>, upper: Vec<f64>, mode: Option<RBoundMode>, truncation: Option<usize>) -> Self {
        let lp_norms = REPORT_EXPONENTS.iter().map(|&p| (p, lp_norm(&pointwise, p, base))).collect();
        MaximalReport { pointwise, upper, lp_norms, mode, truncation }
    }
}

/// Mass-weighted `(sum m_a |g_a|^p)^(1/p)`; the largest `|g_a|` when `p` is infinite.
pub fn lp_norm(g: &[f64], p: f64, base: &AtomicMeasureSpace) -> f64 {
    assert_eq!(g.len(), base.len(), "one value per atom");
    if p.is_infinite() {
        return g.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    g.iter().zip(base.masses()).map(|(v, m)| m * v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

/// L^p norm of `||f||`.
pub fn lp_norm_of(f: &StepFunction, p: f64) -> f64 {
    lp_norm(&f.norms(), p, f.base())
}

fn check_bases(f: &StepFunction, filt: &Filtration) -> Result<()> {
    if f.base() != filt.base() {
        return Err(structural("function and filtration live on different bases"));
    }
    Ok(())
}

fn level_range(filt: &Filtration, truncation: Option<usize>) -> Result<usize> {
    match truncation {
        None => Ok(filt.len()),
        Some(n) if n < filt.len() => Ok(n + 1),
        Some(n) => Err(domain(format!("truncation {n} exceeds the last level {}", filt.len() - 1))),
    }
}

/// `E_j f` for the first `levels` levels.
pub fn level_averages(f: &StepFunction, filt: &Filtration, levels: usize) -> Result<Vec<StepFunction>> {
    check_bases(f, filt)?;
    filt.levels()[..levels].iter().map(|p| conditional_expectation(f, p)).collect()
}

/// Doob maximal function: the largest `||E_j f||` at every atom.
pub fn doob_maximal(f: &StepFunction, filt: &Filtration) -> Result<MaximalReport> {
    let averages = level_averages(f, filt, filt.len())?;
    let mut pointwise = vec![0.0f64; f.len()];
    for e in &averages {
        for (m, n) in pointwise.iter_mut().zip(e.norms()) {
            *m = m.max(n);
        }
    }
    Ok(MaximalReport::new(f.base(), pointwise.clone(), pointwise, None, None))
}

/// Duplicate-free, zero-free, sorted rows: the canonical form of a finite set.
fn canonical_set(rows: &[f64], dim: usize) -> Vec<f64> {
    let mut set: Vec<&[f64]> = rows.chunks(dim).filter(|r| r.iter().any(|v| *v != 0.0)).collect();
    set.sort_by(|a, b| a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    set.dedup();
    set.concat()
}

fn zero_bracket(space: &Space, p: f64) -> RBoundBracket {
    RBoundBracket {
        lower: 0.0,
        upper: 0.0,
        witness: Vec::new(),
        selection: Vec::new(),
        mode: if space.is_hilbert() && p == 2.0 { RBoundMode::HilbertExact } else { RBoundMode::Optimized },
        p,
    }
}

/// R-bound brackets of many finite sets, each given as flattened rows.
///
/// Sets are reduced to a canonical form first, so repeated sets (common
/// across atoms of one block) are solved once.
pub fn rbound_of_sets(space: &Space, sets: &[Vec<f64>], p: f64, multiplicity: usize, cfg: &EnumConfig) -> Vec<RBoundBracket> {
    let d = space.dim();
    let canonical: Vec<Vec<f64>> = sets.iter().map(|s| canonical_set(s, d)).collect();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    let slots: Vec<usize> = canonical
        .iter()
        .map(|c| {
            let key: Vec<u64> = c.iter().map(|v| v.to_bits()).collect();
            *index.entry(key).or_insert_with(|| {
                distinct.push(c);
                distinct.len() - 1
            })
        })
        .collect();
    let solved: Vec<RBoundBracket> = distinct
        .par_iter()
        .map(|rows| {
            if rows.is_empty() {
                zero_bracket(space, p)
            } else {
                rbound_scalar_raw(space, rows, rows.len() / d, p, multiplicity, cfg, &[])
            }
        })
        .collect();
    slots.into_iter().map(|s| solved[s].clone()).collect()
}

/// The set `{E_j f(atom)}` over the used levels, flattened.
fn chain_at(averages: &[StepFunction], atom: usize) -> Vec<f64> {
    averages.iter().flat_map(|e| e.value(atom).iter().copied()).collect()
}

/// Rademacher maximal function: the R-bound of `{E_j f(xi)}` at every atom.
pub fn rademacher_maximal(f: &StepFunction, filt: &Filtration, cfg: &MaximalConfig) -> Result<MaximalReport> {
    let atoms: Vec<usize> = (0..f.len()).collect();
    let brackets = rademacher_maximal_at(f, filt, &atoms, cfg)?;
    let mode = brackets.first().map(|b| b.mode);
    let pointwise = brackets.iter().map(|b| b.lower).collect();
    let upper = brackets.iter().map(|b| b.upper).collect();
    Ok(MaximalReport::new(f.base(), pointwise, upper, mode, cfg.truncation))
}

/// R-bound brackets of `{E_j f(xi)}` at the given atoms only.
pub fn rademacher_maximal_at(f: &StepFunction, filt: &Filtration, atoms: &[usize], cfg: &MaximalConfig) -> Result<Vec<RBoundBracket>> {
    check_moment_exponent(cfg.p)?;
    cfg.enumeration.validate()?;
    if cfg.multiplicity == 0 {
        return Err(domain("multiplicity must be at least 1"));
    }
    if let Some(a) = atoms.iter().find(|&&a| a >= f.len()) {
        return Err(structural(format!("atom {a} out of range")));
    }
    let levels = level_range(filt, cfg.truncation)?;
    let averages = level_averages(f, filt, levels)?;
    let sets: Vec<Vec<f64>> = atoms.iter().map(|&a| chain_at(&averages, a)).collect();
    Ok(rbound_of_sets(&f.space(), &sets, cfg.p, cfg.multiplicity, &cfg.enumeration))
}

/// `||M_R f||_p / ||f||_p`: a lower bound for the RMF_p constant of this filtration.
pub fn rmf_ratio(f: &StepFunction, filt: &Filtration, p: f64, cfg: &MaximalConfig) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(domain(format!("norm exponent must be at least 1, got {p}")));
    }
    let denom = lp_norm_of(f, p);
    if denom == 0.0 {
        return Err(domain("rmf ratio of the zero function"));
    }
    let report = rademacher_maximal(f, filt, cfg)?;
    Ok(lp_norm(&report.pointwise, p, f.base()) / denom)
}

/// The function of the L-infinity counterexample together with its dyadic filtration.
#[derive(Debug, Clone, PartialEq)]
pub struct Telescoping {
    pub function: StepFunction,
    pub filtration: Filtration,
    /// `I_j` consists of the first `interval_atoms[j - 1]` atoms.
    pub interval_atoms: Vec<usize>,
}

/// Builds `f` on `2^(N-1)` atoms with average `T_j` over `I_j = [0, 2^(j-N))`.
///
/// `f = S_1 = T_1` on `I_1` and `f = S_j = 2 T_j - T_(j-1)` on `I_j \ I_(j-1)`.
pub fn telescoping_function(t: &[Vector]) -> Result<Telescoping> {
    if t.is_empty() {
        return Err(domain("telescoping construction needs at least one vector"));
    }
    let space = common_space(t)?;
    let n = t.len();
    let k = (n - 1) as u32;
    let (base, filtration) = dyadic_filtration_on(k)?;
    let d = space.dim();
    let mut values = vec![0.0; base.len() * d];
    values[..d].copy_from_slice(t[0].coords());
    for j in 2..=n {
        let s = t[j - 1].scaled(2.0).sub(&t[j - 2])?;
        for a in (1usize << (j - 2))..(1usize << (j - 1)) {
            values[a * d..(a + 1) * d].copy_from_slice(s.coords());
        }
    }
    let function = StepFunction::from_flat(&base, space, values)?;
    let interval_atoms = (1..=n).map(|j| 1usize << (j - 1)).collect();
    Ok(Telescoping { function, filtration, interval_atoms })
}

/// Both sides of the fiberwise inequality for scalar functions on a product.
#[derive(Debug, Clone, PartialEq)]
pub struct HeredityReport {
    /// Rademacher maximal function in `L^p(inner)` at each outer atom.
    pub lhs: Vec<f64>,
    /// `(sum_eta nu_eta M~(xi, eta)^p)^(1/p)` at each outer atom.
    pub rhs: Vec<f64>,
    /// Largest `lhs - rhs` (nonpositive when the inequality holds).
    pub max_violation: f64,
}

/// Checks `M_R f(xi) <= (sum_eta nu_eta M~ f(xi, eta)^p)^(1/p)` at every outer atom.
///
/// `f` is real-valued on `base.product`; `filt` lives on `base.outer` and
/// acts on the first variable. The left side treats `f(xi, .)` as a vector
/// of the weighted sequence space `L^p(inner)`.
pub fn fubini_heredity_check(f: &StepFunction, base: &ProductBase, filt: &Filtration, p: f64, cfg: &EnumConfig) -> Result<HeredityReport> {
    if f.base() != &base.product {
        return Err(structural("function does not live on the product base"));
    }
    if filt.base() != &base.outer {
        return Err(structural("filtration does not live on the outer base"));
    }
    if f.space().dim() != 1 {
        return Err(structural("fiberwise check needs a real-valued function"));
    }
    check_moment_exponent(p)?;
    let lifted = filt.lift_product(&base.inner);
    let averages = level_averages(f, &lifted, lifted.len())?;
    let m = base.inner.len();
    let weights: Vec<f64> = base.inner.masses().iter().map(|nu| nu.powf(1.0 / p)).collect();
    let fiber_space = Space::lp(p, m)?;
    let scalar_space = Space::lp(p, 1)?;

    let mut fiber_sets = Vec::with_capacity(base.outer.len());
    let mut scalar_sets = Vec::with_capacity(base.outer.len() * m);
    for xi in 0..base.outer.len() {
        let mut rows = Vec::with_capacity(averages.len() * m);
        for e in &averages {
            for eta in 0..m {
                rows.push(weights[eta] * e.value(base.index(xi, eta))[0]);
            }
        }
        fiber_sets.push(rows);
        for eta in 0..m {
            scalar_sets.push(averages.iter().map(|e| e.value(base.index(xi, eta))[0]).collect());
        }
    }
    let lhs: Vec<f64> = rbound_of_sets(&fiber_space, &fiber_sets, p, 1, cfg).into_iter().map(|b| b.lower).collect();
    let fiber_max: Vec<f64> = rbound_of_sets(&scalar_space, &scalar_sets, p, 1, cfg).into_iter().map(|b| b.lower).collect();
    let rhs: Vec<f64> = (0..base.outer.len())
        .map(|xi| (0..m).map(|eta| base.inner.mass(eta) * fiber_max[xi * m + eta].powf(p)).sum::<f64>().powf(1.0 / p))
        .collect();
    let max_violation = lhs.iter().zip(&rhs).map(|(l, r)| l - r).fold(f64::NEG_INFINITY, f64::max);
    Ok(HeredityReport { lhs, rhs, max_violation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtration::{make_dyadic_filtration, random_haar_filtration, HaarKind, Partition};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn quick() -> MaximalConfig {
        MaximalConfig::with_enumeration(EnumConfig { restarts: 4, ..EnumConfig::default() })
    }

    #[test]
    fn lp_norm_examples() {
        let half = AtomicMeasureSpace::uniform(2).unwrap();
        assert_eq!(lp_norm(&[1.0, 0.0], 1.0, &half), 0.5);
        assert_eq!(lp_norm(&[3.0, 3.0], 2.0, &half), 3.0);
        let b = AtomicMeasureSpace::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(lp_norm(&[1.0, 1.0], 2.0, &b), 1.0);
        assert_eq!(lp_norm(&[1.0, -4.0], f64::INFINITY, &b), 4.0);
    }

    #[test]
    fn doob_two_atoms() {
        let base = AtomicMeasureSpace::uniform(2).unwrap();
        let filt = Filtration::new(vec![Partition::trivial(&base), Partition::discrete(&base)]).unwrap();
        let f = StepFunction::scalar(&base, &[2.0, 0.0]).unwrap();
        assert_eq!(doob_maximal(&f, &filt).unwrap().pointwise, vec![2.0, 1.0]);
    }

    #[test]
    fn constants_have_flat_maximal_functions() {
        let (base, filt) = make_dyadic_filtration(3).unwrap();
        let v = Vector::new(Space::lp(1.0, 2).unwrap(), vec![0.5, -1.5]).unwrap();
        let f = StepFunction::constant(&base, &v);
        for r in [doob_maximal(&f, &filt).unwrap(), rademacher_maximal(&f, &filt, &quick()).unwrap()] {
            assert!(r.pointwise.iter().all(|x| *x == 2.0));
        }
        assert_abs_diff_eq!(rmf_ratio(&f, &filt, 2.0, &quick()).unwrap(), 1.0, epsilon = 1e-15);
        let zero = StepFunction::zeros(&base, v.space());
        assert!(matches!(rmf_ratio(&zero, &filt, 2.0, &quick()), Err(crate::LabError::Domain(_))));
    }

    #[test]
    fn hilbert_range_collapses_to_doob() {
        let (base, filt) = make_dyadic_filtration(4).unwrap();
        let space = Space::lp(2.0, 3).unwrap();
        let values: Vec<Vector> = (0..16).map(|s| crate::spaces::random_unit_vector(space, s).scaled(1.0 + s as f64 / 4.0)).collect();
        let f = StepFunction::new(&base, &values).unwrap();
        let doob = doob_maximal(&f, &filt).unwrap();
        let rad = rademacher_maximal(&f, &filt, &quick()).unwrap();
        assert_eq!(rad.mode, Some(RBoundMode::HilbertExact));
        assert_eq!(doob.pointwise, rad.pointwise);
    }

    #[test]
    fn telescoping_averages() {
        let space = Space::lp(1.0, 4).unwrap();
        let t: Vec<Vector> = (0..4).map(|i| Vector::basis(space, i).unwrap()).collect();
        let tel = telescoping_function(&t).unwrap();
        assert_eq!(tel.function.len(), 8);
        for (j, &len) in tel.interval_atoms.iter().enumerate() {
            let avg = tel.function.integral_over(0..len);
            let mass = len as f64 / 8.0;
            for (a, b) in avg.iter().zip(t[j].coords()) {
                assert_abs_diff_eq!(a / mass, *b, epsilon = 1e-12);
            }
        }
        assert!(tel.function.norms().iter().all(|n| *n <= 3.0));
        let single = telescoping_function(&t[..1]).unwrap();
        assert_eq!(single.function.values(), t[0].coords());
        assert!(telescoping_function(&[]).is_err());
    }

    #[test]
    fn telescoping_l1_basis_is_large_on_the_first_interval() {
        let n = 4;
        let space = Space::lp(1.0, n).unwrap();
        let t: Vec<Vector> = (0..n).map(|i| Vector::basis(space, i).unwrap()).collect();
        let tel = telescoping_function(&t).unwrap();
        let at = rademacher_maximal_at(&tel.function, &tel.filtration, &[0], &quick()).unwrap();
        assert!(at[0].lower >= 2.0 - 1e-2, "{:?}", at[0]);
        let ratio = rmf_ratio(&tel.function, &tel.filtration, f64::INFINITY, &quick()).unwrap();
        assert!(ratio >= 2.0 / 3.0 - 1e-9);
    }

    #[test]
    fn truncation_range_is_checked() {
        let (base, filt) = make_dyadic_filtration(2).unwrap();
        let f = StepFunction::scalar(&base, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let cfg = MaximalConfig { truncation: Some(3), ..quick() };
        assert!(rademacher_maximal(&f, &filt, &cfg).is_err());
        let cfg = MaximalConfig { truncation: Some(0), ..quick() };
        let r = rademacher_maximal(&f, &filt, &cfg).unwrap();
        assert!(r.pointwise.iter().all(|v| *v == 2.5));
    }

    #[test]
    fn heredity_with_one_inner_atom_is_an_equality() {
        let (outer, filt) = make_dyadic_filtration(3).unwrap();
        let inner = AtomicMeasureSpace::uniform(1).unwrap();
        let pb = ProductBase::new(&outer, &inner);
        let f = StepFunction::scalar(&pb.product, &[1.0, -2.0, 0.5, 3.0, 0.0, 1.0, -1.0, 2.0]).unwrap();
        for p in [1.5, 2.0, 3.0] {
            let r = fubini_heredity_check(&f, &pb, &filt, p, &EnumConfig { restarts: 4, ..EnumConfig::default() }).unwrap();
            for (l, rr) in r.lhs.iter().zip(&r.rhs) {
                assert_abs_diff_eq!(l, rr, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn heredity_for_functions_constant_in_the_fiber() {
        let (outer, filt) = make_dyadic_filtration(2).unwrap();
        let inner = AtomicMeasureSpace::uniform(3).unwrap();
        let pb = ProductBase::new(&outer, &inner);
        let vals: Vec<f64> = [2.0, -1.0, 0.5, 1.0].iter().flat_map(|v| [*v; 3]).collect();
        let f = StepFunction::scalar(&pb.product, &vals).unwrap();
        let r = fubini_heredity_check(&f, &pb, &filt, 3.0, &EnumConfig { restarts: 4, ..EnumConfig::default() }).unwrap();
        for (l, rr) in r.lhs.iter().zip(&r.rhs) {
            assert_abs_diff_eq!(l, rr, epsilon = 1e-9);
        }
    }

    #[test]
    fn heredity_on_random_functions() {
        let (outer, filt) = make_dyadic_filtration(3).unwrap();
        let inner = AtomicMeasureSpace::uniform(4).unwrap();
        let pb = ProductBase::new(&outer, &inner);
        let vals: Vec<f64> = (0..32).map(|i| ((i * 7919 % 23) as f64 - 11.0) / 5.0).collect();
        let f = StepFunction::scalar(&pb.product, &vals).unwrap();
        let r = fubini_heredity_check(&f, &pb, &filt, 2.0, &EnumConfig::default()).unwrap();
        assert!(r.max_violation <= 1e-6, "{r:?}");
    }

    fn haar_instance() -> impl Strategy<Value = (u64, Vec<f64>)> {
        (0u64..5000, proptest::collection::vec(-3.0f64..3.0, 32))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn doob_below_rademacher((seed, vals) in haar_instance()) {
            let base = AtomicMeasureSpace::dyadic_grid(4).unwrap();
            let filt = random_haar_filtration(&base, 5, HaarKind::General, seed).unwrap();
            let f = StepFunction::from_flat(&base, Space::lp(1.0, 2).unwrap(), vals).unwrap();
            let doob = doob_maximal(&f, &filt).unwrap();
            let rad = rademacher_maximal(&f, &filt, &MaximalConfig::with_enumeration(EnumConfig { restarts: 2, ..EnumConfig::default() })).unwrap();
            for a in 0..16 {
                prop_assert!(doob.pointwise[a] <= rad.pointwise[a] + 1e-9);
                prop_assert!(doob.pointwise[a] <= rad.upper[a] + 1e-9);
            }
        }

        #[test]
        fn truncation_and_subfiltration_monotone((seed, vals) in haar_instance()) {
            let base = AtomicMeasureSpace::dyadic_grid(5).unwrap();
            let filt = random_haar_filtration(&base, 6, HaarKind::General, seed).unwrap();
            let f = StepFunction::from_flat(&base, Space::lp(2.0, 1).unwrap(), vals).unwrap();
            let mut prev = vec![0.0; 32];
            for n in 0..filt.len() {
                let cfg = MaximalConfig { truncation: Some(n), ..MaximalConfig::default() };
                let r = rademacher_maximal(&f, &filt, &cfg).unwrap();
                for a in 0..32 {
                    prop_assert!(prev[a] <= r.pointwise[a]);
                }
                prev = r.pointwise;
            }
            let full = rademacher_maximal(&f, &filt, &MaximalConfig::default()).unwrap();
            prop_assert_eq!(&prev, &full.pointwise);
            let sub = filt.subfiltration(&[0, 2, 3, 6]).unwrap();
            for p in [1.0, 2.0, f64::INFINITY] {
                let all = rmf_ratio(&f, &filt, p, &MaximalConfig::default()).unwrap();
                let part = rmf_ratio(&f, &sub, p, &MaximalConfig::default()).unwrap();
                prop_assert!(part <= all + 1e-9);
            }
        }
    }
}
