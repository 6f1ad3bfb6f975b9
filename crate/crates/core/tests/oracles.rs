//! Cross-checks against direct computations written independently of the library.
#![allow(clippy::needless_range_loop)]

use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmflab::*;

fn l(p: f64, d: usize) -> Space {
    Space::lp(p, d).unwrap()
}

fn random_vectors(space: Space, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vector> {
    (0..n).map(|_| Vector::new(space, (0..space.dim()).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()).collect()
}

fn lp(x: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    } else {
        x.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// `(2^-n sum_eps ||sum eps_j x_j||^p)^(1/p)` over all sign patterns.
fn brute_moment(xs: &[Vector], r: f64, p: f64) -> f64 {
    let n = xs.len();
    let d = xs[0].coords().len();
    let mut total = 0.0;
    for mask in 0..(1u32 << n) {
        let mut s = vec![0.0; d];
        for (j, x) in xs.iter().enumerate() {
            let e = if mask >> j & 1 == 1 { 1.0 } else { -1.0 };
            for (si, xi) in s.iter_mut().zip(x.coords()) {
                *si += e * xi;
            }
        }
        total += lp(&s, r).powf(p);
    }
    (total / (1u64 << n) as f64).powf(1.0 / p)
}

#[test]
fn moments_match_sign_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (r, p, n) in [(1.0, 1.0, 5), (3.0, 2.0, 7), (f64::INFINITY, 1.5, 9), (2.0, 4.0, 12)] {
        let xs = random_vectors(l(r, 3), n, &mut rng);
        let m = rademacher_moment(&xs, p, &EnumConfig::default()).unwrap();
        assert_eq!(m.mode, MomentMode::Exact);
        assert_abs_diff_eq!(m.value, brute_moment(&xs, r, p), epsilon = 1e-10 * (1.0 + m.value));
    }
}

#[test]
fn l1_basis_rbound_equals_root_n() {
    for n in 2..=4 {
        let xs: Vec<Vector> = (0..n).map(|i| Vector::basis(l(1.0, n), i).unwrap()).collect();
        let b = rbound_scalar(&xs, 2.0, 1, &EnumConfig::default()).unwrap();
        let root = (n as f64).sqrt();
        assert!(b.lower >= root - 1e-3 && b.lower <= root + 1e-9, "n = {n}: {b:?}");
        assert!(b.upper >= b.lower);
    }
    // Independent scan: the ratio at (cos t, sin t) is |cos t| + |sin t|.
    let scan = (0..=10_000).map(|i| {
        let t = i as f64 * std::f64::consts::FRAC_PI_2 / 10_000.0;
        t.cos().abs() + t.sin().abs()
    });
    let best = scan.fold(0.0f64, f64::max);
    let xs = [Vector::basis(l(1.0, 2), 0).unwrap(), Vector::basis(l(1.0, 2), 1).unwrap()];
    let cert = rbound_certify_grid(&xs, 2.0, 1e-3).unwrap();
    assert_abs_diff_eq!(cert.lower, best, epsilon = 1e-6);
    assert!(cert.lower + cert.error_bound >= 2f64.sqrt());
}

/// Block averages computed by grouping labels directly.
fn naive_average(values: &[f64], d: usize, masses: &[f64], labels: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for a in 0..masses.len() {
        let (mut s, mut m) = (vec![0.0; d], 0.0);
        for b in 0..masses.len() {
            if labels[b] == labels[a] {
                m += masses[b];
                for i in 0..d {
                    s[i] += masses[b] * values[b * d + i];
                }
            }
        }
        for i in 0..d {
            out[a * d + i] = s[i] / m;
        }
    }
    out
}

#[test]
fn doob_maximal_matches_naive_averages() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..10 {
        let base = AtomicMeasureSpace::dyadic_grid(4).unwrap();
        let filt = random_haar_filtration(&base, 7, HaarKind::Dyadic, seed).unwrap();
        let values: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = StepFunction::from_flat(&base, l(3.0, 2), values.clone()).unwrap();
        let doob = doob_maximal(&f, &filt).unwrap();
        let mut expect = [0.0f64; 16];
        for part in filt.levels() {
            let avg = naive_average(&values, 2, base.masses(), part.labels());
            for a in 0..16 {
                expect[a] = expect[a].max(lp(&avg[2 * a..2 * a + 2], 3.0));
            }
        }
        for a in 0..16 {
            assert_abs_diff_eq!(doob.pointwise[a], expect[a], epsilon = 1e-12);
        }
    }
}

#[test]
fn reduction_round_trip_on_random_dyadic_filtrations() {
    for seed in 0..20u64 {
        let base = AtomicMeasureSpace::dyadic_grid(6).unwrap();
        let filt = random_haar_filtration(&base, 6, HaarKind::Dyadic, seed).unwrap();
        let iso = boolean_isomorphism(&filt).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = StepFunction::from_flat(&base, l(1.0, 2), (0..128).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let g = iso.push_forward(&f).unwrap();
        let dyadic = iso.dyadic_levels();
        for j in 0..filt.len() {
            let lhs = conditional_expectation(&f, filt.level(j)).unwrap();
            let rhs = iso.pull_back(&conditional_expectation(&g, dyadic.level(j)).unwrap()).unwrap();
            assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12, "seed {seed}, level {j}");
        }
        // Functions measurable at the last level keep their norms; the l1 R-bounds are heuristic,
        // so equal sets that differ by rounding are compared with a relative tolerance.
        let fl = conditional_expectation(&f, filt.last()).unwrap();
        let cfg = MaximalConfig::default();
        let a = rmf_ratio(&fl, &filt, 2.0, &cfg).unwrap();
        let b = rmf_ratio(&iso.push_forward(&fl).unwrap(), &dyadic, 2.0, &cfg).unwrap();
        assert!((a - b).abs() <= 1e-9 * a, "seed {seed}: {a} vs {b}");
    }
}

#[test]
fn telescoping_l1_realizes_root_n_on_first_interval() {
    for n in [4usize, 8] {
        let space = l(1.0, n);
        let t: Vec<Vector> = (0..n).map(|i| Vector::basis(space, i).unwrap()).collect();
        let tel = telescoping_function(&t).unwrap();
        let r = rademacher_maximal_at(&tel.function, &tel.filtration, &[0], &MaximalConfig::default()).unwrap();
        assert!(r[0].lower >= (n as f64).sqrt() - 1e-2);
        let doob = doob_maximal(&tel.function, &tel.filtration).unwrap();
        assert_abs_diff_eq!(doob.pointwise[0], 1.0, epsilon = 1e-12);
    }
}

#[test]
fn type_and_cotype_of_sequence_spaces() {
    let cfg = EnumConfig::default();
    for n in [2usize, 4] {
        let root = (n as f64).sqrt();
        let t = type_cotype_estimate(TypeCotype::Type, l(1.0, n), 2.0, n, &cfg).unwrap();
        assert_abs_diff_eq!(t.value, root, epsilon = 1e-6);
        let c = type_cotype_estimate(TypeCotype::Cotype, l(f64::INFINITY, n), 2.0, n, &cfg).unwrap();
        assert_abs_diff_eq!(c.value, root, epsilon = 1e-6);
        for kind in [TypeCotype::Type, TypeCotype::Cotype] {
            let h = type_cotype_estimate(kind, l(2.0, n), 2.0, n, &cfg).unwrap();
            assert_abs_diff_eq!(h.value, 1.0, epsilon = 1e-6);
        }
    }
}

#[test]
fn gundy_and_doob_on_generated_martingales() {
    for seed in 0..60u64 {
        let space = if seed % 2 == 0 { l(1.0, 3) } else { l(2.0, 3) };
        let k = 2 + (seed % 5) as u32;
        let steps = ((seed % 10) as usize + 1).min((1 << k) - 1);
        let x = random_haar_martingale(k, steps, space, HaarKind::Standard, seed).unwrap();
        let norm = x.lp_norm(1.0);
        for factor in [0.25, 1.0, 4.0] {
            let c = gundy_decompose(&x, factor * norm).unwrap().certificates;
            assert!(c.g_l1 <= 4.0 * c.x_l1 && c.g_linf <= 2.0 * c.lambda + 1e-12);
            assert!(c.b_support <= 3.0 * c.x_l1 / c.lambda);
        }
        let d = doob_check(&x, &[1.5, 2.0, 3.0]).unwrap();
        assert!(d.worst_violation() <= 1e-9);
    }
}
