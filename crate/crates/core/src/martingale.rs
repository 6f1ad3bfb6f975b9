//! Simple martingales on finite filtrations: transforms, stopping times,
//! the Gundy decomposition, good-lambda experiments and weak-type probes.
//!
//! Indices follow the filtration: `X_j` lives on level `j`, `X_0` on level 0,
//! and differences `D_j = X_j - X_(j-1)` start at `j = 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, structural, LabError, Result};
use crate::filtration::{conditional_expectation, AtomicMeasureSpace, Filtration, HaarKind, StepFunction};
use crate::maximal::{rbound_of_sets, MaximalConfig};
use crate::rbound::RBoundMode;
use crate::spaces::{dual_exponent, Space};

const MARTINGALE_TOL: f64 = 1e-12;

fn contract(msg: impl Into<String>) -> LabError {
    LabError::Contract(msg.into())
}

/// Adapted sequence `X_0, ..., X_N` with `E(X_(j+1) | level j) = X_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleMartingale {
    filtration: Filtration,
    levels: Vec<StepFunction>,
    probs: Vec<f64>,
}

fn probabilities(base: &AtomicMeasureSpace) -> Result<Vec<f64>> {
    let total = base.total();
    if !(total > 0.0) {
        return Err(domain("martingales need a base of positive mass"));
    }
    Ok(base.masses().iter().map(|m| m / total).collect())
}

impl SimpleMartingale {
    /// Validates adaptedness and the martingale property (to `1e-12` relative to the largest value).
    pub fn new(filtration: Filtration, levels: Vec<StepFunction>) -> Result<Self> {
        if levels.len() != filtration.len() {
            return Err(structural(format!("{} values for {} levels", levels.len(), filtration.len())));
        }
        let space = levels[0].space();
        for (j, x) in levels.iter().enumerate() {
            if x.base() != filtration.base() || x.space() != space {
                return Err(structural(format!("level {j} lives on a different base or space")));
            }
            if !filtration.level(j).measures(x.values(), space.dim()) {
                return Err(contract(format!("X_{j} is not measurable with respect to level {j}")));
            }
        }
        let m = SimpleMartingale { probs: probabilities(filtration.base())?, filtration, levels };
        let scale = 1.0 + m.levels.iter().flat_map(|x| x.values()).fold(0.0f64, |a, v| a.max(v.abs()));
        let defect = m.defect()?;
        if defect > MARTINGALE_TOL * scale {
            return Err(contract(format!("martingale property fails by {defect:e}")));
        }
        Ok(m)
    }

    fn unchecked(filtration: Filtration, levels: Vec<StepFunction>, probs: Vec<f64>) -> Self {
        SimpleMartingale { filtration, levels, probs }
    }

    /// `X_j = E(f | level j)`.
    pub fn from_function(f: &StepFunction, filtration: &Filtration) -> Result<Self> {
        if f.base() != filtration.base() {
            return Err(structural("function and filtration live on different bases"));
        }
        let probs = probabilities(f.base())?;
        let levels = filtration.levels().iter().map(|p| conditional_expectation(f, p)).collect::<Result<Vec<_>>>()?;
        Ok(Self::unchecked(filtration.clone(), levels, probs))
    }

    /// The constant martingale at `f` (which must be constant) over `filtration`.
    pub fn constant(f: &StepFunction, filtration: &Filtration) -> Result<Self> {
        Self::new(filtration.clone(), vec![f.clone(); filtration.len()])
    }

    pub fn filtration(&self) -> &Filtration {
        &self.filtration
    }

    pub fn base(&self) -> &AtomicMeasureSpace {
        self.filtration.base()
    }

    pub fn space(&self) -> Space {
        self.levels[0].space()
    }

    /// Number of levels `N + 1`.
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index `N` of the last level.
    pub fn last_index(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn levels(&self) -> &[StepFunction] {
        &self.levels
    }

    pub fn level(&self, j: usize) -> &StepFunction {
        &self.levels[j]
    }

    /// Atom probabilities (masses over total mass).
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// `D_j = X_j - X_(j-1)` for `j >= 1`.
    pub fn difference(&self, j: usize) -> StepFunction {
        assert!(j >= 1 && j < self.len(), "differences run over 1..=N");
        self.levels[j].sub(&self.levels[j - 1]).expect("levels share base and space")
    }

    /// `E g` under the normalized measure.
    pub fn expectation(&self, g: &[f64]) -> f64 {
        g.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    /// `P(event)` under the normalized measure.
    pub fn probability(&self, event: impl Fn(usize) -> bool) -> f64 {
        (0..self.probs.len()).filter(|&a| event(a)).map(|a| self.probs[a]).sum()
    }

    /// Largest deviation from `E(X_(j+1) | level j) = X_j`; consecutive
    /// levels suffice by the tower property.
    pub fn defect(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for j in 0..self.last_index() {
            let e = conditional_expectation(&self.levels[j + 1], self.filtration.level(j))?;
            worst = worst.max(e.max_abs_diff(&self.levels[j])?);
        }
        Ok(worst)
    }

    /// `||X||_p = sup_j (E||X_j||^p)^(1/p)`; the essential supremum when `p` is infinite.
    pub fn lp_norm(&self, p: f64) -> f64 {
        self.levels
            .iter()
            .map(|x| {
                let n = x.norms();
                if p.is_infinite() {
                    n.iter().zip(&self.probs).filter(|(_, pr)| **pr > 0.0).fold(0.0f64, |m, (v, _)| m.max(*v))
                } else {
                    self.expectation(&n.iter().map(|v| v.powf(p)).collect::<Vec<_>>()).powf(1.0 / p)
                }
            })
            .fold(0.0, f64::max)
    }

    /// `X - X_0`, the martingale started at zero.
    pub fn centered(&self) -> Self {
        let x0 = self.levels[0].clone();
        let levels = self.levels.iter().map(|x| x.sub(&x0).expect("same base")).collect();
        Self::unchecked(self.filtration.clone(), levels, self.probs.clone())
    }

    /// `X - X_0 + point`: the same increments started at `point`.
    pub fn with_start(&self, point: &crate::spaces::Vector) -> Result<Self> {
        if point.space() != self.space() {
            return Err(structural("start point lives in a different space"));
        }
        let shift = StepFunction::constant(self.base(), point).sub(&self.levels[0])?;
        let levels = self.levels.iter().map(|x| x.add(&shift)).collect::<Result<Vec<_>>>()?;
        Ok(Self::unchecked(self.filtration.clone(), levels, self.probs.clone()))
    }

    /// Repeats level 0 in front: `(X_0, X_0, X_1, ..., X_N)`.
    pub fn prepend_constant(&self) -> Result<Self> {
        let mut parts = vec![self.filtration.level(0).clone()];
        parts.extend(self.filtration.levels().iter().cloned());
        let mut levels = vec![self.levels[0].clone()];
        levels.extend(self.levels.iter().cloned());
        Ok(Self::unchecked(Filtration::new(parts)?, levels, self.probs.clone()))
    }

    /// Atomwise sum of two martingales on the same filtration.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a.add(b))
    }

    /// Atomwise difference of two martingales on the same filtration.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a.sub(b))
    }

    fn combine(&self, other: &Self, op: impl Fn(&StepFunction, &StepFunction) -> Result<StepFunction>) -> Result<Self> {
        if self.filtration != other.filtration {
            return Err(structural("martingales live on different filtrations"));
        }
        let levels = self.levels.iter().zip(&other.levels).map(|(a, b)| op(a, b)).collect::<Result<Vec<_>>>()?;
        Ok(Self::unchecked(self.filtration.clone(), levels, self.probs.clone()))
    }

    /// The stopped martingale `X_(tau ^ j)`.
    pub fn stopped(&self, tau: &StoppingTime) -> Result<Self> {
        tau.validate(&self.filtration)?;
        let d = self.space().dim();
        let levels = (0..self.len())
            .map(|j| {
                let mut values = self.levels[j].values().to_vec();
                for (a, t) in tau.values.iter().enumerate() {
                    if let Some(t) = *t {
                        if t < j {
                            values[a * d..(a + 1) * d].copy_from_slice(self.levels[t].value(a));
                        }
                    }
                }
                StepFunction::from_flat(self.base(), self.space(), values)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::unchecked(self.filtration.clone(), levels, self.probs.clone()))
    }

    /// The zero martingale on the same filtration and space.
    pub fn zero_like(&self) -> Self {
        let z = StepFunction::zeros(self.base(), self.space());
        Self::unchecked(self.filtration.clone(), vec![z; self.len()], self.probs.clone())
    }

    /// Per-atom sets `{X_k(a) : k <= j}` for every `j`, flattened; `sets[j][a]`.
    fn prefix_sets(&self) -> Vec<Vec<Vec<f64>>> {
        let d = self.space().dim();
        (0..self.len())
            .map(|j| {
                (0..self.base().len())
                    .map(|a| {
                        let mut rows = Vec::with_capacity((j + 1) * d);
                        for x in &self.levels[..=j] {
                            rows.extend_from_slice(x.value(a));
                        }
                        rows
                    })
                    .collect()
            })
            .collect()
    }
}

/// Real process `v_1, ..., v_N` with `v_j` constant on level `j - 1` blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictableProcess {
    /// `levels[j - 1]` holds `v_j` at every atom.
    pub levels: Vec<Vec<f64>>,
}

impl PredictableProcess {
    /// The process equal to `c` everywhere for `n` steps.
    pub fn constant(c: f64, n: usize, atoms: usize) -> Self {
        PredictableProcess { levels: vec![vec![c; atoms]; n] }
    }

    pub fn validate(&self, filtration: &Filtration) -> Result<()> {
        if self.levels.len() + 1 != filtration.len() {
            return Err(structural(format!("{} steps for a filtration with {} levels", self.levels.len(), filtration.len())));
        }
        for (i, v) in self.levels.iter().enumerate() {
            if v.len() != filtration.base().len() {
                return Err(structural(format!("v_{} has {} values", i + 1, v.len())));
            }
            if !filtration.level(i).measures(v, 1) {
                return Err(contract(format!("v_{} is not measurable with respect to level {i}", i + 1)));
            }
        }
        Ok(())
    }
}

/// `(v * X)_j = sum_(k <= j) v_k D_k`, starting from zero.
pub fn martingale_transform(v: &PredictableProcess, x: &SimpleMartingale) -> Result<SimpleMartingale> {
    v.validate(x.filtration())?;
    let mut acc = StepFunction::zeros(x.base(), x.space());
    let mut levels = vec![acc.clone()];
    for j in 1..x.len() {
        acc = acc.add(&x.difference(j).mul_scalar(&v.levels[j - 1])?)?;
        levels.push(acc.clone());
    }
    Ok(SimpleMartingale::unchecked(x.filtration.clone(), levels, x.probs.clone()))
}

/// Per-atom value in `{0, ..., N}` or `None` for infinity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoppingTime {
    pub values: Vec<Option<usize>>,
}

impl StoppingTime {
    pub fn never(atoms: usize) -> Self {
        StoppingTime { values: vec![None; atoms] }
    }

    /// Checks that `{tau = j}` is a union of level-`j` blocks.
    pub fn validate(&self, filtration: &Filtration) -> Result<()> {
        if self.values.len() != filtration.base().len() {
            return Err(structural("stopping time has the wrong number of atoms"));
        }
        for j in 0..filtration.len() {
            let ind: Vec<f64> = self.values.iter().map(|t| if *t == Some(j) { 1.0 } else { 0.0 }).collect();
            if !filtration.level(j).measures(&ind, 1) {
                return Err(contract(format!("{{tau = {j}}} is not a union of level-{j} blocks")));
            }
        }
        if let Some(t) = self.values.iter().flatten().find(|&&t| t >= filtration.len()) {
            return Err(structural(format!("stopping value {t} beyond the last level")));
        }
        Ok(())
    }

    /// `min(tau, other)` atomwise.
    pub fn min(&self, other: &StoppingTime) -> StoppingTime {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => Some(*a.min(b)),
                (Some(a), None) | (None, Some(a)) => Some(*a),
                (None, None) => None,
            })
            .collect();
        StoppingTime { values }
    }
}

/// Built-in triggers for first hitting times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trigger {
    /// `||X_j|| > c`.
    NormAbove(f64),
    /// `R(X_0, ..., X_j) > c`.
    RBoundAbove(f64),
    /// `||X_j|| > c` or `||D_(j+1)|| > c2`; needs predictable jump norms.
    NormOrNextJumpAbove(f64, f64),
}

/// First level at which `pred(j, atom)` holds; the predicate must be level-`j` measurable.
pub fn stopping_time_from(x: &SimpleMartingale, pred: impl Fn(usize, usize) -> bool) -> Result<StoppingTime> {
    let atoms = x.base().len();
    let mut values = vec![None; atoms];
    for j in 0..x.len() {
        let fired: Vec<f64> = (0..atoms).map(|a| if pred(j, a) { 1.0 } else { 0.0 }).collect();
        if !x.filtration().level(j).measures(&fired, 1) {
            return Err(contract(format!("trigger at level {j} is not measurable with respect to level {j}")));
        }
        for a in 0..atoms {
            if values[a].is_none() && fired[a] == 1.0 {
                values[a] = Some(j);
            }
        }
    }
    Ok(StoppingTime { values })
}

/// `R(X_0(a), ..., X_j(a))` for every level and atom, with the mode used.
pub fn prefix_rbounds(x: &SimpleMartingale, cfg: &MaximalConfig) -> (Vec<Vec<f64>>, RBoundMode) {
    let sets = x.prefix_sets();
    let atoms = x.base().len();
    let flat: Vec<Vec<f64>> = sets.into_iter().flatten().collect();
    let brackets = rbound_of_sets(&x.space(), &flat, cfg.p, cfg.multiplicity, &cfg.enumeration);
    let mode = brackets[0].mode;
    let values = brackets.chunks(atoms).map(|c| c.iter().map(|b| b.lower).collect()).collect();
    (values, mode)
}

/// First hitting time of a built-in trigger.
pub fn stopping_time_first(x: &SimpleMartingale, trigger: Trigger, cfg: &MaximalConfig) -> Result<StoppingTime> {
    match trigger {
        Trigger::NormAbove(c) => {
            let norms: Vec<Vec<f64>> = x.levels().iter().map(|l| l.norms()).collect();
            stopping_time_from(x, |j, a| norms[j][a] > c)
        }
        Trigger::RBoundAbove(c) => {
            let (r, _) = prefix_rbounds(x, cfg);
            stopping_time_from(x, |j, a| r[j][a] > c)
        }
        Trigger::NormOrNextJumpAbove(c, c2) => {
            let norms: Vec<Vec<f64>> = x.levels().iter().map(|l| l.norms()).collect();
            // Blockwise max: the two halves of a split can differ by rounding.
            let jumps: Vec<Vec<f64>> = (1..x.len())
                .map(|j| {
                    let norms = x.difference(j).norms();
                    let part = x.filtration().level(j - 1);
                    let mut top = vec![0.0f64; part.n_blocks()];
                    for (a, n) in norms.iter().enumerate() {
                        top[part.block_of(a)] = top[part.block_of(a)].max(*n);
                    }
                    (0..norms.len()).map(|a| top[part.block_of(a)]).collect()
                })
                .collect();
            stopping_time_from(x, |j, a| norms[j][a] > c || (j < jumps.len() && jumps[j][a] > c2))
        }
    }
}

/// `X_tau = sum_j 1{tau = j} X_j`, zero where `tau` is infinite.
pub fn stopped_value(x: &SimpleMartingale, tau: &StoppingTime) -> Result<StepFunction> {
    tau.validate(x.filtration())?;
    let d = x.space().dim();
    let mut values = vec![0.0; x.base().len() * d];
    for (a, t) in tau.values.iter().enumerate() {
        if let Some(t) = *t {
            values[a * d..(a + 1) * d].copy_from_slice(x.level(t).value(a));
        }
    }
    StepFunction::from_flat(x.base(), x.space(), values)
}

/// Doob and Rademacher maximal functions of a martingale.
#[derive(Debug, Clone, PartialEq)]
pub struct Stars {
    /// `X* = max_j ||X_j||` per atom.
    pub doob: Vec<f64>,
    /// `X_R* = R(X_j : j)` per atom (lower bracket).
    pub rademacher: Vec<f64>,
    pub rademacher_upper: Vec<f64>,
    pub mode: RBoundMode,
    /// `||X||_p` at the requested exponent.
    pub norm: f64,
}

pub fn maximal_stars(x: &SimpleMartingale, cfg: &MaximalConfig, p: f64) -> Stars {
    let d = x.space().dim();
    let sets: Vec<Vec<f64>> = (0..x.base().len())
        .map(|a| {
            let mut rows = Vec::with_capacity(x.len() * d);
            for l in x.levels() {
                rows.extend_from_slice(l.value(a));
            }
            rows
        })
        .collect();
    let brackets = rbound_of_sets(&x.space(), &sets, cfg.p, cfg.multiplicity, &cfg.enumeration);
    Stars {
        doob: doob_star(x),
        rademacher: brackets.iter().map(|b| b.lower).collect(),
        rademacher_upper: brackets.iter().map(|b| b.upper).collect(),
        mode: brackets[0].mode,
        norm: x.lp_norm(p),
    }
}

fn doob_star(x: &SimpleMartingale) -> Vec<f64> {
    let mut star = vec![0.0f64; x.base().len()];
    for l in x.levels() {
        for (s, n) in star.iter_mut().zip(l.norms()) {
            *s = s.max(n);
        }
    }
    star
}

/// `sup_lambda lambda P(g > lambda)`, attained as lambda increases to a value of `g`.
pub fn weak_type_sup(g: &[f64], probs: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..g.len()).filter(|&a| probs[a] > 0.0).collect();
    order.sort_by(|&a, &b| g[b].total_cmp(&g[a]));
    let mut tail = 0.0;
    let mut best = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let v = g[order[i]];
        while i < order.len() && g[order[i]] == v {
            tail += probs[order[i]];
            i += 1;
        }
        best = best.max(v * tail);
    }
    best
}

/// Both sides of the weak and strong Doob inequalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoobCheck {
    /// `sup_lambda lambda P(X* > lambda)`.
    pub weak_lhs: f64,
    /// `||X||_1`.
    pub weak_rhs: f64,
    /// `(p, E|X*|^p, (p')^p ||X||_p^p)`.
    pub strong: Vec<(f64, f64, f64)>,
}

impl DoobCheck {
    /// Largest `lhs - rhs` over all inequalities, relative to `1 + rhs`.
    pub fn worst_violation(&self) -> f64 {
        let weak = (self.weak_lhs - self.weak_rhs) / (1.0 + self.weak_rhs);
        self.strong.iter().map(|(_, l, r)| (l - r) / (1.0 + r)).fold(weak, f64::max)
    }
}

pub fn doob_check(x: &SimpleMartingale, exponents: &[f64]) -> Result<DoobCheck> {
    let star = doob_star(x);
    let strong = exponents
        .iter()
        .map(|&p| {
            let q = dual_exponent(p)?;
            if !(p > 1.0) || p.is_infinite() {
                return Err(domain(format!("strong Doob bound needs 1 < p < inf, got {p}")));
            }
            let lhs = x.expectation(&star.iter().map(|s| s.powf(p)).collect::<Vec<_>>());
            Ok((p, lhs, q.powf(p) * x.lp_norm(p).powf(p)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DoobCheck { weak_lhs: weak_type_sup(&star, x.probabilities()), weak_rhs: x.lp_norm(1.0), strong })
}

/// Bound values of one Gundy decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GundyCertificates {
    pub lambda: f64,
    /// `||X||_1`.
    pub x_l1: f64,
    /// `||G||_1`, bounded by `4 ||X||_1`.
    pub g_l1: f64,
    /// `||G||_inf`, bounded by `2 lambda`.
    pub g_linf: f64,
    /// `E||H_0|| + sum_j E||H_j - H_(j-1)||`, bounded by `4 ||X||_1`.
    pub h_variation: f64,
    /// `P(B* > 0)`, bounded by `3 ||X||_1 / lambda`.
    pub b_support: f64,
    /// `max |G + H + B - X|` over atoms and levels.
    pub reconstruction_error: f64,
    /// Names of the bounds that fail.
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GundyParts {
    pub g: SimpleMartingale,
    pub h: SimpleMartingale,
    pub b: SimpleMartingale,
    pub certificates: GundyCertificates,
}

/// Gundy decomposition `X = G + H + B` at height `lambda` for standard Haar martingales.
///
/// `sigma` is the first level with `||X_j|| > lambda` or `||D_(j+1)|| > lambda`,
/// `G = X_(sigma ^ .)`, `H = 0` and `B = X - G`. When `||X_0|| > lambda`
/// already, `G = 0` and `B = X`.
pub fn gundy_decompose(x: &SimpleMartingale, lambda: f64) -> Result<GundyParts> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(domain(format!("lambda must be positive, got {lambda}")));
    }
    if !x.filtration().is_standard_haar() {
        return Err(domain("Gundy decomposition needs a standard Haar filtration; reduce general filtrations first"));
    }
    let start_large = x.level(0).norms().iter().any(|n| *n > lambda);
    let g = if start_large {
        x.zero_like()
    } else {
        let sigma = stopping_time_first(x, Trigger::NormOrNextJumpAbove(lambda, lambda), &MaximalConfig::default())?;
        x.stopped(&sigma)?
    };
    let h = x.zero_like();
    let b = x.sub(&g)?;

    let x_l1 = x.lp_norm(1.0);
    let g_l1 = g.lp_norm(1.0);
    let g_linf = g.lp_norm(f64::INFINITY);
    let h_variation = x.expectation(&h.level(0).norms()) + (1..h.len()).map(|j| h.expectation(&h.difference(j).norms())).sum::<f64>();
    let b_star = doob_star(&b);
    let b_support = b.probability(|a| b_star[a] > 0.0);
    let reconstruction_error = x
        .levels()
        .iter()
        .enumerate()
        .map(|(j, xj)| g.level(j).add(h.level(j)).and_then(|s| s.add(b.level(j))).and_then(|s| s.max_abs_diff(xj)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let tol = 1e-12 * (1.0 + x_l1 + lambda);
    let mut violations = Vec::new();
    if g_l1 > 4.0 * x_l1 + tol {
        violations.push("||G||_1 <= 4||X||_1".to_string());
    }
    if g_linf > 2.0 * lambda + tol {
        violations.push("||G||_inf <= 2 lambda".to_string());
    }
    if h_variation > 4.0 * x_l1 + tol {
        violations.push("sum E||dH|| <= 4||X||_1".to_string());
    }
    if b_support > 3.0 * x_l1 / lambda + 1e-12 {
        violations.push("P(B* > 0) <= 3||X||_1/lambda".to_string());
    }
    if reconstruction_error > 1e-10 {
        violations.push("G + H + B = X".to_string());
    }
    let certificates = GundyCertificates { lambda, x_l1, g_l1, g_linf, h_variation, b_support, reconstruction_error, violations };
    if !certificates.violations.is_empty() {
        return Err(contract(format!("Gundy bounds fail: {}", certificates.violations.join(", "))));
    }
    Ok(GundyParts { g, h, b, certificates })
}

/// `alpha(delta) = 4 C delta / (beta - 2 delta - 1)`.
pub fn good_lambda_alpha(beta: f64, delta: f64, c: f64) -> Result<f64> {
    check_good_lambda_params(beta, delta)?;
    Ok(4.0 * c * delta / (beta - 2.0 * delta - 1.0))
}

fn check_good_lambda_params(beta: f64, delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(beta > 2.0 * delta + 1.0) {
        return Err(domain(format!("beta must exceed 2 delta + 1, got beta = {beta}, delta = {delta}")));
    }
    Ok(())
}

/// Pathwise checks of one good-lambda construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodLambdaReport {
    pub beta: f64,
    pub delta: f64,
    pub lambda: f64,
    pub mode: RBoundMode,
    /// Whether (a) and (b) are asserted (exact R-bounds) or diagnostic.
    pub enforced: bool,
    pub tau1: StoppingTime,
    pub tau2: StoppingTime,
    pub sigma: StoppingTime,
    /// Atoms in `{X_R* > beta lambda, X* <= delta lambda}`.
    pub event_atoms: usize,
    /// Atoms of that event outside `{(v*X)_R* > (beta - 2 delta - 1) lambda}`.
    pub inclusion_violations: usize,
    /// Smallest `(v*X)_R* - (beta - 2 delta - 1) lambda` over the event, if nonempty.
    pub inclusion_slack: Option<f64>,
    /// Atoms with `(v*X)* > 4 delta lambda 1{tau1 < inf}`.
    pub bound_violations: usize,
    /// Smallest `4 delta lambda 1{tau1 < inf} - (v*X)*` over all atoms.
    pub bound_slack: f64,
    /// `alpha(delta)` for the supplied weak constant.
    pub alpha: f64,
    /// `P(X_R* > beta lambda, X* <= delta lambda)`.
    pub measure_lhs: f64,
    /// `alpha(delta) P(X_R* > lambda)`.
    pub measure_rhs: f64,
}

/// Builds `tau1`, `tau2`, `sigma` and `v_j = 1{tau1 < j <= tau2 ^ sigma}`,
/// forms `v * X` and checks the inclusion (a) and the bound (b) atomwise.
///
/// `c_weak` is the weak constant entering `alpha(delta)`. Failures of
/// (a) or (b) are errors when the R-bounds are exact.
pub fn good_lambda_experiment(
    x: &SimpleMartingale,
    beta: f64,
    delta: f64,
    lambda: f64,
    c_weak: f64,
    cfg: &MaximalConfig,
) -> Result<GoodLambdaReport> {
    check_good_lambda_params(beta, delta)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(domain(format!("lambda must be positive, got {lambda}")));
    }
    if !x.filtration().is_standard_haar() {
        return Err(domain("good-lambda construction needs a standard Haar filtration"));
    }
    let (prefix, mode) = prefix_rbounds(x, cfg);
    let tau1 = stopping_time_from(x, |j, a| prefix[j][a] > lambda)?;
    let tau2 = stopping_time_from(x, |j, a| prefix[j][a] > beta * lambda)?;
    let sigma = stopping_time_first(x, Trigger::NormOrNextJumpAbove(delta * lambda, 2.0 * delta * lambda), cfg)?;
    let stop = tau2.min(&sigma);
    let atoms = x.base().len();
    let v = PredictableProcess {
        levels: (1..x.len())
            .map(|j| {
                (0..atoms)
                    .map(|a| {
                        let after_t1 = tau1.values[a].is_some_and(|t| t < j);
                        let before_stop = stop.values[a].is_none_or(|t| j <= t);
                        if after_t1 && before_stop {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect(),
    };
    let y = martingale_transform(&v, x)?;
    let y_stars = maximal_stars(&y, cfg, 1.0);

    let x_r = &prefix[x.last_index()];
    let x_star = doob_star(x);
    let threshold = (beta - 2.0 * delta - 1.0) * lambda;
    let tol = 1e-12 * (1.0 + lambda);
    let event: Vec<usize> = (0..atoms).filter(|&a| x_r[a] > beta * lambda && x_star[a] <= delta * lambda).collect();
    let inclusion_slack = event.iter().map(|&a| y_stars.rademacher[a] - threshold).reduce(f64::min);
    let inclusion_violations = event.iter().filter(|&&a| !(y_stars.rademacher[a] > threshold - tol)).count();
    let caps: Vec<f64> = (0..atoms).map(|a| if tau1.values[a].is_some() { 4.0 * delta * lambda } else { 0.0 }).collect();
    let bound_slack = (0..atoms).map(|a| caps[a] - y_stars.doob[a]).fold(f64::INFINITY, f64::min);
    let bound_violations = (0..atoms).filter(|&a| y_stars.doob[a] > caps[a] + tol).count();

    let alpha = good_lambda_alpha(beta, delta, c_weak)?;
    let measure_lhs = x.probability(|a| x_r[a] > beta * lambda && x_star[a] <= delta * lambda);
    let measure_rhs = alpha * x.probability(|a| x_r[a] > lambda);
    let enforced = mode != RBoundMode::Optimized;
    if enforced && (inclusion_violations > 0 || bound_violations > 0) {
        return Err(contract(format!(
            "good-lambda pathwise checks fail: {inclusion_violations} inclusion and {bound_violations} bound violations"
        )));
    }
    Ok(GoodLambdaReport {
        beta,
        delta,
        lambda,
        mode,
        enforced,
        tau1,
        tau2,
        sigma,
        event_atoms: event.len(),
        inclusion_violations,
        inclusion_slack,
        bound_violations,
        bound_slack,
        alpha,
        measure_lhs,
        measure_rhs,
    })
}

/// The strong constant obtained from a weak one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrickConstant {
    pub alpha: f64,
    /// `beta^p alpha(delta)`; the formula applies only below 1.
    pub beta_p_alpha: f64,
    /// `beta^p C_D^p / ((1 - beta^p alpha(delta)) delta^p)`, bounding `E|X_R*|^p / ||X||_p^p`.
    pub constant: Option<f64>,
}

/// Evaluates the strong-type constant for weak constant `c_weak` and Doob constant `c_doob`
/// (`p'` when `None`).
pub fn trick_constant(beta: f64, delta: f64, p: f64, c_weak: f64, c_doob: Option<f64>) -> Result<TrickConstant> {
    if !(p > 1.0) || p.is_infinite() {
        return Err(domain(format!("strong constant needs 1 < p < inf, got {p}")));
    }
    let alpha = good_lambda_alpha(beta, delta, c_weak)?;
    let c_d = match c_doob {
        Some(c) => c,
        None => dual_exponent(p)?,
    };
    let beta_p_alpha = beta.powf(p) * alpha;
    let constant = (beta_p_alpha < 1.0).then(|| beta.powf(p) * c_d.powf(p) / ((1.0 - beta_p_alpha) * delta.powf(p)));
    Ok(TrickConstant { alpha, beta_p_alpha, constant })
}

/// Empirical weak-RMF constant of a family of martingales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakRmfReport {
    /// `sup` over the family of `sup_lambda lambda P(X_R* > lambda) / ||X||_1`.
    pub constant: f64,
    /// The same supremum restricted to `lambda = c ||X||_1` for the grid factors `c`.
    pub grid_constant: f64,
    /// Per-instance exact values; `None` for martingales with `||X||_1 = 0`.
    pub per_instance: Vec<Option<f64>>,
    /// Mode of the R-bounds of the last instance.
    pub mode: Option<RBoundMode>,
}

/// Lower estimate of the weak-RMF constant over `family`.
pub fn weak_rmf_probe(family: &[SimpleMartingale], grid: &[f64], cfg: &MaximalConfig) -> WeakRmfReport {
    let mut constant = 0.0f64;
    let mut grid_constant = 0.0f64;
    let mut mode = None;
    let per_instance = family
        .iter()
        .map(|x| {
            let norm = x.lp_norm(1.0);
            if norm == 0.0 {
                return None;
            }
            let stars = maximal_stars(x, cfg, 1.0);
            mode = Some(stars.mode);
            let exact = weak_type_sup(&stars.rademacher, x.probabilities()) / norm;
            for c in grid {
                let lam = c * norm;
                grid_constant = grid_constant.max(lam * x.probability(|a| stars.rademacher[a] > lam) / norm);
            }
            constant = constant.max(exact);
            Some(exact)
        })
        .collect();
    WeakRmfReport { constant, grid_constant, per_instance, mode }
}

/// A random martingale `X_j = E(f | level j)` on the `2^grid_k` grid with a
/// random Haar filtration of `steps` splits and Gaussian `f`.
pub fn random_haar_martingale(grid_k: u32, steps: usize, space: Space, kind: HaarKind, seed: u64) -> Result<SimpleMartingale> {
    let base = AtomicMeasureSpace::dyadic_grid(grid_k)?;
    let filtration = crate::filtration::random_haar_filtration(&base, steps, kind, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let values: Vec<f64> = (0..base.len() * space.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let f = StepFunction::from_flat(&base, space, values)?;
    SimpleMartingale::from_function(&f, &filtration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtration::{make_dyadic_filtration, random_haar_filtration, Partition};
    use crate::rademacher::EnumConfig;
    use crate::spaces::Vector;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn l1(d: usize) -> Space {
        Space::lp(1.0, d).unwrap()
    }

    fn l2(d: usize) -> Space {
        Space::lp(2.0, d).unwrap()
    }

    fn two_atom() -> SimpleMartingale {
        let base = AtomicMeasureSpace::uniform(2).unwrap();
        let filt = Filtration::new(vec![Partition::trivial(&base), Partition::discrete(&base)]).unwrap();
        SimpleMartingale::from_function(&StepFunction::scalar(&base, &[3.0, -1.0]).unwrap(), &filt).unwrap()
    }

    #[test]
    fn from_function_basics() {
        let (base, filt) = make_dyadic_filtration(3).unwrap();
        let v = Vector::new(l1(2), vec![1.0, -2.0]).unwrap();
        let c = SimpleMartingale::from_function(&StepFunction::constant(&base, &v), &filt).unwrap();
        assert!(c.levels().iter().all(|l| l.values().chunks(2).all(|x| x == v.coords())));
        let f = StepFunction::scalar(&base, &[1.0, 4.0, -2.0, 0.5, 3.0, 3.0, -1.0, 0.0]).unwrap();
        let x = SimpleMartingale::from_function(&f, &filt).unwrap();
        assert_eq!(x.level(3), &f);
        assert!(x.defect().unwrap() <= 1e-15);
        assert!(SimpleMartingale::new(filt.clone(), x.levels().to_vec()).is_ok());
        let mut bad = x.levels().to_vec();
        bad[1] = bad[1].scaled(2.0);
        assert!(matches!(SimpleMartingale::new(filt, bad), Err(LabError::Contract(_))));
    }

    #[test]
    fn transform_examples() {
        let x = random_haar_martingale(4, 8, l1(2), HaarKind::Standard, 3).unwrap();
        let n = x.last_index();
        let atoms = x.base().len();
        let ones = martingale_transform(&PredictableProcess::constant(1.0, n, atoms), &x).unwrap();
        for j in 0..x.len() {
            assert!(ones.level(j).max_abs_diff(x.centered().level(j)).unwrap() <= 1e-14);
        }
        let zero = martingale_transform(&PredictableProcess::constant(0.0, n, atoms), &x).unwrap();
        assert!(zero.levels().iter().all(|l| l.values().iter().all(|v| *v == 0.0)));
        let wrong = PredictableProcess { levels: (0..n).map(|_| (0..atoms).map(|a| a as f64).collect()).collect() };
        assert!(matches!(martingale_transform(&wrong, &x), Err(LabError::Contract(_))));
    }

    #[test]
    fn stopping_time_examples() {
        let x = random_haar_martingale(3, 5, l2(2), HaarKind::Standard, 1).unwrap();
        let cfg = MaximalConfig::default();
        let never = stopping_time_first(&x, Trigger::NormAbove(1e9), &cfg).unwrap();
        assert_eq!(never, StoppingTime::never(8));
        let at_once = stopping_time_first(&x, Trigger::NormAbove(-1.0), &cfg).unwrap();
        assert!(at_once.values.iter().all(|t| *t == Some(0)));
        let last = StoppingTime { values: vec![Some(x.last_index()); 8] };
        assert_eq!(&stopped_value(&x, &last).unwrap(), x.level(x.last_index()));
        assert!(stopped_value(&x, &never).unwrap().values().iter().all(|v| *v == 0.0));
        assert!(stopping_time_from(&x, |j, a| j == 1 && a == 0).is_err());
    }

    #[test]
    fn two_atom_weak_probe_by_hand() {
        let x = two_atom();
        // X_0 = 1, X_1 = (3, -1): X* = (3, 1), ||X||_1 = 2, sup lambda P(X* > lambda) = max(3/2, 1).
        let r = weak_rmf_probe(std::slice::from_ref(&x), &[0.5, 1.0], &MaximalConfig::default());
        assert_abs_diff_eq!(r.constant, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(r.grid_constant, 0.5, epsilon = 1e-15);
        let d = doob_check(&x, &[2.0]).unwrap();
        assert_eq!((d.weak_lhs, d.weak_rhs), (1.5, 2.0));
        assert_abs_diff_eq!(d.strong[0].1, 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.strong[0].2, 20.0, epsilon = 1e-12);
    }

    #[test]
    fn gundy_at_a_jump_norm_threshold() {
        // The two halves of a split can round to different jump norms.
        for seed in 0..200 {
            let x = random_haar_martingale(1 + (seed % 4) as u32, 1, l1(3), HaarKind::Standard, seed).unwrap();
            for lambda in x.difference(1).norms() {
                assert!(gundy_decompose(&x, lambda).unwrap().certificates.violations.is_empty());
            }
        }
    }

    #[test]
    fn gundy_large_lambda_keeps_everything_good() {
        let x = random_haar_martingale(4, 10, l1(3), HaarKind::Standard, 9).unwrap();
        let parts = gundy_decompose(&x, 1e6).unwrap();
        assert_eq!(parts.g, x);
        assert!(parts.b.levels().iter().all(|l| l.values().iter().all(|v| *v == 0.0)));
        let tiny = gundy_decompose(&x, 1e-9).unwrap();
        assert!(tiny.certificates.violations.is_empty());
        let (base, _) = make_dyadic_filtration(2).unwrap();
        let general = random_haar_filtration(&base, 3, HaarKind::General, 0).unwrap();
        if !general.is_standard_haar() {
            let y = SimpleMartingale::from_function(&StepFunction::scalar(&base, &[1.0, 2.0, 3.0, 4.0]).unwrap(), &general).unwrap();
            assert!(matches!(gundy_decompose(&y, 1.0), Err(LabError::Domain(_))));
        }
    }

    #[test]
    fn good_lambda_parameters_are_checked() {
        let x = two_atom();
        let cfg = MaximalConfig::default();
        assert!(good_lambda_experiment(&x, 1.1, 0.1, 1.0, 1.0, &cfg).is_err());
        assert!(good_lambda_experiment(&x, 4.0, 1.5, 1.0, 1.0, &cfg).is_err());
        assert_abs_diff_eq!(good_lambda_alpha(4.0, 0.1, 1.0).unwrap(), 0.4 / 2.8, epsilon = 1e-15);
    }

    #[test]
    fn quiet_martingale_has_empty_event() {
        let x = two_atom().centered().scaled_for_test(1e-3);
        let r = good_lambda_experiment(&x, 4.0, 0.1, 1.0, 1.0, &MaximalConfig::default()).unwrap();
        assert_eq!(r.event_atoms, 0);
        assert_eq!(r.inclusion_violations + r.bound_violations, 0);
    }

    #[test]
    fn trick_constant_domain() {
        let t = trick_constant(4.0, 0.01, 2.0, 1.0, None).unwrap();
        let alpha = 0.04 / 2.98;
        assert_abs_diff_eq!(t.alpha, alpha, epsilon = 1e-15);
        assert_abs_diff_eq!(t.constant.unwrap(), 16.0 * 4.0 / ((1.0 - 16.0 * alpha) * 1e-4), epsilon = 1e-6);
        assert!(trick_constant(4.0, 0.5, 2.0, 1.0, None).unwrap().constant.is_none());
    }

    impl SimpleMartingale {
        fn scaled_for_test(&self, c: f64) -> Self {
            let levels = self.levels.iter().map(|l| l.scaled(c)).collect();
            Self::unchecked(self.filtration.clone(), levels, self.probs.clone())
        }
    }

    fn instance() -> impl Strategy<Value = (u32, usize, u64, bool)> {
        (2u32..=6, 1usize..=10, 0u64..10_000, any::<bool>())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn gundy_parts_are_martingales((k, steps, seed, hilbert) in instance(), factor in prop::sample::select(vec![0.25, 1.0, 4.0])) {
            let steps = steps.min((1usize << k) - 1);
            let space = if hilbert { l2(3) } else { l1(3) };
            let x = random_haar_martingale(k, steps, space, HaarKind::Standard, seed).unwrap();
            let lambda = factor * x.lp_norm(1.0);
            let parts = gundy_decompose(&x, lambda).unwrap();
            let c = &parts.certificates;
            prop_assert!(c.reconstruction_error <= 1e-10);
            for part in [&parts.g, &parts.h, &parts.b] {
                prop_assert!(part.defect().unwrap() <= 1e-12);
            }
            for p in [1.5, 2.0, 3.0] {
                prop_assert!(parts.g.lp_norm(p).powf(p) <= (2.0 * lambda).powf(p - 1.0) * c.g_l1 * (1.0 + 1e-12));
            }
            let cfg = MaximalConfig::with_enumeration(EnumConfig { restarts: 2, ..EnumConfig::default() });
            let b = maximal_stars(&parts.b, &cfg, 1.0);
            for a in 0..x.base().len() {
                prop_assert_eq!(b.doob[a] > 0.0, b.rademacher[a] > 0.0);
            }
        }

        #[test]
        fn transforms_and_stopping((k, steps, seed, hilbert) in instance()) {
            let steps = steps.min((1usize << k) - 1);
            let space = if hilbert { l2(2) } else { l1(2) };
            let x = random_haar_martingale(k, steps, space, HaarKind::Standard, seed).unwrap();
            let atoms = x.base().len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = PredictableProcess {
                levels: (0..x.last_index())
                    .map(|i| {
                        let signs: Vec<f64> = (0..x.filtration().level(i).n_blocks()).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
                        (0..atoms).map(|a| signs[x.filtration().level(i).block_of(a)]).collect()
                    })
                    .collect(),
            };
            let y = martingale_transform(&v, &x).unwrap();
            prop_assert!(y.defect().unwrap() <= 1e-12);
            for j in 1..x.len() {
                let (dx, dy) = (x.difference(j).norms(), y.difference(j).norms());
                for a in 0..atoms {
                    prop_assert!((dx[a] - dy[a]).abs() <= 1e-12);
                }
            }
            let tau = stopping_time_first(&x, Trigger::NormAbove(0.5 * x.lp_norm(1.0)), &MaximalConfig::default()).unwrap();
            tau.validate(x.filtration()).unwrap();
            let xt = stopped_value(&x, &tau).unwrap();
            prop_assert!(x.expectation(&xt.norms()) <= x.lp_norm(1.0) + 1e-12);
            prop_assert!(x.stopped(&tau).unwrap().defect().unwrap() <= 1e-12);
            let d = doob_check(&x, &[1.5, 2.0, 3.0]).unwrap();
            prop_assert!(d.worst_violation() <= 1e-9);
        }

        #[test]
        fn good_lambda_hilbert_has_no_violations((k, steps, seed, _h) in instance(), factor in 0.05f64..3.0) {
            let steps = steps.min((1usize << k) - 1);
            let x = random_haar_martingale(k, steps, l2(2), HaarKind::Standard, seed).unwrap();
            let lambda = factor * x.lp_norm(1.0);
            let r = good_lambda_experiment(&x, 4.0, 0.1, lambda, 1.0, &MaximalConfig::default()).unwrap();
            prop_assert!(r.enforced);
            prop_assert_eq!(r.inclusion_violations + r.bound_violations, 0);
            let v_levels = r.tau1.values.len();
            prop_assert_eq!(v_levels, x.base().len());
        }
    }
}
