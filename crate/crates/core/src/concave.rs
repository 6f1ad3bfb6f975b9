//! The concave-function characterization: `u(T, T) = R(T)^p - C ||T||^p`,
//! martingale splicing, finite-family lower approximations of `v` and a
//! property checker for candidate `v` functions.

use serde::{Deserialize, Serialize};

use crate::error::{domain, structural, LabError, Result};
use crate::filtration::{dyadic_fraction, AtomicMeasureSpace, Filtration, Partition, StepFunction};
use crate::martingale::SimpleMartingale;
use crate::maximal::{rbound_of_sets, MaximalConfig};
use crate::rademacher::pow_p;
use crate::rbound::RBoundMode;
use crate::spaces::{common_space, Space, Vector};

/// Tolerance used by the property checks.
pub const CHECK_TOL: f64 = 1e-9;

/// Largest grid exponent a spliced martingale may need.
const MAX_GRID_K: u32 = 26;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UValue {
    pub value: f64,
    /// Lower bracket of `R(T)`, used in `value`.
    pub r: f64,
    pub r_upper: f64,
    pub mode: RBoundMode,
    /// `true` when the set was empty and `R = 0` by convention.
    pub empty_set: bool,
    pub p: f64,
    pub c: f64,
}

fn check_u_params(p: f64, c: f64) -> Result<()> {
    if !(p >= 1.0) || p.is_infinite() {
        return Err(domain(format!("u needs a finite exponent p >= 1, got {p}")));
    }
    if !(c >= 0.0) || c.is_infinite() {
        return Err(domain(format!("u needs a finite constant C >= 0, got {c}")));
    }
    Ok(())
}

/// `R(set)^p - C ||point||^p` with the lower R-bound bracket.
pub fn u_value(set: &[Vector], point: &Vector, p: f64, c: f64, cfg: &MaximalConfig) -> Result<UValue> {
    check_u_params(p, c)?;
    let space = point.space();
    if !set.is_empty() && common_space(set)? != space {
        return Err(structural("set and point live in different spaces"));
    }
    let rows: Vec<f64> = set.iter().flat_map(|v| v.coords().iter().copied()).collect();
    let b = rbound_of_sets(&space, &[rows], cfg.p, cfg.multiplicity, &cfg.enumeration).remove(0);
    Ok(UValue {
        value: pow_p(b.lower, p) - c * pow_p(point.norm(), p),
        r: b.lower,
        r_upper: b.upper,
        mode: b.mode,
        empty_set: set.is_empty(),
        p,
        c,
    })
}

/// Atomwise `u({X_j : j >= first} ∪ set, X_N)` and its expectation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedU {
    pub per_atom: Vec<f64>,
    pub mean: f64,
    pub mode: RBoundMode,
}

pub fn expected_u(x: &SimpleMartingale, set: &[Vector], first: usize, p: f64, c: f64, cfg: &MaximalConfig) -> Result<ExpectedU> {
    check_u_params(p, c)?;
    if first >= x.len() {
        return Err(domain(format!("first level {first} beyond the last level {}", x.last_index())));
    }
    if !set.is_empty() && common_space(set)? != x.space() {
        return Err(structural("set and martingale live in different spaces"));
    }
    let extra: Vec<f64> = set.iter().flat_map(|v| v.coords().iter().copied()).collect();
    let d = x.space().dim();
    let sets: Vec<Vec<f64>> = (0..x.base().len())
        .map(|a| {
            let mut rows = Vec::with_capacity((x.len() - first) * d + extra.len());
            for l in &x.levels()[first..] {
                rows.extend_from_slice(l.value(a));
            }
            rows.extend_from_slice(&extra);
            rows
        })
        .collect();
    let brackets = rbound_of_sets(&x.space(), &sets, cfg.p, cfg.multiplicity, &cfg.enumeration);
    let last = x.level(x.last_index()).norms();
    let per_atom: Vec<f64> = brackets.iter().zip(&last).map(|(b, n)| pow_p(b.lower, p) - c * pow_p(*n, p)).collect();
    Ok(ExpectedU { mean: x.expectation(&per_atom), per_atom, mode: brackets[0].mode })
}

fn grid_exponent(x: &SimpleMartingale, name: &str) -> Result<u32> {
    let n = x.base().len();
    if !n.is_power_of_two() || !x.base().has_equal_atoms() {
        return Err(domain(format!("{name} does not live on a dyadic grid")));
    }
    Ok(n.trailing_zeros())
}

/// The constant value of `X_0`.
fn start_value(x: &SimpleMartingale, name: &str) -> Result<Vector> {
    let first = x.level(0).vector(0);
    let scale = 1e-12 * (1.0 + first.norm());
    for a in 1..x.base().len() {
        let diff = x.level(0).value(a).iter().zip(first.coords()).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
        if diff > scale {
            return Err(domain(format!("{name} does not start from a constant")));
        }
    }
    Ok(first)
}

fn check_same_space(x1: &SimpleMartingale, x2: &SimpleMartingale) -> Result<Space> {
    if x1.space() != x2.space() {
        return Err(structural("spliced martingales live in different spaces"));
    }
    Ok(x1.space())
}

/// Output atom `t` of a splice comes from atom `src` of side `side`.
struct SpliceMap {
    k: u32,
    offset: usize,
    widths: [usize; 2],
}

impl SpliceMap {
    fn source(&self, t: usize) -> (usize, usize) {
        if t < self.offset {
            (0, t / self.widths[0])
        } else {
            (1, (t - self.offset) / self.widths[1])
        }
    }
}

/// Places the two inputs side by side: `levels[j] = (l1, l2)` names the input levels used at output level `j + 1`.
fn assemble(map: &SpliceMap, inputs: [&SimpleMartingale; 2], start: &Vector, schedule: &[(usize, usize)]) -> Result<SimpleMartingale> {
    let base = AtomicMeasureSpace::dyadic_grid(map.k)?;
    let space = start.space();
    let d = space.dim();
    let n = base.len();
    let sources: Vec<(usize, usize)> = (0..n).map(|t| map.source(t)).collect();
    let mut parts = vec![Partition::trivial(&base)];
    let mut levels = vec![StepFunction::constant(&base, start)];
    for &(l1, l2) in schedule {
        let idx = [l1, l2];
        let shift = inputs[0].filtration().level(l1).n_blocks();
        let mut labels = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n * d);
        for &(side, src) in &sources {
            let block = inputs[side].filtration().level(idx[side]).block_of(src);
            labels.push(if side == 0 { block } else { shift + block });
            values.extend_from_slice(inputs[side].level(idx[side]).value(src));
        }
        parts.push(Partition::new(&base, &labels)?);
        levels.push(StepFunction::from_flat(&base, space, values)?);
    }
    SimpleMartingale::new(Filtration::new(parts)?, levels)
}

/// Splices `x1` onto `[0, alpha)` and `x2` onto `[alpha, 1)` below a common
/// start `alpha T1 + (1 - alpha) T2`.
///
/// Output level `j >= 1` carries level `j - 1` of each input, rescaled; the
/// shorter input repeats its last level. `alpha` must be a dyadic rational.
pub fn splice(x1: &SimpleMartingale, x2: &SimpleMartingale, alpha: f64) -> Result<SimpleMartingale> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let space = check_same_space(x1, x2)?;
    let (k1, k2) = (grid_exponent(x1, "first martingale")?, grid_exponent(x2, "second martingale")?);
    let (t1, t2) = (start_value(x1, "first martingale")?, start_value(x2, "second martingale")?);
    let Some((m, k)) = dyadic_fraction(alpha) else {
        return Err(LabError::Resolution {
            message: format!("alpha = {alpha} is not a dyadic rational of bounded denominator"),
            required_k: 31,
        });
    };
    let grid = k + k1.max(k2);
    if grid > MAX_GRID_K {
        return Err(LabError::Resolution { message: format!("alpha = {alpha} needs a finer grid than supported"), required_k: grid });
    }
    let m = m as usize;
    let map = SpliceMap { k: grid, offset: m << (grid - k), widths: [m << (grid - k - k1), ((1usize << k) - m) << (grid - k - k2)] };
    let start = Vector::new(space, t1.coords().iter().zip(t2.coords()).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect())?;
    let n = x1.len().max(x2.len());
    let schedule: Vec<(usize, usize)> = (0..n).map(|j| (j.min(x1.last_index()), j.min(x2.last_index()))).collect();
    assemble(&map, [x1, x2], &start, &schedule)
}

/// Interleaves two standard Haar martingales below the midpoint start
/// `(T1 + T2) / 2`: after the split into halves, steps of `x1` (left half)
/// and `x2` (right half) alternate, so equal lengths `N` give `2N` levels.
pub fn haar_splice(x1: &SimpleMartingale, x2: &SimpleMartingale) -> Result<SimpleMartingale> {
    let space = check_same_space(x1, x2)?;
    for (x, name) in [(x1, "first"), (x2, "second")] {
        if !x.filtration().is_standard_haar() {
            return Err(domain(format!("{name} martingale is not standard Haar")));
        }
    }
    let (k1, k2) = (grid_exponent(x1, "first martingale")?, grid_exponent(x2, "second martingale")?);
    let (t1, t2) = (start_value(x1, "first martingale")?, start_value(x2, "second martingale")?);
    let grid = k1.max(k2) + 1;
    if grid > MAX_GRID_K {
        return Err(LabError::Resolution { message: "inputs need a finer grid than supported".into(), required_k: grid });
    }
    let map = SpliceMap { k: grid, offset: 1 << (grid - 1), widths: [1 << (grid - 1 - k1), 1 << (grid - 1 - k2)] };
    let start = Vector::new(space, t1.coords().iter().zip(t2.coords()).map(|(a, b)| 0.5 * (a + b)).collect())?;
    let mut schedule = vec![(0, 0)];
    let (mut l1, mut l2) = (0, 0);
    while l1 < x1.last_index() || l2 < x2.last_index() {
        if l1 < x1.last_index() {
            l1 += 1;
            schedule.push((l1, l2));
        }
        if l2 < x2.last_index() {
            l2 += 1;
            schedule.push((l1, l2));
        }
    }
    let out = assemble(&map, [x1, x2], &start, &schedule)?;
    if !out.filtration().is_standard_haar() {
        return Err(LabError::Contract("interleaved filtration is not standard Haar".into()));
    }
    Ok(out)
}

/// Both sides of the change of variables behind concavity of `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpliceIdentity {
    /// Integral over `[0, alpha)` of `u` along the spliced paths after the start.
    pub left_integral: f64,
    /// `alpha E u({X1_j} ∪ set, X1_N)`.
    pub left_scaled: f64,
    pub right_integral: f64,
    /// `(1 - alpha) E u({X2_j} ∪ set, X2_N)`.
    pub right_scaled: f64,
    /// `E u` of the full spliced martingale, start included.
    pub full_mean: f64,
}

impl SpliceIdentity {
    /// Largest gap between the two sides of the identity.
    pub fn defect(&self) -> f64 {
        (self.left_integral - self.left_scaled).abs().max((self.right_integral - self.right_scaled).abs())
    }
}

pub fn splice_identity(
    x1: &SimpleMartingale,
    x2: &SimpleMartingale,
    alpha: f64,
    set: &[Vector],
    p: f64,
    c: f64,
    cfg: &MaximalConfig,
) -> Result<SpliceIdentity> {
    let spliced = splice(x1, x2, alpha)?;
    let tail = expected_u(&spliced, set, 1, p, c, cfg)?;
    let full = expected_u(&spliced, set, 0, p, c, cfg)?;
    let u1 = expected_u(x1, set, 0, p, c, cfg)?;
    let u2 = expected_u(x2, set, 0, p, c, cfg)?;
    let cut = (alpha * spliced.base().len() as f64) as usize;
    let probs = spliced.probabilities();
    let left_integral = (0..cut).map(|a| probs[a] * tail.per_atom[a]).sum();
    let right_integral = (cut..probs.len()).map(|a| probs[a] * tail.per_atom[a]).sum();
    Ok(SpliceIdentity {
        left_integral,
        left_scaled: alpha * u1.mean,
        right_integral,
        right_scaled: (1.0 - alpha) * u2.mean,
        full_mean: full.mean,
    })
}

/// `max over family of E u({X_j} ∪ set, X_N)`, a lower approximation of `v(set, point)`.
pub fn v_lower(set: &[Vector], point: &Vector, p: f64, c: f64, family: &[SimpleMartingale], cfg: &MaximalConfig) -> Result<f64> {
    if family.is_empty() {
        return Err(domain("v_lower needs a nonempty family"));
    }
    let mut best = f64::NEG_INFINITY;
    for (i, x) in family.iter().enumerate() {
        if x.space() != point.space() {
            return Err(structural(format!("family member {i} lives in a different space")));
        }
        let start = start_value(x, "family member")?;
        let gap = start.sub(point)?.coords().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gap > 1e-12 * (1.0 + point.norm()) {
            return Err(LabError::Contract(format!("family member {i} does not start at the point")));
        }
        best = best.max(expected_u(x, set, 0, p, c, cfg)?.mean);
    }
    Ok(best)
}

type Evaluator<'a> = dyn Fn(&[Vector], &Vector) -> Result<f64> + Sync + 'a;

/// An opaque candidate for `v`.
pub struct VCandidate<'a> {
    pub description: String,
    pub evaluator: Box<Evaluator<'a>>,
}

impl<'a> VCandidate<'a> {
    pub fn new(description: impl Into<String>, evaluator: impl Fn(&[Vector], &Vector) -> Result<f64> + Sync + 'a) -> Self {
        VCandidate { description: description.into(), evaluator: Box::new(evaluator) }
    }

    pub fn eval(&self, set: &[Vector], point: &Vector) -> Result<f64> {
        (self.evaluator)(set, point)
    }
}

/// Outcome of one property over all samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub checked: usize,
    pub failures: usize,
    /// Smallest slack; negative slack beyond the tolerance is a failure.
    pub worst_slack: Option<f64>,
}

impl PropertyCheck {
    fn new(name: &str) -> Self {
        PropertyCheck { name: name.into(), checked: 0, failures: 0, worst_slack: None }
    }

    fn record(&mut self, slack: f64) {
        self.checked += 1;
        if !(slack >= -CHECK_TOL) {
            self.failures += 1;
        }
        self.worst_slack = Some(self.worst_slack.map_or(slack, |w| w.min(slack)));
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VCheckReport {
    pub description: String,
    /// Majorant, nonpositive on singletons, absorbs the point, midpoint concave.
    pub properties: [PropertyCheck; 4],
}

/// A sample `(set, point)`.
pub type VSample = (Vec<Vector>, Vector);
/// A midpoint sample `(set, T1, T2)`.
pub type VMidpoint = (Vec<Vector>, Vector, Vector);

/// Evaluates the four defining properties of `v` on the given samples:
/// `v >= u`, `v({T}, T) <= 0`, `v(set ∪ {T}, T) = v(set, T)` and
/// `v(set, (T1 + T2)/2) >= (v(set, T1) + v(set, T2))/2`.
pub fn check_v_candidate(
    v: &VCandidate<'_>,
    samples: &[VSample],
    midpoints: &[VMidpoint],
    p: f64,
    c: f64,
    cfg: &MaximalConfig,
) -> Result<VCheckReport> {
    let mut majorant = PropertyCheck::new("v >= u");
    let mut singleton = PropertyCheck::new("v({T}, T) <= 0");
    let mut absorbs = PropertyCheck::new("v(set + {T}, T) = v(set, T)");
    let mut midpoint = PropertyCheck::new("midpoint concave");
    for (set, point) in samples {
        let value = v.eval(set, point)?;
        majorant.record(value - u_value(set, point, p, c, cfg)?.value);
        singleton.record(-v.eval(std::slice::from_ref(point), point)?);
        let mut with_point = set.clone();
        with_point.push(point.clone());
        absorbs.record(-(v.eval(&with_point, point)? - value).abs());
    }
    for (set, t1, t2) in midpoints {
        let mid = t1.add(t2)?.scaled(0.5);
        midpoint.record(v.eval(set, &mid)? - 0.5 * (v.eval(set, t1)? + v.eval(set, t2)?));
    }
    Ok(VCheckReport { description: v.description.clone(), properties: [majorant, singleton, absorbs, midpoint] })
}
