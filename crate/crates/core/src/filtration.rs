//! Atomic measure spaces, partitions, filtrations and conditional expectations,
//! plus the reductions between Haar, dyadic Haar and dyadic-interval filtrations.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, structural, LabError, Result};
use crate::spaces::{Space, Vector};

/// Finitely many atoms with positive masses. Cloning is cheap.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AtomicMeasureSpace {
    masses: Arc<[f64]>,
}

impl PartialEq for AtomicMeasureSpace {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.masses, &other.masses) || self.masses == other.masses
    }
}

impl TryFrom<Vec<f64>> for AtomicMeasureSpace {
    type Error = LabError;
    fn try_from(masses: Vec<f64>) -> Result<Self> {
        AtomicMeasureSpace::new(masses)
    }
}

impl From<AtomicMeasureSpace> for Vec<f64> {
    fn from(s: AtomicMeasureSpace) -> Vec<f64> {
        s.masses.to_vec()
    }
}

impl AtomicMeasureSpace {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() {
            return Err(domain("a measure space needs at least one atom"));
        }
        if let Some(m) = masses.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(domain(format!("atom masses must be positive and finite, got {m}")));
        }
        Ok(AtomicMeasureSpace { masses: masses.into() })
    }

    /// `n` atoms of mass `1/n`.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    /// `2^k` atoms of mass `2^-k`: the dyadic grid on the unit interval.
    pub fn dyadic_grid(k: u32) -> Result<Self> {
        if k > 26 {
            return Err(domain(format!("dyadic grid 2^{k} is too large")));
        }
        Self::new(vec![(-(k as f64)).exp2(); 1 << k])
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mass(&self, atom: usize) -> f64 {
        self.masses[atom]
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Product measure; atom `(a, b)` has index `a * other.len() + b`.
    pub fn product(&self, other: &AtomicMeasureSpace) -> AtomicMeasureSpace {
        let masses: Vec<f64> = self.masses.iter().flat_map(|a| other.masses.iter().map(move |b| a * b)).collect();
        AtomicMeasureSpace { masses: masses.into() }
    }

    /// Same atoms rescaled to total mass one.
    pub fn normalized(&self) -> AtomicMeasureSpace {
        let t = self.total();
        AtomicMeasureSpace { masses: self.masses.iter().map(|m| m / t).collect::<Vec<_>>().into() }
    }

    pub fn has_equal_atoms(&self) -> bool {
        self.masses.iter().all(|m| *m == self.masses[0])
    }
}

/// A partition of the atoms into blocks; block ids are numbered by first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    base: AtomicMeasureSpace,
    block_of: Vec<usize>,
    block_mass: Vec<f64>,
}

impl Partition {
    /// Builds a partition from arbitrary labels, one per atom.
    pub fn new(base: &AtomicMeasureSpace, labels: &[usize]) -> Result<Self> {
        if labels.len() != base.len() {
            return Err(structural(format!("{} labels for {} atoms", labels.len(), base.len())));
        }
        let mut ids: HashMap<usize, usize> = HashMap::new();
        let block_of: Vec<usize> = labels
            .iter()
            .map(|l| {
                let next = ids.len();
                *ids.entry(*l).or_insert(next)
            })
            .collect();
        let mut block_mass = vec![0.0; ids.len()];
        for (a, &b) in block_of.iter().enumerate() {
            block_mass[b] += base.mass(a);
        }
        Ok(Partition { base: base.clone(), block_of, block_mass })
    }

    pub fn trivial(base: &AtomicMeasureSpace) -> Self {
        Partition { base: base.clone(), block_of: vec![0; base.len()], block_mass: vec![base.total()] }
    }

    pub fn discrete(base: &AtomicMeasureSpace) -> Self {
        Partition { base: base.clone(), block_of: (0..base.len()).collect(), block_mass: base.masses().to_vec() }
    }

    pub fn base(&self) -> &AtomicMeasureSpace {
        &self.base
    }

    pub fn n_blocks(&self) -> usize {
        self.block_mass.len()
    }

    pub fn block_of(&self, atom: usize) -> usize {
        self.block_of[atom]
    }

    pub fn labels(&self) -> &[usize] {
        &self.block_of
    }

    pub fn block_mass(&self, block: usize) -> f64 {
        self.block_mass[block]
    }

    /// Atoms of each block, in increasing order.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_blocks()];
        for (a, &b) in self.block_of.iter().enumerate() {
            out[b].push(a);
        }
        out
    }

    /// True when every block of `self` lies inside one block of `coarse`.
    pub fn refines(&self, coarse: &Partition) -> bool {
        is_refinement(self, coarse)
    }

    /// Whether per-atom values are constant on every block (exact comparison).
    pub fn measures(&self, values: &[f64], width: usize) -> bool {
        let mut first: Vec<Option<usize>> = vec![None; self.n_blocks()];
        for (a, &b) in self.block_of.iter().enumerate() {
            match first[b] {
                None => first[b] = Some(a),
                Some(r) => {
                    if values[a * width..(a + 1) * width] != values[r * width..(r + 1) * width] {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// True iff every block of `fine` lies inside a single block of `coarse`.
pub fn is_refinement(fine: &Partition, coarse: &Partition) -> bool {
    if fine.block_of.len() != coarse.block_of.len() {
        return false;
    }
    let mut parent: Vec<Option<usize>> = vec![None; fine.n_blocks()];
    for (a, &b) in fine.block_of.iter().enumerate() {
        let c = coarse.block_of[a];
        match parent[b] {
            None => parent[b] = Some(c),
            Some(prev) if prev != c => return false,
            _ => {}
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaarKind {
    /// One block splits in two at every step.
    General,
    /// Every split ratio is a dyadic fraction.
    Dyadic,
    /// Every split halves the mass.
    Standard,
}

/// The block split between two consecutive Haar levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Split {
    /// Block id at the coarser level.
    pub parent: usize,
    /// The two block ids at the finer level.
    pub children: [usize; 2],
}

/// `r = m / 2^k` in lowest terms with `k <= 30`, if it is such a fraction.
pub fn dyadic_fraction(r: f64) -> Option<(u64, u32)> {
    if !(r > 0.0 && r < 1.0) {
        return None;
    }
    (0..=30u32).find_map(|k| {
        let x = r * (k as f64).exp2();
        (x == x.trunc()).then_some((x as u64, k))
    })
}

/// An increasing sequence of partitions of one atomic space; level 0 comes first.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtration {
    levels: Vec<Partition>,
}

impl Filtration {
    pub fn new(levels: Vec<Partition>) -> Result<Self> {
        let Some(first) = levels.first() else {
            return Err(domain("a filtration needs at least one level"));
        };
        for (j, pair) in levels.windows(2).enumerate() {
            if pair[1].base != first.base {
                return Err(structural(format!("level {} lives on a different base", j + 1)));
            }
            if !is_refinement(&pair[1], &pair[0]) {
                return Err(structural(format!("level {} does not refine level {j}", j + 1)));
            }
        }
        Ok(Filtration { levels })
    }

    pub fn base(&self) -> &AtomicMeasureSpace {
        &self.levels[0].base
    }

    /// Number of levels, including level 0.
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, j: usize) -> &Partition {
        &self.levels[j]
    }

    pub fn levels(&self) -> &[Partition] {
        &self.levels
    }

    pub fn last(&self) -> &Partition {
        self.levels.last().expect("nonempty")
    }

    /// The split from level `j - 1` to level `j`, when exactly one block splits in two.
    pub fn split(&self, j: usize) -> Option<Split> {
        if j == 0 || j >= self.len() {
            return None;
        }
        let (coarse, fine) = (&self.levels[j - 1], &self.levels[j]);
        if fine.n_blocks() != coarse.n_blocks() + 1 {
            return None;
        }
        let mut seen: Vec<Option<usize>> = vec![None; coarse.n_blocks()];
        for a in 0..fine.block_of.len() {
            let c = coarse.block_of[a];
            let f = fine.block_of[a];
            match seen[c] {
                None => seen[c] = Some(f),
                Some(g) if g != f => {
                    let (lo, hi) = if g < f { (g, f) } else { (f, g) };
                    return Some(Split { parent: c, children: [lo, hi] });
                }
                _ => {}
            }
        }
        None
    }

    /// The most specific Haar kind this filtration satisfies, if any.
    ///
    /// Level 0 must be trivial. Split ratios are tested exactly, so masses
    /// that are not exactly representable dyadic rationals fail the
    /// dyadic and standard tests rather than being rounded.
    pub fn haar_kind(&self) -> Option<HaarKind> {
        if self.levels[0].n_blocks() != 1 {
            return None;
        }
        let mut kind = HaarKind::Standard;
        for j in 1..self.len() {
            let s = self.split(j)?;
            let parent = self.levels[j - 1].block_mass(s.parent);
            let child = self.levels[j].block_mass(s.children[0]);
            let other = self.levels[j].block_mass(s.children[1]);
            if kind == HaarKind::Standard && !(child == other && 2.0 * child == parent) {
                kind = HaarKind::Dyadic;
            }
            if kind == HaarKind::Dyadic && (dyadic_fraction(child / parent).is_none() || child + other != parent) {
                kind = HaarKind::General;
            }
        }
        Some(kind)
    }

    pub fn is_haar(&self) -> bool {
        self.haar_kind().is_some()
    }

    pub fn is_dyadic_haar(&self) -> bool {
        matches!(self.haar_kind(), Some(HaarKind::Dyadic | HaarKind::Standard))
    }

    pub fn is_standard_haar(&self) -> bool {
        self.haar_kind() == Some(HaarKind::Standard)
    }

    /// The first `n` levels.
    pub fn truncated(&self, n: usize) -> Result<Filtration> {
        if n == 0 || n > self.len() {
            return Err(domain(format!("cannot keep {n} of {} levels", self.len())));
        }
        Ok(Filtration { levels: self.levels[..n].to_vec() })
    }

    /// The levels at the given nondecreasing indices.
    pub fn subfiltration(&self, indices: &[usize]) -> Result<Filtration> {
        if indices.is_empty() || indices.windows(2).any(|w| w[0] > w[1]) {
            return Err(domain("subfiltration indices must be nonempty and nondecreasing"));
        }
        if let Some(i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(domain(format!("level {i} out of range")));
        }
        Ok(Filtration { levels: indices.iter().map(|&i| self.levels[i].clone()).collect() })
    }

    /// The same filtration on `base x inner`, ignoring the inner coordinate.
    pub fn lift_product(&self, inner: &AtomicMeasureSpace) -> Filtration {
        let base = self.base().product(inner);
        let m = inner.len();
        let levels = self
            .levels
            .iter()
            .map(|p| {
                let labels: Vec<usize> = p.block_of.iter().flat_map(|&b| std::iter::repeat_n(b, m)).collect();
                Partition::new(&base, &labels).expect("labels cover the product")
            })
            .collect();
        Filtration { levels }
    }

    /// Splits every atom into `2^r` equal atoms.
    pub fn refine_grid(&self, r: u32) -> Result<Filtration> {
        Ok(self.lift_product(&AtomicMeasureSpace::dyadic_grid(r)?))
    }
}

/// Partition of `2^k` grid atoms into the dyadic intervals of length `2^-j`.
pub fn dyadic_partition(base: &AtomicMeasureSpace, k: u32, j: u32) -> Result<Partition> {
    if base.len() != 1usize << k || j > k {
        return Err(structural(format!("dyadic level {j} needs a grid of 2^{k} atoms")));
    }
    let labels: Vec<usize> = (0..base.len()).map(|a| a >> (k - j)).collect();
    Partition::new(base, &labels)
}

pub(crate) fn dyadic_filtration_on(k: u32) -> Result<(AtomicMeasureSpace, Filtration)> {
    let base = AtomicMeasureSpace::dyadic_grid(k)?;
    let levels = (0..=k).map(|j| dyadic_partition(&base, k, j)).collect::<Result<Vec<_>>>()?;
    Ok((base, Filtration { levels }))
}

/// The dyadic intervals of lengths `1, 1/2, ..., 2^-k` on a grid of `2^k` atoms.
pub fn make_dyadic_filtration(k: u32) -> Result<(AtomicMeasureSpace, Filtration)> {
    if k == 0 {
        return Err(domain("dyadic filtration needs K >= 1"));
    }
    dyadic_filtration_on(k)
}

/// One vector per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    base: AtomicMeasureSpace,
    space: Space,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(base: &AtomicMeasureSpace, values: &[Vector]) -> Result<Self> {
        if values.len() != base.len() {
            return Err(structural(format!("{} values for {} atoms", values.len(), base.len())));
        }
        let space = crate::spaces::common_space(values)?;
        let flat = values.iter().flat_map(|v| v.coords().iter().copied()).collect();
        Ok(StepFunction { base: base.clone(), space, values: flat })
    }

    /// Values stored atom after atom, `space.dim()` reals each.
    pub fn from_flat(base: &AtomicMeasureSpace, space: Space, values: Vec<f64>) -> Result<Self> {
        if values.len() != base.len() * space.dim() {
            return Err(structural(format!("{} reals do not fill {} atoms of dimension {}", values.len(), base.len(), space.dim())));
        }
        Ok(StepFunction { base: base.clone(), space, values })
    }

    /// Real-valued function, viewed in the one-dimensional Euclidean space.
    pub fn scalar(base: &AtomicMeasureSpace, values: &[f64]) -> Result<Self> {
        Self::from_flat(base, Space::lp(2.0, 1)?, values.to_vec())
    }

    pub fn constant(base: &AtomicMeasureSpace, v: &Vector) -> Self {
        let values = (0..base.len()).flat_map(|_| v.coords().iter().copied()).collect();
        StepFunction { base: base.clone(), space: v.space(), values }
    }

    pub fn zeros(base: &AtomicMeasureSpace, space: Space) -> Self {
        StepFunction { base: base.clone(), space, values: vec![0.0; base.len() * space.dim()] }
    }

    pub fn base(&self) -> &AtomicMeasureSpace {
        &self.base
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, atom: usize) -> &[f64] {
        let d = self.space.dim();
        &self.values[atom * d..(atom + 1) * d]
    }

    pub fn vector(&self, atom: usize) -> Vector {
        Vector::new(self.space, self.value(atom).to_vec()).expect("stored with the space dimension")
    }

    /// Norm of the value at every atom.
    pub fn norms(&self) -> Vec<f64> {
        (0..self.len()).map(|a| self.space.norm_of(self.value(a))).collect()
    }

    fn check_compatible(&self, other: &StepFunction) -> Result<()> {
        if self.base != other.base || self.space != other.space {
            return Err(structural("step functions live on different bases or spaces"));
        }
        Ok(())
    }

    pub fn add(&self, other: &StepFunction) -> Result<StepFunction> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(StepFunction { values, ..self.clone() })
    }

    pub fn sub(&self, other: &StepFunction) -> Result<StepFunction> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(StepFunction { values, ..self.clone() })
    }

    pub fn scaled(&self, c: f64) -> StepFunction {
        StepFunction { values: self.values.iter().map(|v| c * v).collect(), ..self.clone() }
    }

    /// Multiplies the value at each atom by the matching real.
    pub fn mul_scalar(&self, weights: &[f64]) -> Result<StepFunction> {
        if weights.len() != self.len() {
            return Err(structural("one weight per atom required"));
        }
        let d = self.space.dim();
        let values = self.values.iter().enumerate().map(|(i, v)| v * weights[i / d]).collect();
        Ok(StepFunction { values, ..self.clone() })
    }

    /// Mass-weighted sum of the values.
    pub fn integral(&self) -> Vec<f64> {
        self.integral_over(0..self.len())
    }

    pub fn integral_over(&self, atoms: impl IntoIterator<Item = usize>) -> Vec<f64> {
        let mut out = vec![0.0; self.space.dim()];
        for a in atoms {
            let m = self.base.mass(a);
            for (o, v) in out.iter_mut().zip(self.value(a)) {
                *o += m * v;
            }
        }
        out
    }

    /// Largest coordinatewise difference to `other`.
    pub fn max_abs_diff(&self, other: &StepFunction) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }
}

/// `E(f | pi)`: the mass-weighted block averages of `f`.
pub fn conditional_expectation(f: &StepFunction, pi: &Partition) -> Result<StepFunction> {
    if f.base != pi.base {
        return Err(structural("function and partition live on different bases"));
    }
    let d = f.space.dim();
    let mut sums = vec![0.0; pi.n_blocks() * d];
    for a in 0..f.len() {
        let b = pi.block_of[a];
        let m = f.base.mass(a);
        for (s, v) in sums[b * d..(b + 1) * d].iter_mut().zip(f.value(a)) {
            *s += m * v;
        }
    }
    for b in 0..pi.n_blocks() {
        let mass = pi.block_mass[b];
        sums[b * d..(b + 1) * d].iter_mut().for_each(|s| *s /= mass);
    }
    let values = (0..f.len()).flat_map(|a| {
        let b = pi.block_of[a];
        sums[b * d..(b + 1) * d].iter().copied()
    });
    Ok(StepFunction { values: values.collect(), ..f.clone() })
}

/// A random Haar filtration with `steps` splits.
///
/// Each step picks uniformly among the cuts of the most preferred tier that
/// leave enough split capacity for the remaining steps. Dyadic splits prefer
/// the ratios 1/4, 1/2 and 3/4 into even atom counts, which keeps the dyadic
/// grid of the equivalent filtration small.
pub fn random_haar_filtration(base: &AtomicMeasureSpace, steps: usize, kind: HaarKind, seed: u64) -> Result<Filtration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks: Vec<Vec<usize>> = vec![(0..base.len()).collect()];
    let mut levels = vec![Partition::trivial(base)];
    let mut capacity = split_capacity(base, &blocks[0], kind);
    for step in 0..steps {
        let remaining = steps - step - 1;
        let mut candidates: Vec<(u8, usize, Vec<usize>, usize)> = Vec::new();
        for (b, atoms) in blocks.iter().enumerate() {
            if atoms.len() < 2 {
                continue;
            }
            let mut order = atoms.clone();
            order.shuffle(&mut rng);
            let total: f64 = order.iter().map(|&a| base.mass(a)).sum();
            let others = capacity - split_capacity(base, atoms, kind);
            let mut prefix = 0.0;
            for c in 1..order.len() {
                prefix += base.mass(order[c - 1]);
                let tier = match kind {
                    HaarKind::General => Some(0),
                    HaarKind::Standard => (2.0 * prefix == total).then_some(0),
                    HaarKind::Dyadic => dyadic_fraction(prefix / total).map(|(_, k)| {
                        let rest = order.len() - c;
                        // Children with atom counts divisible by 4 can be split dyadically again.
                        match (k <= 2, c % 4 == 0 && rest % 4 == 0, c % 2 == 0 && rest % 2 == 0) {
                            (true, true, _) => 3,
                            (true, false, true) => 2,
                            (true, false, false) => 1,
                            _ => 0,
                        }
                    }),
                };
                // Keep enough splits in reserve for the remaining steps.
                let feasible = || others + split_capacity(base, &order[..c], kind) + split_capacity(base, &order[c..], kind) >= remaining;
                if let Some(t) = tier.filter(|_| feasible()) {
                    candidates.push((t, b, order.clone(), c));
                }
            }
        }
        let Some(top) = candidates.iter().map(|c| c.0).max() else {
            return Err(LabError::Construction(format!("no block admits a {kind:?} split at step {}", step + 1)));
        };
        candidates.retain(|c| c.0 == top);
        let (_, b, order, c) = candidates.swap_remove(rng.random_range(0..candidates.len()));
        let mut first = order[..c].to_vec();
        let mut second = order[c..].to_vec();
        first.sort_unstable();
        second.sort_unstable();
        capacity =
            capacity - split_capacity(base, &blocks[b], kind) + split_capacity(base, &first, kind) + split_capacity(base, &second, kind);
        blocks[b] = first;
        blocks.push(second);
        levels.push(partition_from_blocks(base, &blocks));
    }
    Filtration::new(levels)
}

/// Number of further splits of the given kind a block admits. For `n` equal
/// atoms with `n = 2^a m`, `m` odd, dyadic and standard splits stop after
/// `2^a - 1`; unequal atoms are counted optimistically.
fn split_capacity(base: &AtomicMeasureSpace, atoms: &[usize], kind: HaarKind) -> usize {
    let n = atoms.len();
    if n == 0 {
        return 0;
    }
    let equal = atoms.iter().all(|&a| base.mass(a) == base.mass(atoms[0]));
    match kind {
        HaarKind::Dyadic | HaarKind::Standard if equal => (1usize << n.trailing_zeros()) - 1,
        _ => n - 1,
    }
}

fn partition_from_blocks(base: &AtomicMeasureSpace, blocks: &[Vec<usize>]) -> Partition {
    let mut labels = vec![0; base.len()];
    for (b, atoms) in blocks.iter().enumerate() {
        for &a in atoms {
            labels[a] = b;
        }
    }
    Partition::new(base, &labels).expect("blocks cover the base")
}

/// Inserts intermediate levels so that exactly one block splits per step.
///
/// Returns the Haar filtration and the index `K_j` at which each original
/// level reappears. At each step the lowest-id block that the next target
/// level splits is divided into the target block of lowest id inside it
/// and the rest.
pub fn haar_embed(f: &Filtration) -> Result<(Filtration, Vec<usize>)> {
    let base = f.base().clone();
    let mut current = Partition::trivial(&base);
    let mut levels = vec![current.clone()];
    let mut index = Vec::with_capacity(f.len());
    for target in f.levels() {
        while current.n_blocks() < target.n_blocks() {
            let blocks = current.blocks();
            let (b, chosen) = blocks
                .iter()
                .enumerate()
                .find_map(|(b, atoms)| {
                    let lowest = atoms.iter().map(|&a| target.block_of(a)).min()?;
                    atoms.iter().any(|&a| target.block_of(a) != lowest).then_some((b, lowest))
                })
                .ok_or_else(|| structural("target level is not a refinement of the embedding"))?;
            let mut labels = current.labels().to_vec();
            let fresh = current.n_blocks();
            for &a in &blocks[b] {
                if target.block_of(a) != chosen {
                    labels[a] = fresh;
                }
            }
            current = Partition::new(&base, &labels)?;
            levels.push(current.clone());
        }
        index.push(levels.len() - 1);
    }
    Ok((Filtration::new(levels)?, index))
}

/// Output of [`dyadic_haar_approximate`].
#[derive(Debug, Clone, PartialEq)]
pub struct HaarApproximation {
    pub filtration: Filtration,
    /// `mu(B delta B~)` for every block id of every level, as probabilities.
    pub symmetric_differences: Vec<Vec<f64>>,
    pub max_symmetric_difference: f64,
}

/// For every level and block, the largest number of later splits along one chain of descendants.
fn split_depths(f: &Filtration) -> Option<Vec<Vec<usize>>> {
    let mut depths = vec![vec![0; f.last().n_blocks()]];
    for j in (1..f.len()).rev() {
        let split = f.split(j)?;
        let (coarse, fine) = (f.level(j - 1), f.level(j));
        let below = depths.last()?;
        let level = coarse
            .blocks()
            .iter()
            .enumerate()
            .map(|(b, atoms)| {
                if b == split.parent {
                    1 + below[split.children[0]].max(below[split.children[1]])
                } else {
                    below[fine.block_of(atoms[0])]
                }
            })
            .collect();
        depths.push(level);
    }
    depths.reverse();
    Some(depths)
}

fn symmetric_difference(x: &[usize], y: &[usize]) -> usize {
    let inter = x.iter().filter(|a| y.binary_search(a).is_ok()).count();
    x.len() + y.len() - 2 * inter
}

/// Greedy dyadic approximation on equal atoms; `None` when some block cannot split.
///
/// A child `B~'` of the approximating parent keeps the parent atoms lying in
/// the target block `B'` and has a dyadic fraction of the parent's atoms,
/// the coarsest one within the error allowance, so that later splits of the
/// child remain possible. A child whose descendants split `d` more times may
/// use a `1 / (d + 1)` share of the error still available to it, which keeps
/// every block of every level below `eps`.
fn greedy_dyadic(f: &Filtration, eps: f64) -> Option<HaarApproximation> {
    let base = f.base();
    let n_atoms = base.len() as f64;
    let limit = eps * n_atoms - 1e-9;
    let depths = split_depths(f)?;
    let mut approx: Vec<Vec<usize>> = vec![(0..base.len()).collect()];
    let mut levels = vec![Partition::trivial(base)];
    let mut diffs = vec![vec![0.0]];
    let mut worst: f64 = 0.0;
    for j in 1..f.len() {
        let coarse = f.level(j - 1);
        let fine = f.level(j);
        let split = f.split(j)?;
        let reps: Vec<usize> = coarse.blocks().iter().map(|atoms| atoms[0]).collect();
        let fine_blocks = fine.blocks();
        let mut next: Vec<Vec<usize>> = vec![Vec::new(); fine.n_blocks()];
        for (b, atoms) in approx.iter().enumerate() {
            if b != split.parent {
                next[fine.block_of(reps[b])] = atoms.clone();
            }
        }
        let parent = &approx[split.parent];
        let n = parent.len();
        let targets = [&fine_blocks[split.children[0]], &fine_blocks[split.children[1]]];
        let stray = parent.iter().filter(|&&a| coarse.block_of(a) != split.parent).count();
        let allowed: Vec<f64> = (0..2)
            .map(|i| {
                let missing = targets[i].iter().filter(|a| parent.binary_search(a).is_err()).count();
                let base_err = (missing + stray) as f64;
                let d = depths[j][split.children[i]] as f64;
                limit - (limit - base_err).max(0.0) * d / (d + 1.0)
            })
            .collect();
        // Atoms of the parent in each target; strays first among the extras.
        let inside: Vec<Vec<usize>> =
            targets.iter().map(|t| parent.iter().filter(|a| t.binary_search(a).is_ok()).copied().collect()).collect();
        let extras: Vec<Vec<usize>> = (0..2)
            .map(|i| {
                let (mut out, sib): (Vec<usize>, Vec<usize>) =
                    parent.iter().filter(|a| targets[i].binary_search(a).is_err()).partition(|&&a| coarse.block_of(a) != split.parent);
                out.extend(sib);
                out
            })
            .collect();
        let mut found: Option<(usize, Vec<usize>, Vec<usize>)> = None;
        'scales: for s in 1..=n.trailing_zeros() {
            let unit = n >> s;
            let mut best: Option<(usize, Vec<usize>, Vec<usize>, usize)> = None;
            for pos in 0..2 {
                let c0 = inside[pos].len();
                let lo = (c0 / unit).clamp(1, (1 << s) - 1);
                let hi = c0.div_ceil(unit).clamp(1, (1 << s) - 1);
                for d in [lo, hi] {
                    let c = d * unit;
                    let mut chosen: Vec<usize> = if c >= c0 {
                        inside[pos].iter().chain(extras[pos].iter().take(c - c0)).copied().collect()
                    } else {
                        inside[pos][..c].to_vec()
                    };
                    chosen.sort_unstable();
                    let rest: Vec<usize> = parent.iter().filter(|a| chosen.binary_search(a).is_err()).copied().collect();
                    let e_pos = symmetric_difference(&chosen, targets[pos]);
                    let e_other = symmetric_difference(&rest, targets[1 - pos]);
                    if e_pos as f64 <= allowed[pos] && e_other as f64 <= allowed[1 - pos] {
                        let err = e_pos.max(e_other);
                        if best.as_ref().is_none_or(|b| err < b.3) {
                            best = Some((pos, chosen, rest, err));
                        }
                    }
                }
            }
            if let Some((pos, chosen, rest, _)) = best {
                found = Some((pos, chosen, rest));
                break 'scales;
            }
        }
        let (pos, chosen, rest) = found?;
        next[split.children[pos]] = chosen;
        next[split.children[1 - pos]] = rest;
        let level_diffs: Vec<f64> = next.iter().zip(&fine_blocks).map(|(x, y)| symmetric_difference(x, y) as f64 / n_atoms).collect();
        worst = level_diffs.iter().copied().fold(worst, f64::max);
        diffs.push(level_diffs);
        levels.push(partition_from_blocks(base, &next));
        approx = next;
    }
    Some(HaarApproximation { filtration: Filtration::new(levels).ok()?, symmetric_differences: diffs, max_symmetric_difference: worst })
}

const MAX_REFINED_ATOMS: usize = 1 << 22;

/// A dyadic Haar filtration whose blocks differ from those of `f` by measure below `eps`.
///
/// Works on equal atoms: a child of a block of `n` atoms must receive `c`
/// atoms with `c / n` a dyadic fraction. The child keeps the parent atoms
/// it should contain, adding or dropping the fewest atoms needed. When the
/// grid is too coarse the error names the grid size that succeeds.
pub fn dyadic_haar_approximate(f: &Filtration, eps: f64) -> Result<HaarApproximation> {
    if !f.is_haar() {
        return Err(domain("dyadic approximation needs a Haar filtration"));
    }
    if !f.base().has_equal_atoms() {
        return Err(domain("dyadic approximation needs equal atoms"));
    }
    if !(eps > 0.0) {
        return Err(domain("eps must be positive"));
    }
    let k = (f.base().len() as f64).log2().ceil() as u32;
    if let Some(a) = greedy_dyadic(f, eps) {
        if a.max_symmetric_difference < eps {
            return Ok(a);
        }
    }
    let mut r = 1;
    while f.base().len() << r <= MAX_REFINED_ATOMS {
        if let Some(a) = greedy_dyadic(&f.refine_grid(r)?, eps) {
            if a.max_symmetric_difference < eps {
                return Err(LabError::Resolution {
                    message: format!("eps = {eps} is not reachable on {} atoms", f.base().len()),
                    required_k: k + r,
                });
            }
        }
        r += 1;
    }
    Err(LabError::Resolution {
        message: format!("eps = {eps} is not reachable on any grid up to {MAX_REFINED_ATOMS} atoms"),
        required_k: k + r,
    })
}

/// A dyadic Haar filtration transported onto the dyadic grid of `[0, 1)`.
///
/// Level `j` maps onto a union of dyadic intervals of length `2^-K_j`, and
/// each such interval meets the later blocks in the proportions of their
/// masses, which makes conditional expectations on the two sides agree.
#[derive(Debug, Clone, PartialEq)]
pub struct BooleanIsomorphism {
    source: Filtration,
    grid_k: u32,
    level_k: Vec<u32>,
    /// Final-level block of the source at each grid cell.
    cell_block: Vec<usize>,
    grid: AtomicMeasureSpace,
}

const MAX_GRID_K: u32 = 22;

/// Builds the equivalent filtration on the dyadic grid.
///
/// A split with ratio `m / 2^k` refines the grid by `k` levels and hands
/// the first `m` children of every current interval of the parent block to
/// the first child.
pub fn boolean_isomorphism(f: &Filtration) -> Result<BooleanIsomorphism> {
    if !f.is_dyadic_haar() {
        return Err(domain("boolean isomorphism needs a dyadic Haar filtration"));
    }
    let mut k = 0u32;
    let mut level_k = vec![0u32];
    // Block id at the current level of every cell of the current grid.
    let mut cells: Vec<usize> = vec![0];
    for j in 1..f.len() {
        let coarse = f.level(j - 1);
        let fine = f.level(j);
        let s = f.split(j).expect("Haar levels split");
        let ratio = fine.block_mass(s.children[0]) / coarse.block_mass(s.parent);
        let (m, step) = dyadic_fraction(ratio).expect("dyadic split");
        if k + step > MAX_GRID_K {
            return Err(LabError::Resolution { message: format!("equivalent grid exceeds 2^{MAX_GRID_K} cells"), required_k: k + step });
        }
        let reps: Vec<usize> = coarse.blocks().iter().map(|a| a[0]).collect();
        let relabel: Vec<usize> = reps.iter().map(|&a| fine.block_of(a)).collect();
        let width = 1usize << step;
        let mut next = Vec::with_capacity(cells.len() * width);
        for &b in &cells {
            for t in 0..width {
                next.push(if b == s.parent {
                    if (t as u64) < m {
                        s.children[0]
                    } else {
                        s.children[1]
                    }
                } else {
                    relabel[b]
                });
            }
        }
        cells = next;
        k += step;
        level_k.push(k);
    }
    Ok(BooleanIsomorphism { source: f.clone(), grid_k: k, level_k, cell_block: cells, grid: AtomicMeasureSpace::dyadic_grid(k)? })
}

impl BooleanIsomorphism {
    pub fn grid(&self) -> &AtomicMeasureSpace {
        &self.grid
    }

    pub fn grid_k(&self) -> u32 {
        self.grid_k
    }

    /// The dyadic level `K_j` matching each source level.
    pub fn level_k(&self) -> &[u32] {
        &self.level_k
    }

    /// Final-level source block at each grid cell.
    pub fn cell_block(&self) -> &[usize] {
        &self.cell_block
    }

    /// Image of the source filtration on the grid.
    pub fn image(&self) -> Filtration {
        let last = self.source.last();
        let reps: Vec<usize> = last.blocks().iter().map(|a| a[0]).collect();
        let levels = self
            .source
            .levels()
            .iter()
            .map(|p| {
                let labels: Vec<usize> = self.cell_block.iter().map(|&c| p.block_of(reps[c])).collect();
                Partition::new(&self.grid, &labels).expect("one label per cell")
            })
            .collect();
        Filtration { levels }
    }

    /// The dyadic-interval levels `D_{K_j}` on the grid.
    pub fn dyadic_levels(&self) -> Filtration {
        let levels = self.level_k.iter().map(|&kj| dyadic_partition(&self.grid, self.grid_k, kj).expect("kj <= k")).collect();
        Filtration { levels }
    }

    /// Transports `E(f | last level)` onto the grid.
    pub fn push_forward(&self, f: &StepFunction) -> Result<StepFunction> {
        if f.base() != self.source.base() {
            return Err(structural("function lives on a different base"));
        }
        let projected = conditional_expectation(f, self.source.last())?;
        let reps: Vec<usize> = self.source.last().blocks().iter().map(|a| a[0]).collect();
        let values = self.cell_block.iter().flat_map(|&c| projected.value(reps[c]).iter().copied()).collect();
        StepFunction::from_flat(&self.grid, f.space(), values)
    }

    /// Transports a grid function that is constant on each mapped final block back to the source atoms.
    pub fn pull_back(&self, g: &StepFunction) -> Result<StepFunction> {
        if g.base() != &self.grid {
            return Err(structural("function does not live on the grid"));
        }
        let last = self.source.last();
        let mut block_value: Vec<Option<usize>> = vec![None; last.n_blocks()];
        for (cell, &c) in self.cell_block.iter().enumerate() {
            match block_value[c] {
                None => block_value[c] = Some(cell),
                Some(first) => {
                    let gap = g.value(first).iter().zip(g.value(cell)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    if gap > 1e-12 * (1.0 + g.value(first).iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
                        return Err(LabError::Contract(format!("grid function varies inside block {c}")));
                    }
                }
            }
        }
        let values = (0..self.source.base().len())
            .flat_map(|a| {
                let cell = block_value[last.block_of(a)].expect("every block has cells");
                g.value(cell).iter().copied()
            })
            .collect();
        StepFunction::from_flat(self.source.base(), g.space(), values)
    }
}

/// An outer space, an inner space and their product.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductBase {
    pub outer: AtomicMeasureSpace,
    pub inner: AtomicMeasureSpace,
    pub product: AtomicMeasureSpace,
}

impl ProductBase {
    pub fn new(outer: &AtomicMeasureSpace, inner: &AtomicMeasureSpace) -> Self {
        ProductBase { outer: outer.clone(), inner: inner.clone(), product: outer.product(inner) }
    }

    /// Product atom index of `(outer, inner)`.
    pub fn index(&self, outer: usize, inner: usize) -> usize {
        outer * self.inner.len() + inner
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scalar(base: &AtomicMeasureSpace, v: &[f64]) -> StepFunction {
        StepFunction::scalar(base, v).unwrap()
    }

    #[test]
    fn masses_are_validated() {
        assert!(AtomicMeasureSpace::new(vec![]).is_err());
        assert!(AtomicMeasureSpace::new(vec![0.5, 0.0]).is_err());
        assert!(AtomicMeasureSpace::new(vec![0.5, f64::NAN]).is_err());
        let s = AtomicMeasureSpace::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(s.total(), 1.0);
        assert_eq!(s.product(&s).masses(), &[0.0625, 0.1875, 0.1875, 0.5625]);
    }

    #[test]
    fn partitions_are_canonical() {
        let s = AtomicMeasureSpace::uniform(4).unwrap();
        let p = Partition::new(&s, &[7, 3, 7, 9]).unwrap();
        assert_eq!(p.labels(), &[0, 1, 0, 2]);
        assert_eq!(p.blocks(), vec![vec![0, 2], vec![1], vec![3]]);
        assert_eq!(p.block_mass(0), 0.5);
        assert!(Partition::new(&s, &[0, 1]).is_err());
    }

    #[test]
    fn refinement_checks() {
        let s = AtomicMeasureSpace::uniform(4).unwrap();
        let a = Partition::new(&s, &[0, 0, 1, 1]).unwrap();
        let b = Partition::new(&s, &[0, 1, 1, 2]).unwrap();
        assert!(is_refinement(&a, &a));
        assert!(is_refinement(&a, &Partition::trivial(&s)));
        assert!(is_refinement(&Partition::discrete(&s), &b));
        assert!(!is_refinement(&a, &b));
        assert!(!is_refinement(&b, &a));
        assert!(Filtration::new(vec![b, a]).is_err());
    }

    #[test]
    fn conditional_expectation_examples() {
        let s = AtomicMeasureSpace::new(vec![0.25, 0.75]).unwrap();
        let f = scalar(&s, &[4.0, 0.0]);
        let e = conditional_expectation(&f, &Partition::trivial(&s)).unwrap();
        assert_eq!(e.values(), &[1.0, 1.0]);
        assert_eq!(conditional_expectation(&f, &Partition::discrete(&s)).unwrap(), f);
        let other = AtomicMeasureSpace::uniform(2).unwrap();
        assert!(conditional_expectation(&f, &Partition::trivial(&other)).is_err());
    }

    #[test]
    fn dyadic_filtration_shape() {
        let (base, f) = make_dyadic_filtration(3).unwrap();
        assert_eq!(base.len(), 8);
        assert_eq!(f.len(), 4);
        for j in 0..4 {
            assert_eq!(f.level(j).n_blocks(), 1 << j);
        }
        assert!(make_dyadic_filtration(0).is_err());
        assert!(!f.is_haar());
    }

    #[test]
    fn random_haar_kinds() {
        let base = AtomicMeasureSpace::dyadic_grid(5).unwrap();
        let trivial = random_haar_filtration(&base, 0, HaarKind::General, 1).unwrap();
        assert_eq!(trivial.len(), 1);
        assert_eq!(trivial.level(0).n_blocks(), 1);
        for seed in 0..20 {
            let s = random_haar_filtration(&base, 8, HaarKind::Standard, seed).unwrap();
            assert_eq!(s.haar_kind(), Some(HaarKind::Standard));
            let d = random_haar_filtration(&base, 8, HaarKind::Dyadic, seed).unwrap();
            assert!(d.is_dyadic_haar());
            for j in 1..d.len() {
                let sp = d.split(j).unwrap();
                let r = d.level(j).block_mass(sp.children[0]) / d.level(j - 1).block_mass(sp.parent);
                assert!(dyadic_fraction(r).is_some());
            }
            let g = random_haar_filtration(&base, 12, HaarKind::General, seed).unwrap();
            assert!(g.is_haar());
            for j in 0..g.len() {
                assert_eq!(g.level(j).n_blocks(), j + 1);
            }
        }
    }

    #[test]
    fn dyadic_generation_reaches_full_depth() {
        for k in 1..=6u32 {
            let base = AtomicMeasureSpace::dyadic_grid(k).unwrap();
            let steps = (1usize << k) - 1;
            for seed in 0..10 {
                for kind in [HaarKind::Dyadic, HaarKind::Standard] {
                    let f = random_haar_filtration(&base, steps, kind, seed).unwrap();
                    assert_eq!(f.last().n_blocks(), base.len());
                }
            }
        }
        let uneven = AtomicMeasureSpace::new(vec![0.0625; 12]).unwrap();
        assert!(random_haar_filtration(&uneven, 3, HaarKind::Dyadic, 0).is_ok());
        assert!(matches!(random_haar_filtration(&uneven, 4, HaarKind::Dyadic, 0), Err(LabError::Construction(_))));
    }

    #[test]
    fn standard_kind_can_run_out_of_splits() {
        let base = AtomicMeasureSpace::uniform(3).unwrap();
        assert!(matches!(random_haar_filtration(&base, 1, HaarKind::Standard, 0), Err(LabError::Construction(_))));
    }

    #[test]
    fn haar_embed_examples() {
        let (_, d) = make_dyadic_filtration(2).unwrap();
        let (h, k) = haar_embed(&d).unwrap();
        assert_eq!(k, vec![0, 1, 3]);
        assert!(h.is_haar());
        for (j, &kj) in k.iter().enumerate() {
            assert_eq!(h.level(kj), d.level(j));
        }
        let base = AtomicMeasureSpace::dyadic_grid(4).unwrap();
        let g = random_haar_filtration(&base, 6, HaarKind::General, 3).unwrap();
        let (same, k) = haar_embed(&g).unwrap();
        assert_eq!(same, g);
        assert_eq!(k, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn dyadic_fractions() {
        assert_eq!(dyadic_fraction(0.5), Some((1, 1)));
        assert_eq!(dyadic_fraction(0.375), Some((3, 3)));
        assert_eq!(dyadic_fraction(0.4), None);
        assert_eq!(dyadic_fraction(1.0), None);
    }

    #[test]
    fn approximation_of_a_dyadic_filtration_is_exact() {
        let base = AtomicMeasureSpace::dyadic_grid(5).unwrap();
        let d = random_haar_filtration(&base, 7, HaarKind::Dyadic, 9).unwrap();
        let a = dyadic_haar_approximate(&d, 1e-9).unwrap();
        assert_eq!(a.filtration, d);
        assert_eq!(a.max_symmetric_difference, 0.0);
    }

    #[test]
    fn approximation_of_a_non_dyadic_split() {
        // 32 atoms split 12 | 20, then the block of 12 splits 5 | 7, which is not dyadic.
        let base = AtomicMeasureSpace::dyadic_grid(5).unwrap();
        let level1: Vec<usize> = (0..32).map(|a| usize::from(a >= 12)).collect();
        let level2: Vec<usize> = (0..32)
            .map(|a| {
                if a < 5 {
                    0
                } else if a < 12 {
                    1
                } else {
                    2
                }
            })
            .collect();
        let f = Filtration::new(vec![
            Partition::trivial(&base),
            Partition::new(&base, &level1).unwrap(),
            Partition::new(&base, &level2).unwrap(),
        ])
        .unwrap();
        assert_eq!(f.haar_kind(), Some(HaarKind::General));
        let coarse = dyadic_haar_approximate(&f, 0.5).unwrap();
        assert!(coarse.filtration.is_dyadic_haar());
        assert!(coarse.max_symmetric_difference < 0.5);
        let err = dyadic_haar_approximate(&f, 0.01).unwrap_err();
        let LabError::Resolution { required_k, .. } = err else { panic!("{err:?}") };
        assert!(required_k > 5);
        let fine = dyadic_haar_approximate(&f.refine_grid(required_k - 5).unwrap(), 0.01).unwrap();
        assert!(fine.filtration.is_dyadic_haar());
        assert!(fine.max_symmetric_difference < 0.01);
        if required_k > 6 {
            let short = f.refine_grid(required_k - 6).unwrap();
            assert!(dyadic_haar_approximate(&short, 0.01).is_err());
        }
    }

    #[test]
    fn boolean_isomorphism_of_standard_splits() {
        let base = AtomicMeasureSpace::dyadic_grid(4).unwrap();
        let s = random_haar_filtration(&base, 6, HaarKind::Standard, 2).unwrap();
        let b = boolean_isomorphism(&s).unwrap();
        assert_eq!(b.level_k(), &[0, 1, 2, 3, 4, 5, 6]);
        let trivial = random_haar_filtration(&base, 0, HaarKind::Standard, 2).unwrap();
        let t = boolean_isomorphism(&trivial).unwrap();
        assert_eq!(t.grid_k(), 0);
        assert_eq!(t.cell_block(), &[0]);
        let (_, d) = make_dyadic_filtration(2).unwrap();
        assert!(matches!(boolean_isomorphism(&d), Err(LabError::Domain(_))));
    }

    #[test]
    fn boolean_isomorphism_preserves_measure_and_expectations() {
        let base = AtomicMeasureSpace::dyadic_grid(6).unwrap();
        let d = random_haar_filtration(&base, 9, HaarKind::Dyadic, 17).unwrap();
        let b = boolean_isomorphism(&d).unwrap();
        let image = b.image();
        let dyadic = b.dyadic_levels();
        for j in 0..d.len() {
            let (src, img) = (d.level(j), image.level(j));
            assert_eq!(src.n_blocks(), img.n_blocks());
            let reps: Vec<usize> = d.last().blocks().iter().map(|a| a[0]).collect();
            for (cell, &c) in b.cell_block().iter().enumerate() {
                let blk = src.block_of(reps[c]);
                assert_eq!(src.block_mass(blk), img.block_mass(img.block_of(cell)));
            }
            assert!(is_refinement(dyadic.level(j), img));
        }
        let vals: Vec<f64> = (0..64).map(|a| ((a * 37 % 11) as f64) - 5.0).collect();
        let f = scalar(&base, &vals);
        let g = b.push_forward(&f).unwrap();
        for j in 0..d.len() {
            let lhs = conditional_expectation(&f, d.level(j)).unwrap();
            let rhs = b.pull_back(&conditional_expectation(&g, dyadic.level(j)).unwrap()).unwrap();
            assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn product_lift_reproduces_fibers() {
        let base = AtomicMeasureSpace::new(vec![0.125, 0.375, 0.5]).unwrap();
        let f = Filtration::new(vec![Partition::trivial(&base), Partition::new(&base, &[0, 0, 1]).unwrap(), Partition::discrete(&base)])
            .unwrap();
        let inner = AtomicMeasureSpace::uniform(4).unwrap();
        let lifted = f.lift_product(&inner);
        let fv = scalar(&base, &[3.0, -1.0, 2.0]);
        let tilde = StepFunction::scalar(lifted.base(), &[3.0, 3.0, 3.0, 3.0, -1.0, -1.0, -1.0, -1.0, 2.0, 2.0, 2.0, 2.0]).unwrap();
        for j in 0..f.len() {
            let e = conditional_expectation(&fv, f.level(j)).unwrap();
            let et = conditional_expectation(&tilde, lifted.level(j)).unwrap();
            for xi in 0..3 {
                for eta in 0..4 {
                    assert_abs_diff_eq!(et.value(xi * 4 + eta)[0], e.value(xi)[0], epsilon = 1e-15);
                }
            }
        }
    }

    fn random_setup() -> impl Strategy<Value = (u64, Vec<f64>, usize)> {
        (0u64..10_000, proptest::collection::vec(-4.0f64..4.0, 32), 0usize..6)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn general_filtrations_reach_eps_after_refinement(seed in 0u64..10_000, steps in 1usize..7, e in 2u32..5) {
            let base = AtomicMeasureSpace::dyadic_grid(6).unwrap();
            let filt = random_haar_filtration(&base, steps, HaarKind::General, seed).unwrap();
            let eps = 0.5f64.powi(e as i32);
            let a = match dyadic_haar_approximate(&filt, eps) {
                Ok(a) => a,
                Err(LabError::Resolution { required_k, .. }) => {
                    prop_assert!(required_k > 6 && required_k <= 22);
                    dyadic_haar_approximate(&filt.refine_grid(required_k - 6).unwrap(), eps).unwrap()
                }
                Err(e) => panic!("{e:?}"),
            };
            prop_assert!(a.filtration.is_dyadic_haar());
            prop_assert!(a.max_symmetric_difference < eps);
        }

        #[test]
        fn contraction_tower_and_jensen((seed, vals, steps) in random_setup()) {
            let base = AtomicMeasureSpace::dyadic_grid(4).unwrap();
            let f = StepFunction::from_flat(&base, Space::lp(1.0, 2).unwrap(), vals).unwrap();
            let filt = random_haar_filtration(&base, steps + 2, HaarKind::General, seed).unwrap();
            let fine = filt.last();
            let coarse = filt.level(steps.min(filt.len() - 1) / 2);
            let ef = conditional_expectation(&f, fine).unwrap();
            for p in [1.0, 2.0, 3.0] {
                let norm = |g: &StepFunction| g.norms().iter().zip(base.masses()).map(|(n, m)| m * n.powf(p)).sum::<f64>().powf(1.0 / p);
                prop_assert!(norm(&ef) <= norm(&f) + 1e-10);
            }
            let tower = conditional_expectation(&ef, coarse).unwrap();
            let direct = conditional_expectation(&f, coarse).unwrap();
            prop_assert!(tower.max_abs_diff(&direct).unwrap() <= 1e-12);
            let norms = StepFunction::scalar(&base, &f.norms()).unwrap();
            let en = conditional_expectation(&norms, fine).unwrap();
            for (a, n) in ef.norms().iter().enumerate() {
                prop_assert!(*n <= en.value(a)[0] + 1e-12);
            }
            for blk in fine.blocks() {
                let lhs = ef.integral_over(blk.iter().copied());
                let rhs = f.integral_over(blk.iter().copied());
                for (x, y) in lhs.iter().zip(&rhs) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn sigma_finite_patching((seed, vals, steps) in random_setup()) {
            let base = AtomicMeasureSpace::dyadic_grid(5).unwrap();
            let filt = random_haar_filtration(&base, steps + 1, HaarKind::General, seed).unwrap();
            let f = StepFunction::scalar(&base, &vals).unwrap();
            let level1 = filt.level(1);
            for k in 0..level1.n_blocks() {
                let ind: Vec<f64> = (0..32).map(|a| f64::from(u8::from(level1.block_of(a) == k))).collect();
                for level in &filt.levels()[1..] {
                    let global = conditional_expectation(&f, level).unwrap().mul_scalar(&ind).unwrap();
                    let local = conditional_expectation(&f.mul_scalar(&ind).unwrap(), level).unwrap();
                    prop_assert!(global.max_abs_diff(&local).unwrap() <= 1e-12);
                }
            }
        }
    }
}
