//! The experiments behind each subcommand.

use std::path::Path;
use std::result::Result;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rmflab::spaces::exponent_serde;
use rmflab::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{resolve, space_label, Generator, Instance, Overrides, Resolved};
use crate::error::CliError;
use crate::report::{render, Format, Header, Output};

/// What every experiment receives from the command line.
pub struct Ctx<'a> {
    pub config: Option<&'a Path>,
    pub overrides: &'a Overrides,
    pub format: Format,
}

impl Ctx<'_> {
    fn resolve<P: DeserializeOwned + Default>(&self, experiment: &str) -> Result<Resolved<P>, CliError> {
        resolve(self.config, self.overrides, experiment)
    }

    fn finish<P: Serialize, S: Serialize, R: Serialize>(
        &self,
        experiment: &str,
        res: &Resolved<P>,
        summary: &S,
        rows: &[R],
        violations: Vec<String>,
    ) -> Result<Output, CliError> {
        let header = Header { experiment, seed: res.seed, enumeration: res.enumeration, params: &res.params };
        Ok(Output { bytes: render(self.format, &header, summary, rows)?, violations })
    }
}

fn lp(p: f64, dim: usize) -> Space {
    Space::lp(p, dim).expect("valid default space")
}

fn seed_stream(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

fn gaussian(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Gaussian step function; the seed is decorrelated from the filtration seed.
fn random_function(base: &AtomicMeasureSpace, space: Space, seed: u64) -> Result<StepFunction, LabError> {
    StepFunction::from_flat(base, space, gaussian(base.len() * space.dim(), seed ^ 0x5851_f42d_4c95_7f2d))
}

fn joined(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn check_positive(name: &str, values: &[f64]) -> Result<(), CliError> {
    match values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        Some(v) => Err(usage(format!("{name} must be positive and finite, got {v}"))),
        None => Ok(()),
    }
}

/// Keeps successful rows; contract failures become violations, other errors abort.
fn split_contract<T>(results: Vec<(String, Result<T, LabError>)>, violations: &mut Vec<String>) -> Result<Vec<T>, CliError> {
    let mut rows = Vec::with_capacity(results.len());
    for (label, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(LabError::Contract(msg)) => violations.push(format!("{label}: {msg}")),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(rows)
}

fn maximal_config(res_enum: EnumConfig, p: f64, multiplicity: usize, truncation: Option<usize>) -> MaximalConfig {
    MaximalConfig { enumeration: res_enum, p, multiplicity, truncation }
}

// ---------------------------------------------------------------- rbound / randnorm

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomSets {
    pub count: usize,
    pub size: usize,
}

impl Default for RandomSets {
    fn default() -> Self {
        RandomSets { count: 10, size: 3 }
    }
}

/// Explicit vectors, seeded Gaussian sets, or the unit basis when neither is given.
fn vector_sets(
    space: Space,
    vectors: &Option<Vec<Vec<f64>>>,
    random: &Option<RandomSets>,
    seed: u64,
) -> Result<Vec<Vec<Vector>>, CliError> {
    match (vectors, random) {
        (Some(_), Some(_)) => Err(usage("give either params.vectors or params.random, not both")),
        (Some(vs), None) => {
            let set = vs.iter().map(|c| Vector::new(space, c.clone())).collect::<Result<Vec<_>, _>>().map_err(usage)?;
            Ok(vec![set])
        }
        (None, Some(r)) => seed_stream(seed, r.count)
            .into_iter()
            .map(|s| seed_stream(s, r.size).into_iter().map(|t| Vector::new(space, gaussian(space.dim(), t)).map_err(usage)).collect())
            .collect(),
        (None, None) => Ok(vec![(0..space.dim()).map(|i| Vector::basis(space, i).expect("index in range")).collect()]),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RboundParams {
    pub space: Space,
    pub vectors: Option<Vec<Vec<f64>>>,
    pub random: Option<RandomSets>,
    pub p: f64,
    pub multiplicity: usize,
    /// Also run the exhaustive sphere-grid certificate (at most three vectors).
    pub certify_grid_step: Option<f64>,
}

impl Default for RboundParams {
    fn default() -> Self {
        RboundParams { space: lp(1.0, 2), vectors: None, random: None, p: 2.0, multiplicity: 1, certify_grid_step: None }
    }
}

#[derive(Debug, Serialize)]
pub struct RboundRow {
    pub instance: usize,
    pub size: usize,
    pub p: f64,
    pub multiplicity: usize,
    pub lower: f64,
    pub upper: f64,
    pub mode: RBoundMode,
    pub grid_lower: Option<f64>,
    pub grid_error_bound: Option<f64>,
    pub witness: String,
}

#[derive(Debug, Serialize)]
pub struct CountSummary {
    pub instances: usize,
}

pub fn rbound(ctx: &Ctx) -> Result<Output, CliError> {
    let res: Resolved<RboundParams> = ctx.resolve("rbound")?;
    let p = &res.params;
    let sets = vector_sets(p.space, &p.vectors, &p.random, res.seed)?;
    let cfg = res.enum_config();
    let results: Vec<(String, Result<RboundRow, LabError>)> = sets
        .par_iter()
        .enumerate()
        .map(|(i, set)| {
            let row = (|| {
                let b = rbound_scalar(set, p.p, p.multiplicity, &cfg)?;
                let cert = p.certify_grid_step.map(|h| rbound_certify_grid(set, p.p, h)).transpose()?;
                Ok(RboundRow {
                    instance: i,
                    size: set.len(),
                    p: p.p,
                    multiplicity: p.multiplicity,
                    lower: b.lower,
                    upper: b.upper,
                    mode: b.mode,
                    grid_lower: cert.as_ref().map(|c| c.lower),
                    grid_error_bound: cert.as_ref().map(|c| c.error_bound),
                    witness: joined(&b.witness),
                })
            })();
            (format!("instance {i}"), row)
        })
        .collect();
    let mut violations = Vec::new();
    let rows = split_contract(results, &mut violations)?;
    for r in &rows {
        let tol = 1e-9 * (1.0 + r.upper);
        if r.lower > r.upper + tol {
            violations.push(format!("instance {}: lower {} exceeds upper {}", r.instance, r.lower, r.upper));
        }
        if let Some(g) = r.grid_lower.filter(|g| *g > r.upper + tol) {
            violations.push(format!("instance {}: grid lower {g} exceeds upper {}", r.instance, r.upper));
        }
    }
    ctx.finish("rbound", &res, &CountSummary { instances: rows.len() }, &rows, violations)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandnormParams {
    pub space: Space,
    pub vectors: Option<Vec<Vec<f64>>>,
    pub random: Option<RandomSets>,
    pub p: f64,
}

impl Default for RandnormParams {
    fn default() -> Self {
        RandnormParams { space: lp(1.0, 2), vectors: None, random: None, p: 2.0 }
    }
}

#[derive(Debug, Serialize)]
pub struct RandnormRow {
    pub instance: usize,
    pub size: usize,
    pub p: f64,
    pub value: f64,
    pub mode: MomentMode,
    pub samples: usize,
    pub stderr: f64,
}

pub fn randnorm(ctx: &Ctx) -> Result<Output, CliError> {
    let res: Resolved<RandnormParams> = ctx.resolve("randnorm")?;
    let p = &res.params;
    let sets = vector_sets(p.space, &p.vectors, &p.random, res.seed)?;
    let cfg = res.enum_config();
    let rows = sets
        .par_iter()
        .enumerate()
        .map(|(i, set)| {
            let m = rademacher_moment(set, p.p, &cfg)?;
            Ok(RandnormRow { instance: i, size: set.len(), p: p.p, value: m.value, mode: m.mode, samples: m.samples, stderr: m.stderr })
        })
        .collect::<Result<Vec<_>, LabError>>()?;
    ctx.finish("randnorm", &res, &CountSummary { instances: rows.len() }, &rows, Vec::new())
}

// ---------------------------------------------------------------- typecotype

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TypeCotypeParams {
    pub kind: TypeCotype,
    /// Exponent `r` of the sequence spaces `l^r_N`.
    #[serde(with = "exponent_serde")]
    pub space_p: f64,
    #[serde(with = "exponent_serde")]
    pub exponent: f64,
    /// Dimensions `N`; each uses `N` vectors in `l^r_N`.
    pub n: Vec<usize>,
}

impl Default for TypeCotypeParams {
    fn default() -> Self {
        TypeCotypeParams { kind: TypeCotype::Type, space_p: 1.0, exponent: 2.0, n: vec![2, 4, 8] }
    }
}

#[derive(Debug, Serialize)]
pub struct TypeCotypeRow {
    pub n: usize,
    pub kind: TypeCotype,
    pub space: String,
    #[serde(serialize_with = "exponent_serde::serialize")]
    pub exponent: f64,
    pub value: f64,
    /// Ratio searches are multi-restart ascents.
    pub mode: RBoundMode,
    pub witness: String,
}

pub fn typecotype(ctx: &Ctx) -> Result<Output, CliError> {
    let res: Resolved<TypeCotypeParams> = ctx.resolve("typecotype")?;
    let p = &res.params;
    let cfg = res.enum_config();
    let rows =
        p.n.par_iter()
            .map(|&n| {
                let space = Space::lp(p.space_p, n)?;
                let est = type_cotype_estimate(p.kind, space, p.exponent, n, &cfg)?;
                let witness: Vec<f64> = est.witness.iter().flat_map(|v| v.coords().iter().copied()).collect();
                Ok(TypeCotypeRow {
                    n,
                    kind: p.kind,
                    space: space_label(&space),
                    exponent: p.exponent,
                    value: est.value,
                    mode: RBoundMode::Optimized,
                    witness: joined(&witness),
                })
            })
            .collect::<Result<Vec<_>, LabError>>()?;
    ctx.finish("typecotype", &res, &CountSummary { instances: rows.len() }, &rows, Vec::new())
}

// ---------------------------------------------------------------- maximal / rmf-ratio

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaximalParams {
    pub space: Space,
    pub generator: Generator,
    /// Exponent of the R-bounds.
    pub r_exponent: f64,
    pub multiplicity: usize,
    pub truncation: Option<usize>,
    /// Run the telescoping construction with `T_j = e_j` in `l^1_N` instead.
    pub telescoping: Option<usize>,
}

impl Default for MaximalParams {
    fn default() -> Self {
        MaximalParams {
            space: lp(2.0, 4),
            generator: Generator { kind: HaarKind::Dyadic, ..Generator::default() },
            r_exponent: 2.0,
            multiplicity: 1,
            truncation: None,
            telescoping: None,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct MaximalRow {
    pub instance: usize,
    pub seed: u64,
    pub grid_k: u32,
    pub steps: usize,
    pub mode: Option<RBoundMode>,
    pub f_l1: f64,
    pub f_l2: f64,
    pub f_linf: f64,
    pub doob_l1: f64,
    pub doob_l2: f64,
    pub doob_linf: f64,
    pub rademacher_l1: f64,
    pub rademacher_l2: f64,
    pub rademacher_linf: f64,
    pub rademacher_upper_linf: f64,
    /// Smallest `M_R f - M f` over atoms; nonnegative.
    pub min_excess: f64,
    /// Largest `|M_R f - M f|`; zero for Hilbert ranges at exponent 2.
    pub max_gap: f64,
}

#[derive(Debug, Serialize)]
pub struct TelescopingRow {
    pub n: usize,
    pub atoms: usize,
    pub mode: RBoundMode,
    /// Largest `|<f>_(I_j) - T_j|` over `j`.
    pub average_error: f64,
    pub sup_norm: f64,
    pub doob_first: f64,
    pub rademacher_first: f64,
    pub rademacher_first_upper: f64,
    pub root_n: f64,
}

fn norms3(g: &[f64], base: &AtomicMeasureSpace) -> [f64; 3] {
    [lp_norm(g, 1.0, base), lp_norm(g, 2.0, base), lp_norm(g, f64::INFINITY, base)]
}

fn instance_function(space: Space, gen: &Generator, inst: &Instance) -> Result<(StepFunction, Filtration), LabError> {
    let base = AtomicMeasureSpace::dyadic_grid(inst.grid_k)?;
    let filt = random_haar_filtration(&base, inst.steps, gen.kind, inst.seed)?;
    Ok((random_function(&base, space, inst.seed)?, filt))
}

pub fn maximal(ctx: &Ctx) -> Result<Output, CliError> {
    let res: Resolved<MaximalParams> = ctx.resolve("maximal")?;
    let p = &res.params;
    let cfg = maximal_config(res.enum_config(), p.r_exponent, p.multiplicity, p.truncation);
    if let Some(n) = p.telescoping {
        return telescoping(ctx, &res, n, &cfg);
    }
    let instances = p.generator.instances(res.seed)?;
    let results: Vec<(String, Result<MaximalRow, LabError>)> = instances
        .par_iter()
        .map(|inst| {
            let row = (|| {
                let (f, filt) = instance_function(p.space, &p.generator, inst)?;
                let doob = doob_maximal(&f, &filt)?;
                let rad = rademacher_maximal(&f, &filt, &cfg)?;
                let base = f.base();
                let [f_l1, f_l2, f_linf] = norms3(&f.norms(), base);
                let [doob_l1, doob_l2, doob_linf] = norms3(&doob.pointwise, base);
                let [rademacher_l1, rademacher_l2, rademacher_linf] = norms3(&rad.pointwise, base);
                let diffs: Vec<f64> = rad.pointwise.iter().zip(&doob.pointwise).map(|(r, d)| r - d).collect();
                Ok(MaximalRow {
                    instance: inst.id,
                    seed: inst.seed,
                    grid_k: inst.grid_k,
                    steps: inst.steps,
                    mode: rad.mode,
                    f_l1,
                    f_l2,
                    f_linf,
                    doob_l1,
                    doob_l2,
                    doob_linf,
                    rademacher_l1,
                    rademacher_l2,
                    rademacher_linf,
                    rademacher_upper_linf: lp_norm(&rad.upper, f64::INFINITY, base),
                    min_excess: diffs.iter().copied().fold(f64::INFINITY, f64::min),
                    max_gap: diffs.iter().fold(0.0f64, |m, d| m.max(d.abs())),
                })
            })();
            (format!("instance {}", inst.id), row)
        })
        .collect();
    let mut violations = Vec::new();
    let rows = split_contract(results, &mut violations)?;
    for r in &rows {
        if r.min_excess < -1e-9 * (1.0 + r.doob_linf) {
            violations.push(format!("instance {}: M_R f < M f somewhere (excess {})", r.instance, r.min_excess));
        }
        if r.mode == Some(RBoundMode::HilbertExact) && r.max_gap > 1e-9 * (1.0 + r.doob_linf) {
            violations.push(format!("instance {}: Hilbert range but M_R f != M f (gap {})", r.instance, r.max_gap));
        }
    }
    ctx.finish("maximal", &res, &CountSummary { instances: rows.len() }, &rows, violations)
}

fn telescoping(ctx: &Ctx, res: &Resolved<MaximalParams>, n: usize, cfg: &MaximalConfig) -> Result<Output, CliError> {
    if !(1..=20).contains(&n) {
        return Err(usage(format!("telescoping N must lie in 1..=20, got {n}")));
    }
    let space = Space::lp(1.0, n)?;
    let t: Vec<Vector> = (0..n).map(|i| Vector::basis(space, i)).collect::<Result<_, _>>()?;
    let tel = telescoping_function(&t)?;
    let f = &tel.function;
    let mut average_error = 0.0f64;
    for (j, &m) in tel.interval_atoms.iter().enumerate() {
        let avg = f.integral_over(0..m);
        let mass: f64 = (0..m).map(|a| f.base().mass(a)).sum();
        for (x, y) in avg.iter().zip(t[j].coords()) {
            average_error = average_error.max((x / mass - y).abs());
        }
    }
    let sup_norm = f.norms().iter().fold(0.0f64, |m, v| m.max(*v));
    let doob = doob_maximal(f, &tel.filtration)?;
    let b = rademacher_maximal_at(f, &tel.filtration, &[0], cfg)?.remove(0);
    let row = TelescopingRow {
        n,
        atoms: f.len(),
        mode: b.mode,
        average_error,
        sup_norm,
        doob_first: doob.pointwise[0],
        rademacher_first: b.lower,
        rademacher_first_upper: b.upper,
        root_n: (n as f64).sqrt(),
    };
    let mut violations = Vec::new();
    if average_error > 1e-12 {
        violations.push(format!("averages over I_j differ from T_j by {average_error}"));
    }
    if sup_norm > 3.0 + 1e-12 {
        violations.push(format!("||f||_inf = {sup_norm} exceeds 3"));
    }
    ctx.finish("maximal", res, &CountSummary { instances: 1 }, &[row], violations)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmfRatioParams {
    pub space: Space,
    pub generator: Generator,
    /// Exponent of the norms in the ratio.
    pub p: f64,
    pub r_exponent: f64,
    pub multiplicity: usize,
    pub truncation: Option<usize>,
}

impl Default for RmfRatioParams {
    fn default() -> Self {
        RmfRatioParams {
            space: lp(1.0, 2),
            generator: Generator { kind: HaarKind::Dyadic, ..Generator::default() },
            p: 2.0,
            r_exponent: 2.0,
            multiplicity: 1,
            truncation: None,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RmfRatioRow {
    pub instance: usize,
    pub seed: u64,
    pub grid_k: u32,
    pub steps: usize,
    pub p: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
    pub mode: Option<RBoundMode>,
}

#[derive(Debug, Serialize)]
pub struct RmfRatioSummary {
    pub instances: usize,
    pub max_ratio: Option<f64>,
}

pub fn rmf_ratio_cmd(ctx: &Ctx) -> Result<Output, CliError> {
    let res: Resolved<RmfRatioParams> = ctx.resolve("rmf-ratio")?;
    let p = &res.params;
    if !(p.p >= 1.0) {
        return Err(usage(format!("p must be at least 1, got {}", p.p)));
    }
    let cfg = maximal_config(res.enum_config(), p.r_exponent, p.multiplicity, p.truncation);
    let rows = p
        .generator
        .instances(res.seed)?
        .par_iter()
        .map(|inst| {
            let (f, filt) = instance_function(p.space, &p.generator, inst)?;
            let rad = rademacher_maximal(&f, &filt, &cfg)?;
            let numerator = lp_norm(&rad.pointwise, p.p, f.base());
            let denominator = lp_norm_of(&f, p.p);
            Ok(RmfRatioRow {
                instance: inst.id,
                seed: inst.seed,
                grid_k: inst.grid_k,
                steps: inst.steps,
                p: p.p,
                numerator,
                denominator,
                ratio: numerator / denominator,
                mode: rad.mode,
            })
        })
        .collect::<Result<Vec<_>, LabError>>()?;
    let summary = RmfRatioSummary { instances: rows.len(), max_ratio: rows.iter().map(|r| r.ratio).reduce(f64::max) };
    ctx.finish("rmf-ratio", &res, &summary, &rows, Vec::new())
}

// ---------------------------------------------------------------- reduce

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReduceParams {
    pub space: Space,
    pub generator: Generator,
    /// Keep every `stride`-th generated level, so several blocks may split per step.
    pub stride: usize,
    pub eps: f64,
    pub p: f64,
}

impl Default for ReduceParams {
    fn default() -> Self {
        ReduceParams {
            space: lp(2.0, 2),
            generator: Generator { count: 50, grid_k: 6, steps: 6, kind: HaarKind::Dyadic, fixed: true },
            stride: 1,
            eps: 0.125,
            p: 2.0,
        }
    }
}

/// Trace of one pass through Haar embedding, dyadic approximation and the Boolean isomorphism.
#[derive(Debug, Serialize)]
pub struct ReduceRow {
    pub instance: usize,
    pub seed: u64,
    pub grid_k: u32,
    pub steps: usize,
    pub source_levels: usize,
    pub haar_levels: usize,
    /// Grid exponent on which the approximation was built.
    pub approx_grid_k: u32,
    pub approx_max_symdiff: f64,
    pub eps: f64,
    /// Grid exponent of the equivalent dyadic filtration.
    pub iso_grid_k: u32,
    /// Largest `|E(f|F_j) - E(f o b^-1 | D_(K_j)) o b|` over levels and atoms.
    pub expectation_defect: f64,
    pub rmf_source: f64,
    pub rmf_image: f64,
    pub rmf_gap: f64,
    pub mode: Option<RBoundMode>,
}

/// Approximates on the given grid, refining it once when the error names a finer one.
fn approximate(filt: &Filtration, k: u32, eps: f64) -> Result<(u32, Filtration, f64), LabError> {
    match dyadic_haar_approximate(filt, eps) {
        Ok(a) => Ok((k, a.filtration, a.max_symmetric_difference)),
        Err(LabError::Resolution { required_k, .. }) if required_k > k => {
            let a = dyadic_haar_approximate(&filt.refine_grid(required_k - k)?, eps)?;
            Ok((required_k, a.filtration, a.max_symmetric_difference))
        }
        Err(e) => Err(e),
    }
}

fn ratio_of(f: &StepFunction, filt: &Filtration, p: f64, cfg: &MaximalConfig) -> Result<(f64, Option<RBoundMode>), LabError> {
    let rad = rademacher_maximal(f, filt, cfg)?;
    Ok((lp_norm(&rad.pointwise, p, f.base()) / lp_norm_of(f, p), rad.mode))
}

fn reduce_instance(p: &ReduceParams, inst: &Instance, cfg: &MaximalConfig) -> Result<ReduceRow, LabError> {
    let base = AtomicMeasureSpace::dyadic_grid(inst.grid_k)?;
    let generated = random_haar_filtration(&base, inst.steps, p.generator.kind, inst.seed)?;
    let mut keep: Vec<usize> = (0..generated.len()).step_by(p.stride).collect();
    let last = generated.len() - 1;
    if keep.last() != Some(&last) {
        keep.push(last);
    }
    let source = generated.subfiltration(&keep)?;
    let (haar, _) = haar_embed(&source)?;
    let (approx_grid_k, filt, approx_max_symdiff) = approximate(&haar, inst.grid_k, p.eps)?;
    let f = random_function(filt.base(), p.space, inst.seed)?;
    let iso = boolean_isomorphism(&filt)?;
    let g = iso.push_forward(&f)?;
    let dyadic = iso.dyadic_levels();
    let mut expectation_defect = 0.0f64;
    for j in 0..filt.len() {
        let lhs = conditional_expectation(&f, filt.level(j))?;
        let rhs = iso.pull_back(&conditional_expectation(&g, dyadic.level(j))?)?;
        expectation_defect = expectation_defect.max(lhs.max_abs_diff(&rhs)?);
    }
    let fl = conditional_expectation(&f, filt.last())?;
    let (rmf_source, mode) = ratio_of(&fl, &filt, p.p, cfg)?;
    let (rmf_image, _) = ratio_of(&iso.push_forward(&fl)?, &dyadic, p.p, cfg)?;
    Ok(ReduceRow {
        instance: inst.id,
        seed: inst.seed,
        grid_k: inst.grid_k,
        steps: inst.steps,
        source_levels: source.len(),
        haar_levels: haar.len(),
        approx_grid_k,
        approx_max_symdiff,
        eps: p.eps,
        iso_grid_k: iso.grid_k(),
        expectation_defect,
        rmf_source,
        rmf_image,
        rmf_gap: (rmf_source - rmf_image).abs(),
        mode,
    })
}

pub fn reduce(ctx: &Ctx) -> Result<Output, CliError> {
    let res: Resolved<ReduceParams> = ctx.resolve("reduce")?;
    let p = &res.params;
    check_positive("eps", &[p.eps])?;
    if p.stride == 0 {
        return Err(usage("stride must be at least 1"));
    }
    let cfg = MaximalConfig::with_enumeration(res.enum_config());
    let results: Vec<(String, Result<ReduceRow, LabError>)> =
        p.generator.instances(res.seed)?.par_iter().map(|inst| (format!("instance {}", inst.id), reduce_instance(p, inst, &cfg))).collect();
    let mut violations = Vec::new();
    let rows = split_contract(results, &mut violations)?;
    for r in &rows {
        if r.expectation_defect > 1e-12 {
            violations.push(format!("instance {}: conditional expectations differ by {}", r.instance, r.expectation_defect));
        }
        if r.mode != Some(RBoundMode::Optimized) && r.rmf_gap > 1e-10 * (1.0 + r.rmf_source) {
            violations.push(format!("instance {}: rmf ratio changes by {} under the isomorphism", r.instance, r.rmf_gap));
        }
        if !(r.approx_max_symdiff < r.eps) {
            violations.push(format!("instance {}: approximation error {} not below {}", r.instance, r.approx_max_symdiff, r.eps));
        }
    }
    ctx.finish("reduce", &res, &CountSummary { instances: rows.len() }, &rows, violations)
}

// ---------------------------------------------------------------- gundy

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GundyParams {
    /// Instance `i` uses `spaces[i % len]`.
    pub spaces: Vec<Space>,
    pub generator: Generator,
    /// `lambda = factor * ||X||_1`; one row per instance and factor.
    pub lambda_factors: Vec<f64>,
}

impl Default for GundyParams {
    fn default() -> Self {
        GundyParams {
            spaces: vec![lp(1.0, 3), lp(2.0, 3)],
            generator: Generator { count: 200, grid_k: 6, steps: 10, kind: HaarKind::Standard, fixed: false },
            lambda_factors: vec![1.0],
        }
    }
}

#[derive(Debug, Serialize)]
pub struct GundyRow {
    pub instance: usize,
    pub seed: u64,
    pub space: String,
    pub grid_k: u32,
    pub steps: usize,
    pub lambda_factor: f64,
    pub lambda: f64,
    pub x_l1: f64,
    pub g_l1: f64,
    pub g_l1_bound: f64,
    pub g_linf: f64,
    pub g_linf_bound: f64,
    pub h_variation: f64,
    pub h_variation_bound: f64,
    pub b_support: f64,
    pub b_support_bound: f64,
    pub reconstruction_error: f64,
    pub violations: usize,
    /// Gundy certificates involve no R-bounds.
    pub mode: Option<RBoundMode>,
}

pub fn gundy(ctx: &Ctx) -> Result<Output, CliError> {
    let res: Resolved<GundyParams> = ctx.resolve("gundy")?;
    let p = &res.params;
    if p.spaces.is_empty() {
        return Err(usage("params.spaces must not be empty"));
    }
    if p.generator.kind != HaarKind::Standard {
        return Err(usage("gundy needs generator.kind = \"standard\""));
    }
    check_positive("lambda_factors", &p.lambda_factors)?;
    let instances = p.generator.instances(res.seed)?;
    let results: Vec<Vec<(String, Result<GundyRow, LabError>)>> = instances
        .par_iter()
        .map(|inst| {
            let space = p.spaces[inst.id % p.spaces.len()];
            let label = |c: f64| format!("instance {} (lambda factor {c})", inst.id);
            let x = match random_haar_martingale(inst.grid_k, inst.steps, space, HaarKind::Standard, inst.seed) {
                Ok(x) => x,
                Err(e) => return vec![(label(f64::NAN), Err(e))],
            };
            let norm = x.lp_norm(1.0);
            p.lambda_factors
                .iter()
                .map(|&c| {
                    let lambda = if norm > 0.0 { c * norm } else { c };
                    let row = gundy_decompose(&x, lambda).map(|parts| {
                        let z = parts.certificates;
                        GundyRow {
                            instance: inst.id,
                            seed: inst.seed,
                            space: space_label(&space),
                            grid_k: inst.grid_k,
                            steps: inst.steps,
                            lambda_factor: c,
                            lambda,
                            x_l1: z.x_l1,
                            g_l1: z.g_l1,
                            g_l1_bound: 4.0 * z.x_l1,
                            g_linf: z.g_linf,
                            g_linf_bound: 2.0 * lambda,
                            h_variation: z.h_variation,
                            h_variation_bound: 4.0 * z.x_l1,
                            b_support: z.b_support,
                            b_support_bound: 3.0 * z.x_l1 / lambda,
                            reconstruction_error: z.reconstruction_error,
                            violations: z.violations.len(),
                            mode: None,
                        }
                    });
                    (label(c), row)
                })
                .collect()
        })
        .collect();
    let mut violations = Vec::new();
    let rows = split_contract(results.into_iter().flatten().collect(), &mut violations)?;
    let summary = CountSummary { instances: instances.len() };
    ctx.finish("gundy", &res, &summary, &rows, violations)
}

// ---------------------------------------------------------------- goodlambda

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoodLambdaParams {
    pub space: Space,
    pub generator: Generator,
    pub beta: f64,
    pub delta: f64,
    /// `lambda = factor * ||X||_1`.
    pub lambda_factors: Vec<f64>,
    pub c_weak: f64,
    /// Exponent of the strong constant in the summary.
    pub p: f64,
}

impl Default for GoodLambdaParams {
    fn default() -> Self {
        GoodLambdaParams {
            space: lp(2.0, 2),
            generator: Generator { count: 100, grid_k: 6, steps: 10, kind: HaarKind::Standard, fixed: false },
            beta: 4.0,
            delta: 0.1,
            lambda_factors: vec![0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0],
            c_weak: 1.0,
            p: 2.0,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct GoodLambdaRow {
    pub instance: usize,
    pub seed: u64,
    pub grid_k: u32,
    pub steps: usize,
    pub lambda_factor: f64,
    pub lambda: f64,
    pub mode: RBoundMode,
    pub enforced: bool,
    pub event_atoms: usize,
    pub inclusion_violations: usize,
    pub inclusion_slack: Option<f64>,
    pub bound_violations: usize,
    pub bound_slack: f64,
    pub alpha: f64,
    pub measure_lhs: f64,
    pub measure_rhs: f64,
}

#[derive(Debug, Serialize)]
pub struct GoodLambdaSummary {
    pub instances: usize,
    pub inclusion_violations: usize,
    pub bound_violations: usize,
    pub trick: TrickConstant,
}

pub fn goodlambda(ctx: &Ctx) -> Result<Output, CliError> {
    let res: Resolved<GoodLambdaParams> = ctx.resolve("goodlambda")?;
    let p = &res.params;
    if p.generator.kind != HaarKind::Standard {
        return Err(usage("goodlambda needs generator.kind = \"standard\""));
    }
    check_positive("lambda_factors", &p.lambda_factors)?;
    let trick = trick_constant(p.beta, p.delta, p.p, p.c_weak, None).map_err(usage)?;
    let cfg = MaximalConfig::with_enumeration(res.enum_config());
    let instances = p.generator.instances(res.seed)?;
    let results: Vec<Vec<(String, Result<GoodLambdaRow, LabError>)>> = instances
        .par_iter()
        .map(|inst| {
            let label = |c: f64| format!("instance {} (lambda factor {c})", inst.id);
            let x = match random_haar_martingale(inst.grid_k, inst.steps, p.space, HaarKind::Standard, inst.seed) {
                Ok(x) => x,
                Err(e) => return vec![(label(f64::NAN), Err(e))],
            };
            let norm = x.lp_norm(1.0);
            p.lambda_factors
                .iter()
                .map(|&c| {
                    let lambda = if norm > 0.0 { c * norm } else { c };
                    let row = good_lambda_experiment(&x, p.beta, p.delta, lambda, p.c_weak, &cfg).map(|g| GoodLambdaRow {
                        instance: inst.id,
                        seed: inst.seed,
                        grid_k: inst.grid_k,
                        steps: inst.steps,
                        lambda_factor: c,
                        lambda,
                        mode: g.mode,
                        enforced: g.enforced,
                        event_atoms: g.event_atoms,
                        inclusion_violations: g.inclusion_violations,
                        inclusion_slack: g.inclusion_slack,
                        bound_violations: g.bound_violations,
                        bound_slack: g.bound_slack,
                        alpha: g.alpha,
                        measure_lhs: g.measure_lhs,
                        measure_rhs: g.measure_rhs,
                    });
                    (label(c), row)
                })
                .collect()
        })
        .collect();
    let mut violations = Vec::new();
    let rows = split_contract(results.into_iter().flatten().collect(), &mut violations)?;
    let summary = GoodLambdaSummary {
        instances: instances.len(),
        inclusion_violations: rows.iter().map(|r| r.inclusion_violations).sum(),
        bound_violations: rows.iter().map(|r| r.bound_violations).sum(),
        trick,
    };
    ctx.finish("goodlambda", &res, &summary, &rows, violations)
}

// ---------------------------------------------------------------- weak-rmf

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakRmfParams {
    pub space: Space,
    pub generator: Generator,
    /// Factors `c` of the grid `lambda = c ||X||_1`.
    pub grid: Vec<f64>,
    pub beta: f64,
    pub delta: f64,
    pub p: f64,
    /// Doob constant of the strong bound; `p'` when absent.
    pub c_doob: Option<f64>,
}

impl Default for WeakRmfParams {
    fn default() -> Self {
        WeakRmfParams {
            space: lp(1.0, 2),
            generator: Generator { count: 20, grid_k: 5, steps: 8, kind: HaarKind::Standard, fixed: false },
            grid: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            beta: 4.0,
            delta: 0.01,
            p: 2.0,
            c_doob: None,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct WeakRmfRow {
    pub instance: usize,
    pub seed: u64,
    pub grid_k: u32,
    pub steps: usize,
    /// `sup_lambda lambda P(X_R* > lambda) / ||X||_1`; empty for `||X||_1 = 0`.
    pub value: Option<f64>,
    pub grid_value: f64,
    pub mode: Option<RBoundMode>,
}

#[derive(Debug, Serialize)]
pub struct WeakRmfSummary {
    pub instances: usize,
    pub constant: f64,
    pub grid_constant: f64,
    /// Strong constant implied by the empirical weak constant.
    pub trick: TrickConstant,
}

pub fn weak_rmf(ctx: &Ctx) -> Result<Output, CliError> {
    let res: Resolved<WeakRmfParams> = ctx.resolve("weak-rmf")?;
    let p = &res.params;
    check_positive("grid", &p.grid)?;
    let cfg = MaximalConfig::with_enumeration(res.enum_config());
    let rows = p
        .generator
        .instances(res.seed)?
        .par_iter()
        .map(|inst| {
            let x = random_haar_martingale(inst.grid_k, inst.steps, p.space, p.generator.kind, inst.seed)?;
            let r = weak_rmf_probe(std::slice::from_ref(&x), &p.grid, &cfg);
            Ok(WeakRmfRow {
                instance: inst.id,
                seed: inst.seed,
                grid_k: inst.grid_k,
                steps: inst.steps,
                value: r.per_instance[0],
                grid_value: r.grid_constant,
                mode: r.mode,
            })
        })
        .collect::<Result<Vec<_>, LabError>>()?;
    let constant = rows.iter().filter_map(|r| r.value).fold(0.0f64, f64::max);
    let grid_constant = rows.iter().map(|r| r.grid_value).fold(0.0f64, f64::max);
    let trick = trick_constant(p.beta, p.delta, p.p, constant, p.c_doob).map_err(usage)?;
    let summary = WeakRmfSummary { instances: rows.len(), constant, grid_constant, trick };
    ctx.finish("weak-rmf", &res, &summary, &rows, Vec::new())
}

// ---------------------------------------------------------------- concave

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Candidate {
    /// `u` itself.
    U,
    /// The zero function.
    Zero,
    /// The lower approximation of `v` over a translated family of martingales.
    VLower,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConcaveParams {
    pub space: Space,
    pub p: f64,
    pub c: f64,
    pub candidate: Candidate,
    pub samples: usize,
    pub midpoints: usize,
    pub set_size: usize,
    /// Martingales translated to each point for `v_lower`, and spliced in pairs.
    pub family: Generator,
    pub splice_pairs: usize,
}

impl Default for ConcaveParams {
    fn default() -> Self {
        ConcaveParams {
            space: lp(1.0, 2),
            p: 2.0,
            c: 1.0,
            candidate: Candidate::VLower,
            samples: 10,
            midpoints: 10,
            set_size: 2,
            family: Generator { count: 4, grid_k: 3, steps: 3, kind: HaarKind::Standard, fixed: true },
            splice_pairs: 10,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct PropertyRow {
    pub property: String,
    pub checked: usize,
    pub failures: usize,
    pub worst_slack: Option<f64>,
    pub mode: RBoundMode,
}

#[derive(Debug, Serialize)]
pub struct SpliceRow {
    pub pair: usize,
    pub alpha: f64,
    pub identity_defect: f64,
    pub full_mean: f64,
    pub splice_levels: usize,
    pub haar_splice_levels: usize,
}

#[derive(Debug, Serialize)]
pub struct ConcaveSummary {
    pub description: String,
    pub splices: Vec<SpliceRow>,
    pub max_identity_defect: f64,
}

fn random_vector(space: Space, seed: u64) -> Vector {
    Vector::new(space, gaussian(space.dim(), seed)).expect("dimension matches")
}

pub fn concave(ctx: &Ctx) -> Result<Output, CliError> {
    let res: Resolved<ConcaveParams> = ctx.resolve("concave")?;
    let p = &res.params;
    if p.family.kind != HaarKind::Standard || p.family.count == 0 {
        return Err(usage("concave needs a nonempty family with kind = \"standard\""));
    }
    let cfg = MaximalConfig::with_enumeration(res.enum_config());
    let space = p.space;
    let mut stream = seed_stream(res.seed, 4).into_iter();
    let (sample_seed, mid_seed, family_seed, splice_seed) =
        (stream.next().unwrap(), stream.next().unwrap(), stream.next().unwrap(), stream.next().unwrap());
    let random_set = |s: u64| -> Vec<Vector> { seed_stream(s, p.set_size).into_iter().map(|t| random_vector(space, t)).collect() };
    let samples: Vec<VSample> =
        seed_stream(sample_seed, p.samples).into_iter().map(|s| (random_set(s), random_vector(space, s ^ 1))).collect();
    let midpoints: Vec<VMidpoint> = seed_stream(mid_seed, p.midpoints)
        .into_iter()
        .map(|s| (random_set(s), random_vector(space, s ^ 1), random_vector(space, s ^ 2)))
        .collect();
    let family: Vec<SimpleMartingale> = p
        .family
        .instances(family_seed)?
        .iter()
        .map(|inst| random_haar_martingale(inst.grid_k, inst.steps, space, HaarKind::Standard, inst.seed))
        .collect::<Result<_, _>>()?;

    let (pp, cc) = (p.p, p.c);
    let candidate = match p.candidate {
        Candidate::U => VCandidate::new("u", |set: &[Vector], t: &Vector| Ok(u_value(set, t, pp, cc, &cfg)?.value)),
        Candidate::Zero => VCandidate::new("zero", |_: &[Vector], _: &Vector| Ok(0.0)),
        Candidate::VLower => VCandidate::new("v_lower over translated family", |set: &[Vector], t: &Vector| {
            let mut members = vec![family[0].zero_like().with_start(t)?];
            for x in &family {
                members.push(x.with_start(t)?);
            }
            v_lower(set, t, pp, cc, &members, &cfg)
        }),
    };
    let report = check_v_candidate(&candidate, &samples, &midpoints, p.p, p.c, &cfg)?;
    let mode = match samples.first() {
        Some((set, t)) => u_value(set, t, p.p, p.c, &cfg)?.mode,
        None => RBoundMode::Optimized,
    };
    let rows: Vec<PropertyRow> = report
        .properties
        .iter()
        .map(|c| PropertyRow { property: c.name.clone(), checked: c.checked, failures: c.failures, worst_slack: c.worst_slack, mode })
        .collect();

    let mut violations = Vec::new();
    let splices = seed_stream(splice_seed, p.splice_pairs)
        .into_par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let pick = |r: &mut ChaCha8Rng| &family[(r.next_u64() % family.len() as u64) as usize];
            let x1 = pick(&mut rng).with_start(&random_vector(space, s ^ 1))?;
            let x2 = pick(&mut rng).with_start(&random_vector(space, s ^ 2))?;
            let alpha = (1 + rng.next_u64() % 7) as f64 / 8.0;
            let set = random_set(s ^ 3);
            let id = splice_identity(&x1, &x2, alpha, &set, p.p, p.c, &cfg)?;
            let spliced = splice(&x1, &x2, alpha)?;
            let haar = haar_splice(&x1, &x2)?;
            Ok(SpliceRow {
                pair: i,
                alpha,
                identity_defect: id.defect(),
                full_mean: id.full_mean,
                splice_levels: spliced.len(),
                haar_splice_levels: haar.len(),
            })
        })
        .collect::<Vec<Result<SpliceRow, LabError>>>();
    let splices = split_contract(splices.into_iter().enumerate().map(|(i, r)| (format!("pair {i}"), r)).collect(), &mut violations)?;
    let max_identity_defect = splices.iter().map(|r| r.identity_defect).fold(0.0f64, f64::max);
    for r in &splices {
        if r.identity_defect > 1e-10 * (1.0 + r.full_mean.abs()) {
            violations.push(format!("pair {}: splice identity defect {}", r.pair, r.identity_defect));
        }
    }
    let summary = ConcaveSummary { description: report.description, splices, max_identity_defect };
    ctx.finish("concave", &res, &summary, &rows, violations)
}
