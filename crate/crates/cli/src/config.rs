//! Configuration files, flag overrides and shared generator settings.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmflab::{EnumConfig, HaarKind, Space};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Version accepted in the `version` field of configuration files.
pub const CONFIG_VERSION: u32 = 1;

/// Enumeration and optimizer settings. The run seed drives all randomness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Enumeration {
    pub exact_threshold: usize,
    pub mc_samples: usize,
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for Enumeration {
    fn default() -> Self {
        let d = EnumConfig::default();
        Enumeration { exact_threshold: d.exact_threshold, mc_samples: d.mc_samples, restarts: d.restarts, tol: d.tol, max_iter: d.max_iter }
    }
}

impl Enumeration {
    pub fn to_config(self, seed: u64) -> EnumConfig {
        EnumConfig {
            exact_threshold: self.exact_threshold,
            mc_samples: self.mc_samples,
            seed,
            restarts: self.restarts,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

/// On-disk layout of a configuration file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile<P> {
    pub version: u32,
    #[serde(default)]
    pub experiment: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub enumeration: Enumeration,
    #[serde(default)]
    pub params: P,
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub exact_threshold: Option<usize>,
    pub mc_samples: Option<usize>,
    pub restarts: Option<usize>,
    pub tol: Option<f64>,
}

/// A fully resolved configuration.
#[derive(Debug, Clone)]
pub struct Resolved<P> {
    pub seed: u64,
    pub enumeration: Enumeration,
    pub params: P,
}

impl<P> Resolved<P> {
    pub fn enum_config(&self) -> EnumConfig {
        self.enumeration.to_config(self.seed)
    }
}

/// Parses `text` as a configuration for `experiment`; `origin` names the source in messages.
pub fn parse_config<P: DeserializeOwned + Default>(text: &str, origin: &str, experiment: &str) -> Result<ConfigFile<P>, CliError> {
    let file: ConfigFile<P> = serde_json::from_str(text).map_err(|e| CliError::Schema {
        origin: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if file.version != CONFIG_VERSION {
        return Err(schema_at(text, origin, "version", format!("unsupported config version {}, expected {CONFIG_VERSION}", file.version)));
    }
    if let Some(name) = &file.experiment {
        if name != experiment {
            return Err(schema_at(text, origin, "experiment", format!("config is for {name:?} but {experiment:?} was requested")));
        }
    }
    Ok(file)
}

/// A schema error positioned at the first occurrence of `"key"` in `text`.
fn schema_at(text: &str, origin: &str, key: &str, message: String) -> CliError {
    let needle = format!("\"{key}\"");
    let (line, column) = text.lines().enumerate().find_map(|(i, l)| l.find(&needle).map(|c| (i + 1, c + 1))).unwrap_or((1, 1));
    CliError::Schema { origin: origin.to_string(), line, column, message }
}

/// Loads the file (if any), applies flag overrides and checks that a seed is present.
pub fn resolve<P: DeserializeOwned + Default>(
    path: Option<&Path>,
    overrides: &Overrides,
    experiment: &str,
) -> Result<Resolved<P>, CliError> {
    let file = match path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
            parse_config::<P>(&text, &path.display().to_string(), experiment)?
        }
        None => {
            ConfigFile { version: CONFIG_VERSION, experiment: None, seed: None, enumeration: Enumeration::default(), params: P::default() }
        }
    };
    let seed = overrides
        .seed
        .or(file.seed)
        .ok_or_else(|| CliError::Usage("a seed is required: pass --seed N or set \"seed\" in the config".into()))?;
    let mut enumeration = file.enumeration;
    if let Some(v) = overrides.exact_threshold {
        enumeration.exact_threshold = v;
    }
    if let Some(v) = overrides.mc_samples {
        enumeration.mc_samples = v;
    }
    if let Some(v) = overrides.restarts {
        enumeration.restarts = v;
    }
    if let Some(v) = overrides.tol {
        enumeration.tol = v;
    }
    enumeration.to_config(seed).validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(Resolved { seed, enumeration, params: file.params })
}

/// Seeded random Haar instances. `grid_k` and `steps` are upper bounds
/// unless `fixed` is set; each instance draws its own sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Generator {
    pub count: usize,
    pub grid_k: u32,
    pub steps: usize,
    pub kind: HaarKind,
    pub fixed: bool,
}

impl Default for Generator {
    fn default() -> Self {
        Generator { count: 10, grid_k: 6, steps: 10, kind: HaarKind::Standard, fixed: false }
    }
}

/// Sizes and seed of one generated instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Instance {
    pub id: usize,
    pub seed: u64,
    pub grid_k: u32,
    pub steps: usize,
}

impl Generator {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.grid_k == 0 || self.grid_k > 16 {
            return Err(CliError::Usage(format!("generator.grid_k must lie in 1..=16, got {}", self.grid_k)));
        }
        Ok(())
    }

    /// Instance sizes drawn from a stream seeded by `seed`.
    pub fn instances(&self, seed: u64) -> Result<Vec<Instance>, CliError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..self.count)
            .map(|id| {
                let inst_seed = rng.next_u64();
                let grid_k = if self.fixed { self.grid_k } else { 1 + (rng.next_u64() % self.grid_k as u64) as u32 };
                let max_steps = self.steps.min((1usize << grid_k) - 1);
                let steps = if self.fixed || max_steps == 0 { max_steps } else { 1 + (rng.next_u64() % max_steps as u64) as usize };
                Instance { id, seed: inst_seed, grid_k, steps }
            })
            .collect())
    }
}

/// Short text form of a space, used in flat rows.
pub fn space_label(space: &Space) -> String {
    let exp = |p: f64| if p.is_infinite() { "inf".to_string() } else { format!("{p}") };
    match *space {
        Space::Lp { p, dim } => format!("l{}^{dim}", exp(p)),
        Space::Schatten { p, rows, cols } => format!("S{}^{rows}x{cols}", exp(p)),
        Space::HilbertOp { dim_h, dim_e } => format!("B(l2^{dim_e},l2^{dim_h})"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Default, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct P {
        n: usize,
    }

    #[test]
    fn schema_errors_carry_line_and_column() {
        let text = "{\n  \"version\": 1,\n  \"params\": {\"m\": 3}\n}";
        match parse_config::<P>(text, "cfg.json", "x") {
            Err(CliError::Schema { line, column, message, .. }) => {
                assert_eq!(line, 3);
                assert!(column > 1);
                assert!(message.contains("unknown field"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn version_and_experiment_are_checked() {
        assert!(matches!(parse_config::<P>("{\"version\": 2}", "c", "x"), Err(CliError::Schema { line: 1, .. })));
        let text = "{\"version\": 1,\n \"experiment\": \"gundy\"}";
        assert!(matches!(parse_config::<P>(text, "c", "rbound"), Err(CliError::Schema { line: 2, .. })));
        assert_eq!(parse_config::<P>("{\"version\": 1, \"params\": {\"n\": 4}}", "c", "x").unwrap().params.n, 4);
    }

    #[test]
    fn missing_seed_is_a_usage_error() {
        assert!(matches!(resolve::<P>(None, &Overrides::default(), "x"), Err(CliError::Usage(_))));
        let r = resolve::<P>(None, &Overrides { seed: Some(3), restarts: Some(4), ..Default::default() }, "x").unwrap();
        assert_eq!((r.seed, r.enumeration.restarts), (3, 4));
    }

    #[test]
    fn instances_respect_bounds_and_seed() {
        let g = Generator { count: 50, grid_k: 4, steps: 100, kind: HaarKind::Standard, fixed: false };
        let a = g.instances(9).unwrap();
        assert_eq!(a, g.instances(9).unwrap());
        for i in &a {
            assert!((1..=4).contains(&i.grid_k) && i.steps >= 1 && i.steps < (1 << i.grid_k));
        }
        let fixed = Generator { fixed: true, ..g };
        assert!(fixed.instances(1).unwrap().iter().all(|i| i.grid_k == 4 && i.steps == 15));
    }
}
