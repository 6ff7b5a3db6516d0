//! Line-based `key = value` experiment configuration.

use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;

use crate::energy::SegregationMode;
use crate::error::{Error, Result};
use crate::grid::{build_domain, DomainGrid, DomainSpec};
use crate::optimizer::SolverConfig;

/// Reference of the accepted keys, shown by `--help`.
pub const CONFIG_HELP: &str = "\
Config file: one `key = value` per line, `#` starts a comment.
Required:
  domain         square L | rectangle Lx Ly [Lz] | cube L | disk r | ball r | mask PATH
  k              number of phases (>= 2)
  a              measure budget, 0 < a < |domain|
Optional (default):
  resolution     cells per unit length (64)
  seed           first random seed (0)
  restarts       number of seeds tried, best objective kept (1)
  step           initial step length (1.0)
  beta_schedule  segregation weights per round (1, 10, 100, 1000)
  mu_safety      factor on the penalty threshold (2)
  mu_fixed       fixed penalty weight, overrides the threshold (unset)
  eps_schedule   smoothing widths relative to sqrt(k/a) (0.3, 0.1, 0.03, 0.01, 0.003)
  segregation    hard | soft (hard)
  max_outer      continuation rounds cap (12)
  max_inner      descent steps per round cap (200)
  tol_energy     relative stagnation tolerance (1e-7)
  eps_rel        support threshold relative to the sup norm (1e-3)
  eig_tol        eigensolver residual tolerance relative to lambda (1e-9)
  polish         replace phases by support eigenfunctions at the end: true | false (true)
Lists are comma or space separated. A relative mask path is resolved against the config file.";

const KEYS: [&str; 18] = [
    "domain",
    "k",
    "a",
    "resolution",
    "seed",
    "restarts",
    "step",
    "beta_schedule",
    "mu_safety",
    "mu_fixed",
    "eps_schedule",
    "segregation",
    "max_outer",
    "max_inner",
    "tol_energy",
    "eps_rel",
    "eig_tol",
    "polish",
];

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    #[serde(serialize_with = "display")]
    pub domain: DomainSpec,
    pub solver: SolverConfig,
}

fn display<S: serde::Serializer>(d: &DomainSpec, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(d)
}

impl ExperimentConfig {
    /// Builds the grid and checks the solver settings against it.
    pub fn grid(&self) -> Result<DomainGrid> {
        let grid = build_domain(&self.domain, self.solver.resolution)?;
        self.solver.validate(&grid)?;
        Ok(grid)
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text, path.parent())
}

/// Parses config text; `base` resolves relative mask paths.
pub fn parse_config_str(text: &str, base: Option<&Path>) -> Result<ExperimentConfig> {
    let mut entries: HashMap<&str, (usize, &str)> = HashMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or_else(|| Error::Config(format!("line {line_no}: expected `key = value`")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("line {line_no}: unknown key '{key}'")));
        }
        if value.is_empty() {
            return Err(Error::Config(format!("line {line_no}: empty value for '{key}'")));
        }
        if let Some((first, _)) = entries.insert(key, (line_no, value)) {
            return Err(Error::Config(format!("line {line_no}: duplicate key '{key}' (first set on line {first})")));
        }
    }
    let required =
        |key: &str| entries.get(key).copied().ok_or_else(|| Error::Config(format!("missing required key '{key}'")));
    let domain = {
        let (line, v) = required("domain")?;
        parse_domain(v, base).map_err(|m| Error::Config(format!("line {line}: {m}")))?
    };
    let mut solver = SolverConfig::default();
    solver.k = value(required("k")?, "k")?;
    solver.a = value(required("a")?, "a")?;
    for (&key, &entry) in &entries {
        match key {
            "resolution" => solver.resolution = value(entry, key)?,
            "seed" => solver.seed = value(entry, key)?,
            "restarts" => solver.restarts = value(entry, key)?,
            "step" => solver.step = value(entry, key)?,
            "beta_schedule" => solver.beta_schedule = list(entry, key)?,
            "mu_safety" => solver.mu_safety = value(entry, key)?,
            "mu_fixed" => solver.mu_fixed = Some(value(entry, key)?),
            "eps_schedule" => solver.eps_schedule = list(entry, key)?,
            "segregation" => {
                solver.segregation = match entry.1 {
                    "hard" => SegregationMode::Hard,
                    "soft" => SegregationMode::Soft,
                    v => {
                        return Err(Error::Config(format!(
                            "line {}: segregation must be hard or soft, got '{v}'",
                            entry.0
                        )))
                    }
                }
            }
            "max_outer" => solver.max_outer = value(entry, key)?,
            "max_inner" => solver.max_inner = value(entry, key)?,
            "tol_energy" => solver.tol_energy = value(entry, key)?,
            "eps_rel" => solver.eps_rel = value(entry, key)?,
            "eig_tol" => solver.eig_tol = value(entry, key)?,
            "polish" => solver.polish = value(entry, key)?,
            _ => {}
        }
    }
    let config = ExperimentConfig { domain, solver };
    if !matches!(config.domain, DomainSpec::MaskFile(_)) {
        let measure = exact_measure(&config.domain);
        if config.solver.a >= measure {
            return Err(Error::Config(format!("a must be < |Ω| = {measure}, got {}", config.solver.a)));
        }
    }
    Ok(config)
}

fn value<T: std::str::FromStr>(entry: (usize, &str), key: &str) -> Result<T> {
    entry.1.parse().map_err(|_| Error::Config(format!("line {}: malformed value '{}' for '{key}'", entry.0, entry.1)))
}

fn list(entry: (usize, &str), key: &str) -> Result<Vec<f64>> {
    entry
        .1
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| value((entry.0, s), key))
        .collect()
}

fn parse_domain(text: &str, base: Option<&Path>) -> std::result::Result<DomainSpec, String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let nums = |args: &[&str]| -> std::result::Result<Vec<f64>, String> {
        args.iter().map(|s| s.parse::<f64>().map_err(|_| format!("malformed number '{s}' in domain"))).collect()
    };
    let (kind, args) = words.split_first().ok_or("empty domain")?;
    let spec = match (*kind, args.len()) {
        ("square", 1) => DomainSpec::Rectangle(vec![nums(args)?[0]; 2]),
        ("cube", 1) => DomainSpec::Rectangle(vec![nums(args)?[0]; 3]),
        ("rectangle", 2 | 3) => DomainSpec::Rectangle(nums(args)?),
        ("disk", 1) => DomainSpec::Ball { dim: 2, radius: nums(args)?[0] },
        ("ball", 1) => DomainSpec::Ball { dim: 3, radius: nums(args)?[0] },
        ("mask", _) if !args.is_empty() => {
            let p = Path::new(text.trim_start()["mask".len()..].trim());
            let full = match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p.to_path_buf(),
            };
            return Ok(DomainSpec::MaskFile(full));
        }
        _ => return Err(format!("unrecognized domain '{text}'")),
    };
    let positive = match &spec {
        DomainSpec::Rectangle(l) => l.iter().all(|x| *x > 0.0),
        DomainSpec::Ball { radius, .. } => *radius > 0.0,
        DomainSpec::MaskFile(_) => true,
    };
    if !positive {
        return Err(format!("domain sizes must be positive in '{text}'"));
    }
    Ok(spec)
}

/// Lebesgue measure of an analytic domain.
fn exact_measure(spec: &DomainSpec) -> f64 {
    match spec {
        DomainSpec::Rectangle(l) => l.iter().product(),
        DomainSpec::Ball { dim, radius } => {
            crate::oracles::unit_ball_volume(*dim).unwrap_or(f64::NAN) * radius.powi(*dim as i32)
        }
        DomainSpec::MaskFile(_) => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config_str("domain = square 1\nk = 2\na = 0.1\n", None).unwrap();
        assert_eq!(c.domain, DomainSpec::Rectangle(vec![1.0, 1.0]));
        let d = SolverConfig::default();
        assert_eq!(c.solver.resolution, d.resolution);
        assert_eq!(c.solver.beta_schedule, d.beta_schedule);
        assert_eq!(c.solver.segregation, SegregationMode::Hard);
        assert!(c.grid().is_ok());
    }

    #[test]
    fn oversized_budget_rejected() {
        let e = parse_config_str("domain = square 1\nk = 2\na = 2\n", None).unwrap_err();
        assert!(e.to_string().contains("a must be < |Ω|"), "{e}");
    }

    #[test]
    fn duplicate_key_names_line() {
        let e = parse_config_str("domain = square 1\nk = 2\n# note\na = 0.1\nk = 3\n", None).unwrap_err();
        assert!(e.to_string().contains("line 5"), "{e}");
    }

    #[test]
    fn malformed_and_unknown() {
        assert!(parse_config_str("domain = square 1\nk = two\na = 0.1", None).is_err());
        assert!(parse_config_str("domain = square 1\nk = 2\na = 0.1\nfoo = 1", None).is_err());
        assert!(parse_config_str("domain = hexagon 1\nk = 2\na = 0.1", None).is_err());
        assert!(parse_config_str("k = 2\na = 0.1", None).is_err());
        assert!(parse_config_str("domain = square 1\nk = 2\na = 0.1\nsegregation = partial", None).is_err());
    }

    #[test]
    fn full_config() {
        let text = "domain = rectangle 2 1 # wide\nk = 3\na = 0.3\nresolution = 32\nseed = 4\nrestarts = 2\n\
                    beta_schedule = 1, 5\neps_schedule = 0.1 0.01\nmu_fixed = 0\nsegregation = soft\npolish = false";
        let c = parse_config_str(text, None).unwrap();
        assert_eq!(c.domain, DomainSpec::Rectangle(vec![2.0, 1.0]));
        assert_eq!(c.solver.beta_schedule, vec![1.0, 5.0]);
        assert_eq!(c.solver.eps_schedule, vec![0.1, 0.01]);
        assert_eq!(c.solver.mu_fixed, Some(0.0));
        assert_eq!(c.solver.segregation, SegregationMode::Soft);
        assert!(!c.solver.polish);
        assert_eq!((c.solver.seed, c.solver.restarts, c.solver.resolution), (4, 2, 32));
    }

    #[test]
    fn mask_path_is_relative_to_config() {
        let c = parse_config_str("domain = mask shapes/l.txt\nk = 2\na = 0.1", Some(Path::new("/tmp/x"))).unwrap();
        assert_eq!(c.domain, DomainSpec::MaskFile("/tmp/x/shapes/l.txt".into()));
    }
}
