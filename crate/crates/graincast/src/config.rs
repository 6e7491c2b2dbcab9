//! Run configuration: a flat INI-style file of typed key–value sections,
//! with every key overridable from the command line as `--section.key=value`.
//!
//! Configuration is strict: unknown sections or keys are errors, values are
//! type-checked up front, and error messages name the offending field (e.g.
//! `paths.yield`). A run seed is mandatory — there is no silent
//! nondeterminism. The effective configuration (file plus overrides) has a
//! canonical rendering whose hash goes into every run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::forecast::RefitCadence;
use crate::model::VariantKind;
use crate::scenario::Co2eSummary;
use crate::seedtree;
use crate::smc::SmcConfig;

/// Raw parsed configuration: section → key → value string.
pub type ConfigMap = BTreeMap<String, BTreeMap<String, String>>;

/// `(section, key)` pairs this program understands.
const KNOWN_KEYS: &[(&str, &[&str])] = &[
    (
        "paths",
        &[
            "yield",
            "climate",
            "scenario_trajectories",
            "co2e_pathways",
            "selection_base",
            "selection_candidates",
        ],
    ),
    ("model", &["variant", "volatility_threshold"]),
    (
        "smc",
        &[
            "n_particles",
            "ess_threshold_fraction",
            "ess_target_fraction",
            "esjd_target_fraction",
            "max_move_iters",
        ],
    ),
    ("selection", &["replicates"]),
    (
        "backtest",
        &["first_eval_year", "refit", "interval_level", "risk_alpha"],
    ),
    (
        "projection",
        &["horizon", "decade_start", "decade_end", "co2e_summary"],
    ),
    ("run", &["seed", "output_dir", "threads"]),
];

fn known_key(section: &str, key: &str) -> bool {
    KNOWN_KEYS
        .iter()
        .any(|(s, keys)| *s == section && keys.contains(&key))
}

/// Parse INI-style text: `[section]` headers, `key = value` lines, `#` or
/// `;` comments, blank lines ignored. Keys must belong to a section.
pub fn parse_ini(text: &str) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    let mut section: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_string();
            if name.is_empty() {
                return Err(Error::Config(format!(
                    "line {}: empty section name",
                    lineno + 1
                )));
            }
            map.entry(name.clone()).or_default();
            section = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        let Some(ref sec) = section else {
            return Err(Error::Config(format!(
                "line {}: key `{}` outside any [section]",
                lineno + 1,
                key.trim()
            )));
        };
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        map.get_mut(sec)
            .unwrap()
            .insert(key, value.trim().to_string());
    }
    Ok(map)
}

/// Load and parse a configuration file.
pub fn load_ini(path: &Path) -> Result<ConfigMap> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_ini(&text)
}

/// Apply one `section.key=value` override on top of a parsed map.
pub fn apply_override(map: &mut ConfigMap, spec: &str) -> Result<()> {
    let Some((dotted, value)) = spec.split_once('=') else {
        return Err(Error::Config(format!(
            "override `{spec}` must look like section.key=value"
        )));
    };
    let Some((section, key)) = dotted.split_once('.') else {
        return Err(Error::Config(format!(
            "override key `{dotted}` must look like section.key"
        )));
    };
    let (section, key) = (section.trim(), key.trim());
    if section.is_empty() || key.is_empty() {
        return Err(Error::Config(format!("override `{spec}` has empty parts")));
    }
    map.entry(section.to_string())
        .or_default()
        .insert(key.to_string(), value.trim().to_string());
    Ok(())
}

/// Render the effective configuration deterministically: sorted sections,
/// sorted keys, one `section.key=value` line each.
pub fn canonical_render(map: &ConfigMap) -> String {
    let mut out = String::new();
    for (section, keys) in map {
        for (key, value) in keys {
            out.push_str(&format!("{section}.{key}={value}\n"));
        }
    }
    out
}

/// FNV-1a hash of the canonical rendering, as fixed-width hex.
pub fn config_digest(map: &ConfigMap) -> String {
    format!(
        "{:016x}",
        seedtree::fnv1a64(canonical_render(map).as_bytes())
    )
}

/// Typed, validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub yield_path: Option<PathBuf>,
    pub climate_path: Option<PathBuf>,
    pub scenario_trajectories: Option<PathBuf>,
    pub co2e_pathways: Option<PathBuf>,
    pub selection_base: Option<PathBuf>,
    pub selection_candidates: Option<PathBuf>,
    /// Model variant name (`pooled`, `hier-intercept`, `hier-variance`,
    /// `hier-iv`, `independent-iv`, `full-hier`).
    pub variant: VariantKind,
    /// Log-return volatility screen threshold; countries whose return sd
    /// exceeds it are dropped. `None` disables the screen.
    pub volatility_threshold: Option<f64>,
    pub n_particles: usize,
    pub ess_threshold_fraction: f64,
    pub ess_target_fraction: f64,
    pub esjd_target_fraction: f64,
    pub max_move_iters: u32,
    pub selection_replicates: usize,
    pub backtest_first_eval_year: Option<i32>,
    pub backtest_refit: RefitCadence,
    pub backtest_interval_level: f64,
    pub backtest_risk_alpha: f64,
    pub projection_horizon: Option<i32>,
    pub projection_decade: Option<(i32, i32)>,
    pub co2e_summary: Co2eSummary,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
    /// The effective raw map the struct was built from (for manifests).
    map: ConfigMap,
}

fn field_err(section: &str, key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{section}.{key}: {msg}"))
}

fn get_parsed<T: std::str::FromStr>(map: &ConfigMap, section: &str, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match map.get(section).and_then(|s| s.get(key)) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|e| field_err(section, key, e)),
    }
}

fn get_path(map: &ConfigMap, section: &str, key: &str) -> Option<PathBuf> {
    map.get(section).and_then(|s| s.get(key)).map(PathBuf::from)
}

impl RunConfig {
    /// Type-check a parsed map into a run configuration. Unknown keys,
    /// malformed values, out-of-range fractions, and a missing seed are all
    /// rejected here; path existence is checked later, per command, so that
    /// a config can mention inputs a given subcommand does not use.
    pub fn from_map(map: ConfigMap) -> Result<RunConfig> {
        for (section, keys) in &map {
            for key in keys.keys() {
                if !known_key(section, key) {
                    return Err(Error::Config(format!(
                        "unknown configuration key {section}.{key}"
                    )));
                }
            }
        }
        let variant = match map.get("model").and_then(|s| s.get("variant")) {
            None => VariantKind::Pooled,
            Some(name) => VariantKind::parse(name)
                .map_err(|_| field_err("model", "variant", format!("unknown variant `{name}`")))?,
        };
        let volatility_threshold = get_parsed::<f64>(&map, "model", "volatility_threshold")?;
        if let Some(v) = volatility_threshold {
            if !(v > 0.0) || !v.is_finite() {
                return Err(field_err(
                    "model",
                    "volatility_threshold",
                    format!("must be positive, got {v}"),
                ));
            }
        }
        let defaults = SmcConfig::default();
        let n_particles =
            get_parsed::<usize>(&map, "smc", "n_particles")?.unwrap_or(defaults.n_particles);
        let ess_threshold_fraction = get_parsed::<f64>(&map, "smc", "ess_threshold_fraction")?
            .unwrap_or(defaults.ess_threshold_fraction);
        let ess_target_fraction = get_parsed::<f64>(&map, "smc", "ess_target_fraction")?
            .unwrap_or(defaults.ess_target_fraction);
        let esjd_target_fraction = get_parsed::<f64>(&map, "smc", "esjd_target_fraction")?
            .unwrap_or(defaults.esjd_target_fraction);
        let max_move_iters =
            get_parsed::<u32>(&map, "smc", "max_move_iters")?.unwrap_or(defaults.max_move_iters);
        for (key, value) in [
            ("ess_threshold_fraction", ess_threshold_fraction),
            ("ess_target_fraction", ess_target_fraction),
            ("esjd_target_fraction", esjd_target_fraction),
        ] {
            if !(value > 0.0 && value < 1.0) {
                return Err(field_err(
                    "smc",
                    key,
                    format!("must lie in (0, 1), got {value}"),
                ));
            }
        }
        let selection_replicates =
            get_parsed::<usize>(&map, "selection", "replicates")?.unwrap_or(3);
        if selection_replicates == 0 {
            return Err(field_err("selection", "replicates", "must be at least 1"));
        }
        let backtest_refit = match map.get("backtest").and_then(|s| s.get("refit")) {
            None => RefitCadence::EveryYear,
            Some(raw) => match raw.as_str() {
                "every-year" => RefitCadence::EveryYear,
                "fit-once" => RefitCadence::FitOnce,
                other => {
                    return Err(field_err(
                        "backtest",
                        "refit",
                        format!("expected `every-year` or `fit-once`, got `{other}`"),
                    ))
                }
            },
        };
        let backtest_interval_level =
            get_parsed::<f64>(&map, "backtest", "interval_level")?.unwrap_or(0.95);
        let backtest_risk_alpha =
            get_parsed::<f64>(&map, "backtest", "risk_alpha")?.unwrap_or(0.99);
        for (key, value) in [
            ("interval_level", backtest_interval_level),
            ("risk_alpha", backtest_risk_alpha),
        ] {
            if !(value > 0.0 && value < 1.0) {
                return Err(field_err(
                    "backtest",
                    key,
                    format!("must lie in (0, 1), got {value}"),
                ));
            }
        }
        let decade_start = get_parsed::<i32>(&map, "projection", "decade_start")?;
        let decade_end = get_parsed::<i32>(&map, "projection", "decade_end")?;
        let projection_decade = match (decade_start, decade_end) {
            (None, None) => None,
            (Some(s), Some(e)) if s <= e => Some((s, e)),
            (Some(s), Some(e)) => {
                return Err(field_err(
                    "projection",
                    "decade_start",
                    format!("decade start {s} after end {e}"),
                ))
            }
            _ => {
                return Err(field_err(
                    "projection",
                    "decade_start",
                    "decade_start and decade_end must be set together",
                ))
            }
        };
        let co2e_summary = match map.get("projection").and_then(|s| s.get("co2e_summary")) {
            None => Co2eSummary::FinalDecadeMean,
            Some(raw) => match raw.as_str() {
                "final-decade-mean" => Co2eSummary::FinalDecadeMean,
                "end-year" => Co2eSummary::EndYear,
                other => {
                    return Err(field_err(
                        "projection",
                        "co2e_summary",
                        format!("expected `final-decade-mean` or `end-year`, got `{other}`"),
                    ))
                }
            },
        };
        let seed = get_parsed::<u64>(&map, "run", "seed")?.ok_or_else(|| {
            field_err(
                "run",
                "seed",
                "a run seed is required (no silent nondeterminism)",
            )
        })?;
        let threads = get_parsed::<usize>(&map, "run", "threads")?;
        if threads == Some(0) {
            return Err(field_err("run", "threads", "must be at least 1"));
        }
        let output_dir =
            get_path(&map, "run", "output_dir").unwrap_or_else(|| PathBuf::from("out"));

        Ok(RunConfig {
            yield_path: get_path(&map, "paths", "yield"),
            climate_path: get_path(&map, "paths", "climate"),
            scenario_trajectories: get_path(&map, "paths", "scenario_trajectories"),
            co2e_pathways: get_path(&map, "paths", "co2e_pathways"),
            selection_base: get_path(&map, "paths", "selection_base"),
            selection_candidates: get_path(&map, "paths", "selection_candidates"),
            variant,
            volatility_threshold,
            n_particles,
            ess_threshold_fraction,
            ess_target_fraction,
            esjd_target_fraction,
            max_move_iters,
            selection_replicates,
            backtest_first_eval_year: get_parsed::<i32>(&map, "backtest", "first_eval_year")?,
            backtest_refit,
            backtest_interval_level,
            backtest_risk_alpha,
            projection_horizon: get_parsed::<i32>(&map, "projection", "horizon")?,
            projection_decade,
            co2e_summary,
            seed,
            output_dir,
            threads,
            map,
        })
    }

    /// The sampler configuration implied by this run config and a seed
    /// (commands derive child seeds before calling this).
    pub fn smc_config(&self, seed: u64) -> SmcConfig {
        SmcConfig {
            n_particles: self.n_particles,
            ess_threshold_fraction: self.ess_threshold_fraction,
            ess_target_fraction: self.ess_target_fraction,
            esjd_target_fraction: self.esjd_target_fraction,
            max_move_iters: self.max_move_iters,
            seed,
            ..SmcConfig::default()
        }
    }

    /// Canonical rendering of the effective configuration.
    pub fn canonical(&self) -> String {
        canonical_render(&self.map)
    }

    /// Hash of the effective configuration for manifests.
    pub fn digest(&self) -> String {
        config_digest(&self.map)
    }

    /// Check that a path-valued field is present and exists on disk. The
    /// field name appears verbatim in the error (e.g. `paths.yield`).
    pub fn require_path(&self, field: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        let path = value
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{field}: required path not configured")))?;
        if !path.exists() {
            return Err(Error::Config(format!(
                "{field}: path {} does not exist",
                path.display()
            )));
        }
        Ok(path.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# sample configuration
[paths]
yield = data/yield.csv
climate = data/climate.csv

[model]
variant = hier-variance

[smc]
n_particles = 500

[run]
seed = 42
output_dir = artifacts
";

    #[test]
    fn parses_sections_comments_and_values() {
        let map = parse_ini(SAMPLE).unwrap();
        assert_eq!(map["paths"]["yield"], "data/yield.csv");
        assert_eq!(map["smc"]["n_particles"], "500");
        let rc = RunConfig::from_map(map).unwrap();
        assert_eq!(rc.variant, VariantKind::HierVariance);
        assert_eq!(rc.n_particles, 500);
        assert_eq!(rc.seed, 42);
        assert_eq!(rc.output_dir, PathBuf::from("artifacts"));
        // Defaults fill unset fields.
        assert_eq!(rc.ess_target_fraction, 0.8);
        assert_eq!(rc.selection_replicates, 3);
        assert_eq!(rc.backtest_refit, RefitCadence::EveryYear);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut map = parse_ini(SAMPLE).unwrap();
        map.get_mut("smc")
            .unwrap()
            .insert("particles".into(), "10".into());
        let err = RunConfig::from_map(map).unwrap_err();
        assert!(err.to_string().contains("smc.particles"), "{err}");

        let mut map = parse_ini(SAMPLE).unwrap();
        map.get_mut("smc")
            .unwrap()
            .insert("n_particles".into(), "many".into());
        let err = RunConfig::from_map(map).unwrap_err();
        assert!(err.to_string().contains("smc.n_particles"), "{err}");

        let mut map = parse_ini(SAMPLE).unwrap();
        map.get_mut("smc")
            .unwrap()
            .insert("ess_target_fraction".into(), "1.5".into());
        let err = RunConfig::from_map(map).unwrap_err();
        assert!(err.to_string().contains("smc.ess_target_fraction"), "{err}");

        let mut map = parse_ini(SAMPLE).unwrap();
        map.get_mut("model")
            .unwrap()
            .insert("variant".into(), "mystery".into());
        let err = RunConfig::from_map(map).unwrap_err();
        assert!(err.to_string().contains("model.variant"), "{err}");
    }

    #[test]
    fn seed_is_mandatory() {
        let mut map = parse_ini(SAMPLE).unwrap();
        map.get_mut("run").unwrap().remove("seed");
        let err = RunConfig::from_map(map).unwrap_err();
        assert!(err.to_string().contains("run.seed"), "{err}");
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut map = parse_ini(SAMPLE).unwrap();
        apply_override(&mut map, "smc.n_particles=900").unwrap();
        apply_override(&mut map, "backtest.refit=fit-once").unwrap();
        let rc = RunConfig::from_map(map).unwrap();
        assert_eq!(rc.n_particles, 900);
        assert_eq!(rc.backtest_refit, RefitCadence::FitOnce);

        let mut map = ConfigMap::new();
        assert!(apply_override(&mut map, "no-equals").is_err());
        assert!(apply_override(&mut map, "nodot=3").is_err());
    }

    #[test]
    fn canonical_render_is_sorted_and_digest_is_stable() {
        let a = parse_ini(SAMPLE).unwrap();
        let mut b = ConfigMap::new();
        // Insert in scrambled order; BTreeMap canonicalizes.
        apply_override(&mut b, "run.output_dir=artifacts").unwrap();
        apply_override(&mut b, "smc.n_particles=500").unwrap();
        apply_override(&mut b, "run.seed=42").unwrap();
        apply_override(&mut b, "model.variant=hier-variance").unwrap();
        apply_override(&mut b, "paths.climate=data/climate.csv").unwrap();
        apply_override(&mut b, "paths.yield=data/yield.csv").unwrap();
        assert_eq!(canonical_render(&a), canonical_render(&b));
        assert_eq!(config_digest(&a), config_digest(&b));

        apply_override(&mut b, "run.seed=43").unwrap();
        assert_ne!(config_digest(&a), config_digest(&b));
    }

    #[test]
    fn require_path_names_the_field() {
        let rc = RunConfig::from_map(parse_ini(SAMPLE).unwrap()).unwrap();
        let err = rc.require_path("paths.yield", &rc.yield_path).unwrap_err();
        assert!(err.to_string().contains("paths.yield"), "{err}");
        assert_eq!(err.exit_code(), 2);

        let err = rc
            .require_path("paths.selection_base", &rc.selection_base)
            .unwrap_err();
        assert!(err.to_string().contains("paths.selection_base"), "{err}");
    }

    #[test]
    fn parse_errors_name_the_line() {
        assert!(parse_ini("key = 1").is_err()); // key outside section
        assert!(parse_ini("[s]\njust-a-word").is_err());
        assert!(parse_ini("[]\n").is_err());
        let err = parse_ini("[s]\n= 3").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn projection_decade_must_be_paired_and_ordered() {
        let mut map = parse_ini(SAMPLE).unwrap();
        apply_override(&mut map, "projection.decade_start=2090").unwrap();
        assert!(RunConfig::from_map(map.clone()).is_err());
        apply_override(&mut map, "projection.decade_end=2080").unwrap();
        assert!(RunConfig::from_map(map.clone()).is_err());
        apply_override(&mut map, "projection.decade_end=2099").unwrap();
        let rc = RunConfig::from_map(map).unwrap();
        assert_eq!(rc.projection_decade, Some((2090, 2099)));
    }
}
