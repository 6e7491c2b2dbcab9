//! Command implementations behind the command-line binary: fit, evidence,
//! select, backtest, project, verify. Each command reads its inputs
//! according to the run configuration, writes CSV artifacts plus a
//! manifest into the output directory, and never mutates its inputs.
//!
//! Manifests are byte-deterministic (no timestamps): a fixed set of
//! `key=value` lines followed by the canonical configuration, so rerunning
//! the same configuration and seed reproduces every artifact byte for byte.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::csvio::{escape_csv, fmt_f64};
use crate::error::{Error, Result};
use crate::forecast::{self, BacktestPlan};
use crate::model::{ModelVariant, VariantKind};
use crate::oracle::{self, VerifyRow};
use crate::panel::{self, align, derive_climate_regressors, AlignedDataset, CsvSchema, YieldPanel};
use crate::scenario::{self, ScenarioSet};
use crate::seedtree;
use crate::selection::{self, SelectionOutcome};
use crate::smc::{self, run_smc, SmcOutput};

/// Loaded input panels: the (possibly volatility-screened) yield panel and
/// the aligned estimation dataset.
pub struct LoadedData {
    pub yield_panel: YieldPanel,
    pub data: AlignedDataset,
    /// Countries removed by the volatility screen.
    pub screened_out: Vec<String>,
}

/// Load and align the input panels named by the configuration.
pub fn load_inputs(config: &RunConfig) -> Result<LoadedData> {
    let yield_path = config.require_path("paths.yield", &config.yield_path)?;
    let climate_path = config.require_path("paths.climate", &config.climate_path)?;
    let (yield_panel, _) = panel::load_yield_panel(&yield_path, &CsvSchema::yield_default())?;
    let (yield_panel, screened_out) = match config.volatility_threshold {
        Some(threshold) => panel::volatility_filter(&yield_panel, threshold)?,
        None => (yield_panel, Vec::new()),
    };
    let raw_climate = panel::load_climate_panel(&climate_path, &CsvSchema::climate_default())?;
    let climate = derive_climate_regressors(&raw_climate)?;
    let data = align(&yield_panel, &climate)?;
    Ok(LoadedData {
        yield_panel,
        data,
        screened_out,
    })
}

fn ensure_output_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
        path: dir.clone(),
        source,
    })?;
    Ok(dir)
}

/// Write a run manifest: sorted `key=value` header lines, a blank line,
/// then the canonical configuration. Deterministic by construction.
fn write_manifest(
    config: &RunConfig,
    command: &str,
    extras: &[(String, String)],
    dir: &Path,
) -> Result<PathBuf> {
    let mut lines: Vec<(String, String)> = vec![
        ("command".into(), command.to_string()),
        ("config_digest".into(), config.digest()),
        ("package_version".into(), env!("CARGO_PKG_VERSION").into()),
        ("seed".into(), config.seed.to_string()),
    ];
    lines.extend(extras.iter().cloned());
    lines.sort();
    let mut text = String::new();
    for (k, v) in &lines {
        text.push_str(&format!("{k}={v}\n"));
    }
    text.push('\n');
    text.push_str(&config.canonical());
    let path = dir.join(format!("manifest-{command}.txt"));
    crate::csvio::write_file(&path, &text)?;
    Ok(path)
}

/// Fit the configured variant on the full aligned panel; write the
/// posterior sample, the sampler diagnostics trace, and a manifest
/// recording the log evidence.
pub fn cmd_fit(config: &RunConfig) -> Result<SmcOutput> {
    let loaded = load_inputs(config)?;
    let variant = ModelVariant::new(config.variant, loaded.data.k());
    let smc_config = config.smc_config(seedtree::child_seed(config.seed, "fit"));
    let out = run_smc(&loaded.data, variant, &smc_config)?;
    let dir = ensure_output_dir(config)?;
    smc::write_posterior(&out, &dir.join("posterior.csv"))?;
    smc::write_diagnostics(&out.trace, &dir.join("diagnostics.csv"))?;
    write_manifest(
        config,
        "fit",
        &[
            ("log_evidence".into(), fmt_f64(out.log_evidence)),
            ("variant".into(), config.variant.as_str().into()),
            ("countries".into(), loaded.data.countries.join(";")),
            ("stages".into(), out.trace.len().to_string()),
        ],
        &dir,
    )?;
    Ok(out)
}

/// Estimate log evidence for each requested variant on the full panel
/// (replicated, with a standard-error column) and write the comparison
/// table.
pub fn cmd_evidence(
    config: &RunConfig,
    variants: &[VariantKind],
) -> Result<Vec<selection::EvidenceRecord>> {
    if variants.is_empty() {
        return Err(Error::Config("no variants requested".into()));
    }
    let loaded = load_inputs(config)?;
    let countries = loaded.data.countries.clone();
    let master = seedtree::child_seed(config.seed, "evidence-cmd");
    let smc_config = config.smc_config(0); // per-record seeds derived inside
    let mut records = Vec::with_capacity(variants.len());
    for kind in variants {
        records.push(selection::evidence_for_set(
            &loaded.data,
            &countries,
            *kind,
            &smc_config,
            config.selection_replicates,
            master,
            kind.as_str(),
        )?);
    }
    let dir = ensure_output_dir(config)?;
    let mut text = String::from("variant,country_set,log_evidence,se,replicates,config_hash\n");
    for r in &records {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            escape_csv(r.variant.kind.as_str()),
            escape_csv(&r.country_set.join(";")),
            fmt_f64(r.log_evidence),
            fmt_f64(r.se_estimate),
            r.seed_set.len(),
            r.config_hash,
        ));
    }
    crate::csvio::write_file(&dir.join("evidence.csv"), &text)?;
    write_manifest(
        config,
        "evidence",
        &[(
            "variants".into(),
            variants
                .iter()
                .map(|k| k.as_str())
                .collect::<Vec<_>>()
                .join(";"),
        )],
        &dir,
    )?;
    Ok(records)
}

/// Forward country selection from a base set over candidates ordered by
/// descending total production; write the retained set and the audit trail.
pub fn cmd_select(config: &RunConfig) -> Result<SelectionOutcome> {
    let loaded = load_inputs(config)?;
    let base_path = config.require_path("paths.selection_base", &config.selection_base)?;
    let cand_path =
        config.require_path("paths.selection_candidates", &config.selection_candidates)?;
    let base = panel::load_country_list(&base_path)?;
    let candidates_raw = panel::load_country_list(&cand_path)?;
    let candidates = selection::order_by_production(&loaded.yield_panel, &candidates_raw)?;
    let smc_config = config.smc_config(0);
    let outcome = selection::forward_select(
        &base,
        &candidates,
        config.variant,
        &loaded.data,
        &smc_config,
        config.selection_replicates,
        seedtree::child_seed(config.seed, "select"),
    )?;
    let dir = ensure_output_dir(config)?;
    let mut text = String::new();
    for c in &outcome.selected {
        text.push_str(c);
        text.push('\n');
    }
    crate::csvio::write_file(&dir.join("selected.txt"), &text)?;
    selection::write_audit(&outcome.audit, &dir.join("audit.csv"))?;
    write_manifest(
        config,
        "select",
        &[
            ("selected".into(), outcome.selected.join(";")),
            ("examined".into(), outcome.audit.len().to_string()),
        ],
        &dir,
    )?;
    Ok(outcome)
}

/// Rolling one-step backtest plus leave-future-out predictive scoring over
/// the configured evaluation window; write forecast, calibration, and
/// per-year predictive-density tables.
pub fn cmd_backtest(config: &RunConfig) -> Result<forecast::BacktestOutput> {
    let loaded = load_inputs(config)?;
    let first_eval_year = config.backtest_first_eval_year.ok_or_else(|| {
        Error::Config("backtest.first_eval_year: required for backtesting".into())
    })?;
    let variant = ModelVariant::new(config.variant, loaded.data.k());
    let plan = BacktestPlan {
        first_eval_year,
        refit: config.backtest_refit,
        interval_level: config.backtest_interval_level,
        risk_alpha: config.backtest_risk_alpha,
    };
    let smc_config = config.smc_config(seedtree::child_seed(config.seed, "backtest"));
    let out = forecast::backtest(&loaded.data, variant, &smc_config, &plan)?;

    let tau = loaded
        .data
        .years_effective
        .iter()
        .position(|&y| y >= first_eval_year)
        .unwrap_or(loaded.data.t_len());
    let elpd = if tau < loaded.data.t_len() && tau >= 4 {
        let elpd_config = config.smc_config(seedtree::child_seed(config.seed, "elpd"));
        Some(forecast::lfo_cv_elpd(
            &loaded.data,
            variant,
            &elpd_config,
            tau,
        )?)
    } else {
        None
    };

    let dir = ensure_output_dir(config)?;
    forecast::write_forecast(&out.rows, &dir.join("forecast.csv"))?;
    forecast::write_calibration(&out.calibration, &dir.join("calibration.csv"))?;
    let mut extras = vec![
        ("eval_rows".into(), out.rows.len().to_string()),
        ("variant".into(), config.variant.as_str().into()),
    ];
    if let Some((total, per_year)) = &elpd {
        forecast::write_elpd(per_year, &dir.join("elpd.csv"))?;
        extras.push(("elpd".into(), fmt_f64(*total)));
    }
    write_manifest(config, "backtest", &extras, &dir)?;
    Ok(out)
}

/// Fit the posterior, propagate it through the configured scenario set, and
/// write the projection bundle (percent-change curves, decadal densities,
/// and — given at least two scenarios — the tail-risk-versus-concentration
/// curve).
pub fn cmd_project(config: &RunConfig) -> Result<Vec<scenario::ProjectionDraws>> {
    let loaded = load_inputs(config)?;
    let horizon = config
        .projection_horizon
        .ok_or_else(|| Error::Config("projection.horizon: required for projection".into()))?;
    let traj_path =
        config.require_path("paths.scenario_trajectories", &config.scenario_trajectories)?;
    let co2e_path = config.require_path("paths.co2e_pathways", &config.co2e_pathways)?;
    let set: ScenarioSet = scenario::assemble_scenario_set(
        scenario::load_scenario_trajectories(&traj_path)?,
        scenario::load_co2e_pathways(&co2e_path)?,
    )?;

    // Base production levels: last observed level per aligned country.
    let last = loaded.yield_panel.last_levels();
    let mut base_levels = Vec::with_capacity(loaded.data.k());
    for c in &loaded.data.countries {
        let i = loaded
            .yield_panel
            .countries
            .iter()
            .position(|p| p == c)
            .expect("aligned country exists in yield panel");
        match last[i] {
            Some((_, level)) if level > 0.0 => base_levels.push(level),
            _ => {
                return Err(Error::MissingLevel(format!(
                    "country {c} has no positive final production level"
                )))
            }
        }
    }

    let variant = ModelVariant::new(config.variant, loaded.data.k());
    let smc_config = config.smc_config(seedtree::child_seed(config.seed, "project-fit"));
    let fit = run_smc(&loaded.data, variant, &smc_config)?;
    let all_draws = scenario::project(
        &fit.system,
        &loaded.data,
        variant,
        &set,
        &base_levels,
        horizon,
        seedtree::child_seed(config.seed, "project"),
    )?;

    let decade = config.projection_decade.unwrap_or((horizon - 9, horizon));
    let dir = ensure_output_dir(config)?;
    let mut curve_rows = Vec::new();
    let mut densities = Vec::new();
    for draws in &all_draws {
        curve_rows.extend(scenario::percent_change_curve(draws)?);
        densities.push((
            draws.scenario_id.clone(),
            scenario::decadal_density(draws, decade)?,
        ));
    }
    scenario::write_projection_curve(&curve_rows, &dir.join("projection_curve.csv"))?;
    scenario::write_decadal_density(&densities, &dir.join("decadal_density.csv"))?;
    let mut extras = vec![
        ("horizon".into(), horizon.to_string()),
        ("decade".into(), format!("{}-{}", decade.0, decade.1)),
        ("log_evidence".into(), fmt_f64(fit.log_evidence)),
        ("scenarios".into(), all_draws.len().to_string()),
    ];
    if set.scenarios.len() >= 2 {
        let curve = scenario::es_vs_co2e_curve(&set, &all_draws, decade, config.co2e_summary)?;
        scenario::write_es_curve(&curve, &dir.join("es_curve.csv"))?;
        extras.push(("es_curve_rows".into(), curve.len().to_string()));
    } else {
        eprintln!(
            "note: single scenario — skipping the concentration curve \
             (needs at least 2 scenarios)"
        );
    }
    write_manifest(config, "project", &extras, &dir)?;
    Ok(all_draws)
}

/// Run the built-in oracle suite, print one line per check, optionally
/// write the report as CSV, and fail if any check fails.
pub fn cmd_verify(output_dir: Option<&Path>) -> Result<Vec<VerifyRow>> {
    let rows = oracle::verify_suite()?;
    println!(
        "{:<58} {:>12} {:>12}  {}",
        "check", "tolerance", "measured", "status"
    );
    for r in &rows {
        println!(
            "{:<58} {:>12.3e} {:>12.3e}  {}",
            r.check,
            r.tolerance,
            r.measured,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    if let Some(dir) = output_dir {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut text = String::from("check,tolerance,measured,pass\n");
        for r in &rows {
            text.push_str(&format!(
                "{},{},{},{}\n",
                escape_csv(&r.check),
                fmt_f64(r.tolerance),
                fmt_f64(r.measured),
                r.pass,
            ));
        }
        crate::csvio::write_file(&dir.join("verify.csv"), &text)?;
    }
    let failures: Vec<&str> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.check.as_str())
        .collect();
    if !failures.is_empty() {
        return Err(Error::Numerical(format!(
            "oracle checks failed: {}",
            failures.join("; ")
        )));
    }
    Ok(rows)
}
