//! Climate-scenario ensemble projection and uncertainty decomposition.
//!
//! A fitted posterior is propagated through future temperature trajectories:
//! for each (scenario, climate model, particle) the one-step predictive is
//! iterated forward year by year, each sampled log-return feeding back as
//! the next year's lag, with per-country production levels compounded from
//! the projection origin. Parameter draws stay frozen at the fitted
//! posterior for the whole horizon — nothing is re-learned from simulated
//! futures.
//!
//! Downstream summaries decompose the spread of the resulting draw tensor:
//! the climate-only band is the interquartile range across per-climate-model
//! predictive means (parameter and observation noise averaged out), while
//! total bands are quantiles of the pooled draws across models and
//! particles. Decadal densities, percent-change curves relative to the
//! projection origin, and expected-shortfall-versus-CO₂e curves are all
//! weighted-empirical computations on the same tensor.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::csvio::{self, escape_csv, fmt_f64};
use crate::error::{Error, Result};
use crate::forecast::{
    tail_risk, weighted_mean, weighted_quantile, EnsembleKind, PredictiveEnsemble, RiskTail,
};
use crate::mat::Mat;
use crate::model::ModelVariant;
use crate::panel::{derive_climate_regressors, AlignedDataset, ClimatePanel, RawClimatePanel};
use crate::seedtree;
use crate::smc::ParticleSystem;

/// One emissions scenario: a CO₂e concentration pathway and the per-climate-
/// model temperature trajectories it induces.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub scenario_id: String,
    /// `(year, ppm)` pairs sorted by year.
    pub co2e_pathway: Vec<(i32, f64)>,
    /// `(climate_model_id, trajectory)` pairs sorted by model id.
    pub trajectories: Vec<(String, ClimatePanel)>,
}

/// A set of scenarios sharing a country set and year range.
#[derive(Debug, Clone)]
pub struct ScenarioSet {
    pub scenarios: Vec<Scenario>,
}

impl ScenarioSet {
    /// Check the structural invariants: at least one scenario, at least one
    /// climate model per scenario, and all trajectories (across the whole
    /// set) sharing one country set and one year range.
    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("scenario set is empty".into()));
        }
        let mut reference: Option<(&Vec<String>, &Vec<i32>)> = None;
        for sc in &self.scenarios {
            if sc.trajectories.is_empty() {
                return Err(Error::Config(format!(
                    "scenario {} has no climate-model trajectories",
                    sc.scenario_id
                )));
            }
            for (model, panel) in &sc.trajectories {
                match reference {
                    None => reference = Some((&panel.countries, &panel.years)),
                    Some((countries, years)) => {
                        if &panel.countries != countries || &panel.years != years {
                            return Err(Error::MismatchedData(format!(
                                "trajectory {}/{model} does not share the \
                                 country set and year range of the rest of \
                                 the scenario set",
                                sc.scenario_id
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Load per-(scenario, climate model) temperature trajectories from a long
/// CSV with columns `scenario,climate_model,country,year,mean_temp`.
pub fn load_scenario_trajectories(
    path: &Path,
) -> Result<BTreeMap<String, Vec<(String, ClimatePanel)>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_scenario_trajectories_from_reader(file, path)
}

/// Parse scenario trajectories from any byte source; `path` stands in for
/// the file path in error messages.
pub fn load_scenario_trajectories_from_reader<R: std::io::Read>(
    source: R,
    path: &Path,
) -> Result<BTreeMap<String, Vec<(String, ClimatePanel)>>> {
    let mut reader = csvio::csv_from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| malformed(path, 1, e.to_string()))?
        .clone();
    let si = csvio::header_index(&headers, "scenario", path)?;
    let mi = csvio::header_index(&headers, "climate_model", path)?;
    let ci = csvio::header_index(&headers, "country", path)?;
    let yi = csvio::header_index(&headers, "year", path)?;
    let ti = csvio::header_index(&headers, "mean_temp", path)?;

    type CellMap = BTreeMap<(String, i32), f64>;
    let mut groups: BTreeMap<(String, String), CellMap> = BTreeMap::new();
    for (row_no, record) in reader.records().enumerate() {
        let line = row_no as u64 + 2;
        let record = record.map_err(|e| malformed(path, line, e.to_string()))?;
        let field = |idx: usize, name: &str| -> Result<String> {
            Ok(record
                .get(idx)
                .ok_or_else(|| malformed(path, line, format!("missing {name} field")))?
                .trim()
                .to_string())
        };
        let scenario = field(si, "scenario")?;
        let model = field(mi, "climate_model")?;
        let country = field(ci, "country")?;
        if scenario.is_empty() || model.is_empty() || country.is_empty() {
            return Err(malformed(path, line, "empty identifier field".into()));
        }
        let year: i32 = field(yi, "year")?
            .parse()
            .map_err(|e| malformed(path, line, format!("bad year: {e}")))?;
        let temp: f64 = field(ti, "mean_temp")?
            .parse()
            .map_err(|e| malformed(path, line, format!("bad mean_temp: {e}")))?;
        if !temp.is_finite() {
            return Err(malformed(path, line, "non-finite mean_temp".into()));
        }
        let cells = groups.entry((scenario.clone(), model)).or_default();
        if cells.insert((country.clone(), year), temp).is_some() {
            return Err(Error::DuplicateKey {
                path: path.to_path_buf(),
                country,
                year,
            });
        }
    }
    if groups.is_empty() {
        return Err(malformed(path, 1, "no data rows".into()));
    }

    let mut out: BTreeMap<String, Vec<(String, ClimatePanel)>> = BTreeMap::new();
    for ((scenario, model), cells) in groups {
        let mut countries: Vec<String> = cells.keys().map(|(c, _)| c.clone()).collect();
        countries.dedup();
        let y_min = cells.keys().map(|&(_, y)| y).min().unwrap();
        let y_max = cells.keys().map(|&(_, y)| y).max().unwrap();
        let years: Vec<i32> = (y_min..=y_max).collect();
        let mut mean_temp = Mat::missing(countries.len(), years.len());
        for (i, c) in countries.iter().enumerate() {
            for (t, yr) in years.iter().enumerate() {
                if let Some(&v) = cells.get(&(c.clone(), *yr)) {
                    mean_temp.set(i, t, v);
                }
            }
        }
        let panel = derive_climate_regressors(&RawClimatePanel {
            countries,
            years,
            mean_temp,
        })?;
        out.entry(scenario).or_default().push((model, panel));
    }
    Ok(out)
}

/// Load CO₂e concentration pathways from a CSV with columns
/// `scenario,year,co2e_ppm`. Each pathway comes back sorted by year.
pub fn load_co2e_pathways(path: &Path) -> Result<BTreeMap<String, Vec<(i32, f64)>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_co2e_pathways_from_reader(file, path)
}

/// Parse CO₂e pathways from any byte source; `path` stands in for the file
/// path in error messages.
pub fn load_co2e_pathways_from_reader<R: std::io::Read>(
    source: R,
    path: &Path,
) -> Result<BTreeMap<String, Vec<(i32, f64)>>> {
    let mut reader = csvio::csv_from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| malformed(path, 1, e.to_string()))?
        .clone();
    let si = csvio::header_index(&headers, "scenario", path)?;
    let yi = csvio::header_index(&headers, "year", path)?;
    let pi = csvio::header_index(&headers, "co2e_ppm", path)?;
    let mut by_scenario: BTreeMap<String, BTreeMap<i32, f64>> = BTreeMap::new();
    for (row_no, record) in reader.records().enumerate() {
        let line = row_no as u64 + 2;
        let record = record.map_err(|e| malformed(path, line, e.to_string()))?;
        let get = |idx: usize, name: &str| -> Result<String> {
            Ok(record
                .get(idx)
                .ok_or_else(|| malformed(path, line, format!("missing {name} field")))?
                .trim()
                .to_string())
        };
        let scenario = get(si, "scenario")?;
        if scenario.is_empty() {
            return Err(malformed(path, line, "empty scenario id".into()));
        }
        let year: i32 = get(yi, "year")?
            .parse()
            .map_err(|e| malformed(path, line, format!("bad year: {e}")))?;
        let ppm: f64 = get(pi, "co2e_ppm")?
            .parse()
            .map_err(|e| malformed(path, line, format!("bad co2e_ppm: {e}")))?;
        if !ppm.is_finite() || ppm <= 0.0 {
            return Err(malformed(path, line, format!("bad concentration {ppm}")));
        }
        if by_scenario
            .entry(scenario.clone())
            .or_default()
            .insert(year, ppm)
            .is_some()
        {
            return Err(Error::DuplicateKey {
                path: path.to_path_buf(),
                country: scenario,
                year,
            });
        }
    }
    if by_scenario.is_empty() {
        return Err(malformed(path, 1, "no data rows".into()));
    }
    Ok(by_scenario
        .into_iter()
        .map(|(s, m)| (s, m.into_iter().collect()))
        .collect())
}

/// Join loaded trajectories and pathways into a validated scenario set.
/// Every scenario with trajectories must have a pathway.
pub fn assemble_scenario_set(
    trajectories: BTreeMap<String, Vec<(String, ClimatePanel)>>,
    mut pathways: BTreeMap<String, Vec<(i32, f64)>>,
) -> Result<ScenarioSet> {
    let mut scenarios = Vec::with_capacity(trajectories.len());
    for (scenario_id, trajs) in trajectories {
        let co2e_pathway = pathways.remove(&scenario_id).ok_or_else(|| {
            Error::MismatchedData(format!(
                "scenario {scenario_id} has trajectories but no concentration pathway"
            ))
        })?;
        scenarios.push(Scenario {
            scenario_id,
            co2e_pathway,
            trajectories: trajs,
        });
    }
    let set = ScenarioSet { scenarios };
    set.validate()?;
    Ok(set)
}

fn malformed(path: &Path, line: u64, msg: String) -> Error {
    Error::MalformedFile {
        path: path.to_path_buf(),
        line,
        msg,
    }
}

/// Draws for one climate model within a scenario.
#[derive(Debug, Clone)]
pub struct ModelDraws {
    pub climate_model: String,
    /// Per projected year, an N×K matrix of sampled log-returns.
    pub log_returns: Vec<Mat>,
    /// N×nyears matrix of global production levels (sum over countries of
    /// the compounded per-country levels).
    pub global: Mat,
}

/// The raw draw tensor for one scenario: (climate model, particle, year,
/// country)-indexed log-returns plus the compounded global production
/// levels, with the posterior particle weights.
#[derive(Debug, Clone)]
pub struct ProjectionDraws {
    pub scenario_id: String,
    /// Projected calendar years (first = origin year + 1).
    pub years: Vec<i32>,
    pub countries: Vec<String>,
    /// Posterior particle weights (shared by every climate model).
    pub weights: Vec<f64>,
    pub models: Vec<ModelDraws>,
    /// Projection origin: the final observed year, whose production levels
    /// seed the compounding.
    pub baseline_year: i32,
    /// Global production at the origin (sum of base levels).
    pub baseline_global: f64,
}

/// Propagate a fitted posterior through one scenario's climate-model
/// trajectories, from the year after the last observed column out to
/// `horizon` inclusive.
///
/// Per (climate model, particle): the lag state starts at the last two
/// observed log-returns, the decaying-intercept clock continues from the
/// data's time index, and each year's draw `ŷ ~ N(μ, σ_country²)` feeds
/// back as the next lag while production compounds as `L ← L·exp(ŷ)`.
/// `base_levels` are the per-country production levels at the origin year.
///
/// Randomness is seeded per (scenario, model, particle slot), so the draw
/// tensor is identical regardless of thread count or model ordering.
pub fn project_scenario(
    system: &ParticleSystem,
    data: &AlignedDataset,
    variant: ModelVariant,
    scenario: &Scenario,
    base_levels: &[f64],
    horizon: i32,
    seed: u64,
) -> Result<ProjectionDraws> {
    let k = data.k();
    let n = system.len();
    let layout = variant.layout();
    if base_levels.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "{} base levels for {} countries",
            base_levels.len(),
            k
        )));
    }
    for (i, lvl) in base_levels.iter().enumerate() {
        if !(lvl > &0.0) || !lvl.is_finite() {
            return Err(Error::MissingLevel(format!(
                "country {} lacks a positive base production level (got {lvl})",
                data.countries[i]
            )));
        }
    }
    let last_col = data.t_len() - 1;
    let origin_year = data.years_effective[last_col];
    if horizon <= origin_year {
        return Err(Error::Config(format!(
            "projection horizon {horizon} does not extend past the final \
             observed year {origin_year}"
        )));
    }
    // Lag state at the origin: the last two observed log-returns.
    let mut lag_init = Vec::with_capacity(k);
    for i in 0..k {
        let y1 = data.y.get(i, last_col);
        let y2 = if last_col >= 1 {
            data.y.get(i, last_col - 1)
        } else {
            data.y_lag1.get(i, last_col)
        };
        match (y1, y2) {
            (Some(a), Some(b)) => lag_init.push((a, b)),
            _ => {
                return Err(Error::MissingRegressor {
                    country: i,
                    t: last_col,
                })
            }
        }
    }
    let years: Vec<i32> = (origin_year + 1..=horizon).collect();
    let t0 = data.time_index[last_col];

    // Map each dataset country to its row in the trajectory panels (the
    // whole set shares one country list, so the first panel suffices) and
    // pre-resolve the climate regressors per (model, year, country).
    let scenario_seed = seedtree::child_seed(seed, &scenario.scenario_id);
    let models: Result<Vec<ModelDraws>> = scenario
        .trajectories
        .par_iter()
        .map(|(model_id, panel)| {
            let end = *panel.years.last().unwrap();
            if horizon > end {
                return Err(Error::HorizonExceedsTrajectory { horizon, end });
            }
            let mut rows = Vec::with_capacity(k);
            for c in &data.countries {
                let idx = panel.countries.iter().position(|p| p == c).ok_or_else(|| {
                    Error::MismatchedData(format!(
                        "trajectory {}/{model_id} lacks country {c}",
                        scenario.scenario_id
                    ))
                })?;
                rows.push(idx);
            }
            // delta_t column t belongs to panel.years[t + 1].
            let mut dt = Mat::missing(k, years.len());
            let mut dt2 = Mat::missing(k, years.len());
            for (j, year) in years.iter().enumerate() {
                let pos = panel
                    .years
                    .iter()
                    .position(|y| y == year)
                    .ok_or(Error::MissingClimateForTarget(*year))?;
                if pos == 0 {
                    return Err(Error::MissingClimateForTarget(*year));
                }
                for (i, &row) in rows.iter().enumerate() {
                    match (
                        panel.delta_t.get(row, pos - 1),
                        panel.delta_t_sq.get(row, pos - 1),
                    ) {
                        (Some(a), Some(b)) => {
                            dt.set(i, j, a);
                            dt2.set(i, j, b);
                        }
                        _ => return Err(Error::MissingClimateForTarget(*year)),
                    }
                }
            }

            let model_seed = seedtree::child_seed(scenario_seed, model_id);
            let mut log_returns = vec![Mat::missing(n, k); years.len()];
            let mut global = Mat::missing(n, years.len());
            let draws: Vec<(Vec<Vec<f64>>, Vec<f64>)> = (0..n)
                .into_par_iter()
                .map(|pn| {
                    let particle = &system.particles[pn];
                    let mut rng = seedtree::indexed_stream(model_seed, "path", pn as u64);
                    let mut lags = lag_init.clone();
                    let mut levels = base_levels.to_vec();
                    let mut per_year = Vec::with_capacity(years.len());
                    let mut globals = Vec::with_capacity(years.len());
                    for (j, _) in years.iter().enumerate() {
                        let t = t0 as f64 + (j + 1) as f64;
                        let mut row = Vec::with_capacity(k);
                        for i in 0..k {
                            let a = layout.a(particle, i);
                            let lambda = layout.lambda(particle, i);
                            let mu = a * (-lambda * t).exp()
                                + layout.theta(particle, 1, i) * lags[i].0
                                + layout.theta(particle, 2, i) * lags[i].1
                                + layout.theta(particle, 3, i) * dt.raw(i, j)
                                + layout.theta(particle, 4, i) * dt2.raw(i, j);
                            let sigma2 = layout.sigma2(particle, i);
                            let z: f64 = rng.sample(StandardNormal);
                            let draw = mu + sigma2.sqrt() * z;
                            lags[i] = (draw, lags[i].0);
                            levels[i] *= draw.exp();
                            row.push(draw);
                        }
                        globals.push(levels.iter().sum());
                        per_year.push(row);
                    }
                    (per_year, globals)
                })
                .collect();
            for (pn, (per_year, globals)) in draws.into_iter().enumerate() {
                for (j, row) in per_year.into_iter().enumerate() {
                    for (i, v) in row.into_iter().enumerate() {
                        log_returns[j].set(pn, i, v);
                    }
                }
                for (j, g) in globals.into_iter().enumerate() {
                    global.set(pn, j, g);
                }
            }
            Ok(ModelDraws {
                climate_model: model_id.clone(),
                log_returns,
                global,
            })
        })
        .collect();

    Ok(ProjectionDraws {
        scenario_id: scenario.scenario_id.clone(),
        years,
        countries: data.countries.clone(),
        weights: system.weights(),
        models: models?,
        baseline_year: origin_year,
        baseline_global: base_levels.iter().sum(),
    })
}

/// Propagate the posterior through every scenario in the set.
pub fn project(
    system: &ParticleSystem,
    data: &AlignedDataset,
    variant: ModelVariant,
    scenarios: &ScenarioSet,
    base_levels: &[f64],
    horizon: i32,
    seed: u64,
) -> Result<Vec<ProjectionDraws>> {
    scenarios.validate()?;
    scenarios
        .scenarios
        .iter()
        .map(|sc| project_scenario(system, data, variant, sc, base_levels, horizon, seed))
        .collect()
}

/// Pool one projected year's global-production draws across climate models:
/// values from every model concatenated, weights scaled by 1/n_models.
fn pooled_year(draws: &ProjectionDraws, j: usize) -> (Vec<f64>, Vec<f64>) {
    let m = draws.models.len();
    let n = draws.weights.len();
    let mut values = Vec::with_capacity(m * n);
    let mut weights = Vec::with_capacity(m * n);
    for md in &draws.models {
        for pn in 0..n {
            values.push(md.global.raw(pn, j));
            weights.push(draws.weights[pn] / m as f64);
        }
    }
    (values, weights)
}

/// One year's uncertainty decomposition.
#[derive(Debug, Clone)]
pub struct YearDecomposition {
    pub year: i32,
    /// `(q25, q75)` across per-climate-model predictive means; absent with
    /// a single climate model (the spread is undefined, not zero).
    pub climate_only_band: Option<(f64, f64)>,
    /// `(q25, q75)` of the pooled draws across models and particles.
    pub total_iqr: (f64, f64),
    /// `(q2.5, q97.5)` of the pooled draws.
    pub total_band: (f64, f64),
}

/// Decompose projection uncertainty year by year: climate-model spread as
/// the interquartile range over model-specific predictive means (parameter
/// and noise uncertainty averaged out), against quantiles of the pooled
/// draws.
pub fn decompose_uncertainty(draws: &ProjectionDraws) -> Result<Vec<YearDecomposition>> {
    let mut out = Vec::with_capacity(draws.years.len());
    for (j, &year) in draws.years.iter().enumerate() {
        let model_means: Vec<f64> = draws
            .models
            .iter()
            .map(|md| {
                let col: Vec<f64> = (0..draws.weights.len())
                    .map(|pn| md.global.raw(pn, j))
                    .collect();
                weighted_mean(&col, &draws.weights)
            })
            .collect();
        let climate_only_band = if model_means.len() >= 2 {
            let w = vec![1.0 / model_means.len() as f64; model_means.len()];
            Some((
                weighted_quantile(&model_means, &w, 0.25)?,
                weighted_quantile(&model_means, &w, 0.75)?,
            ))
        } else {
            None
        };
        let (values, weights) = pooled_year(draws, j);
        let total_iqr = (
            weighted_quantile(&values, &weights, 0.25)?,
            weighted_quantile(&values, &weights, 0.75)?,
        );
        let total_band = (
            weighted_quantile(&values, &weights, 0.025)?,
            weighted_quantile(&values, &weights, 0.975)?,
        );
        out.push(YearDecomposition {
            year,
            climate_only_band,
            total_iqr,
            total_band,
        });
    }
    Ok(out)
}

/// Weighted sample of decade-mean global production, pooled across climate
/// models: per (model, particle) the mean of annual global production over
/// the decade's years, with weights `w_particle / n_models`.
pub fn decadal_density(draws: &ProjectionDraws, decade: (i32, i32)) -> Result<PredictiveEnsemble> {
    let (start, end) = decade;
    if start > end {
        return Err(Error::Config(format!(
            "decade start {start} after end {end}"
        )));
    }
    let first = draws.years.first().copied().unwrap_or(i32::MAX);
    let last = draws.years.last().copied().unwrap_or(i32::MIN);
    if start < first || end > last {
        return Err(Error::HorizonExceedsTrajectory {
            horizon: end,
            end: last,
        });
    }
    let cols: Vec<usize> = draws
        .years
        .iter()
        .enumerate()
        .filter(|(_, y)| (start..=end).contains(y))
        .map(|(j, _)| j)
        .collect();
    let m = draws.models.len();
    let n = draws.weights.len();
    let mut values = Mat::missing(m * n, 1);
    let mut weights = Vec::with_capacity(m * n);
    for (mi, md) in draws.models.iter().enumerate() {
        for pn in 0..n {
            let mean = cols.iter().map(|&j| md.global.raw(pn, j)).sum::<f64>() / cols.len() as f64;
            values.set(mi * n + pn, 0, mean);
            weights.push(draws.weights[pn] / m as f64);
        }
    }
    Ok(PredictiveEnsemble {
        target_year: end,
        countries: vec!["GLOBAL".to_string()],
        country_values: values,
        weights,
        kind: EnsembleKind::ProductionLevel,
    })
}

/// One year (or one decade) of a projection summary curve.
#[derive(Debug, Clone)]
pub struct ProjectionSummary {
    pub scenario_id: String,
    pub year: i32,
    /// Pooled weighted mean of the percent change.
    pub ensemble_mean: f64,
    /// `(q25, q75)` of the pooled percent-change draws.
    pub iqr: (f64, f64),
    /// `(q25, q75)` across per-climate-model means; absent with one model.
    pub climate_only_band: Option<(f64, f64)>,
    /// `(q2.5, q97.5)` of the pooled percent-change draws.
    pub total_band: (f64, f64),
    /// Lower-tail 1% expected shortfall of the pooled percent change.
    pub es01: f64,
    pub baseline_year: i32,
}

/// Per-year percent change of global production relative to the projection
/// origin, applied draw-wise and then summarized (pooled mean, interquartile
/// range, climate-only band, 2.5/97.5% band, lower-tail 1% expected
/// shortfall).
pub fn percent_change_curve(draws: &ProjectionDraws) -> Result<Vec<ProjectionSummary>> {
    if !(draws.baseline_global > 0.0) {
        return Err(Error::ZeroBaseline);
    }
    let base = draws.baseline_global;
    let pct = |level: f64| 100.0 * (level / base - 1.0);
    let mut out = Vec::with_capacity(draws.years.len());
    for (j, &year) in draws.years.iter().enumerate() {
        let (levels, weights) = pooled_year(draws, j);
        let values: Vec<f64> = levels.into_iter().map(pct).collect();
        let model_means: Vec<f64> = draws
            .models
            .iter()
            .map(|md| {
                let col: Vec<f64> = (0..draws.weights.len())
                    .map(|pn| pct(md.global.raw(pn, j)))
                    .collect();
                weighted_mean(&col, &draws.weights)
            })
            .collect();
        let climate_only_band = if model_means.len() >= 2 {
            let w = vec![1.0 / model_means.len() as f64; model_means.len()];
            Some((
                weighted_quantile(&model_means, &w, 0.25)?,
                weighted_quantile(&model_means, &w, 0.75)?,
            ))
        } else {
            None
        };
        let risk = tail_risk(&values, &weights, 0.99, RiskTail::LowerIsBad)?;
        out.push(ProjectionSummary {
            scenario_id: draws.scenario_id.clone(),
            year,
            ensemble_mean: weighted_mean(&values, &weights),
            iqr: (
                weighted_quantile(&values, &weights, 0.25)?,
                weighted_quantile(&values, &weights, 0.75)?,
            ),
            climate_only_band,
            total_band: (
                weighted_quantile(&values, &weights, 0.025)?,
                weighted_quantile(&values, &weights, 0.975)?,
            ),
            es01: risk.es_value,
            baseline_year: draws.baseline_year,
        });
    }
    Ok(out)
}

/// How to reduce a CO₂e pathway to the curve's x-coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Co2eSummary {
    /// Mean concentration over the final projection decade.
    FinalDecadeMean,
    /// Concentration at the horizon year itself.
    EndYear,
}

/// One scenario's point on the expected-shortfall-versus-concentration
/// curve.
#[derive(Debug, Clone)]
pub struct EsCurveRow {
    pub scenario_id: String,
    /// End-of-century CO₂e summary (the x-coordinate).
    pub co2e: f64,
    /// Pooled mean of the decade-mean percent change.
    pub mean_pct: f64,
    /// `(q2.5, q97.5)` across per-climate-model means of the decade-mean
    /// percent change; absent with a single model.
    pub climate_band: Option<(f64, f64)>,
    /// `(q2.5, q97.5)` of the pooled decade-mean percent change.
    pub total_band: (f64, f64),
    /// Lower-tail 1% expected shortfall of the decade-mean percent change.
    pub es01: f64,
}

/// Reduce a pathway to the requested summary over `decade`.
fn co2e_coordinate(
    pathway: &[(i32, f64)],
    decade: (i32, i32),
    summary: Co2eSummary,
) -> Result<f64> {
    match summary {
        Co2eSummary::EndYear => pathway
            .iter()
            .find(|(y, _)| *y == decade.1)
            .map(|(_, p)| *p)
            .ok_or(Error::MissingClimateForTarget(decade.1)),
        Co2eSummary::FinalDecadeMean => {
            let vals: Vec<f64> = pathway
                .iter()
                .filter(|(y, _)| (decade.0..=decade.1).contains(y))
                .map(|(_, p)| *p)
                .collect();
            if vals.is_empty() {
                return Err(Error::MissingClimateForTarget(decade.1));
            }
            Ok(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// Build the expected-shortfall-versus-CO₂e curve over the final projection
/// decade: one row per scenario, sorted by the concentration coordinate.
pub fn es_vs_co2e_curve(
    scenarios: &ScenarioSet,
    all_draws: &[ProjectionDraws],
    decade: (i32, i32),
    co2e_summary: Co2eSummary,
) -> Result<Vec<EsCurveRow>> {
    if scenarios.scenarios.len() < 2 {
        return Err(Error::Config(
            "concentration curve needs at least 2 scenarios".into(),
        ));
    }
    if scenarios.scenarios.len() != all_draws.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scenarios but {} draw tensors",
            scenarios.scenarios.len(),
            all_draws.len()
        )));
    }
    let mut rows = Vec::with_capacity(all_draws.len());
    for (sc, draws) in scenarios.scenarios.iter().zip(all_draws) {
        if sc.scenario_id != draws.scenario_id {
            return Err(Error::MismatchedData(format!(
                "scenario {} paired with draws for {}",
                sc.scenario_id, draws.scenario_id
            )));
        }
        if !(draws.baseline_global > 0.0) {
            return Err(Error::ZeroBaseline);
        }
        let base = draws.baseline_global;
        let dens = decadal_density(draws, decade)?;
        let values: Vec<f64> = dens
            .column(0)
            .into_iter()
            .map(|level| 100.0 * (level / base - 1.0))
            .collect();
        let n = draws.weights.len();
        let model_means: Vec<f64> = (0..draws.models.len())
            .map(|mi| {
                let slice: Vec<f64> = (mi * n..(mi + 1) * n).map(|r| values[r]).collect();
                weighted_mean(&slice, &draws.weights)
            })
            .collect();
        let climate_band = if model_means.len() >= 2 {
            let w = vec![1.0 / model_means.len() as f64; model_means.len()];
            Some((
                weighted_quantile(&model_means, &w, 0.025)?,
                weighted_quantile(&model_means, &w, 0.975)?,
            ))
        } else {
            None
        };
        let risk = tail_risk(&values, &dens.weights, 0.99, RiskTail::LowerIsBad)?;
        rows.push(EsCurveRow {
            scenario_id: sc.scenario_id.clone(),
            co2e: co2e_coordinate(&sc.co2e_pathway, decade, co2e_summary)?,
            mean_pct: weighted_mean(&values, &dens.weights),
            climate_band,
            total_band: (
                weighted_quantile(&values, &dens.weights, 0.025)?,
                weighted_quantile(&values, &dens.weights, 0.975)?,
            ),
            es01: risk.es_value,
        });
    }
    rows.sort_by(|a, b| {
        a.co2e
            .total_cmp(&b.co2e)
            .then_with(|| a.scenario_id.cmp(&b.scenario_id))
    });
    Ok(rows)
}

/// Write percent-change summaries as CSV (the projection-curve output).
pub fn write_projection_curve(summaries: &[ProjectionSummary], path: &Path) -> Result<()> {
    let mut out = String::from(
        "scenario,year,mean,q25,q75,climate_q25,climate_q75,total_lo,total_hi,es01,baseline_year\n",
    );
    for s in summaries {
        let (c25, c75) = s.climate_only_band.unwrap_or((f64::NAN, f64::NAN));
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            escape_csv(&s.scenario_id),
            s.year,
            fmt_f64(s.ensemble_mean),
            fmt_f64(s.iqr.0),
            fmt_f64(s.iqr.1),
            fmt_f64(c25),
            fmt_f64(c75),
            fmt_f64(s.total_band.0),
            fmt_f64(s.total_band.1),
            fmt_f64(s.es01),
            s.baseline_year,
        ));
    }
    csvio::write_file(path, &out)
}

/// Write pooled decadal densities as CSV (`scenario,value,weight` rows).
pub fn write_decadal_density(
    densities: &[(String, PredictiveEnsemble)],
    path: &Path,
) -> Result<()> {
    let mut out = String::from("scenario,value,weight\n");
    for (scenario, dens) in densities {
        for (v, w) in dens.column(0).iter().zip(&dens.weights) {
            out.push_str(&format!(
                "{},{},{}\n",
                escape_csv(scenario),
                fmt_f64(*v),
                fmt_f64(*w)
            ));
        }
    }
    csvio::write_file(path, &out)
}

/// Write the expected-shortfall-versus-CO₂e curve as CSV.
pub fn write_es_curve(rows: &[EsCurveRow], path: &Path) -> Result<()> {
    let mut out = String::from("scenario,co2e,mean,climate_lo,climate_hi,total_lo,total_hi,es01\n");
    for r in rows {
        let (clo, chi) = r.climate_band.unwrap_or((f64::NAN, f64::NAN));
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            escape_csv(&r.scenario_id),
            fmt_f64(r.co2e),
            fmt_f64(r.mean_pct),
            fmt_f64(clo),
            fmt_f64(chi),
            fmt_f64(r.total_band.0),
            fmt_f64(r.total_band.1),
            fmt_f64(r.es01),
        ));
    }
    csvio::write_file(path, &out)
}
