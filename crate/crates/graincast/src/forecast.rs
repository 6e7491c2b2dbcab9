//! Posterior predictive forecasting, tail-risk metrics, calibration
//! backtesting, and leave-future-out cross-validation.
//!
//! A fitted particle system turns into a [`PredictiveEnsemble`]: one sampled
//! next-year log-return per particle per country, carrying the posterior
//! weights. Everything downstream — prediction intervals, value-at-risk,
//! expected shortfall, production aggregation, calibration scoring — is a
//! weighted-empirical computation on that ensemble.
//!
//! # Quantile convention
//!
//! All quantiles use the left-continuous inverse CDF of the weighted
//! empirical distribution: the smallest sample value whose cumulative weight
//! reaches the requested probability. This matches the inf-based definition
//! of value-at-risk, and makes interval endpoints actual sample values (an
//! equal-weight ensemble `{1..100}` at level 0.9 yields the interval
//! `(5, 95)` rather than midpoint-interpolated values).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::{conditional_mean, ModelVariant};
use crate::panel::AlignedDataset;
use crate::smc::{run_smc, ParticleSystem, SmcConfig};

/// Density floor for kernel-density evaluations; densities below it are
/// clamped (with a warning) instead of producing `-inf`.
pub const KDE_DENSITY_FLOOR: f64 = 1e-300;

/// Tolerance on cumulative-weight comparisons in quantile computations,
/// absorbing accumulation error in long weight sums.
const CUMWEIGHT_TOL: f64 = 1e-12;

/// What the ensemble values measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleKind {
    /// Log-returns of yield.
    LogReturn,
    /// Yield levels.
    YieldLevel,
    /// Production levels (possibly aggregated).
    ProductionLevel,
}

/// Which side of the distribution carries the risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskTail {
    /// Large values are bad (e.g. losses measured as negative log-returns).
    UpperIsBad,
    /// Small values are bad (e.g. production levels or plain log-returns).
    LowerIsBad,
}

/// Weighted sample of next-period values, one draw per posterior particle
/// per country.
#[derive(Debug, Clone)]
pub struct PredictiveEnsemble {
    /// Calendar year the draws describe.
    pub target_year: i32,
    /// Countries, in column order.
    pub countries: Vec<String>,
    /// N×K matrix of sampled values; a country column is all-NaN when its
    /// predictors were unavailable for the target year.
    pub country_values: Mat,
    /// Normalized particle weights (length N).
    pub weights: Vec<f64>,
    /// Unit of the values.
    pub kind: EnsembleKind,
}

impl PredictiveEnsemble {
    /// Number of draws.
    pub fn n(&self) -> usize {
        self.weights.len()
    }

    /// One country's draws as a column vector.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n())
            .map(|n| self.country_values.raw(n, k))
            .collect()
    }

    /// Whether a country's draws are usable (not the all-NaN marker).
    pub fn column_present(&self, k: usize) -> bool {
        !self.column(k).iter().any(|v| v.is_nan())
    }

    fn validate(&self) -> Result<()> {
        if self.n() < 2 {
            return Err(Error::DimensionMismatch(
                "predictive ensemble needs at least 2 draws".into(),
            ));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::UnnormalizedWeights(sum));
        }
        Ok(())
    }
}

/// Tail-risk summary at one confidence level.
#[derive(Debug, Clone)]
pub struct RiskReport {
    /// Confidence level (e.g. 0.99 for 1% tail risk).
    pub alpha: f64,
    /// Value-at-risk: the tail-side weighted quantile.
    pub var_value: f64,
    /// Expected shortfall: weighted mean of the tail, inclusive of the
    /// value-at-risk sample.
    pub es_value: f64,
    /// Which side of the distribution the risk sits on.
    pub tail: RiskTail,
}

/// Coverage-calibration summary for one country.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub country: String,
    /// Nominal interval coverage (e.g. 0.95).
    pub nominal: f64,
    /// Fraction of scored years whose observation fell inside the interval.
    pub empirical: f64,
    /// `(empirical - nominal)²`.
    pub squared_error: f64,
    /// Number of scored years (observation and interval both available).
    pub n_scored: usize,
}

/// Refit cadence of a rolling backtest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefitCadence {
    /// Refit the posterior for every evaluation year (expanding window).
    EveryYear,
    /// Fit once on the window before the first evaluation year and reuse
    /// the posterior for all later years.
    FitOnce,
}

/// Rolling one-step evaluation plan.
#[derive(Debug, Clone)]
pub struct BacktestPlan {
    /// First calendar year to forecast; everything before it forms the
    /// initial fit window. Years after the data's end are ignored, so a
    /// plan starting past the last year is vacuous.
    pub first_eval_year: i32,
    /// Refit cadence.
    pub refit: RefitCadence,
    /// Nominal coverage of the calibration interval (e.g. 0.95).
    pub interval_level: f64,
    /// Confidence level for the value-at-risk / expected-shortfall columns
    /// (e.g. 0.99 for the 1% lower tail).
    pub risk_alpha: f64,
}

impl Default for BacktestPlan {
    fn default() -> Self {
        Self {
            first_eval_year: i32::MAX,
            refit: RefitCadence::EveryYear,
            interval_level: 0.95,
            risk_alpha: 0.99,
        }
    }
}

/// Weighted quantile at probability `p` under the left-continuous inverse
/// CDF: the smallest sample value whose cumulative weight reaches `p`.
///
/// # Examples
///
/// ```
/// let values: Vec<f64> = (1..=100).map(f64::from).collect();
/// let weights = vec![0.01; 100];
/// let q = graincast::forecast::weighted_quantile(&values, &weights, 0.99).unwrap();
/// assert_eq!(q, 99.0);
/// ```
pub fn weighted_quantile(values: &[f64], weights: &[f64], p: f64) -> Result<f64> {
    if values.len() != weights.len() || values.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "quantile inputs of length {} and {}",
            values.len(),
            weights.len()
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!(
            "quantile probability must lie in [0, 1], got {p}"
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical(
            "quantile input contains missing values".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::AllWeightsZero);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut cum = 0.0;
    for &i in &order {
        cum += weights[i] / total;
        if cum >= p - CUMWEIGHT_TOL {
            return Ok(values[i]);
        }
    }
    Ok(values[order[values.len() - 1]])
}

/// Weighted mean.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
}

/// Weighted sample variance (normalized weights, no small-sample
/// correction).
pub fn weighted_variance(values: &[f64], weights: &[f64]) -> f64 {
    let m = weighted_mean(values, weights);
    let total: f64 = weights.iter().sum();
    values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v - m) * (v - m))
        .sum::<f64>()
        / total
}

/// Complete tail-risk report on one weighted sample: value-at-risk from the
/// tail-side quantile and expected shortfall as the weighted tail mean,
/// inclusive of the value-at-risk sample. An all-NaN sample (the marker for
/// an unavailable country) yields NaN fields rather than an error.
pub fn tail_risk(
    values: &[f64],
    weights: &[f64],
    alpha: f64,
    tail: RiskTail,
) -> Result<RiskReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!(
            "risk confidence level must lie in (0, 1), got {alpha}"
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Ok(RiskReport {
            alpha,
            var_value: f64::NAN,
            es_value: f64::NAN,
            tail,
        });
    }
    let p = match tail {
        RiskTail::UpperIsBad => alpha,
        RiskTail::LowerIsBad => 1.0 - alpha,
    };
    let var_value = weighted_quantile(values, weights, p)?;
    let total: f64 = weights.iter().sum();
    let in_tail = |v: f64| match tail {
        RiskTail::UpperIsBad => v >= var_value,
        RiskTail::LowerIsBad => v <= var_value,
    };
    let mut mass = 0.0;
    let mut acc = 0.0;
    for (v, w) in values.iter().zip(weights) {
        if in_tail(*v) {
            mass += w / total;
            acc += (w / total) * v;
        }
    }
    // The tail always contains the value-at-risk sample itself.
    assert!(mass > 0.0, "tail mass vanished despite the inclusive rule");
    let es_value = acc / mass;
    debug_assert!(match tail {
        RiskTail::LowerIsBad => es_value <= var_value + 1e-12,
        RiskTail::UpperIsBad => es_value >= var_value - 1e-12,
    });
    Ok(RiskReport {
        alpha,
        var_value,
        es_value,
        tail,
    })
}

/// Per-country value-at-risk reports (the expected-shortfall field is
/// filled too, since the tail mean is a byproduct of locating the tail).
pub fn value_at_risk(
    ensemble: &PredictiveEnsemble,
    alpha: f64,
    tail: RiskTail,
) -> Result<Vec<RiskReport>> {
    ensemble.validate()?;
    (0..ensemble.countries.len())
        .map(|k| tail_risk(&ensemble.column(k), &ensemble.weights, alpha, tail))
        .collect()
}

/// Per-country expected-shortfall reports (identical content to
/// [`value_at_risk`]; both halves of the report are always computed).
pub fn expected_shortfall(
    ensemble: &PredictiveEnsemble,
    alpha: f64,
    tail: RiskTail,
) -> Result<Vec<RiskReport>> {
    value_at_risk(ensemble, alpha, tail)
}

/// Per-country central prediction interval at the given coverage level:
/// weighted quantiles at `(1-level)/2` and `1-(1-level)/2`.
pub fn prediction_interval(ensemble: &PredictiveEnsemble, level: f64) -> Result<Vec<(f64, f64)>> {
    ensemble.validate()?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::MissingLevel(format!(
            "interval level must lie in (0, 1), got {level}"
        )));
    }
    let lo_p = (1.0 - level) / 2.0;
    let hi_p = 1.0 - lo_p;
    (0..ensemble.countries.len())
        .map(|k| {
            let col = ensemble.column(k);
            if col.iter().any(|v| v.is_nan()) {
                return Ok((f64::NAN, f64::NAN));
            }
            let lo = weighted_quantile(&col, &ensemble.weights, lo_p)?;
            let hi = weighted_quantile(&col, &ensemble.weights, hi_p)?;
            Ok((lo, hi))
        })
        .collect()
}

/// Sample the one-step posterior predictive at a specific column of `data`:
/// for each particle, a draw from `N(μ_target(θ), σ_country²(θ))`. A country
/// whose predictors are missing at the target column yields an all-NaN
/// column rather than an error.
pub fn posterior_predictive_at(
    system: &ParticleSystem,
    data: &AlignedDataset,
    variant: ModelVariant,
    target_col: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PredictiveEnsemble> {
    if target_col >= data.t_len() {
        return Err(Error::DimensionMismatch(format!(
            "target column {target_col} outside dataset with {} columns",
            data.t_len()
        )));
    }
    let k = data.k();
    let n = system.len();
    let layout = variant.layout();
    let mut values = Mat::missing(n, k);
    for i in 0..k {
        let usable = !data.y_lag1.is_missing(i, target_col)
            && !data.y_lag2.is_missing(i, target_col)
            && !data.dt.is_missing(i, target_col)
            && !data.dt2.is_missing(i, target_col);
        if !usable {
            continue; // leave the all-NaN marker column
        }
        for (pn, particle) in system.particles.iter().enumerate() {
            let mu = conditional_mean(particle, data, variant, i, target_col)?;
            let sigma2 = layout.sigma2(particle, i);
            if !(sigma2 > 0.0) {
                return Err(Error::NonPositiveVariance(sigma2));
            }
            let z: f64 = rng.sample(StandardNormal);
            values.set(pn, i, mu + sigma2.sqrt() * z);
        }
    }
    Ok(PredictiveEnsemble {
        target_year: data.years_effective[target_col],
        countries: data.countries.clone(),
        country_values: values,
        weights: system.weights(),
        kind: EnsembleKind::LogReturn,
    })
}

/// Sample the posterior predictive for the final column of `data` (by
/// convention the forecast target; extend the dataset first when
/// forecasting past the observed range).
pub fn posterior_predictive(
    system: &ParticleSystem,
    data: &AlignedDataset,
    variant: ModelVariant,
    rng: &mut ChaCha8Rng,
) -> Result<PredictiveEnsemble> {
    posterior_predictive_at(system, data, variant, data.t_len() - 1, rng)
}

/// Coverage calibration of a sequence of intervals against observations.
/// Years with a missing observation or an unavailable interval are skipped;
/// at least one scored year is required.
pub fn calibration_squared_error(
    country: &str,
    intervals: &[(f64, f64)],
    observed: &[f64],
    nominal: f64,
) -> Result<CalibrationReport> {
    if intervals.len() != observed.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} intervals vs {} observations",
            intervals.len(),
            observed.len()
        )));
    }
    let mut hits = 0usize;
    let mut scored = 0usize;
    for ((lo, hi), obs) in intervals.iter().zip(observed) {
        if lo.is_nan() || hi.is_nan() || obs.is_nan() {
            continue;
        }
        scored += 1;
        if *lo <= *obs && *obs <= *hi {
            hits += 1;
        }
    }
    if scored == 0 {
        return Err(Error::InsufficientYears(format!(
            "calibration for {country} has no scored years"
        )));
    }
    let empirical = hits as f64 / scored as f64;
    Ok(CalibrationReport {
        country: country.to_string(),
        nominal,
        empirical,
        squared_error: (empirical - nominal) * (empirical - nominal),
        n_scored: scored,
    })
}

/// Silverman's rule-of-thumb bandwidth on a weighted sample, using the
/// effective sample size in place of the raw count:
/// `0.9·min(sd, IQR/1.34)·ESS^(-1/5)`. Degenerate spreads fall back to a
/// tiny positive bandwidth.
pub fn silverman_bandwidth(values: &[f64], weights: &[f64]) -> Result<f64> {
    let sd = weighted_variance(values, weights).sqrt();
    let q75 = weighted_quantile(values, weights, 0.75)?;
    let q25 = weighted_quantile(values, weights, 0.25)?;
    let iqr = q75 - q25;
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let total: f64 = weights.iter().sum();
    let ess = {
        let sq: f64 = weights.iter().map(|w| (w / total) * (w / total)).sum();
        1.0 / sq
    };
    let b = 0.9 * spread * ess.powf(-0.2);
    if b > 0.0 && b.is_finite() {
        Ok(b)
    } else {
        Ok(1e-9)
    }
}

/// Log-density of a weighted Gaussian kernel density estimate at `x`.
/// Densities below [`KDE_DENSITY_FLOOR`] are clamped with a warning on
/// standard error instead of returning `-inf`.
pub fn weighted_kde_logpdf(values: &[f64], weights: &[f64], x: f64, bandwidth: f64) -> f64 {
    debug_assert!(bandwidth > 0.0);
    let total: f64 = weights.iter().sum();
    let norm = 1.0 / (bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let mut density = 0.0;
    for (v, w) in values.iter().zip(weights) {
        let z = (x - v) / bandwidth;
        density += (w / total) * norm * (-0.5 * z * z).exp();
    }
    if density < KDE_DENSITY_FLOOR {
        eprintln!(
            "warning: predictive density {density:.3e} at {x} floored at {KDE_DENSITY_FLOOR:.0e}"
        );
        density = KDE_DENSITY_FLOOR;
    }
    density.ln()
}

/// Joint predictive log-density of one year's observed vector: the sum over
/// countries (with observations and usable predictions) of per-country
/// weighted Gaussian-KDE log-densities at the realized values.
fn joint_predictive_logpdf(
    ensemble: &PredictiveEnsemble,
    data: &AlignedDataset,
    target_col: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for (k, _) in ensemble.countries.iter().enumerate() {
        let obs = match data.y.get(k, target_col) {
            Some(v) => v,
            None => continue,
        };
        if !ensemble.column_present(k) {
            continue;
        }
        let col = ensemble.column(k);
        let b = silverman_bandwidth(&col, &ensemble.weights)?;
        total += weighted_kde_logpdf(&col, &ensemble.weights, obs, b);
    }
    Ok(total)
}

/// Leave-future-out cross-validation: for each column from `tau` to the
/// end, fit on the strictly earlier columns, form the one-step predictive
/// ensemble, and score the realized vector by its joint KDE log-density.
/// Returns the total elpd and the per-year entries (total = exact sum).
pub fn lfo_cv_elpd(
    data: &AlignedDataset,
    variant: ModelVariant,
    config: &SmcConfig,
    tau: usize,
) -> Result<(f64, Vec<(i32, f64)>)> {
    if tau < 4 {
        return Err(Error::Config(format!(
            "leave-future-out start index must be at least 4 (got {tau}) so \
             every fit window keeps a usable panel"
        )));
    }
    if tau >= data.t_len() {
        return Err(Error::Config(format!(
            "leave-future-out start index {tau} outside the {}-column panel",
            data.t_len()
        )));
    }
    let mut per_year = Vec::with_capacity(data.t_len() - tau);
    let mut elpd = 0.0;
    for target_col in tau..data.t_len() {
        let window = data.truncate_cols(target_col)?;
        let fit_config = SmcConfig {
            seed: crate::seedtree::child_seed_indexed(config.seed, "lfo-fit", target_col as u64),
            ..config.clone()
        };
        let out = run_smc(&window, variant, &fit_config)?;
        let mut rng = crate::seedtree::indexed_stream(config.seed, "lfo-draw", target_col as u64);
        let ensemble = posterior_predictive_at(&out.system, data, variant, target_col, &mut rng)?;
        let lpd = joint_predictive_logpdf(&ensemble, data, target_col)?;
        elpd += lpd;
        per_year.push((data.years_effective[target_col], lpd));
    }
    Ok((elpd, per_year))
}

/// One row of the forecast table (units: log-returns).
#[derive(Debug, Clone)]
pub struct ForecastRow {
    pub year: i32,
    pub country: String,
    pub mean: f64,
    pub median: f64,
    pub lo95: f64,
    pub hi95: f64,
    pub var01: f64,
    pub es01: f64,
}

/// Backtest results: per-year-per-country forecast rows plus per-country
/// calibration summaries.
#[derive(Debug, Clone)]
pub struct BacktestOutput {
    pub rows: Vec<ForecastRow>,
    pub calibration: Vec<CalibrationReport>,
}

/// Summarize one predictive ensemble into forecast rows (one per country).
/// The interval columns are 95% bounds; the risk columns are the 1% lower
/// tail. Countries without usable predictions yield NaN fields.
pub fn summarize_ensemble(
    ensemble: &PredictiveEnsemble,
    interval_level: f64,
    risk_alpha: f64,
) -> Result<Vec<ForecastRow>> {
    let intervals = prediction_interval(ensemble, interval_level)?;
    let risk = value_at_risk(ensemble, risk_alpha, RiskTail::LowerIsBad)?;
    let mut rows = Vec::with_capacity(ensemble.countries.len());
    for (k, country) in ensemble.countries.iter().enumerate() {
        let col = ensemble.column(k);
        let (mean, median) = if ensemble.column_present(k) {
            (
                weighted_mean(&col, &ensemble.weights),
                weighted_quantile(&col, &ensemble.weights, 0.5)?,
            )
        } else {
            (f64::NAN, f64::NAN)
        };
        rows.push(ForecastRow {
            year: ensemble.target_year,
            country: country.clone(),
            mean,
            median,
            lo95: intervals[k].0,
            hi95: intervals[k].1,
            var01: risk[k].var_value,
            es01: risk[k].es_value,
        });
    }
    Ok(rows)
}

/// Rolling one-step backtest over the evaluation years defined by the plan.
///
/// For each evaluation year, the posterior comes either from a fresh fit on
/// all strictly earlier columns (every-year refit) or from the single fit
/// on the window before the first evaluation year (fit-once); the one-step
/// predictive ensemble for that year is summarized into forecast rows, and
/// per-country interval coverage is scored against the realized values.
pub fn backtest(
    data: &AlignedDataset,
    variant: ModelVariant,
    config: &SmcConfig,
    plan: &BacktestPlan,
) -> Result<BacktestOutput> {
    if !(plan.interval_level > 0.0 && plan.interval_level < 1.0) {
        return Err(Error::MissingLevel(format!(
            "interval level must lie in (0, 1), got {}",
            plan.interval_level
        )));
    }
    let first_col = data
        .years_effective
        .iter()
        .position(|&y| y >= plan.first_eval_year)
        .unwrap_or(data.t_len());
    let mut rows = Vec::new();
    let mut intervals_by_country: Vec<Vec<(f64, f64)>> = vec![Vec::new(); data.k()];
    let mut observed_by_country: Vec<Vec<f64>> = vec![Vec::new(); data.k()];

    if first_col >= data.t_len() {
        return Ok(BacktestOutput {
            rows,
            calibration: Vec::new(),
        });
    }
    if first_col == 0 {
        return Err(Error::Config(format!(
            "backtest starting at {} leaves no fit window",
            plan.first_eval_year
        )));
    }

    let mut reusable_fit = None;
    for target_col in first_col..data.t_len() {
        let fit_cols = match plan.refit {
            RefitCadence::EveryYear => target_col,
            RefitCadence::FitOnce => first_col,
        };
        let need_fit = match plan.refit {
            RefitCadence::EveryYear => true,
            RefitCadence::FitOnce => reusable_fit.is_none(),
        };
        if need_fit {
            let window = data.truncate_cols(fit_cols)?;
            let fit_config = SmcConfig {
                seed: crate::seedtree::child_seed_indexed(
                    config.seed,
                    "backtest-fit",
                    fit_cols as u64,
                ),
                ..config.clone()
            };
            reusable_fit = Some(run_smc(&window, variant, &fit_config)?);
        }
        let fit = reusable_fit.as_ref().expect("fit exists");
        let mut rng =
            crate::seedtree::indexed_stream(config.seed, "backtest-draw", target_col as u64);
        let ensemble = posterior_predictive_at(&fit.system, data, variant, target_col, &mut rng)?;
        let summary = summarize_ensemble(&ensemble, plan.interval_level, plan.risk_alpha)?;
        for (k, row) in summary.iter().enumerate() {
            intervals_by_country[k].push((row.lo95, row.hi95));
            observed_by_country[k].push(data.y.raw(k, target_col));
        }
        rows.extend(summary);
    }

    let mut calibration = Vec::new();
    for (k, country) in data.countries.iter().enumerate() {
        match calibration_squared_error(
            country,
            &intervals_by_country[k],
            &observed_by_country[k],
            plan.interval_level,
        ) {
            Ok(report) => calibration.push(report),
            Err(Error::InsufficientYears(_)) => {} // nothing scoreable
            Err(e) => return Err(e),
        }
    }
    Ok(BacktestOutput { rows, calibration })
}

/// Aggregate a log-return ensemble into a global production-level ensemble:
/// per draw, each country's last observed production level is compounded by
/// its sampled log-return (optionally scaled by a per-country weight) and
/// the results are summed.
pub fn aggregate_production(
    ensemble: &PredictiveEnsemble,
    last_levels: &[f64],
    country_weights: Option<&[f64]>,
) -> Result<PredictiveEnsemble> {
    ensemble.validate()?;
    if ensemble.kind != EnsembleKind::LogReturn {
        return Err(Error::MismatchedData(
            "production aggregation expects a log-return ensemble".into(),
        ));
    }
    let k = ensemble.countries.len();
    if last_levels.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "{} levels for {} countries",
            last_levels.len(),
            k
        )));
    }
    if let Some(cw) = country_weights {
        if cw.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} country weights for {} countries",
                cw.len(),
                k
            )));
        }
    }
    for (i, lvl) in last_levels.iter().enumerate() {
        if !(lvl > &0.0) || !lvl.is_finite() {
            return Err(Error::MissingLevel(format!(
                "country {} lacks a positive production level (got {lvl})",
                ensemble.countries[i]
            )));
        }
    }
    let n = ensemble.n();
    let mut values = Mat::missing(n, 1);
    for draw in 0..n {
        let mut global = 0.0;
        for i in 0..k {
            let y = ensemble.country_values.raw(draw, i);
            if y.is_nan() {
                return Err(Error::MissingLevel(format!(
                    "country {} has no usable draws to aggregate",
                    ensemble.countries[i]
                )));
            }
            let cw = country_weights.map_or(1.0, |w| w[i]);
            global += cw * last_levels[i] * y.exp();
        }
        values.set(draw, 0, global);
    }
    Ok(PredictiveEnsemble {
        target_year: ensemble.target_year,
        countries: vec!["GLOBAL".to_string()],
        country_values: values,
        weights: ensemble.weights.clone(),
        kind: EnsembleKind::ProductionLevel,
    })
}

/// Write forecast rows as CSV.
pub fn write_forecast(rows: &[ForecastRow], path: &std::path::Path) -> Result<()> {
    use crate::csvio::{escape_csv, fmt_f64};
    let mut out = String::from("year,country,mean,median,lo95,hi95,var01,es01\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.year,
            escape_csv(&r.country),
            fmt_f64(r.mean),
            fmt_f64(r.median),
            fmt_f64(r.lo95),
            fmt_f64(r.hi95),
            fmt_f64(r.var01),
            fmt_f64(r.es01),
        ));
    }
    crate::csvio::write_file(path, &out)
}

/// Write per-year predictive log-densities as CSV.
pub fn write_elpd(per_year: &[(i32, f64)], path: &std::path::Path) -> Result<()> {
    use crate::csvio::fmt_f64;
    let mut out = String::from("year,log_predictive_density\n");
    for (year, lpd) in per_year {
        out.push_str(&format!("{},{}\n", year, fmt_f64(*lpd)));
    }
    crate::csvio::write_file(path, &out)
}

/// Write calibration reports as CSV.
pub fn write_calibration(reports: &[CalibrationReport], path: &std::path::Path) -> Result<()> {
    use crate::csvio::{escape_csv, fmt_f64};
    let mut out = String::from("country,nominal,empirical,squared_error,n_scored\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            escape_csv(&r.country),
            fmt_f64(r.nominal),
            fmt_f64(r.empirical),
            fmt_f64(r.squared_error),
            r.n_scored,
        ));
    }
    crate::csvio::write_file(path, &out)
}
