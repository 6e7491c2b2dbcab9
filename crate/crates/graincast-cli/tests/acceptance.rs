//! Acceptance suite: ten end-to-end statistical and reproducibility gates
//! the shipped system must clear. Each test prints one
//! `ACCEPTANCE <n> (<name>): PASS` line when its criterion holds.
//!
//! The gates, in order:
//!  1. Evidence estimates match a closed-form conjugate oracle.
//!  2. Hierarchical-variance fits recover known parameters with calibrated
//!     credible intervals.
//!  3. Evidence comparison detects variance heterogeneity and does not
//!     fabricate it under homogeneity.
//!  4. Forward selection retains model-consistent countries and rejects a
//!     pure-noise country.
//!  5. Leave-future-out CV scores the true generator above a
//!     variance-misspecified alternative.
//!  6. Backtested 95% prediction intervals are empirically calibrated.
//!  7. VaR/ES match the closed-form normal oracle and satisfy structural
//!     invariants on randomized ensembles.
//!  8. Projection uncertainty bands match an independent brute-force
//!     decomposition, and degenerate setups collapse exactly.
//!  9. Every CLI command is byte-reproducible at any thread count.
//! 10. The MH kernel reproduces a known target covariance and systematic
//!     resampling is unbiased.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use graincast::forecast::{
    backtest, lfo_cv_elpd, prediction_interval, tail_risk, weighted_mean, weighted_quantile,
    weighted_variance, BacktestPlan, EnsembleKind, PredictiveEnsemble, RefitCadence, RiskTail,
};
use graincast::mat::Mat;
use graincast::model::{ModelVariant, ParameterVector, VariantKind};
use graincast::oracle::{
    conjugate_log_evidence, make_recovery_panel, normal_es, ConjugateSpec, ConjugateTarget, Tail,
};
use graincast::panel::{derive_climate_regressors, ClimatePanel, RawClimatePanel};
use graincast::scenario::{decompose_uncertainty, project_scenario, Scenario};
use graincast::seedtree;
use graincast::selection::forward_select;
use graincast::smc::{
    move_particles, run_smc, run_smc_target, systematic_indices, ParticleSystem, SmcConfig, Target,
};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

// ---------------------------------------------------------------------------
// 1. Evidence oracle
// ---------------------------------------------------------------------------

#[test]
fn acceptance_01_evidence_oracle() {
    let started = Instant::now();
    let sizes = [5usize, 16, 27, 38, 50];
    for (f, &n_obs) in sizes.iter().enumerate() {
        let mut rng = seedtree::stream(seedtree::child_seed(8100 + f as u64, "obs"));
        let observations: Vec<f64> = (0..n_obs)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                0.7 + 1.2 * z
            })
            .collect();
        let spec = ConjugateSpec {
            prior_mean: 0.0,
            prior_var: 2.0,
            obs_var: 1.44,
            observations,
        };
        let exact = conjugate_log_evidence(&spec).unwrap();
        let target = ConjugateTarget::new(spec).unwrap();

        let mut estimates = Vec::with_capacity(20);
        for rep in 0..20u64 {
            let config = SmcConfig {
                n_particles: 2000,
                seed: 9000 + 37 * f as u64 + rep,
                ..SmcConfig::default()
            };
            estimates.push(run_smc_target(&target, &config).unwrap().log_evidence);
        }
        let err = (mean(&estimates) - exact).abs();
        let spread = sd(&estimates);
        assert!(
            err <= 0.1,
            "fixture {f} (n={n_obs}): |logZ error| = {err:.4} > 0.1 nats"
        );
        assert!(
            spread < 0.15,
            "fixture {f} (n={n_obs}): replicate sd = {spread:.4} >= 0.15 nats"
        );
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 120.0,
        "evidence oracle took {elapsed:?} (budget 2 min)"
    );
    println!("ACCEPTANCE 1 (evidence oracle): PASS");
}

// ---------------------------------------------------------------------------
// 2. Parameter recovery
// ---------------------------------------------------------------------------

#[test]
fn acceptance_02_parameter_recovery() {
    let started = Instant::now();
    let k = 10;
    let t_len = 60;
    let variant = ModelVariant::new(VariantKind::HierVariance, k);
    // Known truth with per-country variances spread over the bulk of the
    // variance prior so the data, not the prior, drives the posterior.
    // The trailing pair is the variance hyperprior (shape, scale); it does
    // not enter data generation, so recovery checks stop before it.
    let sigma2 = [0.4, 0.6, 0.8, 1.0, 1.2, 1.5, 0.5, 0.9, 1.1, 0.7];
    let mut values = vec![0.12, 0.04, 0.30, -0.10, 0.02, -0.01];
    values.extend(sigma2);
    values.extend([2.0, 1.0]);
    let truth = ParameterVector::new(values.clone());
    let n_generating = 6 + k; // structural block plus per-country variances
    let n_structural = 6;

    let reps = 20;
    let mut within_3sd = vec![0usize; n_structural];
    let mut covered = 0usize;
    let mut intervals = 0usize;
    for rep in 0..reps {
        let (data, _, _) =
            make_recovery_panel(variant, &truth, k, t_len, 7200 + rep as u64).unwrap();
        let config = SmcConfig {
            n_particles: 1000,
            seed: 7300 + rep as u64,
            ..SmcConfig::default()
        };
        let out = run_smc(&data, variant, &config).unwrap();
        let weights = out.system.weights();
        for j in 0..n_generating {
            let col: Vec<f64> = out.system.particles.iter().map(|p| p.values[j]).collect();
            let post_mean = weighted_mean(&col, &weights);
            let post_sd = weighted_variance(&col, &weights).sqrt();
            if j < n_structural && (post_mean - values[j]).abs() <= 3.0 * post_sd {
                within_3sd[j] += 1;
            }
            let lo = weighted_quantile(&col, &weights, 0.025).unwrap();
            let hi = weighted_quantile(&col, &weights, 0.975).unwrap();
            intervals += 1;
            if lo <= values[j] && values[j] <= hi {
                covered += 1;
            }
        }
    }
    for (j, &hits) in within_3sd.iter().enumerate() {
        assert!(
            hits * 10 >= reps * 9,
            "structural parameter {j}: within 3 posterior sds in only {hits}/{reps} reps"
        );
    }
    let coverage = covered as f64 / intervals as f64;
    assert!(
        (0.85..=0.99).contains(&coverage),
        "pooled 95% CI coverage {coverage:.3} outside [0.85, 0.99] ({covered}/{intervals})"
    );
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 900.0,
        "parameter recovery took {elapsed:?} (budget 15 min)"
    );
    println!("ACCEPTANCE 2 (parameter recovery): PASS");
}

// ---------------------------------------------------------------------------
// 3. Model selection fidelity
// ---------------------------------------------------------------------------

fn fit_evidence(data: &graincast::panel::AlignedDataset, kind: VariantKind, seed: u64) -> f64 {
    let variant = ModelVariant::new(kind, data.k());
    let config = SmcConfig {
        n_particles: 600,
        seed,
        ..SmcConfig::default()
    };
    run_smc(data, variant, &config).unwrap().log_evidence
}

#[test]
fn acceptance_03_model_selection_fidelity() {
    let k = 8;
    let t_len = 40;
    let hv = ModelVariant::new(VariantKind::HierVariance, k);
    let reps = 20;

    // Heterogeneous variances drawn from the variance prior itself: the
    // per-country-variance model must win the evidence comparison.
    let mut hv_wins = 0;
    for rep in 0..reps {
        let mut rng = seedtree::stream(seedtree::child_seed(6400 + rep as u64, "hetero"));
        let mut values = vec![0.12, 0.04, 0.30, -0.10, 0.02, -0.01];
        for _ in 0..k {
            // InvGamma(2, 1) draw: 1 / Gamma(2, rate 1).
            let g: f64 = {
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(1e-12..1.0);
                -(u1.ln() + u2.ln()) // sum of two unit exponentials
            };
            values.push(1.0 / g);
        }
        values.extend([2.0, 1.0]); // variance hyperprior (shape, scale)
        let truth = ParameterVector::new(values);
        let (data, _, _) = make_recovery_panel(hv, &truth, k, t_len, 6500 + rep as u64).unwrap();
        let z_hv = fit_evidence(&data, VariantKind::HierVariance, 6600 + rep as u64);
        let z_pooled = fit_evidence(&data, VariantKind::Pooled, 6700 + rep as u64);
        if z_hv > z_pooled {
            hv_wins += 1;
        }
    }
    assert!(
        hv_wins * 10 >= reps * 9,
        "heterogeneous data: hierarchical variance won only {hv_wins}/{reps}"
    );

    // Homogeneous variances: the extra flexibility must not fabricate an
    // advantage (mean gain below 3 nats).
    let mut gains = Vec::with_capacity(reps);
    for rep in 0..reps {
        let mut values = vec![0.12, 0.04, 0.30, -0.10, 0.02, -0.01];
        values.extend(std::iter::repeat(1.0).take(k));
        values.extend([2.0, 1.0]);
        let truth = ParameterVector::new(values);
        let (data, _, _) = make_recovery_panel(hv, &truth, k, t_len, 6800 + rep as u64).unwrap();
        let z_hv = fit_evidence(&data, VariantKind::HierVariance, 6900 + rep as u64);
        let z_pooled = fit_evidence(&data, VariantKind::Pooled, 7000 + rep as u64);
        gains.push(z_hv - z_pooled);
    }
    let mean_gain = mean(&gains);
    assert!(
        mean_gain < 3.0,
        "homogeneous data: hierarchical variance gained {mean_gain:.2} nats on average"
    );
    println!("ACCEPTANCE 3 (model selection fidelity): PASS");
}

// ---------------------------------------------------------------------------
// 4. Forward selection
// ---------------------------------------------------------------------------

#[test]
fn acceptance_04_forward_selection() {
    let reps = 20;
    let mut correct = 0;
    for rep in 0..reps {
        // Three countries from the model (low noise), one pure-noise
        // country whose returns carry no model structure.
        let k = 4;
        let hv = ModelVariant::new(VariantKind::HierVariance, k);
        let mut values = vec![0.12, 0.04, 0.30, -0.10, 0.02, -0.01];
        values.extend(std::iter::repeat(0.0004).take(k));
        values.extend([2.0, 1.0]);
        let truth = ParameterVector::new(values);
        let (mut data, _, _) = make_recovery_panel(hv, &truth, k, 20, 5100 + rep as u64).unwrap();
        let noise_row = k - 1;
        let mut rng = seedtree::stream(seedtree::child_seed(5200 + rep as u64, "noise"));
        let t_len = data.t_len();
        for t in 0..t_len {
            let z: f64 = rng.sample(StandardNormal);
            data.y.set(noise_row, t, 10.0 * z);
            if t + 1 < t_len {
                data.y_lag1.set(noise_row, t + 1, 10.0 * z);
            }
            if t + 2 < t_len {
                data.y_lag2.set(noise_row, t + 2, 10.0 * z);
            }
        }

        let base = vec![data.countries[0].clone()];
        let candidates = vec![
            data.countries[1].clone(),
            data.countries[2].clone(),
            data.countries[noise_row].clone(),
        ];
        let config = SmcConfig {
            n_particles: 300,
            ..SmcConfig::default()
        };
        let out = forward_select(
            &base,
            &candidates,
            VariantKind::HierVariance,
            &data,
            &config,
            2,
            5300 + rep as u64,
        )
        .unwrap();
        let signals_kept =
            out.selected.contains(&data.countries[1]) && out.selected.contains(&data.countries[2]);
        let noise_rejected = !out.selected.contains(&data.countries[noise_row]);
        if signals_kept && noise_rejected {
            correct += 1;
        }
    }
    assert!(
        correct * 10 >= reps * 9,
        "selection produced the right set in only {correct}/{reps} replications"
    );
    println!("ACCEPTANCE 4 (forward selection): PASS");
}

// ---------------------------------------------------------------------------
// 5. LFO-CV discrimination
// ---------------------------------------------------------------------------

#[test]
fn acceptance_05_lfo_cv_discrimination() {
    let reps = 20;
    let mut wins = 0;
    for rep in 0..reps {
        let k = 3;
        let hv = ModelVariant::new(VariantKind::HierVariance, k);
        // Per-country variances spanning three orders of magnitude: a
        // pooled error variance is badly misspecified for prediction.
        let mut values = vec![0.1, 0.03, 0.3, -0.1, 0.02, -0.01];
        values.extend([1e-4, 1e-2, 0.25]);
        values.extend([2.0, 1.0]);
        let truth = ParameterVector::new(values);
        let (data, _, _) = make_recovery_panel(hv, &truth, k, 24, 4400 + rep as u64).unwrap();
        let config = SmcConfig {
            n_particles: 250,
            seed: 4500 + rep as u64,
            ..SmcConfig::default()
        };
        let tau = data.t_len() - 3;
        let (elpd_true, _) = lfo_cv_elpd(&data, hv, &config, tau).unwrap();
        let (elpd_misspec, _) = lfo_cv_elpd(
            &data,
            ModelVariant::new(VariantKind::Pooled, k),
            &config,
            tau,
        )
        .unwrap();
        if elpd_true > elpd_misspec {
            wins += 1;
        }
    }
    assert!(
        wins * 10 >= reps * 8,
        "true generator won the elpd comparison in only {wins}/{reps} replications"
    );
    println!("ACCEPTANCE 5 (LFO-CV discrimination): PASS");
}

// ---------------------------------------------------------------------------
// 6. Predictive calibration
// ---------------------------------------------------------------------------

#[test]
fn acceptance_06_predictive_calibration() {
    let reps = 20;
    let eval_years = 50;
    let fit_years = 30;
    let k = 1;
    let variant = ModelVariant::new(VariantKind::Pooled, k);
    // Unit noise variance sits at the variance prior's center of mass, so
    // a moderate fit window yields a data-dominated posterior.
    let truth = ParameterVector::new(vec![0.1, 0.03, 0.25, -0.08, 0.02, -0.01, 1.0]);

    let mut coverages = Vec::with_capacity(reps);
    for rep in 0..reps {
        let (data, _, _) = make_recovery_panel(
            variant,
            &truth,
            k,
            fit_years + eval_years,
            3300 + rep as u64,
        )
        .unwrap();
        let plan = BacktestPlan {
            first_eval_year: data.years_effective[fit_years],
            refit: RefitCadence::FitOnce,
            interval_level: 0.95,
            risk_alpha: 0.99,
        };
        let config = SmcConfig {
            n_particles: 500,
            seed: 3400 + rep as u64,
            ..SmcConfig::default()
        };
        let out = backtest(&data, variant, &config, &plan).unwrap();
        assert_eq!(out.calibration.len(), 1);
        let report = &out.calibration[0];
        assert_eq!(report.n_scored, eval_years);
        assert_eq!(report.nominal, 0.95);
        // The squared-error metric is exactly (empirical - nominal)^2.
        assert_eq!(
            report.squared_error.to_bits(),
            (report.empirical - 0.95f64).powi(2).to_bits()
        );
        coverages.push(report.empirical);
    }
    let mean_coverage = mean(&coverages);
    assert!(
        (0.90..=0.99).contains(&mean_coverage),
        "mean 95% PI coverage {mean_coverage:.3} outside [0.90, 0.99]; per-rep: {coverages:?}"
    );
    println!("ACCEPTANCE 6 (predictive calibration): PASS");
}

// ---------------------------------------------------------------------------
// 7. Risk metrics
// ---------------------------------------------------------------------------

#[test]
fn acceptance_07_risk_metrics() {
    // Closed-form oracle on a large standard-normal sample.
    let n = 1_000_000;
    let mut rng = seedtree::stream(seedtree::child_seed(2600, "risk-oracle"));
    let values: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let weights = vec![1.0 / n as f64; n];

    let upper = tail_risk(&values, &weights, 0.99, RiskTail::UpperIsBad).unwrap();
    assert!(
        (upper.var_value - 2.3263).abs() <= 0.01,
        "VaR 0.99 = {} not within 0.01 of 2.3263",
        upper.var_value
    );
    let lower = tail_risk(&values, &weights, 0.99, RiskTail::LowerIsBad).unwrap();
    let es_exact = normal_es(0.01, 0.0, 1.0, Tail::Lower);
    assert!(
        (es_exact - (-2.6652)).abs() < 5e-4,
        "closed-form check: {es_exact}"
    );
    assert!(
        (lower.es_value - (-2.6652)).abs() <= 0.02,
        "lower-1% ES = {} not within 0.02 of -2.6652",
        lower.es_value
    );

    // Structural invariants on randomized ensembles.
    let mut rng = seedtree::stream(seedtree::child_seed(2601, "risk-invariants"));
    for case in 0..1000 {
        let n = rng.gen_range(2..=400);
        let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
        let shift = rng.gen_range(-50.0..50.0);
        let values: Vec<f64> = (0..n)
            .map(|_| shift + scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let alpha = rng.gen_range(0.8..0.999);

        // Tail dominance: ES is at least as extreme as VaR.
        let up = tail_risk(&values, &weights, alpha, RiskTail::UpperIsBad).unwrap();
        assert!(
            up.es_value >= up.var_value - 1e-12,
            "case {case}: upper tail"
        );
        let down = tail_risk(&values, &weights, alpha, RiskTail::LowerIsBad).unwrap();
        assert!(
            down.es_value <= down.var_value + 1e-12,
            "case {case}: lower tail"
        );

        // Weight invariance: duplicating every sample at half weight
        // leaves quantiles bitwise unchanged.
        let mut dup_values = values.clone();
        dup_values.extend_from_slice(&values);
        let mut dup_weights: Vec<f64> = weights.iter().map(|w| w / 2.0).collect();
        dup_weights.extend(weights.iter().map(|w| w / 2.0));
        for p in [0.1, 0.5, alpha] {
            let a = weighted_quantile(&values, &weights, p).unwrap();
            let b = weighted_quantile(&dup_values, &dup_weights, p).unwrap();
            assert_eq!(a.to_bits(), b.to_bits(), "case {case}: weight invariance");
        }

        // Interval nesting: 50% within 90% within 99%.
        let ensemble = PredictiveEnsemble {
            target_year: 2030,
            countries: vec!["X".into()],
            country_values: {
                let mut m = Mat::missing(n, 1);
                for (i, v) in values.iter().enumerate() {
                    m.set(i, 0, *v);
                }
                m
            },
            weights: weights.clone(),
            kind: EnsembleKind::LogReturn,
        };
        let i50 = prediction_interval(&ensemble, 0.5).unwrap()[0];
        let i90 = prediction_interval(&ensemble, 0.9).unwrap()[0];
        let i99 = prediction_interval(&ensemble, 0.99).unwrap()[0];
        assert!(
            i90.0 <= i50.0 && i50.1 <= i90.1,
            "case {case}: 50% interval not inside 90%"
        );
        assert!(
            i99.0 <= i90.0 && i90.1 <= i99.1,
            "case {case}: 90% interval not inside 99%"
        );
    }
    println!("ACCEPTANCE 7 (risk metrics): PASS");
}

// ---------------------------------------------------------------------------
// 8. Projection decomposition
// ---------------------------------------------------------------------------

/// Deals a fixed particle list in slot order (prior initialization draws
/// particles sequentially), giving full control over the particle system.
struct DealingTarget {
    points: Vec<ParameterVector>,
    cursor: AtomicUsize,
}

impl Target for DealingTarget {
    fn dim(&self) -> usize {
        self.points[0].values.len()
    }
    fn names(&self) -> Vec<String> {
        (0..self.dim()).map(|j| format!("p{j}")).collect()
    }
    fn sample_prior(&self, _rng: &mut ChaCha8Rng) -> ParameterVector {
        let i = self.cursor.fetch_add(1, Ordering::SeqCst);
        self.points[i % self.points.len()].clone()
    }
    fn log_prior(&self, _x: &ParameterVector) -> f64 {
        0.0
    }
    fn log_likelihood(&self, _x: &ParameterVector) -> graincast::Result<f64> {
        Ok(0.0)
    }
}

fn system_of(points: Vec<ParameterVector>) -> ParticleSystem {
    let n = points.len();
    let target = DealingTarget {
        points,
        cursor: AtomicUsize::new(0),
    };
    let config = SmcConfig {
        n_particles: n,
        ..SmcConfig::default()
    };
    ParticleSystem::init(&target, &config).unwrap()
}

/// Count-based quantile for uniformly weighted samples: the smallest order
/// statistic whose cumulative mass reaches `p` (matching the library's
/// left-continuous convention).
fn brute_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len() as f64;
    let k = (p * n - 1e-9).ceil().max(1.0) as usize;
    sorted[k - 1]
}

/// A temperature trajectory agreeing with observed history, then drifting
/// at `slope` per year out to `horizon`.
fn extended_trajectory(
    history: &ClimatePanel,
    horizon: i32,
    slope: f64,
    bias: f64,
) -> ClimatePanel {
    let k = history.countries.len();
    let last = *history.years.last().unwrap();
    let extra = (horizon - last) as usize;
    let mut years = history.years.clone();
    let n0 = years.len();
    let mut temps = Mat::missing(k, n0 + extra);
    for i in 0..k {
        for j in 0..n0 {
            temps.set(i, j, history.mean_temp.raw(i, j));
        }
        let mut level = history.mean_temp.raw(i, n0 - 1);
        for e in 0..extra {
            level += slope + bias;
            temps.set(i, n0 + e, level);
        }
    }
    for e in 0..extra {
        years.push(last + 1 + e as i32);
    }
    derive_climate_regressors(&RawClimatePanel {
        countries: history.countries.clone(),
        years,
        mean_temp: temps,
    })
    .unwrap()
}

#[test]
fn acceptance_08_projection_decomposition() {
    let k = 2;
    let variant = ModelVariant::new(VariantKind::Pooled, k);
    let truth = ParameterVector::new(vec![0.1, 0.03, 0.25, -0.08, 0.02, -0.01, 0.0016]);
    let (data, climate, _) = make_recovery_panel(variant, &truth, k, 12, 8800).unwrap();
    let origin = *data.years_effective.last().unwrap();
    let horizon = origin + 5;
    let base_levels = vec![100.0, 140.0];

    // 200 hand-built particles with spread in every parameter.
    let mut rng = seedtree::stream(seedtree::child_seed(8801, "particles"));
    let particles: Vec<ParameterVector> = (0..200)
        .map(|_| {
            ParameterVector::new(vec![
                rng.gen_range(0.05..0.15),
                rng.gen_range(0.01..0.05),
                rng.gen_range(0.1..0.4),
                rng.gen_range(-0.15..0.0),
                rng.gen_range(0.0..0.04),
                rng.gen_range(-0.02..0.0),
                rng.gen_range(0.001..0.01),
            ])
        })
        .collect();

    // Three scenarios, three climate models each, distinct drifts.
    let scenario_for = |id: &str, drift: f64| Scenario {
        scenario_id: id.to_string(),
        co2e_pathway: (origin..=horizon)
            .map(|y| (y, 400.0 + drift * 1000.0 * (y - origin) as f64))
            .collect(),
        trajectories: vec![
            (
                "m1".into(),
                extended_trajectory(&climate, horizon, drift, 0.00),
            ),
            (
                "m2".into(),
                extended_trajectory(&climate, horizon, drift, 0.05),
            ),
            (
                "m3".into(),
                extended_trajectory(&climate, horizon, drift, 0.10),
            ),
        ],
    };

    for (s, drift) in [("s-low", 0.02), ("s-mid", 0.06), ("s-high", 0.12)] {
        let scenario = scenario_for(s, drift);
        let draws = project_scenario(
            &system_of(particles.clone()),
            &data,
            variant,
            &scenario,
            &base_levels,
            horizon,
            8900,
        )
        .unwrap();
        assert_eq!(draws.models.len(), 3);
        assert_eq!(draws.weights.len(), 200);
        let decomp = decompose_uncertainty(&draws).unwrap();

        // Independent brute-force decomposition from the raw draw tensor,
        // relying on the weights being uniform by construction.
        for (j, dec) in decomp.iter().enumerate() {
            let model_means: Vec<f64> = draws
                .models
                .iter()
                .map(|md| (0..200).map(|pn| md.global.raw(pn, j)).sum::<f64>() / 200.0)
                .collect();
            let mut mm = model_means.clone();
            mm.sort_by(f64::total_cmp);
            let (clo, chi) = dec.climate_only_band.unwrap();
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
            assert!(rel(clo, brute_quantile(&mm, 0.25)) < 1e-10, "climate q25");
            assert!(rel(chi, brute_quantile(&mm, 0.75)) < 1e-10, "climate q75");

            let mut pooled: Vec<f64> = draws
                .models
                .iter()
                .flat_map(|md| (0..200).map(|pn| md.global.raw(pn, j)))
                .collect();
            pooled.sort_by(f64::total_cmp);
            assert!(rel(dec.total_iqr.0, brute_quantile(&pooled, 0.25)) < 1e-10);
            assert!(rel(dec.total_iqr.1, brute_quantile(&pooled, 0.75)) < 1e-10);
            assert!(rel(dec.total_band.0, brute_quantile(&pooled, 0.025)) < 1e-10);
            assert!(rel(dec.total_band.1, brute_quantile(&pooled, 0.975)) < 1e-10);
        }
    }

    // Collapse 1: identical climate models and zero predictive noise give
    // an exactly zero-width climate band (parameter spread stays).
    let zero_noise: Vec<ParameterVector> = particles
        .iter()
        .map(|p| {
            let mut v = p.values.clone();
            v[6] = 0.0;
            ParameterVector::new(v)
        })
        .collect();
    let same_models = Scenario {
        scenario_id: "s-same".into(),
        co2e_pathway: (origin..=horizon).map(|y| (y, 400.0)).collect(),
        trajectories: vec![
            (
                "m1".into(),
                extended_trajectory(&climate, horizon, 0.05, 0.0),
            ),
            (
                "m2".into(),
                extended_trajectory(&climate, horizon, 0.05, 0.0),
            ),
            (
                "m3".into(),
                extended_trajectory(&climate, horizon, 0.05, 0.0),
            ),
        ],
    };
    let draws = project_scenario(
        &system_of(zero_noise.clone()),
        &data,
        variant,
        &same_models,
        &base_levels,
        horizon,
        9000,
    )
    .unwrap();
    for dec in decompose_uncertainty(&draws).unwrap() {
        let (lo, hi) = dec.climate_only_band.unwrap();
        assert_eq!(
            lo.to_bits(),
            hi.to_bits(),
            "climate band must collapse exactly"
        );
        assert!(
            dec.total_iqr.1 > dec.total_iqr.0,
            "parameter spread must keep the total band open"
        );
    }

    // Collapse 2: a degenerate particle set (no parameter spread) with
    // zero noise makes every draw within a climate model identical, and
    // with identical models the total bands collapse exactly.
    let single = vec![zero_noise[0].clone(); 200];
    let draws = project_scenario(
        &system_of(single.clone()),
        &data,
        variant,
        &scenario_for("s-degenerate", 0.05),
        &base_levels,
        horizon,
        9001,
    )
    .unwrap();
    for md in &draws.models {
        for j in 0..draws.years.len() {
            let first = md.global.raw(0, j);
            for pn in 1..200 {
                assert_eq!(
                    md.global.raw(pn, j).to_bits(),
                    first.to_bits(),
                    "parameter spread must vanish within a climate model"
                );
            }
        }
    }
    for dec in decompose_uncertainty(&draws).unwrap() {
        // Distinct climate models still separate the per-model means.
        let (lo, hi) = dec.climate_only_band.unwrap();
        assert!(
            hi > lo,
            "distinct trajectories must keep the climate band open"
        );
    }
    let draws = project_scenario(
        &system_of(single),
        &data,
        variant,
        &same_models,
        &base_levels,
        horizon,
        9002,
    )
    .unwrap();
    for dec in decompose_uncertainty(&draws).unwrap() {
        assert_eq!(dec.total_iqr.0.to_bits(), dec.total_iqr.1.to_bits());
        assert_eq!(dec.total_band.0.to_bits(), dec.total_band.1.to_bits());
        let (lo, hi) = dec.climate_only_band.unwrap();
        assert_eq!(lo.to_bits(), hi.to_bits());
    }
    println!("ACCEPTANCE 8 (projection decomposition): PASS");
}

// ---------------------------------------------------------------------------
// 9. Determinism
// ---------------------------------------------------------------------------

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_graincast"))
}

/// Write a complete fixture set (panels, lists, scenarios, config) and
/// return the config path.
fn determinism_fixture(dir: &Path) -> PathBuf {
    let mut y = String::from("country,year,value\n");
    let mut c = String::from("country,year,mean_temp\n");
    for (i, country) in ["ARG", "BRA", "CAN"].iter().enumerate() {
        let mut level = 90.0 + 8.0 * i as f64;
        for year in 1961..=1984 {
            let t = (year - 1961) as f64;
            level *= (0.01 + 0.04 * ((t * 1.3 + i as f64 * 2.0).sin()) * 0.1).exp();
            y.push_str(&format!("{country},{year},{level}\n"));
            c.push_str(&format!(
                "{country},{year},{}\n",
                13.5 + 0.02 * t + 0.4 * (t * 0.6 + i as f64).cos()
            ));
        }
    }
    std::fs::write(dir.join("yield.csv"), y).unwrap();
    std::fs::write(dir.join("climate.csv"), &c).unwrap();
    std::fs::write(dir.join("base.txt"), "ARG\n").unwrap();
    std::fs::write(dir.join("cands.txt"), "BRA\nCAN\n").unwrap();

    // Scenario trajectories: history plus a drift out to 1990.
    let mut traj = String::from("scenario,climate_model,country,year,mean_temp\n");
    let mut co2e = String::from("scenario,year,co2e_ppm\n");
    for (s, drift) in [("rcp-lo", 0.02), ("rcp-hi", 0.09)] {
        for (m, bias) in [("cm-a", 0.0), ("cm-b", 0.03)] {
            for (i, country) in ["ARG", "BRA", "CAN"].iter().enumerate() {
                let mut temp = 0.0;
                for year in 1961..=1990 {
                    let t = (year - 1961) as f64;
                    if year <= 1984 {
                        temp = 13.5 + 0.02 * t + 0.4 * (t * 0.6 + i as f64).cos();
                    } else {
                        temp += drift + bias;
                    }
                    traj.push_str(&format!("{s},{m},{country},{year},{temp}\n"));
                }
            }
        }
        for year in 1961..=1990 {
            co2e.push_str(&format!(
                "{s},{year},{}\n",
                380.0 + drift * 100.0 * (year - 1961) as f64
            ));
        }
    }
    std::fs::write(dir.join("traj.csv"), traj).unwrap();
    std::fs::write(dir.join("co2e.csv"), co2e).unwrap();

    let config_path = dir.join("run.ini");
    std::fs::write(
        &config_path,
        format!(
            "[paths]\n\
             yield = {yd}\n\
             climate = {cl}\n\
             scenario_trajectories = {tj}\n\
             co2e_pathways = {co}\n\
             selection_base = {ba}\n\
             selection_candidates = {ca}\n\n\
             [model]\nvariant = hier-variance\n\n\
             [smc]\nn_particles = 150\n\n\
             [selection]\nreplicates = 1\n\n\
             [backtest]\nfirst_eval_year = 1980\n\n\
             [projection]\nhorizon = 1990\ndecade_start = 1986\ndecade_end = 1990\n\n\
             [run]\nseed = 31\n",
            yd = dir.join("yield.csv").display(),
            cl = dir.join("climate.csv").display(),
            tj = dir.join("traj.csv").display(),
            co = dir.join("co2e.csv").display(),
            ba = dir.join("base.txt").display(),
            ca = dir.join("cands.txt").display(),
        ),
    )
    .unwrap();
    config_path
}

/// All CSV artifacts in a directory, sorted by name.
fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| {
            let e = e.unwrap();
            let name = e.file_name().to_string_lossy().into_owned();
            name.ends_with(".csv")
                .then(|| (name, std::fs::read(e.path()).unwrap()))
        })
        .collect();
    out.sort();
    out
}

#[test]
fn acceptance_09_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let config_path = determinism_fixture(tmp.path());
    let commands: &[(&str, &[&str])] = &[
        ("fit", &[]),
        ("evidence", &["pooled", "hier-variance"]),
        ("select", &[]),
        ("backtest", &[]),
        ("project", &[]),
        ("verify", &[]),
    ];
    for (command, extra_args) in commands {
        let mut reference: Option<Vec<(String, Vec<u8>)>> = None;
        for threads in [1usize, 2, 4] {
            for run in 0..2 {
                let out_dir = tmp.path().join(format!("{command}-t{threads}-r{run}"));
                let output = bin()
                    .arg(command)
                    .args(*extra_args)
                    .arg("--config")
                    .arg(&config_path)
                    .arg("--threads")
                    .arg(threads.to_string())
                    .arg("--output")
                    .arg(&out_dir)
                    .output()
                    .unwrap();
                assert!(
                    output.status.success(),
                    "{command} (threads {threads}) failed:\n{}",
                    String::from_utf8_lossy(&output.stderr)
                );
                let bytes = csv_bytes(&out_dir);
                assert!(!bytes.is_empty(), "{command} wrote no CSV artifacts");
                match &reference {
                    None => reference = Some(bytes),
                    Some(expect) => {
                        assert_eq!(expect.len(), bytes.len(), "{command}: artifact set changed");
                        for ((n1, b1), (n2, b2)) in expect.iter().zip(&bytes) {
                            assert_eq!(n1, n2, "{command}: artifact names differ");
                            assert_eq!(
                                b1, b2,
                                "{command}: {n1} differs (threads {threads}, run {run})"
                            );
                        }
                    }
                }
            }
        }
    }
    println!("ACCEPTANCE 9 (determinism): PASS");
}

// ---------------------------------------------------------------------------
// 10. MH / SMC kernel correctness
// ---------------------------------------------------------------------------

/// Two-dimensional correlated Gaussian behind a flat prior box: at
/// tempering exponent 1 the move kernel's stationary law is the Gaussian.
struct GaussianBox {
    prec: [[f64; 2]; 2],
    half: f64,
}

impl GaussianBox {
    fn new(cov: [[f64; 2]; 2]) -> Self {
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let prec = [
            [cov[1][1] / det, -cov[0][1] / det],
            [-cov[1][0] / det, cov[0][0] / det],
        ];
        Self { prec, half: 12.0 }
    }
}

impl Target for GaussianBox {
    fn dim(&self) -> usize {
        2
    }
    fn names(&self) -> Vec<String> {
        vec!["x".into(), "y".into()]
    }
    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> ParameterVector {
        ParameterVector::new(vec![
            rng.gen_range(-self.half..self.half),
            rng.gen_range(-self.half..self.half),
        ])
    }
    fn log_prior(&self, x: &ParameterVector) -> f64 {
        if x.values.iter().all(|v| v.abs() <= self.half) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }
    fn log_likelihood(&self, x: &ParameterVector) -> graincast::Result<f64> {
        let (a, b) = (x.values[0], x.values[1]);
        let q = a * a * self.prec[0][0] + 2.0 * a * b * self.prec[0][1] + b * b * self.prec[1][1];
        Ok(-0.5 * q)
    }
}

#[test]
fn acceptance_10_kernel_correctness() {
    // Fixed-temperature Metropolis-Hastings must reproduce the target
    // covariance within 5% relative Frobenius error.
    let cov = [[1.0, 0.6], [0.6, 2.0]];
    let target = GaussianBox::new(cov);
    let config = SmcConfig {
        n_particles: 6000,
        max_move_iters: 1, // exactly one sweep per call
        seed: 1234,
        ..SmcConfig::default()
    };
    let mut system = ParticleSystem::init(&target, &config).unwrap();
    system.gamma = 1.0; // fixed temperature: full likelihood on
    for _ in 0..60 {
        move_particles(&mut system, 0.7, &target, &config).unwrap();
    }
    let n = system.len() as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for p in &system.particles {
        mx += p.values[0];
        my += p.values[1];
    }
    mx /= n;
    my /= n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &system.particles {
        let dx = p.values[0] - mx;
        let dy = p.values[1] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    sxx /= n - 1.0;
    sxy /= n - 1.0;
    syy /= n - 1.0;
    let frob_err =
        ((sxx - cov[0][0]).powi(2) + 2.0 * (sxy - cov[0][1]).powi(2) + (syy - cov[1][1]).powi(2))
            .sqrt();
    let frob_ref = (cov[0][0].powi(2) + 2.0 * cov[0][1].powi(2) + cov[1][1].powi(2)).sqrt();
    assert!(
        frob_err / frob_ref < 0.05,
        "sampled covariance [[{sxx:.3}, {sxy:.3}], [{sxy:.3}, {syy:.3}]] \
         off by {:.1}% Frobenius",
        100.0 * frob_err / frob_ref
    );

    // Systematic resampling unbiasedness: with weights (0.7, 0.3) the
    // expected offspring count of the heavy particle is exactly 1.4.
    let weights = [0.7, 0.3];
    let reps = 100_000;
    let mut rng = seedtree::stream(seedtree::child_seed(777, "resample"));
    let mut total0 = 0u64;
    for _ in 0..reps {
        let u: f64 = rng.gen();
        let idx = systematic_indices(&weights, u);
        assert_eq!(idx.len(), 2);
        total0 += idx.iter().filter(|&&i| i == 0).count() as u64;
    }
    let mean0 = total0 as f64 / reps as f64;
    // Offspring count is 1 + Bernoulli(0.4), so sd = sqrt(0.24 / reps).
    let sigma = (0.24f64 / reps as f64).sqrt();
    assert!(
        (mean0 - 1.4).abs() < 3.0 * sigma,
        "mean offspring of heavy particle {mean0:.5} outside 1.4 +/- {:.5}",
        3.0 * sigma
    );
    println!("ACCEPTANCE 10 (kernel correctness): PASS");
}
