//! Analytic oracles and ground-truth generators for validation.
//!
//! Everything here has a closed form or a known-parameter construction, so
//! the statistical machinery elsewhere in the crate can be checked against
//! independent answers: a conjugate Normal-Normal model with exact marginal
//! likelihood, closed-form Gaussian expected shortfall, and reproducible
//! synthetic panels with documented ground truth. The `verify` CLI
//! subcommand runs the whole suite and prints a pass/fail table.
//!
//! These functions ship in the library (not test-only) so end users can
//! re-run the checks, but they are not part of the crate's stability
//! contract.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::{self, ln_normal_pdf, std_normal_quantile, ModelVariant, ParameterVector};
use crate::panel::{derive_climate_regressors, AlignedDataset, ClimatePanel, RawClimatePanel};
use crate::seedtree;
use crate::smc::{self, SmcConfig, Target};

/// Conjugate Normal-Normal model: i.i.d. Normal observations with known
/// variance and a Normal prior on the mean.
#[derive(Debug, Clone)]
pub struct ConjugateSpec {
    /// Prior mean of the location parameter.
    pub prior_mean: f64,
    /// Prior variance of the location parameter (positive).
    pub prior_var: f64,
    /// Known observation variance (positive).
    pub obs_var: f64,
    /// Observed values.
    pub observations: Vec<f64>,
}

impl ConjugateSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.prior_var > 0.0) {
            return Err(Error::Config(format!(
                "conjugate prior variance must be positive, got {}",
                self.prior_var
            )));
        }
        if !(self.obs_var > 0.0) {
            return Err(Error::Config(format!(
                "conjugate observation variance must be positive, got {}",
                self.obs_var
            )));
        }
        Ok(())
    }

    fn sufficient_stats(&self) -> (f64, f64, f64) {
        let n = self.observations.len() as f64;
        let sum: f64 = self.observations.iter().sum();
        let sum_sq: f64 = self.observations.iter().map(|y| y * y).sum();
        (n, sum, sum_sq)
    }
}

/// Exact log marginal likelihood of the conjugate model.
///
/// With `n` observations, prior `N(m0, v0)` and observation variance `s2`,
/// the posterior variance is `vn = 1/(1/v0 + n/s2)` and
///
/// ```text
/// log Z = -n/2·ln(2π·s2) + 1/2·ln(vn/v0)
///         - 1/2·(Σy²/s2 + m0²/v0 - mn²/vn)
/// ```
///
/// where `mn = vn·(m0/v0 + Σy/s2)`. Zero observations give exactly 0.
pub fn conjugate_log_evidence(spec: &ConjugateSpec) -> Result<f64> {
    spec.validate()?;
    let (n, sum, sum_sq) = spec.sufficient_stats();
    if n == 0.0 {
        return Ok(0.0);
    }
    let (m0, v0, s2) = (spec.prior_mean, spec.prior_var, spec.obs_var);
    let vn = 1.0 / (1.0 / v0 + n / s2);
    let mn = vn * (m0 / v0 + sum / s2);
    Ok(
        -0.5 * n * (2.0 * std::f64::consts::PI * s2).ln() + 0.5 * (vn / v0).ln()
            - 0.5 * (sum_sq / s2 + m0 * m0 / v0 - mn * mn / vn),
    )
}

/// Log marginal likelihood of the conjugate model by adaptive-resolution
/// Simpson quadrature over the mean parameter. Independent of the closed
/// form; used to cross-check it to 1e-8.
pub fn conjugate_log_evidence_quadrature(spec: &ConjugateSpec) -> Result<f64> {
    spec.validate()?;
    let (n, sum, sum_sq) = spec.sufficient_stats();
    if n == 0.0 {
        return Ok(0.0);
    }
    let (m0, v0, s2) = (spec.prior_mean, spec.prior_var, spec.obs_var);
    // Integration window: generously covers both prior and likelihood.
    let center = (m0 / v0 + sum / s2) / (1.0 / v0 + n / s2);
    let spread = (v0.max(s2 / n)).sqrt();
    let lo = center - 14.0 * spread;
    let hi = center + 14.0 * spread;
    let log_integrand = |mu: f64| -> f64 {
        let loglik = -0.5 * n * (2.0 * std::f64::consts::PI * s2).ln()
            - 0.5 * (sum_sq - 2.0 * mu * sum + n * mu * mu) / s2;
        let logprior = ln_normal_pdf(mu, m0, v0.sqrt());
        loglik + logprior
    };
    // Stabilize in log space around the peak value.
    let steps = 1 << 18;
    let h = (hi - lo) / steps as f64;
    let peak = log_integrand(center);
    let f = |mu: f64| (log_integrand(mu) - peak).exp();
    let mut acc = f(lo) + f(hi);
    for j in 1..steps {
        let x = lo + h * j as f64;
        acc += if j % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    Ok(peak + (acc * h / 3.0).ln())
}

/// The conjugate model as an SMC target (sufficient-statistic likelihood,
/// so each evaluation is O(1) in the number of observations).
pub struct ConjugateTarget {
    spec: ConjugateSpec,
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl ConjugateTarget {
    pub fn new(spec: ConjugateSpec) -> Result<Self> {
        spec.validate()?;
        let (n, sum, sum_sq) = spec.sufficient_stats();
        Ok(Self {
            spec,
            n,
            sum,
            sum_sq,
        })
    }
}

impl Target for ConjugateTarget {
    fn dim(&self) -> usize {
        1
    }

    fn names(&self) -> Vec<String> {
        vec!["mu".into()]
    }

    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> ParameterVector {
        let z: f64 = rng.sample(StandardNormal);
        ParameterVector::new(vec![self.spec.prior_mean + self.spec.prior_var.sqrt() * z])
    }

    fn log_prior(&self, x: &ParameterVector) -> f64 {
        ln_normal_pdf(
            x.values[0],
            self.spec.prior_mean,
            self.spec.prior_var.sqrt(),
        )
    }

    fn log_likelihood(&self, x: &ParameterVector) -> Result<f64> {
        let mu = x.values[0];
        let s2 = self.spec.obs_var;
        Ok(-0.5 * self.n * (2.0 * std::f64::consts::PI * s2).ln()
            - 0.5 * (self.sum_sq - 2.0 * mu * self.sum + self.n * mu * mu) / s2)
    }
}

/// Which tail an expected-shortfall statement refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    /// Average of outcomes at or below the lower `alpha`-quantile.
    Lower,
    /// Average of outcomes at or above the upper `1-alpha`-quantile.
    Upper,
}

/// Closed-form expected shortfall of a Normal distribution.
///
/// Lower tail at level `alpha`: `mean - sd·φ(z_α)/alpha` with `z_α` the
/// `alpha`-quantile of the standard normal; the upper tail is symmetric.
///
/// # Panics
///
/// Panics when `alpha` lies outside `(0, 1)` or `sd` is not positive.
pub fn normal_es(alpha: f64, mean: f64, sd: f64, tail: Tail) -> f64 {
    assert!(
        alpha > 0.0 && alpha < 1.0,
        "tail probability must lie in (0, 1), got {alpha}"
    );
    assert!(sd > 0.0, "standard deviation must be positive, got {sd}");
    let z = std_normal_quantile(alpha);
    let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    match tail {
        Tail::Lower => mean - sd * phi / alpha,
        Tail::Upper => mean + sd * phi / alpha,
    }
}

/// Reproducible synthetic panel with documented ground truth: climate
/// regressors with `N(0, 1°C)` year-over-year temperature differences and
/// observations simulated from the model at `true_params`.
pub fn make_recovery_panel(
    variant: ModelVariant,
    true_params: &ParameterVector,
    k: usize,
    t_len: usize,
    seed: u64,
) -> Result<(AlignedDataset, ClimatePanel, ParameterVector)> {
    let mut rng = seedtree::stream(seedtree::child_seed(seed, "recovery-panel"));
    let n_years = t_len + 3;
    let countries: Vec<String> = (0..k).map(|i| format!("SYN{i:02}")).collect();
    let years: Vec<i32> = (0..n_years as i32).map(|t| 1961 + t).collect();
    let mut temps = Mat::missing(k, n_years);
    for i in 0..k {
        let mut level = 14.0;
        temps.set(i, 0, level);
        for t in 1..n_years {
            let step: f64 = rng.sample(StandardNormal);
            level += step;
            temps.set(i, t, level);
        }
    }
    let climate = derive_climate_regressors(&RawClimatePanel {
        countries,
        years,
        mean_temp: temps,
    })?;
    let data = model::simulate_dataset(true_params, variant, k, t_len, &climate, &mut rng)?;
    Ok((data, climate, true_params.clone()))
}

/// One row of the verification table.
#[derive(Debug, Clone)]
pub struct VerifyRow {
    /// Short description of the check.
    pub check: String,
    /// Tolerance the measured discrepancy must stay under.
    pub tolerance: f64,
    /// Measured discrepancy.
    pub measured: f64,
    /// Whether the check passed.
    pub pass: bool,
}

fn row(check: &str, tolerance: f64, measured: f64) -> VerifyRow {
    VerifyRow {
        check: check.to_string(),
        tolerance,
        measured,
        pass: measured.is_finite() && measured <= tolerance,
    }
}

/// Fixed-seed 20-point conjugate fixture used by several checks.
pub fn conjugate_fixture() -> ConjugateSpec {
    let mut rng = seedtree::stream(seedtree::child_seed(2718, "conjugate-fixture"));
    let observations: Vec<f64> = (0..20)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            1.3 + 0.8 * z
        })
        .collect();
    ConjugateSpec {
        prior_mean: 0.0,
        prior_var: 4.0,
        obs_var: 0.64,
        observations,
    }
}

/// Run the complete oracle self-check suite. Each row reports the measured
/// discrepancy against its tolerance; the suite passes when every row does.
pub fn verify_suite() -> Result<Vec<VerifyRow>> {
    let mut rows = Vec::new();

    // Closed-form conjugate evidence vs quadrature on three fixtures.
    let fixtures = [
        ConjugateSpec {
            prior_mean: 0.0,
            prior_var: 1.0,
            obs_var: 1.0,
            observations: vec![0.7],
        },
        ConjugateSpec {
            prior_mean: -2.0,
            prior_var: 9.0,
            obs_var: 0.25,
            observations: vec![1.1, 0.4, 0.9, 1.6],
        },
        conjugate_fixture(),
    ];
    for (i, spec) in fixtures.iter().enumerate() {
        let exact = conjugate_log_evidence(spec)?;
        let quad = conjugate_log_evidence_quadrature(spec)?;
        rows.push(row(
            &format!("conjugate evidence vs quadrature, fixture {i}"),
            1e-8,
            (exact - quad).abs(),
        ));
    }

    // Single-observation case against direct Gaussian convolution.
    let y = 0.7;
    let single = conjugate_log_evidence(&fixtures[0])?;
    rows.push(row(
        "conjugate single observation vs N(y; 0, 2)",
        1e-12,
        (single - ln_normal_pdf(y, 0.0, 2.0_f64.sqrt())).abs(),
    ));

    // Gaussian expected-shortfall closed forms against tabulated values.
    rows.push(row(
        "standard normal lower 1% expected shortfall",
        5e-4,
        (normal_es(0.01, 0.0, 1.0, Tail::Lower) - (-2.665214)).abs(),
    ));
    rows.push(row(
        "normal(30, 5) lower 1% expected shortfall",
        5e-3,
        (normal_es(0.01, 30.0, 5.0, Tail::Lower) - 16.674).abs(),
    ));
    rows.push(row(
        "expected-shortfall tail symmetry",
        1e-12,
        (normal_es(0.01, 0.0, 1.0, Tail::Upper) + normal_es(0.01, 0.0, 1.0, Tail::Lower)).abs(),
    ));

    // Recovery panel determinism.
    let variant = ModelVariant::new(model::VariantKind::Pooled, 2);
    let truth = ParameterVector::new(vec![0.12, 0.04, 0.25, -0.1, 0.02, -0.01, 0.0009]);
    let (a1, _, _) = make_recovery_panel(variant, &truth, 2, 10, 99)?;
    let (a2, _, _) = make_recovery_panel(variant, &truth, 2, 10, 99)?;
    let identical = a1.y.bits_eq(&a2.y) && a1.dt.bits_eq(&a2.dt);
    rows.push(row(
        "recovery panel determinism",
        0.0,
        if identical { 0.0 } else { 1.0 },
    ));

    // Residual variance of a long simulated series vs the true variance.
    let (long, _, _) = make_recovery_panel(
        ModelVariant::new(model::VariantKind::Pooled, 1),
        &ParameterVector::new(vec![0.12, 0.04, 0.25, -0.1, 0.02, -0.01, 0.0009]),
        1,
        5000,
        7,
    )?;
    let v1 = ModelVariant::new(model::VariantKind::Pooled, 1);
    let mut residuals = Vec::new();
    for t in 0..5000 {
        let mu = model::conditional_mean(
            &ParameterVector::new(vec![0.12, 0.04, 0.25, -0.1, 0.02, -0.01, 0.0009]),
            &long,
            v1,
            0,
            t,
        )?;
        residuals.push(long.y.get(0, t).unwrap() - mu);
    }
    let mean_r = residuals.iter().sum::<f64>() / residuals.len() as f64;
    let var_r = residuals
        .iter()
        .map(|r| (r - mean_r) * (r - mean_r))
        .sum::<f64>()
        / (residuals.len() as f64 - 1.0);
    rows.push(row(
        "simulated residual variance vs truth (relative)",
        0.05,
        (var_r - 0.0009).abs() / 0.0009,
    ));

    // SMC marginal likelihood against the analytic conjugate evidence.
    let spec = conjugate_fixture();
    let exact = conjugate_log_evidence(&spec)?;
    let target = ConjugateTarget::new(spec)?;
    let config = SmcConfig {
        n_particles: 2000,
        seed: 31415,
        ..SmcConfig::default()
    };
    let out = smc::run_smc_target(&target, &config)?;
    rows.push(row(
        "SMC evidence vs conjugate closed form",
        0.1,
        (out.log_evidence - exact).abs(),
    ));

    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn conjugate_zero_observations_gives_zero() {
        let spec = ConjugateSpec {
            prior_mean: 0.3,
            prior_var: 2.0,
            obs_var: 1.5,
            observations: vec![],
        };
        assert_eq!(conjugate_log_evidence(&spec).unwrap(), 0.0);
    }

    #[test]
    fn conjugate_single_observation_is_gaussian_convolution() {
        for y in [-1.5, 0.0, 0.7, 3.2] {
            let spec = ConjugateSpec {
                prior_mean: 0.0,
                prior_var: 1.0,
                obs_var: 1.0,
                observations: vec![y],
            };
            let lz = conjugate_log_evidence(&spec).unwrap();
            assert_relative_eq!(lz, ln_normal_pdf(y, 0.0, 2.0_f64.sqrt()), epsilon = 1e-12);
        }
    }

    #[test]
    fn conjugate_closed_form_matches_quadrature() {
        let spec = conjugate_fixture();
        assert_eq!(spec.observations.len(), 20);
        let exact = conjugate_log_evidence(&spec).unwrap();
        let quad = conjugate_log_evidence_quadrature(&spec).unwrap();
        assert!(
            (exact - quad).abs() < 1e-8,
            "closed form {exact} vs quadrature {quad}"
        );
    }

    #[test]
    fn conjugate_rejects_bad_variances() {
        let spec = ConjugateSpec {
            prior_mean: 0.0,
            prior_var: 0.0,
            obs_var: 1.0,
            observations: vec![],
        };
        assert!(conjugate_log_evidence(&spec).is_err());
        let spec = ConjugateSpec {
            prior_mean: 0.0,
            prior_var: 1.0,
            obs_var: -2.0,
            observations: vec![],
        };
        assert!(conjugate_log_evidence(&spec).is_err());
    }

    #[test]
    fn conjugate_target_matches_direct_likelihood_sum() {
        let spec = conjugate_fixture();
        let target = ConjugateTarget::new(spec.clone()).unwrap();
        for mu in [-1.0, 0.0, 1.3, 2.4] {
            let fast = target
                .log_likelihood(&ParameterVector::new(vec![mu]))
                .unwrap();
            let slow: f64 = spec
                .observations
                .iter()
                .map(|&y| ln_normal_pdf(y, mu, spec.obs_var.sqrt()))
                .sum();
            assert_relative_eq!(fast, slow, epsilon = 1e-10);
        }
    }

    #[test]
    fn normal_es_tabulated_values() {
        let es = normal_es(0.01, 0.0, 1.0, Tail::Lower);
        assert!((es - (-2.665214)).abs() < 5e-4, "lower 1% ES {es}");
        let es = normal_es(0.01, 30.0, 5.0, Tail::Lower);
        assert!((es - 16.674).abs() < 5e-3, "affine ES {es}");
        let up = normal_es(0.01, 0.0, 1.0, Tail::Upper);
        assert_relative_eq!(up, 2.665214, epsilon = 5e-4);
    }

    #[test]
    #[should_panic(expected = "standard deviation must be positive")]
    fn normal_es_rejects_zero_sd() {
        normal_es(0.01, 0.0, 0.0, Tail::Lower);
    }

    #[test]
    fn recovery_panel_is_deterministic() {
        let variant = ModelVariant::new(model::VariantKind::Pooled, 3);
        let truth = ParameterVector::new(vec![0.1, 0.02, 0.3, -0.05, 0.01, -0.005, 0.0004]);
        let (a, ca, _) = make_recovery_panel(variant, &truth, 3, 15, 4242).unwrap();
        let (b, cb, _) = make_recovery_panel(variant, &truth, 3, 15, 4242).unwrap();
        assert!(a.y.bits_eq(&b.y));
        assert!(a.y_lag1.bits_eq(&b.y_lag1));
        assert!(ca.delta_t.bits_eq(&cb.delta_t));
        let (c, _, _) = make_recovery_panel(variant, &truth, 3, 15, 4243).unwrap();
        assert!(!a.y.bits_eq(&c.y), "different seeds must differ");
    }

    #[test]
    fn recovery_panel_noiseless_matches_recursion() {
        let variant = ModelVariant::new(model::VariantKind::Pooled, 1);
        let truth = ParameterVector::new(vec![0.15, 0.05, 0.4, -0.2, 0.02, -0.01, 1e-30]);
        let (data, _, _) = make_recovery_panel(variant, &truth, 1, 5, 11).unwrap();
        for t in 0..5 {
            let mu = model::conditional_mean(&truth, &data, variant, 0, t).unwrap();
            assert!(
                (data.y.get(0, t).unwrap() - mu).abs() < 1e-10,
                "noiseless path must follow the deterministic recursion"
            );
        }
    }

    #[test]
    fn smc_evidence_matches_conjugate_oracle() {
        let spec = conjugate_fixture();
        let exact = conjugate_log_evidence(&spec).unwrap();
        let target = ConjugateTarget::new(spec).unwrap();
        let config = SmcConfig {
            n_particles: 2000,
            seed: 67,
            ..SmcConfig::default()
        };
        let out = smc::run_smc_target(&target, &config).unwrap();
        assert!(
            (out.log_evidence - exact).abs() < 0.1,
            "SMC evidence {} vs analytic {exact}",
            out.log_evidence
        );
    }

    #[test]
    fn smc_bayes_factor_matches_analytic_difference() {
        // Two conjugate toys with different priors on the same data: the
        // SMC log-Bayes-factor must land within ±0.2 of the analytic one.
        let base = conjugate_fixture();
        let mut wide = base.clone();
        wide.prior_var = 25.0;
        let analytic =
            conjugate_log_evidence(&base).unwrap() - conjugate_log_evidence(&wide).unwrap();
        let config = SmcConfig {
            n_particles: 2000,
            seed: 5150,
            ..SmcConfig::default()
        };
        let e1 = smc::run_smc_target(&ConjugateTarget::new(base).unwrap(), &config)
            .unwrap()
            .log_evidence;
        let e2 = smc::run_smc_target(&ConjugateTarget::new(wide).unwrap(), &config)
            .unwrap()
            .log_evidence;
        assert!(
            ((e1 - e2) - analytic).abs() < 0.2,
            "SMC log-BF {} vs analytic {analytic}",
            e1 - e2
        );
    }

    #[test]
    fn verify_suite_all_rows_pass() {
        let rows = verify_suite().unwrap();
        assert!(!rows.is_empty());
        for r in &rows {
            assert!(
                r.pass,
                "verification row failed: {} measured {} tolerance {}",
                r.check, r.measured, r.tolerance
            );
        }
    }
}
