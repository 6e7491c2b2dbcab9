//! Model variants, parameter layout, priors, likelihoods, prior sampling,
//! and forward simulation.
//!
//! The growth model for country i at time index t is
//!
//!   y[i,t] = a_i * exp(-lambda_i * t) + theta1 * y[i,t-1] + theta2 * y[i,t-2]
//!            + theta3 * dT[i,t] + theta4 * dT[i,t]^2 + eps[i,t],
//!   eps[i,t] ~ N(0, sigma_i^2)
//!
//! Variants differ in which parameters are country-specific and which get a
//! hyperprior layer. Parameters are stored as one flat vector per particle;
//! `Layout` maps named quantities to positions and drives prior evaluation,
//! prior sampling, and CSV column naming.
//!
//! Prior (pooled form): a ~ U(0, 0.5), lambda ~ U(0, 0.2),
//! theta1, theta2 ~ N(0, 0.5^2), theta3 ~ N(0, 0.2^2), theta4 ~ N(0, 0.1^2),
//! sigma^2 ~ InvGamma(2, 1). The second Normal argument is a standard
//! deviation throughout. Hierarchical layers:
//! - intercepts: a_i ~ TruncNormal(m_a, s_a^2) on [0, 0.5] with
//!   m_a ~ U(0, 0.5), s_a ~ Gamma(2, 1); analogously lambda_i on [0, 0.2];
//! - variances: sigma_i^2 ~ InvGamma(alpha_sigma, beta_sigma) with
//!   alpha_sigma, beta_sigma ~ Gamma(2, 1);
//! - fully hierarchical coefficients: theta_j,i ~ N(m_j, s_j^2) with
//!   m_j ~ N(0, 0.5^2), s_j ~ Gamma(2, 1).

use rand::Rng;
use rand_distr::Distribution;
use statrs::function::erf;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::panel::{AlignedDataset, ClimatePanel};

pub const A_RANGE: (f64, f64) = (0.0, 0.5);
pub const LAMBDA_RANGE: (f64, f64) = (0.0, 0.2);
pub const THETA_PRIOR_SD: [f64; 4] = [0.5, 0.5, 0.2, 0.1];
pub const SIGMA2_PRIOR_SHAPE: f64 = 2.0;
pub const SIGMA2_PRIOR_RATE: f64 = 1.0;
pub const HYPER_GAMMA_SHAPE: f64 = 2.0;
pub const HYPER_GAMMA_RATE: f64 = 1.0;
pub const COEF_HYPER_MEAN_SD: f64 = 0.5;
/// Likelihood evaluation rejects variances below this bound.
pub const SIGMA2_MIN: f64 = 1e-300;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VariantKind {
    /// Single error variance, pooled coefficients.
    Pooled,
    /// Country-specific decaying intercepts (a_i, lambda_i) with hyperpriors.
    HierIntercept,
    /// Country-specific error variances with an InvGamma hyperprior layer.
    HierVariance,
    /// Both intercept and variance hierarchies.
    HierInterceptVariance,
    /// Country-specific a_i, lambda_i, sigma_i^2 with independent priors and
    /// no hyperparameters.
    IndependentIV,
    /// Every structural coefficient country-specific with a hyperprior layer.
    FullHier,
}

pub const ALL_VARIANT_KINDS: [VariantKind; 6] = [
    VariantKind::Pooled,
    VariantKind::HierIntercept,
    VariantKind::HierVariance,
    VariantKind::HierInterceptVariance,
    VariantKind::IndependentIV,
    VariantKind::FullHier,
];

impl VariantKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(VariantKind::Pooled),
            "hier-intercept" => Ok(VariantKind::HierIntercept),
            "hier-variance" => Ok(VariantKind::HierVariance),
            "hier-iv" => Ok(VariantKind::HierInterceptVariance),
            "independent-iv" => Ok(VariantKind::IndependentIV),
            "full-hier" => Ok(VariantKind::FullHier),
            other => Err(Error::Config(format!(
                "model.variant: unknown variant `{other}` (expected pooled | hier-intercept | \
                 hier-variance | hier-iv | independent-iv | full-hier)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            VariantKind::Pooled => "pooled",
            VariantKind::HierIntercept => "hier-intercept",
            VariantKind::HierVariance => "hier-variance",
            VariantKind::HierInterceptVariance => "hier-iv",
            VariantKind::IndependentIV => "independent-iv",
            VariantKind::FullHier => "full-hier",
        }
    }

    fn hier_intercepts(&self) -> bool {
        matches!(
            self,
            VariantKind::HierIntercept | VariantKind::HierInterceptVariance | VariantKind::FullHier
        )
    }

    fn per_country_intercepts(&self) -> bool {
        self.hier_intercepts() || matches!(self, VariantKind::IndependentIV)
    }

    fn hier_variances(&self) -> bool {
        matches!(
            self,
            VariantKind::HierVariance | VariantKind::HierInterceptVariance | VariantKind::FullHier
        )
    }

    fn per_country_variances(&self) -> bool {
        self.hier_variances() || matches!(self, VariantKind::IndependentIV)
    }

    fn per_country_thetas(&self) -> bool {
        matches!(self, VariantKind::FullHier)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelVariant {
    pub kind: VariantKind,
    /// Number of countries.
    pub k: usize,
}

impl ModelVariant {
    pub fn new(kind: VariantKind, k: usize) -> Self {
        assert!(k >= 1, "model needs at least one country");
        ModelVariant { kind, k }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(*self)
    }
}

/// Deterministic dimension of the sampled parameter vector.
pub fn param_dimension(variant: ModelVariant) -> usize {
    let k = variant.k;
    match variant.kind {
        VariantKind::Pooled => 7,
        VariantKind::HierIntercept => 2 * k + 9,
        VariantKind::HierVariance => 6 + k + 2,
        VariantKind::HierInterceptVariance => 3 * k + 10,
        VariantKind::IndependentIV => 3 * k + 4,
        VariantKind::FullHier => 7 * k + 14,
    }
}

/// Offsets of named quantities inside the flat parameter vector.
///
/// Slot order: intercepts (a block, lambda block, intercept hyperparameters),
/// then coefficient blocks theta1..theta4 (each followed by its m/s
/// hyperparameters when fully hierarchical), then variances and their
/// hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub variant: ModelVariant,
    a_off: usize,
    lambda_off: usize,
    intercept_hyper_off: Option<usize>,
    theta_off: usize,
    sigma2_off: usize,
    var_hyper_off: Option<usize>,
    dim: usize,
}

impl Layout {
    pub fn new(variant: ModelVariant) -> Self {
        let k = variant.k;
        let kind = variant.kind;
        let n_int = if kind.per_country_intercepts() { k } else { 1 };
        let a_off = 0;
        let lambda_off = a_off + n_int;
        let mut cursor = lambda_off + n_int;
        let intercept_hyper_off = if kind.hier_intercepts() {
            let off = cursor;
            cursor += 4; // m_a, s_a, m_lambda, s_lambda
            Some(off)
        } else {
            None
        };
        let theta_off = cursor;
        cursor += if kind.per_country_thetas() {
            4 * (k + 2) // per coefficient: K values + m + s
        } else {
            4
        };
        let sigma2_off = cursor;
        cursor += if kind.per_country_variances() { k } else { 1 };
        let var_hyper_off = if kind.hier_variances() {
            let off = cursor;
            cursor += 2; // alpha_sigma, beta_sigma
            Some(off)
        } else {
            None
        };
        let layout = Layout {
            variant,
            a_off,
            lambda_off,
            intercept_hyper_off,
            theta_off,
            sigma2_off,
            var_hyper_off,
            dim: cursor,
        };
        debug_assert_eq!(layout.dim, param_dimension(variant));
        layout
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a(&self, p: &ParameterVector, country: usize) -> f64 {
        if self.variant.kind.per_country_intercepts() {
            p.values[self.a_off + country]
        } else {
            p.values[self.a_off]
        }
    }

    pub fn lambda(&self, p: &ParameterVector, country: usize) -> f64 {
        if self.variant.kind.per_country_intercepts() {
            p.values[self.lambda_off + country]
        } else {
            p.values[self.lambda_off]
        }
    }

    /// theta_j (j in 1..=4) for a country.
    pub fn theta(&self, p: &ParameterVector, j: usize, country: usize) -> f64 {
        debug_assert!((1..=4).contains(&j));
        if self.variant.kind.per_country_thetas() {
            p.values[self.theta_off + (j - 1) * (self.variant.k + 2) + country]
        } else {
            p.values[self.theta_off + (j - 1)]
        }
    }

    pub fn sigma2(&self, p: &ParameterVector, country: usize) -> f64 {
        if self.variant.kind.per_country_variances() {
            p.values[self.sigma2_off + country]
        } else {
            p.values[self.sigma2_off]
        }
    }

    pub fn sigma2_slice<'a>(&self, p: &'a ParameterVector) -> &'a [f64] {
        let n = if self.variant.kind.per_country_variances() {
            self.variant.k
        } else {
            1
        };
        &p.values[self.sigma2_off..self.sigma2_off + n]
    }

    /// Column names for posterior CSV output, in storage order.
    pub fn param_names(&self, countries: &[String]) -> Vec<String> {
        let k = self.variant.k;
        let kind = self.variant.kind;
        assert_eq!(countries.len(), k, "country list must match variant K");
        let mut names = Vec::with_capacity(self.dim);
        let tag = |base: &str, i: usize| format!("{}[{}]", base, countries[i]);
        if kind.per_country_intercepts() {
            names.extend((0..k).map(|i| tag("a", i)));
            names.extend((0..k).map(|i| tag("lambda", i)));
        } else {
            names.push("a".into());
            names.push("lambda".into());
        }
        if kind.hier_intercepts() {
            names.extend(
                ["m_a", "s_a", "m_lambda", "s_lambda"]
                    .iter()
                    .map(|s| s.to_string()),
            );
        }
        for j in 1..=4 {
            if kind.per_country_thetas() {
                names.extend((0..k).map(|i| tag(&format!("theta{j}"), i)));
                names.push(format!("m_theta{j}"));
                names.push(format!("s_theta{j}"));
            } else {
                names.push(format!("theta{j}"));
            }
        }
        if kind.per_country_variances() {
            names.extend((0..k).map(|i| tag("sigma2", i)));
        } else {
            names.push("sigma2".into());
        }
        if kind.hier_variances() {
            names.push("alpha_sigma".into());
            names.push("beta_sigma".into());
        }
        debug_assert_eq!(names.len(), self.dim);
        names
    }
}

/// One draw of every sampled quantity for a given model variant, stored
/// flat in the layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParameterVector { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

// ---- densities ----

pub fn ln_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

pub fn ln_uniform_pdf(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo || x > hi {
        f64::NEG_INFINITY
    } else {
        -(hi - lo).ln()
    }
}

/// Gamma(shape, rate) log-density.
pub fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() + (shape - 1.0) * x.ln() - rate * x - ln_gamma(shape)
}

/// InverseGamma(shape, rate) log-density:
/// rate^shape / Gamma(shape) * x^-(shape+1) * exp(-rate / x).
pub fn ln_inv_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - (shape + 1.0) * x.ln() - rate / x - ln_gamma(shape)
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf::erf(z / std::f64::consts::SQRT_2))
}

pub fn std_normal_quantile(p: f64) -> f64 {
    use statrs::distribution::ContinuousCDF;
    statrs::distribution::Normal::new(0.0, 1.0)
        .unwrap()
        .inverse_cdf(p)
}

/// Normal(mean, sd^2) truncated to [lo, hi], log-density.
pub fn ln_trunc_normal_pdf(x: f64, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if sd <= 0.0 || x < lo || x > hi {
        return f64::NEG_INFINITY;
    }
    let z = std_normal_cdf((hi - mean) / sd) - std_normal_cdf((lo - mean) / sd);
    if z <= 0.0 || !z.is_finite() {
        return f64::NEG_INFINITY;
    }
    ln_normal_pdf(x, mean, sd) - z.ln()
}

/// Inverse-CDF draw from a truncated normal; result clamped into [lo, hi].
fn sample_trunc_normal<R: Rng>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let p_lo = std_normal_cdf((lo - mean) / sd);
    let p_hi = std_normal_cdf((hi - mean) / sd);
    let u: f64 = rng.gen();
    let p = (p_lo + u * (p_hi - p_lo)).clamp(1e-15, 1.0 - 1e-15);
    (mean + sd * std_normal_quantile(p)).clamp(lo, hi)
}

// ---- operations ----

/// Conditional mean mu[i,t] of the growth model at dataset column `t`.
pub fn conditional_mean(
    params: &ParameterVector,
    data: &AlignedDataset,
    variant: ModelVariant,
    i: usize,
    t: usize,
) -> Result<f64> {
    let layout = variant.layout();
    check_dims(params, &layout, data)?;
    if i >= data.k() || t >= data.t_len() {
        return Err(Error::DimensionMismatch(format!(
            "cell ({i}, {t}) outside dataset {}x{}",
            data.k(),
            data.t_len()
        )));
    }
    let (l1, l2, dt, dt2) = match (
        data.y_lag1.get(i, t),
        data.y_lag2.get(i, t),
        data.dt.get(i, t),
        data.dt2.get(i, t),
    ) {
        (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
        _ => return Err(Error::MissingRegressor { country: i, t }),
    };
    let tm = data.time_index[t] as f64;
    Ok(layout.a(params, i) * (-layout.lambda(params, i) * tm).exp()
        + layout.theta(params, 1, i) * l1
        + layout.theta(params, 2, i) * l2
        + layout.theta(params, 3, i) * dt
        + layout.theta(params, 4, i) * dt2)
}

fn check_dims(params: &ParameterVector, layout: &Layout, data: &AlignedDataset) -> Result<()> {
    if params.dim() != layout.dim() {
        return Err(Error::DimensionMismatch(format!(
            "parameter vector has {} entries, variant {} with K={} needs {}",
            params.dim(),
            layout.variant.kind.as_str(),
            layout.variant.k,
            layout.dim()
        )));
    }
    if data.k() != layout.variant.k {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} countries, variant declares {}",
            data.k(),
            layout.variant.k
        )));
    }
    Ok(())
}

/// Sum of Gaussian log-densities over all complete (country, time) cells.
///
/// The decay factor exp(-lambda * t) is computed incrementally along each
/// country's row, so summing row partitions reproduces the total exactly.
pub fn log_likelihood(
    params: &ParameterVector,
    data: &AlignedDataset,
    variant: ModelVariant,
) -> Result<f64> {
    let layout = variant.layout();
    check_dims(params, &layout, data)?;
    let mut total = 0.0;
    for i in 0..data.k() {
        total += row_log_likelihood(params, &layout, data, i)?;
    }
    Ok(total)
}

fn row_log_likelihood(
    params: &ParameterVector,
    layout: &Layout,
    data: &AlignedDataset,
    i: usize,
) -> Result<f64> {
    let sigma2 = layout.sigma2(params, i);
    if sigma2 < SIGMA2_MIN {
        return Err(Error::NonPositiveVariance(sigma2));
    }
    let a = layout.a(params, i);
    let lambda = layout.lambda(params, i);
    let th1 = layout.theta(params, 1, i);
    let th2 = layout.theta(params, 2, i);
    let th3 = layout.theta(params, 3, i);
    let th4 = layout.theta(params, 4, i);
    let neg_half_ln = -0.5 * (LN_2PI + sigma2.ln());
    let inv_2s = 0.5 / sigma2;
    let decay_step = (-lambda).exp();
    let mut decay = (-lambda * data.time_index[0] as f64).exp();
    let mut total = 0.0;
    for t in 0..data.t_len() {
        debug_assert!(t == 0 || data.time_index[t] == data.time_index[t - 1] + 1);
        if data.cell_complete(i, t) {
            let mu = a * decay
                + th1 * data.raw_lag1(i, t)
                + th2 * data.raw_lag2(i, t)
                + th3 * data.raw_dt(i, t)
                + th4 * data.raw_dt2(i, t);
            let r = data.raw_y(i, t) - mu;
            total += neg_half_ln - r * r * inv_2s;
        }
        decay *= decay_step;
    }
    Ok(total)
}

/// Full log prior of the variant; -inf outside the support.
pub fn log_prior(params: &ParameterVector, variant: ModelVariant) -> f64 {
    let layout = variant.layout();
    if params.dim() != layout.dim() {
        return f64::NEG_INFINITY;
    }
    let kind = variant.kind;
    let k = variant.k;
    let v = &params.values;
    let mut lp = 0.0;

    if kind.hier_intercepts() {
        let h = layout.intercept_hyper_off.unwrap();
        let (m_a, s_a, m_l, s_l) = (v[h], v[h + 1], v[h + 2], v[h + 3]);
        lp += ln_uniform_pdf(m_a, A_RANGE.0, A_RANGE.1);
        lp += ln_gamma_pdf(s_a, HYPER_GAMMA_SHAPE, HYPER_GAMMA_RATE);
        lp += ln_uniform_pdf(m_l, LAMBDA_RANGE.0, LAMBDA_RANGE.1);
        lp += ln_gamma_pdf(s_l, HYPER_GAMMA_SHAPE, HYPER_GAMMA_RATE);
        for i in 0..k {
            lp += ln_trunc_normal_pdf(v[layout.a_off + i], m_a, s_a, A_RANGE.0, A_RANGE.1);
            lp += ln_trunc_normal_pdf(
                v[layout.lambda_off + i],
                m_l,
                s_l,
                LAMBDA_RANGE.0,
                LAMBDA_RANGE.1,
            );
        }
    } else if kind.per_country_intercepts() {
        for i in 0..k {
            lp += ln_uniform_pdf(v[layout.a_off + i], A_RANGE.0, A_RANGE.1);
            lp += ln_uniform_pdf(v[layout.lambda_off + i], LAMBDA_RANGE.0, LAMBDA_RANGE.1);
        }
    } else {
        lp += ln_uniform_pdf(v[layout.a_off], A_RANGE.0, A_RANGE.1);
        lp += ln_uniform_pdf(v[layout.lambda_off], LAMBDA_RANGE.0, LAMBDA_RANGE.1);
    }

    for j in 1..=4usize {
        if kind.per_country_thetas() {
            let base = layout.theta_off + (j - 1) * (k + 2);
            let m = v[base + k];
            let s = v[base + k + 1];
            lp += ln_normal_pdf(m, 0.0, COEF_HYPER_MEAN_SD);
            lp += ln_gamma_pdf(s, HYPER_GAMMA_SHAPE, HYPER_GAMMA_RATE);
            for i in 0..k {
                lp += ln_normal_pdf(v[base + i], m, s);
            }
        } else {
            lp += ln_normal_pdf(v[layout.theta_off + (j - 1)], 0.0, THETA_PRIOR_SD[j - 1]);
        }
    }

    if kind.hier_variances() {
        let h = layout.var_hyper_off.unwrap();
        let (alpha, beta) = (v[h], v[h + 1]);
        lp += ln_gamma_pdf(alpha, HYPER_GAMMA_SHAPE, HYPER_GAMMA_RATE);
        lp += ln_gamma_pdf(beta, HYPER_GAMMA_SHAPE, HYPER_GAMMA_RATE);
        if !(alpha > 0.0 && beta > 0.0) {
            return f64::NEG_INFINITY;
        }
        for i in 0..k {
            lp += ln_inv_gamma_pdf(v[layout.sigma2_off + i], alpha, beta);
        }
    } else {
        let n = if kind.per_country_variances() { k } else { 1 };
        for i in 0..n {
            lp += ln_inv_gamma_pdf(
                v[layout.sigma2_off + i],
                SIGMA2_PRIOR_SHAPE,
                SIGMA2_PRIOR_RATE,
            );
        }
    }

    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

/// Draw from the full prior: hyperparameters first, then conditionals.
/// The draw always lies inside the support.
pub fn sample_prior<R: Rng>(variant: ModelVariant, rng: &mut R) -> ParameterVector {
    let layout = variant.layout();
    let kind = variant.kind;
    let k = variant.k;
    let mut v = vec![0.0; layout.dim()];
    let gamma21 = rand_distr::Gamma::new(HYPER_GAMMA_SHAPE, 1.0 / HYPER_GAMMA_RATE).unwrap();

    if kind.hier_intercepts() {
        let m_a = rng.gen::<f64>() * (A_RANGE.1 - A_RANGE.0) + A_RANGE.0;
        let s_a = gamma21.sample(rng);
        let m_l = rng.gen::<f64>() * (LAMBDA_RANGE.1 - LAMBDA_RANGE.0) + LAMBDA_RANGE.0;
        let s_l = gamma21.sample(rng);
        let h = layout.intercept_hyper_off.unwrap();
        v[h] = m_a;
        v[h + 1] = s_a;
        v[h + 2] = m_l;
        v[h + 3] = s_l;
        for i in 0..k {
            v[layout.a_off + i] = sample_trunc_normal(rng, m_a, s_a, A_RANGE.0, A_RANGE.1);
            v[layout.lambda_off + i] =
                sample_trunc_normal(rng, m_l, s_l, LAMBDA_RANGE.0, LAMBDA_RANGE.1);
        }
    } else {
        let n = if kind.per_country_intercepts() { k } else { 1 };
        for i in 0..n {
            v[layout.a_off + i] = rng.gen::<f64>() * (A_RANGE.1 - A_RANGE.0) + A_RANGE.0;
            v[layout.lambda_off + i] =
                rng.gen::<f64>() * (LAMBDA_RANGE.1 - LAMBDA_RANGE.0) + LAMBDA_RANGE.0;
        }
    }

    for j in 1..=4usize {
        if kind.per_country_thetas() {
            let base = layout.theta_off + (j - 1) * (k + 2);
            let m = rand_distr::Normal::new(0.0, COEF_HYPER_MEAN_SD)
                .unwrap()
                .sample(rng);
            let s = gamma21.sample(rng);
            v[base + k] = m;
            v[base + k + 1] = s;
            let cond = rand_distr::Normal::new(m, s).unwrap();
            for i in 0..k {
                v[base + i] = cond.sample(rng);
            }
        } else {
            v[layout.theta_off + (j - 1)] = rand_distr::Normal::new(0.0, THETA_PRIOR_SD[j - 1])
                .unwrap()
                .sample(rng);
        }
    }

    if kind.hier_variances() {
        let alpha = gamma21.sample(rng);
        let beta = gamma21.sample(rng);
        let h = layout.var_hyper_off.unwrap();
        v[h] = alpha;
        v[h + 1] = beta;
        // X ~ InvGamma(alpha, beta) via X = 1 / G with G ~ Gamma(alpha, rate beta).
        let g = rand_distr::Gamma::new(alpha, 1.0 / beta).unwrap();
        for i in 0..k {
            v[layout.sigma2_off + i] = 1.0 / g.sample(rng);
        }
    } else {
        let n = if kind.per_country_variances() { k } else { 1 };
        let g = rand_distr::Gamma::new(SIGMA2_PRIOR_SHAPE, 1.0 / SIGMA2_PRIOR_RATE).unwrap();
        for i in 0..n {
            v[layout.sigma2_off + i] = 1.0 / g.sample(rng);
        }
    }

    ParameterVector::new(v)
}

/// Forward-simulate a dataset from known parameters. The first two
/// log-return years are drawn N(0, sigma_i^2) as initial lags; the climate
/// panel must cover at least K countries and T + 2 difference periods.
pub fn simulate_dataset<R: Rng>(
    params: &ParameterVector,
    variant: ModelVariant,
    k: usize,
    t_len: usize,
    climate: &ClimatePanel,
    rng: &mut R,
) -> Result<AlignedDataset> {
    if k != variant.k {
        return Err(Error::DimensionMismatch(format!(
            "simulate_dataset: K={k} but variant declares {}",
            variant.k
        )));
    }
    let layout = variant.layout();
    if params.dim() != layout.dim() {
        return Err(Error::DimensionMismatch(format!(
            "parameter vector has {} entries, variant needs {}",
            params.dim(),
            layout.dim()
        )));
    }
    if climate.countries.len() < k || climate.delta_t.cols() < t_len + 2 {
        return Err(Error::DimensionMismatch(format!(
            "climate panel {}x{} cannot cover K={k}, T={t_len}+2 periods",
            climate.countries.len(),
            climate.delta_t.cols()
        )));
    }
    let mut y = Mat::missing(k, t_len);
    let mut y_lag1 = Mat::missing(k, t_len);
    let mut y_lag2 = Mat::missing(k, t_len);
    let mut dt = Mat::missing(k, t_len);
    let mut dt2 = Mat::missing(k, t_len);
    for i in 0..k {
        let sigma2 = layout.sigma2(params, i);
        if !(sigma2 > 0.0) {
            return Err(Error::NonPositiveVariance(sigma2));
        }
        let sigma = sigma2.sqrt();
        let a = layout.a(params, i);
        let lambda = layout.lambda(params, i);
        let noise = rand_distr::Normal::new(0.0, sigma).expect("positive sd");
        // r[0], r[1] are the initial lags (time indices 1 and 2).
        let mut lag2 = noise.sample(rng);
        let mut lag1 = noise.sample(rng);
        for t in 0..t_len {
            let tm = (t + 3) as f64;
            let d = climate
                .delta_t
                .get(i, t + 2)
                .ok_or(Error::MissingRegressor { country: i, t })?;
            let mu = a * (-lambda * tm).exp()
                + layout.theta(params, 1, i) * lag1
                + layout.theta(params, 2, i) * lag2
                + layout.theta(params, 3, i) * d
                + layout.theta(params, 4, i) * d * d;
            let val = mu + noise.sample(rng);
            y.set(i, t, val);
            y_lag1.set(i, t, lag1);
            y_lag2.set(i, t, lag2);
            dt.set(i, t, d);
            dt2.set(i, t, d * d);
            lag2 = lag1;
            lag1 = val;
        }
    }
    Ok(AlignedDataset {
        countries: climate.countries[..k].to_vec(),
        years_effective: climate.years[3..3 + t_len].to_vec(),
        time_index: (3..3 + t_len as u32).collect(),
        y,
        y_lag1,
        y_lag2,
        dt,
        dt2,
    })
}
