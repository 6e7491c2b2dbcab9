//! Likelihood-annealed sequential Monte Carlo sampler.
//!
//! The sampler starts from prior draws at tempering exponent `gamma = 0` and
//! anneals toward the full posterior at `gamma = 1`. Each stage:
//!
//! 1. rejuvenates the particle set (systematic resample, proposal-scale
//!    tuning, Metropolis-Hastings moves at the current exponent) when the
//!    effective sample size has dropped below the adaptive-tempering target;
//! 2. selects the next exponent by bisection so that reweighting keeps the
//!    effective sample size at the target fraction of the particle count;
//! 3. reweights, accumulating the log-evidence increment
//!    `log Σ W_i · exp(Δγ · loglik_i)`;
//! 4. applies the classic conditional resample-move block when the effective
//!    sample size falls below `ess_threshold_fraction · N` after the
//!    reweight (with the default settings the adaptive step keeps the system
//!    above this threshold, so the block is a safety net).
//!
//! The accumulated increments telescope into the marginal-likelihood
//! estimate `log Z`.
//!
//! # Determinism
//!
//! Every random stream is derived from the single configured seed: one
//! master stream for synchronization points (resampling) plus one stream per
//! particle slot. Parallel sections only ever touch per-slot state, so runs
//! are bit-identical regardless of thread count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{self, log_likelihood, log_prior, sample_prior, ModelVariant, ParameterVector};
use crate::panel::AlignedDataset;
use crate::seedtree;

/// Hard cap on annealing stages; reaching it means the temperature ladder
/// failed to make progress (numerically degenerate likelihood).
const MAX_STAGES: u32 = 10_000;

/// Reference random-walk scale multiplier, the classic optimal-scaling
/// constant for Gaussian targets.
const REFERENCE_SCALE_NUMERATOR: f64 = 2.38;

/// Jitter added to the covariance diagonal when the particle covariance is
/// not positive-definite.
const COV_JITTER: f64 = 1e-10;

/// Tolerance on `|sum(weights) - 1|` accepted by [`ess`].
const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Absolute bisection tolerance on the tempering exponent.
const GAMMA_TOL: f64 = 1e-6;

/// A distribution the sampler can target: prior sampling plus log-prior and
/// log-likelihood evaluation. Implemented by the crop-yield model and by the
/// synthetic targets used for validation.
pub trait Target: Sync {
    /// Number of parameters.
    fn dim(&self) -> usize;
    /// Column names for posterior output, in parameter order.
    fn names(&self) -> Vec<String>;
    /// Draw one parameter vector from the prior.
    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> ParameterVector;
    /// Log prior density (`-inf` outside the support).
    fn log_prior(&self, x: &ParameterVector) -> f64;
    /// Log likelihood of the data at `x`.
    fn log_likelihood(&self, x: &ParameterVector) -> Result<f64>;
}

/// The hierarchical growth model as an SMC target.
pub struct ModelTarget<'a> {
    data: &'a AlignedDataset,
    variant: ModelVariant,
}

impl<'a> ModelTarget<'a> {
    pub fn new(data: &'a AlignedDataset, variant: ModelVariant) -> Self {
        Self { data, variant }
    }
}

impl Target for ModelTarget<'_> {
    fn dim(&self) -> usize {
        model::param_dimension(self.variant)
    }

    fn names(&self) -> Vec<String> {
        self.variant.layout().param_names(&self.data.countries)
    }

    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> ParameterVector {
        sample_prior(self.variant, rng)
    }

    fn log_prior(&self, x: &ParameterVector) -> f64 {
        log_prior(x, self.variant)
    }

    fn log_likelihood(&self, x: &ParameterVector) -> Result<f64> {
        log_likelihood(x, self.data, self.variant)
    }
}

/// Sampler settings.
#[derive(Debug, Clone)]
pub struct SmcConfig {
    /// Particle count `N` (at least 2).
    pub n_particles: usize,
    /// Conditional resample-move threshold `α`: the block runs when the
    /// post-reweight effective sample size drops below `α·N`.
    pub ess_threshold_fraction: f64,
    /// Adaptive-tempering target: the next exponent keeps the effective
    /// sample size at this fraction of `N`.
    pub ess_target_fraction: f64,
    /// Candidate multipliers on the reference proposal scale `2.38/√d`.
    pub scale_candidates: Vec<f64>,
    /// Fraction of particles whose cumulative expected squared jump must
    /// exceed the stage's reference distance before the move loop stops.
    pub esjd_target_fraction: f64,
    /// Cap on Metropolis-Hastings sweeps per move phase.
    pub max_move_iters: u32,
    /// Master seed; all randomness derives from it.
    pub seed: u64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            n_particles: 2000,
            ess_threshold_fraction: 0.5,
            ess_target_fraction: 0.8,
            scale_candidates: vec![0.125, 0.25, 0.5, 1.0, 2.0],
            esjd_target_fraction: 0.5,
            max_move_iters: 30,
            seed: 0,
        }
    }
}

impl SmcConfig {
    /// Validate field ranges, returning a configuration error on violation.
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::Config(format!(
                "n_particles must be at least 2, got {}",
                self.n_particles
            )));
        }
        for (name, v) in [
            ("ess_threshold_fraction", self.ess_threshold_fraction),
            ("ess_target_fraction", self.ess_target_fraction),
            ("esjd_target_fraction", self.esjd_target_fraction),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if self.ess_target_fraction >= 1.0 {
            return Err(Error::Config(
                "ess_target_fraction must lie strictly below 1".into(),
            ));
        }
        if self.scale_candidates.is_empty() {
            return Err(Error::Config("scale_candidates must be non-empty".into()));
        }
        if self
            .scale_candidates
            .iter()
            .any(|&c| !(c > 0.0) || !c.is_finite())
        {
            return Err(Error::Config(
                "scale_candidates must all be positive and finite".into(),
            ));
        }
        if self.max_move_iters == 0 {
            return Err(Error::Config("max_move_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Weighted particle population at one tempering stage.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    /// Parameter vectors, one per slot.
    pub particles: Vec<ParameterVector>,
    /// Normalized log-weights (`logsumexp = 0`).
    pub log_weights: Vec<f64>,
    /// Current tempering exponent in `[0, 1]`.
    pub gamma: f64,
    /// Running sum of log-evidence increments.
    pub log_evidence_acc: f64,
    /// Stage counter.
    pub stage: u32,
    /// Cached log-likelihood per particle.
    log_liks: Vec<f64>,
    /// Cached log-prior per particle.
    log_priors: Vec<f64>,
    /// Per-slot random streams; a slot's stream survives resampling so that
    /// duplicated particles evolve independently afterwards.
    streams: Vec<ChaCha8Rng>,
    /// Master stream for synchronization-point randomness (resampling).
    master: ChaCha8Rng,
}

impl ParticleSystem {
    /// Initialize from prior draws at `gamma = 0` with uniform weights.
    pub fn init<T: Target>(target: &T, config: &SmcConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_particles;
        let smc_seed = seedtree::child_seed(config.seed, "smc");
        let mut streams: Vec<ChaCha8Rng> = (0..n)
            .map(|i| seedtree::indexed_stream(smc_seed, "particle", i as u64))
            .collect();
        let master = seedtree::stream(seedtree::child_seed(smc_seed, "sync"));

        let mut particles: Vec<ParameterVector> = Vec::with_capacity(n);
        for stream in streams.iter_mut() {
            particles.push(target.sample_prior(stream));
        }
        let log_priors: Vec<f64> = particles.iter().map(|p| target.log_prior(p)).collect();
        let log_liks: Vec<f64> = particles
            .par_iter()
            .map(|p| target.log_likelihood(p))
            .collect::<Result<Vec<f64>>>()?;
        let lw = vec![-(n as f64).ln(); n];
        Ok(Self {
            particles,
            log_weights: lw,
            gamma: 0.0,
            log_evidence_acc: 0.0,
            stage: 0,
            log_liks,
            log_priors,
            streams,
            master,
        })
    }

    /// Number of particles.
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Normalized linear weights.
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|&lw| lw.exp()).collect()
    }

    /// Effective sample size of the current weights.
    pub fn current_ess(&self) -> f64 {
        ess_from_log_weights(&self.log_weights)
    }

    /// Cached log-likelihood values.
    pub fn log_likelihoods(&self) -> &[f64] {
        &self.log_liks
    }
}

/// One diagnostics row per annealing stage.
#[derive(Debug, Clone)]
pub struct StageRow {
    /// 1-based stage counter.
    pub stage: u32,
    /// Exponent after this stage's temperature step.
    pub gamma: f64,
    /// Effective sample size immediately after the reweight.
    pub ess: f64,
    /// Proposal scale chosen by the tuner, `NaN` when no move phase ran.
    pub scale: f64,
    /// Metropolis-Hastings sweeps performed (0 when no move phase ran).
    pub r_t: u32,
    /// Acceptance rate across the move phase, `NaN` when no move phase ran.
    pub acc_rate: f64,
    /// Log-evidence increment contributed by this stage.
    pub log_evidence_increment: f64,
}

/// Full per-stage trace of a run.
pub type StageTrace = Vec<StageRow>;

/// Result bundle of a sampler run.
#[derive(Debug, Clone)]
pub struct SmcOutput {
    /// Terminal particle system (`gamma = 1`, weighted posterior sample).
    pub system: ParticleSystem,
    /// Marginal-likelihood estimate `log Z`.
    pub log_evidence: f64,
    /// Per-stage diagnostics.
    pub trace: StageTrace,
    /// Posterior column names, in particle coordinate order.
    pub names: Vec<String>,
}

/// Log of the sum of exponentials, tolerant of `-inf` entries.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Effective sample size `1 / Σ w_i²` of a normalized weight vector.
///
/// # Examples
///
/// ```
/// let w = vec![0.5, 0.25, 0.25];
/// let e = graincast::smc::ess(&w).unwrap();
/// assert!((e - 8.0 / 3.0).abs() < 1e-12);
/// ```
pub fn ess(weights: &[f64]) -> Result<f64> {
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::UnnormalizedWeights(sum));
    }
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    Ok(1.0 / sq)
}

/// Effective sample size from normalized log-weights.
fn ess_from_log_weights(log_weights: &[f64]) -> f64 {
    let doubled: Vec<f64> = log_weights.iter().map(|&lw| 2.0 * lw).collect();
    (-logsumexp(&doubled)).exp()
}

/// Effective sample size after scaling current weights by
/// `exp(delta · loglik)`, without mutating anything.
fn ess_after_step(log_weights: &[f64], log_liks: &[f64], delta: f64) -> f64 {
    let lw: Vec<f64> = log_weights
        .iter()
        .zip(log_liks)
        .map(|(&w, &ll)| w + delta * ll)
        .collect();
    let norm = logsumexp(&lw);
    if norm == f64::NEG_INFINITY {
        return 0.0;
    }
    let doubled: Vec<f64> = lw.iter().map(|&x| 2.0 * (x - norm)).collect();
    (-logsumexp(&doubled)).exp()
}

/// Largest exponent `γ ∈ (gamma, 1]` whose reweighting keeps the effective
/// sample size at or above `target_ess`, located by bisection to absolute
/// tolerance `1e-6`; returns exactly 1 when the full step satisfies the
/// target. The returned exponent sits on the far side of the tolerance
/// bracket, so the realized effective sample size can undershoot the target
/// by the bracket slack.
pub fn next_temperature(log_weights: &[f64], log_liks: &[f64], gamma: f64, target_ess: f64) -> f64 {
    debug_assert!(gamma < 1.0);
    if ess_after_step(log_weights, log_liks, 1.0 - gamma) >= target_ess {
        return 1.0;
    }
    let mut lo = gamma;
    let mut hi = 1.0;
    while hi - lo > GAMMA_TOL {
        let mid = 0.5 * (lo + hi);
        if ess_after_step(log_weights, log_liks, mid - gamma) >= target_ess {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Scale weights by `exp((gamma_next - gamma) · loglik)`, accumulate the
/// log-evidence increment `log Σ W_i·exp(Δγ·loglik_i)`, renormalize, and
/// advance the system's exponent. Returns the increment.
pub fn reweight(system: &mut ParticleSystem, gamma_next: f64) -> Result<f64> {
    let delta = gamma_next - system.gamma;
    debug_assert!(delta >= 0.0, "tempering exponent must not decrease");
    if delta == 0.0 {
        return Ok(0.0);
    }
    for (lw, ll) in system.log_weights.iter_mut().zip(&system.log_liks) {
        *lw += delta * ll;
    }
    let increment = logsumexp(&system.log_weights);
    if increment == f64::NEG_INFINITY {
        return Err(Error::AllWeightsZero);
    }
    for lw in system.log_weights.iter_mut() {
        *lw -= increment;
    }
    system.log_evidence_acc += increment;
    system.gamma = gamma_next;
    Ok(increment)
}

/// Ancestor indices for systematic resampling with one uniform draw:
/// offspring counts stay within 1 of `N·w_i` and expected counts equal
/// `N·w_i` exactly.
pub fn systematic_indices(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let mut ancestors = Vec::with_capacity(n);
    let mut j = 0usize;
    let total: f64 = weights.iter().sum();
    let mut upper = weights[0] / total;
    for k in 0..n {
        let position = (k as f64 + u) / n as f64;
        while position > upper && j + 1 < n {
            j += 1;
            upper += weights[j] / total;
        }
        ancestors.push(j);
    }
    ancestors
}

/// Systematic resampling: replaces particles by offspring with uniform
/// weights. Per-slot random streams stay with their slot so duplicates
/// evolve independently in later moves.
pub fn resample_systematic(system: &mut ParticleSystem) {
    let n = system.len();
    let u: f64 = system.master.gen::<f64>();
    let w = system.weights();
    let ancestors = systematic_indices(&w, u);
    let new_particles: Vec<ParameterVector> = ancestors
        .iter()
        .map(|&a| system.particles[a].clone())
        .collect();
    let new_ll: Vec<f64> = ancestors.iter().map(|&a| system.log_liks[a]).collect();
    let new_lp: Vec<f64> = ancestors.iter().map(|&a| system.log_priors[a]).collect();
    system.particles = new_particles;
    system.log_liks = new_ll;
    system.log_priors = new_lp;
    system.log_weights = vec![-(n as f64).ln(); n];
}

/// Weighted mean and covariance of the particle cloud.
fn weighted_mean_cov(system: &ParticleSystem) -> (DVector<f64>, DMatrix<f64>) {
    let n = system.len();
    let d = system.particles[0].values.len();
    let w = system.weights();
    let mut mean = DVector::zeros(d);
    for (p, &wi) in system.particles.iter().zip(&w) {
        for j in 0..d {
            mean[j] += wi * p.values[j];
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    let mut centered = DVector::zeros(d);
    for (p, &wi) in system.particles.iter().zip(&w) {
        for j in 0..d {
            centered[j] = p.values[j] - mean[j];
        }
        // Rank-one update of the upper triangle.
        for r in 0..d {
            let wr = wi * centered[r];
            for c in r..d {
                cov[(r, c)] += wr * centered[c];
            }
        }
    }
    for r in 0..d {
        for c in 0..r {
            cov[(r, c)] = cov[(c, r)];
        }
    }
    let _ = n;
    (mean, cov)
}

/// Lower Cholesky factor of the particle covariance; falls back to the
/// jittered diagonal when the covariance is not positive-definite.
fn cholesky_or_diagonal(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let d = cov.nrows();
    match nalgebra::Cholesky::new(cov.clone()) {
        Some(ch) => ch.l(),
        None => {
            let mut l = DMatrix::zeros(d, d);
            for j in 0..d {
                l[(j, j)] = (cov[(j, j)] + COV_JITTER).sqrt();
            }
            l
        }
    }
}

/// Squared Mahalanobis norm of `v` under the covariance with lower Cholesky
/// factor `l`.
fn mahalanobis_sq(l: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    match l.clone().solve_lower_triangular(v) {
        Some(y) => y.norm_squared(),
        None => f64::INFINITY,
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Tempered log-target `γ·loglik + logprior` evaluated from cached parts.
#[inline]
fn log_target(gamma: f64, ll: f64, lp: f64) -> f64 {
    if lp == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        gamma * ll + lp
    }
}

/// Evaluate a proposal: log-prior short-circuits the likelihood outside the
/// support, and a degenerate-variance likelihood rejects the point instead
/// of aborting the run.
fn evaluate_proposal<T: Target>(target: &T, x: &ParameterVector) -> Result<(f64, f64)> {
    let lp = target.log_prior(x);
    if lp == f64::NEG_INFINITY {
        return Ok((f64::NEG_INFINITY, f64::NEG_INFINITY));
    }
    match target.log_likelihood(x) {
        Ok(ll) => Ok((ll, lp)),
        Err(Error::NonPositiveVariance(_)) => Ok((f64::NEG_INFINITY, lp)),
        Err(e) => Err(e),
    }
}

/// Proposal-scale statistics for one tuning pass.
#[derive(Debug, Clone)]
pub struct ScaleTable {
    /// Candidate scales actually proposed (multiplier × reference scale).
    pub scales: Vec<f64>,
    /// Median expected squared jump distance per candidate.
    pub median_esjd: Vec<f64>,
}

/// Pick the proposal scale that maximizes the median expected squared jump
/// distance: for each candidate `h`, propose one trial move per particle
/// from `N(θ, h²Σ̂)` and score it by acceptance probability times squared
/// Mahalanobis jump length. Trial moves are never committed.
pub fn tune_scale<T: Target>(
    system: &mut ParticleSystem,
    target: &T,
    config: &SmcConfig,
) -> Result<(f64, ScaleTable)> {
    let d = target.dim();
    let h_ref = REFERENCE_SCALE_NUMERATOR / (d as f64).sqrt();
    let scales: Vec<f64> = config.scale_candidates.iter().map(|c| c * h_ref).collect();
    let (_, cov) = weighted_mean_cov(system);
    let l = cholesky_or_diagonal(&cov);
    let gamma = system.gamma;

    // Per particle, per candidate: acceptance probability × h²·|z|². The
    // Mahalanobis length of the jump h·L·z under Σ̂ is h²·|z|² by
    // construction, so no solve is needed.
    let per_particle: Vec<Vec<f64>> = system
        .particles
        .par_iter()
        .zip(system.streams.par_iter_mut())
        .zip(system.log_liks.par_iter().zip(system.log_priors.par_iter()))
        .map(|((x, stream), (&ll, &lp))| -> Result<Vec<f64>> {
            let mut esjd = Vec::with_capacity(scales.len());
            let current = log_target(gamma, ll, lp);
            for &h in &scales {
                let z: Vec<f64> = (0..d).map(|_| stream.sample(StandardNormal)).collect();
                let z_sq: f64 = z.iter().map(|zi| zi * zi).sum();
                let zv = DVector::from_column_slice(&z);
                let step = &l * zv * h;
                let mut prop = x.clone();
                for j in 0..d {
                    prop.values[j] += step[j];
                }
                let (pll, plp) = evaluate_proposal(target, &prop)?;
                let candidate = log_target(gamma, pll, plp);
                let accept_prob = if candidate == f64::NEG_INFINITY {
                    0.0
                } else {
                    (candidate - current).exp().min(1.0)
                };
                esjd.push(accept_prob * h * h * z_sq);
            }
            Ok(esjd)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;

    let mut median_esjd = Vec::with_capacity(scales.len());
    for c in 0..scales.len() {
        let mut col: Vec<f64> = per_particle.iter().map(|row| row[c]).collect();
        median_esjd.push(median(&mut col));
    }
    let best = median_esjd
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok((
        scales[best],
        ScaleTable {
            scales,
            median_esjd,
        },
    ))
}

/// Metropolis-Hastings move phase at the system's current exponent with a
/// symmetric Gaussian random-walk proposal of scale `h`.
///
/// Sweeps repeat until the configured fraction of particles has accumulated
/// expected squared jump distance beyond the stage's reference distance (the
/// median squared Mahalanobis distance of particles from their mean), or the
/// sweep cap is reached; at least one sweep always runs. Returns the sweep
/// count and overall acceptance rate.
pub fn move_particles<T: Target>(
    system: &mut ParticleSystem,
    h: f64,
    target: &T,
    config: &SmcConfig,
) -> Result<(u32, f64)> {
    let n = system.len();
    let d = target.dim();
    let gamma = system.gamma;
    let (mean, cov) = weighted_mean_cov(system);
    let l = cholesky_or_diagonal(&cov);

    // Reference jump distance: median squared Mahalanobis distance of the
    // particles from their mean.
    let mut dists: Vec<f64> = system
        .particles
        .iter()
        .map(|p| {
            let v = DVector::from_iterator(d, p.values.iter().copied()) - &mean;
            mahalanobis_sq(&l, &v)
        })
        .collect();
    let d_desired = median(&mut dists);

    let mut cumulative_esjd = vec![0.0_f64; n];
    let mut accepted_total = 0u64;
    let mut sweeps = 0u32;

    while sweeps < config.max_move_iters {
        sweeps += 1;
        let stats: Vec<(bool, f64)> = system
            .particles
            .par_iter_mut()
            .zip(system.streams.par_iter_mut())
            .zip(
                system
                    .log_liks
                    .par_iter_mut()
                    .zip(system.log_priors.par_iter_mut()),
            )
            .map(|((x, stream), (ll, lp))| -> Result<(bool, f64)> {
                let z: Vec<f64> = (0..d).map(|_| stream.sample(StandardNormal)).collect();
                let z_sq: f64 = z.iter().map(|zi| zi * zi).sum();
                let u: f64 = stream.gen();
                let zv = DVector::from_column_slice(&z);
                let step = &l * zv * h;
                let mut prop = x.clone();
                for j in 0..d {
                    prop.values[j] += step[j];
                }
                let (pll, plp) = evaluate_proposal(target, &prop)?;
                let current = log_target(gamma, *ll, *lp);
                let candidate = log_target(gamma, pll, plp);
                let log_alpha = candidate - current;
                let accept_prob = if candidate == f64::NEG_INFINITY {
                    0.0
                } else {
                    log_alpha.exp().min(1.0)
                };
                let esjd = accept_prob * h * h * z_sq;
                let accept = candidate > f64::NEG_INFINITY && u.ln() < log_alpha;
                if accept {
                    *x = prop;
                    *ll = pll;
                    *lp = plp;
                }
                Ok((accept, esjd))
            })
            .collect::<Result<Vec<(bool, f64)>>>()?;

        let mut satisfied = 0usize;
        for (i, (accept, esjd)) in stats.iter().enumerate() {
            if *accept {
                accepted_total += 1;
            }
            cumulative_esjd[i] += esjd;
            if cumulative_esjd[i] > d_desired {
                satisfied += 1;
            }
        }
        if (satisfied as f64) >= config.esjd_target_fraction * n as f64 {
            break;
        }
    }
    let acc_rate = accepted_total as f64 / (sweeps as u64 * n as u64) as f64;
    Ok((sweeps, acc_rate))
}

/// Run the annealed sampler against an arbitrary target.
pub fn run_smc_target<T: Target>(target: &T, config: &SmcConfig) -> Result<SmcOutput> {
    let mut system = ParticleSystem::init(target, config)?;
    let n = config.n_particles as f64;
    let mut trace: StageTrace = Vec::new();

    while system.gamma < 1.0 {
        if system.stage >= MAX_STAGES {
            return Err(Error::Numerical(format!(
                "annealing failed to reach gamma = 1 within {MAX_STAGES} stages \
                 (gamma = {})",
                system.gamma
            )));
        }
        let mut scale = f64::NAN;
        let mut r_t = 0u32;
        let mut acc_rate = f64::NAN;

        // Rejuvenate before the temperature search whenever weight
        // degeneracy would stall the adaptive step.
        if system.current_ess() < config.ess_target_fraction * n {
            resample_systematic(&mut system);
            let (h, _) = tune_scale(&mut system, target, config)?;
            let (r, a) = move_particles(&mut system, h, target, config)?;
            scale = h;
            r_t = r;
            acc_rate = a;
        }

        let gamma_next = next_temperature(
            &system.log_weights,
            &system.log_liks,
            system.gamma,
            config.ess_target_fraction * n,
        );
        let increment = reweight(&mut system, gamma_next)?;
        let ess_after = system.current_ess();

        // Classic conditional resample-move block.
        if ess_after < config.ess_threshold_fraction * n {
            resample_systematic(&mut system);
            let (h, _) = tune_scale(&mut system, target, config)?;
            let (r, a) = move_particles(&mut system, h, target, config)?;
            scale = h;
            r_t = r;
            acc_rate = a;
        }

        system.stage += 1;
        trace.push(StageRow {
            stage: system.stage,
            gamma: system.gamma,
            ess: ess_after,
            scale,
            r_t,
            acc_rate,
            log_evidence_increment: increment,
        });
    }

    Ok(SmcOutput {
        log_evidence: system.log_evidence_acc,
        names: target.names(),
        system,
        trace,
    })
}

/// Fit one model variant to a dataset: weighted posterior particles, the
/// log-evidence estimate, and the per-stage trace.
pub fn run_smc(
    data: &AlignedDataset,
    variant: ModelVariant,
    config: &SmcConfig,
) -> Result<SmcOutput> {
    if variant.k != data.k() {
        return Err(Error::DimensionMismatch(format!(
            "variant is sized for {} countries but the dataset has {}",
            variant.k,
            data.k()
        )));
    }
    let target = ModelTarget::new(data, variant);
    run_smc_target(&target, config)
}

/// Write the per-stage diagnostics trace as CSV.
pub fn write_diagnostics(trace: &StageTrace, path: &std::path::Path) -> Result<()> {
    use crate::csvio::fmt_f64;
    let mut out = String::from("stage,gamma,ess,scale,r_t,acc_rate,log_evidence_increment\n");
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.stage,
            fmt_f64(row.gamma),
            fmt_f64(row.ess),
            fmt_f64(row.scale),
            row.r_t,
            fmt_f64(row.acc_rate),
            fmt_f64(row.log_evidence_increment),
        ));
    }
    crate::csvio::write_file(path, &out)
}

/// Write weighted posterior particles as CSV: one column per parameter plus
/// a `weight` column.
pub fn write_posterior(output: &SmcOutput, path: &std::path::Path) -> Result<()> {
    use crate::csvio::fmt_f64;
    let mut out = String::new();
    out.push_str(&output.names.join(","));
    out.push_str(",weight\n");
    let w = output.system.weights();
    for (p, wi) in output.system.particles.iter().zip(&w) {
        for v in &p.values {
            out.push_str(&fmt_f64(*v));
            out.push(',');
        }
        out.push_str(&fmt_f64(*wi));
        out.push('\n');
    }
    crate::csvio::write_file(path, &out)
}
