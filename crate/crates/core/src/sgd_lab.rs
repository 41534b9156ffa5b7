//! Synchronous buffered SGD on synthetic objectives.
//!
//! Each step inserts `R` fresh samples into a FIFO buffer of capacity `N`,
//! draws `B` of them uniformly with replacement and takes a plain SGD step.
//! A sample's gradient is the exact gradient plus a staleness bias
//! `kappa * (theta_t - theta_{t_i})` plus noise of magnitude
//! `sigma(t - t_i)` along a direction frozen at creation, so the
//! smoothness, bias and variance assumptions hold by construction.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng as _;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::buffer::{BatchTag, BufferError, RolloutRecord, ShardedReplayBuffer};
use crate::design::{
    eta_cap, eta_validity, optimal_eta, DesignError, DesignParams, EtaValidity, NoiseProfile,
};
use crate::metrics::nearest_rank;
use crate::rng::{mix, streams, Rng, SeedStream};

pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SgdError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("iterate diverged at step {step}")]
    Diverged { step: u64 },
    #[error("sample created at step {creation_step} evaluated at earlier step {step}")]
    Ledger { creation_step: u64, step: u64 },
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticObjective {
    /// `F(theta) = L/2 * |theta|^2`.
    Quadratic { smoothness: f64, dim: usize },
    /// `sum_k u_k^2 / 2 + beta (1 + cos(omega u_k))`, smooth with
    /// `L = 1 + beta omega^2`.
    SeparableNonconvex { dim: usize, beta: f64, omega: f64 },
}

impl SyntheticObjective {
    pub fn dim(&self) -> usize {
        match *self {
            Self::Quadratic { dim, .. } | Self::SeparableNonconvex { dim, .. } => dim,
        }
    }

    pub fn smoothness(&self) -> f64 {
        match *self {
            Self::Quadratic { smoothness, .. } => smoothness,
            Self::SeparableNonconvex { beta, omega, .. } => 1.0 + beta * omega * omega,
        }
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        match *self {
            Self::Quadratic { smoothness, .. } => 0.5 * smoothness * norm_sq(theta),
            Self::SeparableNonconvex { beta, omega, .. } => theta
                .iter()
                .map(|u| 0.5 * u * u + beta * (1.0 + (omega * u).cos()))
                .sum(),
        }
    }

    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        match *self {
            Self::Quadratic { smoothness, .. } => theta.iter().map(|u| smoothness * u).collect(),
            Self::SeparableNonconvex { beta, omega, .. } => theta
                .iter()
                .map(|u| u - beta * omega * (omega * u).sin())
                .collect(),
        }
    }

    fn validate(&self) -> Result<(), SgdError> {
        let ok = match *self {
            Self::Quadratic { smoothness, dim } => {
                smoothness > 0.0 && smoothness.is_finite() && dim > 0
            }
            Self::SeparableNonconvex { dim, beta, omega } => {
                dim > 0 && beta >= 0.0 && beta.is_finite() && omega.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(SgdError::InvalidConfig(format!("bad objective {self:?}")))
        }
    }
}

/// One buffered sample; immutable once created.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub creation_step: u64,
    pub frozen_theta: Vec<f64>,
    pub noise_direction: Vec<f64>,
    pub noise_seed: u64,
}

impl SyntheticSample {
    pub fn draw(creation_step: u64, theta: &[f64], rng: &mut Rng) -> Self {
        Self {
            creation_step,
            frozen_theta: theta.to_vec(),
            noise_direction: random_unit(theta.len(), rng),
            noise_seed: rng.random(),
        }
    }

    /// Unit-variance scalar driving this sample's noise at step `t`.
    pub fn noise_draw(&self, t: u64) -> f64 {
        let mut rng = Rng::seed_from_u64(mix(self.noise_seed, t));
        rng.sample(StandardNormal)
    }
}

fn random_unit(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm_sq(&v).sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `kappa * (theta_t - theta_{t_i})`: magnitude `kappa |delta|` along `delta`.
fn bias(theta_t: &[f64], sample: &SyntheticSample, kappa: f64) -> Vec<f64> {
    theta_t
        .iter()
        .zip(&sample.frozen_theta)
        .map(|(a, b)| kappa * (a - b))
        .collect()
}

/// Gradient estimate from one sample with independent noise.
pub fn synth_gradient(
    objective: &SyntheticObjective,
    theta_t: &[f64],
    sample: &SyntheticSample,
    t: u64,
    kappa: f64,
    profile: &NoiseProfile,
) -> Result<Vec<f64>, SgdError> {
    let age = t
        .checked_sub(sample.creation_step)
        .ok_or(SgdError::Ledger {
            creation_step: sample.creation_step,
            step: t,
        })?;
    let scale = profile.sigma(age) * sample.noise_draw(t);
    let mut g = objective.grad(theta_t);
    for ((gi, bi), ui) in g
        .iter_mut()
        .zip(bias(theta_t, sample, kappa))
        .zip(&sample.noise_direction)
    {
        *gi += bi + scale * ui;
    }
    Ok(g)
}

/// Lower Cholesky factor of a symmetric matrix, `None` if not positive
/// definite.
fn cholesky(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = m[i][i] - s;
                if d <= 1e-12 {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (m[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

/// Mixing matrix `A` for the distinct samples of one batch: the noise of
/// sample `i` is `sum_c A[i][c] * u_c` with `u_c` the frozen directions.
///
/// With `rho_knob > 0` the unit draws are mixed through the Cholesky factor
/// of `M_ij = min(1, rho |t_i - t_j| / N)` (off-diagonals shrunk until
/// positive definite), so `E<eps_i, eps_j> = sigma_i sigma_j M_ij`.
fn noise_mixing(
    samples: &[&SyntheticSample],
    t: u64,
    profile: &NoiseProfile,
    rho_knob: f64,
    capacity: usize,
) -> Vec<Vec<f64>> {
    let k = samples.len();
    let xi: Vec<f64> = samples.iter().map(|s| s.noise_draw(t)).collect();
    let sigma: Vec<f64> = samples
        .iter()
        .map(|s| profile.sigma(t - s.creation_step))
        .collect();

    let mut a = vec![vec![0.0; k]; k];
    if rho_knob == 0.0 || k < 2 {
        for i in 0..k {
            a[i][i] = sigma[i] * xi[i];
        }
        return a;
    }

    let mut m = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            m[i][j] = if i == j {
                1.0
            } else {
                let gap = samples[i].creation_step.abs_diff(samples[j].creation_step) as f64;
                (rho_knob * gap / capacity as f64).min(1.0)
            };
        }
    }
    let l = loop {
        if let Some(l) = cholesky(&m) {
            break l;
        }
        log::debug!("correlation matrix not positive definite; shrinking");
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                if i != j {
                    *v *= 0.9;
                }
            }
        }
    };
    for i in 0..k {
        for c in 0..=i {
            a[i][c] = sigma[i] * l[i][c] * xi[c];
        }
    }
    a
}

#[cfg(test)]
fn batch_noise(
    samples: &[&SyntheticSample],
    t: u64,
    profile: &NoiseProfile,
    rho_knob: f64,
    capacity: usize,
) -> Vec<Vec<f64>> {
    let a = noise_mixing(samples, t, profile, rho_knob, capacity);
    let dim = samples.first().map_or(0, |s| s.noise_direction.len());
    a.iter()
        .map(|row| {
            let mut v = vec![0.0; dim];
            for (w, s) in row.iter().zip(samples) {
                for (vj, uj) in v.iter_mut().zip(&s.noise_direction) {
                    *vj += w * uj;
                }
            }
            v
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncRunConfig {
    pub n: u64,
    pub r: u64,
    pub b: u64,
    pub eta: f64,
    pub steps: u64,
    pub objective: SyntheticObjective,
    pub profile: NoiseProfile,
    pub kappa: f64,
    pub rho_knob: f64,
    /// `|theta_0|`; every coordinate starts at `radius / sqrt(d)`.
    pub theta0_radius: f64,
    pub seed: u64,
}

impl SyncRunConfig {
    pub fn theta0(&self) -> Vec<f64> {
        let d = self.objective.dim();
        vec![self.theta0_radius / (d as f64).sqrt(); d]
    }

    pub fn f0(&self) -> f64 {
        self.objective.value(&self.theta0())
    }

    /// Constants of the run as seen by the convergence bound.
    pub fn design_params(&self, mu: f64) -> DesignParams {
        DesignParams {
            mu,
            rho: self.rho_knob,
            kappa: self.kappa,
            smoothness: self.objective.smoothness(),
            f0: self.f0(),
            profile: self.profile.clone(),
            n: self.n,
            r: self.r,
            b: self.b,
            eta: self.eta,
            steps: self.steps,
        }
    }

    pub fn validate(&self) -> Result<(), SgdError> {
        self.objective.validate()?;
        if self.n == 0 || self.r == 0 || self.b == 0 || self.steps == 0 {
            return Err(SgdError::InvalidConfig(
                "N, R, B and T must be positive".into(),
            ));
        }
        if !self.n.is_multiple_of(self.r) {
            return Err(DesignError::NotDivisible {
                n: self.n,
                r: self.r,
            }
            .into());
        }
        if !(0.0..=1.0).contains(&self.rho_knob) || self.kappa.is_nan() || self.kappa < 0.0 {
            return Err(SgdError::InvalidConfig(
                "need rho in [0, 1] and kappa >= 0".into(),
            ));
        }
        self.profile.validate().map_err(SgdError::InvalidConfig)?;
        if let EtaValidity::Violated(c) = eta_validity(&self.design_params(1.0)) {
            return Err(DesignError::InvalidEta(c).into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyncTrace {
    pub grad_norm_sq: Vec<f64>,
    pub objective: Vec<f64>,
    pub occupancy: Vec<usize>,
    /// `|g_t - grad F(theta_t)|^2` per step.
    pub noise_sq: Vec<f64>,
    /// Evicted sample ids in eviction order.
    pub evictions: Vec<u64>,
    pub mean_grad_norm_sq: f64,
}

impl SyncTrace {
    pub fn mean_noise_sq(&self) -> f64 {
        self.noise_sq.iter().sum::<f64>() / self.noise_sq.len().max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,grad_norm_sq,objective,occupancy")?;
        for (t, ((g, f), o)) in self
            .grad_norm_sq
            .iter()
            .zip(&self.objective)
            .zip(&self.occupancy)
            .enumerate()
        {
            writeln!(out, "{t},{g},{f},{o}")?;
        }
        Ok(())
    }
}

pub fn run_sync(config: &SyncRunConfig) -> Result<SyncTrace, SgdError> {
    config.validate()?;
    let seeds = SeedStream::new(config.seed);
    let mut gen_rng = seeds.rng(streams::NOISE);
    let mut sample_rng = seeds.rng(streams::SAMPLING);

    let mut buffer = ShardedReplayBuffer::fifo(config.n as usize);
    // live samples are exactly the ids [first_live, next_id)
    let mut live: VecDeque<SyntheticSample> = VecDeque::with_capacity(config.n as usize + 1);
    let mut first_live = 0u64;
    let mut theta = config.theta0();
    let mut next_id = 0u64;
    let steps = config.steps as usize;
    let mut trace = SyncTrace {
        grad_norm_sq: Vec::with_capacity(steps),
        objective: Vec::with_capacity(steps),
        occupancy: Vec::with_capacity(steps),
        noise_sq: Vec::with_capacity(steps),
        ..SyncTrace::default()
    };
    let inv_b = 1.0 / config.b as f64;
    let mut ids: Vec<u64> = Vec::with_capacity(config.b as usize);
    let mut err = vec![0.0; theta.len()];

    for t in 0..config.steps {
        for _ in 0..config.r {
            let sample = SyntheticSample::draw(t, &theta, &mut gen_rng);
            if let Some(evicted) = buffer.push(RolloutRecord::new(next_id, t))? {
                debug_assert_eq!(evicted.rollout_id(), first_live);
                live.pop_front();
                first_live += 1;
                trace.evictions.push(evicted.rollout_id());
            }
            live.push_back(sample);
            next_id += 1;
        }

        let grad = config.objective.grad(&theta);
        trace.grad_norm_sq.push(norm_sq(&grad));
        trace.objective.push(config.objective.value(&theta));
        trace.occupancy.push(buffer.len());

        let batch = buffer.sample(
            config.b as usize,
            BatchTag {
                use_step: t,
                batch_id: t,
            },
            &mut sample_rng,
        )?;
        ids.clear();
        ids.extend(batch.records.iter().map(|r| r.rollout_id()));
        ids.sort_unstable();
        let mut unique: Vec<&SyntheticSample> = Vec::with_capacity(ids.len());
        let mut weight: Vec<f64> = Vec::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if i > 0 && ids[i - 1] == *id {
                *weight.last_mut().expect("non-empty") += inv_b;
            } else {
                unique.push(&live[(id - first_live) as usize]);
                weight.push(inv_b);
            }
        }

        let mixing = noise_mixing(
            &unique,
            t,
            &config.profile,
            config.rho_knob,
            config.n as usize,
        );
        err.iter_mut().for_each(|e| *e = 0.0);
        for (c, s) in unique.iter().enumerate() {
            let coef: f64 = (c..unique.len()).map(|i| weight[i] * mixing[i][c]).sum();
            for (e, u) in err.iter_mut().zip(&s.noise_direction) {
                *e += coef * u;
            }
            if config.kappa > 0.0 {
                let w = weight[c] * config.kappa;
                for ((e, a), b) in err.iter_mut().zip(&theta).zip(&s.frozen_theta) {
                    *e += w * (a - b);
                }
            }
        }
        trace.noise_sq.push(norm_sq(&err));

        for ((th, g), e) in theta.iter_mut().zip(&grad).zip(&err) {
            *th -= config.eta * (g + e);
        }
        let norm = norm_sq(&theta).sqrt();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(SgdError::Diverged { step: t });
        }
    }
    trace.mean_grad_norm_sq = trace.grad_norm_sq.iter().sum::<f64>() / steps as f64;
    Ok(trace)
}

/// Grid over staleness horizon `x = N/R` and replay ratio `y = B/R` at a
/// fixed compute budget `C = (B + mu R) T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub budget: f64,
    pub mu: f64,
    pub r: u64,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub seeds: u64,
    /// Largest step size used, as a fraction of the validity cap.
    pub eta_cap_fraction: f64,
    /// Supplies objective, profile, kappa, rho knob, radius and base seed.
    pub base: SyncRunConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub x: f64,
    pub y: f64,
    pub n: u64,
    pub b: u64,
    pub steps: u64,
    pub eta: f64,
    /// Per-seed mean squared gradient norm; infinite for diverged runs.
    pub values: Vec<f64>,
    pub median: f64,
}

fn integral(v: f64, what: &str) -> Result<u64, SgdError> {
    let rounded = v.round();
    if rounded < 1.0 || (v - rounded).abs() > 1e-9 {
        return Err(SgdError::InvalidConfig(format!(
            "{what} = {v} is not a positive integer"
        )));
    }
    Ok(rounded as u64)
}

/// Configuration of one sweep cell, with the step size set by
/// [`optimal_eta`] and clipped below the validity cap.
pub fn sweep_cell_config(sweep: &SweepSpec, x: f64, y: f64) -> Result<SyncRunConfig, SgdError> {
    let n = integral(x * sweep.r as f64, "N")?;
    let b = integral(y * sweep.r as f64, "B")?;
    let steps = (sweep.budget / (b as f64 + sweep.mu * sweep.r as f64)).floor() as u64;
    if steps == 0 {
        return Err(SgdError::InvalidConfig(format!(
            "budget too small for x={x}, y={y}"
        )));
    }
    let mut config = SyncRunConfig {
        n,
        r: sweep.r,
        b,
        steps,
        ..sweep.base.clone()
    };
    let d = config.design_params(sweep.mu);
    let best = optimal_eta(&d, sweep.budget)?;
    config.eta = best.eta.min(sweep.eta_cap_fraction * eta_cap(&d));
    Ok(config)
}

pub fn sweep_designs(sweep: &SweepSpec) -> Result<Vec<SweepCell>, SgdError> {
    if sweep.seeds == 0 {
        return Err(SgdError::InvalidConfig(
            "sweep needs at least one seed".into(),
        ));
    }
    let mut configs = Vec::new();
    for &x in &sweep.xs {
        for &y in &sweep.ys {
            configs.push((x, y, sweep_cell_config(sweep, x, y)?));
        }
    }
    if configs.is_empty() {
        return Err(SgdError::InvalidConfig("empty design grid".into()));
    }
    let master = SeedStream::new(sweep.base.seed);
    configs
        .into_par_iter()
        .map(|(x, y, config)| {
            let values: Vec<f64> = (0..sweep.seeds)
                .map(|s| {
                    let run = SyncRunConfig {
                        seed: master.child(s).master(),
                        ..config.clone()
                    };
                    match run_sync(&run) {
                        Ok(trace) => Ok(trace.mean_grad_norm_sq),
                        Err(SgdError::Diverged { step }) => {
                            log::warn!("cell x={x} y={y} seed {s} diverged at step {step}");
                            Ok(f64::INFINITY)
                        }
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<_, _>>()?;
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            Ok(SweepCell {
                x,
                y,
                n: config.n,
                b: config.b,
                steps: config.steps,
                eta: config.eta,
                median: nearest_rank(&sorted, 0.5),
                values,
            })
        })
        .collect()
}

/// Index of the cell with the smallest median.
pub fn best_cell(cells: &[SweepCell]) -> Option<usize> {
    (0..cells.len()).min_by(|&a, &b| cells[a].median.total_cmp(&cells[b].median))
}

pub fn write_sweep_csv<W: Write>(mut out: W, cells: &[SweepCell]) -> std::io::Result<()> {
    writeln!(out, "x,y,N,B,steps,eta,seed_index,mean_grad_norm_sq")?;
    for c in cells {
        for (s, v) in c.values.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{s},{v}",
                c.x, c.y, c.n, c.b, c.steps, c.eta
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> SyntheticObjective {
        SyntheticObjective::Quadratic {
            smoothness: 1.0,
            dim: 32,
        }
    }

    fn base(profile: NoiseProfile) -> SyncRunConfig {
        SyncRunConfig {
            n: 1,
            r: 1,
            b: 1,
            eta: 0.3,
            steps: 50,
            objective: quad(),
            profile,
            kappa: 0.0,
            rho_knob: 0.0,
            theta0_radius: 10.0,
            seed: 3,
        }
    }

    #[test]
    fn noiseless_gradient_is_exact() {
        let obj = quad();
        let theta = vec![0.5; 32];
        let mut rng = SeedStream::new(1).rng("t");
        let s = SyntheticSample::draw(0, &[0.0; 32], &mut rng);
        let g = synth_gradient(&obj, &theta, &s, 4, 0.0, &NoiseProfile::Constant(0.0)).unwrap();
        assert_eq!(g, obj.grad(&theta));
    }

    #[test]
    fn fresh_sample_has_no_bias() {
        let obj = quad();
        let theta = vec![0.5; 32];
        let mut rng = SeedStream::new(1).rng("t");
        let s = SyntheticSample::draw(7, &theta, &mut rng);
        let g = synth_gradient(&obj, &theta, &s, 7, 5.0, &NoiseProfile::Constant(0.0)).unwrap();
        assert_eq!(g, obj.grad(&theta));
        assert!(matches!(
            synth_gradient(&obj, &theta, &s, 6, 0.0, &NoiseProfile::Constant(0.0)),
            Err(SgdError::Ledger { .. })
        ));
    }

    #[test]
    fn noise_second_moment() {
        let profile = NoiseProfile::PowerLaw {
            alpha: 0.3,
            tau: 1.0,
        };
        let obj = quad();
        let theta = vec![0.0; 32];
        let mut rng = SeedStream::new(9).rng("t");
        let staleness = 5u64;
        let draws = 10_000;
        let mut acc = 0.0;
        for k in 0..draws {
            let s = SyntheticSample::draw(k, &theta, &mut rng);
            let g = synth_gradient(&obj, &theta, &s, k + staleness, 0.0, &profile).unwrap();
            acc += norm_sq(&g);
        }
        let expect = profile.sigma_sq(staleness);
        let got = acc / draws as f64;
        assert!((got - expect).abs() <= 0.05 * expect, "{got} vs {expect}");
    }

    #[test]
    fn gradient_descent_closed_form() {
        let config = base(NoiseProfile::Constant(0.0));
        let trace = run_sync(&config).unwrap();
        for (t, g) in trace.grad_norm_sq.iter().enumerate() {
            let expect = (1.0 - 0.3f64).powi(2 * t as i32) * 100.0;
            assert!((g - expect).abs() <= 1e-9 * expect.max(1e-300), "step {t}");
        }
    }

    #[test]
    fn nonconvex_gradient_matches_differences() {
        let obj = SyntheticObjective::SeparableNonconvex {
            dim: 4,
            beta: 1.0,
            omega: 2.0,
        };
        let theta = [0.3, -1.2, 2.5, 0.0];
        let g = obj.grad(&theta);
        for i in 0..4 {
            let mut p = theta;
            let mut m = theta;
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let fd = (obj.value(&p) - obj.value(&m)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6);
        }
        assert_eq!(obj.smoothness(), 5.0);
    }

    #[test]
    fn invalid_eta_rejected() {
        let mut config = base(NoiseProfile::Constant(0.0));
        config.eta = 0.6;
        assert!(matches!(
            run_sync(&config),
            Err(SgdError::Design(DesignError::InvalidEta(_)))
        ));
        config.eta = 0.1;
        config.n = 5;
        config.r = 2;
        assert!(matches!(
            run_sync(&config),
            Err(SgdError::Design(DesignError::NotDivisible { .. }))
        ));
    }

    #[test]
    fn correlated_noise_hits_target_inner_products() {
        // two samples created N steps apart with rho = 0.5: target correlation 0.5
        let mut rng = SeedStream::new(2).rng("t");
        let a = SyntheticSample::draw(0, &[0.0; 8], &mut rng);
        let b = SyntheticSample::draw(10, &[0.0; 8], &mut rng);
        let profile = NoiseProfile::Constant(1.0);
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        let draws = 20_000u64;
        for t in 10..10 + draws {
            let v = batch_noise(&[&a, &b], t, &profile, 0.5, 10);
            dot += v[0].iter().zip(&v[1]).map(|(x, y)| x * y).sum::<f64>();
            na += norm_sq(&v[0]);
            nb += norm_sq(&v[1]);
        }
        let corr = dot / (na * nb).sqrt();
        assert!((corr - 0.5).abs() < 0.03, "corr {corr}");
        assert!((na / draws as f64 - 1.0).abs() < 0.05);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = vec![
            vec![1.0, 1.0, 0.0],
            vec![1.0, 1.0, 1.0],
            vec![0.0, 1.0, 1.0],
        ];
        assert!(cholesky(&m).is_none());
        let m = vec![vec![4.0, 2.0], vec![2.0, 3.0]];
        let l = cholesky(&m).unwrap();
        assert!((l[1][1] - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sweep_single_cell_matches_run() {
        let sweep = SweepSpec {
            budget: 2000.0,
            mu: 2.0,
            r: 2,
            xs: vec![2.0],
            ys: vec![1.0],
            seeds: 5,
            eta_cap_fraction: 0.9,
            base: base(NoiseProfile::Constant(1.0)),
        };
        let cells = sweep_designs(&sweep).unwrap();
        assert_eq!(cells.len(), 1);
        let config = sweep_cell_config(&sweep, 2.0, 1.0).unwrap();
        let master = SeedStream::new(sweep.base.seed);
        let mut direct: Vec<f64> = (0..5)
            .map(|s| {
                run_sync(&SyncRunConfig {
                    seed: master.child(s).master(),
                    ..config.clone()
                })
                .unwrap()
                .mean_grad_norm_sq
            })
            .collect();
        direct.sort_by(f64::total_cmp);
        assert_eq!(cells[0].median, direct[2]);
        assert_eq!(cells[0].steps, 2000 / (2 + 4));
    }
}
