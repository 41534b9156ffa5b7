//! `simulate-sync`: buffered SGD on synthetic objectives, single runs or a
//! fixed-budget design sweep.

use std::path::Path;

use rayon::prelude::*;
use replaylab_core::design::{convergence_bound, eta_validity, EtaValidity, NoiseProfile};
use replaylab_core::sgd_lab::{
    best_cell, run_sync, sweep_designs, write_sweep_csv, SweepSpec, SyncRunConfig,
    SyntheticObjective,
};

use crate::config::{key, Config, KeySpec};
use crate::{replicate_seed, write_file, CliError, Stats};

pub const SCHEMA: &[KeySpec] = &[
    key("mode", "single", "single | sweep"),
    key("objective", "quadratic", "quadratic | nonconvex"),
    key("dim", "32", "parameter dimension"),
    key("smoothness", "1", "quadratic curvature L"),
    key("beta", "0.1", "nonconvex ripple amplitude"),
    key("omega", "1", "nonconvex ripple frequency"),
    key(
        "profile",
        "matched",
        "matched | powerlaw | constant noise profile",
    ),
    key("alpha", "0.3", "noise growth exponent"),
    key("tau", "1", "noise age scale"),
    key("sigma", "1", "constant noise level"),
    key(
        "profile_len",
        "4096",
        "tabulated length of the matched profile",
    ),
    key("kappa", "0", "stale-gradient drift constant"),
    key("rho_knob", "0.1", "cross-sample noise correlation"),
    key("radius", "10", "initial distance |theta_0|"),
    key("n", "4", "buffer size N (single)"),
    key("r", "4", "rollouts per round R"),
    key("b", "8", "batch size B (single)"),
    key("eta", "0.1", "step size (single)"),
    key("steps", "500", "updates (single)"),
    key("budget", "50000", "compute budget C (sweep)"),
    key("mu", "6", "rollout cost ratio (sweep)"),
    key("xs", "1,2,4", "staleness horizons x = N/R (sweep)"),
    key("ys", "0.5,1,2", "replay ratios y = B/R (sweep)"),
    key(
        "eta_cap_fraction",
        "0.9",
        "largest step as a fraction of the validity cap (sweep)",
    ),
    key("seed", "0", "master seed"),
    key("seeds", "1", "replicates"),
];

fn base_config(cfg: &Config) -> Result<SyncRunConfig, CliError> {
    let dim = cfg.usize("dim")?;
    let objective = match cfg.choice("objective", &["quadratic", "nonconvex"])? {
        "quadratic" => SyntheticObjective::Quadratic {
            smoothness: cfg.f64("smoothness")?,
            dim,
        },
        _ => SyntheticObjective::SeparableNonconvex {
            dim,
            beta: cfg.f64("beta")?,
            omega: cfg.f64("omega")?,
        },
    };
    let (alpha, tau) = (cfg.f64("alpha")?, cfg.f64("tau")?);
    let profile = match cfg.choice("profile", &["matched", "powerlaw", "constant"])? {
        "matched" => {
            NoiseProfile::integral_matched_power_law(alpha, tau, cfg.usize("profile_len")?)
        }
        "powerlaw" => NoiseProfile::PowerLaw { alpha, tau },
        _ => NoiseProfile::Constant(cfg.f64("sigma")?),
    };
    profile.validate().map_err(|m| cfg.invalid("profile", m))?;
    Ok(SyncRunConfig {
        n: cfg.u64("n")?,
        r: cfg.u64("r")?,
        b: cfg.u64("b")?,
        eta: cfg.f64("eta")?,
        steps: cfg.u64("steps")?,
        objective,
        profile,
        kappa: cfg.f64("kappa")?,
        rho_knob: cfg.f64("rho_knob")?,
        theta0_radius: cfg.f64("radius")?,
        seed: cfg.u64("seed")?,
    })
}

pub fn run(cfg: &Config, out: &Path) -> Result<Stats, CliError> {
    let base = base_config(cfg)?;
    let seeds = cfg.u64("seeds")?;
    if seeds == 0 {
        return Err(cfg.invalid("seeds", "need at least one replicate").into());
    }
    match cfg.choice("mode", &["single", "sweep"])? {
        "single" => single(base, seeds, out),
        _ => sweep(cfg, base, seeds, out),
    }
}

fn single(base: SyncRunConfig, seeds: u64, out: &Path) -> Result<Stats, CliError> {
    base.validate()?;
    let d = base.design_params(1.0);
    let bound = match eta_validity(&d) {
        EtaValidity::Valid => convergence_bound(&d)?,
        EtaValidity::Violated(c) => {
            return Err(CliError::Invalid(format!("step size violates {c}")))
        }
    };
    let traces = (0..seeds)
        .into_par_iter()
        .map(|s| {
            run_sync(&SyncRunConfig {
                seed: replicate_seed(base.seed, s),
                ..base.clone()
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    for (s, trace) in traces.iter().enumerate() {
        write_file(out, &format!("trace_s{s}.csv"), |f| trace.write_csv(f))?;
    }
    write_file(out, "summary.csv", |f| {
        writeln!(f, "seed_index,mean_grad_norm_sq,mean_noise_sq,bound")?;
        for (s, t) in traces.iter().enumerate() {
            writeln!(
                f,
                "{s},{},{},{bound}",
                t.mean_grad_norm_sq,
                t.mean_noise_sq()
            )?;
        }
        Ok(())
    })?;
    let worst = traces
        .iter()
        .map(|t| t.mean_grad_norm_sq)
        .fold(0.0, f64::max);
    Ok(vec![
        ("bound".into(), bound.to_string()),
        ("worst_mean_grad_norm_sq".into(), worst.to_string()),
        ("steps".into(), base.steps.to_string()),
    ])
}

fn sweep(cfg: &Config, base: SyncRunConfig, seeds: u64, out: &Path) -> Result<Stats, CliError> {
    let grid = SweepSpec {
        budget: cfg.f64("budget")?,
        mu: cfg.f64("mu")?,
        r: base.r,
        xs: cfg.f64_list("xs")?,
        ys: cfg.f64_list("ys")?,
        seeds,
        eta_cap_fraction: cfg.f64("eta_cap_fraction")?,
        base,
    };
    let cells = sweep_designs(&grid)?;
    write_file(out, "sweep.csv", |f| write_sweep_csv(f, &cells))?;
    let best = best_cell(&cells).map(|i| &cells[i]);
    let mut stats = vec![("cells".to_string(), cells.len().to_string())];
    if let Some(c) = best {
        stats.push(("best_x".into(), c.x.to_string()));
        stats.push(("best_y".into(), c.y.to_string()));
        stats.push(("best_median".into(), c.median.to_string()));
    }
    Ok(stats)
}
