//! `design`: compute-ratio table, optimal design and step size.

use std::path::Path;

use replaylab_core::compute::{compute_ratio, ComputeParams};
use replaylab_core::design::{
    convergence_bound, eta_validity, k_curve, optimal_design_numeric, optimal_design_power_law,
    optimal_eta, DesignParams, EtaValidity, NoiseProfile,
};

use crate::config::{key, Config, KeySpec};
use crate::{write_file, CliError, Stats};

pub const SCHEMA: &[KeySpec] = &[
    key("mu", "5.28", "rollout-batch cost over trainer-step cost"),
    key(
        "pairs",
        "7:1,6:2,5:3,4:4,2:6,1:7",
        "W:T pairs for the compute-ratio table",
    ),
    key(
        "alpha",
        "0.3",
        "power-law noise exponent, sigma(s) = (s/tau)^alpha",
    ),
    key("tau", "1", "power-law noise scale"),
    key("rho", "0.1", "cross-sample noise correlation"),
    key("kappa", "0", "gradient Lipschitz constant in parameters"),
    key("smoothness", "1", "smoothness L"),
    key("f0", "1", "initial suboptimality F(theta_0) - F*"),
    key("n", "4", "buffer size N for the bound"),
    key("r", "1", "rollouts per round R"),
    key("b", "2", "batch size B"),
    key("eta", "0.01", "step size for the bound"),
    key("steps", "1000", "updates T for the bound"),
    key(
        "budget",
        "10000",
        "compute budget C for the optimal step size",
    ),
    key("k_min", "0.01", "K(x) curve lower end"),
    key("k_max", "100", "K(x) curve upper end"),
    key("k_points", "50", "K(x) curve samples"),
    key("seed", "0", "unused; accepted for uniform flags"),
    key("seeds", "1", "unused; accepted for uniform flags"),
];

pub fn run(cfg: &Config, out: &Path) -> Result<Stats, CliError> {
    let mu = cfg.f64("mu")?;
    let pairs = cfg.pair_list("pairs")?;
    let (alpha, rho) = (cfg.f64("alpha")?, cfg.f64("rho")?);
    let profile = NoiseProfile::PowerLaw {
        alpha,
        tau: cfg.f64("tau")?,
    };
    profile.validate().map_err(|m| cfg.invalid("alpha", m))?;

    let mut gamma_rows = Vec::with_capacity(pairs.len());
    for &(w, t) in &pairs {
        let p = ComputeParams::new(w, t, mu)?;
        gamma_rows.push((w, t, p.worker_trainer_ratio(), compute_ratio(&p)));
    }
    write_file(out, "gamma.csv", |f| {
        writeln!(f, "W,T,W_over_T,gamma")?;
        for (w, t, ratio, g) in &gamma_rows {
            writeln!(f, "{w},{t},{ratio},{g}")?;
        }
        Ok(())
    })?;

    let closed = optimal_design_power_law(alpha, mu, rho)?;
    let numeric = optimal_design_numeric(&profile, mu, rho)?;
    let d = DesignParams {
        mu,
        rho,
        kappa: cfg.f64("kappa")?,
        smoothness: cfg.f64("smoothness")?,
        f0: cfg.f64("f0")?,
        profile: profile.clone(),
        n: cfg.u64("n")?,
        r: cfg.u64("r")?,
        b: cfg.u64("b")?,
        eta: cfg.f64("eta")?,
        steps: cfg.u64("steps")?,
    };
    d.validate()?;
    let eta_star = optimal_eta(&d, cfg.f64("budget")?)?;
    let bound = match eta_validity(&d) {
        EtaValidity::Valid => convergence_bound(&d)?.to_string(),
        EtaValidity::Violated(c) => format!("invalid ({c})"),
    };

    let report: Vec<(&str, String)> = vec![
        ("x_star", closed.x_star.to_string()),
        ("y_star", closed.y_star.to_string()),
        ("objective", closed.objective_value.to_string()),
        ("x_star_numeric", numeric.x_star.to_string()),
        ("y_star_numeric", numeric.y_star.to_string()),
        ("numeric_boundary", numeric.boundary.to_string()),
        ("eta_star", eta_star.eta.to_string()),
        ("eta_star_unbounded", eta_star.unbounded.to_string()),
        ("bound", bound),
    ];
    write_file(out, "design.txt", |f| {
        for (k, v) in &report {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    })?;

    let curve = k_curve(
        alpha,
        mu,
        rho,
        cfg.f64("k_min")?,
        cfg.f64("k_max")?,
        cfg.usize("k_points")?,
    );
    write_file(out, "k_curve.csv", |f| {
        writeln!(f, "x,K")?;
        for (x, k) in &curve {
            writeln!(f, "{x},{k}")?;
        }
        Ok(())
    })?;

    write_file(out, "gamma.txt", |f| {
        writeln!(f, "{:>4} {:>4} {:>8} {:>8}", "W", "T", "W/T", "gamma")?;
        for (w, t, ratio, g) in &gamma_rows {
            writeln!(f, "{w:>4} {t:>4} {ratio:>8.3} {g:>8.3}")?;
        }
        Ok(())
    })?;
    Ok(report
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect())
}
