/// Noise magnitude `sigma(s)` as a function of sample age `s`.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseProfile {
    Constant(f64),
    /// `sigma(s) = (s / tau)^alpha`, so `sigma(0) = 0` whenever `alpha > 0`.
    PowerLaw {
        alpha: f64,
        tau: f64,
    },
    /// `sigma(s)` for `s = 0, 1, ...`; the last value extends indefinitely.
    Tabulated(Vec<f64>),
}

impl NoiseProfile {
    /// Tabulated profile whose exact running average of `sigma^2` equals
    /// the continuous power-law average `(H / tau)^(2 alpha) / (2 alpha + 1)`
    /// for every `H` up to `len`.
    ///
    /// Unlike [`NoiseProfile::PowerLaw`] it assigns age-0 samples a positive
    /// variance, which keeps very short staleness horizons noisy.
    pub fn integral_matched_power_law(alpha: f64, tau: f64, len: usize) -> Self {
        let p = 2.0 * alpha + 1.0;
        let scale = p * tau.powf(2.0 * alpha);
        let values = (0..len.max(1))
            .map(|s| {
                let s = s as f64;
                (((s + 1.0).powf(p) - s.powf(p)) / scale).sqrt()
            })
            .collect();
        NoiseProfile::Tabulated(values)
    }

    pub fn sigma(&self, s: u64) -> f64 {
        match self {
            NoiseProfile::Constant(c) => *c,
            NoiseProfile::PowerLaw { alpha, tau } => (s as f64 / tau).powf(*alpha),
            NoiseProfile::Tabulated(values) => match values.get(s as usize) {
                Some(v) => *v,
                None => values.last().copied().unwrap_or(0.0),
            },
        }
    }

    pub fn sigma_sq(&self, s: u64) -> f64 {
        let v = self.sigma(s);
        v * v
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            NoiseProfile::Constant(c) if !(c.is_finite() && *c >= 0.0) => Err(format!(
                "constant noise level must be finite and non-negative, got {c}"
            )),
            NoiseProfile::PowerLaw { alpha, tau } => {
                if !(0.0..0.5).contains(alpha) {
                    Err(format!("power-law alpha must lie in [0, 0.5), got {alpha}"))
                } else if !(*tau > 0.0 && tau.is_finite()) {
                    Err(format!("power-law tau must be positive, got {tau}"))
                } else {
                    Ok(())
                }
            }
            NoiseProfile::Tabulated(values) => {
                if values.is_empty() {
                    return Err("tabulated profile needs at least one value".into());
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err("tabulated values must be finite and non-negative".into());
                }
                if values.windows(2).any(|w| w[1] < w[0]) {
                    return Err("tabulated profile must be non-decreasing".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            NoiseProfile::Constant(c) => *c == 0.0,
            NoiseProfile::PowerLaw { .. } => false,
            NoiseProfile::Tabulated(values) => values.iter().all(|v| *v == 0.0),
        }
    }

    /// Exact `(1/H) * sum_{s=0}^{H-1} sigma(s)^2`.
    pub fn sigma_bar_sq(&self, h: u64) -> f64 {
        assert!(h >= 1, "horizon must be positive");
        match self {
            NoiseProfile::Constant(c) => c * c,
            NoiseProfile::Tabulated(values) => {
                let inside = (h as usize).min(values.len());
                let head: f64 = values[..inside].iter().map(|v| v * v).sum();
                let last = values.last().copied().unwrap_or(0.0);
                let tail = (h as usize - inside) as f64 * last * last;
                (head + tail) / h as f64
            }
            NoiseProfile::PowerLaw { .. } => {
                (0..h).map(|s| self.sigma_sq(s)).sum::<f64>() / h as f64
            }
        }
    }

    /// Continuous relaxation of `sigma_bar_sq` used by the design
    /// optimizers. Power laws use the integral approximation; other
    /// profiles interpolate the exact averages linearly and hold
    /// `sigma_bar_sq(1)` below `x = 1`.
    pub fn sigma_bar_sq_continuous(&self, x: f64) -> f64 {
        match self {
            NoiseProfile::Constant(c) => c * c,
            NoiseProfile::PowerLaw { alpha, tau } => {
                (x / tau).powf(2.0 * alpha) / (2.0 * alpha + 1.0)
            }
            NoiseProfile::Tabulated(_) => {
                if x <= 1.0 {
                    return self.sigma_bar_sq(1);
                }
                let lo = x.floor();
                let frac = x - lo;
                let a = self.sigma_bar_sq(lo as u64);
                if frac == 0.0 {
                    a
                } else {
                    a + frac * (self.sigma_bar_sq(lo as u64 + 1) - a)
                }
            }
        }
    }

    /// Closed-form approximation `(H / tau)^(2 alpha) / (2 alpha + 1)`;
    /// `None` for non-power-law profiles.
    pub fn power_law_approximation(&self, h: f64) -> Option<f64> {
        match self {
            NoiseProfile::PowerLaw { .. } => Some(self.sigma_bar_sq_continuous(h)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_average() {
        let p = NoiseProfile::Constant(1.5);
        assert_eq!(p.sigma_bar_sq(1), 2.25);
        assert_eq!(p.sigma_bar_sq(17), 2.25);
    }

    #[test]
    fn half_power_law_at_four() {
        let p = NoiseProfile::PowerLaw {
            alpha: 0.5,
            tau: 1.0,
        };
        assert!((p.sigma_bar_sq(4) - 1.5).abs() < 1e-12);
        assert!((p.power_law_approximation(4.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(p.sigma_bar_sq(1), 0.0);
    }

    #[test]
    fn single_term() {
        let p = NoiseProfile::Tabulated(vec![0.3, 0.4]);
        assert!((p.sigma_bar_sq(1) - 0.09).abs() < 1e-15);
        assert!((p.sigma_bar_sq(3) - (0.09 + 0.16 + 0.16) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn approximation_gap_shrinks() {
        for k in 0..8 {
            let alpha = 0.1 + 0.05 * k as f64;
            let p = NoiseProfile::PowerLaw { alpha, tau: 1.0 };
            let gap = |h: u64| {
                let approx = p.power_law_approximation(h as f64).unwrap();
                (approx - p.sigma_bar_sq(h)).abs() / approx
            };
            assert!(gap(4) <= 0.25, "alpha {alpha}: gap {}", gap(4));
            assert!(gap(128) <= 0.03, "alpha {alpha}: gap {}", gap(128));
            assert!(gap(128) < gap(4));
        }
    }

    #[test]
    fn matched_profile_reproduces_integral() {
        let p = NoiseProfile::integral_matched_power_law(0.3, 2.0, 64);
        let pl = NoiseProfile::PowerLaw {
            alpha: 0.3,
            tau: 2.0,
        };
        for h in [1u64, 2, 5, 64] {
            let expect = pl.power_law_approximation(h as f64).unwrap();
            assert!((p.sigma_bar_sq(h) - expect).abs() < 1e-12 * expect.max(1.0));
        }
        assert!(p.validate().is_ok());
    }

    #[test]
    fn continuous_interpolates() {
        let p = NoiseProfile::Tabulated(vec![1.0, 2.0, 3.0]);
        assert_eq!(p.sigma_bar_sq_continuous(0.2), 1.0);
        let mid = p.sigma_bar_sq_continuous(1.5);
        assert!((mid - (1.0 + 2.5) / 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn power_law_is_non_decreasing(alpha in 0.0f64..0.5, tau in 0.1f64..10.0, s in 0u64..1000) {
            let p = NoiseProfile::PowerLaw { alpha, tau };
            prop_assert!(p.sigma(s + 1) >= p.sigma(s));
        }
    }
}
