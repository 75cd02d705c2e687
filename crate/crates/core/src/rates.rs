//! Closed-form effective decay rates and lifetimes of the control schemes.
//!
//! Rates are in 1/µs and lifetimes are always derived as `1/Γ`.

use std::fmt;

use crate::dynamics::PopulationTrace;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Scheme {
    NoFeedback,
    WisemanMilburn { eta_percent: u32 },
    Ancilla,
    AncillaMl,
}

impl Scheme {
    pub fn wiseman_milburn(eta: f64) -> Self {
        Scheme::WisemanMilburn {
            eta_percent: (eta * 100.0).round() as u32,
        }
    }

    /// Short machine-readable label, e.g. `wm_eta_0.50`.
    pub fn label(&self) -> String {
        match self {
            Scheme::NoFeedback => "no_feedback".into(),
            Scheme::WisemanMilburn { eta_percent } => {
                format!("wm_eta_{:.2}", *eta_percent as f64 / 100.0)
            }
            Scheme::Ancilla => "ancilla".into(),
            Scheme::AncillaMl => "ancilla_ml".into(),
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "no_feedback" => Some(Scheme::NoFeedback),
            "ancilla" => Some(Scheme::Ancilla),
            "ancilla_ml" => Some(Scheme::AncillaMl),
            _ => {
                let eta: f64 = s.strip_prefix("wm_eta_")?.parse().ok()?;
                (0.0..=1.0).contains(&eta).then(|| Scheme::wiseman_milburn(eta))
            }
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// An effective decay rate and the lifetime it implies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateResult {
    pub scheme: Scheme,
    gamma_eff: f64,
}

impl RateResult {
    pub fn new(scheme: Scheme, gamma_eff: f64) -> Result<Self> {
        if !(gamma_eff > 0.0) || !gamma_eff.is_finite() {
            return Err(Error::param(
                "gamma_eff",
                format!("{scheme}: effective rate must be positive and finite, got {gamma_eff}"),
            ));
        }
        Ok(Self { scheme, gamma_eff })
    }

    pub fn gamma_eff(&self) -> f64 {
        self.gamma_eff
    }

    pub fn t1_eff(&self) -> f64 {
        1.0 / self.gamma_eff
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::param("gamma", format!("must be > 0, got {gamma}")))
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eta) {
        Ok(())
    } else {
        Err(Error::param("eta", format!("must lie in [0, 1], got {eta}")))
    }
}

fn check_cooperativity(c: f64) -> Result<()> {
    if c >= 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::param("cooperativity", format!("must be >= 0, got {c}")))
    }
}

/// `Γ(λ) = γ − 2√(ηγ)λ + 2λ²`. Can exceed γ for a poorly chosen gain.
pub fn gamma_wm(gamma: f64, eta: f64, lambda: f64) -> f64 {
    gamma - 2.0 * (eta * gamma).sqrt() * lambda + 2.0 * lambda * lambda
}

/// Gain minimising [`gamma_wm`]: `½√(ηγ)`.
pub fn optimal_lambda(gamma: f64, eta: f64) -> f64 {
    0.5 * (eta * gamma).sqrt()
}

/// `C = 4g²/(κγ)`
pub fn cooperativity(g: f64, kappa: f64, gamma: f64) -> f64 {
    4.0 * g * g / (kappa * gamma)
}

/// Coupling that gives cooperativity `c` for a given ancilla linewidth.
pub fn coupling_for_cooperativity(c: f64, kappa: f64, gamma: f64) -> f64 {
    (c * kappa * gamma / 4.0).sqrt()
}

/// `γ/(1+C)`
pub fn gamma_ancilla(gamma: f64, c: f64) -> f64 {
    gamma / (1.0 + c)
}

/// `γ(1−r²)/(1+C)`. Only `r ∈ [0, 1]` is accepted.
pub fn gamma_ml(gamma: f64, c: f64, r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::param("r", format!("must lie in [0, 1], got {r}")));
    }
    Ok(gamma_ancilla(gamma, c) * (1.0 - r * r))
}

/// `pe0·e^{−Γt}` on the given times.
pub fn population_curve(gamma_eff: f64, pe0: f64, times: &[f64]) -> Result<PopulationTrace> {
    if !(gamma_eff >= 0.0) || !gamma_eff.is_finite() {
        return Err(Error::param("gamma_eff", format!("must be >= 0, got {gamma_eff}")));
    }
    if !(0.0..=1.0).contains(&pe0) {
        return Err(Error::param("pe0", format!("must lie in [0, 1], got {pe0}")));
    }
    let pe = times.iter().map(|t| pe0 * (-gamma_eff * t).exp()).collect();
    PopulationTrace::new(times.to_vec(), pe)
}

/// Uniform grid `0, dt, 2dt, …` up to and including `t_final` (to rounding).
pub fn time_grid(dt: f64, t_final: f64) -> Vec<f64> {
    let n = (t_final / dt).round() as usize;
    (0..=n).map(|k| k as f64 * dt).collect()
}

/// The five configurations compared in the lifetime table: no feedback,
/// optimal-gain feedback at each efficiency in `etas`, the ancilla, and the
/// ancilla with a predictor of correlation `r`.
pub fn table2_summary(gamma: f64, etas: &[f64], c: f64, r: f64) -> Result<Vec<RateResult>> {
    check_gamma(gamma)?;
    check_cooperativity(c)?;
    let mut out = vec![RateResult::new(Scheme::NoFeedback, gamma)?];
    for &eta in etas {
        check_eta(eta)?;
        let rate = gamma_wm(gamma, eta, optimal_lambda(gamma, eta));
        out.push(RateResult::new(Scheme::wiseman_milburn(eta), rate)?);
    }
    out.push(RateResult::new(Scheme::Ancilla, gamma_ancilla(gamma, c))?);
    out.push(RateResult::new(Scheme::AncillaMl, gamma_ml(gamma, c, r)?)?);
    Ok(out)
}
