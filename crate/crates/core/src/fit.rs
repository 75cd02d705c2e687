//! Decay-rate extraction from population traces and the energy-retention
//! integral `E(T) = ∫₀ᵀ P_e dt`.

use crate::dynamics::PopulationTrace;
use crate::{Error, Result};

/// Points below this fraction of `pe(0)` are left out of the log fit.
pub const LOG_FLOOR: f64 = 1e-4;

const MIN_POINTS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit {
    pub gamma_eff: f64,
    pub rms_residual: f64,
    pub n_points_used: usize,
}

impl DecayFit {
    pub fn t1_eff(&self) -> f64 {
        1.0 / self.gamma_eff
    }
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, rms residual)`.
fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - a - b * x).powi(2))
        .sum();
    (a, b, (ss / n).sqrt())
}

/// Log-linear fit of `ln(pe/pe₀)` against `t`; the slope is `−Γ_eff`.
///
/// The intercept is left free so a non-exponential start does not pin the
/// line. `rms_residual` is measured in log units.
pub fn fit_exponential(trace: &PopulationTrace) -> Result<DecayFit> {
    let pe0 = *trace.pe().first().ok_or(Error::TooFewPoints(0))?;
    if trace.len() < MIN_POINTS {
        return Err(Error::TooFewPoints(trace.len()));
    }
    if !(pe0 > 0.0) {
        return Err(Error::param("pe", format!("initial population must be > 0, got {pe0}")));
    }
    let floor = LOG_FLOOR * pe0;
    let (xs, ys): (Vec<f64>, Vec<f64>) = trace
        .iter()
        .filter(|&(_, p)| p > floor)
        .map(|(t, p)| (t, (p / pe0).ln()))
        .unzip();
    if xs.len() < MIN_POINTS {
        return Err(Error::TooFewPoints(xs.len()));
    }
    let (_, slope, rms) = line_fit(&xs, &ys);
    if !(slope < 0.0) {
        return Err(Error::NonDecaying(slope));
    }
    Ok(DecayFit {
        gamma_eff: -slope,
        rms_residual: rms,
        n_points_used: xs.len(),
    })
}

/// First-order relaxation `dP/dt = −Γ(P − P_ss)` fitted to a trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelaxationFit {
    pub gamma_eff: f64,
    pub steady_state: f64,
    /// RMS residual of the derivative regression, in 1/µs.
    pub rms_residual: f64,
}

impl RelaxationFit {
    pub fn t1_eff(&self) -> f64 {
        1.0 / self.gamma_eff
    }
}

/// Regresses the central-difference derivative of `pe` on `pe`.
///
/// For `P(t) = P_ss + (P₀ − P_ss)e^{−Γt}` the derivative is exactly linear in
/// `P` with slope `−Γ`, so this recovers the relaxation rate even when the
/// population settles at a nonzero steady state, where a log fit of `P`
/// itself would not. Needs a uniform time grid.
pub fn fit_relaxation(trace: &PopulationTrace) -> Result<RelaxationFit> {
    let n = trace.len();
    if n < MIN_POINTS {
        return Err(Error::TooFewPoints(n));
    }
    let (t, p) = (trace.times(), trace.pe());
    let dt = t[1] - t[0];
    if t.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0)) {
        return Err(Error::param("times", "relaxation fit needs a uniform grid"));
    }
    // Fourth-order central differences on the interior.
    let (xs, ys): (Vec<f64>, Vec<f64>) = (2..n - 2)
        .map(|k| {
            let d = (-p[k + 2] + 8.0 * p[k + 1] - 8.0 * p[k - 1] + p[k - 2]) / (12.0 * dt);
            (p[k], d)
        })
        .unzip();
    let spread = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - xs.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(spread > 0.0) {
        return Err(Error::NonDecaying(0.0));
    }
    let (a, b, rms) = line_fit(&xs, &ys);
    // A rate that relaxes less than 1e-9 of the way over the whole trace is noise.
    if !(-b * (t[n - 1] - t[0]) > 1e-9) {
        return Err(Error::NonDecaying(b));
    }
    Ok(RelaxationFit {
        gamma_eff: -b,
        steady_state: -a / b,
        rms_residual: rms,
    })
}

/// Trapezoidal `∫₀^{t_upper} pe dt`, interpolating linearly inside the last interval.
pub fn energy_retention(trace: &PopulationTrace, t_upper: f64) -> Result<f64> {
    let end = trace.end_time();
    if trace.is_empty() || t_upper > end * (1.0 + 1e-12) {
        return Err(Error::OutOfRange {
            t_upper,
            t_end: end,
        });
    }
    let t_upper = t_upper.min(end);
    let (t, p) = (trace.times(), trace.pe());
    let mut area = 0.0;
    for k in 1..t.len() {
        if t[k] <= t_upper {
            area += 0.5 * (p[k] + p[k - 1]) * (t[k] - t[k - 1]);
        } else {
            if t[k - 1] < t_upper {
                let w = (t_upper - t[k - 1]) / (t[k] - t[k - 1]);
                let p_up = p[k - 1] + w * (p[k] - p[k - 1]);
                area += 0.5 * (p[k - 1] + p_up) * (t_upper - t[k - 1]);
            }
            break;
        }
    }
    Ok(area)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::{population_curve, table2_summary, time_grid};
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn exact_exponential_recovers_lifetime() {
        let tr = population_curve(1.0 / 50.0, 1.0, &time_grid(0.5, 250.0)).unwrap();
        let fit = fit_exponential(&tr).unwrap();
        assert!(rel(fit.t1_eff(), 50.0) < 1e-9);
        assert!(fit.rms_residual < 1e-12);
        assert_eq!(fit.n_points_used, 501);
    }

    #[test]
    fn amplitude_does_not_change_slope() {
        let tr = population_curve(0.01, 0.8, &time_grid(1.0, 300.0)).unwrap();
        assert!(rel(fit_exponential(&tr).unwrap().t1_eff(), 100.0) < 1e-9);
    }

    #[test]
    fn floor_excludes_vanishing_tail() {
        // e^{-t} over 20 time units: points beyond ln(1e4) ≈ 9.21 are dropped.
        let tr = population_curve(1.0, 1.0, &time_grid(0.1, 20.0)).unwrap();
        let fit = fit_exponential(&tr).unwrap();
        assert_eq!(fit.n_points_used, 93);
    }

    #[test]
    fn fit_errors() {
        let short = population_curve(0.1, 1.0, &time_grid(1.0, 5.0)).unwrap();
        assert!(matches!(fit_exponential(&short), Err(Error::TooFewPoints(6))));
        let flat = PopulationTrace::new(time_grid(1.0, 20.0), vec![0.5; 21]).unwrap();
        assert!(matches!(fit_exponential(&flat), Err(Error::NonDecaying(_))));
        let rising: Vec<f64> = (0..=20).map(|k| 0.1 + 0.04 * k as f64).collect();
        let rising = PopulationTrace::new(time_grid(1.0, 20.0), rising).unwrap();
        assert!(matches!(fit_exponential(&rising), Err(Error::NonDecaying(_))));
        assert!(matches!(fit_relaxation(&rising), Err(Error::NonDecaying(_))));
        let zero = PopulationTrace::new(time_grid(1.0, 20.0), vec![0.0; 21]).unwrap();
        assert!(fit_exponential(&zero).is_err());
    }

    #[test]
    fn relaxation_fit_recovers_rate_and_plateau() {
        let (rate, pss) = (0.01, 0.5);
        let times = time_grid(0.5, 500.0);
        let pe: Vec<f64> = times.iter().map(|t| pss + (1.0 - pss) * (-rate * t).exp()).collect();
        let fit = fit_relaxation(&PopulationTrace::new(times, pe).unwrap()).unwrap();
        assert!(rel(fit.gamma_eff, rate) < 1e-8, "{fit:?}");
        assert!((fit.steady_state - pss).abs() < 1e-8);
    }

    #[test]
    fn relaxation_fit_agrees_with_log_fit_on_pure_decay() {
        let tr = population_curve(0.02, 1.0, &time_grid(0.5, 250.0)).unwrap();
        let a = fit_relaxation(&tr).unwrap();
        assert!(rel(a.gamma_eff, 0.02) < 1e-8);
        assert!(a.steady_state.abs() < 1e-8);
    }

    #[test]
    fn energy_retention_examples() {
        let ones = PopulationTrace::new(time_grid(0.1, 7.0), vec![1.0; 71]).unwrap();
        assert!((energy_retention(&ones, 7.0).unwrap() - 7.0).abs() < 1e-12);
        assert!((energy_retention(&ones, 3.05).unwrap() - 3.05).abs() < 1e-12);
        assert!(matches!(
            energy_retention(&ones, 8.0),
            Err(Error::OutOfRange { .. })
        ));

        let gamma = 0.02;
        let tr = population_curve(gamma, 1.0, &time_grid(0.05, 250.0)).unwrap();
        let e = energy_retention(&tr, 5.0 / gamma).unwrap();
        let oracle = (1.0 - (-5.0f64).exp()) / gamma;
        assert!(rel(e, oracle) < 1e-6, "{e} vs {oracle}");
        assert!(rel(oracle * gamma, 0.99326) < 1e-5);
    }

    #[test]
    fn plateaus_reach_lifetime_for_every_scheme() {
        for r in table2_summary(0.02, &[0.5, 1.0], 1.84, 0.54).unwrap() {
            let t1 = r.t1_eff();
            let tr = population_curve(r.gamma_eff(), 1.0, &time_grid(t1 / 200.0, 10.0 * t1)).unwrap();
            let e = energy_retention(&tr, 10.0 * t1).unwrap();
            assert!(rel(e, t1) < 0.02, "{}: {e} vs {t1}", r.scheme);
        }
    }

    proptest! {
        #[test]
        fn log_fit_recovers_generating_rate(rate in 1e-3f64..1.0, pe0 in 0.05f64..=1.0) {
            let t1 = 1.0 / rate;
            let tr = population_curve(rate, pe0, &time_grid(t1 / 50.0, 5.0 * t1)).unwrap();
            let fit = fit_exponential(&tr).unwrap();
            prop_assert!(rel(fit.gamma_eff, rate) < 1e-9);
        }

        #[test]
        fn retention_monotone_and_bounded(rate in 1e-3f64..1.0, pe0 in 0.05f64..=1.0, frac in 0.0f64..1.0) {
            let t1 = 1.0 / rate;
            let tr = population_curve(rate, pe0, &time_grid(t1 / 100.0, 10.0 * t1)).unwrap();
            let t_a = frac * 10.0 * t1;
            let t_b = (t_a + 0.37 * t1).min(10.0 * t1);
            let ea = energy_retention(&tr, t_a).unwrap();
            let eb = energy_retention(&tr, t_b).unwrap();
            prop_assert!(eb >= ea);
            prop_assert!(eb <= pe0 * t1 * 1.02);
        }
    }
}
