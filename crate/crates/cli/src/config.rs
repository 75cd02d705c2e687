//! Experiment configuration: a TOML file with one table per stage, with
//! command-line overrides applied on top.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use qfeedback::dynamics::{FeedbackAxis, SchemeKind, SchemeSpec, TrajectoryConfig};
use qfeedback::predictor::Hyperparams;
use qfeedback::rates;
use serde::Deserialize;

use crate::Failure;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticRates {
    /// Bare decay rate, 1/µs.
    pub gamma: f64,
    pub etas: Vec<f64>,
    pub cooperativity: f64,
    /// Predictor correlation fed into the ML-renormalised rate.
    pub correlation: f64,
}

impl Default for AnalyticRates {
    fn default() -> Self {
        Self {
            gamma: 0.02,
            etas: vec![0.5, 1.0],
            cooperativity: 1.84,
            correlation: 0.54,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dynamics {
    pub omega_s: f64,
    pub omega_a: f64,
    pub phi_lo: f64,
    pub axis: FeedbackAxis,
    /// Ancilla linewidth over coupling; `g` then follows from the cooperativity.
    pub kappa_over_g: Vec<f64>,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self {
            omega_s: 0.0,
            omega_a: 0.0,
            phi_lo: PI,
            axis: FeedbackAxis::Y,
            kappa_over_g: vec![10.0, 30.0, 100.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Trajectory {
    pub dt: f64,
    pub t_final: f64,
    pub seed: u64,
    pub n_trajectories: usize,
    /// Loop delay τ: spacing of exported traces and homodyne records.
    pub sample_period: f64,
    pub scheme: SchemeKind,
}

impl Default for Trajectory {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_final: 250.0,
            seed: 0,
            n_trajectories: 100,
            sample_period: 1.0,
            scheme: SchemeKind::NoFeedback,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Output {
    pub dir: PathBuf,
}

impl Default for Output {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub analytic_rates: AnalyticRates,
    pub dynamics: Dynamics,
    pub trajectory: Trajectory,
    pub predictor: Hyperparams,
    pub output: Output,
    #[serde(skip)]
    source: String,
    #[serde(skip)]
    overridden: BTreeSet<(&'static str, &'static str)>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub gamma: Option<f64>,
    pub etas: Option<Vec<f64>>,
    pub cooperativity: Option<f64>,
    pub correlation: Option<f64>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub n_trajectories: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, Failure> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|s| format!("line {}: ", line_of_offset(text, s.start)))
                .unwrap_or_default();
            Failure::Config(format!("{at}{}", e.message()))
        })?;
        cfg.source = text.to_owned();
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Failure::Io(anyhow::anyhow!("cannot read config {}: {e}", p.display()))
                })?;
                Self::from_toml(&text).map_err(|f| match f {
                    Failure::Config(m) => Failure::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        let mut set = |section, key| {
            self.overridden.insert((section, key));
        };
        if o.gamma.is_some() {
            set("analytic_rates", "gamma");
        }
        if o.etas.is_some() {
            set("analytic_rates", "etas");
        }
        if o.cooperativity.is_some() {
            set("analytic_rates", "cooperativity");
        }
        if o.correlation.is_some() {
            set("analytic_rates", "correlation");
        }
        if o.dt.is_some() {
            set("trajectory", "dt");
        }
        if o.t_final.is_some() {
            set("trajectory", "t_final");
        }
        if o.n_trajectories.is_some() {
            set("trajectory", "n_trajectories");
        }
        let a = &mut self.analytic_rates;
        a.gamma = o.gamma.unwrap_or(a.gamma);
        a.cooperativity = o.cooperativity.unwrap_or(a.cooperativity);
        a.correlation = o.correlation.unwrap_or(a.correlation);
        if let Some(e) = &o.etas {
            a.etas = e.clone();
        }
        let t = &mut self.trajectory;
        t.dt = o.dt.unwrap_or(t.dt);
        t.t_final = o.t_final.unwrap_or(t.t_final);
        t.n_trajectories = o.n_trajectories.unwrap_or(t.n_trajectories);
        if let Some(seed) = o.seed {
            t.seed = seed;
            self.predictor.seed = seed;
        }
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
    }

    /// Checks every parameter; the message names the offending line when the
    /// value came from the file.
    pub fn validate(&self) -> Result<(), Failure> {
        let mut problems = Vec::new();
        let mut check = |ok: bool, section: &'static str, key: &'static str, msg: String| {
            if !ok {
                problems.push(self.locate(section, key, &msg));
            }
        };
        let a = &self.analytic_rates;
        check(
            a.gamma > 0.0 && a.gamma.is_finite(),
            "analytic_rates",
            "gamma",
            format!("must be > 0, got {}", a.gamma),
        );
        check(!a.etas.is_empty(), "analytic_rates", "etas", "needs at least one efficiency".into());
        if let Some(bad) = a.etas.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            check(false, "analytic_rates", "etas", format!("{bad} is outside [0, 1]"));
        }
        check(
            a.cooperativity >= 0.0 && a.cooperativity.is_finite(),
            "analytic_rates",
            "cooperativity",
            format!("must be >= 0, got {}", a.cooperativity),
        );
        check(
            (0.0..1.0).contains(&a.correlation),
            "analytic_rates",
            "correlation",
            format!("must lie in [0, 1) for a finite lifetime, got {}", a.correlation),
        );

        let d = &self.dynamics;
        for (key, v) in [("omega_s", d.omega_s), ("omega_a", d.omega_a), ("phi_lo", d.phi_lo)] {
            check(v.is_finite(), "dynamics", key, format!("must be finite, got {v}"));
        }
        check(
            !d.kappa_over_g.is_empty() && d.kappa_over_g.iter().all(|k| *k > 0.0 && k.is_finite()),
            "dynamics",
            "kappa_over_g",
            "needs one or more positive ratios".into(),
        );

        let t = &self.trajectory;
        check(t.dt > 0.0 && t.dt.is_finite(), "trajectory", "dt", format!("must be > 0, got {}", t.dt));
        check(
            t.t_final >= t.dt && t.t_final.is_finite(),
            "trajectory",
            "t_final",
            format!("must be at least dt, got {}", t.t_final),
        );
        check(t.n_trajectories >= 1, "trajectory", "n_trajectories", "must be at least 1".into());
        let per = t.sample_period / t.dt;
        check(
            t.sample_period > 0.0 && per >= 1.0 && (per - per.round()).abs() < 1e-9 * per,
            "trajectory",
            "sample_period",
            format!("{} is not a positive multiple of dt = {}", t.sample_period, t.dt),
        );
        check(
            t.sample_period <= t.t_final,
            "trajectory",
            "sample_period",
            "exceeds t_final".into(),
        );
        check(
            t.scheme != SchemeKind::AncillaCoherent,
            "trajectory",
            "scheme",
            "homodyne trajectories support no_feedback and wiseman_milburn".into(),
        );
        if a.gamma > 0.0 && t.dt > 0.0 {
            let limit = 0.01 / a.gamma.max(d.omega_s.abs()).max(d.omega_a.abs());
            check(
                t.dt <= limit,
                "trajectory",
                "dt",
                format!("{} exceeds the stability limit {limit:.3e} us", t.dt),
            );
        }

        if let Err(e) = self.predictor.validate() {
            let key = match &e {
                qfeedback::Error::InvalidParameter { name, .. } => *name,
                _ => "learning_rate",
            };
            check(false, "predictor", key, e.to_string());
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(Failure::Config(problems.join("\n")))
        }
    }

    fn locate(&self, section: &str, key: &str, msg: &str) -> String {
        if self.overridden.iter().any(|&(s, k)| s == section && k == key) {
            return format!("--{}: {msg}", key.replace('_', "-"));
        }
        match find_key_line(&self.source, section, key) {
            Some(line) => format!("line {line}: [{section}] {key}: {msg}"),
            None => format!("[{section}] {key}: {msg}"),
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.output.dir
    }

    pub fn no_feedback_spec(&self) -> SchemeSpec {
        SchemeSpec {
            omega_s: self.dynamics.omega_s,
            ..SchemeSpec::no_feedback(self.analytic_rates.gamma)
        }
    }

    /// Optimal-gain feedback at efficiency `eta`.
    pub fn wm_spec(&self, eta: f64) -> SchemeSpec {
        let gamma = self.analytic_rates.gamma;
        SchemeSpec {
            omega_s: self.dynamics.omega_s,
            phi_lo: self.dynamics.phi_lo,
            axis: self.dynamics.axis,
            ..SchemeSpec::wiseman_milburn(gamma, eta, rates::optimal_lambda(gamma, eta))
        }
    }

    /// Ancilla with the configured cooperativity and linewidth `ratio·g`.
    pub fn ancilla_spec(&self, ratio: f64) -> SchemeSpec {
        let a = &self.analytic_rates;
        // κ = ratio·g and C = 4g²/(κγ) give g = C·ratio·γ/4.
        let g = a.cooperativity * ratio * a.gamma / 4.0;
        SchemeSpec {
            omega_s: self.dynamics.omega_s,
            omega_a: self.dynamics.omega_a,
            ..SchemeSpec::ancilla(a.gamma, g, ratio * g)
        }
    }

    /// Trajectory settings for `spec`, shrinking `dt` when the scheme's fastest
    /// rate demands it while keeping the sampling period a whole number of steps.
    pub fn trajectory_for(&self, spec: &SchemeSpec) -> TrajectoryConfig {
        let t = &self.trajectory;
        let max_dt = t.dt.min(0.01 / spec.fastest_rate());
        let per_sample = (t.sample_period / max_dt).ceil().max(1.0);
        let dt = t.sample_period / per_sample;
        TrajectoryConfig::new(dt, t.t_final)
            .with_seed(t.seed)
            .with_trajectories(t.n_trajectories)
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// 1-based line of `key = …` inside `[section]`.
fn find_key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim().to_owned();
            continue;
        }
        if current == section {
            if let Some(rest) = trimmed.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}
