use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use qfeedback::dynamics::{
    integrate_deterministic, run_ensemble, Generator, PopulationTrace, SchemeKind, SchemeSpec,
};
use qfeedback::fit::{energy_retention, fit_exponential, fit_relaxation};
use qfeedback::predictor::{build_dataset, fit_predictor, MlpModel};
use qfeedback::rates::{self, population_curve, table2_summary, time_grid, Scheme};

use crate::config::ExperimentConfig;
use crate::csvio::{self, RateRow};
use crate::Failure;

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(format!("cannot create {}", dir.display()), e))
}

pub fn rate_rows(cfg: &ExperimentConfig) -> Result<Vec<RateRow>, Failure> {
    let a = &cfg.analytic_rates;
    let table = table2_summary(a.gamma, &a.etas, a.cooperativity, a.correlation)
        .map_err(|e| Failure::from_lib("rate table", e))?;
    Ok(table
        .iter()
        .map(|r| RateRow {
            scheme: r.scheme.label(),
            gamma_eff_per_us: r.gamma_eff(),
            t1_us: r.t1_eff(),
        })
        .collect())
}

pub fn format_rate_table(rows: &[RateRow]) -> String {
    let mut s = format!("{:<14} {:>16} {:>10}\n", "scheme", "gamma_eff (1/us)", "T1 (us)");
    for r in rows {
        let _ = writeln!(s, "{:<14} {:>16.6e} {:>10.2}", r.scheme, r.gamma_eff_per_us, r.t1_us);
    }
    s
}

/// Prints the closed-form lifetime table and writes `rates.csv`.
pub fn cmd_rates(cfg: &ExperimentConfig) -> Result<String, Failure> {
    let rows = rate_rows(cfg)?;
    ensure_dir(cfg.out_dir())?;
    csvio::write_rates(&cfg.out_dir().join("rates.csv"), &rows)?;
    Ok(format_rate_table(&rows))
}

fn decimate(trace: &PopulationTrace, period: f64) -> (Vec<f64>, Vec<f64>) {
    let dt = trace.times()[1] - trace.times()[0];
    let stride = ((period / dt).round() as usize).max(1);
    trace.iter().step_by(stride).unzip()
}

struct NumericRun {
    label: String,
    spec: SchemeSpec,
    trace: PopulationTrace,
}

fn numeric_runs(cfg: &ExperimentConfig) -> Result<Vec<NumericRun>, Failure> {
    let mut specs = vec![("no_feedback".to_owned(), cfg.no_feedback_spec())];
    for &eta in &cfg.analytic_rates.etas {
        specs.push((Scheme::wiseman_milburn(eta).label(), cfg.wm_spec(eta)));
    }
    for &ratio in &cfg.dynamics.kappa_over_g {
        specs.push((format!("ancilla_kg_{ratio}"), cfg.ancilla_spec(ratio)));
    }
    specs
        .into_iter()
        .map(|(label, spec)| {
            let tc = cfg.trajectory_for(&spec);
            log::info!("integrating {label} with dt = {:.3e} us", tc.dt);
            let trace = integrate_deterministic(Generator::default_for(spec.kind), &spec, &tc)
                .map_err(|e| Failure::from_lib(format!("scheme {label}"), e))?;
            Ok(NumericRun { label, spec, trace })
        })
        .collect()
}

/// Summary of files written by [`cmd_simulate`].
#[derive(Debug, Default)]
pub struct SimulateReport {
    pub files: Vec<PathBuf>,
}

/// Writes `pe_<scheme>.csv` for the integrated schemes, `pe_analytic_<scheme>.csv`
/// for the closed-form curves and, with `records`, the homodyne ensemble.
pub fn cmd_simulate(cfg: &ExperimentConfig, records: bool) -> Result<SimulateReport, Failure> {
    let out = cfg.out_dir();
    ensure_dir(out)?;
    let period = cfg.trajectory.sample_period;
    let mut report = SimulateReport::default();

    for run in numeric_runs(cfg)? {
        let (t, p) = decimate(&run.trace, period);
        let path = out.join(format!("pe_{}.csv", run.label));
        csvio::write_columns(&path, &t, &["pe"], &[&p])?;
        report.files.push(path);
    }

    let grid = time_grid(period, cfg.trajectory.t_final);
    for row in rate_rows(cfg)? {
        let curve = population_curve(row.gamma_eff_per_us, 1.0, &grid)
            .map_err(|e| Failure::from_lib(format!("analytic curve {}", row.scheme), e))?;
        let path = out.join(format!("pe_analytic_{}.csv", row.scheme));
        csvio::write_columns(&path, curve.times(), &["pe"], &[curve.pe()])?;
        report.files.push(path);
    }

    if records {
        let spec = match cfg.trajectory.scheme {
            SchemeKind::WisemanMilburn => {
                cfg.wm_spec(*cfg.analytic_rates.etas.last().expect("validated non-empty"))
            }
            _ => cfg.no_feedback_spec(),
        };
        let tc = cfg.trajectory_for(&spec);
        let ens = run_ensemble(&spec, &tc, period)
            .map_err(|e| Failure::from_lib("homodyne ensemble", e))?;
        let path = out.join("pe_sme_mean.csv");
        csvio::write_columns(
            &path,
            ens.mean.times(),
            &["pe", "std_err"],
            &[ens.mean.pe(), &ens.std_err],
        )?;
        report.files.push(path);
        let dir = out.join("records");
        ensure_dir(&dir)?;
        for (k, rec) in ens.records.iter().enumerate() {
            let path = dir.join(format!("current_{k:04}.csv"));
            csvio::write_record(&path, rec)?;
            report.files.push(path);
        }
    }
    Ok(report)
}

/// Minimum record length accepted for training.
pub const MIN_RECORD: usize = 100;

/// Trains the predictor on a `time_us,current` record and writes `model.json`.
pub fn cmd_train(cfg: &ExperimentConfig, record_path: &Path) -> Result<String, Failure> {
    let record = csvio::read_record(record_path)?;
    if record.len() < MIN_RECORD {
        return Err(Failure::Config(format!(
            "{}: record has {} samples, need at least {MIN_RECORD}",
            record_path.display(),
            record.len()
        )));
    }
    let dataset = build_dataset(&record).map_err(|e| Failure::from_lib("dataset", e))?;
    let model = fit_predictor(&dataset, &cfg.predictor)
        .map_err(|e| Failure::from_lib("training", e))?;
    ensure_dir(cfg.out_dir())?;
    let path = cfg.out_dir().join("model.json");
    fs::write(&path, model.to_json())
        .map_err(|e| Failure::io(format!("cannot write {}", path.display()), e))?;
    Ok(training_report(&model, &path))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |x| format!("{x:.6e}"))
}

fn training_report(model: &MlpModel, path: &Path) -> String {
    let m = &model.metadata;
    let mut s = String::new();
    let _ = writeln!(s, "epochs run          {}", m.epochs_run);
    let _ = writeln!(s, "best epoch          {}", m.best_epoch);
    let _ = writeln!(s, "train MSE           {}", fmt_opt(m.train_mse));
    let _ = writeln!(s, "validation MSE      {}", fmt_opt(m.best_val_mse));
    let _ = writeln!(s, "test MSE            {}", fmt_opt(m.test_mse));
    let _ = writeln!(s, "last-value MSE      {}", fmt_opt(m.baseline_test_mse));
    let _ = writeln!(
        s,
        "test r              {}",
        m.test_r.map_or_else(|| "undefined".to_owned(), |r| format!("{r:.4}"))
    );
    let _ = writeln!(s, "model               {}", path.display());
    s
}

/// One line of the numerical-versus-closed-form comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub scheme: String,
    pub method: &'static str,
    pub gamma_fit: f64,
    pub gamma_closed: f64,
}

impl Comparison {
    pub fn deviation_percent(&self) -> f64 {
        100.0 * (self.gamma_fit - self.gamma_closed) / self.gamma_closed
    }
}

/// Energy retention `E(10·T1)` of a closed-form curve.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub scheme: String,
    pub t1: f64,
    pub energy: f64,
}

pub fn compare(cfg: &ExperimentConfig) -> Result<(Vec<Comparison>, Vec<Plateau>), Failure> {
    let a = &cfg.analytic_rates;
    let mut rows = Vec::new();
    for run in numeric_runs(cfg)? {
        let ctx = |e| Failure::from_lib(format!("fit of {}", run.label), e);
        let (method, gamma_fit, gamma_closed) = match run.spec.kind {
            SchemeKind::NoFeedback => ("log", fit_exponential(&run.trace).map_err(ctx)?.gamma_eff, a.gamma),
            SchemeKind::WisemanMilburn => (
                "relax",
                fit_relaxation(&run.trace).map_err(ctx)?.gamma_eff,
                rates::gamma_wm(a.gamma, run.spec.eta, run.spec.lambda),
            ),
            SchemeKind::AncillaCoherent => (
                "log",
                fit_exponential(&run.trace).map_err(ctx)?.gamma_eff,
                rates::gamma_ancilla(a.gamma, a.cooperativity),
            ),
        };
        rows.push(Comparison {
            scheme: run.label,
            method,
            gamma_fit,
            gamma_closed,
        });
    }

    let mut plateaus = Vec::new();
    for row in rate_rows(cfg)? {
        let t1 = row.t1_us;
        let curve = population_curve(row.gamma_eff_per_us, 1.0, &time_grid(t1 / 1000.0, 10.0 * t1))
            .map_err(|e| Failure::from_lib(format!("curve {}", row.scheme), e))?;
        let energy = energy_retention(&curve, 10.0 * t1)
            .map_err(|e| Failure::from_lib(format!("energy retention {}", row.scheme), e))?;
        plateaus.push(Plateau {
            scheme: row.scheme,
            t1,
            energy,
        });
    }
    Ok((rows, plateaus))
}

/// Prints fitted against closed-form rates and the energy-retention plateaus,
/// writing `compare.csv` and `energy_<scheme>.csv`.
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<String, Failure> {
    let (rows, plateaus) = compare(cfg)?;
    let out = cfg.out_dir();
    ensure_dir(out)?;

    let mut s = format!(
        "{:<18} {:<6} {:>14} {:>14} {:>10}\n",
        "scheme", "fit", "gamma_fit", "gamma_closed", "dev (%)"
    );
    for r in &rows {
        let _ = writeln!(
            s,
            "{:<18} {:<6} {:>14.6e} {:>14.6e} {:>10.3}",
            r.scheme,
            r.method,
            r.gamma_fit,
            r.gamma_closed,
            r.deviation_percent()
        );
    }
    let _ = writeln!(s, "\n{:<14} {:>10} {:>14}", "scheme", "T1 (us)", "E(10 T1) (us)");
    for p in &plateaus {
        let _ = writeln!(s, "{:<14} {:>10.2} {:>14.2}", p.scheme, p.t1, p.energy);
    }

    let path = out.join("compare.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| Failure::io(format!("cannot create {}", path.display()), e))?;
    let werr = |e: csv::Error| Failure::io(format!("cannot write {}", path.display()), e);
    w.write_record(["scheme", "method", "gamma_fit_per_us", "gamma_closed_per_us", "deviation_percent"])
        .map_err(werr)?;
    for r in &rows {
        w.write_record([
            r.scheme.clone(),
            r.method.to_owned(),
            r.gamma_fit.to_string(),
            r.gamma_closed.to_string(),
            r.deviation_percent().to_string(),
        ])
        .map_err(werr)?;
    }
    w.flush().map_err(|e| Failure::io(format!("cannot write {}", path.display()), e))?;

    for p in &plateaus {
        let grid = time_grid(p.t1 / 10.0, 10.0 * p.t1);
        let curve = population_curve(1.0 / p.t1, 1.0, &time_grid(p.t1 / 1000.0, 10.0 * p.t1))
            .map_err(|e| Failure::from_lib("energy curve", e))?;
        let e: Vec<f64> = grid
            .iter()
            .map(|&t| energy_retention(&curve, t))
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::from_lib("energy curve", e))?;
        csvio::write_columns(&out.join(format!("energy_{}.csv", p.scheme)), &grid, &["energy_us"], &[&e])?;
    }
    Ok(s)
}
