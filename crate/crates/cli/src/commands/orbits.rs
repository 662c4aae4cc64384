use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use avm_core::slowflow::{first_integral, integrate_orbit_tau2, measure_period_tau2, period_tau2, OrbitFamilyPoint};

use super::Outcome;
use crate::config::{config_error, require, RunConfig};
use crate::output::{header, num, Plot, Series, Sink};

/// Starting angles this close to `pi/4` sit on the equilibrium.
const EQUILIBRIUM_TOL: f64 = 1e-12;

pub fn run(cfg: &RunConfig, sink: &Sink) -> anyhow::Result<Outcome> {
    let sec = require(&cfg.orbits, "orbits")?;
    if sec.theta0.is_empty() {
        return Err(config_error("orbits.theta0 must list at least one angle"));
    }
    if let Some(bad) = sec.theta0.iter().find(|t| !(**t > 0.0 && **t <= FRAC_PI_4 + EQUILIBRIUM_TOL)) {
        return Err(config_error(format!("orbits.theta0: {bad} is outside (0, pi/4]")));
    }
    if !(sec.periods > 0.0 && sec.periods.is_finite()) {
        return Err(config_error("orbits.periods must be positive"));
    }
    if sec.samples < 2 {
        return Err(config_error("orbits.samples must be at least 2"));
    }
    cfg.integrator.validate().map_err(|e| config_error(format!("[integrator]: {e}")))?;

    let mut out = Outcome::default();
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut time_plot = Plot::new("theta along the unforced orbits", "tau2", "theta");
    let mut phase_plot = Plot::new("Phase portrait", "theta", "Delta");
    phase_plot.x_range = Some((0.0, FRAC_PI_2));
    phase_plot.y_range = Some((0.0, PI));

    for &theta0 in &sec.theta0 {
        let label = format!("theta0 = {theta0:.4}");
        if (theta0 - FRAC_PI_4).abs() <= EQUILIBRIUM_TOL {
            let count = (sec.samples as f64 * sec.periods).ceil() as usize;
            let span = sec.periods * PI;
            let mut pts = Vec::new();
            for i in 0..count.max(2) {
                let t = span * i as f64 / (count.max(2) - 1) as f64;
                rows.push(vec![num(theta0), num(t), num(FRAC_PI_4), num(FRAC_PI_2), num(1.0)]);
                pts.push((t, FRAC_PI_4));
            }
            summary.push(vec![
                num(theta0),
                num(1.0),
                "equilibrium".into(),
                String::new(),
                num(PI),
                String::new(),
                num(0.0),
            ]);
            time_plot.series.push(Series { name: label.clone(), points: pts });
            phase_plot.series.push(Series {
                name: label,
                points: vec![(FRAC_PI_4 - 0.01, FRAC_PI_2), (FRAC_PI_4 + 0.01, FRAC_PI_2)],
            });
            continue;
        }
        let level = (2.0 * theta0).sin();
        let period = period_tau2(level)?;
        let traj = integrate_orbit_tau2(theta0, sec.periods * period, &cfg.integrator)?;
        let count = ((sec.samples as f64) * sec.periods).ceil() as usize;
        let samples = traj.sample_uniform(count.max(2));
        let mut drift = 0.0_f64;
        for (t, y) in &samples {
            let i = first_integral(y[0], y[1]);
            drift = drift.max((i - level).abs());
            rows.push(vec![num(theta0), num(*t), num(y[0]), num(y[1]), num(i)]);
        }
        let measured = measure_period_tau2(theta0, &cfg.integrator)?;
        let rel = measured / period - 1.0;
        if rel.abs() > 1e-6 {
            out.warn(format!("theta0 = {theta0}: measured period off by {rel:e} (relative)"));
        }
        summary.push(vec![
            num(theta0),
            num(level),
            "orbit".into(),
            num(measured),
            num(period),
            num(rel),
            num(drift),
        ]);
        time_plot.series.push(Series {
            name: label.clone(),
            points: samples.iter().map(|(t, y)| (*t, y[0])).collect(),
        });
        phase_plot.series.push(Series {
            name: label,
            points: samples.iter().map(|(_, y)| (y[0], y[1])).collect(),
        });
    }

    out.files.push(sink.csv("orbits.csv", &header(&["theta0", "tau2", "theta", "delta", "first_integral"]), &rows)?);
    out.files.push(sink.csv(
        "orbit_periods.csv",
        &header(&["theta0", "level", "kind", "period_measured", "period_predicted", "rel_error", "first_integral_drift"]),
        &summary,
    )?);
    out.files.push(sink.svg("orbits_theta.svg", &time_plot)?);
    out.files.push(sink.svg("orbits_phase.svg", &phase_plot)?);

    if let Some(grid) = &sec.family_rho {
        let sf = require(&cfg.slowflow, "slowflow")?;
        let params = sf.params()?;
        let mut rows = Vec::new();
        for rho in grid.nodes("orbits.family_rho")? {
            match OrbitFamilyPoint::new(rho, &params) {
                Ok(p) => rows.push(vec![num(rho), num(p.level), num(p.threshold_margin(&params))]),
                Err(_) => rows.push(vec![num(rho), String::new(), num(rho - params.threshold_rho())]),
            }
        }
        out.files.push(sink.csv("family.csv", &header(&["rho", "level", "threshold_margin"]), &rows)?);
    }
    Ok(out)
}
