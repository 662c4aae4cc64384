use avm_core::melnikov::solve_root_system;
use avm_core::persist::{epsilon_sweep, loglog_slope, Status};

use super::Outcome;
use crate::config::{config_error, require, RunConfig};
use crate::output::{header, num, Plot, Series, Sink};

/// Accepted range for the log-log slope of distance against `eps`.
const SLOPE_BAND: (f64, f64) = (0.8, 1.2);

pub fn run(cfg: &RunConfig, sink: &Sink) -> anyhow::Result<Outcome> {
    let sec = require(&cfg.persist, "persist")?;
    let params = require(&cfg.slowflow, "slowflow")?.params()?;
    if sec.eps.is_empty() {
        return Err(config_error("persist.eps must list at least one value"));
    }
    if sec.eps.windows(2).any(|w| !(w[0].abs() > w[1].abs())) {
        return Err(config_error("persist.eps must be strictly decreasing in magnitude"));
    }
    if !(sec.level > 0.0 && sec.level < 1.0) {
        return Err(config_error(format!("persist.level = {} is outside (0, 1)", sec.level)));
    }
    sec.shooting.integrator.validate().map_err(|e| config_error(format!("persist.shooting.integrator: {e}")))?;

    let rho = params.rho_for_level(sec.level);
    let mut root = solve_root_system((sec.seed_beta1, rho), &params, &sec.root_search)?;
    root.beta1_0 += sec.beta1_offset;
    let rows = epsilon_sweep(&root, &sec.eps, &params, sec.unknowns, &sec.shooting)?;

    let mut out = Outcome::default();
    let mut csv_rows = Vec::new();
    for r in &rows {
        if r.status == Status::Failed {
            out.warn(format!(
                "eps = {}: {}",
                r.eps,
                r.message.as_deref().unwrap_or("shooting failed")
            ));
        }
        let x = r.fixed_point;
        csv_rows.push(vec![
            num(r.eps),
            format!("{:?}", r.status).to_lowercase(),
            num(r.beta1),
            num(x.rho),
            num(x.theta),
            num(x.delta),
            num(r.residual),
            num(r.distance),
            num(r.floquet_moduli[0]),
            num(r.floquet_moduli[1]),
            num(r.floquet_moduli[2]),
            r.newton_iterations.to_string(),
        ]);
    }
    let slope = loglog_slope(&rows);
    let verdict = match slope {
        Some(s) if (SLOPE_BAND.0..=SLOPE_BAND.1).contains(&s) => "ok",
        Some(_) => "out-of-range",
        None => "n/a",
    };
    if verdict == "out-of-range" {
        out.warn(format!(
            "log-log slope {} lies outside [{}, {}]",
            slope.unwrap_or(f64::NAN),
            SLOPE_BAND.0,
            SLOPE_BAND.1
        ));
    }
    let mut slope_row = vec![String::new(); 12];
    slope_row[0] = "slope".into();
    slope_row[1] = verdict.into();
    slope_row[7] = slope.map(num).unwrap_or_default();
    csv_rows.push(slope_row);
    out.files.push(sink.csv(
        "persist.csv",
        &header(&[
            "eps",
            "status",
            "beta1",
            "rho_star",
            "theta_star",
            "delta_star",
            "residual",
            "distance",
            "floquet_mod_1",
            "floquet_mod_2",
            "floquet_mod_3",
            "newton_iterations",
        ]),
        &csv_rows,
    )?);

    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.status == Status::Converged && r.distance > 0.0)
        .map(|r| (r.eps.abs().log10(), r.distance.log10()))
        .collect();
    let mut plot = Plot::new("Distance to the unperturbed orbit", "log10 eps", "log10 distance");
    plot.series.push(Series {
        name: "shooting".into(),
        points: pts,
    });
    out.files.push(sink.svg("persist_distance.svg", &plot)?);
    Ok(out)
}
