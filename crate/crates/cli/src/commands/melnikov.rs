use std::f64::consts::TAU;

use avm_core::melnikov::{continue_all_roots, melnikov_table, solve_root_system, MelnikovRoot, RootSearchSpec};
use avm_core::slowflow::SlowFlowParams;
use serde_json::{json, Map, Value};

use super::Outcome;
use crate::config::{config_error, require, RunConfig};
use crate::output::{header, num, Plot, Series, Sink};

/// `|det_con1|` below this is flagged as numerically zero.
const CON1_FLAG: f64 = 1e-8;

pub fn run(cfg: &RunConfig, sink: &Sink) -> anyhow::Result<Outcome> {
    let sec = require(&cfg.melnikov, "melnikov")?;
    let params = require(&cfg.slowflow, "slowflow")?.params()?;
    let betas = sec.beta1.nodes("melnikov.beta1")?;
    let rhos = sec.rhos(&params)?;
    let threshold = params.threshold_rho();
    if let Some(bad) = rhos.iter().find(|r| !(**r > threshold)) {
        return Err(config_error(format!(
            "melnikov: rho = {bad} is not above the family threshold {threshold}"
        )));
    }
    let mut search = sec.roots.search;
    if let Some(q) = cfg.quadrature {
        search.quadrature = q;
    }
    search.quadrature.validate().map_err(|e| config_error(format!("[quadrature]: {e}")))?;

    let mut out = Outcome::default();
    let table = melnikov_table(&betas, &rhos, &params, &search.quadrature)?;
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                num(r.beta1),
                num(r.rho),
                num(r.bar.m11),
                num(r.bar.m12),
                num(r.bar.m21),
                num(r.bar.m22),
                num(r.tilde),
            ]
        })
        .collect();
    out.files.push(sink.csv(
        "melnikov_table.csv",
        &header(&["beta1", "rho", "M11", "M12", "M21", "M22", "Mtilde"]),
        &rows,
    )?);

    let mut plot = Plot::new("Mtilde over the phase grid", "beta1", "Mtilde");
    for (ri, rho) in rhos.iter().enumerate() {
        plot.series.push(Series {
            name: format!("K = {:.3e}", params.level_for_rho(*rho)),
            points: (0..betas.len()).map(|bi| (betas[bi], table.get(bi, ri).tilde)).collect(),
        });
    }
    out.files.push(sink.svg("melnikov_tilde.svg", &plot)?);

    let mut records = Vec::new();
    if sec.roots.grid {
        for (ri, &rho) in rhos.iter().enumerate() {
            let tilde: Vec<f64> = (0..betas.len()).map(|bi| table.get(bi, ri).tilde).collect();
            let mut found: Vec<MelnikovRoot> = Vec::new();
            for (seed, half) in grid_seeds(&betas, &tilde, search.root.residual_tol) {
                let local = RootSearchSpec { bracket: half, ..search };
                match solve_root_system((seed, rho), &params, &local) {
                    Ok(r) => {
                        if !found.iter().any(|f| same_phase(f.beta1_0, r.beta1_0)) {
                            found.push(r);
                        }
                    }
                    Err(e) => out.warn(format!("root near beta1 = {seed} at rho = {rho}: {e}")),
                }
            }
            records.extend(found.iter().map(|r| record(r, "grid", r.beta1_0, &params)));
        }
    }
    if sec.roots.continuation {
        for (name, level) in [("start_level", sec.roots.start_level), ("stop_level", sec.roots.stop_level)] {
            if !(level > 0.0 && level < 1.0) {
                return Err(config_error(format!("melnikov.roots.{name} = {level} is outside (0, 1)")));
            }
        }
        let start = params.rho_for_level(sec.roots.start_level);
        let stop = params.rho_for_level(sec.roots.stop_level);
        for branch in continue_all_roots(start, stop, &params, &search)? {
            if let Some(why) = &branch.stopped {
                out.warn(format!("continuation from beta1 = {} stopped: {why}", branch.seed_beta1));
            }
            records.extend(branch.roots.iter().map(|r| record(r, "continuation", branch.seed_beta1, &params)));
        }
    }
    let flagged = records
        .iter()
        .filter(|r| r.get("con1_near_zero") == Some(&Value::Bool(true)))
        .count();
    if flagged > 0 {
        out.warn(format!("{flagged} of {} roots have |det_con1| < {CON1_FLAG:e}", records.len()));
    }
    out.files.push(sink.json("melnikov_roots.json", records)?);
    Ok(out)
}

/// Seeds for the scalar root search: grid nodes where `Mtilde` already
/// vanishes, and midpoints of cells where it changes sign. Each seed comes
/// with the half-width of its cell.
fn grid_seeds(betas: &[f64], tilde: &[f64], tol: f64) -> Vec<(f64, f64)> {
    let zero = |v: f64| v.abs() <= tol;
    let spacing = |i: usize| {
        let l = if i > 0 { betas[i] - betas[i - 1] } else { f64::INFINITY };
        let r = if i + 1 < betas.len() { betas[i + 1] - betas[i] } else { f64::INFINITY };
        let h = 0.5 * l.min(r);
        if h.is_finite() { h } else { 0.1 }
    };
    let mut seeds = Vec::new();
    for i in 0..betas.len() {
        if zero(tilde[i]) {
            seeds.push((betas[i], spacing(i)));
        } else if i + 1 < betas.len() && !zero(tilde[i + 1]) && tilde[i] * tilde[i + 1] < 0.0 {
            seeds.push((0.5 * (betas[i] + betas[i + 1]), 0.5 * (betas[i + 1] - betas[i])));
        }
    }
    seeds
}

fn same_phase(a: f64, b: f64) -> bool {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d) <= 1e-8
}

fn record(r: &MelnikovRoot, source: &str, seed: f64, params: &SlowFlowParams) -> Map<String, Value> {
    let v = json!({
        "source": source,
        "harmonic": params.harmonic,
        "base_freq": params.base_freq,
        "seed_beta1": seed,
        "beta1_0": r.beta1_0,
        "rho_0": r.rho_0,
        "level": r.level,
        "mu1_0": r.mu1_0,
        "mu2_0": r.mu2_0,
        "branch": format!("{:?}", r.branch()).to_lowercase(),
        "det_con1": r.det_con1,
        "con1_near_zero": r.det_con1.abs() < CON1_FLAG,
        "tilde_residual": r.tilde_residual,
        "null_residual": r.null_residual,
        "sigma_min": r.singular_values[0],
        "sigma_max": r.singular_values[1],
        "degenerate": r.degenerate,
        "M11": r.bar.m11,
        "M12": r.bar.m12,
        "M21": r.bar.m21,
        "M22": r.bar.m22,
    });
    match v {
        Value::Object(m) => m,
        _ => unreachable!(),
    }
}
