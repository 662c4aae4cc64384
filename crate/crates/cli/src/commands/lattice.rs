use avm_core::lattice::{
    exact_lattice_field, lattice_energy, nnm_shape, reduced_energy, reduced_field, LatticeConfig, LatticeState,
};
use avm_core::numerics::integrate;

use super::Outcome;
use crate::config::{config_error, require, LatticeModel, RunConfig};
use crate::output::{header, num, Plot, Series, Sink};

pub fn run(cfg: &RunConfig, sink: &Sink) -> anyhow::Result<Outcome> {
    let sec = require(&cfg.lattice, "lattice")?;
    let lattice = LatticeConfig::new(sec.n, sec.damping, sec.forcing.clone()).map_err(|e| config_error(format!("[lattice]: {e}")))?;
    let shape = nnm_shape(sec.mode, sec.n).map_err(|e| config_error(format!("lattice.mode: {e}")))?;
    if !(sec.horizon > 0.0 && sec.horizon.is_finite()) {
        return Err(config_error(format!("lattice.horizon must be positive and finite, got {}", sec.horizon)));
    }
    if !sec.amplitude.is_finite() {
        return Err(config_error("lattice.amplitude must be finite"));
    }
    if sec.samples < 2 {
        return Err(config_error("lattice.samples must be at least 2"));
    }
    cfg.integrator.validate().map_err(|e| config_error(format!("[integrator]: {e}")))?;

    let n = sec.n;
    let w0: Vec<f64> = shape.iter().map(|v| sec.amplitude * v).collect();
    let span = (0.0, sec.horizon);
    let mut out = Outcome::default();
    let mut energy_cols = vec!["tau".to_string()];
    let mut energy: Vec<Vec<f64>> = Vec::new();
    let mut plot = Plot::new("Transverse displacements", "tau", "w_i");
    let mut exact_w: Option<Vec<Vec<f64>>> = None;

    if matches!(sec.model, LatticeModel::Exact | LatticeModel::Both) {
        let start = LatticeState::transverse(w0.clone());
        let traj = integrate(exact_lattice_field(&lattice), &start.to_vec(), span, &cfg.integrator)?;
        let samples = traj.sample_uniform(sec.samples);
        let mut cols = vec!["tau".to_string()];
        cols.extend((1..=n).map(|i| format!("s{i}")));
        cols.extend((1..=n).map(|i| format!("w{i}")));
        let width = if sec.velocities { 4 * n } else { 2 * n };
        if sec.velocities {
            cols.extend((1..=n).map(|i| format!("ds{i}")));
            cols.extend((1..=n).map(|i| format!("dw{i}")));
        }
        let rows: Vec<Vec<String>> = samples
            .iter()
            .map(|(t, y)| std::iter::once(*t).chain(y[..width].iter().copied()).map(num).collect())
            .collect();
        out.files.push(sink.csv("lattice_exact.csv", &cols, &rows)?);

        let e0 = lattice_energy(&start)?;
        energy_cols.extend(["energy_exact".to_string(), "drift_exact".to_string()]);
        for (t, y) in &samples {
            let e = lattice_energy(&LatticeState::from_slice(n, y)?)?;
            energy.push(vec![*t, e, e - e0]);
        }
        for i in 0..n {
            plot.series.push(Series {
                name: format!("w{} exact", i + 1),
                points: samples.iter().map(|(t, y)| (*t, y[n + i])).collect(),
            });
        }
        exact_w = Some(samples.iter().map(|(_, y)| y[n..2 * n].to_vec()).collect());
    }

    if matches!(sec.model, LatticeModel::Reduced | LatticeModel::Both) {
        let mut y0 = w0.clone();
        y0.extend(std::iter::repeat_n(0.0, n));
        let traj = integrate(reduced_field(&lattice), &y0, span, &cfg.integrator)?;
        let samples = traj.sample_uniform(sec.samples);
        let mut cols = vec!["tau".to_string()];
        cols.extend((1..=n).map(|i| format!("w{i}")));
        if sec.velocities {
            cols.extend((1..=n).map(|i| format!("dw{i}")));
        }
        let width = if sec.velocities { 2 * n } else { n };
        let rows: Vec<Vec<String>> = samples
            .iter()
            .map(|(t, y)| std::iter::once(*t).chain(y[..width].iter().copied()).map(num).collect())
            .collect();
        out.files.push(sink.csv("lattice_reduced.csv", &cols, &rows)?);

        let e0 = reduced_energy(&y0[..n], &y0[n..]);
        energy_cols.extend(["energy_reduced".to_string(), "drift_reduced".to_string()]);
        for (j, (t, y)) in samples.iter().enumerate() {
            let e = reduced_energy(&y[..n], &y[n..]);
            match energy.get_mut(j) {
                Some(row) => row.extend([e, e - e0]),
                None => energy.push(vec![*t, e, e - e0]),
            }
        }
        if let Some(ew) = &exact_w {
            let rows: Vec<Vec<String>> = samples
                .iter()
                .zip(ew)
                .map(|((t, y), w)| {
                    let gap = (0..n).map(|i| (y[i] - w[i]).abs()).fold(0.0, f64::max);
                    vec![num(*t), num(gap)]
                })
                .collect();
            out.files.push(sink.csv("lattice_mismatch.csv", &header(&["tau", "max_abs_dw"]), &rows)?);
        } else {
            for i in 0..n {
                plot.series.push(Series {
                    name: format!("w{} reduced", i + 1),
                    points: samples.iter().map(|(t, y)| (*t, y[i])).collect(),
                });
            }
        }
    }

    let rows: Vec<Vec<String>> = energy.iter().map(|r| r.iter().copied().map(num).collect()).collect();
    out.files.push(sink.csv("lattice_energy.csv", &energy_cols, &rows)?);
    out.files.push(sink.svg("lattice_w.svg", &plot)?);
    Ok(out)
}
