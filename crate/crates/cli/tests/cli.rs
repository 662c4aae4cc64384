use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

struct Run {
    dir: TempDir,
    out: Output,
}

impl Run {
    fn code(&self) -> i32 {
        self.out.status.code().expect("exit code")
    }

    fn stderr(&self) -> String {
        String::from_utf8_lossy(&self.out.stderr).into_owned()
    }

    fn file(&self, name: &str) -> PathBuf {
        self.dir.path().join("out").join(name)
    }

    fn text(&self, name: &str) -> String {
        fs::read_to_string(self.file(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }

    /// Data rows of a CSV as `(header, rows)`, checking the metadata line.
    fn table(&self, name: &str) -> (Vec<String>, Vec<Vec<String>>) {
        let text = self.text(name);
        let mut lines = text.lines();
        let meta = lines.next().unwrap();
        assert!(meta.starts_with("# avm ") && meta.contains("config_sha256="), "{meta}");
        let header = lines.next().unwrap().split(',').map(String::from).collect();
        let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
        (header, rows)
    }
}

fn avm(command: &str, config: &str, extra: &[&str]) -> Run {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_avm"))
        .arg(command)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .args(extra)
        .output()
        .unwrap();
    Run { dir, out }
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

fn f(s: &str) -> f64 {
    s.parse().unwrap_or_else(|_| panic!("not a number: {s:?}"))
}

const LATTICE: &str = r#"
[lattice]
n = 4
mode = 1
amplitude = 0.05
horizon = 300.0
samples = 301
model = "both"
"#;

#[test]
fn lattice_run_writes_trajectories_and_bounded_energy_drift() {
    let r = avm("lattice", LATTICE, &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let (h, rows) = r.table("lattice_exact.csv");
    assert_eq!(h[0], "tau");
    assert_eq!(h.len(), 1 + 2 * 4);
    assert_eq!(rows.len(), 301);
    let (h, rows) = r.table("lattice_energy.csv");
    let (de, dr) = (col(&h, "drift_exact"), col(&h, "drift_reduced"));
    for row in &rows {
        assert!(f(&row[de]).abs() <= 1e-9 && f(&row[dr]).abs() <= 1e-9, "{row:?}");
    }
    assert!(r.text("lattice_w.svg").contains("<polyline"));
    assert!(r.file("lattice_mismatch.csv").exists());
}

#[test]
fn zero_initial_state_stays_at_rest() {
    let cfg = LATTICE.replace("amplitude = 0.05", "amplitude = 0.0");
    let r = avm("lattice", &cfg, &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let (_, rows) = r.table("lattice_exact.csv");
    assert!(rows.iter().all(|row| row[1..].iter().all(|v| f(v) == 0.0)));
}

#[test]
fn missing_field_is_a_config_error_naming_it() {
    let cfg = LATTICE.replace("n = 4\n", "");
    let r = avm("lattice", &cfg, &[]);
    assert_eq!(r.code(), 2);
    assert!(r.stderr().contains("`n`"), "{}", r.stderr());
}

#[test]
fn missing_section_and_bad_values_are_config_errors() {
    let r = avm("persist", LATTICE, &[]);
    assert_eq!(r.code(), 2);
    assert!(r.stderr().contains("[persist]"), "{}", r.stderr());
    let r = avm("lattice", &LATTICE.replace("mode = 1", "mode = 9"), &[]);
    assert_eq!(r.code(), 2, "{}", r.stderr());
    let r = avm("lattice", &format!("{LATTICE}\nsurprise = 1\n"), &[]);
    assert_eq!(r.code(), 2, "{}", r.stderr());
}

#[test]
fn integration_failure_exits_with_numerical_status() {
    let cfg = format!("[integrator]\nmax_steps = 5\n{LATTICE}");
    let r = avm("lattice", &cfg, &[]);
    assert_eq!(r.code(), 3, "{}", r.stderr());
}

#[test]
fn fixed_step_runs_are_byte_identical() {
    let cfg = format!("[integrator]\nmethod = \"rk4-fixed\"\ninitial_step = 0.05\nmax_step = 0.05\n{LATTICE}");
    let a = avm("lattice", &cfg, &[]);
    let b = avm("lattice", &cfg, &["--threads", "2"]);
    assert_eq!(a.code(), 0, "{}", a.stderr());
    for name in ["lattice_exact.csv", "lattice_reduced.csv", "lattice_energy.csv", "lattice_w.svg"] {
        assert_eq!(fs::read(a.file(name)).unwrap(), fs::read(b.file(name)).unwrap(), "{name}");
    }
}

#[test]
fn metadata_carries_the_config_hash() {
    use sha2::Digest;
    let r = avm("lattice", LATTICE, &[]);
    let hex: String = sha2::Sha256::digest(LATTICE.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    let first = r.text("lattice_energy.csv").lines().next().unwrap().to_string();
    assert_eq!(first, format!("# avm {} config_sha256={hex} command=lattice", env!("CARGO_PKG_VERSION")));
    assert!(r.text("lattice_w.svg").starts_with(&format!("<!-- avm {}", env!("CARGO_PKG_VERSION"))));
}

const ORBITS: &str = r#"
[orbits]
theta0 = [0.2, 0.4, 0.6, 0.7853981633974483]
samples = 200
"#;

#[test]
fn orbits_are_closed_level_curves_with_predicted_periods() {
    let r = avm("orbits", ORBITS, &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let (h, rows) = r.table("orbits.csv");
    let (t0, th, de, i) = (col(&h, "theta0"), col(&h, "theta"), col(&h, "delta"), col(&h, "first_integral"));
    for theta0 in [0.2_f64, 0.4, 0.6] {
        let curve: Vec<&Vec<String>> = rows.iter().filter(|row| f(&row[t0]) == theta0).collect();
        let level = (2.0 * theta0).sin();
        assert!(curve.iter().all(|row| (f(&row[i]) - level).abs() <= 1e-8));
        let (first, last) = (curve[0], curve[curve.len() - 1]);
        assert!((f(&first[th]) - f(&last[th])).abs() <= 1e-7 && (f(&first[de]) - f(&last[de])).abs() <= 1e-7);
    }
    let eq: Vec<&Vec<String>> = rows.iter().filter(|row| (f(&row[t0]) - FRAC_PI_4).abs() < 1e-15).collect();
    assert!(!eq.is_empty());
    assert!(eq.iter().all(|row| f(&row[th]) == FRAC_PI_4 && f(&row[de]) == FRAC_PI_2));

    let (h, rows) = r.table("orbit_periods.csv");
    let (kind, meas, t0) = (col(&h, "kind"), col(&h, "period_measured"), col(&h, "theta0"));
    for row in &rows {
        if row[kind] == "orbit" {
            let expect = PI / (2.0 * f(&row[t0])).sin();
            assert!((f(&row[meas]) / expect - 1.0).abs() <= 1e-6);
        } else {
            assert_eq!(row[kind], "equilibrium");
        }
    }
    assert!(r.text("orbits_phase.svg").contains("viewBox=\"0 0 800 500\""));
}

const MELNIKOV: &str = r#"
[slowflow]
base_freq = 1.0
harmonic = 1

[melnikov]
beta1 = { start = 0.0, stop = 6.283185307179586, steps = 9 }
level = { start = 0.1, stop = 0.001, steps = 2, log = true }
"#;

#[test]
fn melnikov_table_and_roots() {
    let r = avm("melnikov", MELNIKOV, &["--threads", "2"]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let (h, rows) = r.table("melnikov_table.csv");
    assert_eq!(h, ["beta1", "rho", "M11", "M12", "M21", "M22", "Mtilde"]);
    assert_eq!(rows.len(), 18);
    let rho_max = rows.iter().map(|row| f(&row[1])).fold(0.0, f64::max);
    for row in rows.iter().filter(|row| f(&row[1]) == rho_max) {
        let limit = -16.0 * (2.0 * f(&row[0])).sin() / -5.0;
        let got = f(&row[6]);
        if limit.abs() >= 1e-3 {
            assert!((got - limit).abs() <= 1e-2 * limit.abs(), "{got} vs {limit}");
        } else {
            assert!((got - limit).abs() <= 1e-3);
        }
    }
    let roots: serde_json::Value = serde_json::from_str(&r.text("melnikov_roots.json")).unwrap();
    let roots = roots.as_array().unwrap();
    assert_eq!(roots.len(), 8);
    for root in roots {
        let obj = root.as_object().unwrap();
        assert!(obj.values().all(|v| !v.is_object() && !v.is_array()));
        let (m1, m2) = (obj["mu1_0"].as_f64().unwrap(), obj["mu2_0"].as_f64().unwrap());
        assert!((m1.hypot(m2) - 1.0).abs() <= 1e-12);
        assert!(obj.contains_key("det_con1"));
    }
}

#[test]
fn melnikov_grid_without_sign_changes_gives_no_roots() {
    let cfg = MELNIKOV.replace(
        "beta1 = { start = 0.0, stop = 6.283185307179586, steps = 9 }",
        "beta1 = { start = 0.2, stop = 1.2, steps = 5 }",
    );
    let r = avm("melnikov", &cfg, &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let roots: serde_json::Value = serde_json::from_str(&r.text("melnikov_roots.json")).unwrap();
    assert_eq!(roots, serde_json::json!([]));
}

#[test]
fn melnikov_output_does_not_depend_on_thread_count() {
    let a = avm("melnikov", MELNIKOV, &["--threads", "1"]);
    let b = avm("melnikov", MELNIKOV, &["--threads", "3"]);
    for name in ["melnikov_table.csv", "melnikov_roots.json"] {
        assert_eq!(fs::read(a.file(name)).unwrap(), fs::read(b.file(name)).unwrap(), "{name}");
    }
}

const PERSIST: &str = r#"
[slowflow]
base_freq = 1.0
harmonic = 1

[persist]
level = 0.01
eps = [0.01, 0.005, 0.0025, 0.00125, 0.0]
"#;

#[test]
fn persist_sweep_appends_slope_row() {
    let r = avm("persist", PERSIST, &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let (h, rows) = r.table("persist.csv");
    assert_eq!(&h[..2], ["eps", "status"]);
    assert!(h.iter().any(|c| c == "floquet_mod_3"));
    assert_eq!(rows.len(), 6);
    let res = col(&h, "residual");
    for row in &rows[..4] {
        assert_eq!(row[1], "converged");
        assert!(f(&row[res]) <= 1e-8);
    }
    assert_eq!(rows[4][1], "analytic");
    let slope = &rows[5];
    assert_eq!((slope[0].as_str(), slope[1].as_str()), ("slope", "ok"));
    assert!((f(&slope[col(&h, "distance")]) - 1.0).abs() <= 0.2);
}

#[test]
fn persist_with_only_zero_eps_is_trivial() {
    let r = avm("persist", &PERSIST.replace("eps = [0.01, 0.005, 0.0025, 0.00125, 0.0]", "eps = [0.0]"), &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let (_, rows) = r.table("persist.csv");
    assert_eq!(rows[0][1], "analytic");
    assert_eq!(rows[1][..2], ["slope", "n/a"]);
}

#[test]
fn persist_failure_is_flagged_but_not_fatal() {
    let cfg = PERSIST
        .replace("eps = [0.01, 0.005, 0.0025, 0.00125, 0.0]", "eps = [0.001]")
        .replace("level = 0.01", "level = 0.01\nbeta1_offset = 0.5");
    let r = avm("persist", &cfg, &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    assert!(r.stderr().contains("1 warning(s)"), "{}", r.stderr());
    let (_, rows) = r.table("persist.csv");
    assert_eq!(rows[0][1], "failed");
}

#[test]
fn shipped_configs_are_accepted() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for (cmd, file) in [("lattice", "lattice.toml"), ("orbits", "orbits.toml"), ("melnikov", "melnikov.toml"), ("persist", "persist.toml")] {
        let text = fs::read_to_string(root.join(file)).unwrap();
        // Shrink the expensive parts; the schema is what is under test.
        let text = text
            .replace("horizon = 2000.0", "horizon = 5.0")
            .replace("steps = 73", "steps = 5")
            .replace("continuation = true", "continuation = false")
            .replace("eps = [0.01, 0.005, 0.0025, 0.00125, 0.0]", "eps = [0.0]");
        let r = avm(cmd, &text, &[]);
        assert_eq!(r.code(), 0, "{file}: {}", r.stderr());
    }
}
