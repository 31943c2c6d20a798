//! End-to-end runs of the `rydberg` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rydberg_core::experiments::ExperimentConfig;

fn rydberg(args: &[&str], workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rydberg"));
    cmd.args(args);
    match workers {
        Some(n) => cmd.env("RYDBERG_WORKERS", n),
        None => cmd.env_remove("RYDBERG_WORKERS"),
    };
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let out = dir.join(name.replace(".toml", ""));
    let text = format!("output = {:?}\n{body}", out.display().to_string());
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn list_names_every_preset_and_its_figure() {
    let o = rydberg(&["list"], None);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in [
        "rabi",
        "t1",
        "ramsey",
        "spin_echo",
        "phase_gate_echo",
        "blockade_rabi",
        "parity_scan",
        "w_lifetime",
        "w_echo",
    ] {
        let line = text
            .lines()
            .find(|l| l.split_whitespace().next() == Some(name))
            .unwrap_or_else(|| panic!("{name} missing from\n{text}"));
        assert!(line.contains("Fig."), "{line}");
    }
    let json: serde_json::Value = serde_json::from_slice(&rydberg(&["list", "--json"], None).stdout).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 9);
}

#[test]
fn unknown_preset_suggests_the_nearest_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "preset = \"blockade_rabbi\"\n");
    let o = rydberg(&["run", &cfg], None);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("blockade_rabi"), "{err}");
}

#[test]
fn invalid_config_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "preset = \"rabi\"\nn_shots = 0\n");
    assert_eq!(rydberg(&["run", &cfg], None).status.code(), Some(1));
    let cfg = write_config(dir.path(), "typo.toml", "preset = \"rabi\"\n[atom]\ntemperature = 10.0\n");
    assert_eq!(rydberg(&["run", &cfg], None).status.code(), Some(1));
    assert_eq!(rydberg(&["run", "/nonexistent/config.toml"], None).status.code(), Some(1));
}

#[test]
fn undamped_rabi_reports_no_decay() {
    let dir = tempfile::tempdir().unwrap();
    let body = "preset = \"rabi\"\nn_shots = 1\n\
                [noise]\ndoppler = false\nsigma_position_um = 0.0\n\
                [model.decoherence]\nscattering = false\nrydberg_decay = false\ninclude_radiative = false\n";
    let cfg = write_config(dir.path(), "clean.toml", body);
    let o = rydberg(&["run", &cfg], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("clean/manifest.json")).unwrap()).unwrap();
    let tau = manifest["derived"]
        .as_array()
        .unwrap()
        .iter()
        .find(|d| d["name"] == "tau_us")
        .unwrap();
    assert_eq!(tau["note"], "no decay detected");
    assert!(stdout(&o).contains("no decay detected"));
}

#[test]
fn blockade_run_writes_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "blockade.toml",
        "preset = \"blockade_rabi\"\nn_shots = 4\n[scan]\nstart = 0.0\nstop = 2.0\npoints = 41\n",
    );
    let o = rydberg(&["run", &cfg], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("blockade/data.csv")).unwrap();
    let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    let cols: Vec<&str> = header.split(',').collect();
    assert_eq!(&cols[..5], &["t_us", "P_gg", "P_gr", "P_rg", "P_rr"]);
    for c in ["P_gg_lo", "P_gg_hi", "P_rr_lo", "P_rr_hi", "ideal_gg"] {
        assert!(cols.contains(&c), "{c} missing from {header}");
    }
    for doc in ["# t_us:", "# P_<pattern>:", "# P_<pattern>_lo, P_<pattern>_hi:", "# ideal_<pattern>:"] {
        assert!(csv.contains(doc), "header lacks {doc}");
    }
    let rows = csv.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 42);
    let manifest = fs::read_to_string(dir.path().join("blockade/manifest.json")).unwrap();
    assert!(manifest.contains("\"frequency_mhz\""));
}

#[test]
fn rerunning_a_config_reproduces_the_data_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let body = "preset = \"w_echo\"\nn_shots = 6\nmode = \"sampled\"\nmaster_seed = 11\n\
                [scan]\nstart = 0.0\nstop = 20.0\npoints = 5\n";
    let cfg = write_config(dir.path(), "echo.toml", body);
    let data = dir.path().join("echo/data.csv");
    assert!(rydberg(&["run", &cfg], Some("1")).status.success());
    let first = fs::read(&data).unwrap();
    assert!(rydberg(&["run", &cfg], Some("4")).status.success());
    assert_eq!(fs::read(&data).unwrap(), first);

    // the manifest's config echo is itself a config that reproduces the run
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("echo/manifest.json")).unwrap()).unwrap();
    let echo = manifest["config_toml"].as_str().unwrap();
    let parsed = ExperimentConfig::from_toml(echo).unwrap();
    assert_eq!(parsed, parsed.resolved().unwrap());
    let echo_path = dir.path().join("echo_again.toml");
    fs::write(&echo_path, echo).unwrap();
    assert!(rydberg(&["run", echo_path.to_str().unwrap()], None).status.success());
    assert_eq!(fs::read(&data).unwrap(), first);
}

#[test]
fn init_prints_a_loadable_config() {
    let o = rydberg(&["init", "parity_scan"], None);
    assert!(o.status.success());
    let cfg = ExperimentConfig::from_toml(&stdout(&o)).unwrap();
    assert_eq!(cfg.preset, "parity_scan");
    assert_eq!(cfg, cfg.resolved().unwrap());
}

#[test]
fn check_runs_selected_criteria() {
    let o = rydberg(&["check", "1", "2", "12"], None);
    assert!(o.status.success(), "{}", stdout(&o));
    let lines: Vec<String> = stdout(&o).lines().filter(|l| l.starts_with('[')).map(String::from).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l.contains("PASS")));
    assert_eq!(rydberg(&["check", "13"], None).status.code(), Some(1));
}
