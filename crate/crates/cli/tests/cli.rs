use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sde_opinf_cli::manifest::RunManifest;

const OU: &str = r#"
[benchmark]
name = "ou"
steps = 50
step_size = 0.02
seed = 7

[subspace]
paths = 40

[training]
paths = [20, 80]
inputs = 3
persist_ensembles = true

[evaluation]
dims = [1]
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("exp.toml"), config).unwrap();
        Workspace { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("run")
    }

    fn run_in(&self, cmd: &str, out: &Path, extra: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_sde-opinf"))
            .arg(cmd)
            .arg("--config")
            .arg(self.dir.path().join("exp.toml"))
            .arg("--out")
            .arg(out)
            .args(extra)
            .output()
            .unwrap()
    }

    fn run(&self, cmd: &str) -> Output {
        self.run_in(cmd, &self.out(), &[])
    }

    fn ok(&self, cmd: &str) {
        let o = self.run(cmd);
        assert!(
            o.status.success(),
            "{cmd} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }

    fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.out().join(rel)).unwrap()
    }

    fn manifest(&self) -> RunManifest {
        serde_json::from_str(&self.read("manifest.json")).unwrap()
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn somx_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(somx_files(&p));
        } else if p.extension().is_some_and(|e| e == "somx") {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn ou_pipeline_runs_end_to_end() {
    let ws = Workspace::new(OU);
    for cmd in ["simulate", "infer", "evaluate", "report"] {
        ws.ok(cmd);
    }
    let out = ws.out();
    for rel in [
        "fom.somx",
        "basis.somx",
        "training/input1_L20.somx",
        "ensembles/input1_L80.somx",
        "roms/pod_r1.somx",
        "report.md",
    ] {
        assert!(out.join(rel).exists(), "{rel} missing");
    }
    let m = ws.manifest();
    let names: Vec<&str> = m.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["simulate", "infer", "evaluate", "report"]);
    assert_eq!(m.seed, 7);
    assert!(m.missing_artifacts(&out).is_empty());
    let table = csv_rows(&ws.read("e_E.csv"));
    assert_eq!(table.len(), 2);
    assert_eq!(table[0].len(), 4);
    assert!(ws.read("report.md").contains("## e_C"));
}

#[test]
fn simulate_is_bitwise_reproducible() {
    let ws = Workspace::new(OU);
    let second = ws.dir.path().join("again");
    ws.ok("simulate");
    assert!(ws.run_in("simulate", &second, &["--threads", "3"]).status.success());
    let a = somx_files(&ws.out());
    let b = somx_files(&second);
    assert!(!a.is_empty());
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.strip_prefix(ws.out()).unwrap(), y.strip_prefix(&second).unwrap());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{} differs", x.display());
    }
}

#[test]
fn zero_paths_is_a_config_error() {
    let ws = Workspace::new(&OU.replace("paths = [20, 80]", "paths = [0, 80]"));
    let o = ws.run("simulate");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("training.paths"), "{}", stderr(&o));
}

#[test]
fn unknown_fields_and_bad_flags_are_config_errors() {
    let ws = Workspace::new(&OU.replace("[subspace]", "[subspace]\nunknown = 1"));
    assert_eq!(ws.run("simulate").status.code(), Some(2));
    let ws = Workspace::new(OU);
    assert_eq!(
        ws.run_in("simulate", &ws.out(), &["--threads", "0"]).status.code(),
        Some(2)
    );
}

#[test]
fn missing_artifacts_exit_with_code_four() {
    let ws = Workspace::new(OU);
    let o = ws.run("infer");
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("basis.somx"));

    ws.ok("simulate");
    fs::remove_file(ws.out().join("training/input2_L80.somx")).unwrap();
    let o = ws.run("infer");
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("input2_L80.somx"), "{}", stderr(&o));
}

#[test]
fn corrupt_artifacts_exit_with_code_four() {
    let ws = Workspace::new(OU);
    ws.ok("simulate");
    fs::write(ws.out().join("basis.somx"), b"SOMX").unwrap();
    assert_eq!(ws.run("infer").status.code(), Some(4));
}

#[test]
fn manifest_records_regularization() {
    let ws = Workspace::new(&format!("{OU}\n[inference]\ngamma_bilinear = 0.5\n"));
    ws.ok("simulate");
    ws.ok("infer");
    let m = ws.manifest();
    let infer = m.stage("infer").unwrap();
    assert_eq!(infer.parameters["gamma_bilinear"], "0.5");
    assert_eq!(infer.parameters["gamma_linear"], "0");
    assert!(infer.parameters.contains_key("d_r[r=1,L=80]"));
}

#[test]
fn injected_pod_model_gives_equal_columns() {
    let ws = Workspace::new(OU);
    ws.ok("simulate");
    ws.ok("infer");
    let out = ws.out();
    for l in [20, 80] {
        fs::copy(
            out.join("roms/pod_r1.somx"),
            out.join(format!("roms/opinf_r1_L{l}.somx")),
        )
        .unwrap();
    }
    ws.ok("evaluate");
    for file in ["e_E.csv", "e_C.csv", "e_phi1.csv", "e_phi2.csv"] {
        let rows = csv_rows(&ws.read(file));
        let cells = &rows[1][1..];
        assert!(cells.iter().all(|c| c == &cells[0]), "{file}: {cells:?}");
    }
}

#[test]
fn undefined_cells_are_written_as_na() {
    let ws = Workspace::new(&OU.replace("dims = [1]", "dims = [1, 2]"));
    for cmd in ["simulate", "infer", "evaluate"] {
        ws.ok(cmd);
    }
    let rows = csv_rows(&ws.read("e_C.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows[2][1..].iter().all(|c| c == "NA"), "{:?}", rows[2]);
    assert!(rows[1][1..].iter().all(|c| c != "NA"));
}

#[test]
fn heat1d_sweep_table_is_ten_by_four() {
    let ws = Workspace::new(
        r#"
[benchmark]
name = "heat1d"
steps = 100
step_size = 1e-3

[subspace]
paths = 30

[training]
paths = [10, 20, 40]
inputs = 6
"#,
    );
    for cmd in ["simulate", "infer", "evaluate"] {
        ws.ok(cmd);
    }
    let rows = csv_rows(&ws.read("e_E.csv"));
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[0][1..], ["POD", "OpInf_L10", "OpInf_L20", "OpInf_L40"]);
    assert!(rows[1..].iter().all(|r| r.len() == 5));
    let dims: Vec<usize> = rows[1..].iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(dims, (1..=10).collect::<Vec<_>>());
}
