use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use nalgebra::DMatrix;
use sde_opinf::bench::experiment::{
    self, build_fom, evaluate_columns, inference_stage, method_name, pod_rom, subspace_stage, training_pairs,
    training_sizes, training_stage, ExperimentConfig, Fom, MethodColumn, RunKind, SubspaceData, TrainingSet,
};
use sde_opinf::bench::ErrorReport;
use sde_opinf::io::{self, MatrixContainer};
use sde_opinf::{sample_ensemble, BilinearSdeSystem, SeedPolicy, TrainingRun};

use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{now_unix, RunManifest, Stage};

pub const FOM_FILE: &str = "fom.somx";
pub const BASIS_FILE: &str = "basis.somx";
pub const ROM_INDEX: &str = "roms/index.csv";
pub const REPORT_FILE: &str = "report.md";
pub const TABLE_FILES: [(&str, &str); 4] = [
    ("e_E", "e_E.csv"),
    ("e_C", "e_C.csv"),
    ("e_phi1", "e_phi1.csv"),
    ("e_phi2", "e_phi2.csv"),
];

pub struct Context {
    pub out: PathBuf,
    pub loaded: LoadedConfig,
    pub config_path: PathBuf,
}

pub struct StageLog {
    name: &'static str,
    started: f64,
    inputs: Vec<String>,
    outputs: Vec<String>,
    parameters: BTreeMap<String, String>,
}

impl StageLog {
    pub fn new(name: &'static str) -> Self {
        StageLog {
            name,
            started: now_unix(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            parameters: BTreeMap::new(),
        }
    }

    fn param(&mut self, key: &str, value: impl ToString) {
        self.parameters.insert(key.into(), value.to_string());
    }

    fn finish(self) -> Stage {
        Stage {
            name: self.name.into(),
            started_unix: self.started,
            finished_unix: now_unix(),
            inputs: self.inputs,
            outputs: self.outputs,
            parameters: self.parameters,
        }
    }
}

impl Context {
    fn cfg(&self) -> &ExperimentConfig {
        &self.loaded.config
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn mkdir(&self, rel: &str) -> CliResult<()> {
        let p = self.path(rel);
        fs::create_dir_all(&p).map_err(|e| CliError::io(&p, e))
    }

    fn save(&self, rel: &str, c: &MatrixContainer) -> CliResult<()> {
        let p = self.path(rel);
        c.save(&p)
            .map_err(|e| CliError::stage(&format!("writing {}", p.display()), e))
    }

    fn load(&self, rel: &str) -> CliResult<MatrixContainer> {
        let p = self.path(rel);
        if !p.exists() {
            return Err(CliError::missing(&p));
        }
        MatrixContainer::load(&p).map_err(|e| CliError::stage(&format!("reading {}", p.display()), e))
    }

    fn write_text(&self, rel: &str, text: &str) -> CliResult<()> {
        let p = self.path(rel);
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    }

    fn read_text(&self, rel: &str) -> CliResult<String> {
        let p = self.path(rel);
        fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))
    }

    fn record(&self, stage: StageLog) -> CliResult<()> {
        let fresh = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_path: self.config_path.display().to_string(),
            config_hash: self.loaded.hash.clone(),
            seed: self.cfg().benchmark.seed,
            overrides: self.loaded.overrides.clone(),
            stages: Vec::new(),
        };
        let mut m = RunManifest::open(&self.out, fresh)?;
        m.record(stage.finish());
        m.save(&self.out)
    }

    fn fom(&self) -> CliResult<Fom> {
        build_fom(&self.cfg().benchmark).map_err(|e| CliError::stage("build fom", e))
    }
}

pub fn training_file(kind: RunKind, paths: usize) -> String {
    format!("training/{}_L{paths}.somx", kind.label())
}

pub fn ensemble_file(kind: RunKind, paths: usize) -> String {
    format!("ensembles/{}_L{paths}.somx", kind.label())
}

pub fn opinf_file(r: usize, paths: usize) -> String {
    format!("roms/opinf_r{r}_L{paths}.somx")
}

pub fn pod_file(r: usize) -> String {
    format!("roms/pod_r{r}.somx")
}

fn subspace_container(sub: &SubspaceData) -> sde_opinf::Result<MatrixContainer> {
    let mut c = io::basis_to_container(&sub.basis)?;
    c.set_meta("mean_norm", format!("{:e}", sub.mean_norm))?;
    c.set_meta("cov_norm", format!("{:e}", sub.cov_norm))?;
    let snr: Vec<f64> = sub.snr.iter().map(|s| s.unwrap_or(f64::NAN)).collect();
    c.insert("snr", DMatrix::from_column_slice(snr.len(), 1, &snr))?;
    Ok(c)
}

fn subspace_from(c: &MatrixContainer) -> sde_opinf::Result<SubspaceData> {
    Ok(SubspaceData {
        basis: io::basis_from_container(c)?,
        mean_norm: c.parse_meta("mean_norm")?,
        cov_norm: c.parse_meta("cov_norm")?,
        snr: c
            .require("snr")?
            .iter()
            .map(|v| if v.is_nan() { None } else { Some(*v) })
            .collect(),
    })
}

pub fn simulate(ctx: &Context) -> CliResult<()> {
    let cfg = ctx.cfg();
    let mut log = StageLog::new("simulate");
    log.param("seed", cfg.benchmark.seed);
    ctx.mkdir("training")?;
    let fom = ctx.fom()?;
    let grid = cfg.benchmark.grid().map_err(|e| CliError::config(e.to_string()))?;
    let mut fc = io::system_to_container(&fom.system, Some(grid.horizon())).map_err(|e| CliError::stage("fom", e))?;
    let mut meta = vec![("label".to_string(), fom.label.clone())];
    meta.extend(
        fom.notes
            .iter()
            .enumerate()
            .map(|(i, n)| (format!("note.{}", i + 1), n.clone())),
    );
    for (k, v) in meta {
        fc.set_meta(&k, v).map_err(|e| CliError::stage("fom", e))?;
    }
    ctx.save(FOM_FILE, &fc)?;
    log.outputs.push(FOM_FILE.into());

    let sub = subspace_stage(&fom, cfg).map_err(|e| CliError::stage("simulate/subspace", e))?;
    ctx.save(
        BASIS_FILE,
        &subspace_container(&sub).map_err(|e| CliError::stage("basis", e))?,
    )?;
    log.outputs.push(BASIS_FILE.into());
    log.param("subspace.mean_norm", sub.mean_norm);
    log.param("subspace.cov_norm", sub.cov_norm);

    let sets = training_stage(&fom, &sub.basis, cfg).map_err(|e| CliError::stage("simulate/training", e))?;
    for set in &sets {
        for (kind, run) in &set.runs {
            let rel = training_file(*kind, set.paths);
            let c = io::moments_to_container(&run.moments).map_err(|e| CliError::stage("training", e))?;
            ctx.save(&rel, &c)?;
            log.outputs.push(rel);
        }
    }

    if cfg.training.persist_ensembles {
        ctx.mkdir("ensembles")?;
        let policy = SeedPolicy::new(cfg.benchmark.seed);
        for (kind, control, x0) in training_pairs(&fom, &sub.basis, cfg) {
            let sys = fom.system.clone().with_initial_mean(x0);
            for l in training_sizes(cfg) {
                let stage = format!("simulate/ensemble {} L={l}", kind.label());
                let ens = sample_ensemble(&sys, &control, &grid, l, policy, kind.run_id())
                    .map_err(|e| CliError::stage(&stage, e))?;
                let rel = ensemble_file(kind, l);
                ctx.save(
                    &rel,
                    &io::ensemble_to_container(&ens).map_err(|e| CliError::stage(&stage, e))?,
                )?;
                log.outputs.push(rel);
            }
        }
    }
    ctx.record(log)
}

fn load_training(ctx: &Context, fom: &Fom, sub: &SubspaceData, log: &mut StageLog) -> CliResult<Vec<TrainingSet>> {
    let cfg = ctx.cfg();
    let pairs = training_pairs(fom, &sub.basis, cfg);
    let mut sets = Vec::new();
    for l in training_sizes(cfg) {
        let mut runs = Vec::new();
        for (kind, control, _) in &pairs {
            let rel = training_file(*kind, l);
            let c = ctx.load(&rel)?;
            let moments = io::moments_from_container(&c).map_err(|e| CliError::stage(&rel, e))?;
            runs.push((
                *kind,
                TrainingRun {
                    moments,
                    control: control.clone(),
                },
            ));
            log.inputs.push(rel);
        }
        sets.push(TrainingSet { paths: l, runs });
    }
    Ok(sets)
}

pub fn infer(ctx: &Context) -> CliResult<()> {
    let cfg = ctx.cfg();
    let mut log = StageLog::new("infer");
    let sub = subspace_from(&ctx.load(BASIS_FILE)?).map_err(|e| CliError::stage(BASIS_FILE, e))?;
    log.inputs.push(BASIS_FILE.into());
    let fom = ctx.fom()?;
    let sets = load_training(ctx, &fom, &sub, &mut log)?;
    ctx.mkdir("roms")?;
    let inf = &cfg.inference;
    log.param("gamma_linear", inf.gamma_linear);
    log.param("gamma_bilinear", inf.gamma_bilinear);
    log.param("truncation_fraction", inf.truncation_fraction);
    log.param("drop_endpoints", inf.drop_endpoints);

    let models = inference_stage(&sets, cfg);
    let mut index = String::from("r,L,d_r,file,status\n");
    for (r, l, rom) in &models.entries {
        match rom {
            Ok(rom) => {
                let rel = opinf_file(*r, *l);
                let d = &rom.diagnostics;
                if d.rank_deficient {
                    log::warn!(
                        "r = {r}, L = {l}: rank-deficient drift regression (condition number {:.3e})",
                        d.condition_number
                    );
                }
                ctx.save(
                    &rel,
                    &io::rom_to_container(rom).map_err(|e| CliError::stage("infer", e))?,
                )?;
                index.push_str(&format!("{r},{l},{},{rel},ok\n", rom.noise_dim));
                log.param(&format!("d_r[r={r},L={l}]"), rom.noise_dim);
                log.param(
                    &format!("condition_number[r={r},L={l}]"),
                    format!("{:e}", d.condition_number),
                );
                log.outputs.push(rel);
            }
            Err(e) => {
                let msg = e.to_string().replace(['\n', ','], " ");
                index.push_str(&format!("{r},{l},NA,,failed: {msg}\n"));
            }
        }
    }
    for &r in &cfg.evaluation.dims {
        if r > sub.basis.dim() {
            continue;
        }
        let pod = pod_rom(&fom, &sub.basis, r).map_err(|e| CliError::stage("infer/pod", e))?;
        let rel = pod_file(r);
        ctx.save(
            &rel,
            &io::system_to_container(&pod, None).map_err(|e| CliError::stage("infer/pod", e))?,
        )?;
        log.outputs.push(rel);
    }
    ctx.write_text(ROM_INDEX, &index)?;
    log.outputs.push(ROM_INDEX.into());
    ctx.record(log)
}

/// Reduced system stored in either a `rom` or a `system` container.
fn load_model(ctx: &Context, rel: &str) -> CliResult<(BilinearSdeSystem, Option<usize>)> {
    let c = ctx.load(rel)?;
    let res = match c.meta("kind") {
        Some("rom") => io::rom_from_container(&c).map(|rom| (rom.to_system(), Some(rom.noise_dim))),
        _ => io::system_from_container(&c).map(|s| (s, None)),
    };
    res.map_err(|e| CliError::stage(rel, e))
}

struct IndexEntry {
    r: usize,
    paths: usize,
    file: Option<String>,
}

fn read_index(ctx: &Context) -> CliResult<Vec<IndexEntry>> {
    let text = ctx.read_text(ROM_INDEX)?;
    let mut out = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.splitn(5, ',').collect();
        let bad = || CliError::config(format!("{ROM_INDEX}: malformed line {line:?}"));
        if f.len() != 5 {
            return Err(bad());
        }
        out.push(IndexEntry {
            r: f[0].parse().map_err(|_| bad())?,
            paths: f[1].parse().map_err(|_| bad())?,
            file: (f[4] == "ok").then(|| f[3].to_string()),
        });
    }
    Ok(out)
}

pub fn write_report_tables(ctx: &Context, rep: &ErrorReport, log: &mut StageLog) -> CliResult<()> {
    let tables = rep.metric_tables();
    for ((_, file), (_, table)) in TABLE_FILES.iter().zip(tables) {
        ctx.write_text(file, &rep.table_csv(table))?;
        log.outputs.push(file.to_string());
    }
    for (file, text) in [
        ("noise_dims.csv", rep.noise_dims_csv()),
        ("snr.csv", rep.snr_csv()),
        ("plot_data.csv", rep.plot_data()),
    ] {
        ctx.write_text(file, &text)?;
        log.outputs.push(file.into());
    }
    Ok(())
}

pub fn evaluate(ctx: &Context) -> CliResult<()> {
    let cfg = ctx.cfg();
    let mut log = StageLog::new("evaluate");
    log.param("mode", format!("{:?}", cfg.evaluation.mode).to_lowercase());
    let sub = subspace_from(&ctx.load(BASIS_FILE)?).map_err(|e| CliError::stage(BASIS_FILE, e))?;
    log.inputs.push(BASIS_FILE.into());
    let index = read_index(ctx)?;
    log.inputs.push(ROM_INDEX.into());
    let dims = &cfg.evaluation.dims;

    let mut pod = Vec::new();
    for &r in dims {
        if r > sub.basis.dim() {
            pod.push(None);
            continue;
        }
        let rel = pod_file(r);
        pod.push(Some(load_model(ctx, &rel)?));
        log.inputs.push(rel);
    }
    let mut columns = vec![MethodColumn {
        name: "POD".into(),
        models: pod,
    }];
    for l in training_sizes(cfg) {
        let mut models = Vec::new();
        for &r in dims {
            let entry = index.iter().find(|e| e.r == r && e.paths == l);
            match entry.and_then(|e| e.file.as_deref()) {
                Some(rel) => {
                    models.push(Some(load_model(ctx, rel)?));
                    log.inputs.push(rel.to_string());
                }
                None => models.push(None),
            }
        }
        columns.push(MethodColumn {
            name: method_name(l),
            models,
        });
    }
    let fom = ctx.fom()?;
    let rep = evaluate_columns(&fom, &sub, &columns, cfg).map_err(|e| CliError::stage("evaluate", e))?;
    write_report_tables(ctx, &rep, &mut log)?;
    ctx.record(log)
}

pub fn report(ctx: &Context) -> CliResult<()> {
    let mut log = StageLog::new("report");
    let basis = ctx.load(BASIS_FILE)?;
    log.inputs.push(BASIS_FILE.into());
    let fom = ctx.load(FOM_FILE)?;
    log.inputs.push(FOM_FILE.into());
    let mut md = String::from("# Experiment report\n\n");
    md.push_str(&format!("- full model: {}\n", fom.meta("label").unwrap_or("unknown")));
    for (k, v) in fom.metadata() {
        if k.starts_with("note.") {
            md.push_str(&format!("- note: {v}\n"));
        }
    }
    for key in ["mean_norm", "cov_norm"] {
        md.push_str(&format!("- subspace {key}: {}\n", basis.meta(key).unwrap_or("NA")));
    }
    let mut sections = TABLE_FILES.to_vec();
    sections.push(("d_r", "noise_dims.csv"));
    for (name, file) in sections {
        let text = ctx.read_text(file)?;
        log.inputs.push(file.into());
        md.push_str(&format!("\n## {name}\n\n"));
        for (i, line) in text.lines().enumerate() {
            md.push_str(&format!("| {} |\n", line.replace(',', " | ")));
            if i == 0 {
                let cols = line.split(',').count();
                md.push_str(&format!("|{}\n", "---|".repeat(cols)));
            }
        }
    }
    ctx.write_text(REPORT_FILE, &md)?;
    log.outputs.push(REPORT_FILE.into());
    print!("{md}");
    ctx.record(log)
}

pub use experiment::EvaluationMode;
