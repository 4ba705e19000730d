//! Executes a [`RunConfig`] and writes its artifacts.
//!
//! All outputs are assembled in memory and written only after the experiment
//! finishes, so a failed run leaves no partial directory behind. Every file is
//! listed in `manifest.json` with its SHA-256.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::audit::{
    audit_compactness_product, audit_energy_family, audit_entropy, audit_energy, audit_interpolation, audit_speed,
    audit_wasserstein_holder, interpolation_r2, EstimateReport, RunMetadata,
};
use crate::config::{Experiment, RunConfig};
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::ks::{ks_admissible_q, ks_audit, ks_run, KsConfig, KsSample, KsState};
use crate::measures::{entropy, lq_norm};
use crate::pme::PmeStepConfig;
use crate::serrin::{region_vertices, theorem_admissible, thresholds, ClassQuery, FigureId, TheoremId};
use crate::splitting::{monolithic_solve, split_solve, splitting_refinement_study, SplitConfig};
use crate::trajectory::TrajectoryRecord;
use crate::grid::TimePartition;

pub const OUTPUT_ENV: &str = "PME_LAB_OUT";
pub const MANIFEST_SCHEMA: u32 = 1;

/// Files produced by a run, in write order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("reports always serialize");
        text.push('\n');
        self.add(name, text);
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub artifacts: Artifacts,
    /// False when an enabled audit failed.
    pub passed: bool,
    /// Short human-readable result, also the stdout of the CLI.
    pub summary: String,
}

#[derive(Serialize)]
struct ManifestEntry {
    file: String,
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    crate_version: &'static str,
    experiment: &'static str,
    config: &'a RunConfig,
    seeds: BTreeMap<&'static str, u64>,
    passed: bool,
    files: Vec<ManifestEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Output directory: `PME_LAB_OUT` when set, otherwise the configured one.
pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    std::env::var_os(OUTPUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(&cfg.output.dir))
}

/// Writes the artifacts and a manifest under `dir`.
pub fn write_outputs(dir: &Path, cfg: &RunConfig, outcome: &RunOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (name, bytes) in &outcome.artifacts.files {
        std::fs::write(dir.join(name), bytes)?;
        files.push(ManifestEntry { file: name.clone(), sha256: hex(&Sha256::digest(bytes)), bytes: bytes.len() });
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA,
        crate_version: env!("CARGO_PKG_VERSION"),
        experiment: cfg.experiment.name(),
        config: cfg,
        seeds: BTreeMap::from([("holder_sampling", crate::measures::HOLDER_SEED)]),
        passed: outcome.passed,
        files,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest always serializes");
    text.push('\n');
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

/// Runs the experiment without touching the file system.
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate().map_err(|(key, message)| Error::Config { line: 0, message: format!("{key}: {message}") })?;
    match cfg.experiment {
        Experiment::Simulate => simulate(cfg),
        Experiment::SplitStudy => split_study(cfg),
        Experiment::Audit => audit(cfg),
        Experiment::Regions => regions(cfg),
        Experiment::Thresholds => threshold_table(cfg),
        Experiment::Ks => keller_segel(cfg),
    }
}

/// Plain-text field dump: a `#` header, then one value per line in cell order.
pub fn field_dump(grid: &Grid, values: &[f64], time: f64) -> String {
    let [nx, ny] = grid.cells();
    let (lo, hi) = (grid.lower(), grid.upper());
    let mut s = format!(
        "# dim={} cells={}x{} lower={},{} upper={},{} time={} order=row-major-first-axis-fastest\n",
        grid.dim(),
        nx,
        ny,
        lo[0],
        lo[1],
        hi[0],
        hi[1],
        time
    );
    for v in values {
        let _ = writeln!(s, "{v}");
    }
    s
}

fn dump_indices(steps: usize, every: usize) -> Vec<usize> {
    if every == 0 {
        return vec![0, steps];
    }
    let mut idx: Vec<usize> = (0..=steps).step_by(every).collect();
    if *idx.last().unwrap() != steps {
        idx.push(steps);
    }
    idx
}

fn trajectory_csv(traj: &TrajectoryRecord, q: f64) -> Result<String> {
    let mut s = format!("time,mass,lq_norm_q{q},entropy,newton_iterations,newton_residual,mass_correction\n");
    for k in 0..traj.len() {
        let f = traj.field(k);
        let d = &traj.diagnostics[k];
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            traj.times[k],
            f.mass(),
            lq_norm(&f, q)?,
            entropy(&f),
            d.newton_iterations,
            d.newton_residual,
            d.mass_correction
        );
    }
    Ok(s)
}

fn add_dumps(art: &mut Artifacts, traj: &TrajectoryRecord, every: usize) {
    for k in dump_indices(traj.steps(), every) {
        art.add(format!("field_{k:06}.txt"), field_dump(&traj.grid, &traj.fields[k], traj.times[k]));
    }
}

fn reference_run(cfg: &RunConfig) -> Result<TrajectoryRecord> {
    let rho0 = cfg.build_initial()?;
    let v = cfg.build_drift()?;
    if matches!(cfg.drift, crate::flow::DriftKind::Zero) {
        let step = PmeStepConfig {
            newton_tol: cfg.tolerances.newton_tol,
            max_newton: cfg.tolerances.max_newton,
            ..PmeStepConfig::new(cfg.model.m, cfg.time.dt())?
        };
        crate::pme::pme_run(&rho0, &step, cfg.time.steps)
    } else {
        monolithic_solve(&rho0, &v, cfg.model.m, cfg.time.horizon, cfg.time.steps)
    }
}

fn simulate(cfg: &RunConfig) -> Result<RunOutcome> {
    let traj = reference_run(cfg)?;
    let mut art = Artifacts::default();
    art.add("series.csv", trajectory_csv(&traj, cfg.model.q)?);
    add_dumps(&mut art, &traj, cfg.time.record_every);
    let drift = (traj.masses().last().unwrap() - traj.masses()[0]).abs();
    Ok(RunOutcome { artifacts: art, passed: true, summary: format!("simulated {} steps, mass drift {drift:e}", traj.steps()) })
}

fn split_study(cfg: &RunConfig) -> Result<RunOutcome> {
    let rho0 = cfg.build_initial()?;
    let v = cfg.build_drift()?;
    let grid = *rho0.grid();
    let (m, horizon, steps) = (cfg.model.m, cfg.time.horizon, cfg.time.steps);
    let report = splitting_refinement_study(&rho0, &v, m, horizon, steps, &cfg.study.subintervals, cfg.study.coarsen)?;
    let mut art = Artifacts::default();
    let mut csv = String::from("n,w2_to_reference\n");
    for (n, w) in report.n.iter().zip(&report.to_reference) {
        let _ = writeln!(csv, "{n},{w}");
    }
    art.add("refinement.csv", csv);
    let finest = *cfg.study.subintervals.iter().max().unwrap();
    let mut split_cfg = SplitConfig::new(&grid, m, TimePartition::new(horizon, steps, finest)?)?;
    split_cfg.gap_coarsening = cfg.study.coarsen;
    split_cfg.newton_tol = cfg.tolerances.newton_tol;
    split_cfg.max_newton = cfg.tolerances.max_newton;
    let run = split_solve(&rho0, &v, &split_cfg)?;
    let mut csv = String::from("index,start,end,mass_drift,w2_gap,drift_integral,max_newton_iterations\n");
    for d in &run.diagnostics {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            d.index, d.start, d.end, d.mass_drift, d.w2_gap, d.drift_integral, d.max_newton_iterations
        );
    }
    art.add(format!("subintervals_n{finest}.csv"), csv);
    art.json("refinement.json", &report);
    art.add("terminal_split.txt", field_dump(&grid, run.transported.last().unwrap(), horizon));
    Ok(RunOutcome {
        artifacts: art,
        passed: true,
        summary: format!("splitting rate {:.3} over n = {:?}", report.rate_reference, report.n),
    })
}

fn audit(cfg: &RunConfig) -> Result<RunOutcome> {
    let traj = reference_run(cfg)?;
    let v = cfg.build_drift()?;
    let structure = cfg.structure()?;
    let (m, q) = (cfg.model.m, cfg.model.q);
    let d = traj.grid.dim();
    let mut report = EstimateReport::new(RunMetadata::new(&traj, m, q, drift_name(&cfg.drift)));
    if q > 1.0 {
        for e in audit_energy_family(&traj, m, q, &v, structure)? {
            report.push(e);
        }
        if (m - q).abs() > 1e-12 && m > 1.25 {
            report.push(audit_energy(&traj, m, m, &v, structure)?);
        }
    }
    report.push(audit_entropy(&traj, m, &v)?);
    report.push(audit_speed(&traj, m, q.min(m), &v)?);
    let lambda = crate::serrin::lambda_q(m, q, d as u32);
    report.push(audit_wasserstein_holder(&traj, lambda)?);
    let r1 = q + 1.0;
    report.push(audit_interpolation(&traj, m, q, r1, interpolation_r2(m, q, d, r1))?);
    report.push(audit_compactness_product(&traj, &v, 1.0, 2.0, 4.0, 4.0)?);
    let mut art = Artifacts::default();
    art.json("report.json", &report);
    art.add("series.csv", trajectory_csv(&traj, q)?);
    let passed = report.all_pass();
    let summary = if passed {
        format!("{} audits passed", report.entries.len())
    } else {
        format!("audits failed: {}", report.failures().join(", "))
    };
    Ok(RunOutcome { artifacts: art, passed, summary })
}

fn drift_name(kind: &crate::flow::DriftKind) -> String {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.get("kind").and_then(|k| k.as_str()).map(String::from))
        .unwrap_or_else(|| "custom".into())
}

fn regions(cfg: &RunConfig) -> Result<RunOutcome> {
    let figure = FigureId::from_str(cfg.regions.figure.as_deref().ok_or_else(|| invalid("no figure given"))?)?;
    let diagram = region_vertices(figure, cfg.model.m, cfg.dimension(), cfg.model.q)?;
    let mut art = Artifacts::default();
    art.json("regions.json", &diagram);
    let summary = serde_json::to_string_pretty(&diagram).expect("diagrams always serialize");
    Ok(RunOutcome { artifacts: art, passed: true, summary })
}

#[derive(Serialize)]
struct ThresholdReport {
    thresholds: crate::serrin::Thresholds,
    verdicts: Vec<crate::serrin::ClassVerdict>,
}

fn threshold_table(cfg: &RunConfig) -> Result<RunOutcome> {
    let (m, q, d) = (cfg.model.m, cfg.model.q, cfg.dimension());
    let table = thresholds(m, d, q)?;
    let mut verdicts = Vec::new();
    if let (Some(q1), Some(q2)) = (cfg.regions.q1, cfg.regions.q2) {
        let ids: Vec<TheoremId> = match &cfg.regions.theorem {
            Some(t) => vec![TheoremId::from_str(t)?],
            None => TheoremId::ALL.to_vec(),
        };
        for t in ids {
            let structure = cfg.regions.structure.unwrap_or(t.structure());
            verdicts.push(theorem_admissible(&ClassQuery::new(t, m, q, d, q1, q2, structure)?)?);
        }
    }
    let report = ThresholdReport { thresholds: table, verdicts };
    let mut art = Artifacts::default();
    art.json("thresholds.json", &report);
    let summary = serde_json::to_string_pretty(&report).expect("tables always serialize");
    Ok(RunOutcome { artifacts: art, passed: true, summary })
}

fn keller_segel(cfg: &RunConfig) -> Result<RunOutcome> {
    let rho0 = cfg.build_initial()?;
    let grid = *rho0.grid();
    let (lo, hi) = (grid.lower(), grid.upper());
    let pi = std::f64::consts::PI;
    let c0 = grid.sample(|p| {
        let (xi, eta) = ((p[0] - lo[0]) / (hi[0] - lo[0]), (p[1] - lo[1]) / (hi[1] - lo[1]));
        cfg.ks.signal_base + cfg.ks.signal_amplitude * (pi * xi).cos() * (pi * eta).cos()
    });
    let state = KsState::new(rho0, c0)?;
    let ks_cfg = KsConfig { chemotaxis: cfg.ks.chemotaxis, ..KsConfig::new(cfg.model.m, cfg.time.dt())? };
    let run = ks_run(&state, &ks_cfg, cfg.time.steps)?;
    let mut report = EstimateReport::new(RunMetadata::new(&run.organisms, cfg.model.m, cfg.model.q, "keller-segel"));
    for e in ks_audit(&run) {
        report.push(e);
    }
    let mut csv = format!("{}\n", KsSample::CSV_HEADER);
    for s in &run.samples {
        csv.push_str(&s.csv_row());
        csv.push('\n');
    }
    let mut art = Artifacts::default();
    art.add("ks_series.csv", csv);
    art.json("report.json", &report);
    if let Some(d) = cfg.model.d.filter(|d| *d >= 3) {
        art.json("ks_exponents.json", &ks_admissible_q(cfg.model.m, d)?);
    }
    art.add("terminal_rho.txt", field_dump(&grid, run.terminal.rho.values(), run.terminal.time));
    art.add("terminal_c.txt", field_dump(&grid, &run.terminal.c, run.terminal.time));
    let passed = report.all_pass();
    let summary = if passed {
        format!("Keller-Segel run: {} audits passed", report.entries.len())
    } else {
        format!("Keller-Segel audits failed: {}", report.failures().join(", "))
    };
    Ok(RunOutcome { artifacts: art, passed, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;

    #[test]
    fn dump_layout() {
        let g = Grid::new_1d(0.0, 1.0, 4).unwrap();
        let s = field_dump(&g, &[1.0, 2.0, 3.0, 4.5], 0.25);
        let lines: Vec<&str> = s.lines().collect();
        assert!(lines[0].starts_with("# dim=1 cells=4x1"));
        assert_eq!(&lines[1..], ["1", "2", "3", "4.5"]);
        assert_eq!(dump_indices(10, 4), vec![0, 4, 8, 10]);
        assert_eq!(dump_indices(10, 0), vec![0, 10]);
    }

    #[test]
    fn regions_report_contains_vertex() {
        let mut cfg = RunConfig::new(Experiment::Regions);
        cfg.model = crate::config::ModelSpec { m: 1.5, q: 2.0, d: Some(3) };
        cfg.regions.figure = Some("1".into());
        let out = execute(&cfg).unwrap();
        let v: serde_json::Value = serde_json::from_slice(out.artifacts.get("regions.json").unwrap()).unwrap();
        let e = v["vertices"].as_array().unwrap().iter().find(|x| x["label"] == "E").unwrap();
        assert_eq!(e["point"][0].as_f64().unwrap(), 0.25);
        assert_eq!(e["point"][1].as_f64().unwrap(), 0.5);
    }

    #[test]
    fn audit_preset_passes_and_is_deterministic() {
        let mut cfg = preset("divfree-rotation").unwrap();
        cfg.grid.cells = 16;
        cfg.time.steps = 16;
        cfg.time.horizon = 0.016;
        let a = execute(&cfg).unwrap();
        assert!(a.passed, "{}", a.summary);
        let b = execute(&cfg).unwrap();
        assert_eq!(a.artifacts, b.artifacts);
    }

    #[test]
    fn manifest_lists_every_file() {
        let mut cfg = RunConfig::new(Experiment::Thresholds);
        cfg.model.d = Some(3);
        let out = execute(&cfg).unwrap();
        let dir = std::env::temp_dir().join(format!("pme-lab-manifest-{}", std::process::id()));
        write_outputs(&dir, &cfg, &out).unwrap();
        let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
        let files = manifest["files"].as_array().unwrap();
        assert_eq!(files.len(), out.artifacts.files.len());
        let bytes = std::fs::read(dir.join("thresholds.json")).unwrap();
        assert_eq!(files[0]["sha256"].as_str().unwrap(), hex(&Sha256::digest(&bytes)));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
