use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::density::{killed_kernel_floor, minorization_check, FloorReport};
use crate::error::{Error, Result};
use crate::geometry::{inspect_cone, stability_margin, PolyhedralCone};
use crate::leveling::{leveling_gap, log_envelope, psi_class_check, psi_gap, GapStatus};
use crate::rng::StreamKey;
use crate::simulate::{
    classify_start, coupled_scaling_gap, flow_ode, fmt_f64, simulate_path, simulate_terminal, write_increments,
    write_sim_path_csv, DiffusionModel,
};
use crate::skorokhod::{reflection_matrix, solve_sp, CompletelyS, PiecewisePath};
use crate::simulate::{read_path_csv, write_reflected_csv};
use crate::stats::Verdict;

use super::config::{DriftSpec, ExperimentConfig, KindParams, PathSource};

pub const MANIFEST_NAME: &str = "manifest.json";

/// Spot-check pairs drawn when a model is validated.
const MODEL_CHECK_PAIRS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Complete,
    Pass,
    Fail,
    Inconclusive,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Complete | RunStatus::Pass => 0,
            RunStatus::Inconclusive => 2,
            RunStatus::Fail => 1,
        }
    }
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunStatus::Complete => "COMPLETE",
            RunStatus::Pass => "PASS",
            RunStatus::Fail => "FAIL",
            RunStatus::Inconclusive => "INCONCLUSIVE",
        })
    }
}

impl From<Verdict> for RunStatus {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Pass => RunStatus::Pass,
            Verdict::Fail => RunStatus::Fail,
            Verdict::Inconclusive => RunStatus::Inconclusive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileRecord {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub version: String,
    pub started_unix: f64,
    pub wall_clock_seconds: f64,
    pub stages: Vec<StageTiming>,
    pub files: Vec<FileRecord>,
    pub status: RunStatus,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Output directory; falls back to the config's `output`, then
    /// `conecraft-out`.
    pub out_dir: Option<PathBuf>,
    /// Directory against which relative input paths are resolved.
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub out_dir: PathBuf,
}

/// Writes files into the output directory and keeps the digest inventory.
struct Sink {
    dir: PathBuf,
    files: Vec<FileRecord>,
}

impl Sink {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.push(FileRecord {
            name: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.put(name, &bytes)
    }

    fn with(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut bytes = Vec::new();
        write(&mut bytes)?;
        self.put(name, &bytes)
    }
}

struct Stages(Vec<StageTiming>);

impl Stages {
    fn time<T>(&mut self, stage: &str, work: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = work()?;
        self.0.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }
}

/// Runs a validated config and writes its outputs plus `manifest.json`.
pub fn run(config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutcome> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    let clock = Instant::now();
    let out_dir = options
        .out_dir
        .clone()
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("conecraft-out"));
    fs::create_dir_all(&out_dir)?;
    let mut sink = Sink {
        dir: out_dir.clone(),
        files: Vec::new(),
    };
    let mut stages = Stages(Vec::new());
    let cone = stages.time("setup", || config.cone.build())?;
    let status = dispatch(config, &cone, options, &mut sink, &mut stages)?;
    let manifest = RunManifest {
        config: config.to_json(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: started,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        stages: stages.0,
        files: sink.files,
        status,
        exit_code: status.exit_code(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(out_dir.join(MANIFEST_NAME), bytes)?;
    Ok(RunOutcome { manifest, out_dir })
}

fn model_at(config: &ExperimentConfig, epsilon: f64) -> Result<DiffusionModel> {
    config.model.build(config.cone.dim(), epsilon)
}

fn floor_outputs(sink: &mut Sink, report: &FloorReport) -> Result<RunStatus> {
    sink.json("floor.json", report)?;
    sink.with("floor.csv", |b| report.write_csv(b))?;
    Ok(report.verdict.into())
}

fn dispatch(
    config: &ExperimentConfig,
    cone: &PolyhedralCone,
    options: &RunOptions,
    sink: &mut Sink,
    stages: &mut Stages,
) -> Result<RunStatus> {
    let key = StreamKey::new(config.seed);
    let eps = &config.model.epsilons;
    match &config.params {
        KindParams::Validate => {
            let (report, matrix) = stages.time("cone", || Ok((inspect_cone(cone), reflection_matrix(cone))))?;
            let model = model_at(config, eps[0])?;
            let check = stages.time("model", || model.spot_check(cone, MODEL_CHECK_PAIRS, 2.0, config.seed))?;
            let stability = match &config.model.drift {
                DriftSpec::Constant { vector } => Some(stability_margin(cone, vector)?),
                _ => None,
            };
            let ok = report.passed()
                && !matches!(matrix.completely_s, CompletelyS::Fails { .. })
                && check.violations.is_empty();
            let status = if ok { RunStatus::Pass } else { RunStatus::Fail };
            sink.json(
                "validation.json",
                &json!({
                    "cone": report,
                    "reflection_matrix": matrix,
                    "model_check": check,
                    "drift_stability": stability,
                    "verdict": if ok { Verdict::Pass } else { Verdict::Fail },
                }),
            )?;
            Ok(status)
        }
        KindParams::SpSolve(p) => {
            let psi = match &p.path {
                PathSource::File { path } => {
                    let file = resolve(&options.base_dir, path);
                    let reader = std::io::BufReader::new(fs::File::open(&file)?);
                    read_path_csv(reader)?
                }
                PathSource::Inline { times, values } => PiecewisePath::new(times.clone(), values.clone())?,
            };
            if psi.dim() != cone.dim() {
                return Err(Error::InvalidInput(format!(
                    "path has dimension {}, the cone {}",
                    psi.dim(),
                    cone.dim()
                )));
            }
            let solved = stages.time("solve", || solve_sp(cone, &psi, p.refine))?;
            sink.with("reflected.csv", |b| write_reflected_csv(&solved, b))?;
            sink.json(
                "sp_solve.json",
                &json!({
                    "points": solved.len(),
                    "complementarity_ratio": solved.complementarity_ratio(cone),
                    "containment_violation": solved.containment_violation(cone),
                    "decomposition_residual": solved.decomposition_residual(),
                    "total_variation": solved.total_variation.last().copied().unwrap_or(0.0),
                }),
            )?;
            Ok(RunStatus::Complete)
        }
        KindParams::Simulate(p) if !p.write_paths => {
            let matrix = reflection_matrix(cone);
            let mut summary = Vec::new();
            let mut rows = Vec::new();
            for (ei, &e) in eps.iter().enumerate() {
                let model = model_at(config, e)?;
                let terminals = stages.time(&format!("simulate eps={e}"), || {
                    (0..p.paths)
                        .into_par_iter()
                        .map(|pi| {
                            let mut rng = key.child(ei as u64).child(pi).rng();
                            simulate_terminal(cone, &matrix, &model, &p.x0, p.horizon, p.dt, &mut rng)
                        })
                        .collect::<Result<Vec<_>>>()
                })?;
                let k = cone.dim();
                let mean: Vec<f64> = (0..k)
                    .map(|i| terminals.iter().map(|z| z[i]).sum::<f64>() / terminals.len() as f64)
                    .collect();
                summary.push(json!({ "epsilon": e, "paths": p.paths, "mean_terminal": mean }));
                rows.extend(terminals.into_iter().enumerate().map(|(pi, z)| (e, pi, z)));
            }
            sink.with("terminals.csv", |b| {
                use std::io::Write;
                let header: Vec<String> = (1..=cone.dim()).map(|i| format!("z{i}")).collect();
                writeln!(b, "epsilon,path,{}", header.join(","))?;
                for (e, pi, z) in &rows {
                    let values: Vec<String> = z.iter().map(|v| fmt_f64(*v)).collect();
                    writeln!(b, "{},{pi},{}", fmt_f64(*e), values.join(","))?;
                }
                Ok(())
            })?;
            sink.json("simulate.json", &summary)?;
            Ok(RunStatus::Complete)
        }
        KindParams::Simulate(p) => {
            let mut summary = Vec::new();
            for (ei, &e) in eps.iter().enumerate() {
                let model = model_at(config, e)?;
                let paths = stages.time(&format!("simulate eps={e}"), || {
                    (0..p.paths)
                        .into_par_iter()
                        .map(|pi| {
                            let mut rng = key.child(ei as u64).child(pi).rng();
                            simulate_path(cone, &model, &p.x0, p.horizon, p.dt, &mut rng)
                        })
                        .collect::<Result<Vec<_>>>()
                })?;
                for (pi, path) in paths.iter().enumerate() {
                    let stem = format!("path_e{ei}_p{pi}");
                    sink.with(&format!("{stem}.csv"), |b| write_sim_path_csv(path, b))?;
                    if p.save_increments {
                        sink.with(&format!("{stem}.bin"), |b| write_increments(b, cone.dim(), &path.increments))?;
                    }
                    summary.push(json!({
                        "epsilon": e,
                        "path": pi,
                        "terminal": path.terminal(),
                        "containment_violation": path.containment_violation(cone),
                        "decomposition_residual": path.decomposition_residual(cone, &model),
                    }));
                }
            }
            sink.json("simulate.json", &summary)?;
            Ok(RunStatus::Complete)
        }
        KindParams::Flow(p) => {
            let model = model_at(config, 0.0)?;
            let path = stages.time("flow", || flow_ode(cone, &model, &p.x0, p.horizon, p.dt))?;
            sink.with("flow.csv", |b| write_sim_path_csv(&path, b))?;
            let class = match &p.domain {
                Some(d) => Some(classify_start(cone, &model, d, &p.x0, p.gamma, p.horizon, p.dt)?),
                None => None,
            };
            sink.json(
                "flow.json",
                &json!({ "terminal": path.terminal(), "classification": class }),
            )?;
            Ok(match &class {
                Some(c) if c.is_inconclusive() => RunStatus::Inconclusive,
                _ => RunStatus::Complete,
            })
        }
        KindParams::Minorization(setup) => {
            let model = model_at(config, setup.epsilons[0])?;
            let report = stages.time("minorization", || minorization_check(cone, &model, setup, key))?;
            floor_outputs(sink, &report)
        }
        KindParams::KilledFloor(setup) => {
            let model = model_at(config, setup.epsilons[0])?;
            let report = stages.time("killed_floor", || killed_kernel_floor(&model, setup, key))?;
            floor_outputs(sink, &report)
        }
        KindParams::Leveling(p) => {
            let model = model_at(config, p.setup.epsilons[0])?;
            let f = |z: &[f64]| p.functional.eval(z);
            let curve = stages.time("leveling", || {
                leveling_gap(cone, &model, &p.domain, &f, p.functional_bound, &p.setup, key)
            })?;
            sink.with("gap.csv", |b| curve.write_csv(b))?;
            let slope_negative = curve.slope.map(|s| s < 0.0);
            sink.json(
                "gap.json",
                &json!({
                    "status": curve.status,
                    "slope": curve.slope,
                    "delta1_hat": curve.delta1_hat,
                    "fit_epsilons": curve.fit_epsilons,
                    "ordered_2se": curve.strictly_ordered(2.0),
                    "slope_negative": slope_negative,
                    "max_abs_functional": curve.max_abs_functional,
                    "points": curve.points,
                }),
            )?;
            Ok(match curve.status {
                GapStatus::Censoring => RunStatus::Inconclusive,
                GapStatus::Ok => RunStatus::Complete,
            })
        }
        KindParams::PsiGap(p) => {
            let model = model_at(config, p.setup.epsilons[0])?;
            let psi = log_envelope(p.power);
            let class = psi_class_check(&psi, p.q, p.m, p.probe_horizon, p.declared_bound)?;
            if !class.member {
                sink.json("psi_gap.json", &json!({ "class_check": class, "verdict": Verdict::Fail }))?;
                return Ok(RunStatus::Fail);
            }
            let result = stages.time("psi_gap", || psi_gap(cone, &model, &p.domain, &psi, class, &p.setup, key))?;
            sink.with("psi_gap.csv", |b| result.curve.write_csv(b))?;
            sink.json("psi_gap.json", &result)?;
            Ok(result.verdict.into())
        }
        KindParams::ScalingCheck(p) => {
            let mut rows = Vec::new();
            let mut groups = Vec::new();
            let mut all_pass = true;
            for (ei, &e) in eps.iter().enumerate() {
                let model = model_at(config, e)?;
                for (di, &dt) in p.dts.iter().enumerate() {
                    let gaps = stages.time(&format!("scaling eps={e} dt={dt}"), || {
                        (0..p.paths)
                            .into_par_iter()
                            .map(|pi| {
                                let mut rng = key.child(ei as u64).child(di as u64).child(pi).rng();
                                coupled_scaling_gap(cone, &model, &p.x_bar, p.horizon, dt, &mut rng)
                            })
                            .collect::<Result<Vec<_>>>()
                    })?;
                    let limit = p.factor * dt.sqrt();
                    let worst = gaps.iter().map(|g| g.sup_gap).fold(0.0, f64::max);
                    let pass = worst <= limit;
                    all_pass &= pass;
                    groups.push(json!({ "epsilon": e, "dt": dt, "max_sup_gap": worst, "limit": limit, "pass": pass }));
                    rows.extend(gaps.into_iter().enumerate().map(|(pi, g)| (e, dt, pi, g.sup_gap, limit)));
                }
            }
            sink.with("scaling.csv", |b| {
                use std::io::Write;
                writeln!(b, "epsilon,dt,path,sup_gap,limit")?;
                for (e, dt, pi, gap, limit) in &rows {
                    writeln!(
                        b,
                        "{},{},{pi},{},{}",
                        fmt_f64(*e),
                        fmt_f64(*dt),
                        fmt_f64(*gap),
                        fmt_f64(*limit)
                    )?;
                }
                Ok(())
            })?;
            let verdict = if all_pass { Verdict::Pass } else { Verdict::Fail };
            sink.json("scaling.json", &json!({ "groups": groups, "verdict": verdict }))?;
            Ok(verdict.into())
        }
    }
}

fn resolve(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::parse_config;

    const VALIDATE: &str = "\
[experiment]
kind = validate
seed = 1
[cone]
preset = orthant
k = 2
[model]
drift = constant
drift_vector = [-0.7071067811865476, -0.7071067811865476]
";

    fn run_in(dir: &Path, text: &str) -> RunOutcome {
        let config = parse_config(text).unwrap();
        let options = RunOptions {
            out_dir: Some(dir.to_path_buf()),
            base_dir: dir.to_path_buf(),
        };
        run(&config, &options).unwrap()
    }

    #[test]
    fn validate_on_orthant_writes_one_report() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_in(dir.path(), VALIDATE);
        assert_eq!(out.manifest.status, RunStatus::Pass);
        assert_eq!(out.manifest.exit_code, 0);
        assert_eq!(out.manifest.files.len(), 1);
        assert_eq!(out.manifest.files[0].name, "validation.json");
        assert!(dir.path().join(MANIFEST_NAME).exists());
    }

    #[test]
    fn reruns_reproduce_digests() {
        let text = "\
[experiment]
kind = simulate
seed = 9
[cone]
preset = orthant
k = 2
[model]
drift = constant
drift_vector = [-0.7071067811865476, -0.7071067811865476]
epsilon = [0.5, 0.1]
[simulate]
x0 = [0.3, 0.2]
horizon = 0.5
dt = 0.01
paths = 3
save_increments = true
";
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = run_in(a.path(), text);
        let rb = run_in(b.path(), text);
        assert_eq!(ra.manifest.files.len(), 13);
        assert_eq!(ra.manifest.files, rb.manifest.files);
    }

    #[test]
    fn sp_solve_reads_relative_path_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("psi.csv"), "t,v\n0,0.5\n1,-0.5\n2,0.25\n").unwrap();
        let text = "\
[experiment]
kind = sp_solve
seed = 1
[cone]
preset = orthant
k = 1
[sp_solve]
path = psi.csv
";
        let out = run_in(dir.path(), text);
        assert_eq!(out.manifest.status, RunStatus::Complete);
        let summary: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("sp_solve.json")).unwrap()).unwrap();
        assert!(summary["complementarity_ratio"].as_f64().unwrap() <= 1e-10);
    }
}
