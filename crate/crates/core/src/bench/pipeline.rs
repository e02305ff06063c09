use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ergodic_coefficient, BenchmarkDef, ReferenceRecipe, RunConfig, SweepAxis};
use crate::data::{add_noise, make_collocation, sample_equispaced, DatasetManifest, SampleOrigin, SampleSet};
use crate::error::{Error, Result};
use crate::fem::{resolution_warning, solve_dirichlet, FemSolution, Mesh};
use crate::homogenize::{
    glimit_ergodic_mc, glimit_patch_upscale_2d, weak_limit_glimit_1d, GLimitField, PatchOptions, Provenance,
};
use crate::metrics::{relative_l2_values, ErrorReport, EvalGrid};
use crate::network::{BoundaryWrapper, Checkpoint, MlpSpec, PinnModel};
use crate::training::{train, Problem, RestartSummary, TrainOutcome};

const REFERENCE_FORMAT: &str = "glimit-reference v1";

/// File layout of one run directory.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
}

impl RunArtifacts {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(RunArtifacts { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn config(&self) -> PathBuf {
        self.path("config.json")
    }
    pub fn data(&self) -> PathBuf {
        self.path("data.csv")
    }
    pub fn data_manifest(&self) -> PathBuf {
        self.path("data.manifest.json")
    }
    pub fn fem_solution(&self) -> PathBuf {
        self.path("fem_solution.bin")
    }
    pub fn reference_manifest(&self) -> PathBuf {
        self.path("reference.json")
    }
    pub fn reference_glimit_csv(&self) -> PathBuf {
        self.path("glimit_ref.csv")
    }
    pub fn reference_solution(&self) -> PathBuf {
        self.path("u0_ref.bin")
    }
    pub fn model(&self) -> PathBuf {
        self.path("model.json")
    }
    pub fn train_log(&self) -> PathBuf {
        self.path("train_log.csv")
    }
    pub fn restarts(&self) -> PathBuf {
        self.path("restarts.json")
    }
    pub fn report_json(&self) -> PathBuf {
        self.path("report.json")
    }
    pub fn report_csv(&self) -> PathBuf {
        self.path("report.csv")
    }

    fn write_config(&self, cfg: &RunConfig) -> Result<()> {
        let p = self.config();
        std::fs::write(&p, cfg.to_json()?).map_err(|e| Error::io(&p, e))
    }
}

fn mesh_for(def: &BenchmarkDef, h: f64) -> Result<Mesh> {
    let cells = def
        .lower
        .iter()
        .zip(&def.upper)
        .map(|(a, b)| (((b - a) / h).round() as usize).max(1))
        .collect();
    Mesh::new(def.lower.clone(), def.upper.clone(), cells)
}

/// Multiscale FEM solution `u^eps` of the benchmark on a mesh of spacing `h`.
pub fn multiscale_solution(cfg: &RunConfig, eps: f64, h: f64) -> Result<FemSolution> {
    let def = cfg.def();
    let a = def.coefficient(eps, cfg.omega)?;
    a.check_ellipticity(10_000)?;
    let mesh = mesh_for(&def, h)?;
    if let Some(w) = resolution_warning(&mesh, eps) {
        log::warn!("{}: {w}", def.id);
    }
    solve_dirichlet(&mesh, &a, &|x| def.source(x), &|_| 0.0)
}

/// Writes the multiscale dataset of `cfg` (FEM solve, sampling, noise).
pub fn generate(cfg: &RunConfig, dir: &Path) -> Result<SampleSet> {
    let art = RunArtifacts::new(dir)?;
    let hash = cfg.hash();
    let sol = multiscale_solution(cfg, cfg.eps, cfg.mesh_h)?;
    let origin = SampleOrigin {
        fem_run: format!("fem-{hash}"),
        eps: cfg.eps,
        h: cfg.mesh_h,
    };
    let clean = sample_equispaced(&sol, cfg.n_data, origin)?;
    let mut set = add_noise(&clean, cfg.noise, cfg.noise_seed)?;
    if cfg.noise == 0.0 {
        set.seed = 0;
    }
    art.write_config(cfg)?;
    sol.write_binary(&art.fem_solution())?;
    set.write_csv(&art.data())?;
    let mut manifest = DatasetManifest::new(&set, "data.csv", cfg.def().id.as_str(), &hash);
    if cfg.benchmark == super::BenchmarkId::Ergodic1d {
        manifest.fem_run = format!("{} omega={:?}", manifest.fem_run, cfg.omega);
    }
    manifest.save(&art.data_manifest())?;
    Ok(set)
}

/// Hash of the fields the reference depends on.
pub fn reference_key(cfg: &RunConfig) -> String {
    let v = serde_json::json!({
        "benchmark": cfg.benchmark,
        "reference_h": cfg.reference_h,
        "reference_points": cfg.reference_points,
        "mc_samples": cfg.mc_samples,
        "mc_seed": cfg.mc_seed,
        "patch_eps": cfg.patch_eps,
        "patch_delta": cfg.patch_delta,
        "patch_resolution": cfg.patch_resolution,
    });
    hex::encode(&Sha256::digest(v.to_string().as_bytes())[..8])
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

/// Patch reference on `[1, 2]^2` slices at patch size `delta`.
pub fn patch_reference(cfg: &RunConfig, delta: f64) -> Result<GLimitField> {
    let def = cfg.def();
    let a = def.coefficient(cfg.patch_eps, cfg.omega)?;
    let slices = linspace(def.lower[1], def.upper[1], cfg.reference_points);
    let opts = PatchOptions {
        delta,
        resolution: cfg.patch_resolution,
        x1_center: 0.5 * (def.lower[0] + def.upper[0]),
    };
    glimit_patch_upscale_2d(
        &a,
        cfg.patch_eps,
        ([def.lower[0], def.lower[1]], [def.upper[0], def.upper[1]]),
        &slices,
        opts,
    )
}

/// Reference G-limit of the benchmark.
pub fn reference_glimit(cfg: &RunConfig) -> Result<GLimitField> {
    let def = cfg.def();
    match def.recipe {
        ReferenceRecipe::LocperClosedForm => Ok(GLimitField::analytic(
            1,
            Provenance::Analytic,
            Arc::new(|x: &[f64]| {
                let v = 0.5 * (1.0 + x[0] * x[0]);
                [v, v]
            }),
        )),
        ReferenceRecipe::WeakLimit => Ok(weak_limit_glimit_1d()),
        ReferenceRecipe::MonteCarlo => {
            let grid = linspace(def.lower[0], def.upper[0], cfg.reference_points);
            glimit_ergodic_mc(&|x, w| ergodic_coefficient(x, 0.0, w), &grid, cfg.mc_samples, cfg.mc_seed)
        }
        ReferenceRecipe::Patch => patch_reference(cfg, cfg.patch_delta),
    }
}

/// Tabulated part of a reference G-limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GLimitTable {
    pub axis: usize,
    pub grid: Vec<f64>,
    pub entries: Vec<[f64; 2]>,
    pub std_error: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceManifest {
    pub format: String,
    pub benchmark: String,
    pub reference_key: String,
    pub config_hash: String,
    pub provenance: Provenance,
    pub solution_h: f64,
    pub table: Option<GLimitTable>,
}

/// Reference G-limit with the homogenized FEM solution `u_{0,h}`.
#[derive(Clone, Debug)]
pub struct ReferenceSet {
    pub glimit: GLimitField,
    pub solution: FemSolution,
    pub key: String,
}

fn compute_reference(cfg: &RunConfig) -> Result<ReferenceSet> {
    let def = cfg.def();
    let glimit = reference_glimit(cfg)?;
    glimit.check_window(&def.lower, &def.upper, def.alpha, def.beta, 2_000)?;
    let mesh = mesh_for(&def, cfg.reference_h)?;
    let solution = solve_dirichlet(&mesh, &glimit, &|x| def.source(x), &|_| 0.0)?;
    Ok(ReferenceSet {
        glimit,
        solution,
        key: reference_key(cfg),
    })
}

fn write_reference(cfg: &RunConfig, r: &ReferenceSet, art: &RunArtifacts) -> Result<()> {
    let def = cfg.def();
    let table = r.glimit.as_table().map(|(grid, entries, se)| GLimitTable {
        axis: if def.dim() == 2 { 1 } else { 0 },
        grid: grid.to_vec(),
        entries: entries.to_vec(),
        std_error: se.map(<[f64]>::to_vec),
    });
    let manifest = ReferenceManifest {
        format: REFERENCE_FORMAT.into(),
        benchmark: def.id.as_str().into(),
        reference_key: r.key.clone(),
        config_hash: cfg.hash(),
        provenance: r.glimit.provenance,
        solution_h: cfg.reference_h,
        table,
    };
    let p = art.reference_manifest();
    std::fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&p, e))?;
    let fallback: Vec<[f64; 2]> = linspace(def.lower[0], def.upper[0], 1001).into_iter().map(|x| [x, 0.0]).collect();
    r.glimit.write_csv(&art.reference_glimit_csv(), &fallback)?;
    r.solution.write_binary(&art.reference_solution())?;
    r.solution.write_csv(&art.path("u0_ref.csv"))
}

/// Computes and writes the reference G-limit and homogenized solution.
pub fn reference(cfg: &RunConfig, dir: &Path) -> Result<ReferenceSet> {
    let art = RunArtifacts::new(dir)?;
    let r = compute_reference(cfg)?;
    write_reference(cfg, &r, &art)?;
    Ok(r)
}

/// Loads a reference written by [`reference`] for the same benchmark and
/// reference settings.
pub fn load_reference(cfg: &RunConfig, dir: &Path) -> Result<ReferenceSet> {
    let art = RunArtifacts { dir: dir.to_path_buf() };
    let p = art.reference_manifest();
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let m: ReferenceManifest = serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))?;
    if m.format != REFERENCE_FORMAT || m.benchmark != cfg.benchmark.as_str() {
        return Err(Error::format(&p, format!("not a {} reference", cfg.benchmark)));
    }
    if m.reference_key != reference_key(cfg) {
        return Err(Error::Config(format!(
            "{} was computed with different reference settings",
            p.display()
        )));
    }
    let dim = cfg.def().dim();
    let glimit = match m.table {
        Some(t) => GLimitField::table(dim, m.provenance, t.axis, t.grid, t.entries, t.std_error)?,
        None => reference_glimit(cfg)?,
    };
    let solution = FemSolution::read_binary(&art.reference_solution())?;
    Ok(ReferenceSet {
        glimit,
        solution,
        key: m.reference_key,
    })
}

/// Untrained model with the architecture of `cfg`.
pub fn build_model(cfg: &RunConfig) -> Result<PinnModel> {
    let def = cfg.def();
    let d = def.dim();
    let n = &cfg.network;
    let boxes: Vec<[f64; 2]> = (0..d).map(|k| [def.lower[k], def.upper[k]]).collect();
    let solution = MlpSpec::new(d, 1, n.solution_depth, n.solution_width).with_input_box(boxes.clone());
    let coef_box = def.coef_inputs.iter().map(|&k| boxes[k]).collect();
    let coefficient = MlpSpec::new(def.coef_inputs.len(), def.coef_outputs, n.coefficient_depth, n.coefficient_width)
        .with_input_box(coef_box);
    PinnModel::new(
        solution,
        coefficient,
        def.coef_inputs.clone(),
        cfg.transform,
        BoundaryWrapper::zero(def.lower.clone(), def.upper.clone()),
    )
}

/// Training problem from a dataset.
pub fn build_problem(cfg: &RunConfig, data: &SampleSet) -> Result<Problem> {
    let def = cfg.def();
    let colloc = make_collocation(&def.lower, &def.upper, cfg.n_colloc, cfg.colloc_mode, cfg.data_seed)?;
    Problem::new(build_model(cfg)?, data, &colloc, &|x| def.source(x))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainSummary {
    config_hash: String,
    best: usize,
    restarts: Vec<RestartSummary>,
}

/// Trains on the dataset in `dir`; evaluates against the reference when one
/// is present.
pub fn train_run(cfg: &RunConfig, dir: &Path) -> Result<(TrainOutcome, Option<ErrorReport>)> {
    let art = RunArtifacts::new(dir)?;
    let manifest = DatasetManifest::load(&art.data_manifest())?;
    if manifest.benchmark != cfg.benchmark.as_str() || manifest.n_samples != cfg.n_data {
        return Err(Error::Config(format!(
            "dataset in {} is {} with {} samples, config wants {} with {}",
            dir.display(),
            manifest.benchmark,
            manifest.n_samples,
            cfg.benchmark,
            cfg.n_data
        )));
    }
    if manifest.config_hash != cfg.hash() {
        log::info!("dataset was generated by config {}", manifest.config_hash);
    }
    let data = SampleSet::read_csv(&art.data())?;
    let problem = build_problem(cfg, &data)?;
    let started = Instant::now();
    let outcome = train(&problem, &cfg.train)?;
    log::info!(
        "{}: trained {} restarts in {:.1} s, best {} loss {:.3e}",
        cfg.benchmark,
        outcome.restarts.len(),
        started.elapsed().as_secs_f64(),
        outcome.best,
        outcome.best_summary().final_loss
    );
    art.write_config(cfg)?;
    let best = outcome.best_summary();
    let step = (cfg.train.epochs + cfg.train.lbfgs_iters) as u64 * cfg.train.cycles as u64;
    outcome.model.checkpoint(best.seed, step).save(&art.model())?;
    outcome.write_log_csv(&art.train_log())?;
    let summary = TrainSummary {
        config_hash: cfg.hash(),
        best: outcome.best,
        restarts: outcome.restarts.clone(),
    };
    let p = art.restarts();
    std::fs::write(&p, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&p, e))?;
    let report = if art.reference_manifest().exists() {
        Some(evaluate(cfg, dir)?)
    } else {
        log::info!("no reference in {}; skipping evaluation", dir.display());
        None
    };
    Ok((outcome, report))
}

fn reference_entries(r: &ReferenceSet, dim: usize, x: &[f64]) -> Vec<f64> {
    r.glimit.eval(x)[..dim].to_vec()
}

/// Relative errors of a trained model against a reference.
pub fn error_report(cfg: &RunConfig, model: &PinnModel, r: &ReferenceSet, best: usize, final_loss: f64) -> Result<ErrorReport> {
    let def = cfg.def();
    let d = def.dim();
    let grid = EvalGrid::with_spacing(&def.lower, &def.upper, cfg.eval_h)?;
    let (pts, w) = grid.points_and_weights();
    let learned_a = model.glimit_values(&pts);
    let ref_a: Vec<Vec<f64>> = pts.iter().map(|p| reference_entries(r, d, &p[..d])).collect();
    let e_glimit = relative_l2_values(&learned_a, &ref_a, &w)?;
    let learned_u: Vec<Vec<f64>> = model.solution_values(&pts)?.into_iter().map(|v| vec![v]).collect();
    let ref_u = pts
        .iter()
        .map(|p| {
            r.solution
                .eval(&p[..d])
                .map(|v| vec![v])
                .ok_or_else(|| Error::Usage(format!("evaluation point {p:?} outside reference mesh")))
        })
        .collect::<Result<Vec<_>>>()?;
    let e_solution = relative_l2_values(&learned_u, &ref_u, &w)?;
    Ok(ErrorReport {
        benchmark: def.id.as_str().into(),
        e_glimit,
        e_solution,
        glimit_grid: grid.clone(),
        solution_grid: grid,
        glimit_reference: r.glimit.provenance.as_str().into(),
        solution_reference: format!("fem h={}", cfg.reference_h),
        eps: cfg.eps,
        noise: cfg.noise,
        n_data: cfg.n_data,
        n_colloc: cfg.n_colloc,
        seed: cfg.train.seed,
        config_hash: cfg.hash(),
        best_restart: best,
        final_loss,
    })
}

/// Evaluates the checkpoint in `dir` and writes the error report.
pub fn evaluate(cfg: &RunConfig, dir: &Path) -> Result<ErrorReport> {
    let art = RunArtifacts::new(dir)?;
    let model = Checkpoint::load(&art.model())?.into_model()?;
    let r = load_reference(cfg, dir)?;
    let p = art.restarts();
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let summary: TrainSummary = serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))?;
    let best = summary.best;
    let loss = summary.restarts.get(best).map_or(f64::NAN, |s| s.final_loss);
    let report = error_report(cfg, &model, &r, best, loss)?;
    report.save(&art.report_json(), &art.report_csv())?;
    Ok(report)
}

/// Generate, reference (reusing `shared` when its key matches), train and
/// evaluate in one directory.
pub fn run_all(cfg: &RunConfig, dir: &Path, shared: Option<&ReferenceSet>) -> Result<ErrorReport> {
    let art = RunArtifacts::new(dir)?;
    generate(cfg, dir)?;
    match shared {
        Some(r) if r.key == reference_key(cfg) => write_reference(cfg, r, &art)?,
        _ => {
            reference(cfg, dir)?;
        }
    }
    let (_, report) = train_run(cfg, dir)?;
    report.ok_or_else(|| Error::Run("evaluation did not run".into()))
}

/// One row of a sweep; `error` is set when the run failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub e_glimit: Option<f64>,
    pub e_solution: Option<f64>,
    pub wall_ms: u64,
    pub error: Option<String>,
}

pub const SWEEP_HEADER: &str = "axis,value,e_glimit,e_solution,wall_ms,status";

fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{SWEEP_HEADER}").map_err(io)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in rows {
        let status = r.error.as_ref().map_or("ok".to_string(), |e| format!("\"failed: {}\"", e.replace('"', "'")));
        writeln!(
            w,
            "{},{},{},{},{},{status}",
            r.axis.as_str(),
            r.value,
            opt(r.e_glimit),
            opt(r.e_solution),
            r.wall_ms
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// One full run per value of `axis` under `dir`, `jobs` at a time; failures
/// are recorded per row. Writes `sweep.csv`.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[f64], dir: &Path, jobs: usize) -> Result<Vec<SweepRow>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let configs: Vec<Result<RunConfig>> = values.iter().map(|&v| base.with_axis(axis, v)).collect();
    let shared = if values.is_empty() {
        None
    } else {
        Some(compute_reference(base)?)
    };
    let one = |(v, cfg): (&f64, &Result<RunConfig>)| -> SweepRow {
        let started = Instant::now();
        let sub = dir.join(format!("{}-{v}", axis.as_str()));
        let res = cfg.as_ref().map_err(|e| e.to_string()).and_then(|c| {
            run_all(c, &sub, shared.as_ref()).map_err(|e| e.to_string())
        });
        let wall_ms = started.elapsed().as_millis() as u64;
        match res {
            Ok(rep) => SweepRow {
                axis,
                value: *v,
                e_glimit: Some(rep.e_glimit),
                e_solution: Some(rep.e_solution),
                wall_ms,
                error: None,
            },
            Err(e) => {
                log::error!("sweep {}={v} failed: {e}", axis.as_str());
                SweepRow {
                    axis,
                    value: *v,
                    e_glimit: None,
                    e_solution: None,
                    wall_ms,
                    error: Some(e),
                }
            }
        }
    };
    let rows: Vec<SweepRow> = if jobs <= 1 {
        values.iter().zip(&configs).map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Run(format!("thread pool: {e}")))?;
        pool.install(|| values.par_iter().zip(configs.par_iter()).map(one).collect())
    };
    write_sweep_csv(&dir.join("sweep.csv"), &rows)?;
    Ok(rows)
}

/// Tidy CSVs of the learned and reference fields of the run in `dir`:
/// `plot_glimit.csv` (coordinate, entry, learned, reference) and
/// `plot_solution.csv` (coordinates, learned, reference, absolute error).
pub fn export_plots(cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let art = RunArtifacts::new(dir)?;
    let model = Checkpoint::load(&art.model())?.into_model()?;
    let r = load_reference(cfg, dir)?;
    let def = cfg.def();
    let d = def.dim();
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| Error::io(&p, e)
    };

    let gpath = art.path("plot_glimit.csv");
    let mut g = std::io::BufWriter::new(std::fs::File::create(&gpath).map_err(io(&gpath))?);
    let axis = if d == 2 { 1 } else { 0 };
    let mid = 0.5 * (def.lower[0] + def.upper[0]);
    let pts: Vec<[f64; 2]> = linspace(def.lower[axis], def.upper[axis], 1001)
        .into_iter()
        .map(|t| if d == 2 { [mid, t] } else { [t, 0.0] })
        .collect();
    let learned = model.glimit_values(&pts);
    writeln!(g, "{},entry,learned,reference", if d == 2 { "x2" } else { "x" }).map_err(io(&gpath))?;
    for (p, l) in pts.iter().zip(&learned) {
        let rv = r.glimit.eval(&p[..d]);
        for (k, lv) in l.iter().enumerate() {
            let entry = if d == 2 { ["a11", "a22"][k] } else { "a" };
            writeln!(g, "{},{entry},{lv},{}", p[axis], rv[k]).map_err(io(&gpath))?;
        }
    }
    g.flush().map_err(io(&gpath))?;

    let upath = art.path("plot_solution.csv");
    let mut u = std::io::BufWriter::new(std::fs::File::create(&upath).map_err(io(&upath))?);
    let grid = if d == 2 {
        EvalGrid::with_spacing(&def.lower, &def.upper, 1.0 / 128.0)?
    } else {
        EvalGrid::with_spacing(&def.lower, &def.upper, 1e-3)?
    };
    let (pts, _) = grid.points_and_weights();
    let learned = model.solution_values(&pts)?;
    writeln!(u, "{},learned,reference,abs_error", if d == 2 { "x1,x2" } else { "x" }).map_err(io(&upath))?;
    for (p, l) in pts.iter().zip(&learned) {
        let rv = r.solution.eval(&p[..d]).unwrap_or(f64::NAN);
        let coords = if d == 2 { format!("{},{}", p[0], p[1]) } else { p[0].to_string() };
        writeln!(u, "{coords},{l},{rv},{}", (l - rv).abs()).map_err(io(&upath))?;
    }
    u.flush().map_err(io(&upath))?;
    Ok(vec![gpath, upath])
}

/// `max |u^eps - u_{0,h}|` over the nodes of a common mesh of spacing `h`
/// for each `eps`.
pub fn convergence_linf(cfg: &RunConfig, eps_list: &[f64], h: f64) -> Result<Vec<f64>> {
    let def = cfg.def();
    let glimit = reference_glimit(cfg)?;
    let mesh = mesh_for(&def, h)?;
    let u0 = solve_dirichlet(&mesh, &glimit, &|x| def.source(x), &|_| 0.0)?;
    eps_list
        .iter()
        .map(|&eps| {
            let ue = multiscale_solution(cfg, eps, h)?;
            Ok(ue.values.iter().zip(&u0.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::BenchmarkId;
    use serde_json::json;

    fn small(id: BenchmarkId, extra: serde_json::Value) -> RunConfig {
        let mut v = json!({
            "mesh_h": 1.0 / 4096.0,
            "reference_h": 1.0 / 1024.0,
            "eval_h": 1e-3,
            "n_data": 40,
            "n_colloc": 50,
            "network": {"solution_depth": 1, "solution_width": 6, "coefficient_depth": 1, "coefficient_width": 4},
            "train": {"epochs": 20, "lbfgs_iters": 5, "restarts": 1, "batch_size": 32}
        });
        super::super::config::merge(&mut v, &extra);
        RunConfig::resolve(Some(id), &v).unwrap()
    }

    #[test]
    fn generate_writes_reproducible_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(BenchmarkId::Locper1d, json!({"noise": 0.05, "eps": 1.0 / 16.0}));
        let a = generate(&cfg, &dir.path().join("a")).unwrap();
        let b = generate(&cfg, &dir.path().join("b")).unwrap();
        assert_eq!(a.len(), 40);
        let read = |p: &str| std::fs::read(dir.path().join(p).join("data.csv")).unwrap();
        assert_eq!(read("a"), read("b"));
        assert_eq!(a, b);
        let m = DatasetManifest::load(&dir.path().join("a/data.manifest.json")).unwrap();
        assert_eq!((m.noise, m.n_samples), (0.05, 40));
        assert_eq!(m.config_hash, cfg.hash());
    }

    #[test]
    fn multiscale_data_lies_near_homogenized_solution() {
        // |u^eps - u_0| <= C eps with C well below 1 for this problem
        let cfg = small(BenchmarkId::Locper1d, json!({"n_data": 160, "eps": 1.0 / 128.0, "mesh_h": 1.0 / 32768.0}));
        let dir = tempfile::tempdir().unwrap();
        let set = generate(&cfg, dir.path()).unwrap();
        let r = reference(&cfg, dir.path()).unwrap();
        let worst = set
            .points
            .iter()
            .zip(&set.values)
            .map(|(p, v)| (v - r.solution.eval(&p[..1]).unwrap()).abs())
            .fold(0.0, f64::max);
        assert!(worst < cfg.eps, "{worst}");
    }

    #[test]
    fn ergodic_manifest_records_omega() {
        let cfg = small(BenchmarkId::Ergodic1d, json!({"mesh_h": 1.0 / 16384.0}));
        let dir = tempfile::tempdir().unwrap();
        generate(&cfg, dir.path()).unwrap();
        let m = DatasetManifest::load(&dir.path().join("data.manifest.json")).unwrap();
        assert!(m.fem_run.contains("omega=[0.5, 0.5]"), "{}", m.fem_run);
    }

    #[test]
    fn reference_spot_values() {
        let l = reference_glimit(&RunConfig::defaults(BenchmarkId::Locper1d, false)).unwrap();
        assert_eq!(l.eval(&[0.0])[0], 0.5);
        let o = reference_glimit(&RunConfig::defaults(BenchmarkId::Oscil1d, false)).unwrap();
        assert!((o.eval(&[0.0])[0] - (std::f64::consts::E - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_reference_is_reproducible() {
        let cfg = small(BenchmarkId::Ergodic1d, json!({"mc_samples": 20_000, "reference_points": 11}));
        let dir = tempfile::tempdir().unwrap();
        reference(&cfg, &dir.path().join("a")).unwrap();
        reference(&cfg, &dir.path().join("b")).unwrap();
        for f in ["reference.json", "glimit_ref.csv", "u0_ref.bin"] {
            let read = |p: &str| std::fs::read(dir.path().join(p).join(f)).unwrap();
            assert_eq!(read("a"), read("b"), "{f}");
        }
        let back = load_reference(&cfg, &dir.path().join("a")).unwrap();
        assert_eq!(back.glimit.provenance, Provenance::MonteCarlo);
        let other = small(BenchmarkId::Ergodic1d, json!({"mc_samples": 30_000, "reference_points": 11}));
        assert!(load_reference(&other, &dir.path().join("a")).is_err());
    }

    #[test]
    fn smoke_run_reports_on_initialization() {
        let cfg = small(BenchmarkId::Locper1d, json!({"train": {"epochs": 0, "lbfgs_iters": 0}}));
        let dir = tempfile::tempdir().unwrap();
        let rep = run_all(&cfg, dir.path(), None).unwrap();
        assert!(rep.e_glimit > 0.0 && rep.e_solution > 0.0);
        let again = evaluate(&cfg, dir.path()).unwrap();
        assert_eq!(again, rep);
        let files = export_plots(&cfg, dir.path()).unwrap();
        for f in files {
            assert!(std::fs::read_to_string(f).unwrap().lines().count() > 100);
        }
    }

    #[test]
    fn empty_sweep_writes_header_only() {
        let cfg = small(BenchmarkId::Locper1d, json!({}));
        let dir = tempfile::tempdir().unwrap();
        let rows = sweep(&cfg, SweepAxis::Noise, &[], dir.path(), 1).unwrap();
        assert!(rows.is_empty());
        let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(text.trim(), SWEEP_HEADER);
    }

    #[test]
    fn sweep_records_failures_and_continues() {
        let cfg = small(BenchmarkId::Locper1d, json!({"eps": 1.0 / 16.0}));
        let dir = tempfile::tempdir().unwrap();
        let rows = sweep(&cfg, SweepAxis::Noise, &[0.0, 0.9], dir.path(), 1).unwrap();
        assert!(rows[0].error.is_none() && rows[0].e_solution.is_some());
        assert!(rows[1].error.is_some());
        let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn linf_gap_shrinks_with_eps() {
        let cfg = RunConfig::defaults(BenchmarkId::Locper1d, false);
        let eps = [1.0 / 8.0, 1.0 / 16.0];
        let m = convergence_linf(&cfg, &eps, 1.0 / 4096.0).unwrap();
        assert!(m[1] < m[0]);
    }
}
