//! The `graft` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use serde_json::json;

use crate::body_model::{BodyModel, HumanState};
use crate::error::{GraftError, Result};
use crate::io::container::TensorContainer;
use crate::io::model_file::{load_model, save_model};
use crate::io::ply::{read_cloud, write_cloud};
use crate::io::state_doc::StateDocument;
use crate::io::synth::{synthesize_features, synthesize_scenario, ScenarioConfig, ScenarioKind, DEFAULT_DIFFICULTY};
use crate::metrics::{contact_labels, contact_prf, evaluate, EvalReport, DEFAULT_CONTACT_TAU};
use crate::network::{ArchConfig, GraftWeights, Init};
use crate::probes::anchors::VisualFeatureGrids;
use crate::probes::{BodyFrame, ProbeSet, TokenAnchors};
use crate::refine::{metric_align, refine, RefinementConfig};
use crate::scene::{ScenePointCloud, SpatialIndex, DEFAULT_NORMALS_K};
use crate::training::bench::{quality_curve, ContactBench, ContactBenchConfig, TASK_NAMES};
use crate::training::{write_curve_csv, LossWeights, MicroTrainConfig, ScaleAugment};

#[derive(Parser, Debug)]
#[command(name = "graft", version, about = "Refine human bodies against metric scene point clouds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic scenario: scene.ply, model.grft, gt.json, init.json.
    Synth(SynthArgs),
    /// Refine initial humans against a scene.
    Refine(RefineArgs),
    /// Score predicted humans against ground truth; prints JSON.
    Eval(EvalArgs),
    /// Print the probe records of every token as JSON.
    ProbeDump(ProbeDumpArgs),
    /// Write a seeded random weight container.
    InitWeights(InitWeightsArgs),
    /// Train the heads of a micro network on a built-in task.
    TrainMicro(TrainMicroArgs),
    /// Contact F1 and wall-clock time per refinement iteration as CSV.
    Curve(CurveArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArchName {
    Micro,
    Full,
}

impl ArchName {
    fn config(self) -> ArchConfig {
        match self {
            ArchName::Micro => ArchConfig::micro(),
            ArchName::Full => ArchConfig::full(),
        }
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ScenarioKind::Standing)]
    pub kind: ScenarioKind,
    /// Multiplier on the initialization noise.
    #[arg(long, default_value_t = DEFAULT_DIFFICULTY)]
    pub difficulty: f64,
    #[arg(long, default_value_t = 1)]
    pub humans: usize,
    /// Also write features.grft with grids sized for this architecture.
    #[arg(long, value_enum)]
    pub features: Option<ArchName>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SceneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    /// Neighbors used when the scene file has no normals.
    #[arg(long, default_value_t = DEFAULT_NORMALS_K)]
    pub normals_k: usize,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long)]
    pub init: PathBuf,
    /// Weight container; a zero network when omitted.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Feature grids for visual anchors.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Ground truth for the f1_vs_gt trajectory column.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub iters: usize,
    #[arg(long)]
    pub max_points: Option<usize>,
    #[arg(long)]
    pub geometry_only: bool,
    /// Rescale each human from the depth seen along its head ray first.
    #[arg(long)]
    pub metric_align: bool,
    #[arg(long, default_value_t = DEFAULT_CONTACT_TAU)]
    pub contact_tau: f64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Scene paired with the predictions.
    #[arg(long)]
    pub scene: PathBuf,
    /// Scene paired with the ground truth; defaults to `--scene`.
    #[arg(long)]
    pub gt_scene: Option<PathBuf>,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Measure predictions against the ground-truth scene.
    #[arg(long)]
    pub shared_scene: bool,
    #[arg(long, default_value_t = DEFAULT_CONTACT_TAU)]
    pub contact_tau: f64,
    #[arg(long, default_value_t = DEFAULT_NORMALS_K)]
    pub normals_k: usize,
    /// Append one CSV row per human to this file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProbeDumpArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long)]
    pub state: PathBuf,
}

#[derive(Args, Debug)]
pub struct InitWeightsArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ArchName::Micro)]
    pub arch: ArchName,
    /// Start the head output layers at zero so the network is a no-op.
    #[arg(long)]
    pub zero_heads: bool,
    /// Store f64 payloads instead of f32.
    #[arg(long)]
    pub f64: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainMicroArgs {
    #[arg(long, default_value = "floor-contact")]
    pub task: String,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the initial random weights.
    #[arg(long, default_value_t = 1)]
    pub init_seed: u64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = ScaleAugment::Off)]
    pub scale_augment: ScaleAugment,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration loss CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CurveArgs {
    /// Scenario seed used when no input files are given.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ScenarioKind::Standing)]
    pub kind: ScenarioKind,
    #[arg(long, requires_all = ["scene", "init", "gt"])]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Refinement iterations to measure.
    #[arg(long, default_value_t = 8)]
    pub iters: usize,
    /// Instead of refinement iterations, train a micro network for this
    /// many steps and report held-out F1 against training iteration.
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub every: usize,
    #[arg(long, default_value_t = DEFAULT_CONTACT_TAU)]
    pub contact_tau: f64,
    #[arg(long, default_value_t = DEFAULT_NORMALS_K)]
    pub normals_k: usize,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Writes to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(GraftError::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| GraftError::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| GraftError::io(path, e))
}

fn load_scene(path: &Path, normals_k: usize) -> Result<SpatialIndex> {
    Ok(SpatialIndex::new(read_cloud(path, Vector3::zeros(), normals_k)?))
}

fn load_weights(path: Option<&Path>) -> Result<GraftWeights> {
    match path {
        Some(p) => GraftWeights::from_container(&TensorContainer::read(p)?),
        None => GraftWeights::new(ArchConfig::micro(), Init::Zeros),
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(GraftError::InvalidArgument(format!("contact tau must be positive, got {tau}")))
    }
}

fn same_count(a: &[HumanState], b: &[HumanState]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(GraftError::StateDocument(format!("{} humans versus {} in the reference", a.len(), b.len())))
    }
}

fn contact_f1(model: &BodyModel, index: &SpatialIndex, s: &HumanState, gt: &HumanState, tau: f64) -> Result<f64> {
    let p = contact_labels(model, &model.forward(s)?, index, tau)?;
    let g = contact_labels(model, &model.forward(gt)?, index, tau)?;
    Ok(contact_prf(&p, &g)?.f1)
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let sc = synthesize_scenario(&ScenarioConfig {
        kind: a.kind,
        seed: a.seed,
        difficulty: a.difficulty,
        humans: a.humans,
    })?;
    ensure_dir(&a.out)?;
    write_cloud(a.out.join("scene.ply"), &sc.cloud)?;
    save_model(a.out.join("model.grft"), &sc.model_parts)?;
    StateDocument::new(&sc.gt, Some(sc.intrinsics)).write(a.out.join("gt.json"))?;
    StateDocument::new(&sc.init, Some(sc.intrinsics)).write(a.out.join("init.json"))?;
    if let Some(arch) = a.features {
        let grids = synthesize_features(&sc.cloud, &sc.intrinsics, arch.config().level_channels, 16.0, a.seed)?;
        grids.to_container().write(a.out.join("features.grft"))?;
    }
    Ok(())
}

pub fn refine_cmd(a: &RefineArgs) -> Result<()> {
    check_tau(a.contact_tau)?;
    let model = load_model(&a.scene.model)?;
    let index = load_scene(&a.scene.scene, a.scene.normals_k)?;
    let doc = StateDocument::read(&a.init)?;
    let mut init = doc.states()?;
    let w = load_weights(a.weights.as_deref())?;
    let grids = a
        .features
        .as_deref()
        .map(|p| VisualFeatureGrids::from_container(&TensorContainer::read(p)?))
        .transpose()?;
    let gt = a.gt.as_deref().map(|p| StateDocument::read(p)?.states()).transpose()?;
    if let Some(g) = &gt {
        same_count(&init, g)?;
    }
    if a.metric_align {
        let k = doc
            .intrinsics
            .ok_or_else(|| GraftError::InvalidArgument("--metric-align needs intrinsics in the init document".into()))?;
        for s in &mut init {
            *s = metric_align(s, &model, index.cloud(), &k)?.0;
        }
    }
    let cfg = RefinementConfig {
        iterations: a.iters,
        geometry_only: a.geometry_only,
        max_points: a.max_points,
        record_trajectory: true,
    };
    let results = refine(&init, &model, &index, grids.as_ref(), &w, &cfg)?;
    ensure_dir(&a.out)?;
    let refined: Vec<HumanState> = results.iter().map(|(s, _)| s.clone()).collect();
    StateDocument::new(&refined, doc.intrinsics).write(a.out.join("refined.json"))?;

    let mut csv = String::from("step,human,mean_probe_dist_mm,scale,");
    if gt.is_some() {
        csv.push_str("f1_vs_gt,");
    }
    csv.push_str("wall_ms\n");
    for (h, (_, t)) in results.iter().enumerate() {
        for (step, s) in t.states.iter().enumerate() {
            let _ = write!(csv, "{step},{h},{:.6},{},", t.mean_probe_dist[step] * 1e3, t.scales[step]);
            if let Some(g) = &gt {
                let _ = write!(csv, "{:.6},", contact_f1(&model, &index, s, &g[h], a.contact_tau)?);
            }
            let _ = writeln!(csv, "{:.3}", t.wall_ms[step]);
        }
    }
    write_file(&a.out.join("trajectory.csv"), csv)
}

pub fn eval_reports(a: &EvalArgs) -> Result<Vec<EvalReport>> {
    check_tau(a.contact_tau)?;
    let model = load_model(&a.model)?;
    let pred = StateDocument::read(&a.pred)?.states()?;
    let gt = StateDocument::read(&a.gt)?.states()?;
    same_count(&pred, &gt)?;
    let scene = load_scene(&a.scene, a.normals_k)?;
    let gt_scene_owned = a.gt_scene.as_deref().map(|p| load_scene(p, a.normals_k)).transpose()?;
    let gt_scene = gt_scene_owned.as_ref().unwrap_or(&scene);
    let pred_scene = if a.shared_scene { gt_scene } else { &scene };
    pred.iter()
        .zip(&gt)
        .map(|(p, g)| {
            evaluate(
                &model,
                &model.forward(p)?,
                pred_scene,
                &model.forward(g)?,
                gt_scene,
                a.contact_tau,
            )
        })
        .collect()
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let reports = eval_reports(a)?;
    if let Some(path) = &a.csv {
        let mut text = String::new();
        let fresh = !path.exists();
        if fresh {
            text.push_str("human,precision,recall,f1,v2s_mm,d2s_deg,pa_mpjpe_mm,contact_tau_m\n");
        }
        for (h, r) in reports.iter().enumerate() {
            let d2s = r.d2s_deg.map_or(String::new(), |d| d.to_string());
            let _ = writeln!(
                text,
                "{h},{},{},{},{},{d2s},{},{}",
                r.precision, r.recall, r.f1, r.v2s_mm, r.pa_mpjpe_mm, r.contact_tau_m
            );
        }
        use std::io::Write;
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| f.write_all(text.as_bytes()))
            .map_err(|e| GraftError::io(path, e))?;
    }
    emit(&(serde_json::to_string_pretty(&reports)? + "\n"))
}

pub fn probe_sets(a: &ProbeDumpArgs) -> Result<Vec<ProbeSet>> {
    let model = load_model(&a.scene.model)?;
    let index = load_scene(&a.scene.scene, a.scene.normals_k)?;
    StateDocument::read(&a.state)?
        .states()?
        .iter()
        .map(|s| {
            let mesh = model.forward(s)?;
            let frame = BodyFrame::new(&model, &mesh, s)?;
            ProbeSet::collect(&index, &frame, &TokenAnchors::new(&model, &mesh)?)
        })
        .collect()
}

fn probe_dump(a: &ProbeDumpArgs) -> Result<()> {
    let sets = probe_sets(a)?;
    let out: Vec<_> = sets
        .iter()
        .map(|p| json!({ "body": p.body, "left_hand": p.hands[0], "right_hand": p.hands[1], "surface": p.surface }))
        .collect();
    emit(&(serde_json::to_string_pretty(&out)? + "\n"))
}

fn init_weights(a: &InitWeightsArgs) -> Result<()> {
    let w = GraftWeights::new(
        a.arch.config(),
        Init::Random {
            seed: a.seed,
            zero_heads: a.zero_heads,
        },
    )?;
    w.to_container(a.f64).write(&a.out)
}

fn train_micro(a: &TrainMicroArgs) -> Result<()> {
    if !TASK_NAMES.contains(&a.task.as_str()) {
        return Err(GraftError::InvalidArgument(format!(
            "unknown task {:?}; available: {}",
            a.task,
            TASK_NAMES.join(", ")
        )));
    }
    let bench = ContactBench::new(ContactBenchConfig::default())?;
    let mut w = GraftWeights::new(
        ArchConfig::micro(),
        Init::Random {
            seed: a.init_seed,
            zero_heads: true,
        },
    )?;
    let cfg = MicroTrainConfig {
        iterations: a.iters,
        batch: a.batch,
        seed: a.seed,
        peak_lr: Some(a.lr),
        scale_augment: a.scale_augment,
        ..Default::default()
    };
    let lw = LossWeights::default();
    let before = (bench.f1_by_step(&w, 3)?, bench.rollout_loss(&w, 3, &lw)?);
    let report = bench.train(&mut w, &cfg)?;
    let after = (bench.f1_by_step(&w, 3)?, bench.rollout_loss(&w, 3, &lw)?);
    w.to_container(false).write(&a.out)?;
    if let Some(path) = &a.curve {
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &report.curve).map_err(|e| GraftError::io(path, e))?;
        write_file(path, buf)?;
    }
    let summary = json!({
        "task": a.task,
        "iterations": a.iters,
        "trained_params": report.trained_params,
        "wall_s": report.wall_s,
        "eval_loss_before": before.1,
        "eval_loss_after": after.1,
        "f1_by_step_before": before.0,
        "f1_by_step_after": after.0,
    });
    emit(&(serde_json::to_string_pretty(&summary)? + "\n"))
}

/// Refinement-iteration curve rows: `(step, f1, mean wall ms)`.
pub fn refinement_curve(
    model: &BodyModel,
    index: &SpatialIndex,
    init: &[HumanState],
    gt: &[HumanState],
    w: &GraftWeights,
    iters: usize,
    tau: f64,
) -> Result<Vec<(usize, f64, f64)>> {
    same_count(init, gt)?;
    let cfg = RefinementConfig {
        iterations: iters,
        ..Default::default()
    };
    let results = refine(init, model, index, None, w, &cfg)?;
    let n = results.len().max(1) as f64;
    let mut rows = Vec::with_capacity(iters + 1);
    for step in 0..=iters {
        let mut f1 = 0.0;
        let mut ms = 0.0;
        for ((_, t), g) in results.iter().zip(gt) {
            f1 += contact_f1(model, index, &t.states[step], g, tau)? / n;
            ms += t.wall_ms[step] / n;
        }
        rows.push((step, f1, ms));
    }
    Ok(rows)
}

fn curve(a: &CurveArgs) -> Result<()> {
    check_tau(a.contact_tau)?;
    let mut csv = String::new();
    if let Some(total) = a.train {
        let bench = ContactBench::new(ContactBenchConfig {
            contact_tau: a.contact_tau,
            ..Default::default()
        })?;
        let mut w = match &a.weights {
            Some(p) => load_weights(Some(p))?,
            None => GraftWeights::new(ArchConfig::micro(), Init::Random { seed: 1, zero_heads: true })?,
        };
        let cfg = MicroTrainConfig {
            iterations: total,
            seed: a.seed,
            ..Default::default()
        };
        let (rows, _) = quality_curve(&bench, &mut w, &cfg, 3, a.every)?;
        csv.push_str("iteration,train_loss,f1,wall_ms\n");
        for r in rows {
            let _ = writeln!(csv, "{},{},{:.6},{:.3}", r.iteration, r.train_loss, r.f1, r.wall_ms);
        }
    } else {
        let (model, cloud, init, gt): (BodyModel, ScenePointCloud, Vec<HumanState>, Vec<HumanState>) = match &a.model {
            Some(m) => (
                load_model(m)?,
                read_cloud(a.scene.as_ref().expect("clap requires"), Vector3::zeros(), a.normals_k)?,
                StateDocument::read(a.init.as_ref().expect("clap requires"))?.states()?,
                StateDocument::read(a.gt.as_ref().expect("clap requires"))?.states()?,
            ),
            None => {
                let sc = synthesize_scenario(&ScenarioConfig {
                    kind: a.kind,
                    seed: a.seed,
                    ..Default::default()
                })?;
                (sc.model, sc.cloud, sc.init, sc.gt)
            }
        };
        let index = SpatialIndex::new(cloud);
        let w = load_weights(a.weights.as_deref())?;
        csv.push_str("iteration,f1,wall_ms\n");
        for (step, f1, ms) in refinement_curve(&model, &index, &init, &gt, &w, a.iters, a.contact_tau)? {
            let _ = writeln!(csv, "{step},{f1:.6},{ms:.3}");
        }
    }
    match &a.out {
        Some(p) => write_file(p, csv),
        None => emit(&csv),
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Refine(a) => refine_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::ProbeDump(a) => probe_dump(a),
        Command::InitWeights(a) => init_weights(a),
        Command::TrainMicro(a) => train_micro(a),
        Command::Curve(a) => curve(a),
    }
}

/// Caps the global worker pool at `GRAFT_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("GRAFT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| GraftError::InvalidArgument(format!("GRAFT_THREADS must be a positive integer, got {v:?}")))?;
    // A pool built earlier in the process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn error_json(e: &GraftError) -> String {
    json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match configure_threads().and_then(|_| execute(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            1
        }
    }
}
