//! Command-line front end: one subcommand per pipeline stage.
//!
//! Exit codes: 0 success, 1 invalid input (bad flags, missing or malformed
//! files, inconsistent configuration), 2 runtime failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use maskdistill::dataio::{
    encode_label_pgm, encode_pbm, load_checkpoint, load_dataset, save_checkpoint, save_dataset, scores_csv,
    write_bytes, SceneDataset, Split, Tensor, ViewRecord,
};
use maskdistill::fields::Backend;
use maskdistill::inference::{QueryConfig, SegmentConfig};
use maskdistill::pipeline::{bench_csv, bench_sweep, evaluate, query_camera, segment_camera};
use maskdistill::synthetic::{build_dataset, generate_scene, SceneParams, SupervisionParams};
use maskdistill::trainer::{geometry_history_csv, loss_history_csv, pipeline_gradcheck, TrainConfig, TrainState};
use maskdistill::metrics::EvalReport;

pub const GEOMETRY_CHECKPOINT: &str = "geometry.ckpt";
pub const MASKFIELD_CHECKPOINT: &str = "maskfield.ckpt";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const BENCH_CSV: &str = "bench.csv";

/// Gradient checks above this relative error fail the command.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "maskdistill", version, about = "Mask-level distillation into neural fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene dataset into --out.
    Gen(GenArgs),
    /// Stage one: fit density and color to the images.
    TrainGeo(TrainGeoArgs),
    /// Stage two: distill masks into the field with geometry frozen.
    TrainMask(TrainMaskArgs),
    /// Label every pixel of the selected views.
    Segment(SegmentArgs),
    /// Retrieve the mask of a text query in the selected views.
    Query(QueryArgs),
    /// Score segmentation against ground truth.
    Eval(EvalArgs),
    /// Finite-difference check of the full pipeline gradient.
    Gradcheck(GradcheckArgs),
    /// Sweep the mask feature width on a shared geometry.
    Bench(BenchArgs),
}

#[derive(Debug, Args, Serialize)]
struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Debug, Args, Serialize)]
struct SceneArgs {
    #[arg(long, default_value_t = 3)]
    objects: usize,
    /// Give every object a nested part with its own class.
    #[arg(long)]
    parts: bool,
    #[arg(long, default_value_t = 16)]
    views: usize,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Maximum mask boundary shift in pixels.
    #[arg(long, default_value_t = 0)]
    jitter: usize,
    /// Expected norm of the noise added to mask embeddings.
    #[arg(long, default_value_t = 0.0)]
    embed_noise: f64,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    scene: SceneArgs,
}

#[derive(Debug, Args, Serialize)]
struct ModelArgs {
    #[arg(long, value_parser = parse_backend)]
    backend: Option<Backend>,
    /// Mask feature width.
    #[arg(long)]
    dm: Option<usize>,
    /// Number of query/semantic token pairs.
    #[arg(long)]
    nk: Option<usize>,
    /// Fraction of training views that supply masks.
    #[arg(long)]
    view_fraction: Option<f64>,
    #[arg(long)]
    stage1_steps: Option<usize>,
    #[arg(long)]
    stage2_steps: Option<usize>,
    #[arg(long)]
    grid_res: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// JSON file with a full training configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainGeoArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory (default: --out).
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct TrainMaskArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Stage-one checkpoint (default: <out>/geometry.ckpt).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ViewSel {
    Train,
    Test,
    All,
}

#[derive(Debug, Args, Serialize)]
struct InferArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Trained checkpoint (default: <out>/maskfield.ckpt).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ViewSel::Test)]
    views: ViewSel,
    /// Mean-filter size applied to masks before labelling.
    #[arg(long, default_value_t = 10)]
    smooth_k: usize,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    infer: InferArgs,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long, default_value_t = 0.8)]
    nms_iou: f64,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    infer: InferArgs,
    /// Class or canonical phrase from the dataset's text embeddings.
    #[arg(long, conflicts_with = "embedding", required_unless_present = "embedding")]
    text: Option<String>,
    /// Query embedding as an MFT1 tensor of length D_S.
    #[arg(long)]
    embedding: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    infer: InferArgs,
    /// Boundary band half-width in pixels for mBIoU.
    #[arg(long, default_value_t = 2)]
    band: usize,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = parse_backend)]
    backend: Option<Backend>,
    /// Random coordinates checked on top of every nonzero-gradient one.
    #[arg(long, default_value_t = 200)]
    extra: usize,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory; a synthetic scene is generated when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated mask feature widths.
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
    dm: Vec<usize>,
    #[arg(long)]
    nk: Option<usize>,
    #[arg(long)]
    stage1_steps: Option<usize>,
    #[arg(long)]
    stage2_steps: Option<usize>,
    #[arg(long, default_value_t = 10)]
    smooth_k: usize,
    /// Timed render passes per width; the fastest counts.
    #[arg(long, default_value_t = 5)]
    repeats: usize,
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    s.parse().map_err(|e: maskdistill::Error| e.to_string())
}

/// Marks an error as caused by the caller's input.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn exit_code(err: &anyhow::Error) -> i32 {
    let validation = err.chain().any(|e| {
        e.downcast_ref::<UsageError>().is_some()
            || e.downcast_ref::<maskdistill::Error>().is_some_and(|e| e.is_validation())
    });
    if validation {
        1
    } else {
        2
    }
}

/// Runs one command line (including the program name) and returns the exit
/// code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let common = match &cli.command {
        Command::Gen(a) => &a.common,
        Command::TrainGeo(a) => &a.common,
        Command::TrainMask(a) => &a.common,
        Command::Segment(a) => &a.common,
        Command::Query(a) => &a.common,
        Command::Eval(a) => &a.common,
        Command::Gradcheck(a) => &a.common,
        Command::Bench(a) => &a.common,
    };
    let name = command_name(&cli.command);
    let start = Instant::now();
    let result = if common.threads == 0 {
        Err(UsageError("--threads must be at least 1".into()).into())
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build()
            .context("building the thread pool")
            .and_then(|pool| pool.install(|| dispatch(&cli.command)))
    };
    let (code, resolved, error) = match result {
        Ok(resolved) => (0, resolved, None),
        Err(e) => {
            eprintln!("error: {e:#}");
            (exit_code(&e), Value::Null, Some(format!("{e:#}")))
        }
    };
    let manifest = json!({
        "command": name,
        "argv": argv.iter().map(|a| a.to_string_lossy().into_owned()).collect::<Vec<_>>(),
        "seed": common.seed,
        "threads": common.threads,
        "config": resolved,
        "versions": {
            "maskdistill": maskdistill::VERSION,
            "cli": env!("CARGO_PKG_VERSION"),
        },
        "wall_seconds": start.elapsed().as_secs_f64(),
        "exit_code": code,
        "error": error,
    });
    let path = common.out.join(format!("run_{name}.json"));
    let written = std::fs::create_dir_all(&common.out)
        .and_then(|_| std::fs::write(&path, serde_json::to_vec_pretty(&manifest).expect("json")));
    if let Err(e) = written {
        eprintln!("error: could not write {}: {e}", path.display());
        return if code == 0 { 2 } else { code };
    }
    code
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Gen(_) => "gen",
        Command::TrainGeo(_) => "train-geo",
        Command::TrainMask(_) => "train-mask",
        Command::Segment(_) => "segment",
        Command::Query(_) => "query",
        Command::Eval(_) => "eval",
        Command::Gradcheck(_) => "gradcheck",
        Command::Bench(_) => "bench",
    }
}

/// Prints the resolved configuration and returns it for the run manifest.
fn announce(resolved: Value) -> Value {
    println!("{}", serde_json::to_string_pretty(&resolved).expect("json"));
    resolved
}

fn dispatch(c: &Command) -> anyhow::Result<Value> {
    match c {
        Command::Gen(a) => gen(a),
        Command::TrainGeo(a) => train_geo(a),
        Command::TrainMask(a) => train_mask(a),
        Command::Segment(a) => segment(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Bench(a) => bench(a),
    }
}

fn scene_params(s: &SceneArgs) -> SceneParams {
    SceneParams {
        num_objects: s.objects,
        with_parts: s.parts,
        num_cameras: s.views,
        width: s.size,
        height: s.size,
        // Keeps the field of view fixed as the resolution changes.
        focal_px: 80.0 * s.size as f64 / 64.0,
        ..SceneParams::default()
    }
}

fn gen(a: &GenArgs) -> anyhow::Result<Value> {
    let params = scene_params(&a.scene);
    let sup = SupervisionParams {
        jitter_px: a.scene.jitter,
        embed_noise: a.scene.embed_noise,
        seed: a.common.seed,
        ..SupervisionParams::default()
    };
    let resolved = announce(json!({ "seed": a.common.seed, "scene": params, "supervision": sup }));
    let scene = generate_scene(a.common.seed, &params)?;
    let ds = build_dataset(&scene, &sup)?;
    save_dataset(&ds, &a.common.out)?;
    println!(
        "wrote {} views ({} train, {} test) to {}",
        ds.views.len(),
        ds.views_in(Split::Train).count(),
        ds.views_in(Split::Test).count(),
        a.common.out.display()
    );
    Ok(resolved)
}

fn data_dir<'a>(data: &'a Option<PathBuf>, common: &'a Common) -> &'a Path {
    data.as_deref().unwrap_or(&common.out)
}

fn apply_model_args(mut cfg: TrainConfig, m: &ModelArgs) -> anyhow::Result<TrainConfig> {
    if let Some(path) = &m.config {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        cfg = serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    }
    if let Some(b) = m.backend {
        cfg.backend = b;
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = m.$flag {
                cfg.$field = v;
            }
        )*};
    }
    set!(dm => d_m, nk => n_k, view_fraction => view_fraction, stage1_steps => stage1_steps,
         stage2_steps => stage2_steps, grid_res => grid_resolution, samples => n_samples, lr => learning_rate);
    cfg.validate().map_err(|e| UsageError(format!("invalid training configuration: {e}")))?;
    Ok(cfg)
}

fn train_geo(a: &TrainGeoArgs) -> anyhow::Result<Value> {
    let ds = load_dataset(data_dir(&a.data, &a.common))?;
    let mut cfg = apply_model_args(TrainConfig::default(), &a.model)?;
    cfg.seed = a.common.seed;
    cfg.d_s = ds.d_s;
    let resolved = announce(serde_json::to_value(&cfg)?);
    let mut state = TrainState::new(cfg)?;
    let history = state.run_geometry(&ds, state.config.stage1_steps)?;
    if let Some(last) = history.last() {
        println!("final photometric mse {:.6} after {} steps", last.mse, last.step);
    }
    std::fs::create_dir_all(&a.common.out).with_context(|| a.common.out.display().to_string())?;
    write_bytes(&a.common.out.join("geometry_history.csv"), geometry_history_csv(&history).as_bytes())?;
    save_checkpoint(&state, &a.common.out.join(GEOMETRY_CHECKPOINT))?;
    Ok(resolved)
}

fn train_mask(a: &TrainMaskArgs) -> anyhow::Result<Value> {
    let ds = load_dataset(data_dir(&a.data, &a.common))?;
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| a.common.out.join(GEOMETRY_CHECKPOINT));
    let state = load_checkpoint(&ckpt)?;
    let mut cfg = apply_model_args(state.config.clone(), &a.model)?;
    if a.model.backend.is_some_and(|b| b != state.field.backend()) {
        bail!(UsageError(format!("--backend differs from the checkpoint backend `{}`", state.field.backend())));
    }
    cfg.seed = a.common.seed;
    let rebuild = cfg.d_m != state.field.d_m() || cfg.n_k != state.bank.n_k || ds.d_s != state.bank.d_s;
    cfg.d_s = ds.d_s;
    let resolved = announce(serde_json::to_value(&cfg)?);
    let mut state = TrainState { config: cfg.clone(), ..state };
    if rebuild {
        state = state.with_mask_dim(cfg.d_m)?;
    }
    let history = state.run_maskfield(&ds, cfg.stage2_steps)?;
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!(
            "l_distill {:.5} -> {:.5} over {} steps ({} skipped)",
            first.loss.l_distill,
            last.loss.l_distill,
            history.len(),
            state.skipped_steps
        );
    }
    std::fs::create_dir_all(&a.common.out).with_context(|| a.common.out.display().to_string())?;
    write_bytes(&a.common.out.join("loss_history.csv"), loss_history_csv(&history).as_bytes())?;
    save_checkpoint(&state, &a.common.out.join(MASKFIELD_CHECKPOINT))?;
    Ok(resolved)
}

fn load_trained(infer: &InferArgs, common: &Common) -> anyhow::Result<(SceneDataset, TrainState)> {
    let ckpt = infer.checkpoint.clone().unwrap_or_else(|| common.out.join(MASKFIELD_CHECKPOINT));
    if !ckpt.exists() {
        bail!(UsageError(format!(
            "no trained checkpoint at {} (run train-mask first or pass --checkpoint)",
            ckpt.display()
        )));
    }
    let state = load_checkpoint(&ckpt)?;
    let ds = load_dataset(data_dir(&infer.data, common))?;
    if ds.d_s != state.bank.d_s {
        bail!(UsageError(format!(
            "dataset embeddings have d_s={} but {} has d_s={}",
            ds.d_s,
            ckpt.display(),
            state.bank.d_s
        )));
    }
    Ok((ds, state))
}

fn selected(ds: &SceneDataset, sel: ViewSel) -> Vec<&ViewRecord> {
    ds.views
        .iter()
        .filter(|v| match sel {
            ViewSel::All => true,
            ViewSel::Train => v.split == Split::Train,
            ViewSel::Test => v.split == Split::Test,
        })
        .collect()
}

fn segment(a: &SegmentArgs) -> anyhow::Result<Value> {
    let cfg = SegmentConfig {
        tau: a.tau,
        iou_thresh: a.nms_iou,
        smooth_k: a.infer.smooth_k,
        ..SegmentConfig::default()
    };
    let (ds, state) = load_trained(&a.infer, &a.common)?;
    let resolved = announce(json!({ "segment": cfg, "views": a.infer.views }));
    let dir = a.common.out.join("segment");
    for v in selected(&ds, a.infer.views) {
        let seg = segment_camera(&state, &ds, &v.camera, &cfg)?;
        write_bytes(&dir.join(format!("view_{:03}.pgm", v.id)), &encode_label_pgm(&seg.labels, seg.height, seg.width)?)?;
        write_bytes(&dir.join(format!("view_{:03}_scores.csv", v.id)), scores_csv(&seg.labels, &seg.scores, seg.width).as_bytes())?;
    }
    Ok(resolved)
}

fn query(a: &QueryArgs) -> anyhow::Result<Value> {
    let cfg = QueryConfig {
        smooth_k: a.infer.smooth_k,
        ..QueryConfig::default()
    };
    let (ds, state) = load_trained(&a.infer, &a.common)?;
    let (label, embedding) = match (&a.text, &a.embedding) {
        (Some(text), _) => {
            let found = [ds.classes.as_ref(), ds.canonicals.as_ref()]
                .into_iter()
                .flatten()
                .find_map(|set| set.index_of(text).map(|i| set.embeddings[i].clone()));
            let e = found.ok_or_else(|| UsageError(format!("--text `{text}` is not in the dataset's text embeddings")))?;
            (text.clone(), e)
        }
        (None, Some(path)) => {
            let t = Tensor::read(path)?;
            let e = t.to_f64().ok_or_else(|| UsageError(format!("{}: not a float tensor", path.display())))?;
            ("embedding".to_string(), e)
        }
        (None, None) => bail!(UsageError("one of --text or --embedding is required".into())),
    };
    if embedding.len() != ds.d_s {
        bail!(UsageError(format!("query embedding has length {} but D_S is {}", embedding.len(), ds.d_s)));
    }
    let resolved = announce(json!({ "query": label, "config": cfg, "views": a.infer.views }));
    let dir = a.common.out.join("query");
    for v in selected(&ds, a.infer.views) {
        let q = query_camera(&state, &ds, &v.camera, &embedding, &cfg)?;
        let n = q.mask.iter().filter(|&&b| b).count();
        println!("view {}: {n} pixels, {} tokens", v.id, q.survivors.len());
        write_bytes(&dir.join(format!("view_{:03}.pbm", v.id)), &encode_pbm(&q.mask, q.height, q.width)?)?;
    }
    Ok(resolved)
}

fn eval(a: &EvalArgs) -> anyhow::Result<Value> {
    let cfg = SegmentConfig {
        smooth_k: a.infer.smooth_k,
        ..SegmentConfig::default()
    };
    let (ds, state) = load_trained(&a.infer, &a.common)?;
    let split = match a.infer.views {
        ViewSel::Train => Split::Train,
        ViewSel::Test => Split::Test,
        ViewSel::All => bail!(UsageError("eval needs --views train or --views test".into())),
    };
    let resolved = announce(json!({ "segment": cfg, "views": a.infer.views, "band": a.band }));
    let report = evaluate(&state, &ds, split, &cfg, a.band)?;
    println!("miou {:.4}  mbiou {:.4}  acc {:.4}", report.miou, report.mbiou, report.acc);
    write_bytes(&a.common.out.join(EVAL_REPORT), &serde_json::to_vec_pretty(&report)?)?;
    let csv = format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row(&ds.scene));
    write_bytes(&a.common.out.join("eval.csv"), csv.as_bytes())?;
    Ok(resolved)
}

fn gradcheck(a: &GradcheckArgs) -> anyhow::Result<Value> {
    let backends = match a.backend {
        Some(b) => vec![b],
        None => vec![Backend::Grid, Backend::Splat],
    };
    let resolved = announce(json!({ "backends": backends, "extra": a.extra, "tolerance": GRADCHECK_TOLERANCE }));
    let mut reports = Vec::new();
    for b in &backends {
        let r = pipeline_gradcheck(*b, a.common.seed, a.extra)?;
        println!("{b}: max relative error {:.3e} over {} of {} parameters", r.max_rel_error, r.checked, r.n_params);
        reports.push(json!({ "backend": b, "report": r }));
    }
    std::fs::create_dir_all(&a.common.out).with_context(|| a.common.out.display().to_string())?;
    write_bytes(&a.common.out.join("gradcheck.json"), &serde_json::to_vec_pretty(&reports)?)?;
    let worst = reports
        .iter()
        .filter_map(|r| r["report"]["max_rel_error"].as_f64())
        .fold(0.0, f64::max);
    if worst >= GRADCHECK_TOLERANCE {
        bail!("gradient check failed: max relative error {worst:.3e}");
    }
    Ok(resolved)
}

fn bench(a: &BenchArgs) -> anyhow::Result<Value> {
    if a.dm.is_empty() || a.dm.contains(&0) {
        bail!(UsageError("--dm needs positive widths".into()));
    }
    let ds = match &a.data {
        Some(dir) => load_dataset(dir)?,
        None => build_dataset(
            &generate_scene(a.common.seed, &SceneParams::default())?,
            &SupervisionParams {
                seed: a.common.seed,
                ..SupervisionParams::default()
            },
        )?,
    };
    let mut cfg = TrainConfig {
        seed: a.common.seed,
        d_s: ds.d_s,
        d_m: a.dm[0],
        ..TrainConfig::default()
    };
    if let Some(v) = a.nk {
        cfg.n_k = v;
    }
    if let Some(v) = a.stage1_steps {
        cfg.stage1_steps = v;
    }
    if let Some(v) = a.stage2_steps {
        cfg.stage2_steps = v;
    }
    cfg.validate().map_err(|e| UsageError(format!("invalid training configuration: {e}")))?;
    let seg = SegmentConfig {
        smooth_k: a.smooth_k,
        ..SegmentConfig::default()
    };
    let resolved = announce(json!({ "train": cfg, "dims": a.dm, "segment": seg, "repeats": a.repeats }));
    let mut geo = TrainState::new(cfg.clone())?;
    geo.run_geometry(&ds, cfg.stage1_steps)?;
    let rows = bench_sweep(&geo, &ds, &a.dm, &seg, 2, a.repeats)?;
    let csv = bench_csv(&rows);
    print!("{csv}");
    std::fs::create_dir_all(&a.common.out).with_context(|| a.common.out.display().to_string())?;
    write_bytes(&a.common.out.join(BENCH_CSV), csv.as_bytes())?;
    Ok(resolved)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(dm: Option<usize>, view_fraction: Option<f64>) -> ModelArgs {
        ModelArgs {
            backend: Some(Backend::Splat),
            dm,
            nk: None,
            view_fraction,
            stage1_steps: None,
            stage2_steps: None,
            grid_res: None,
            samples: None,
            lr: None,
            config: None,
        }
    }

    #[test]
    fn flags_override_defaults() {
        let cfg = apply_model_args(TrainConfig::default(), &model(Some(5), None)).unwrap();
        assert_eq!((cfg.d_m, cfg.backend), (5, Backend::Splat));
        assert_eq!(cfg.n_k, TrainConfig::default().n_k);
    }

    #[test]
    fn invalid_config_maps_to_usage_exit() {
        let err = apply_model_args(TrainConfig::default(), &model(None, Some(1.5))).unwrap_err();
        assert_eq!(exit_code(&err), 1);
        assert_eq!(exit_code(&anyhow::anyhow!("disk on fire")), 2);
        let invalid: anyhow::Error = maskdistill::Error::Invalid("x".into()).into();
        assert_eq!(exit_code(&invalid), 1);
    }

    #[test]
    fn backend_names_parse() {
        assert_eq!(parse_backend("grid"), Ok(Backend::Grid));
        assert!(parse_backend("voxels").is_err());
    }
}
