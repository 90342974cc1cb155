//! Command-line entry points wiring the library into reproducible runs.
//!
//! Exit codes: 0 success, 1 validation/usage, 2 numerical abort,
//! 3 checkpoint/config incompatibility.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hierarchy::{build_hierarchy, HierarchyMeta, HierarchySpec, MeshHierarchy, SimplifyScheme};
use crate::mesh::{load_mesh, save_labeled_ply, save_ply};
use crate::model::{
    build_model, BranchMode, Model, ModelConfig, OperatorVariant,
};
use crate::ops::gradcheck::{self, GradCheckReport, DEFAULT_STEP, DEFAULT_TOL};
use crate::ops::{Checkpoint, InterMode, Scalar};
use crate::rng::split_seed;
use crate::train::{
    evaluate, generate_scene, predict_labels, train, GeneratedScene, Hyperparams, MetricsReport,
    SceneSpec, TrainScene,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything a training run needs, serializable as the run's config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub hierarchy: HierarchySpec,
    pub hyperparams: Hyperparams,
    pub scene: SceneSpec,
    pub train_scenes: usize,
    pub eval_scenes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::mini(4),
            hierarchy: HierarchySpec::default(),
            hyperparams: Hyperparams::default(),
            scene: SceneSpec::default(),
            train_scenes: 8,
            eval_scenes: 4,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Reproducibility manifest written atomically before any run output.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    /// Derived sub-seeds actually used by the run.
    pub derived_seeds: Vec<(String, u64)>,
    pub config: serde_json::Value,
    /// SHA-256 over the resolved config plus all input files.
    pub input_hash: String,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let tmp = dir.join(".manifest.json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        fs::rename(&tmp, dir.join("manifest.json"))?;
        Ok(())
    }
}

fn hash_inputs(config_json: &str, files: &[&Path]) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(config_json.as_bytes());
    for f in files {
        hasher.update(fs::read(f)?);
    }
    Ok(hex_string(&hasher.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Parser, Debug)]
#[command(
    name = "meshvox",
    version = TOOL_VERSION,
    about = "Dual-domain (sparse voxel + mesh attention) 3D semantic segmentation"
)]
pub struct Cli {
    /// Root seed; all randomness derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for independent trainings (ablate).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Floating-point precision of the run.
    #[arg(long, global = true, value_parser = ["single", "double"], default_value = "single")]
    pub precision: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build or inspect a mesh simplification hierarchy.
    Hierarchy {
        #[command(subcommand)]
        action: HierarchyAction,
    },
    /// Print active-voxel counts per level for a mesh.
    VoxelStats {
        input: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long, default_value_t = 50.0)]
        resolution: f64,
    },
    /// Train a model on generated scenes or a directory of labeled meshes.
    Train(TrainArgs),
    /// Predict labels for a mesh and write a colored, labeled PLY.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out_mesh: PathBuf,
    },
    /// Evaluate a checkpoint and print the metrics report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of labeled PLY meshes; defaults to generated scenes.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        scenes: usize,
    },
    /// Train the configured matrix of variants and emit a comparison table.
    Ablate(AblateArgs),
    /// Verify hand-written gradients against finite differences.
    Gradcheck {
        /// Op name or `all`.
        #[arg(default_value = "all")]
        op: String,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
}

#[derive(Subcommand, Debug)]
pub enum HierarchyAction {
    /// Simplify a mesh into levels and write PLYs + trace files.
    Build {
        input: PathBuf,
        #[arg(long, value_parser = ["default", "vc_only", "qem_only"], default_value = "default")]
        spec: String,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// Print per-level vertex/face counts and method tags.
    Inspect { dir: PathBuf },
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Directory of labeled PLY meshes; defaults to generated scenes.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long, value_parser = ["scalar", "vector", "edgeconv"])]
    pub variant: Option<String>,
    #[arg(long, value_parser = ["full", "euc_only", "geo_only"])]
    pub branch: Option<String>,
    #[arg(long, value_parser = ["primal", "dual"])]
    pub fusion: Option<String>,
    /// Levels with geodesic modules, counted from the finest.
    #[arg(long)]
    pub refinement: Option<usize>,
    /// Disable the inter-domain attention (concat fusion instead).
    #[arg(long)]
    pub no_inter: bool,
    #[arg(long, value_parser = ["default", "vc_only", "qem_only"])]
    pub simplify: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct AblateArgs {
    #[arg(long, value_delimiter = ',', default_value = "scalar")]
    pub operators: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "full")]
    pub branches: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "default")]
    pub simplify: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "primal")]
    pub fusions: Vec<String>,
    /// Refinement depths; `max` means all levels.
    #[arg(long, value_delimiter = ',', default_value = "max")]
    pub refinements: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub scenes: Option<usize>,
}

fn parse_variant(s: &str) -> Result<OperatorVariant> {
    Ok(match s {
        "scalar" => OperatorVariant::Scalar,
        "vector" => OperatorVariant::Vector,
        "edgeconv" => OperatorVariant::EdgeConv,
        other => return Err(Error::usage(format!("unknown operator variant {other}"))),
    })
}

fn parse_branch(s: &str) -> Result<BranchMode> {
    Ok(match s {
        "full" => BranchMode::Full,
        "euc_only" => BranchMode::EucOnly,
        "geo_only" => BranchMode::GeoOnly,
        other => return Err(Error::usage(format!("unknown branch {other}"))),
    })
}

fn parse_fusion(s: &str) -> Result<InterMode> {
    Ok(match s {
        "primal" => InterMode::Primal,
        "dual" => InterMode::Dual,
        other => return Err(Error::usage(format!("unknown fusion mode {other}"))),
    })
}

fn parse_scheme(s: &str) -> Result<SimplifyScheme> {
    Ok(match s {
        "default" => SimplifyScheme::VcQem,
        "vc_only" => SimplifyScheme::VcOnly,
        "qem_only" => SimplifyScheme::QemOnly,
        other => return Err(Error::usage(format!("unknown simplification spec {other}"))),
    })
}

/// Run the CLI; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let base_config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Hierarchy { action } => cmd_hierarchy(&cli, action),
        Command::VoxelStats {
            input,
            levels,
            resolution,
        } => cmd_voxel_stats(input, *levels, *resolution),
        Command::Train(args) => with_precision(&cli, |p| cmd_train::<PrecDispatch>(p, &cli, base_config.clone(), args)),
        Command::Infer {
            checkpoint,
            mesh,
            out_mesh,
        } => with_precision(&cli, |p| {
            cmd_infer::<PrecDispatch>(p, checkpoint, mesh, out_mesh)
        }),
        Command::Eval {
            checkpoint,
            data_dir,
            scenes,
        } => with_precision(&cli, |p| {
            cmd_eval::<PrecDispatch>(p, &cli, base_config.clone(), checkpoint, data_dir.as_deref(), *scenes)
        }),
        Command::Ablate(args) => cmd_ablate(&cli, base_config.clone(), args),
        Command::Gradcheck { op, seeds } => cmd_gradcheck(op, *seeds, cli.seed),
    }
}

/// Precision token passed to generic commands.
#[derive(Clone, Copy)]
enum PrecDispatch {
    Single,
    Double,
}

fn with_precision(cli: &Cli, f: impl FnOnce(PrecDispatch) -> Result<()>) -> Result<()> {
    match cli.precision.as_str() {
        "single" => f(PrecDispatch::Single),
        "double" => f(PrecDispatch::Double),
        other => Err(Error::usage(format!("unknown precision {other}"))),
    }
}

fn cmd_hierarchy(cli: &Cli, action: &HierarchyAction) -> Result<()> {
    match action {
        HierarchyAction::Build {
            input,
            spec,
            levels,
        } => {
            let out = cli
                .out
                .clone()
                .ok_or_else(|| Error::usage("hierarchy build needs --out"))?;
            let mesh = load_mesh(input)?;
            let hspec = HierarchySpec {
                levels: *levels,
                scheme: parse_scheme(spec)?,
                ..Default::default()
            };
            let config_json = serde_json::to_string(&hspec)?;
            let manifest = RunManifest {
                tool_version: TOOL_VERSION.into(),
                seed: cli.seed,
                derived_seeds: vec![],
                config: serde_json::to_value(&hspec)?,
                input_hash: hash_inputs(&config_json, &[input])?,
            };
            manifest.write(&out)?;
            let hierarchy = build_hierarchy(&mesh, &hspec)?;
            hierarchy.save(&out)?;
            print_hierarchy_stats(&hierarchy);
            Ok(())
        }
        HierarchyAction::Inspect { dir } => {
            let meta: HierarchyMeta =
                serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
            println!("{:<8} {:>10} {:>10} {:>8}", "level", "vertices", "faces", "method");
            for (l, m) in meta.levels.iter().enumerate() {
                println!(
                    "{:<8} {:>10} {:>10} {:>8}",
                    l,
                    m.vertices,
                    m.faces,
                    format!("{:?}", m.method).to_lowercase()
                );
            }
            Ok(())
        }
    }
}

fn print_hierarchy_stats(h: &MeshHierarchy) {
    println!("{:<8} {:>10} {:>10} {:>8}", "level", "vertices", "faces", "method");
    for l in 0..h.depth() {
        println!(
            "{:<8} {:>10} {:>10} {:>8}",
            l,
            h.level(l).vertex_count(),
            h.level(l).face_count(),
            format!("{:?}", h.tags()[l]).to_lowercase()
        );
    }
}

fn cmd_voxel_stats(input: &Path, levels: usize, resolution: f64) -> Result<()> {
    let mesh = load_mesh(input)?;
    println!("{:<8} {:>14} {:>14}", "level", "resolution", "active voxels");
    for l in 0..levels {
        let r = resolution / (1u64 << l) as f64;
        let (grid, _) = crate::voxel::voxelize::<f64>(&mesh, r)?;
        println!("{:<8} {:>14.3} {:>14}", l, r, grid.active_count());
    }
    Ok(())
}

/// Load scenes from a directory of labeled PLYs or generate + cache them.
fn gather_scenes(
    config: &RunConfig,
    data_dir: Option<&Path>,
    count: usize,
    seed: u64,
    purpose: &str,
    cache_root: Option<&Path>,
) -> Result<Vec<TrainScene>> {
    if let Some(dir) = data_dir {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "ply" || e == "obj"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::validation(format!(
                "no meshes found in {}",
                dir.display()
            )));
        }
        return paths
            .iter()
            .map(|p| TrainScene::from_mesh(load_mesh(p)?, &config.hierarchy))
            .collect();
    }
    // Deterministic seed walk; rare placement failures skip to the next
    // derived seed.
    let mut scenes = Vec::with_capacity(count);
    let mut index = 0u64;
    while scenes.len() < count {
        if index > 10 * count as u64 + 100 {
            return Err(Error::Generation(format!(
                "could not generate {count} scenes after {index} attempts"
            )));
        }
        let scene_seed = split_seed(seed, purpose, index);
        index += 1;
        let generated = match cached_scene(&config.scene, scene_seed, cache_root) {
            Ok(s) => s,
            Err(Error::Generation(_)) => continue,
            Err(e) => return Err(e),
        };
        scenes.push(TrainScene::prepare(generated, &config.hierarchy)?);
    }
    Ok(scenes)
}

/// Generated scenes are cached by the content hash of (spec, seed).
fn cached_scene(
    spec: &SceneSpec,
    seed: u64,
    cache_root: Option<&Path>,
) -> Result<GeneratedScene> {
    let Some(root) = cache_root else {
        return generate_scene(spec, seed);
    };
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_string(spec)?.as_bytes());
    hasher.update(seed.to_le_bytes());
    let key = hex_string(&hasher.finalize());
    let dir = root.join(&key[..16]);
    let mesh_path = dir.join("scene.ply");
    let traps_path = dir.join("traps.json");
    if mesh_path.exists() && traps_path.exists() {
        let mesh = load_mesh(&mesh_path)?;
        let traps = serde_json::from_str(&fs::read_to_string(&traps_path)?)?;
        return Ok(GeneratedScene { mesh, traps });
    }
    let scene = generate_scene(spec, seed)?;
    fs::create_dir_all(&dir)?;
    save_ply(&scene.mesh, &mesh_path, false)?;
    fs::write(&traps_path, serde_json::to_string(&scene.traps)?)?;
    // Reload so cached and fresh runs see identical (f32-quantized) bytes.
    let mesh = load_mesh(&mesh_path)?;
    let traps = serde_json::from_str(&fs::read_to_string(&traps_path)?)?;
    Ok(GeneratedScene { mesh, traps })
}

fn apply_train_overrides(config: &mut RunConfig, args: &TrainArgs) -> Result<()> {
    if let Some(e) = args.epochs {
        config.hyperparams.epochs = e;
    }
    if let Some(n) = args.scenes {
        config.train_scenes = n;
    }
    if let Some(v) = &args.variant {
        config.model.variant = parse_variant(v)?;
    }
    if let Some(b) = &args.branch {
        config.model.branch = parse_branch(b)?;
    }
    if let Some(f) = &args.fusion {
        config.model.fusion = parse_fusion(f)?;
    }
    if let Some(r) = args.refinement {
        config.model.refinement_depth = Some(r);
    }
    if args.no_inter {
        config.model.use_inter = false;
    }
    if let Some(s) = &args.simplify {
        config.hierarchy.scheme = parse_scheme(s)?;
    }
    Ok(())
}

fn cmd_train<P>(
    precision: PrecDispatch,
    cli: &Cli,
    mut config: RunConfig,
    args: &TrainArgs,
) -> Result<()> {
    let out = cli
        .out
        .clone()
        .ok_or_else(|| Error::usage("train needs --out"))?;
    apply_train_overrides(&mut config, args)?;
    config.hyperparams.seed = split_seed(cli.seed, "train", 0);

    let config_json = serde_json::to_string_pretty(&config)?;
    let input_files: Vec<&Path> = cli.config.iter().map(|p| p.as_path()).collect();
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.into(),
        seed: cli.seed,
        derived_seeds: vec![
            ("scenes".into(), split_seed(cli.seed, "scenes", 0)),
            ("init".into(), split_seed(cli.seed, "init", 0)),
            ("train".into(), config.hyperparams.seed),
        ],
        config: serde_json::to_value(&config)?,
        input_hash: hash_inputs(&config_json, &input_files)?,
    };
    manifest.write(&out)?;
    fs::write(out.join("config.json"), &config_json)?;

    let cache = out.join("scene_cache");
    let scenes = gather_scenes(
        &config,
        args.data_dir.as_deref(),
        config.train_scenes,
        split_seed(cli.seed, "scenes", 0),
        "train-scene",
        Some(&cache),
    )?;

    match precision {
        PrecDispatch::Single => train_run::<f32>(&out, &config, &scenes, cli.seed),
        PrecDispatch::Double => train_run::<f64>(&out, &config, &scenes, cli.seed),
    }
}

fn train_run<S: Scalar>(
    out: &Path,
    config: &RunConfig,
    scenes: &[TrainScene],
    seed: u64,
) -> Result<()> {
    let mut model = build_model::<S>(&config.model, split_seed(seed, "init", 0))?;
    let mut log = fs::File::create(out.join("log.ndjson"))?;
    let report = train(&mut model, scenes, &config.hyperparams, |record| {
        let line = serde_json::to_string(record).expect("record serializes");
        let _ = writeln!(log, "{line}");
    })?;
    let model_json = serde_json::to_string(&config.model)?;
    model
        .params
        .save_checkpoint(out.join("checkpoint_final.bin"), &model_json)?;
    // Swap in the best-epoch snapshot for the second checkpoint.
    let mut best = build_model::<S>(&config.model, split_seed(seed, "init", 0))?;
    for (p, v) in best.params.iter_mut().zip(report.best_params.iter()) {
        p.value.assign(v);
    }
    best.params
        .save_checkpoint(out.join("checkpoint_best.bin"), &model_json)?;
    let (metrics, _) = evaluate(&model, scenes)?;
    fs::write(
        out.join("train_metrics.json"),
        serde_json::to_string_pretty(&metrics)?,
    )?;
    println!(
        "trained {} epochs; best epoch {} (loss {:.4}); final train acc {:.4}",
        config.hyperparams.epochs, report.best_epoch, report.best_loss, report.final_train_acc
    );
    Ok(())
}

fn load_model_from_checkpoint<S: Scalar>(path: &Path) -> Result<Model<S>> {
    let ck = Checkpoint::load(path)?;
    let model_config: ModelConfig = serde_json::from_str(&ck.config_json)
        .map_err(|e| Error::Incompatible(format!("checkpoint config: {e}")))?;
    let mut model = build_model::<S>(&model_config, 0)?;
    model.params = ck.bind(&model.params)?;
    Ok(model)
}

fn cmd_infer<P>(
    precision: PrecDispatch,
    checkpoint: &Path,
    mesh_path: &Path,
    out_mesh: &Path,
) -> Result<()> {
    match precision {
        PrecDispatch::Single => infer_run::<f32>(checkpoint, mesh_path, out_mesh),
        PrecDispatch::Double => infer_run::<f64>(checkpoint, mesh_path, out_mesh),
    }
}

fn infer_run<S: Scalar>(checkpoint: &Path, mesh_path: &Path, out_mesh: &Path) -> Result<()> {
    let model = load_model_from_checkpoint::<S>(checkpoint)?;
    let mesh = load_mesh(mesh_path)?;
    let spec = HierarchySpec {
        levels: model.config.levels,
        ..Default::default()
    };
    let scene = TrainScene::from_mesh(mesh, &spec)?;
    let labels = predict_labels(&model, &scene)?;
    save_labeled_ply(&scene.mesh, &labels, out_mesh, false)?;
    println!(
        "wrote {} ({} vertices labeled)",
        out_mesh.display(),
        labels.len()
    );
    Ok(())
}

fn cmd_eval<P>(
    precision: PrecDispatch,
    cli: &Cli,
    config: RunConfig,
    checkpoint: &Path,
    data_dir: Option<&Path>,
    scenes: usize,
) -> Result<()> {
    match precision {
        PrecDispatch::Single => eval_run::<f32>(cli, config, checkpoint, data_dir, scenes),
        PrecDispatch::Double => eval_run::<f64>(cli, config, checkpoint, data_dir, scenes),
    }
}

fn eval_run<S: Scalar>(
    cli: &Cli,
    mut config: RunConfig,
    checkpoint: &Path,
    data_dir: Option<&Path>,
    scenes: usize,
) -> Result<()> {
    let model = load_model_from_checkpoint::<S>(checkpoint)?;
    config.model = model.config.clone();
    let scenes = gather_scenes(
        &config,
        data_dir,
        scenes,
        split_seed(cli.seed, "eval-scenes", 0),
        "eval-scene",
        None,
    )?;
    let (report, _) = evaluate(&model, &scenes)?;
    print_metrics(&report);
    if let Some(out) = &cli.out {
        fs::create_dir_all(out)?;
        fs::write(
            out.join("metrics.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
    }
    Ok(())
}

fn print_metrics(report: &MetricsReport) {
    println!("{:<8} {:>8} {:>8}", "class", "iou", "acc");
    for (c, (iou, acc)) in report
        .per_class_iou
        .iter()
        .zip(&report.per_class_acc)
        .enumerate()
    {
        let fmt = |v: &Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "-".into(),
        };
        println!("{:<8} {:>8} {:>8}", c, fmt(iou), fmt(acc));
    }
    println!(
        "mIoU {:.4}  mAcc {:.4}  overall {:.4}  ({} vertices)",
        report.miou, report.macc, report.overall_accuracy, report.evaluated_vertices
    );
}

#[derive(Debug, Clone, Serialize)]
struct AblateRow {
    operator: String,
    branch: String,
    simplify: String,
    fusion: String,
    refinement: String,
    seed: u64,
    miou: f64,
    macc: f64,
    overall: f64,
}

fn cmd_ablate(cli: &Cli, base: RunConfig, args: &AblateArgs) -> Result<()> {
    let out = cli
        .out
        .clone()
        .ok_or_else(|| Error::usage("ablate needs --out"))?;
    fs::create_dir_all(&out)?;

    let mut jobs = Vec::new();
    for op in &args.operators {
        for branch in &args.branches {
            for simplify in &args.simplify {
                for fusion in &args.fusions {
                    for refinement in &args.refinements {
                        for seed_idx in 0..args.seeds {
                            let mut config = base.clone();
                            config.model.variant = parse_variant(op)?;
                            config.model.branch = parse_branch(branch)?;
                            config.model.fusion = parse_fusion(fusion)?;
                            config.hierarchy.scheme = parse_scheme(simplify)?;
                            if refinement != "max" {
                                let depth: usize = refinement.parse().map_err(|_| {
                                    Error::usage(format!("bad refinement depth {refinement}"))
                                })?;
                                config.model.refinement_depth = Some(depth);
                            }
                            if let Some(e) = args.epochs {
                                config.hyperparams.epochs = e;
                            }
                            if let Some(n) = args.scenes {
                                config.train_scenes = n;
                            }
                            let seed = split_seed(cli.seed, "ablate", seed_idx as u64);
                            jobs.push((
                                config,
                                seed,
                                (
                                    op.clone(),
                                    branch.clone(),
                                    simplify.clone(),
                                    fusion.clone(),
                                    refinement.clone(),
                                ),
                            ));
                        }
                    }
                }
            }
        }
    }

    let manifest = RunManifest {
        tool_version: TOOL_VERSION.into(),
        seed: cli.seed,
        derived_seeds: jobs
            .iter()
            .enumerate()
            .map(|(i, (_, s, _))| (format!("job{i}"), *s))
            .collect(),
        config: serde_json::to_value(&base)?,
        input_hash: hash_inputs(&serde_json::to_string(&base)?, &[])?,
    };
    manifest.write(&out)?;

    println!("running {} trainings on {} threads", jobs.len(), cli.threads.max(1));
    let rows = run_ablate_jobs(jobs, cli.threads.max(1))?;

    let mut table = String::new();
    table.push_str(&format!(
        "{:<10} {:<9} {:<9} {:<7} {:<6} {:>6} {:>7} {:>7}\n",
        "operator", "branch", "simplify", "fusion", "refine", "seed", "miou", "macc"
    ));
    for r in &rows {
        table.push_str(&format!(
            "{:<10} {:<9} {:<9} {:<7} {:<6} {:>6} {:>7.4} {:>7.4}\n",
            r.operator, r.branch, r.simplify, r.fusion, r.refinement, r.seed, r.miou, r.macc
        ));
    }
    print!("{table}");
    fs::write(out.join("ablate_table.txt"), &table)?;
    fs::write(out.join("ablate.json"), serde_json::to_string_pretty(&rows)?)?;
    Ok(())
}

fn run_ablate_jobs(
    jobs: Vec<(RunConfig, u64, (String, String, String, String, String))>,
    threads: usize,
) -> Result<Vec<AblateRow>> {
    let jobs = std::sync::Arc::new(std::sync::Mutex::new(
        jobs.into_iter().enumerate().collect::<Vec<_>>(),
    ));
    let results = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
    let mut handles = Vec::new();
    for _ in 0..threads {
        let jobs = jobs.clone();
        let results = results.clone();
        handles.push(std::thread::spawn(move || -> Result<()> {
            loop {
                let job = { jobs.lock().expect("queue lock").pop() };
                let Some((index, (config, seed, tags))) = job else {
                    return Ok(());
                };
                let row = run_single_ablate(&config, seed, &tags)?;
                results.lock().expect("result lock").push((index, row));
            }
        }));
    }
    for h in handles {
        h.join()
            .map_err(|_| Error::Numerical("ablate worker panicked".into()))??;
    }
    let mut rows = std::sync::Arc::try_unwrap(results)
        .expect("workers done")
        .into_inner()
        .expect("lock intact");
    rows.sort_by_key(|(i, _)| *i);
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

fn run_single_ablate(
    config: &RunConfig,
    seed: u64,
    tags: &(String, String, String, String, String),
) -> Result<AblateRow> {
    let train_scenes = gather_scenes(
        config,
        None,
        config.train_scenes,
        split_seed(seed, "scenes", 0),
        "train-scene",
        None,
    )?;
    let eval_scenes = gather_scenes(
        config,
        None,
        config.eval_scenes,
        split_seed(seed, "scenes", 1),
        "eval-scene",
        None,
    )?;
    let mut model = build_model::<f32>(&config.model, split_seed(seed, "init", 0))?;
    let mut hp = config.hyperparams.clone();
    hp.seed = split_seed(seed, "train", 0);
    train(&mut model, &train_scenes, &hp, |_| {})?;
    let (report, _) = evaluate(&model, &eval_scenes)?;
    Ok(AblateRow {
        operator: tags.0.clone(),
        branch: tags.1.clone(),
        simplify: tags.2.clone(),
        fusion: tags.3.clone(),
        refinement: tags.4.clone(),
        seed,
        miou: report.miou,
        macc: report.macc,
        overall: report.overall_accuracy,
    })
}

fn cmd_gradcheck(op: &str, seeds: usize, seed: u64) -> Result<()> {
    let seeds: Vec<u64> = (0..seeds as u64).map(|i| split_seed(seed, "gradcheck", i)).collect();
    let names: Vec<&str> = if op == "all" {
        gradcheck::op_names().to_vec()
    } else {
        // Validate the name before running.
        gradcheck::make_instance(op, 0)?;
        vec![op]
    };
    println!(
        "{:<26} {:>14} {:>8}   (step {:.0e}, tol {:.0e})",
        "op", "max rel err", "status", DEFAULT_STEP, DEFAULT_TOL
    );
    let mut all_pass = true;
    for name in names {
        let reports = gradcheck::run_op(name, &seeds, DEFAULT_STEP, DEFAULT_TOL)?;
        let worst = reports
            .iter()
            .map(|r: &GradCheckReport| r.max_rel_err)
            .fold(0.0, f64::max);
        let pass = reports.iter().all(|r| r.pass);
        all_pass &= pass;
        println!(
            "{:<26} {:>14.3e} {:>8}",
            name,
            worst,
            if pass { "pass" } else { "FAIL" }
        );
    }
    // Harness self-check: a corrupted backward must be detected.
    let control = gradcheck::negative_control(seeds[0], DEFAULT_STEP, DEFAULT_TOL);
    let detected = !control.pass;
    println!(
        "{:<26} {:>14.3e} {:>8}",
        "negative_control",
        control.max_rel_err,
        if detected { "caught" } else { "MISSED" }
    );
    if !all_pass || !detected {
        return Err(Error::Numerical("gradient check failed".into()));
    }
    Ok(())
}
