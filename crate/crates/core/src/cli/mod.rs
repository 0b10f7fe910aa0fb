//! `fpsnet` command line: train, eval, predict, benchmark, ablate, gen-data.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use ndarray::Array3;

use crate::config::{read_detections, AblationVariant, RunConfig};
use crate::data::coco::{write_coco_panoptic, ExportEntry};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fusion::render_overlay;
use crate::metrics::{format_table, PqReport};
use crate::model::{checkpoint, DetectorKind, FpsNet, MaskKind};
use crate::pipeline::{benchmark, evaluate, predict};
use crate::training::{train_loop, IouKind};

#[derive(Debug, Parser)]
#[command(name = "fpsnet", version, about = "Panoptic segmentation without a merging step")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and evaluate it on the validation split.
    Train(RunArgs),
    /// Evaluate a checkpoint (PQ, SQ, RQ).
    Eval(EvalArgs),
    /// Segment images and write COCO-panoptic PNGs plus overlays.
    Predict(PredictArgs),
    /// Time single-image inference.
    Benchmark(BenchArgs),
    /// Train and evaluate every configured ablation variant.
    Ablate(RunArgs),
    /// Write a synthetic split in COCO-panoptic format.
    GenData(GenArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DetectorArg {
    Learned,
    Oracle,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `section.key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Disable slot shuffling.
    #[arg(long)]
    pub no_shuffle: bool,
    /// Constant in-box attention masks instead of Gaussians.
    #[arg(long)]
    pub hard_masks: bool,
    #[arg(long, value_enum)]
    pub detector: Option<DetectorArg>,
    #[arg(long)]
    pub n_att: Option<usize>,
    #[arg(long)]
    pub c_att: Option<f64>,
    /// Match slots by box-vs-mask IoU instead of box IoU.
    #[arg(long)]
    pub mask_iou: bool,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    pub split: SplitArg,
    /// Evaluate only the first N images.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON list of detections used instead of the detector (single image only).
    #[arg(long)]
    pub boxes: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f32,
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Checkpoint to time; a freshly initialized model from the config otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
    /// `HEIGHTxWIDTH`.
    #[arg(long, default_value = "512x1024", value_parser = parse_resolution)]
    pub resolution: (usize, usize),
    #[arg(long, default_value_t = 20)]
    pub iterations: usize,
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value = "val")]
    pub split: SplitArg,
    #[arg(long)]
    pub count: Option<usize>,
}

fn parse_resolution(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HEIGHTxWIDTH, got '{s}'"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v}: {e}"));
    Ok((p(h)?, p(w)?))
}

/// Parse `args` (program name first) and run; returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 1,
                _ => 2,
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a.common),
        Command::Eval(a) => cmd_eval(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
        Command::Ablate(a) => cmd_ablate(&a.common),
        Command::GenData(a) => cmd_gen_data(&a),
    }
}

/// Config file + `--set` overrides + dedicated flags, validated.
pub fn resolve_config(c: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(c.config.as_deref(), &c.set)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = Some(o.clone());
    }
    let flags = AblationVariant {
        name: String::new(),
        shuffle: c.no_shuffle.then_some(false),
        mask_kind: c.hard_masks.then_some(MaskKind::Hard),
        detector: c.detector.map(|d| match d {
            DetectorArg::Learned => DetectorKind::Learned,
            DetectorArg::Oracle => DetectorKind::Oracle,
        }),
        n_att: c.n_att,
        c_att: c.c_att,
        iou_kind: c.mask_iou.then_some(IouKind::Mask),
    };
    flags.apply(&mut cfg.model, &mut cfg.train);
    if let Some(s) = c.steps {
        cfg.train.total_steps = s;
    }
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.out
        .clone()
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `out` in the config".into()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `config.toml` (fully resolved) and `manifest.json` next to the outputs.
fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, extra: serde_json::Value) -> Result<()> {
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    let manifest = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config": serde_json::to_value(cfg).expect("config serializes"),
        "extra": extra,
    });
    write_text(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest).unwrap())
}

fn write_report(dir: &Path, name: &str, report: &PqReport) -> Result<()> {
    report.write_json(&dir.join(format!("{name}.json")))?;
    write_text(&dir.join(format!("{name}.txt")), &format_table(&[(name.to_string(), report.clone())]))
}

/// Train with a resolved config; returns the final validation report.
pub fn train_with(cfg: &mut RunConfig, dir: &Path) -> Result<PqReport> {
    let (train, val) = cfg.datasets()?;
    cfg.adopt_labels(train.labels());
    cfg.model.validate()?;
    create_dir(dir)?;
    write_manifest(dir, "train", cfg, serde_json::Value::Null)?;
    let mut model = FpsNet::<f32>::new(cfg.model.clone(), cfg.seed)?;
    info!(
        "training {} parameters for {} steps",
        model.num_parameters(),
        cfg.train.total_steps
    );
    let t0 = Instant::now();
    let outcome = train_loop(&mut model, train.as_ref(), Some(val.as_ref()), &cfg.train, Some(dir), |r| {
        if r.step % 50 == 0 || r.val_pq.is_some() {
            info!(
                "step {:>6}  loss {:.4}  l_pan {:.4}  l_det {:.4}  lr {:.5}{}",
                r.step,
                r.loss,
                r.l_pan,
                r.l_det,
                r.lr,
                r.val_pq.map(|p| format!("  val PQ {:.3}", p)).unwrap_or_default()
            );
        }
    })?;
    info!("training took {:.1}s", t0.elapsed().as_secs_f64());
    let report = outcome.final_val.expect("validation runs on the last step");
    write_report(dir, "val_report", &report)?;
    Ok(report)
}

fn cmd_train(c: &CommonArgs) -> Result<()> {
    let mut cfg = resolve_config(c)?;
    let dir = out_dir(&cfg)?;
    let report = train_with(&mut cfg, &dir)?;
    print!("{}", format_table(&[("FPSNet".into(), report)]));
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let cfg = resolve_config(&a.common)?;
    let dir = out_dir(&cfg)?;
    let (train, val) = cfg.datasets()?;
    let ds: &dyn Dataset = match a.split {
        SplitArg::Train => train.as_ref(),
        SplitArg::Val => val.as_ref(),
    };
    let mut model = checkpoint::load::<f32>(&a.checkpoint)?;
    let report = evaluate(&mut model, ds, a.limit)?;
    create_dir(&dir)?;
    write_manifest(
        &dir,
        "eval",
        &cfg,
        serde_json::json!({ "checkpoint": a.checkpoint, "split": format!("{:?}", a.split) }),
    )?;
    write_report(&dir, "report", &report)?;
    print!("{}", format_table(&[("FPSNet".into(), report)]));
    Ok(())
}

fn load_rgb(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        img.get_pixel(x as u32, y as u32).0[c] as f32 / 255.0
    }))
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    if a.boxes.is_some() && a.images.len() != 1 {
        return Err(Error::Config("--boxes applies to a single image".into()));
    }
    for p in &a.images {
        if !p.exists() {
            return Err(Error::Config(format!("image {} does not exist", p.display())));
        }
    }
    let boxes = a.boxes.as_deref().map(read_detections).transpose()?;
    let mut model = checkpoint::load::<f32>(&a.checkpoint)?;
    if boxes.is_none() && model.config.detector == DetectorKind::Oracle {
        log::warn!("model was trained with oracle boxes; using its detector head");
        model.config.detector = DetectorKind::Learned;
    }
    let labels = crate::panoptic::LabelSpace::generic(model.config.n_things, model.config.n_stuff);
    create_dir(&a.out)?;
    let mut maps = Vec::new();
    let mut names = Vec::new();
    for path in &a.images {
        let image = load_rgb(path)?;
        let t0 = Instant::now();
        let pred = predict(&mut model, &image, boxes.as_deref(), &labels)?;
        info!("{}: {:.1} ms", path.display(), t0.elapsed().as_secs_f64() * 1e3);
        let stem = path.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
        render_overlay(&image, &pred.panoptic, &labels, a.alpha, &a.out.join(format!("{stem}_overlay.png")))?;
        maps.push(pred.panoptic);
        names.push(stem);
    }
    let entries: Vec<_> = names
        .iter()
        .zip(&maps)
        .map(|(n, m)| ExportEntry {
            name: n.clone(),
            map: m,
            image: None,
        })
        .collect();
    write_coco_panoptic(&a.out, &labels, &entries)?;
    Ok(())
}

fn cmd_benchmark(a: &BenchArgs) -> Result<()> {
    let cfg = resolve_config(&a.common)?;
    let mut model = match &a.checkpoint {
        Some(p) => checkpoint::load::<f32>(p)?,
        None => FpsNet::<f32>::new(cfg.model.clone(), cfg.seed)?,
    };
    let labels = crate::panoptic::LabelSpace::generic(model.config.n_things, model.config.n_stuff);
    let report = benchmark(&mut model, &labels, a.resolution, a.warmup, a.iterations)?;
    println!(
        "{}x{}: inference {:.2} ± {:.2} ms over {} runs (warm-up {}), merging {}",
        report.height, report.width, report.mean_ms, report.std_ms, report.iterations, report.warmup, report.merging
    );
    if let Some(dir) = &cfg.out {
        create_dir(dir)?;
        write_manifest(dir, "benchmark", &cfg, serde_json::Value::Null)?;
        write_text(&dir.join("benchmark.json"), &serde_json::to_string_pretty(&report).unwrap())?;
    }
    Ok(())
}

/// Defaults first, then each configured variant; one table row each.
pub fn ablate_with(cfg: &RunConfig, dir: &Path) -> Result<Vec<(String, PqReport)>> {
    let mut variants = vec![AblationVariant {
        name: "defaults".into(),
        ..Default::default()
    }];
    variants.extend(cfg.ablation.variants.iter().cloned());
    let mut rows = Vec::new();
    for v in &variants {
        let mut run = cfg.clone();
        v.apply(&mut run.model, &mut run.train);
        run.ablation.variants.clear();
        info!("ablation row '{}'", v.name);
        let report = train_with(&mut run, &dir.join(&v.name))?;
        rows.push((v.name.clone(), report));
    }
    Ok(rows)
}

fn cmd_ablate(c: &CommonArgs) -> Result<()> {
    let cfg = resolve_config(c)?;
    let dir = out_dir(&cfg)?;
    let rows = ablate_with(&cfg, &dir)?;
    let table = format_table(&rows);
    write_text(&dir.join("ablation.txt"), &table)?;
    let json: Vec<_> = rows
        .iter()
        .map(|(n, r)| serde_json::json!({ "name": n, "summary": r.summary() }))
        .collect();
    write_text(&dir.join("ablation.json"), &serde_json::to_string_pretty(&json).unwrap())?;
    print!("{table}");
    Ok(())
}

fn cmd_gen_data(a: &GenArgs) -> Result<()> {
    let cfg = resolve_config(&a.common)?;
    let dir = out_dir(&cfg)?;
    let (train, val) = cfg.datasets()?;
    let ds = match a.split {
        SplitArg::Train => train,
        SplitArg::Val => val,
    };
    let n = a.count.map_or(ds.len(), |c| c.min(ds.len()));
    let samples = (0..n).map(|i| ds.get(i)).collect::<Result<Vec<_>>>()?;
    let entries: Vec<_> = samples
        .iter()
        .map(|s| ExportEntry {
            name: s.name.clone(),
            map: &s.gt_panoptic,
            image: Some(&s.image),
        })
        .collect();
    create_dir(&dir)?;
    let json = write_coco_panoptic(&dir, ds.labels(), &entries)?;
    println!("wrote {n} samples to {}", json.display());
    Ok(())
}
