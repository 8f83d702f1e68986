//! Thin command-line front end over the bcnet library: dataset generation,
//! training, evaluation, ablation, inference, and heatmap visualization.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bcnet::checkpoint::Archive;
use bcnet::error::{Error, Result};
use bcnet::eval::{evaluate, format_ablation_table, run_ablation};
use bcnet::head::{predict_mask, ForwardMode, HeadVariant};
use bcnet::params::Binding;
use bcnet::pnm;
use bcnet::synth::{export_dataset, import_dataset, resize_bilinear, Dataset, SceneConfig};
use bcnet::tensor::{sigmoid_scalar, Graph};
use bcnet::train::{model_from_archive, prepare_sample, TraceRow, TrainConfig, Trainer};

#[derive(Parser)]
#[command(
    name = "bcnet",
    about = "Bilayer occluder/occludee mask head: data, training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic occlusion dataset directory
    GenData(GenDataArgs),
    /// Train a head on a generated dataset
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset, printing a JSON report
    Eval(EvalArgs),
    /// Train and compare head variants on identical data
    Ablate(AblateArgs),
    /// Run a checkpoint on an image crop and write prediction maps
    Infer(InferArgs),
    /// Render an input crop beside its four prediction heatmaps
    Viz(VizArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Number of samples
    #[arg(long, default_value_t = 200)]
    count: usize,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bounding-box overlap-ratio range, as LO,HI
    #[arg(long, value_parser = parse_pair)]
    overlap: Option<(f32, f32)>,
    /// Canvas resolution in pixels
    #[arg(long)]
    canvas: Option<usize>,
    /// Write into a non-empty directory
    #[arg(long)]
    force: bool,
}

#[derive(Args, Clone)]
struct TrainFlags {
    /// Training iterations
    #[arg(long)]
    iters: Option<usize>,
    /// Head variant: bilayer-gcn | bilayer-fcn | single-gcn | single-fcn
    #[arg(long, value_parser = parse_variant)]
    variant: Option<HeadVariant>,
    /// Batch size
    #[arg(long)]
    batch: Option<usize>,
    /// Base learning rate
    #[arg(long)]
    lr: Option<f32>,
    /// Training seed
    #[arg(long)]
    seed: Option<u64>,
    /// Feature channels K
    #[arg(long)]
    channels: Option<usize>,
    /// Disable occluder contour supervision (lambda2 = 0)
    #[arg(long)]
    no_contour: bool,
    /// Disable occluder mask supervision (lambda3 = 0)
    #[arg(long)]
    no_mask: bool,
    /// Disable occlusion-aware feature guidance (fusion frozen at zero)
    #[arg(long)]
    no_guidance: bool,
    /// JSON training-config file; CLI flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory from gen-data
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// Loss-log CSV path (defaults to <out>.csv)
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint file
    #[arg(long)]
    ckpt: PathBuf,
    /// Report only samples with overlap ratio >= 0.2
    #[arg(long)]
    occluded_only: bool,
    /// Mask binarization threshold
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
}

#[derive(Args)]
struct AblateArgs {
    /// Training dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Held-out dataset directory
    #[arg(long)]
    test_data: PathBuf,
    /// Comma-separated variants (default: full structure x operator grid)
    #[arg(long, default_value = "bilayer-gcn,bilayer-fcn,single-gcn,single-fcn")]
    variants: String,
    /// Also compare guidance on/off for bilayer-gcn
    #[arg(long)]
    guidance: bool,
    /// Also compare occluder supervision on/off for bilayer-gcn
    #[arg(long)]
    supervision: bool,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct InferArgs {
    /// Checkpoint file
    #[arg(long)]
    ckpt: PathBuf,
    /// Input image (binary PPM)
    #[arg(long)]
    image: PathBuf,
    /// Single ROI box as x0,y0,x1,y1 in pixels
    #[arg(long, value_parser = parse_box)]
    r#box: Option<[i32; 4]>,
    /// File with one x0,y0,x1,y1 box per line (at most 50 used)
    #[arg(long)]
    boxes: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Mask binarization threshold
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
}

#[derive(Args)]
struct VizArgs {
    /// Checkpoint file
    #[arg(long)]
    ckpt: PathBuf,
    /// Sample as DIR/index into a generated dataset
    #[arg(long)]
    sample: String,
    /// Output panel image (binary PPM)
    #[arg(long)]
    out: PathBuf,
}

fn parse_pair(s: &str) -> std::result::Result<(f32, f32), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected LO,HI".into());
    }
    let lo = parts[0].trim().parse().map_err(|e| format!("{e}"))?;
    let hi = parts[1].trim().parse().map_err(|e| format!("{e}"))?;
    Ok((lo, hi))
}

fn parse_box(s: &str) -> std::result::Result<[i32; 4], String> {
    let v: Vec<i32> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|e| format!("{e}")))
        .collect::<std::result::Result<_, String>>()?;
    v.try_into().map_err(|_| "expected x0,y0,x1,y1".to_string())
}

fn parse_variant(s: &str) -> std::result::Result<HeadVariant, String> {
    HeadVariant::parse(s).ok_or_else(|| {
        format!("unknown variant {s:?}; expected bilayer-gcn | bilayer-fcn | single-gcn | single-fcn")
    })
}

/// Worker cap from BCNET_THREADS; this build is single-threaded, so any
/// valid value above 1 has no effect beyond validation.
fn thread_cap() -> Result<usize> {
    match std::env::var("BCNET_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Usage(format!("BCNET_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(1),
    }
}

/// CLI flag > --config JSON > built-in default.
fn resolve_train_config(flags: &TrainFlags) -> Result<TrainConfig> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = flags.iters {
        cfg.iterations = v;
        cfg.warmup_iters = cfg.warmup_iters.min(v / 3);
    }
    if let Some(v) = flags.variant {
        cfg.variant = v;
    }
    if let Some(v) = flags.batch {
        cfg.batch = v;
    }
    if let Some(v) = flags.lr {
        cfg.lr = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.channels {
        cfg.head.channels = v;
    }
    if flags.no_contour {
        cfg.supervise_contour = false;
    }
    if flags.no_mask {
        cfg.supervise_mask = false;
    }
    if flags.no_guidance {
        cfg.guidance = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn echo_config(cfg: &impl serde::Serialize) {
    println!(
        "config: {}",
        serde_json::to_string(cfg).expect("config serializes")
    );
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    if args.out.exists() && !args.force {
        let non_empty = std::fs::read_dir(&args.out)
            .map_err(|e| Error::io(args.out.display().to_string(), e))?
            .next()
            .is_some();
        if non_empty {
            return Err(Error::Usage(format!(
                "refusing to write into non-empty directory {} (use --force)",
                args.out.display()
            )));
        }
    }
    let mut cfg = SceneConfig {
        seed: args.seed,
        ..SceneConfig::default()
    };
    if let Some((lo, hi)) = args.overlap {
        cfg.overlap_lo = lo;
        cfg.overlap_hi = hi;
    }
    if let Some(px) = args.canvas {
        cfg.canvas = px;
    }
    echo_config(&cfg);
    let ds = Dataset::generate(&cfg, args.count)?;
    let checksum = export_dataset(&ds, &args.out)?;
    println!(
        "wrote {} samples ({} occluded) to {}",
        ds.samples.len(),
        ds.occluded_count(),
        args.out.display()
    );
    println!("checksum: {checksum:08x}");
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(&args.flags)?;
    echo_config(&cfg);
    let ds = import_dataset(&args.data)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let mut trainer = Trainer::new(cfg)?;
    let mut csv = String::from(TraceRow::CSV_HEADER);
    csv.push('\n');
    let rows = trainer.train(&ds, args.out.parent().filter(|p| !p.as_os_str().is_empty()), |row| {
        println!("{}", row.csv());
    })?;
    for row in &rows {
        csv.push_str(&row.csv());
        csv.push('\n');
    }
    trainer.to_archive().save(&args.out)?;
    let log_path = args
        .log
        .unwrap_or_else(|| args.out.with_extension("csv"));
    std::fs::write(&log_path, csv).map_err(|e| Error::io(log_path.display().to_string(), e))?;
    println!("checkpoint: {}", args.out.display());
    println!("loss log: {}", log_path.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let archive = Archive::load(&args.ckpt)?;
    let (model, cfg) = model_from_archive(&archive)?;
    echo_config(&cfg);
    let mut ds = import_dataset(&args.data)?;
    if args.occluded_only {
        ds.samples.retain(|s| s.overlap_ratio >= bcnet::eval::OCCLUDED_SPLIT_MIN_OVERLAP);
    }
    let report = evaluate(&model, &cfg, &ds, args.threshold)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let base = resolve_train_config(&args.flags)?;
    echo_config(&base);
    let train_ds = import_dataset(&args.data)?;
    let test_ds = import_dataset(&args.test_data)?;
    let mut configs: Vec<(String, TrainConfig)> = Vec::new();
    for name in args.variants.split(',').filter(|s| !s.is_empty()) {
        let variant = parse_variant(name.trim()).map_err(Error::Usage)?;
        configs.push((
            variant.as_str().to_string(),
            TrainConfig {
                variant,
                ..base.clone()
            },
        ));
    }
    if args.guidance {
        configs.push((
            "bilayer-gcn/no-guidance".into(),
            TrainConfig {
                variant: HeadVariant::BilayerGcn,
                guidance: false,
                ..base.clone()
            },
        ));
    }
    if args.supervision {
        configs.push((
            "bilayer-gcn/no-supervision".into(),
            TrainConfig {
                variant: HeadVariant::BilayerGcn,
                supervise_contour: false,
                supervise_mask: false,
                ..base.clone()
            },
        ));
    }
    let rows = run_ablation(&configs, &train_ds, &test_ds, |label, row| {
        println!("[{label}] {}", row.csv());
    })?;
    println!("{}", format_ablation_table(&rows));
    Ok(())
}

fn load_boxes(args: &InferArgs) -> Result<Vec<[i32; 4]>> {
    let mut boxes = Vec::new();
    if let Some(b) = args.r#box {
        boxes.push(b);
    }
    if let Some(path) = &args.boxes {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            boxes.push(
                parse_box(line).map_err(|e| Error::format(path.display().to_string(), e))?,
            );
        }
    }
    if boxes.is_empty() {
        return Err(Error::Usage("provide --box or --boxes".into()));
    }
    if boxes.len() > 50 {
        eprintln!(
            "notice: {} boxes given, keeping the first 50",
            boxes.len()
        );
        boxes.truncate(50);
    }
    Ok(boxes)
}

fn infer(args: InferArgs) -> Result<()> {
    let archive = Archive::load(&args.ckpt)?;
    let (model, cfg) = model_from_archive(&archive)?;
    echo_config(&cfg);
    let (image, iw, ih) = pnm::read_ppm(&args.image)?;
    let boxes = load_boxes(&args)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(args.out.display().to_string(), e))?;
    let cs = cfg.head.crop_size();
    let out_size = cfg.head.out_size();
    for (bi, bx) in boxes.iter().enumerate() {
        let clipped = [
            bx[0].clamp(0, iw as i32 - 1),
            bx[1].clamp(0, ih as i32 - 1),
            bx[2].clamp(1, iw as i32),
            bx[3].clamp(1, ih as i32),
        ];
        if clipped != *bx {
            eprintln!("warning: box {bi} {bx:?} clipped to {clipped:?}");
        }
        if clipped[2] <= clipped[0] || clipped[3] <= clipped[1] {
            return Err(Error::Usage(format!("box {bi} {bx:?} is empty after clipping")));
        }
        let region = [
            clipped[0] as f32,
            clipped[1] as f32,
            clipped[2] as f32,
            clipped[3] as f32,
        ];
        let crop = resize_bilinear(&image, iw, ih, 3, region, cs, cs);
        let mut g = Graph::new();
        let mut bind = Binding::default();
        let x = g.constant(crop, &[cs, cs, 3]);
        let out = model.forward_crop(&mut g, &mut bind, x, ForwardMode::Viz, false)?;
        let maps: Vec<(&str, Option<&[f32]>)> = vec![
            ("occluder_boundary", out.occluder_boundary.map(|t| g.data(t))),
            ("occluder_mask", out.occluder_mask.map(|t| g.data(t))),
            ("occludee_boundary", Some(g.data(out.occludee_boundary))),
            ("occludee_mask", Some(g.data(out.occludee_mask))),
        ];
        for (name, logits) in &maps {
            if let Some(logits) = logits {
                let gray: Vec<u8> = logits
                    .iter()
                    .map(|&z| (255.0 * sigmoid_scalar(z)).round() as u8)
                    .collect();
                pnm::write_pgm(
                    &args.out.join(format!("box{bi:03}_{name}.pgm")),
                    &gray,
                    out_size,
                    out_size,
                )?;
            }
        }
        let pred = predict_mask(
            out.occluder_boundary.map(|t| g.data(t)),
            out.occluder_mask.map(|t| g.data(t)),
            g.data(out.occludee_boundary),
            g.data(out.occludee_mask),
            args.threshold,
        );
        pnm::write_mask_pgm(
            &args.out.join(format!("box{bi:03}_occludee_mask_bin.pgm")),
            &pred.occludee_mask,
            out_size,
            out_size,
        )?;
        if let Some(m) = &pred.occluder_mask {
            pnm::write_mask_pgm(
                &args.out.join(format!("box{bi:03}_occluder_mask_bin.pgm")),
                m,
                out_size,
                out_size,
            )?;
        }
        pnm::write_mask_pgm(
            &args.out.join(format!("box{bi:03}_occlusion_boundary.pgm")),
            &pred.occlusion_boundary,
            out_size,
            out_size,
        )?;
    }
    println!("wrote predictions for {} boxes to {}", boxes.len(), args.out.display());
    Ok(())
}

/// Heatmap panel: input crop followed by the four sigmoid maps, all resized
/// to the head output resolution and laid out in one row.
fn viz(args: VizArgs) -> Result<()> {
    let (dir, idx) = args
        .sample
        .rsplit_once('/')
        .ok_or_else(|| Error::Usage(format!("--sample expects DIR/index, got {:?}", args.sample)))?;
    let idx: usize = idx
        .parse()
        .map_err(|_| Error::Usage(format!("--sample index {idx:?} is not a number")))?;
    let archive = Archive::load(&args.ckpt)?;
    let (model, cfg) = model_from_archive(&archive)?;
    echo_config(&cfg);
    let ds = import_dataset(Path::new(dir))?;
    let sample = ds
        .samples
        .get(idx)
        .ok_or_else(|| Error::Usage(format!("sample {idx} out of range ({} samples)", ds.samples.len())))?;
    let prep = prepare_sample(sample, &cfg.head, 1.0, cfg.boundary_thickness);
    let cs = cfg.head.crop_size();
    let mut g = Graph::new();
    let mut bind = Binding::default();
    let x = g.constant(prep.crop.clone(), &[cs, cs, 3]);
    let out = model.forward_crop(&mut g, &mut bind, x, ForwardMode::Viz, false)?;

    let d = cfg.head.out_size();
    let crop_panel = resize_bilinear(&prep.crop, cs, cs, 3, [0.0, 0.0, cs as f32, cs as f32], d, d);
    let mut panels: Vec<Vec<f32>> = vec![crop_panel];
    for logits in [
        out.occluder_boundary.map(|t| g.data(t).to_vec()),
        out.occluder_mask.map(|t| g.data(t).to_vec()),
        Some(g.data(out.occludee_boundary).to_vec()),
        Some(g.data(out.occludee_mask).to_vec()),
    ]
    .into_iter()
    .flatten()
    {
        // grayscale heat = sigmoid of the logit, replicated to RGB
        panels.push(
            logits
                .iter()
                .flat_map(|&z| {
                    let v = sigmoid_scalar(z);
                    [v, v, v]
                })
                .collect(),
        );
    }
    let cols = panels.len();
    let mut row_img = vec![0.0f32; d * cols * d * 3];
    for (pi, panel) in panels.iter().enumerate() {
        for y in 0..d {
            for xx in 0..d {
                for c in 0..3 {
                    row_img[(y * cols * d + pi * d + xx) * 3 + c] = panel[(y * d + xx) * 3 + c];
                }
            }
        }
    }
    pnm::write_ppm(&args.out, &row_img, cols * d, d)?;
    println!("wrote {}-panel heatmap to {}", cols, args.out.display());
    Ok(())
}

fn run() -> Result<()> {
    thread_cap()?;
    match Cli::parse().command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Infer(a) => infer(a),
        Command::Viz(a) => viz(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
