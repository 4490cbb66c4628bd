//! Command-line interface: `fit` runs the two-stage pipeline on a sequence
//! bundle, `synth` generates synthetic bundles with ground truth, `eval`
//! scores a fit against ground truth. Failures exit nonzero with a
//! machine-readable error record on stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mocapfit_core::body::make_default_model;
use mocapfit_core::energy::{FitConfig, PosePrior};
use mocapfit_core::eval::{evaluate, EvalOptions, EvalStage};
use mocapfit_core::io;
use mocapfit_core::pipeline::{self, default_camera};
use mocapfit_core::synth::{self, SynthConfig};

#[derive(Parser)]
#[command(name = "mocapfit", version, about = "Multi-view body-model fitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (default: all cores). Results are independent of the
    /// worker count.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit shape and per-frame pose to a detections/cameras/masks bundle.
    Fit(FitArgs),
    /// Generate a synthetic bundle with ground truth.
    Synth(SynthArgs),
    /// Score a fit against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    detections: PathBuf,
    /// Cameras document; optional for --monocular (a default camera is
    /// synthesized from the mask dimensions).
    #[arg(long)]
    cameras: Option<PathBuf>,
    /// Masks directory; required unless --no-silhouette.
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Use only the first N views.
    #[arg(long)]
    views: Option<usize>,
    /// Temporal window length in frames.
    #[arg(long, default_value_t = 30)]
    window: usize,
    /// Basis components per window.
    #[arg(long, default_value_t = 10)]
    dct_k: usize,
    /// Skip the silhouette refinement pass.
    #[arg(long)]
    no_silhouette: bool,
    /// Include silhouette terms in the temporal stage.
    #[arg(long)]
    stage2_silhouette: bool,
    /// Single-view mode.
    #[arg(long)]
    monocular: bool,
    /// Robustness constant for the joint term, pixels.
    #[arg(long)]
    sigma1: Option<f64>,
    /// Robustness constant for the temporal term, meters.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Temporal term weight.
    #[arg(long)]
    lambda_t: Option<f64>,
    /// Silhouette term weight.
    #[arg(long)]
    silhouette_weight: Option<f64>,
    /// Seed for the procedurally generated body model (ignored with --model).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Body model file; defaults to the procedural model for --seed.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Pose prior sidecar; defaults to the built-in prior.
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Also write per-frame OBJ meshes.
    #[arg(long)]
    obj: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    views: usize,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    /// Detection noise, pixels (standard deviation).
    #[arg(long, default_value_t = 0.0)]
    noise_px: f64,
    /// Fraction of (frame, view) cells with left/right swaps.
    #[arg(long, default_value_t = 0.0)]
    swap_rate: f64,
    /// Restrict swaps to one view.
    #[arg(long)]
    swap_view: Option<usize>,
    /// Dilate/erode masks by up to this many pixels.
    #[arg(long, default_value_t = 0.0)]
    mask_noise: f64,
    #[arg(long, default_value_t = 768)]
    image_size: u32,
    #[arg(long, default_value_t = 1000.0)]
    focal: f64,
    /// Scale of root motion along the first camera's optical axis.
    #[arg(long, default_value_t = 1.0)]
    depth_motion: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// poses.json produced by `fit`.
    #[arg(long)]
    fit: PathBuf,
    /// truth.json produced by `synth`.
    #[arg(long)]
    truth: PathBuf,
    /// Report per-frame Procrustes-aligned errors as well.
    #[arg(long)]
    procrustes: bool,
    /// Report the rest-pose vertex-to-vertex shape error.
    #[arg(long)]
    vertex_error: bool,
    /// Score the stage-one poses instead of the final ones.
    #[arg(long)]
    stage_one: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let result = match cli.command {
        Command::Fit(args) => run_fit(args),
        Command::Synth(args) => run_synth(args),
        Command::Eval(args) => run_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let record = serde_json::json!({
                "error": {
                    "kind": error_kind(&err),
                    "message": err.to_string(),
                }
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    match err.downcast_ref::<mocapfit_core::Error>() {
        Some(mocapfit_core::Error::InvalidArgument(_)) => "invalid-argument",
        Some(mocapfit_core::Error::Parse { .. }) => "parse",
        Some(mocapfit_core::Error::Validation(_)) => "validation",
        Some(mocapfit_core::Error::Io { .. }) => "io",
        Some(mocapfit_core::Error::NoFittableFrames) => "no-fittable-frames",
        Some(_) => "fit",
        None => "other",
    }
}

fn run_fit(args: FitArgs) -> anyhow::Result<()> {
    let mut config = FitConfig::default();
    config.window = args.window;
    config.dct_k = args.dct_k;
    config.use_silhouette = !args.no_silhouette;
    config.stage2_silhouette = args.stage2_silhouette;
    if let Some(s) = args.sigma1 {
        config.sigma1 = s;
    }
    if let Some(s) = args.sigma2 {
        config.sigma2 = s;
    }
    if let Some(w) = args.lambda_t {
        config.lambda_t = w;
    }
    if let Some(w) = args.silhouette_weight {
        config.silhouette_weight = w;
    }
    config.validate()?;

    let model = match &args.model {
        Some(path) => io::read_model(path)?,
        None => make_default_model(args.seed),
    };
    let prior = match &args.prior {
        Some(path) => io::read_prior(path)?,
        None => PosePrior::default_for(&model),
    };

    if config.use_silhouette && args.masks.is_none() {
        anyhow::bail!(mocapfit_core::Error::InvalidArgument(
            "--masks is required unless --no-silhouette is set".into()
        ));
    }

    // Load the bundle. Without a cameras file (monocular only) a default
    // camera is synthesized from the mask dimensions.
    let mut camera_synthesized = false;
    let mut bundle = match (&args.cameras, args.monocular) {
        (Some(cams), _) => io::load_bundle(&args.detections, cams, args.masks.as_deref())?,
        (None, false) => anyhow::bail!(mocapfit_core::Error::InvalidArgument(
            "--cameras is required unless --monocular".into()
        )),
        (None, true) => {
            let masks_dir = args.masks.as_deref().ok_or_else(|| {
                mocapfit_core::Error::InvalidArgument(
                    "--monocular without --cameras needs --masks to size the default camera"
                        .into(),
                )
            })?;
            let first = masks_dir.join(io::mask_filename(0, 0));
            let bytes = std::fs::read(&first)
                .map_err(|e| mocapfit_core::Error::io(first.display().to_string(), e))?;
            let mask =
                mocapfit_core::silhouette::read_mask_bytes(&bytes, &first.display().to_string())?;
            let cam = default_camera(mask.width as u32, mask.height as u32);
            camera_synthesized = true;
            let mut bundle =
                io::load_bundle_with_cameras(&args.detections, vec![cam], Some(masks_dir))?;
            bundle.warnings.push(
                "no cameras file given; synthesized a default camera from mask dimensions".into(),
            );
            bundle
        }
    };

    if let Some(views) = args.views {
        if views == 0 || views > bundle.views() {
            anyhow::bail!(mocapfit_core::Error::InvalidArgument(format!(
                "--views {views} out of range 1..={}",
                bundle.views()
            )));
        }
        bundle.cameras.truncate(views);
        for frame in bundle.detections.iter_mut() {
            frame.truncate(views);
        }
        if let Some(masks) = bundle.masks.as_mut() {
            for frame in masks.iter_mut() {
                frame.truncate(views);
            }
        }
    }
    if args.monocular && bundle.views() != 1 {
        anyhow::bail!(mocapfit_core::Error::InvalidArgument(format!(
            "--monocular expects one view; got {} (use --views 1 to select)",
            bundle.views()
        )));
    }

    for w in &bundle.warnings {
        eprintln!("warning: {w}");
    }

    let observations = bundle.observations();
    let mut fit = if args.monocular {
        pipeline::fit_monocular(&model, &observations, &bundle.cameras[0], &config, &prior)?
    } else {
        pipeline::fit_sequence(&model, &observations, &bundle.cameras, &config, &prior)?
    };
    fit.provenance.camera_synthesized = camera_synthesized;
    fit.provenance.model_seed = args.model.is_none().then_some(args.seed);
    fit.provenance.warnings.extend(bundle.warnings.clone());

    let written = io::write_results(&fit, &model, &args.out, args.obj)?;
    println!(
        "fit: {} frames, {} windows, wrote {} files to {}",
        fit.frames.len(),
        fit.windows.len(),
        written.len(),
        args.out.display()
    );
    Ok(())
}

fn run_synth(args: SynthArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        seed: args.seed,
        views: args.views,
        frames: args.frames,
        noise_px: args.noise_px,
        swap_rate: args.swap_rate,
        swap_view: args.swap_view,
        mask_noise: args.mask_noise,
        image_size: args.image_size,
        focal: args.focal,
        depth_motion: args.depth_motion,
        ..SynthConfig::default()
    };
    if cfg.views == 0 || cfg.frames == 0 {
        anyhow::bail!(mocapfit_core::Error::InvalidArgument(
            "--views and --frames must be positive".into()
        ));
    }
    let out = synth::generate(&cfg)?;
    io::write_bundle(&args.out, &out.detections, &out.cameras, &out.masks)?;
    io::write_truth(&out.truth, &args.out.join("truth.json"))?;
    println!(
        "synth: seed {} -> {} views x {} frames ({} swapped cells) in {}",
        args.seed,
        cfg.views,
        cfg.frames,
        out.truth.swapped_cells.len(),
        args.out.display()
    );
    Ok(())
}

fn run_eval(args: EvalArgs) -> anyhow::Result<()> {
    let fit = io::read_results(&args.fit)?;
    let truth = io::read_truth(&args.truth)?;
    let seed = fit.provenance.model_seed.unwrap_or(truth.model_seed);
    let model = make_default_model(seed);
    let report = evaluate(
        &model,
        &fit,
        &truth,
        &EvalOptions {
            procrustes: args.procrustes,
            vertex_error: args.vertex_error,
            stage: if args.stage_one {
                EvalStage::StageOne
            } else {
                EvalStage::Final
            },
        },
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
