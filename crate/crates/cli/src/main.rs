//! `camcal` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use camcal::calibration::{heatmap_csv, with_jobs};
use camcal::gradcam::{cam_map, gradcam_weights, gradcampp_weights, smooth_average, CamVariant, FeatureStack, GradientStack};
use camcal::io::{read_manifest, read_map, read_tensor, render_pgm, write_atomic, write_map};
use camcal::synth::{generate, SynthSpec};
use camcal::{
    cross_validate, empty_baseline, evaluate, search, EnsembleConfig, EnsembleOp, FoldSpec, Objective, SearchParams,
    ThresholdGrid,
};

#[derive(Parser)]
#[command(name = "camcal", version, about = "Threshold calibration for ensembles of class activation maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn activation and gradient stacks into a score map.
    Cam(CamArgs),
    /// Generate a synthetic corpus with known ground truth.
    Synth(SynthArgs),
    /// Search the threshold grid for the best ensemble configuration.
    Calibrate(CalibrateArgs),
    /// Score a fixed configuration on a manifest.
    Evaluate(EvaluateArgs),
    /// Calibrate and evaluate fold by fold.
    Crossval(CrossvalArgs),
    /// Score the all-empty prediction.
    Baseline(BaselineArgs),
    /// Write a map or mask as a binary PGM image.
    Render(RenderArgs),
}

#[derive(Args, Serialize)]
struct CamArgs {
    /// Activation stack (TNS1, order 0). Repeat for several samples.
    #[arg(long, required = true)]
    acts: Vec<PathBuf>,
    /// First-order gradient stack, one per `--acts`.
    #[arg(long, required = true)]
    grads: Vec<PathBuf>,
    /// Second-order derivatives (Grad-CAM++ only).
    #[arg(long)]
    grads2: Vec<PathBuf>,
    /// Third-order derivatives (Grad-CAM++ only).
    #[arg(long)]
    grads3: Vec<PathBuf>,
    #[arg(long, value_parser = parse_variant, default_value = "gradcam")]
    #[serde(skip)]
    variant: CamVariant,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    /// Output map (MSK1). A `.json` sidecar records the inputs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON spec; omitted fields take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SearchArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated model ids; defaults to every model in the manifest.
    #[arg(long, value_delimiter = ',')]
    members: Vec<String>,
    #[arg(long, default_value = "and")]
    op: EnsembleOp,
    #[arg(long, default_value_t = 0.1)]
    grid_step: f64,
    #[arg(long, default_value = "dsc")]
    objective: Objective,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    search: SearchArgs,
    /// Output directory for `search.json` and `heatmap.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// An ensemble config, or a calibrate output whose best config is used.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CrossvalArgs {
    #[command(flatten)]
    search: SearchArgs,
    /// Reshuffle into this many folds instead of using the manifest's.
    #[arg(long)]
    folds: Option<usize>,
    /// Shuffle seed used with `--folds`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct BaselineArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_variant(s: &str) -> Result<CamVariant, String> {
    match s {
        "gradcam" => Ok(CamVariant::GradCam),
        "gradcampp" | "gradcam++" => Ok(CamVariant::GradCamPlusPlus),
        _ => Err(format!("unknown variant `{s}` (expected gradcam or gradcampp)")),
    }
}

/// Every JSON artifact carries the tool version and the effective config.
#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: Value,
    result: T,
}

fn write_artifact<T: Serialize>(path: &Path, command: &str, config: Value, result: T) -> Result<()> {
    let doc = Artifact {
        tool: "camcal",
        version: camcal::VERSION,
        command,
        config,
        result,
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn load_manifest(path: &Path) -> Result<(camcal::io::Manifest, camcal::Dataset)> {
    let manifest = read_manifest(path)?;
    let dataset = manifest.load()?;
    if dataset.is_empty() {
        bail!("{} lists no images", path.display());
    }
    Ok((manifest, dataset))
}

impl SearchArgs {
    fn params(&self, models: &[String]) -> Result<SearchParams> {
        let members = if self.members.is_empty() {
            models.to_vec()
        } else {
            self.members.clone()
        };
        for m in &members {
            if !models.contains(m) {
                bail!("member `{m}` is not a model in the manifest (have: {})", models.join(", "));
            }
        }
        Ok(SearchParams::new(members, self.op)
            .with_grid(ThresholdGrid::with_step(self.grid_step)?)
            .with_objective(self.objective))
    }
}

fn cmd_cam(args: &CamArgs) -> Result<()> {
    let n = args.acts.len();
    if args.grads.len() != n {
        bail!("{n} --acts but {} --grads", args.grads.len());
    }
    let pp = args.variant == CamVariant::GradCamPlusPlus;
    if pp && (args.grads2.len() != n || args.grads3.len() != n) {
        bail!("gradcampp needs one --grads2 and one --grads3 per --acts");
    }
    if !pp && !(args.grads2.is_empty() && args.grads3.is_empty()) {
        bail!("--grads2/--grads3 only apply to gradcampp");
    }
    let gradient = |p: &Path| -> Result<GradientStack> {
        GradientStack::try_from(read_tensor(p)?).with_context(|| p.display().to_string())
    };
    let mut maps = Vec::with_capacity(n);
    for i in 0..n {
        let acts = FeatureStack::try_from(read_tensor(&args.acts[i])?)
            .with_context(|| args.acts[i].display().to_string())?;
        let g1 = gradient(&args.grads[i])?;
        let weights = if pp {
            gradcampp_weights(&acts, &g1, &gradient(&args.grads2[i])?, &gradient(&args.grads3[i])?)?
        } else {
            gradcam_weights(&g1)?
        };
        maps.push(cam_map(&acts, &weights, args.height, args.width)?);
    }
    let map = if n == 1 { maps.pop().expect("one map") } else { smooth_average(&maps)? };
    write_map(&map, &args.out)?;
    let mut config = serde_json::to_value(args)?;
    config["variant"] = serde_json::to_value(args.variant)?;
    let mut sidecar = args.out.clone().into_os_string();
    sidecar.push(".json");
    let sidecar = PathBuf::from(sidecar);
    write_artifact(&sidecar, "cam", config, serde_json::json!({ "samples": n, "map": args.out }))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<SynthSpec>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let corpus = generate(&spec)?;
    let manifest = corpus.write(&args.out)?;
    println!(
        "wrote {} images ({} empty, {} folds) to {}",
        manifest.entries.len(),
        spec.n_empty(),
        spec.n_folds,
        args.out.display()
    );
    Ok(())
}

fn search_config(args: &SearchArgs, params: &SearchParams) -> Result<Value> {
    let mut config = serde_json::to_value(args)?;
    config["members"] = serde_json::to_value(&params.members)?;
    config["grid"] = serde_json::to_value(&params.grid)?;
    Ok(config)
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<()> {
    let (_, dataset) = load_manifest(&args.search.manifest)?;
    let params = args.search.params(&dataset.models)?;
    let result = with_jobs(args.search.jobs, || search(&dataset.all(), &params))?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_atomic(&args.out.join("heatmap.csv"), heatmap_csv(&result).as_bytes())?;
    let config = search_config(&args.search, &params)?;
    write_artifact(&args.out.join("search.json"), "calibrate", config, &result)?;
    let t: Vec<String> = result.best_config.thresholds().iter().map(|t| t.to_string()).collect();
    println!(
        "best {} thresholds [{}]: DSC {:.1} mIoU {:.1} over {} images ({} cells)",
        params.op,
        t.join(", "),
        result.train_score.dsc * 100.0,
        result.train_score.miou * 100.0,
        result.n_images,
        result.surface.len()
    );
    Ok(())
}

/// Accepts a bare config, a calibrate artifact, or a search result.
fn read_config(path: &Path) -> Result<EnsembleConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let candidate = doc
        .pointer("/result/best_config")
        .or_else(|| doc.get("best_config"))
        .unwrap_or(&doc);
    serde_json::from_value(candidate.clone()).with_context(|| format!("{} is not an ensemble config", path.display()))
}

fn print_scores(label: &str, s: camcal::ScorePair) {
    println!("{label}: DSC {:.1} mIoU {:.1}", s.dsc * 100.0, s.miou * 100.0);
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let (_, dataset) = load_manifest(&args.manifest)?;
    let config = read_config(&args.config)?;
    let scores = with_jobs(args.jobs, || evaluate(&dataset.all(), &config))?;
    print_scores("evaluate", scores);
    if let Some(out) = &args.out {
        let mut echo = serde_json::to_value(args)?;
        echo["ensemble"] = serde_json::to_value(&config)?;
        write_artifact(out, "evaluate", echo, serde_json::json!({ "n_images": dataset.len(), "scores": scores }))?;
    }
    Ok(())
}

fn cmd_crossval(args: &CrossvalArgs) -> Result<()> {
    let (manifest, dataset) = load_manifest(&args.search.manifest)?;
    let params = args.search.params(&dataset.models)?;
    let folds = match args.folds {
        Some(n) => {
            let ids: Vec<&str> = dataset.samples.iter().map(|s| s.id.as_str()).collect();
            FoldSpec::shuffled(&ids, n, args.seed)?
        }
        None => manifest
            .fold_spec()?
            .context("manifest assigns no folds; pass --folds to create them")?,
    };
    let report = with_jobs(args.search.jobs, || cross_validate(&dataset, &folds, &params))?;
    print!("{}", report.summary());
    if let Some(out) = &args.out {
        let mut config = search_config(&args.search, &params)?;
        config["folds"] = serde_json::json!({
            "source": if args.folds.is_some() { "shuffled" } else { "manifest" },
            "n_folds": folds.n_folds(),
            "seed": args.folds.map(|_| args.seed),
        });
        let mut result = serde_json::to_value(&report)?;
        result["config_per_fold"] = serde_json::to_value(report.config_per_fold())?;
        write_artifact(out, "crossval", config, result)?;
    }
    Ok(())
}

fn cmd_baseline(args: &BaselineArgs) -> Result<()> {
    let (_, dataset) = load_manifest(&args.manifest)?;
    let scores = empty_baseline(&dataset.all())?;
    print_scores("baseline", scores);
    if let Some(out) = &args.out {
        let config = serde_json::to_value(args)?;
        write_artifact(out, "baseline", config, serde_json::json!({ "n_images": dataset.len(), "scores": scores }))?;
    }
    Ok(())
}

fn cmd_render(args: &RenderArgs) -> Result<()> {
    // Masks are valid maps, so one reader covers both.
    let map = read_map(&args.input)?;
    render_pgm(&map, &args.out)?;
    println!("wrote {} ({}x{})", args.out.display(), map.width(), map.height());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Cam(a) => cmd_cam(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Crossval(a) => cmd_crossval(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Render(a) => cmd_render(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already embed their source; skip causes that
            // repeat the tail of the previous message.
            let mut msg = e.to_string();
            let mut prev = msg.clone();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !prev.ends_with(&c) {
                    msg = format!("{msg}: {c}");
                }
                prev = c;
            }
            eprintln!("camcal: {msg}");
            ExitCode::FAILURE
        }
    }
}
