//! `deadwood`: tile → synth → (external detector) → eval, plus the loss
//! self-check.
//!
//! Settings come from three layers, last wins: built-in defaults, the
//! `--config` TOML file, command-line flags. Exit codes: 0 success, 1
//! validation or runtime failure, 2 usage error.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use deadwood::eval::{evaluate, read_detections, EvalParams};
use deadwood::imageio::load_raster;
use deadwood::losses::{cases::evaluate_cases, check::run_all};
use deadwood::synth::{generate_dataset, load_backgrounds, AugmentConfig, ForegroundLibrary};
use deadwood::tiler::{plan_grid, split, SplitOptions};
use deadwood::{EdgeMode, OcclusionPolicy};
use log::info;
use thiserror::Error;

use config::{parse_tile_size, PipelineConfig, SynthSection};

const DEFAULT_OUT: &str = "out";

#[derive(Parser, Debug)]
#[command(name = "deadwood", version, about = "Tiling, synthetic COCO data, loss checks and detection evaluation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Output directory; nothing is written outside it [default: out]
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Master seed; every random draw derives from it
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// TOML config file, overridden by flags
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log warnings and errors only
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split a PNG/TIFF raster into PNG tiles plus manifest.txt
    Tile(TileArgs),
    /// Compose a synthetic COCO dataset from cut-outs and backgrounds
    Synth(SynthArgs),
    /// Score COCO-format detections against ground truth
    Eval(EvalArgs),
    /// Loss and optimizer numerics
    Losses {
        #[command(subcommand)]
        command: LossesCommand,
    },
    /// Print the version
    Version,
}

#[derive(Args, Debug)]
struct TileArgs {
    #[arg(long)]
    input: Option<PathBuf>,

    /// Tile size as WxH, or N for square tiles
    #[arg(long, value_name = "WxH", value_parser = parse_tile_size)]
    tile_size: Option<(u32, u32)>,

    /// Zero-pad edge tiles to full size (default)
    #[arg(long, conflicts_with = "truncate")]
    pad: bool,

    /// Cut edge tiles at the raster border
    #[arg(long)]
    truncate: bool,

    /// Skip tiles with less than this fraction of non-empty pixels
    #[arg(long, value_name = "FRAC")]
    min_content: Option<f64>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Directory of RGBA PNG cut-outs; subdirectories become categories
    #[arg(long, value_name = "DIR")]
    fg: Option<PathBuf>,

    /// Directory of RGB PNG backgrounds
    #[arg(long, value_name = "DIR")]
    bg: Option<PathBuf>,

    /// Number of scenes
    #[arg(long)]
    n: Option<usize>,

    /// keep | drop | split
    #[arg(long)]
    occlusion: Option<OcclusionPolicy>,

    /// Smallest annotated region in pixels
    #[arg(long, value_name = "PX")]
    min_area: Option<u64>,

    /// Augment every scene (default augmentation unless the config sets one)
    #[arg(long)]
    augment: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Ground-truth COCO json
    #[arg(long, value_name = "FILE")]
    gt: Option<PathBuf>,

    /// Detections in COCO results format
    #[arg(long, value_name = "FILE")]
    dets: Option<PathBuf>,

    /// Match on mask IoU instead of box IoU
    #[arg(long)]
    masks: bool,

    /// IoU for the precision/recall/F1 battery [default: 0.5]
    #[arg(long)]
    iou: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum LossesCommand {
    /// Run the oracle and finite-difference suite
    Check,
    /// Evaluate a file of loss cases, one per line
    Eval {
        #[arg(long, value_name = "FILE")]
        file: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Reported through clap, exit 2.
    #[error("{0}")]
    Usage(String),

    #[error("invalid {field}: {message}")]
    Invalid { field: &'static str, message: String },

    #[error(transparent)]
    Core(#[from] deadwood::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0} loss check(s) failed")]
    ChecksFailed(usize),
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.global.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info })
        .format_timestamp(None)
        .parse_env("DEADWOOD_LOG")
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            let err = Cli::command().error(ErrorKind::MissingRequiredArgument, msg);
            let _ = err.print();
            ExitCode::from(err.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Resolved global settings.
struct Ctx {
    out: PathBuf,
    seed: Option<u64>,
    cfg: PipelineConfig,
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Version = cli.command {
        println!("deadwood {}", env!("CARGO_PKG_VERSION"));
        return Ok(());
    }
    let g = cli.global;
    let cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(n) = g.threads.or(cfg.threads) {
        if n == 0 {
            return Err(invalid("threads", "must be at least 1"));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Ctx {
        out: g.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| DEFAULT_OUT.into()),
        seed: g.seed.or(cfg.seed),
        cfg,
    };
    match cli.command {
        Command::Tile(a) => tile(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Losses { command } => losses(&ctx, command),
        Command::Version => unreachable!(),
    }
}

fn invalid(field: &'static str, message: impl Into<String>) -> CliError {
    CliError::Invalid { field, message: message.into() }
}

fn require<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| CliError::Usage(format!("missing required argument '--{flag}' (flag or config file)")))
}

fn existing(p: PathBuf, field: &'static str) -> Result<PathBuf> {
    if p.exists() {
        Ok(p)
    } else {
        Err(invalid(field, format!("path does not exist: {}", p.display())))
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|source| CliError::Io { path: path.into(), source })
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.into(), source })
}

fn tile(ctx: &Ctx, a: TileArgs) -> Result<()> {
    let c = &ctx.cfg.tile;
    let input = existing(require(a.input.or_else(|| c.input.clone()), "input")?, "input")?;
    let (tw, th) = match a.tile_size {
        Some(s) => s,
        None => {
            let s = require(c.size.as_deref(), "tile-size")?;
            parse_tile_size(s).map_err(|m| invalid("tile-size", m))?
        }
    };
    if tw == 0 || th == 0 {
        return Err(invalid("tile-size", "width and height must be positive"));
    }
    let truncate = if a.truncate || a.pad { a.truncate } else { c.truncate.unwrap_or(false) };
    let min_content = a.min_content.or(c.min_content).unwrap_or(0.0);
    if !(0.0..=1.0).contains(&min_content) {
        return Err(invalid("min-content", "must lie in [0, 1]"));
    }

    let img = load_raster(&input)?;
    let grid = plan_grid(img.width(), img.height(), tw, th)?;
    let opts = SplitOptions {
        edge: if truncate { EdgeMode::Truncate } else { EdgeMode::Pad },
        min_content,
    };
    let files = split(&img, &grid, &ctx.out, opts)?;
    info!(
        "{}x{} raster -> {} of {} tiles ({} cols x {} rows) in {}",
        img.width(),
        img.height(),
        files.len(),
        grid.len(),
        grid.cols,
        grid.rows,
        ctx.out.display()
    );
    Ok(())
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let c = &ctx.cfg.synth;
    let seed = require(ctx.seed, "seed")?;
    let fg = existing(require(a.fg.or_else(|| c.fg.clone()), "fg")?, "fg")?;
    let bg = existing(require(a.bg.or_else(|| c.bg.clone()), "bg")?, "bg")?;
    let n = require(a.n.or(c.n), "n")?;
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    let mut scene = c.scene.clone().unwrap_or_default();
    if let Some(o) = a.occlusion {
        scene.occlusion = o;
    }
    if let Some(m) = a.min_area {
        scene.min_area = m;
    }
    if a.augment && scene.augment.is_none() {
        scene.augment = Some(AugmentConfig::default());
    }
    scene.validate().map_err(|e| invalid("synth.scene", e.to_string()))?;

    let library = ForegroundLibrary::load_dir(&fg)?;
    let backgrounds = load_backgrounds(&bg)?;
    create_out(&ctx.out)?;
    let ds = generate_dataset(n, &library, &backgrounds, &scene, seed, &ctx.out)?;

    // The resolved settings, so the run can be repeated from the output alone.
    let resolved = PipelineConfig {
        seed: Some(seed),
        synth: SynthSection { fg: Some(fg), bg: Some(bg), n: Some(n), scene: Some(scene) },
        ..Default::default()
    };
    let text = toml::to_string(&resolved).map_err(|e| invalid("config", e.to_string()))?;
    write(&ctx.out.join("synth.toml"), text)?;
    info!(
        "{} scenes, {} annotations from {} cut-outs and {} backgrounds -> {}",
        ds.images.len(),
        ds.annotations.len(),
        library.instances.len(),
        backgrounds.len(),
        ctx.out.display()
    );
    Ok(())
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let c = &ctx.cfg.eval;
    let gt_path = existing(require(a.gt.or_else(|| c.gt.clone()), "gt")?, "gt")?;
    let dets_path = existing(require(a.dets.or_else(|| c.dets.clone()), "dets")?, "dets")?;
    let params = EvalParams {
        use_masks: a.masks || c.masks.unwrap_or(false),
        match_iou: a.iou.or(c.iou).unwrap_or(EvalParams::default().match_iou),
    };
    if !(params.match_iou > 0.0 && params.match_iou <= 1.0) {
        return Err(invalid("iou", "must lie in (0, 1]"));
    }

    let gt = deadwood::coco_io::read_coco(&gt_path)?;
    let dets = read_detections(&dets_path, &gt, params.use_masks)?;
    let report = evaluate(&gt, &dets, params)?;
    create_out(&ctx.out)?;
    write(&ctx.out.join("report.json"), report.to_json())?;
    write(&ctx.out.join("report.csv"), report.to_csv())?;
    write(&ctx.out.join("histogram.csv"), report.histogram_csv())?;
    info!(
        "AP50 {:.4}  AP75 {:.4}  mAP {:.4}  mP {:.4}  mR {:.4}  mF1 {:.4}  ({} images, {} skipped)",
        report.ap50,
        report.ap75,
        report.map,
        report.m_precision,
        report.m_recall,
        report.m_f1,
        report.images_evaluated,
        report.images_skipped
    );
    Ok(())
}

fn losses(ctx: &Ctx, cmd: LossesCommand) -> Result<()> {
    match cmd {
        LossesCommand::Check => {
            let results = run_all(ctx.seed.unwrap_or(0));
            let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
            for r in &results {
                let mark = if r.passed { "PASS" } else { "FAIL" };
                println!("{mark}  {:width$}  {}", r.name, r.detail);
            }
            match results.iter().filter(|r| !r.passed).count() {
                0 => Ok(()),
                n => Err(CliError::ChecksFailed(n)),
            }
        }
        LossesCommand::Eval { file } => {
            let file = existing(file, "file")?;
            let text = fs::read_to_string(&file).map_err(|source| CliError::Io { path: file.clone(), source })?;
            for r in evaluate_cases(&text)? {
                println!("{r}");
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn occlusion_flag_accepts_short_names() {
        let cli = Cli::try_parse_from(["deadwood", "synth", "--occlusion", "split", "--seed", "1"]).unwrap();
        let Command::Synth(a) = cli.command else { panic!() };
        assert_eq!(a.occlusion, Some(OcclusionPolicy::SplitComponents));
        assert_eq!(cli.global.seed, Some(1));
    }

    #[test]
    fn pad_and_truncate_conflict() {
        let e = Cli::try_parse_from(["deadwood", "tile", "--pad", "--truncate"]).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::ArgumentConflict);
    }
}
