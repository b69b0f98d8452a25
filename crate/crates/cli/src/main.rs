use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mmsar::calibration::{self, CalibrationModel, EstimationMode, SgParams};
use mmsar::imaging::{self, ImageGrid, ProfileAxis, RmaOptions};
use mmsar::io::{self, KeyValues};
use mmsar::metrics;
use mmsar::signal_model::{self, PhaseModel, RawDataCube, SimulationOptions};
use mmsar::stream_sync::{self, StreamSynthesis};
use mmsar::Error;

/// Exit codes.
const EXIT_USAGE: u8 = 1;
const EXIT_MISSING: u8 = 2;
const EXIT_MALFORMED: u8 = 3;
const EXIT_CALIBRATION: u8 = 4;
const EXIT_SHAPE: u8 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "mmsar",
    version,
    about = "FMCW SAR simulation, calibration and imaging pipeline"
)]
struct Cli {
    /// key=value run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed; overrides the `seed` config key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 is serial and the reproducibility reference.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output path (file, or file stem for images).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a raw data cube from a scene file.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        /// Also write the equivalent pose and frame streams into this directory.
        #[arg(long)]
        emit_streams: Option<PathBuf>,
        /// Also write the virtual element poses.
        #[arg(long)]
        poses_out: Option<PathBuf>,
    },
    /// Apply per-channel gain and delay errors to a cube.
    Inject {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        errors: PathBuf,
    },
    /// Rebuild a cube from pose and frame streams.
    Sync {
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        frames: PathBuf,
    },
    /// Estimate a per-channel calibration model from a reference target.
    Calibrate {
        #[arg(long)]
        cube: PathBuf,
        /// Reference point `x,y,z`; located from range peaks when omitted.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        point: Option<[f64; 3]>,
        #[arg(long, value_enum, default_value_t = Mode::PerChannel)]
        mode: Mode,
        #[arg(long)]
        zero_pad: Option<usize>,
    },
    /// Apply a calibration model, optionally followed by S-G conditioning.
    Compensate {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        sg: bool,
    },
    /// Form an image on the plane z = z0.
    Image {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Rma)]
        method: Method,
        #[arg(long)]
        z0: Option<f64>,
        #[arg(long)]
        upsample: Option<usize>,
        #[arg(long)]
        hann: bool,
    },
    /// 3 dB width and sinc fit of the beam profile through the image peak.
    Profile {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_enum, default_value_t = AxisArg::Horizontal)]
        axis: AxisArg,
    },
    /// Evaluation metrics, reported as key=value lines.
    Metrics {
        #[command(subcommand)]
        kind: MetricsCommand,
    },
}

#[derive(Debug, Subcommand)]
enum MetricsCommand {
    /// Image entropy of a saved image.
    Entropy {
        #[arg(long)]
        image: PathBuf,
    },
    /// Distance-error distribution of estimates (one per line) against truth.
    Cdf {
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        truth: f64,
    },
    /// Depth-completion metrics of a predicted map against ground truth.
    Depth(DepthArgs),
    /// Extent of the bright region of a saved image.
    Extent {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        threshold_db: f64,
        #[arg(long, value_enum, default_value_t = AxisArg::Horizontal)]
        axis: AxisArg,
    },
}

#[derive(Debug, Args)]
struct DepthArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    pred_mask: Option<PathBuf>,
    #[arg(long)]
    truth_mask: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    PerChannel,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Rma,
    Bp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AxisArg {
    Horizontal,
    Vertical,
}

impl From<AxisArg> for ProfileAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Horizontal => ProfileAxis::Horizontal,
            AxisArg::Vertical => ProfileAxis::Vertical,
        }
    }
}

fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|_| "expected x,y,z".to_string())
}

/// A failed command: exit code and message.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

/// Generic mapping of library errors to exit codes.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
            Error::Format(_) => EXIT_MALFORMED,
            Error::Shape(_) => EXIT_SHAPE,
            _ => EXIT_USAGE,
        };
        Failure::new(code, e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn require(path: &Path) -> Result<&Path, Failure> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Failure::new(EXIT_MISSING, format!("no such file: {}", path.display())))
    }
}

fn out_path(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn load_config(cli: &Cli) -> Result<KeyValues, Failure> {
    match &cli.config {
        None => Ok(KeyValues::default()),
        Some(p) => {
            let text = std::fs::read_to_string(require(p)?).map_err(Error::from)?;
            Ok(io::parse_key_values(&text)?)
        }
    }
}

/// Reads a cube and, when the configuration describes the same number of
/// channels, restores the channel layout the cube format does not carry.
fn load_cube(path: &Path, kv: &KeyValues) -> Result<RawDataCube, Failure> {
    let mut cube = io::read_cube(require(path)?)?;
    if kv.get("n_channels").is_some() {
        let grid = io::aperture_grid(kv)?;
        if grid.channel_offsets.len() == cube.n_channels() {
            cube.channel_offsets = grid.channel_offsets;
        }
    }
    Ok(cube)
}

fn report(pairs: &[(&str, f64)]) {
    for (k, v) in pairs {
        println!("{k}={v:.6}");
    }
}

fn run(cli: &Cli, kv: &KeyValues) -> CmdResult {
    let kv = kv.clone();
    match &cli.command {
        Command::Simulate {
            scene,
            emit_streams,
            poses_out,
        } => {
            let scene = io::read_scene(require(scene)?)?;
            let cfg = io::radar_config(&kv)?;
            let grid = io::aperture_grid(&kv)?;
            let seed = cli.seed.unwrap_or(kv.usize_or("seed", 0)? as u64);
            let phase_model = match kv.get("phase_model").unwrap_or("approximate") {
                "approximate" => PhaseModel::Approximate,
                "exact" => PhaseModel::Exact,
                other => return Err(Failure::new(EXIT_USAGE, format!("unknown phase_model '{other}'"))),
            };
            let opts = SimulationOptions {
                noise_sigma: kv.f64_or("noise_sigma", 0.0)?,
                seed,
                phase_model,
            };
            let cube = signal_model::simulate_cube(&cfg, &scene, &grid, &opts)?;
            io::write_cube(&out_path(cli, "cube.fgcb"), &cube)?;
            if let Some(p) = poses_out {
                io::write_poses(p, &cube.virtual_poses())?;
            }
            if let Some(dir) = emit_streams {
                std::fs::create_dir_all(dir).map_err(Error::from)?;
                let params = StreamSynthesis {
                    seed,
                    ..Default::default()
                };
                let (poses, frames) = stream_sync::synthesize_streams(&cube, &params)?;
                io::write_pose_stream(&dir.join("poses.csv"), &poses)?;
                io::write_frames(&dir.join("frames.fgfr"), &frames)?;
            }
        }
        Command::Inject { cube, errors } => {
            let cube = load_cube(cube, &kv)?;
            let errors = io::read_channel_errors(require(errors)?)?;
            let out = signal_model::inject_channel_error(&cube, &errors)?;
            io::write_cube(&out_path(cli, "injected.fgcb"), &out)?;
        }
        Command::Sync { poses, frames } => {
            let poses = io::read_pose_stream(require(poses)?)?;
            let frames = io::read_frames(require(frames)?)?;
            let cfg = io::radar_config(&kv)?;
            let grid = io::aperture_grid(&kv)?;
            let (cube, rep) = stream_sync::assemble_cube(&poses, &frames, &grid, &cfg).map_err(|e| match e {
                Error::Structural { .. } => Failure::new(EXIT_SHAPE, e.to_string()),
                other => other.into(),
            })?;
            io::write_cube(&out_path(cli, "synced.fgcb"), &cube)?;
            println!("matched={}", rep.matches.len());
            println!("dropped_frames={}", rep.dropped_frames);
            report(&[("max_mismatch_s", rep.max_mismatch)]);
        }
        Command::Calibrate {
            cube,
            point,
            mode,
            zero_pad,
        } => {
            let cube = load_cube(cube, &kv)?;
            let zero_pad = zero_pad.unwrap_or(kv.usize_or("zero_pad", 8)?);
            let mode = match mode {
                Mode::PerChannel => EstimationMode::PerChannel,
                Mode::Joint => EstimationMode::Joint,
            };
            let calibration_failure = |e: Error| match e {
                Error::Shape(_) | Error::Format(_) | Error::Io(_) => Failure::from(e),
                other => Failure::new(EXIT_CALIBRATION, format!("calibration failed: {other}")),
            };
            let point = match point {
                Some(p) => *p,
                None => {
                    calibration::estimate_reference_from_cube(&cube, zero_pad, kv.usize_or("average_window", 3)?)
                        .map_err(calibration_failure)?
                        .point
                }
            };
            let model = calibration::estimate_from_cube(&cube, point, zero_pad, mode).map_err(calibration_failure)?;
            io::write_calibration(&out_path(cli, "calibration.csv"), &model)?;
            report(&[("ref_x", point[0]), ("ref_y", point[1]), ("ref_z", point[2])]);
        }
        Command::Compensate { cube, model, sg } => {
            let cube = load_cube(cube, &kv)?;
            let model: CalibrationModel = io::read_calibration(require(model)?)?;
            let mut out = calibration::compensate(&cube, &model)?;
            if *sg {
                let d = SgParams::default();
                let params = SgParams {
                    short_window: kv.usize_or("sg_short", d.short_window)?,
                    long_window: kv.usize_or("sg_long", d.long_window)?,
                    order: kv.usize_or("sg_order", d.order)?,
                };
                out = calibration::condition_cube(&out, &params)?;
            }
            io::write_cube(&out_path(cli, "compensated.fgcb"), &out)?;
        }
        Command::Image {
            cube,
            method,
            z0,
            upsample,
            hann,
        } => {
            let cube = load_cube(cube, &kv)?;
            let z0 = match z0 {
                Some(z) => *z,
                None => kv.f64_or("z0", 0.3)?,
            };
            let img = match method {
                Method::Rma => {
                    let opts = RmaOptions {
                        upsample: upsample.unwrap_or(kv.usize_or("upsample", 1)?),
                        hann: *hann,
                        ..Default::default()
                    };
                    imaging::rma_image(&cube, z0, &opts)?
                }
                Method::Bp => {
                    let mut grid = ImageGrid::of_aperture(&cube)?;
                    let u = upsample.unwrap_or(kv.usize_or("upsample", 1)?).max(1);
                    grid.n_x = (grid.n_x - 1) * u + 1;
                    grid.n_y = (grid.n_y - 1) * u + 1;
                    grid.pitch = [grid.pitch[0] / u as f64, grid.pitch[1] / u as f64];
                    imaging::backprojection_image(&cube, &grid, z0)?
                }
            };
            io::write_image(&out_path(cli, "image"), &img)?;
            let (px, py) = img.peak_index();
            println!("peak_ix={px}");
            println!("peak_iy={py}");
            report(&[("peak_x", img.x(px)), ("peak_y", img.y(py))]);
        }
        Command::Profile { image, axis } => {
            let img = io::read_image(image)?;
            let p = imaging::peak_profile(&img, (*axis).into())?;
            let fit = imaging::fit_sinc(&p)?;
            report(&[
                ("width_3db", p.width_3db),
                ("sinc_scale", fit.scale),
                ("sinc_correlation", fit.correlation),
            ]);
            if let Some(out) = &cli.out {
                let mut s = String::from("# offset,amplitude\n");
                for (o, a) in p.offsets.iter().zip(&p.amplitudes) {
                    s.push_str(&format!("{o},{a}\n"));
                }
                std::fs::write(out, s).map_err(Error::from)?;
            }
        }
        Command::Metrics { kind } => run_metrics(kind)?,
    }
    Ok(())
}

fn run_metrics(kind: &MetricsCommand) -> CmdResult {
    match kind {
        MetricsCommand::Entropy { image } => {
            let img = io::read_image(image)?;
            report(&[("entropy", metrics::image_entropy(&imaging::magnitude_image(&img))?)]);
        }
        MetricsCommand::Cdf { estimates, truth } => {
            let text = std::fs::read_to_string(require(estimates)?).map_err(Error::from)?;
            let values = text
                .lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty())
                .map(|l| {
                    l.parse::<f64>()
                        .map_err(|_| Failure::new(EXIT_MALFORMED, format!("'{l}' is not a number")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let cdf = metrics::distance_error_cdf(&values, *truth)?;
            println!("count={}", cdf.errors.len());
            report(&[("median", cdf.median), ("max", *cdf.errors.last().expect("non-empty"))]);
        }
        MetricsCommand::Depth(a) => {
            let pred = io::read_depth_map(require(&a.pred)?, a.pred_mask.as_deref())?;
            let truth = io::read_depth_map(require(&a.truth)?, a.truth_mask.as_deref())?;
            println!("# non-positive predictions count as delta failures");
            report(&[
                ("rmse", metrics::depth_rmse(&pred, &truth)?),
                ("mae", metrics::depth_mae(&pred, &truth)?),
                ("delta_1.05", metrics::threshold_delta(&pred, &truth, 1.05)?),
                ("delta_1.10", metrics::threshold_delta(&pred, &truth, 1.10)?),
                ("delta_1.25", metrics::threshold_delta(&pred, &truth, 1.25)?),
                ("loss_depth", metrics::loss_depth(&pred, &truth)?),
            ]);
            match metrics::loss_surface_normal(&pred, &truth) {
                Ok(v) => report(&[("loss_surface_normal", v)]),
                Err(Error::Domain(_)) => println!("loss_surface_normal=nan"),
                Err(e) => return Err(e.into()),
            }
        }
        MetricsCommand::Extent {
            image,
            threshold_db,
            axis,
        } => {
            let img = io::read_image(image)?;
            let axis: ProfileAxis = (*axis).into();
            let pitch = match axis {
                ProfileAxis::Horizontal => img.pitch[0],
                ProfileAxis::Vertical => img.pitch[1],
            };
            let e = metrics::estimate_extent(&imaging::magnitude_image(&img), pitch, *threshold_db, axis)?;
            report(&[("extent", e)]);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let kv = match load_config(&cli).and_then(|kv| Ok((kv.usize_or("threads", 1)?, kv))) {
        Ok(v) => v,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return ExitCode::from(f.code);
        }
    };
    let (threads, kv) = (cli.threads.unwrap_or(kv.0).max(1), kv.1);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match pool.install(|| run(&cli, &kv)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
