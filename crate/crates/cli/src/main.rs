use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use adcgs_core::codec::container::{decode_model, encode_model, inspect};
use adcgs_core::model::Model;
use adcgs_core::renderer::ppm::encode_ppm;
use adcgs_core::renderer::RasterMode;
use adcgs_core::trainer::{write_csv, Trainer, TrainingConfig};
use adcgs_core::workbench::sweep::deform_fps;
use adcgs_core::workbench::{
    bench_deformation, evaluate, generate_scene, rd_sweep, SceneDataset, SceneSpec, Split,
};
use adcgs_core::{CoreError, Result};

#[derive(Parser)]
#[command(name = "adcgs", version, about = "Anchor-driven deformable Gaussian splatting with learned compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene spec into a dataset directory.
    Generate {
        /// Scene spec JSON file.
        #[arg(long, conflicts_with = "scene", required_unless_present = "scene")]
        spec: Option<PathBuf>,
        /// Name of a built-in scene instead of a spec file.
        #[arg(long)]
        scene: Option<String>,
        /// Image side length for built-in scenes.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Print the scene spec as JSON instead of rendering it.
        #[arg(long)]
        print_spec: bool,
        #[arg(long, required_unless_present = "print_spec")]
        out: Option<PathBuf>,
    },
    /// Train a model on a dataset and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training config JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Print a progress line every N iterations (0 disables).
        #[arg(long, default_value_t = 100)]
        log_every: usize,
    },
    /// Compress a checkpoint into a bitstream.
    Encode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        lambda_tag: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decompress a bitstream into a checkpoint.
    Decode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one view of a checkpoint to a PPM image.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory that supplies the cameras.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        camera: usize,
        /// Timestamp in [0, 1].
        #[arg(long)]
        frame: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-view PSNR and SSIM of a checkpoint or bitstream.
    Eval {
        /// Checkpoint, or a bitstream when the file ends in `.adcg`.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "eval")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-section byte breakdown of a bitstream.
    Inspect {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Train and encode once per rate weight and plot size against PSNR.
    RdSweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Run the sweep points concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Compare anchor-shared and per-Gaussian coarse deformation cost.
    Bench {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
}

fn load_config(path: Option<&Path>) -> Result<TrainingConfig> {
    match path {
        Some(p) => TrainingConfig::from_json(&fs::read_to_string(p)?),
        None => Ok(TrainingConfig::default()),
    }
}

fn load_any(path: &Path) -> Result<Model<f32>> {
    if path.extension().is_some_and(|e| e == "adcg") {
        decode_model(&fs::read(path)?)
    } else {
        Model::load(path)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { spec, scene, size, print_spec, out } => {
            let spec = match (spec, scene) {
                (Some(p), _) => serde_json::from_str::<SceneSpec>(&fs::read_to_string(p)?)?,
                (None, Some(name)) => SceneSpec::standard(&name, size)?,
                (None, None) => return Err(CoreError::Config("pass --spec or --scene".into())),
            };
            if print_spec {
                println!("{}", serde_json::to_string_pretty(&spec)?);
                return Ok(());
            }
            let Some(out) = out else {
                return Err(CoreError::Config("pass --out".into()));
            };
            let data = generate_scene(&spec)?;
            data.save(&out)?;
            println!(
                "{}: {} cameras x {} frames at {}x{}",
                data.manifest.scene,
                data.manifest.cameras.len(),
                data.manifest.times.len(),
                data.manifest.width,
                data.manifest.height
            );
        }
        Command::Train { data, config, out, log_every } => {
            let cfg = load_config(config.as_deref())?;
            let data = SceneDataset::load(&data)?;
            let views = data.views(Split::Train);
            let diag = out.with_extension("nan.ckpt");
            let trainer = Trainer::new(&views, &data.manifest.init_points, &cfg)?.with_diagnostics(diag);
            let start = Instant::now();
            let result = trainer.run(&mut |row| {
                if log_every > 0 && (row.iteration + 1) % log_every == 0 {
                    eprintln!(
                        "iter {:>5}  loss {:.5}  psnr {:.2}  anchors {}  bits {:.0}  {:.1}s",
                        row.iteration + 1,
                        row.total_loss,
                        row.psnr_train,
                        row.anchors,
                        row.rate_bits,
                        start.elapsed().as_secs_f64()
                    );
                }
            })?;
            result.model.save(&out)?;
            write_csv(fs::File::create(out.with_extension("log.csv"))?, &result.log)?;
            write_csv(fs::File::create(out.with_extension("events.csv"))?, &result.events)?;
            println!("{} anchors, {} iterations", result.model.anchor_count(), result.log.len());
        }
        Command::Encode { ckpt, lambda_tag, out } => {
            let model = Model::<f32>::load(&ckpt)?;
            let enc = encode_model(&model, lambda_tag)?;
            fs::write(&out, &enc.bytes)?;
            println!("{} bytes", enc.bytes.len());
        }
        Command::Decode { input, out } => {
            let model = decode_model(&fs::read(&input)?)?;
            model.save(&out)?;
            println!("{} anchors", model.anchor_count());
        }
        Command::Render { ckpt, data, camera, frame, out } => {
            let model = load_any(&ckpt)?;
            let data = SceneDataset::load(&data)?;
            let cam = data.manifest.cameras.get(camera).ok_or_else(|| {
                CoreError::Config(format!("camera {camera} out of range ({} cameras)", data.manifest.cameras.len()))
            })?;
            let img = model.render(frame, cam, RasterMode::Tiled)?;
            fs::write(&out, encode_ppm(img.image(), cam.width, cam.height))?;
        }
        Command::Eval { ckpt, data, split, out } => {
            let model = load_any(&ckpt)?;
            let data = SceneDataset::load(&data)?;
            let report = evaluate(&model, &data, Split::parse(&split)?)?;
            write_csv(fs::File::create(&out)?, &report.rows)?;
            println!("psnr {:.4}  ssim {:.4}", report.mean_psnr, report.mean_ssim);
        }
        Command::Inspect { input } => {
            let bytes = fs::read(&input)?;
            let rows = inspect(&bytes)?;
            println!("{:<24} {:>10} {:>7}", "section", "bytes", "share");
            for r in &rows {
                println!(
                    "{:<24} {:>10} {:>6.2}%",
                    r.name,
                    r.bytes,
                    100.0 * r.bytes as f64 / bytes.len() as f64
                );
            }
            println!("{:<24} {:>10}", "total", rows.iter().map(|r| r.bytes).sum::<u64>());
        }
        Command::RdSweep { data, lambdas, config, out, parallel } => {
            let cfg = load_config(config.as_deref())?;
            let data = SceneDataset::load(&data)?;
            let points = rd_sweep(&data, &lambdas, &cfg, Some(&out), parallel)?;
            for p in &points {
                let r = &p.row;
                match (r.size_bytes, r.psnr) {
                    (Some(s), Some(q)) => println!("lambda {:e}: {s} bytes, {q:.3} dB", r.lambda_e),
                    _ => println!("lambda {:e}: {}", r.lambda_e, r.status),
                }
            }
        }
        Command::Bench { ckpt, frames, repeats } => {
            let model = load_any(&ckpt)?;
            let times: Vec<f64> = (0..frames).map(|i| i as f64 / (frames.max(2) - 1) as f64).collect();
            let r = bench_deformation(&model, &times, repeats)?;
            println!("anchors {}  primitives {}  frames {}", r.anchors, r.primitives, r.frames);
            println!("coarse evals      anchor-shared {:>10}  per-gaussian {:>10}", r.coarse_evals, r.baseline_coarse_evals);
            println!("fine evals        {:>10}", r.fine_evals);
            println!(
                "coarse seconds    anchor-shared {:>10.6}  per-gaussian {:>10.6}  speedup {:.2}x",
                r.coarse_seconds,
                r.baseline_coarse_seconds,
                r.speedup()
            );
            println!("deformed frames/s {:.2}", deform_fps(&model, &times)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
