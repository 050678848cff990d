use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use headsplat::bench::{run_agg_bench, run_c2f_bench, run_raster_bench, AggBenchSpec, CountingAlloc, Strategy};
use headsplat::imageio::Image;
use headsplat::pipeline::config::parse_key_values;
use headsplat::pipeline::{
    check_reconstruction, evaluate_reconstruction, load_checkpoint, reconstruct, reconstruct_from_features,
    run_grad_suite, save_checkpoint, MetricsReport, ModelConfig, ModelWeights, Reconstruction, Template,
    TrainConfig, Trainer, ViewMetrics,
};
use headsplat::raster::{rasterize, Camera, GaussianCloud};
use headsplat::synthdata::{focal_from_fov, load_sample, render_dataset, validate_manifest, CameraMode, DatasetManifest, DatasetSpec, MANIFEST_FILE};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

const CHECKPOINT_FILE: &str = "checkpoint.hsb";

#[derive(Parser)]
#[command(name = "headsplat", version, about = "Feed-forward Gaussian head reconstruction from a single image")]
struct Cli {
    /// Seed for every random draw the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Overrides for the command's main settings, as `key = value` lines or
    /// a JSON object. Nested fields use dotted keys (`scene.blob_count`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic multiview dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scenes: Option<usize>,
        /// Training views per scene.
        #[arg(long)]
        views: Option<usize>,
        /// Extra evaluation-only views per scene.
        #[arg(long)]
        held_out: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        /// front_range, equatorial8 or random360.
        #[arg(long)]
        camera_mode: Option<String>,
    },
    /// Train on one sample of a dataset and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// Starting model config when --config is not given.
        #[arg(long, default_value = "toy")]
        preset: String,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        warmup: Option<usize>,
        /// Held-out evaluation interval in steps; 0 evaluates only at the end.
        #[arg(long, default_value_t = 50)]
        eval_every: usize,
        /// Stop once the held-out PSNR reaches this value.
        #[arg(long)]
        target_psnr: Option<f64>,
    },
    /// Reconstruct Gaussians from one image and write them as JSON.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct and render one novel view.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        yaw: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        pitch: f64,
        #[command(flatten)]
        lens: Lens,
    },
    /// Reconstruct once and render a turntable on the equator.
    Orbit {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[command(flatten)]
        lens: Lens,
    },
    /// Finite-difference gradient suite.
    GradCheck {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregation strategies on the synthetic ray-marching oracle.
    BenchAgg {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tiled versus naive rasterizer, plus the point-branch comparison.
    BenchRaster {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1000,10000")]
        counts: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "64,256")]
        sizes: Vec<usize>,
        /// Model preset for the coarse-to-fine comparison, or `none`.
        #[arg(long, default_value = "toy")]
        point_branch: String,
    },
    /// PSNR and SSIM between predicted and target PNGs, paired in order.
    Metrics {
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        target: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check that a dataset's files match its manifest.
    ValidateManifest {
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(clap::Args)]
struct Lens {
    #[arg(long, default_value_t = 2.7)]
    radius: f64,
    /// Vertical field of view in degrees.
    #[arg(long, default_value_t = 18.83)]
    fov: f64,
    /// Output resolution; defaults to the model's input size.
    #[arg(long)]
    size: Option<usize>,
}

impl Lens {
    fn camera(&self, yaw: f64, pitch: f64, default_size: usize) -> Camera {
        let size = self.size.unwrap_or(default_size);
        Camera::orbit(yaw, pitch, self.radius, focal_from_fov(self.fov, size), size, size)
    }
}

/// A failed command: the stage it failed in and why.
struct Failure {
    stage: &'static str,
    message: String,
}

trait At<T> {
    fn at(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T, E: Display> At<T> for Result<T, E> {
    fn at(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            stage,
            message: e.to_string(),
        })
    }
}

fn fail<T>(stage: &'static str, message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure {
        stage,
        message: message.into(),
    })
}

/// Applies `key = value` or JSON overrides from `path` on top of `base`.
fn with_overrides<T: Serialize + DeserializeOwned>(base: T, path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(base);
    };
    let text = fs::read_to_string(path).at("config")?;
    let patch: Vec<(String, Value)> = if text.trim_start().starts_with('{') {
        match serde_json::from_str::<Value>(&text).at("config")? {
            Value::Object(m) => m.into_iter().collect(),
            _ => return fail("config", "JSON config must be an object"),
        }
    } else {
        parse_key_values(&text, path)
            .at("config")?
            .into_iter()
            .map(|(k, v, _)| {
                let value = serde_json::from_str(&v).unwrap_or(Value::String(v));
                (k, value)
            })
            .collect()
    };
    let mut value = serde_json::to_value(&base).at("config")?;
    for (key, v) in patch {
        let mut slot = &mut value;
        for part in key.split('.') {
            slot = match slot.get_mut(part) {
                Some(s) => s,
                None => return fail("config", format!("unknown config key `{key}`")),
            };
        }
        *slot = v;
    }
    serde_json::from_value(value).at("config")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).at("output")?;
    fs::write(path, text + "\n").at("output")
}

/// Prints a report and, with `--out`, also writes it there.
fn emit(out: Option<&Path>, file: &str, value: &impl Serialize) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(value).at("output")?);
    if let Some(dir) = out {
        fs::create_dir_all(dir).at("output")?;
        write_json(&dir.join(file), value)?;
    }
    Ok(())
}

fn gen_data(cli: &Cli, args: &Command) -> Result<(), Failure> {
    let Command::GenData {
        out,
        scenes,
        views,
        held_out,
        size,
        camera_mode,
    } = args
    else {
        unreachable!()
    };
    let mut spec = with_overrides(DatasetSpec::default(), cli.config.as_deref())?;
    spec.seed = cli.seed;
    if let Some(n) = scenes {
        spec.samples = *n;
    }
    if let Some(n) = views {
        spec.views = *n;
    }
    if let Some(n) = held_out {
        spec.held_out = *n;
    }
    if let Some(n) = size {
        spec.image_size = *n;
    }
    if let Some(mode) = camera_mode {
        spec.cameras.mode = serde_json::from_value::<CameraMode>(Value::String(mode.clone())).at("arguments")?;
    }
    let manifest = render_dataset(&spec, out).at("gen-data")?;
    validate_manifest(&manifest, out).at("validate")?;
    let views: usize = manifest.samples.iter().map(|s| s.views.len()).sum();
    eprintln!("wrote {} scenes, {views} views to {}", manifest.samples.len(), out.display());
    Ok(())
}

fn load_manifest(data: &Path) -> Result<DatasetManifest, Failure> {
    DatasetManifest::load(&data.join(MANIFEST_FILE)).at("manifest")
}

fn train(cli: &Cli, args: &Command) -> Result<(), Failure> {
    let Command::Train {
        data,
        out,
        sample,
        preset,
        steps,
        lr,
        warmup,
        eval_every,
        target_psnr,
    } = args
    else {
        unreachable!()
    };
    let cfg = match &cli.config {
        Some(path) => ModelConfig::load(path).at("config")?,
        None => ModelConfig::preset(preset).at("config")?,
    };
    let mut tc = TrainConfig::overfit();
    if let Some(n) = steps {
        tc.total_steps = *n;
        tc.warmup_steps = tc.warmup_steps.min(*n);
    }
    if let Some(v) = lr {
        tc.base_lr = *v;
    }
    if let Some(n) = warmup {
        tc.warmup_steps = *n;
    }
    let manifest = load_manifest(data)?;
    let template = Template::build(&cfg).at("template")?;
    let weights = ModelWeights::<f32>::init(&cfg, cli.seed).at("init")?;
    let (sample, held_out) = load_sample(&manifest, data, *sample, &weights).at("load data")?;
    let eval_views: Vec<(String, _)> = if held_out.is_empty() {
        sample.views.iter().enumerate().map(|(i, v)| (format!("train_{i}"), v)).collect()
    } else {
        held_out.iter().enumerate().map(|(i, v)| (format!("held_out_{i}"), v)).collect()
    };
    fs::create_dir_all(out).at("output")?;

    let total = tc.total_steps;
    let bg = tc.background;
    let mut trainer = Trainer::new(weights, template, tc).at("train")?;
    let mut losses = Vec::with_capacity(total);
    let mut evals = Vec::new();
    let start = Instant::now();
    let evaluate = |t: &Trainer<f32>| -> Result<MetricsReport, Failure> {
        let rec = reconstruct_from_features(&sample.features, &t.weights, &t.template).at("evaluate")?;
        evaluate_reconstruction(&rec, &eval_views, &bg).at("evaluate")
    };
    let mut report = None;
    for step in 0..total {
        let r = trainer.train_step(&sample).at("train")?;
        losses.push(json!({
            "step": r.step,
            "lr": r.lr,
            "total": r.terms.total,
            "gaussian_rgb": r.terms.gaussian_rgb,
            "triplane_rgb": r.terms.triplane_rgb,
            "mask": r.terms.mask,
        }));
        let last = step + 1 == total;
        if last || (*eval_every > 0 && (step + 1) % eval_every == 0) {
            let m = evaluate(&trainer)?;
            eprintln!(
                "step {:>5}  loss {:.5}  held-out PSNR {:.2} dB  {:.0}s",
                step + 1,
                r.terms.total,
                m.mean_psnr,
                start.elapsed().as_secs_f64()
            );
            evals.push(json!({ "step": step + 1, "psnr": m.mean_psnr, "ssim": m.mean_ssim }));
            let done = target_psnr.is_some_and(|t| m.mean_psnr >= t);
            report = Some(m);
            if done {
                break;
            }
        }
    }
    let report = match report {
        Some(r) => r,
        None => evaluate(&trainer)?,
    };
    save_checkpoint(&trainer.weights, &out.join(CHECKPOINT_FILE)).at("checkpoint")?;
    write_json(
        &out.join("train_log.json"),
        &json!({ "seed": cli.seed, "steps": trainer.step, "losses": losses, "evaluations": evals }),
    )?;
    write_json(&out.join("metrics.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report).at("output")?);
    Ok(())
}

fn load_model(checkpoint: &Path, image: &Path) -> Result<(ModelWeights<f32>, Template, Reconstruction<f32>), Failure> {
    let weights = load_checkpoint::<f32>(checkpoint).at("checkpoint")?;
    let template = Template::build(&weights.config).at("template")?;
    let img = Image::load(image, false).at("input image")?;
    let rec = reconstruct(&img, &weights, &template).at("reconstruct")?;
    check_reconstruction(&rec, &weights.config, &template).at("reconstruct")?;
    Ok((weights, template, rec))
}

fn cloud_json(c: &GaussianCloud<f32>) -> Value {
    json!({
        "count": c.len(),
        "positions": c.positions.data(),
        "colors": c.colors.data(),
        "opacity": c.opacity.data(),
        "scales": c.scales.data(),
        "rotations": c.rotations.data(),
    })
}

fn reconstruct_cmd(args: &Command) -> Result<(), Failure> {
    let Command::Reconstruct { checkpoint, image, out } = args else {
        unreachable!()
    };
    let (_, _, rec) = load_model(checkpoint, image)?;
    fs::create_dir_all(out).at("output")?;
    write_json(
        &out.join("reconstruction.json"),
        &json!({ "coarse": cloud_json(&rec.coarse), "dense": cloud_json(&rec.dense) }),
    )?;
    eprintln!("{} coarse and {} dense Gaussians", rec.coarse.len(), rec.dense.len());
    Ok(())
}

fn save_png(image: &Image, path: &Path) -> Result<(), Failure> {
    image.save(path).at("output")
}

fn render_cmd(args: &Command) -> Result<(), Failure> {
    let Command::Render {
        checkpoint,
        image,
        out,
        yaw,
        pitch,
        lens,
    } = args
    else {
        unreachable!()
    };
    let (weights, _, rec) = load_model(checkpoint, image)?;
    let cam = lens.camera(*yaw, *pitch, weights.config.image_size);
    fs::create_dir_all(out).at("output")?;
    let dense = rasterize(&rec.dense, &cam, &[0.0; 3]).at("render")?;
    save_png(&dense.color_image(), &out.join("dense.png"))?;
    save_png(&dense.alpha_image(), &out.join("alpha.png"))?;
    let coarse = rasterize(&rec.coarse, &cam, &[0.0; 3]).at("render")?;
    save_png(&coarse.color_image(), &out.join("coarse.png"))?;
    if weights.config.triplane_enabled {
        let tri = rec.render_triplane_branch(&weights, &cam).at("render")?;
        save_png(&Image::from_tensor(&tri, cam.width, cam.height).at("render")?, &out.join("triplane.png"))?;
    }
    Ok(())
}

fn orbit_cmd(args: &Command) -> Result<(), Failure> {
    let Command::Orbit {
        checkpoint,
        image,
        out,
        frames,
        lens,
    } = args
    else {
        unreachable!()
    };
    if *frames == 0 {
        return fail("arguments", "--frames must be at least 1");
    }
    let (weights, _, rec) = load_model(checkpoint, image)?;
    fs::create_dir_all(out).at("output")?;
    for i in 0..*frames {
        let yaw = 360.0 * i as f64 / *frames as f64;
        let cam = lens.camera(yaw, 0.0, weights.config.image_size);
        let frame = rasterize(&rec.dense, &cam, &[0.0; 3]).at("render")?;
        save_png(&frame.color_image(), &out.join(format!("frame_{i:03}.png")))?;
    }
    Ok(())
}

fn grad_check(cli: &Cli, out: Option<&Path>) -> Result<(), Failure> {
    let report = run_grad_suite(cli.seed).at("grad-check")?;
    emit(out, "grad_check.json", &report)?;
    for c in report.failures() {
        eprintln!("{}: relative error {:.3e} > {:.0e}", c.name, c.max_relative_error, c.tolerance);
    }
    if !report.passed() {
        return fail("grad-check", "gradient checks failed");
    }
    Ok(())
}

fn bench_agg(cli: &Cli, out: Option<&Path>) -> Result<(), Failure> {
    let mut spec = with_overrides(AggBenchSpec::default(), cli.config.as_deref())?;
    spec.seed = cli.seed;
    let report = run_agg_bench(&spec, &Strategy::ablation()).at("bench-agg")?;
    emit(out, "bench_agg.json", &report)
}

fn bench_raster(cli: &Cli, args: &Command) -> Result<(), Failure> {
    let Command::BenchRaster {
        out,
        counts,
        sizes,
        point_branch,
    } = args
    else {
        unreachable!()
    };
    let raster = run_raster_bench(counts, sizes, cli.seed).at("bench-raster")?;
    let c2f = match point_branch.as_str() {
        "none" => None,
        name => {
            let cfg = ModelConfig::preset(name).at("arguments")?;
            Some(run_c2f_bench(&cfg, cli.seed, 3).at("bench-raster")?)
        }
    };
    emit(
        out.as_deref(),
        "bench_raster.json",
        &json!({ "rasterizer": raster, "coarse_to_fine": c2f }),
    )
}

fn metrics_cmd(args: &Command) -> Result<(), Failure> {
    let Command::Metrics { pred, target, out } = args else {
        unreachable!()
    };
    if pred.len() != target.len() {
        return fail("arguments", format!("{} predictions but {} targets", pred.len(), target.len()));
    }
    let mut views = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let a = Image::load(p, false).at("load images")?;
        let b = Image::load(t, false).at("load images")?;
        views.push(ViewMetrics {
            view: p.display().to_string(),
            psnr: headsplat::pipeline::psnr(&a, &b).at("metrics")?,
            ssim: headsplat::pipeline::ssim(&a, &b).at("metrics")?,
        });
    }
    emit(out.as_deref(), "metrics.json", &MetricsReport::from_views(views))
}

fn validate_cmd(data: &Path) -> Result<(), Failure> {
    let manifest = load_manifest(data)?;
    validate_manifest(&manifest, data).at("validate")?;
    let views: usize = manifest.samples.iter().map(|s| s.views.len()).sum();
    println!("ok: {} samples, {views} views", manifest.samples.len());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        c @ Command::GenData { .. } => gen_data(cli, c),
        c @ Command::Train { .. } => train(cli, c),
        c @ Command::Reconstruct { .. } => reconstruct_cmd(c),
        c @ Command::Render { .. } => render_cmd(c),
        c @ Command::Orbit { .. } => orbit_cmd(c),
        Command::GradCheck { out } => grad_check(cli, out.as_deref()),
        Command::BenchAgg { out } => bench_agg(cli, out.as_deref()),
        c @ Command::BenchRaster { .. } => bench_raster(cli, c),
        c @ Command::Metrics { .. } => metrics_cmd(c),
        Command::ValidateManifest { data } => validate_cmd(data),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error [{}]: {}", f.stage, f.message);
            ExitCode::from(2)
        }
    }
}
