//! The `lppd` command line. Each subcommand is also callable as a `cmd_*`
//! function that writes the same files and returns what it computed.
//!
//! Exit codes: 0 ok, 1 usage, 2 data or format error, 3 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::decomposition::{fit, read_checkpoint, run_recurrence, write_checkpoint, FeatureImage, FitResult};
use crate::depth_map::{DepthUnits, MultiLayerDepthMap};
use crate::error::{Error, Result};
use crate::eval::{evaluate_maps, EvalReport};
use crate::gradcheck::{run_all, GradCheckReport, DEFAULT_TOLERANCE};
use crate::inference::{extract_layers, predict_image};
use crate::intensity::IntensityMixture;
use crate::losses::normalize_scale_invariant;
use crate::pixel_fit::fit_pixel;
use crate::synth::{
    default_eps_sep, raycast_multilayer, read_features, read_mld, read_tuples, render_features, sample_tuples, scene_overlapping_planes,
    write_features, write_mld, write_tuples, DepthTupleSet, Scene,
};

pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "lppd", version, about = "Multi-layer depth as a point process: synthesis, fitting, inference and evaluation")]
pub struct Cli {
    /// Worker threads; 1 runs everything serially.
    #[arg(long, global = true, env = "LPPD_THREADS", value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,
    /// TOML config file; defaults are used for anything it leaves out.
    #[arg(long, global = true, env = "LPPD_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ray-cast a scene and write ground truth, features and tuples.
    Synth {
        #[arg(long, env = "LPPD_OUT")]
        out: PathBuf,
    },
    /// Fit Laplace components directly to each pixel's ground truth.
    FitPixel {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, env = "LPPD_OUT")]
        out: PathBuf,
    },
    /// Train the recurrent decomposition on one feature image.
    FitNet {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, env = "LPPD_OUT")]
        out: PathBuf,
    },
    /// Predict a multi-layer depth map from trained parameters.
    Infer {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// `normalization.toml` from fit-net; output stays normalized without it.
        #[arg(long)]
        norm: Option<PathBuf>,
        #[arg(long, env = "LPPD_OUT")]
        out: PathBuf,
    },
    /// Score a predicted map against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        tuples: Option<PathBuf>,
        #[arg(long, env = "LPPD_OUT")]
        out: Option<PathBuf>,
    },
    /// Compare every analytic gradient with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 7, env = "LPPD_SEED")]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, env = "LPPD_OUT")]
        out: Option<PathBuf>,
    },
    /// Sample one pixel's intensity function on a grid.
    PlotIntensity {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        x: usize,
        #[arg(long)]
        y: usize,
        #[arg(long)]
        norm: Option<PathBuf>,
        #[arg(long, env = "LPPD_OUT")]
        out: PathBuf,
    },
}

/// Shift and scale that map raw depth to normalized depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub shift: f64,
    pub scale: f64,
}

impl Normalization {
    pub const IDENTITY: Self = Self { shift: 0.0, scale: 1.0 };

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        toml::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        Ok(fs::write(path, text)?)
    }
}

/// Raw maps are normalized jointly; normalized maps pass through.
fn normalized_gt(gt: &MultiLayerDepthMap) -> Result<(MultiLayerDepthMap, Normalization)> {
    match gt.units() {
        DepthUnits::Normalized => Ok((gt.clone(), Normalization::IDENTITY)),
        DepthUnits::Raw => {
            let n = normalize_scale_invariant(gt)?;
            Ok((n.map, Normalization { shift: n.shift, scale: n.scale }))
        }
    }
}

fn prepare_dir(out: &Path, cfg: &Config) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_ECHO), cfg.to_toml_string()?)?;
    Ok(())
}

fn create(path: PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub scene: Scene,
    /// As stored on disk, in single precision.
    pub gt: MultiLayerDepthMap,
    pub features: FeatureImage,
    pub tuples: DepthTupleSet,
}

impl SynthOutput {
    /// Pixel counts indexed by layer count.
    pub fn layer_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.gt.max_layers() + 1];
        (0..self.gt.len()).for_each(|p| hist[self.gt.layer_count(p)] += 1);
        hist
    }
}

/// Writes `scene.toml`, `gt.mld`, `features.fea` and `tuples.csv` into `out`.
pub fn cmd_synth(cfg: &Config, out: &Path) -> Result<SynthOutput> {
    let s = &cfg.synth;
    let scene = match &s.scene_file {
        Some(path) => Scene::load(path)?,
        None => scene_overlapping_planes(&s.overlap)?,
    };
    let gt = raycast_multilayer(&scene)?.map_depths(DepthUnits::Raw, |d| d as f32 as f64)?;
    let features = render_features(&scene, s.noise_sigma, s.noise_seed)?;
    let eps = s.eps_sep.unwrap_or_else(|| default_eps_sep(&gt));
    let tuples = sample_tuples(&gt, &s.tuples, eps, s.tuple_seed)?;

    prepare_dir(out, cfg)?;
    fs::write(out.join("scene.toml"), scene.to_toml_string()?)?;
    write_mld(&gt, out.join("gt.mld"))?;
    write_features(&features, out.join("features.fea"))?;
    write_tuples(&tuples, out.join("tuples.csv"))?;
    Ok(SynthOutput {
        scene,
        gt,
        features,
        tuples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelOutcome {
    pub x: usize,
    pub y: usize,
    pub seed: u64,
    /// Normalized ground truth.
    pub gt: Vec<f64>,
    pub mixture: IntensityMixture,
    pub layers: Vec<f64>,
    pub final_loss: f64,
    /// Every GT depth has an extracted layer within the tolerance.
    pub recovered: bool,
}

/// Fits every selected pixel from `pixel_run.seeds` initializations and writes
/// `mixtures.csv`, `layers.csv` and `trace.csv`.
pub fn cmd_fit_pixel(cfg: &Config, gt_path: &Path, out: &Path) -> Result<Vec<PixelOutcome>> {
    let (gt, _) = normalized_gt(&read_mld(gt_path)?)?;
    let run = &cfg.pixel_run;
    let w = gt.width();
    let pixels: Vec<(usize, usize)> = if run.pixels.is_empty() {
        (0..gt.len()).filter(|&p| gt.layer_count(p) > 0).map(|p| (p % w, p / w)).collect()
    } else {
        run.pixels.clone()
    };
    for &(x, y) in &pixels {
        if x >= w || y >= gt.height() {
            return Err(Error::invalid(format!("pixel ({x}, {y}) lies outside the {}x{} map", w, gt.height())));
        }
        if gt.at(x, y).is_empty() {
            return Err(Error::invalid(format!("pixel ({x}, {y}) has no ground truth")));
        }
    }
    let jobs: Vec<(usize, usize, u64)> = pixels
        .iter()
        .enumerate()
        .flat_map(|(i, &(x, y))| (0..run.seeds).map(move |k| (x, y, (i * run.seeds + k) as u64)))
        .collect();
    let results: Vec<(PixelOutcome, Vec<(usize, f64)>)> = jobs
        .par_iter()
        .map(|&(x, y, k)| {
            let gts = gt.at(x, y).to_vec();
            let seed = run.seed.wrapping_add(k);
            let fit = fit_pixel(&gts, &cfg.pixel_fit, seed)?;
            let layers = extract_layers(&fit.mixture, cfg.inference.suppression_radius, cfg.inference.min_peak_intensity)?;
            let recovered = gts.iter().all(|g| layers.iter().any(|l| (l - g).abs() <= run.tolerance));
            let last = fit.trace.len() - 1;
            let trace = fit
                .trace
                .iter()
                .enumerate()
                .filter(|&(i, _)| i == last || (run.trace_every > 0 && i % run.trace_every == 0))
                .map(|(i, &v)| (i, v))
                .collect();
            let outcome = PixelOutcome {
                x,
                y,
                seed,
                gt: gts,
                final_loss: fit.trace[last],
                mixture: fit.mixture,
                layers,
                recovered,
            };
            Ok((outcome, trace))
        })
        .collect::<Result<_>>()?;

    prepare_dir(out, cfg)?;
    let mut mix = create(out.join("mixtures.csv"))?;
    let mut lay = create(out.join("layers.csv"))?;
    let mut tr = create(out.join("trace.csv"))?;
    writeln!(mix, "x,y,seed,component,center,scale")?;
    writeln!(lay, "x,y,seed,gt,layers,recovered")?;
    writeln!(tr, "x,y,seed,step,loss")?;
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
    for (o, trace) in &results {
        for (j, c) in o.mixture.components().iter().enumerate() {
            writeln!(mix, "{},{},{},{j},{},{}", o.x, o.y, o.seed, c.center(), c.scale())?;
        }
        writeln!(lay, "{},{},{},{},{},{}", o.x, o.y, o.seed, join(&o.gt), join(&o.layers), o.recovered)?;
        for (step, v) in trace {
            writeln!(tr, "{},{},{},{step},{v}", o.x, o.y, o.seed)?;
        }
    }
    mix.flush()?;
    lay.flush()?;
    tr.flush()?;
    Ok(results.into_iter().map(|(o, _)| o).collect())
}

#[derive(Debug, Clone)]
pub struct FitNetOutput {
    pub result: FitResult,
    pub normalization: Normalization,
}

/// Trains on normalized ground truth; writes `params.ckpt`, `trace.csv` and
/// `normalization.toml`.
pub fn cmd_fit_net(cfg: &Config, features_path: &Path, gt_path: &Path, out: &Path) -> Result<FitNetOutput> {
    let features = read_features(features_path)?;
    let (gt, normalization) = normalized_gt(&read_mld(gt_path)?)?;
    let result = fit(&features, &gt, &cfg.fit)?;

    prepare_dir(out, cfg)?;
    write_checkpoint(&result.params, out.join("params.ckpt"))?;
    normalization.save(out.join("normalization.toml"))?;
    let mut tr = create(out.join("trace.csv"))?;
    writeln!(
        tr,
        "step,total,intensity,coverage,gradient_matching,learning_rate,grad_norm,eta_identity_error,degenerate_steps"
    )?;
    for e in &result.trace {
        let l = &e.loss;
        writeln!(
            tr,
            "{},{},{},{},{},{},{},{},{}",
            e.step, l.total, l.intensity, l.coverage, l.gradient_matching, e.learning_rate, e.grad_norm, e.eta_identity_error, e.degenerate_steps
        )?;
    }
    tr.flush()?;
    Ok(FitNetOutput { result, normalization })
}

fn load_norm(path: Option<&Path>) -> Result<Option<(f64, f64)>> {
    path.map(Normalization::load).transpose().map(|n| n.map(|n| (n.shift, n.scale)))
}

/// Runs the recurrence and extracts layers; writes `pred.mld`.
pub fn cmd_infer(cfg: &Config, params_path: &Path, features_path: &Path, norm_path: Option<&Path>, out: &Path) -> Result<MultiLayerDepthMap> {
    let params = read_checkpoint(params_path)?;
    let features = read_features(features_path)?;
    let norm = load_norm(norm_path)?;
    let rec = run_recurrence(&features, &params, &cfg.fit.recurrence_options())?;
    let pred = predict_image(&rec.mixture, norm, &cfg.inference)?;
    prepare_dir(out, cfg)?;
    write_mld(&pred, out.join("pred.mld"))?;
    // report what is on disk
    pred.map_depths(pred.units(), |d| d as f32 as f64)
}

/// Full metric report; with `out`, also writes `report.csv` and `report.txt`.
pub fn cmd_eval(cfg: &Config, pred_path: &Path, gt_path: &Path, tuples_path: Option<&Path>, out: Option<&Path>) -> Result<EvalReport> {
    let pred = read_mld(pred_path)?;
    let gt = read_mld(gt_path)?;
    let tuples = tuples_path.map(read_tuples).transpose()?;
    let report = evaluate_maps(&pred, &gt, tuples.as_ref(), cfg.eval.align)?;
    if let Some(out) = out {
        prepare_dir(out, cfg)?;
        fs::write(out.join("report.csv"), report.to_csv())?;
        fs::write(out.join("report.txt"), report.to_string())?;
    }
    Ok(report)
}

/// Runs every finite-difference suite. Failures are reported, not raised.
pub fn cmd_gradcheck(seed: u64, trials: usize, out: Option<&Path>) -> Result<Vec<GradCheckReport>> {
    let reports = run_all(seed, trials, DEFAULT_TOLERANCE)?;
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        let mut f = create(out.join("gradcheck.csv"))?;
        writeln!(f, "suite,instances,partials,max_rel_error,tolerance,rejected,passed")?;
        for r in &reports {
            writeln!(
                f,
                "{},{},{},{},{},{},{}",
                r.suite,
                r.instances,
                r.partials,
                r.max_rel_error,
                r.tolerance,
                r.rejected,
                r.passed()
            )?;
        }
        f.flush()?;
    }
    Ok(reports)
}

/// `(x, intensity)` on a uniform grid of normalized depth; writes `intensity.csv`,
/// with a raw `depth` column when a normalization is given.
pub fn cmd_plot_intensity(
    cfg: &Config,
    params_path: &Path,
    features_path: &Path,
    (x, y): (usize, usize),
    norm_path: Option<&Path>,
    out: &Path,
) -> Result<Vec<(f64, f64)>> {
    let params = read_checkpoint(params_path)?;
    let features = read_features(features_path)?;
    if x >= features.width || y >= features.height {
        return Err(Error::invalid(format!("pixel ({x}, {y}) lies outside the feature image")));
    }
    let norm = load_norm(norm_path)?;
    let rec = run_recurrence(&features, &params, &cfg.fit.recurrence_options())?;
    let m = rec.mixture.pixel_mixture(y * features.width + x)?;
    let p = &cfg.plot;
    if p.samples < 2 {
        return Err(Error::invalid("plot grid needs at least two samples"));
    }
    let comps = m.components();
    let reach = p.margin * comps.iter().map(|c| c.scale()).fold(0.0, f64::max);
    let lo = p.lo.unwrap_or_else(|| comps.iter().map(|c| c.center()).fold(f64::INFINITY, f64::min) - reach);
    let hi = p.hi.unwrap_or_else(|| comps.iter().map(|c| c.center()).fold(f64::NEG_INFINITY, f64::max) + reach);
    if !(lo < hi) {
        return Err(Error::invalid(format!("empty plot range [{lo}, {hi}]")));
    }
    let curve: Vec<(f64, f64)> = (0..p.samples)
        .map(|k| {
            let t = lo + (hi - lo) * k as f64 / (p.samples - 1) as f64;
            Ok((t, m.eval(t)?))
        })
        .collect::<Result<_>>()?;

    prepare_dir(out, cfg)?;
    let mut f = create(out.join("intensity.csv"))?;
    match norm {
        Some((t, s)) => {
            writeln!(f, "x,depth,intensity")?;
            for (v, i) in &curve {
                writeln!(f, "{v},{},{i}", v * s + t)?;
            }
        }
        None => {
            writeln!(f, "x,intensity")?;
            for (v, i) in &curve {
                writeln!(f, "{v},{i}")?;
            }
        }
    }
    f.flush()?;
    Ok(curve)
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        3
    } else {
        2
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let cfg = Config::load_or_default(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth { out } => {
            let s = cmd_synth(&cfg, out)?;
            let hist = s.layer_histogram();
            let regions: Vec<String> = hist.iter().enumerate().filter(|(_, &n)| n > 0).map(|(k, n)| format!("{k} layers: {n}")).collect();
            println!("{}x{} scene, {}", s.gt.width(), s.gt.height(), regions.join(", "));
            println!("{} tuples sampled, {} short", s.tuples.tuples.len(), s.tuples.shortfall);
        }
        Command::FitPixel { gt, out } => {
            let outcomes = cmd_fit_pixel(&cfg, gt, out)?;
            let ok = outcomes.iter().filter(|o| o.recovered).count();
            println!("{ok}/{} fits recovered every layer", outcomes.len());
        }
        Command::FitNet { features, gt, out } => {
            let r = cmd_fit_net(&cfg, features, gt, out)?;
            let t = &r.result.trace;
            println!("loss {:.6} -> {:.6} over {} steps", t[0].loss.total, r.result.final_loss().total, t.len() - 1);
            println!("max eta identity error {:.3e}", r.result.max_eta_identity_error());
        }
        Command::Infer { params, features, norm, out } => {
            let pred = cmd_infer(&cfg, params, features, norm.as_deref(), out)?;
            println!("predicted {} depths over {} pixels", pred.total_depths(), pred.len());
        }
        Command::Eval { pred, gt, tuples, out } => {
            print!("{}", cmd_eval(&cfg, pred, gt, tuples.as_deref(), out.as_deref())?);
        }
        Command::Gradcheck { seed, trials, out } => {
            let reports = cmd_gradcheck(*seed, *trials, out.as_deref())?;
            let mut text = String::new();
            for r in &reports {
                let _ = writeln!(text, "{r}");
            }
            print!("{text}");
            if !reports.iter().all(GradCheckReport::passed) {
                let err = Error::GradientCheck("analytic and numeric gradients disagree".into());
                eprintln!("error: {err}");
                return Ok(exit_code(&err));
            }
        }
        Command::PlotIntensity { params, features, x, y, norm, out } => {
            let curve = cmd_plot_intensity(&cfg, params, features, (*x, *y), norm.as_deref(), out)?;
            println!("{} samples written", curve.len());
        }
    }
    Ok(0)
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let go = || {
        dispatch(&cli).unwrap_or_else(|e| {
            eprintln!("error: {e}");
            exit_code(&e)
        })
    };
    match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n as usize).build() {
            Ok(pool) => pool.install(go),
            Err(e) => {
                eprintln!("error: {e}");
                2
            }
        },
        None => go(),
    }
}
