use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vmfuse::io::{
    load_dataset, load_renderable, load_views, read_cameras, read_rgb_png, save_checkpoint, write_dataset,
    write_depth_png, write_rgb_png, RenderMeta, View, CAMERAS_FILE,
};
use vmfuse::render::render_view;
use vmfuse::synth::{add_depth_noise, raycast_view, toy_rig, toy_scene, AnalyticScene, MetricsReport, TOY_OFFSETS};
use vmfuse::train::{train_with, LogRow, TrainConfig, TrainEvent};
use vmfuse::{DepthMap, FieldModel, NdcFrame, RenderOptions};

use crate::args::{EvalArgs, RenderArgs, SynthArgs, TrainArgs};
use crate::manifest::{content_hash, write_json, RunManifest};

pub const CHECKPOINT: &str = "model.dgpf";
pub const METRICS: &str = "metrics.csv";
pub const MANIFEST: &str = "manifest.json";

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    let Some(path) = path else {
        return Ok(TrainConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn save_with_meta(
    dir: &Path,
    name: &str,
    model: &FieldModel<f32>,
    frame: &NdcFrame,
    render: RenderOptions,
) -> Result<Vec<PathBuf>> {
    let path = dir.join(name);
    save_checkpoint(model, &path)?;
    let meta_path = RenderMeta::path_for(&path);
    RenderMeta::new(model, frame, render).save(&meta_path)?;
    Ok(vec![PathBuf::from(name), meta_path.strip_prefix(dir)?.to_path_buf()])
}

#[derive(Serialize)]
struct MetricsRecord {
    iteration: usize,
    loss_total: f64,
    loss_rgb: f64,
    loss_depth: f64,
    train_psnr: f64,
    grid_dims: String,
    wall_ms: u64,
}

fn write_metrics(path: &Path, rows: &[LogRow], reproducible: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        let [i, j, k] = r.grid_dims;
        w.serialize(MetricsRecord {
            iteration: r.iteration,
            loss_total: r.loss_total,
            loss_rgb: r.loss_rgb,
            loss_depth: r.loss_depth,
            train_psnr: r.train_psnr,
            grid_dims: format!("{i}x{j}x{k}"),
            wall_ms: if reproducible { 0 } else { r.wall_ms },
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Files a dataset directory consists of, as `(label, path)`.
fn dataset_files(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let mut files = vec![(PathBuf::from(CAMERAS_FILE), dir.join(CAMERAS_FILE))];
    for (rec, _) in read_cameras(&dir.join(CAMERAS_FILE))? {
        for f in [rec.image, rec.depth].into_iter().flatten() {
            files.push((PathBuf::from(&f), dir.join(&f)));
        }
    }
    Ok(files)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    config.validate()?;
    let dataset = load_dataset(&a.data, &a.views)?;
    create_out(&a.out)?;

    let mut artifacts = Vec::new();
    let mut failure = None;
    let outcome = train_with(&dataset, &config, &mut |event| match event {
        TrainEvent::Milestone {
            iteration,
            model,
            frame,
            render,
        } => {
            if failure.is_none() {
                match save_with_meta(&a.out, &format!("model_it{iteration:06}.dgpf"), model, frame, *render) {
                    Ok(paths) => artifacts.extend(paths),
                    Err(e) => failure = Some(e),
                }
            }
        }
        TrainEvent::Log(row) => eprintln!(
            "iter {:>6}  loss {:.6}  psnr {:.2}  grid {:?}",
            row.iteration, row.loss_total, row.train_psnr, row.grid_dims
        ),
        TrainEvent::Step { .. } => {}
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    artifacts.extend(save_with_meta(&a.out, CHECKPOINT, &outcome.model, &outcome.frame, outcome.render)?);
    write_metrics(&a.out.join(METRICS), &outcome.log, a.reproducible)?;
    artifacts.push(PathBuf::from(METRICS));
    artifacts.push(PathBuf::from(MANIFEST));

    let mut inputs = dataset_files(&a.data)?;
    if let Some(cfg) = &a.config {
        inputs.push((PathBuf::from("config"), cfg.clone()));
    }
    let (input_hash, inputs) = content_hash(&inputs)?;
    let manifest = RunManifest {
        seed: config.seed,
        config,
        train_views: a.views.clone(),
        checkpoint: PathBuf::from(CHECKPOINT),
        metrics: PathBuf::from(METRICS),
        artifacts,
        input_hash,
        inputs,
    };
    write_json(&a.out.join(MANIFEST), &manifest)?;
    eprintln!("wrote {}", a.out.join(CHECKPOINT).display());
    Ok(())
}

#[derive(Serialize)]
struct DepthSidecar {
    /// Distance along the normalized NDC ray per raw unit.
    scale: f64,
    quantity: &'static str,
}

fn write_depth(dir: &Path, name: &str, width: usize, height: usize, depth: &[f64]) -> Result<Vec<PathBuf>> {
    let max = depth.iter().cloned().fold(0.0, f64::max);
    let scale = if max > 0.0 { max / 65535.0 } else { 1.0 };
    let map = DepthMap::new(width, height, depth.to_vec(), depth.iter().map(|d| *d > 0.0).collect())?;
    let png = format!("{name}.png");
    let json = format!("{name}.json");
    write_depth_png(&dir.join(&png), &map, scale)?;
    write_json(
        &dir.join(&json),
        &DepthSidecar {
            scale,
            quantity: "expected distance along the NDC ray",
        },
    )?;
    Ok(vec![PathBuf::from(png), PathBuf::from(json)])
}

pub fn render(a: RenderArgs) -> Result<()> {
    let (model, meta) = load_renderable(&a.checkpoint)?;
    let frame = meta.frame()?;
    let poses = read_cameras(&a.poses)?;
    create_out(&a.out)?;
    let mut written = Vec::new();
    for (i, (_, cam)) in poses.iter().enumerate() {
        let (img, depth) = render_view(&model, &frame, cam, &meta.render)?;
        let name = format!("render_{i:03}.png");
        write_rgb_png(&a.out.join(&name), &img)?;
        written.push(PathBuf::from(name));
        if a.depth {
            written.extend(write_depth(&a.out, &format!("depth_{i:03}"), img.width, img.height, &depth)?);
        }
    }
    write_json(&a.out.join("renders.json"), &written)?;
    eprintln!("rendered {} views into {}", poses.len(), a.out.display());
    Ok(())
}

fn write_report(out: &Path, report: &MetricsReport) -> Result<()> {
    write_json(&out.join("metrics.json"), report)?;
    let mut w = csv::Writer::from_path(out.join("metrics.csv"))?;
    w.write_record(["view", "psnr", "ssim"])?;
    for v in &report.views {
        let psnr = v.psnr.map_or("inf".to_string(), |p| p.to_string());
        w.write_record([v.view.to_string(), psnr, v.ssim.to_string()])?;
    }
    w.flush()?;
    println!("{}", serde_json::to_string_pretty(report)?);
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    create_out(&a.out)?;
    if let (Some(img), Some(reference)) = (&a.image, &a.reference) {
        let (x, y) = (read_rgb_png(img)?, read_rgb_png(reference)?);
        let report = MetricsReport::from_pairs([(0, &x, &y)])?;
        return write_report(&a.out, &report);
    }
    let (Some(ckpt), Some(data)) = (&a.checkpoint, &a.data) else {
        bail!("eval needs --checkpoint with --data, or --image with --reference");
    };
    let (model, meta) = load_renderable(ckpt)?;
    let frame = meta.frame()?;
    let views = load_views(data)?;
    let indices: Vec<usize> = if a.views.is_empty() {
        (0..views.len()).collect()
    } else {
        a.views.clone()
    };
    let mut rendered = Vec::with_capacity(indices.len());
    for &v in &indices {
        let view = views
            .get(v)
            .with_context(|| format!("view {v} out of range ({} views)", views.len()))?;
        let (img, _) = render_view(&model, &frame, &view.camera, &meta.render)?;
        write_rgb_png(&a.out.join(format!("eval_{v:03}.png")), &img)?;
        rendered.push((v, img));
    }
    let report = MetricsReport::from_pairs(rendered.iter().map(|(v, img)| (*v, img, &views[*v].image)))?;
    write_report(&a.out, &report)
}

/// Raw depth unit that spans the deepest valid value with headroom.
fn depth_scale_for(views: &[View]) -> f64 {
    let max = views
        .iter()
        .filter_map(|v| v.depth.valid_range())
        .map(|r| r.1)
        .fold(0.0, f64::max);
    if max > 0.0 {
        max / 60_000.0
    } else {
        1e-3
    }
}

pub fn synth(a: SynthArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.depth_noise) {
        bail!("--depth-noise must lie in [0, 1], got {}", a.depth_noise);
    }
    let scene: AnalyticScene = match &a.scene {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => toy_scene(),
    };
    scene.validate()?;
    let cameras = match &a.cameras {
        Some(p) => read_cameras(p)?.into_iter().map(|(_, c)| c).collect(),
        None => toy_rig(&TOY_OFFSETS, a.size, a.size, 60.0 * a.size as f64 / 64.0),
    };
    if cameras.is_empty() {
        bail!("no cameras to render");
    }
    let mut views = Vec::with_capacity(cameras.len());
    for (i, camera) in cameras.into_iter().enumerate() {
        let (image, mut depth) = raycast_view(&scene, &camera);
        if a.depth_noise > 0.0 && (a.noise_views.is_empty() || a.noise_views.contains(&i)) {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(i as u64));
            depth = add_depth_noise(&depth, a.depth_noise, &mut rng)?;
        }
        views.push(View { camera, image, depth });
    }
    create_out(&a.out)?;
    write_dataset(&a.out, &views, depth_scale_for(&views))?;
    write_json(&a.out.join("scene.json"), &scene)?;
    eprintln!("wrote {} views to {}", views.len(), a.out.display());
    Ok(())
}
