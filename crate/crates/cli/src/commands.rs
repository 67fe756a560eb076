use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use scene_informer::geometry::{build_anchor_set, shadow_polygon, Footprint, RegimeMode};
use scene_informer::informer::{parameter_count, AnchorPrediction, ModelConfig};
use scene_informer::numerics::Checkpoint;
use scene_informer::scene::{featurize, prepare_scene, read_scenes, write_scenes, AnchorSource, RigidTransform, Scene, Vec2};
use scene_informer::synth::{generate_dataset, kind_histogram};
use scene_informer::train::{
    build_samples, reports_to_csv, reports_to_text, sweep, ConstantVelocity, LogRecord, MetricReport, ModelPredictor,
    OccupancyPrior, SampleSpec, TrainConfig, Trainer,
};
use scene_informer::{Error, Result, TOOL_VERSION};

use crate::config::{load_toml, resolve_templates, GenerateConfig};
use crate::{AnnotateArgs, EvalArgs, GenerateArgs, InferArgs, ParamsArgs, TrainArgs};

/// Reference parameter count of the full-size model.
const REFERENCE_PARAMS: f64 = 11.3e6;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::NonFiniteLoss { .. } | Error::Shape { .. } | Error::NonScalarLoss(_) => 1,
        Error::SamplingExhausted { .. } => 1,
        _ => 2,
    }
}

/// Provenance written next to files whose own format has no room for it.
fn write_meta(path: &Path, command: &str, config: &impl Serialize) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let meta = path.with_file_name(format!("{name}.meta.json"));
    let value = json!({ "tool_version": TOOL_VERSION, "command": command, "config": config });
    fs::write(meta, serde_json::to_string_pretty(&value)? + "\n")?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn sorted_scenes(path: &Path) -> Result<Vec<Scene>> {
    let mut scenes = read_scenes(path)?;
    scenes.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    Ok(scenes)
}

fn check_horizons(scenes: &[Scene], model: &ModelConfig, what: &Path) -> Result<()> {
    if let Some(s) = scenes.iter().find(|s| s.history != model.history || s.future != model.future) {
        return Err(Error::Config(format!(
            "{}: scene `{}` has H={} P={}, model expects H={} P={}",
            what.display(),
            s.scene_id,
            s.history,
            s.future,
            model.history,
            model.future
        )));
    }
    Ok(())
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let mut cfg: GenerateConfig = match &a.config {
        Some(p) => load_toml(p)?,
        None => GenerateConfig::default(),
    };
    if let Some(t) = &a.template {
        cfg.templates = resolve_templates(t)?;
    }
    if let Some(c) = a.count {
        cfg.count = c;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    for t in &cfg.templates {
        t.validate()?;
    }
    let scenes = generate_dataset(&cfg.templates, cfg.seed..cfg.seed + cfg.count as u64)?;
    write_scenes(&a.out, &scenes)?;
    write_meta(&a.out, "generate", &json!({ "args": a, "resolved": cfg }))?;

    let n = scenes.len().max(1) as f64;
    let agents: usize = scenes.iter().map(|s| s.agents.len()).sum();
    let polylines: usize = scenes.iter().map(|s| s.map.len()).sum();
    println!("wrote {} scenes to {}", scenes.len(), a.out.display());
    println!("agents per scene: {:.2}  polylines per scene: {:.2}", agents as f64 / n, polylines as f64 / n);
    for (kind, count) in kind_histogram(&scenes) {
        println!("  {kind:?}: {count}");
    }
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => load_toml(p)?,
        None => TrainConfig::default(),
    };
    if let Some(p) = &a.preset {
        cfg.model = ModelConfig::preset(p)?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.steps {
        cfg.max_steps = Some(s);
    }
    if let Some(lr) = a.lr {
        cfg.optimizer.base_lr = lr;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut trainer = match &a.resume {
        Some(p) => {
            let mut t = Trainer::from_checkpoint(&Checkpoint::load(p)?)?;
            if let Some(e) = a.epochs {
                t.config.epochs = e;
            }
            if let Some(s) = a.steps {
                t.config.max_steps = Some(s);
            }
            t
        }
        None => Trainer::new(train_config(a)?)?,
    };
    let cfg = trainer.config.clone();
    let scenes = sorted_scenes(&a.data)?;
    if scenes.is_empty() {
        return Err(Error::Config(format!("{}: no training scenes", a.data.display())));
    }
    check_horizons(&scenes, &cfg.model, &a.data)?;
    let spec = SampleSpec { regime: RegimeMode::SingleOccluder, occlusion_anchors: cfg.occlusion_anchors, seed: cfg.seed };
    let (train, skipped) = build_samples(&scenes, &spec)?;
    if !skipped.is_empty() {
        eprintln!("skipped {} scenes without a shadow-casting agent", skipped.len());
    }
    if train.is_empty() {
        return Err(Error::Config("no usable training scenes".into()));
    }
    let val = match &a.val {
        Some(p) => {
            let v = sorted_scenes(p)?;
            check_horizons(&v, &cfg.model, p)?;
            build_samples(&v, &spec)?.0
        }
        None => Vec::new(),
    };

    fs::create_dir_all(&a.out)?;
    let log_path = a.out.join("train_log.jsonl");
    write_meta(&log_path, "train", &json!({ "args": a, "resolved": cfg }))?;
    let mut log = std::io::BufWriter::new(if a.resume.is_some() {
        fs::OpenOptions::new().create(true).append(true).open(&log_path)?
    } else {
        fs::File::create(&log_path)?
    });
    let total = cfg.total_steps(train.len());
    println!(
        "training on {} samples ({} val), {} steps, {} parameters",
        train.len(),
        val.len(),
        total,
        trainer.store.num_scalars()
    );
    let out = a.out.clone();
    trainer.fit(
        &train,
        &val,
        |rec| {
            serde_json::to_writer(&mut log, rec)?;
            writeln!(log)?;
            match rec {
                LogRecord::Step { step, lr, loss, .. } if step % 50 == 0 || step + 1 == total => {
                    println!("step {step:>6} lr {lr:.2e} loss {:.4} (nll {:.4} ce {:.4} bce {:.4})", loss.total, loss.nll_traj, loss.ce_mode, loss.bce_occ);
                }
                LogRecord::Validation { epoch, report, .. } => print!("epoch {epoch}\n{}", reports_to_text(std::slice::from_ref(report))),
                _ => {}
            }
            Ok(())
        },
        |t, epoch| t.checkpoint()?.save(&out.join(format!("epoch_{epoch:03}.ckpt"))),
    )?;
    log.flush()?;
    let final_path = a.out.join("final.ckpt");
    trainer.checkpoint()?.save(&final_path)?;
    println!("wrote {}", final_path.display());
    Ok(())
}

fn load_trainer(path: &Path) -> Result<Trainer> {
    Trainer::from_checkpoint(&Checkpoint::load(path)?)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    if a.sweep.is_empty() {
        return Err(Error::Config("--sweep needs at least one point".into()));
    }
    let trainer = load_trainer(&a.ckpt)?;
    let cfg = &trainer.config;
    let threshold = a.threshold.unwrap_or(cfg.threshold);
    let n_anchors = a.n_anchors.unwrap_or(cfg.occlusion_anchors);
    let scenes = sorted_scenes(&a.data)?;
    check_horizons(&scenes, &cfg.model, &a.data)?;
    let model = ModelPredictor { model: &trainer.model, store: &trainer.store };
    let reports = sweep(&model, &scenes, &a.sweep, n_anchors, a.seed, threshold)?;

    fs::create_dir_all(&a.out)?;
    let mut baselines = serde_json::Map::new();
    let mut text = reports_to_text(&reports);
    if let Some(prior_path) = &a.prior_data {
        let prior_scenes = sorted_scenes(prior_path)?;
        let spec = SampleSpec { regime: RegimeMode::SingleOccluder, occlusion_anchors: n_anchors, seed: a.seed };
        let prior = OccupancyPrior::fit(&build_samples(&prior_scenes, &spec)?.0);
        let cv = sweep(&ConstantVelocity, &scenes, &a.sweep, n_anchors, a.seed, threshold)?;
        let pr = sweep(&prior, &scenes, &a.sweep, n_anchors, a.seed, threshold)?;
        write_baseline(&a.out, "constant_velocity", &cv)?;
        write_baseline(&a.out, "occupancy_prior", &pr)?;
        text += &format!("\nconstant_velocity baseline\n{}", reports_to_text(&cv));
        text += &format!("\noccupancy_prior baseline (rate {:.4})\n{}", prior.rate, reports_to_text(&pr));
        baselines.insert("constant_velocity".into(), serde_json::to_value(&cv)?);
        baselines.insert("occupancy_prior".into(), json!({ "rate": prior.rate, "reports": pr }));
    }
    write_json(
        &a.out.join("report.json"),
        &json!({
            "tool_version": TOOL_VERSION,
            "command": "eval",
            "config": { "args": a, "train": cfg, "threshold": threshold, "n_anchors": n_anchors },
            "reports": reports,
            "baselines": baselines,
        }),
    )?;
    let csv = a.out.join("metrics.csv");
    fs::write(&csv, reports_to_csv(&reports))?;
    write_meta(&csv, "eval", &json!({ "args": a, "threshold": threshold, "n_anchors": n_anchors }))?;
    fs::write(a.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn write_baseline(dir: &Path, name: &str, reports: &[MetricReport]) -> Result<()> {
    let path = dir.join(format!("baseline_{name}.csv"));
    fs::write(&path, reports_to_csv(reports))?;
    write_meta(&path, "eval", &json!({ "baseline": name }))
}

/// Gaussian parameters rotated from the ego frame into the parent frame.
pub fn gaussian_to_parent(tf: &RigidTransform, g: [f64; 5]) -> [f64; 5] {
    let mu = tf.to_parent(Vec2::new(g[0], g[1]));
    let (sx, sy, rho) = (g[2], g[3], g[4]);
    let (c, s) = (tf.heading.cos(), tf.heading.sin());
    let (a, b, d) = (sx * sx, rho * sx * sy, sy * sy);
    // R S R^T
    let xx = c * c * a - 2.0 * c * s * b + s * s * d;
    let yy = s * s * a + 2.0 * c * s * b + c * c * d;
    let xy = c * s * (a - d) + (c * c - s * s) * b;
    let (sx2, sy2) = (xx.sqrt(), yy.sqrt());
    [mu.x, mu.y, sx2, sy2, (xy / (sx2 * sy2)).clamp(-1.0, 1.0)]
}

#[derive(Serialize)]
struct AnchorOut {
    x: f64,
    y: f64,
    source: AnchorSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    gt_occupied: Option<bool>,
    p_occ: f64,
    mode_probs: Vec<f64>,
    /// `K × P × [mu_x, mu_y, sigma_x, sigma_y, rho]` in the scene file frame.
    modes: Vec<Vec<[f64; 5]>>,
}

pub fn infer(a: &InferArgs) -> Result<()> {
    let trainer = load_trainer(&a.ckpt)?;
    let scenes = read_scenes(&a.scene_file)?;
    let scene = scenes
        .iter()
        .find(|s| s.scene_id == a.scene_id)
        .ok_or_else(|| Error::Config(format!("scene `{}` not in {}", a.scene_id, a.scene_file.display())))?;
    check_horizons(std::slice::from_ref(scene), &trainer.config.model, &a.scene_file)?;
    if scene.agent(&a.occluder_id).is_none() {
        return Err(Error::UnknownAgent(a.occluder_id.clone()));
    }
    if a.occluder_id == scene.ego_id {
        return Err(Error::InvalidArgument("the ego cannot be the occluder".into()));
    }
    let frame = scene.ego_frame()?;
    let prepared = prepare_scene(scene)?;
    let t = prepared.prediction_step();
    let no_occlusion = || Error::NoOcclusion(format!("agent `{}` casts no shadow at the prediction step", a.occluder_id));
    let occ = prepared.agent(&a.occluder_id).ok_or_else(no_occlusion)?;
    let state = occ.state_at(t).ok_or_else(no_occlusion)?;
    let fp = Footprint::of(occ, state);
    if fp.contains(Vec2::ZERO) {
        return Err(no_occlusion());
    }
    let shadow = shadow_polygon(Vec2::ZERO, &fp, prepared.radius, &a.occluder_id)?.ok_or_else(no_occlusion)?;
    let anchors = build_anchor_set(&prepared, std::slice::from_ref(&shadow), &a.occluder_id, a.n_anchors, a.seed)?;
    let features = featurize(&prepared)?;
    let positions: Vec<Vec2> = anchors.anchors.iter().map(|x| x.position).collect();
    let preds: Vec<AnchorPrediction> = trainer.model.predict(&trainer.store, &features, &positions)?;
    let out: Vec<AnchorOut> = anchors
        .anchors
        .iter()
        .zip(preds)
        .map(|(anc, p)| {
            let pos = frame.to_parent(anc.position);
            AnchorOut {
                x: pos.x,
                y: pos.y,
                source: anc.source.clone(),
                gt_occupied: anc.is_occlusion().then_some(anc.gt_occupied),
                p_occ: p.p_occ,
                mode_probs: p.mode_probs,
                modes: p
                    .trajectories
                    .iter()
                    .map(|m| m.iter().map(|g| gaussian_to_parent(&frame, *g)).collect())
                    .collect(),
            }
        })
        .collect();
    let polygon: Vec<[f64; 2]> = shadow.vertices.iter().map(|v| frame.to_parent(*v)).map(|v| [v.x, v.y]).collect();
    write_json(
        &a.out,
        &json!({
            "tool_version": TOOL_VERSION,
            "command": "infer",
            "config": { "args": a, "train": trainer.config },
            "scene_id": scene.scene_id,
            "occluder_id": a.occluder_id,
            "occlusion": polygon,
            "anchors": out,
        }),
    )?;
    println!("wrote {} anchors to {}", anchors.len(), a.out.display());
    Ok(())
}

pub fn annotate(a: &AnnotateArgs) -> Result<()> {
    let regime: RegimeMode = a.regime.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
    let scenes = sorted_scenes(&a.scene_file)?;
    let spec = SampleSpec { regime, occlusion_anchors: a.n_anchors, seed: a.seed };
    let (samples, skipped) = build_samples(&scenes, &spec)?;
    let annotated: Vec<Scene> = samples.iter().map(|s| s.scene.moved_by(&s.frame)).collect();
    write_scenes(&a.out, &annotated)?;
    write_meta(&a.out, "annotate", a)?;
    println!("annotated {} scenes ({} skipped without occlusion)", annotated.len(), skipped.len());
    Ok(())
}

pub fn params(a: &ParamsArgs) -> Result<()> {
    let configs: Vec<(String, ModelConfig)> = match (&a.config, &a.preset) {
        (Some(p), _) => vec![(p.display().to_string(), load_toml::<TrainConfig>(p)?.model)],
        (None, Some(name)) => vec![(name.clone(), ModelConfig::preset(name)?)],
        (None, None) => vec![("desk".into(), ModelConfig::desk()), ("full".into(), ModelConfig::full())],
    };
    for (name, cfg) in configs {
        let n = parameter_count(&cfg)?;
        println!("{name}: {n} trainable parameters ({:.2}M, {:.0}% of the 11.3M reference)", n as f64 / 1e6, 100.0 * n as f64 / REFERENCE_PARAMS);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_rotation_preserves_covariance_invariants() {
        let tf = RigidTransform { origin: Vec2::new(3.0, -2.0), heading: 0.7 };
        let g = [1.0, 2.0, 0.5, 2.0, 0.3];
        let r = gaussian_to_parent(&tf, g);
        let det = |g: [f64; 5]| g[2] * g[2] * g[3] * g[3] * (1.0 - g[4] * g[4]);
        let tr = |g: [f64; 5]| g[2] * g[2] + g[3] * g[3];
        assert!((det(g) - det(r)).abs() < 1e-9);
        assert!((tr(g) - tr(r)).abs() < 1e-9);
        let quarter = RigidTransform { origin: Vec2::ZERO, heading: std::f64::consts::FRAC_PI_2 };
        let q = gaussian_to_parent(&quarter, [0.0, 0.0, 1.0, 3.0, 0.0]);
        assert!((q[2] - 3.0).abs() < 1e-12 && (q[3] - 1.0).abs() < 1e-12 && q[4].abs() < 1e-12);
    }
}
