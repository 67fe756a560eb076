//! Occupancy accuracy and displacement metrics, baselines, and the
//! observability sweep.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sample::{build_samples, Sample, SampleSpec};
use crate::error::{Error, Result};
use crate::geometry::RegimeMode;
use crate::informer::{AnchorPrediction, Informer};
use crate::numerics::ParamStore;
use crate::scene::{AnchorSource, Scene, Vec2};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Anything that produces per-anchor predictions for a sample.
pub trait Predictor: Sync {
    fn predict(&self, sample: &Sample, anchors: &[Vec2]) -> Result<Vec<AnchorPrediction>>;
}

pub struct ModelPredictor<'a> {
    pub model: &'a Informer,
    pub store: &'a ParamStore<f32>,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, sample: &Sample, anchors: &[Vec2]) -> Result<Vec<AnchorPrediction>> {
        self.model.predict(self.store, &sample.features, anchors)
    }
}

fn single_mode(p_occ: f64, track: Vec<Vec2>) -> AnchorPrediction {
    AnchorPrediction {
        p_occ,
        mode_probs: vec![1.0],
        trajectories: vec![track.into_iter().map(|v| [v.x, v.y, 1.0, 1.0, 0.0]).collect()],
    }
}

/// Extrapolates each observed agent's last velocity; other anchors stay put
/// and are predicted free.
pub struct ConstantVelocity;

impl Predictor for ConstantVelocity {
    fn predict(&self, sample: &Sample, anchors: &[Vec2]) -> Result<Vec<AnchorPrediction>> {
        let scene = &sample.scene;
        let t = scene.prediction_step();
        let p = scene.future;
        Ok(anchors
            .iter()
            .map(|&a| {
                let observed = scene
                    .agents
                    .iter()
                    .filter_map(|ag| ag.state_at(t).filter(|s| s.observed))
                    .find(|s| s.position().dist(a) < 1e-9);
                match observed {
                    Some(s) => {
                        let v = s.velocity();
                        single_mode(1.0, (1..=p).map(|k| a + v * (k as f64 * scene.dt)).collect())
                    }
                    None => single_mode(0.0, vec![a; p]),
                }
            })
            .collect())
    }
}

/// Predicts the training-set occupied rate everywhere, with stationary futures.
pub struct OccupancyPrior {
    pub rate: f64,
}

impl OccupancyPrior {
    /// Occupied rate over the occlusion anchors of `samples`.
    pub fn fit(samples: &[Sample]) -> Self {
        let (occ, n) = samples
            .iter()
            .flat_map(|s| s.anchors.anchors.iter().filter(|a| a.is_occlusion()))
            .fold((0usize, 0usize), |(o, n), a| (o + a.gt_occupied as usize, n + 1));
        Self { rate: if n == 0 { 0.0 } else { occ as f64 / n as f64 } }
    }
}

impl Predictor for OccupancyPrior {
    fn predict(&self, sample: &Sample, anchors: &[Vec2]) -> Result<Vec<AnchorPrediction>> {
        Ok(anchors.iter().map(|&a| single_mode(self.rate, vec![a; sample.scene.future])).collect())
    }
}

/// Min-over-modes average and final displacement of the means.
pub fn min_ade_fde(pred: &AnchorPrediction, gt: &[Vec2]) -> (f64, f64) {
    let mut ade = f64::INFINITY;
    let mut fde = f64::INFINITY;
    for k in 0..pred.trajectories.len() {
        let d: Vec<f64> = pred.mode_means(k).zip(gt).map(|(m, g)| m.dist(*g)).collect();
        if d.is_empty() {
            continue;
        }
        ade = ade.min(d.iter().sum::<f64>() / d.len() as f64);
        fde = fde.min(d[d.len() - 1]);
    }
    (ade, fde)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub min_ade: Option<f64>,
    pub min_fde: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub regime: String,
    pub threshold: f64,
    pub scenes: usize,
    pub acc_occ: Option<f64>,
    pub acc_free: Option<f64>,
    pub occupied_anchors: usize,
    pub free_anchors: usize,
    pub observed: Displacement,
    pub occluded: Displacement,
}

impl MetricReport {
    /// Mean of the two class accuracies, when both exist.
    pub fn balanced_accuracy(&self) -> Option<f64> {
        Some((self.acc_occ? + self.acc_free?) / 2.0)
    }
}

/// Running sums; merged in scene order so results never depend on scheduling.
#[derive(Clone, Copy, Debug, Default)]
struct Tally {
    occ_hit: usize,
    occ: usize,
    free_hit: usize,
    free: usize,
    obs_ade: f64,
    obs_fde: f64,
    obs: usize,
    hid_ade: f64,
    hid_fde: f64,
    hid: usize,
}

impl Tally {
    fn merge(mut self, o: Tally) -> Tally {
        self.occ_hit += o.occ_hit;
        self.occ += o.occ;
        self.free_hit += o.free_hit;
        self.free += o.free;
        self.obs_ade += o.obs_ade;
        self.obs_fde += o.obs_fde;
        self.obs += o.obs;
        self.hid_ade += o.hid_ade;
        self.hid_fde += o.hid_fde;
        self.hid += o.hid;
        self
    }

    fn report(&self, regime: String, threshold: f64, scenes: usize) -> MetricReport {
        let frac = |h: usize, n: usize| (n > 0).then(|| h as f64 / n as f64);
        let disp = |a: f64, f: f64, n: usize| Displacement {
            min_ade: (n > 0).then(|| a / n as f64),
            min_fde: (n > 0).then(|| f / n as f64),
            count: n,
        };
        MetricReport {
            regime,
            threshold,
            scenes,
            acc_occ: frac(self.occ_hit, self.occ),
            acc_free: frac(self.free_hit, self.free),
            occupied_anchors: self.occ,
            free_anchors: self.free,
            observed: disp(self.obs_ade, self.obs_fde, self.obs),
            occluded: disp(self.hid_ade, self.hid_fde, self.hid),
        }
    }
}

fn tally_sample(predictor: &dyn Predictor, s: &Sample, threshold: f64) -> Result<Tally> {
    let mut t = Tally::default();
    let preds = predictor.predict(s, &s.anchor_positions())?;
    let reference: HashSet<&str> = s.reference_observed.iter().map(String::as_str).collect();
    for (a, p) in s.anchors.anchors.iter().zip(&preds) {
        match &a.source {
            AnchorSource::Occlusion(_) => {
                let hit = (p.p_occ >= threshold) == a.gt_occupied;
                if a.gt_occupied {
                    t.occ += 1;
                    t.occ_hit += hit as usize;
                } else {
                    t.free += 1;
                    t.free_hit += hit as usize;
                }
            }
            AnchorSource::ObservedAgent(id) => {
                if *id == s.scene.ego_id || !reference.contains(id.as_str()) {
                    continue;
                }
                let gt = a.gt_future.as_deref().unwrap_or_default();
                let (ade, fde) = min_ade_fde(p, gt);
                t.obs_ade += ade;
                t.obs_fde += fde;
                t.obs += 1;
            }
        }
    }
    // probes at hidden agents run in their own pass so they cannot shift the other anchors
    let hidden = s.hidden_agents();
    if !hidden.is_empty() {
        let probes: Vec<Vec2> = hidden.iter().map(|h| h.1).collect();
        let preds = predictor.predict(s, &probes)?;
        for ((_, _, gt), p) in hidden.iter().zip(&preds) {
            let (ade, fde) = min_ade_fde(p, gt);
            t.hid_ade += ade;
            t.hid_fde += fde;
            t.hid += 1;
        }
    }
    Ok(t)
}

/// Metrics over prepared samples of one regime.
///
/// Occupancy accuracy is measured on occlusion anchors. Observed-agent
/// displacement covers non-ego agents that stay visible even when every agent
/// occludes, so the set is the same across regimes. Occluded-agent
/// displacement uses query points at the true centers of the hidden agents.
pub fn evaluate(predictor: &dyn Predictor, samples: &[Sample], regime: &str, threshold: f64) -> Result<MetricReport> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside [0, 1]")));
    }
    let tallies: Vec<Result<Tally>> =
        crate::with_workers(|| samples.par_iter().map(|s| tally_sample(predictor, s, threshold)).collect());
    let mut total = Tally::default();
    for t in tallies {
        total = total.merge(t?);
    }
    Ok(total.report(regime.to_string(), threshold, samples.len()))
}

/// Regime for a sweep point given in percent of agents acting as occluders.
pub fn sweep_regime(percent: u32) -> Result<RegimeMode> {
    match percent {
        0 => Ok(RegimeMode::Full),
        100 => Ok(RegimeMode::Limited),
        p if p < 100 => RegimeMode::partial(p as f64 / 100.0),
        p => Err(Error::InvalidArgument(format!("sweep point {p}% outside [0, 100]"))),
    }
}

pub fn sweep_label(percent: u32) -> String {
    format!("{percent}%")
}

/// One report per sweep point, built from the same scenes and seeds.
pub fn sweep(
    predictor: &dyn Predictor,
    scenes: &[Scene],
    percents: &[u32],
    occlusion_anchors: usize,
    seed: u64,
    threshold: f64,
) -> Result<Vec<MetricReport>> {
    percents
        .iter()
        .map(|&p| {
            let spec = SampleSpec { regime: sweep_regime(p)?, occlusion_anchors, seed };
            let (samples, _) = build_samples(scenes, &spec)?;
            evaluate(predictor, &samples, &sweep_label(p), threshold)
        })
        .collect()
}

/// Flat CSV with columns `regime,anchor_class,metric,value`; absent values are omitted.
pub fn reports_to_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from("regime,anchor_class,metric,value\n");
    for r in reports {
        let mut row = |class: &str, metric: &str, v: Option<f64>| {
            if let Some(v) = v {
                let _ = writeln!(out, "{},{class},{metric},{v}", r.regime);
            }
        };
        row("occupied", "acc", r.acc_occ);
        row("free", "acc", r.acc_free);
        row("observed", "min_ade", r.observed.min_ade);
        row("observed", "min_fde", r.observed.min_fde);
        row("occluded", "min_ade", r.occluded.min_ade);
        row("occluded", "min_fde", r.occluded.min_fde);
    }
    out
}

/// Human-readable block per regime.
pub fn reports_to_text(reports: &[MetricReport]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    let mut out = String::new();
    for r in reports {
        let _ = writeln!(out, "[{}] scenes={} threshold={}", r.regime, r.scenes, r.threshold);
        let _ = writeln!(
            out,
            "  acc_occ={} ({} anchors)  acc_free={} ({} anchors)",
            opt(r.acc_occ),
            r.occupied_anchors,
            opt(r.acc_free),
            r.free_anchors
        );
        let _ = writeln!(
            out,
            "  observed minADE={} minFDE={} ({})",
            opt(r.observed.min_ade),
            opt(r.observed.min_fde),
            r.observed.count
        );
        let _ = writeln!(
            out,
            "  occluded minADE={} minFDE={} ({})",
            opt(r.occluded.min_ade),
            opt(r.occluded.min_fde),
            r.occluded.count
        );
    }
    out
}
