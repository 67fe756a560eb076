//! Turning raw scenes into model-ready samples: ego frame, crop, regime,
//! anchors and features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    apply_regime_with, build_anchor_set, regime_occluders, shadow_polygon, visibility_with, AnchorSet, Footprint,
    ObservabilityRegime, RegimeMode,
};
use crate::scene::{featurize, prepare_scene, RigidTransform, Scene, SceneFeatures, Vec2};

/// One scene under one regime, with its anchor set.
#[derive(Clone, Debug)]
pub struct Sample {
    pub scene_id: String,
    /// Ego-frame scene with the regime's observed flags, occlusions and anchors filled in.
    pub scene: Scene,
    /// Maps ego-frame coordinates back to the input scene frame.
    pub frame: RigidTransform,
    pub features: SceneFeatures,
    pub anchors: AnchorSet,
    pub occluder_id: String,
    /// Agents observed at the prediction step even when every agent occludes.
    pub reference_observed: Vec<String>,
}

impl Sample {
    pub fn anchor_positions(&self) -> Vec<Vec2> {
        self.anchors.anchors.iter().map(|a| a.position).collect()
    }

    /// Agents hidden at the prediction step, with their centers and futures.
    pub fn hidden_agents(&self) -> Vec<(String, Vec2, Vec<Vec2>)> {
        let t = self.scene.prediction_step();
        self.scene
            .agents
            .iter()
            .filter_map(|a| {
                let s = a.state_at(t).filter(|s| !s.observed)?;
                let future =
                    (self.scene.history..self.scene.steps()).map(|k| a.state_at(k).map(|s| s.position())).collect::<Option<Vec<_>>>()?;
                Some((a.id.clone(), s.position(), future))
            })
            .collect()
    }
}

/// Sampling settings shared by training and evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleSpec {
    pub regime: RegimeMode,
    pub occlusion_anchors: usize,
    pub seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-scene seed stream, independent of dataset order.
pub fn scene_seed(base: u64, scene_id: &str, stream: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in scene_id.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(splitmix(base ^ h).wrapping_add(stream))
}

/// Index of the agent whose occlusion the sample queries.
///
/// Candidates are non-ego agents that cast a shadow at the prediction step.
/// Candidates hiding at least one other agent are preferred; the pick among
/// the preferred pool is uniform.
pub fn occluder_of_interest(scene: &Scene, seed: u64) -> Result<usize> {
    let t = scene.prediction_step();
    let eye = scene.ego_frame()?.origin;
    let mut casting = Vec::new();
    for (i, a) in scene.agents.iter().enumerate() {
        if a.id == scene.ego_id {
            continue;
        }
        let Some(s) = a.state_at(t) else { continue };
        let fp = Footprint::of(a, s);
        if fp.contains(eye) {
            continue;
        }
        if shadow_polygon(eye, &fp, scene.radius, &a.id)?.is_some() {
            casting.push(i);
        }
    }
    if casting.is_empty() {
        return Err(Error::NoOcclusion(format!("no agent in scene `{}` casts a shadow", scene.scene_id)));
    }
    let hiding: Vec<usize> = casting
        .iter()
        .copied()
        .filter(|&i| {
            let vis = visibility_with(scene, &[i]);
            scene.agents.iter().zip(&vis).any(|(a, v)| {
                a.states.iter().position(|s| s.t as usize == t).is_some_and(|k| !v[k])
            })
        })
        .collect();
    let pool = if hiding.is_empty() { &casting } else { &hiding };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(pool[rng.random_range(0..pool.len())])
}

/// Builds the sample for `scene` (any frame) under `spec`.
///
/// The occluder of interest joins the regime's occluder set in every
/// regime, so each sample carries exactly one queried occlusion. Under
/// `single_occluder` it is the only occluder.
pub fn build_sample(scene: &Scene, spec: &SampleSpec) -> Result<Sample> {
    let frame = scene.ego_frame()?;
    let prepared = prepare_scene(scene)?;
    let ooi = occluder_of_interest(&prepared, scene_seed(spec.seed, &scene.scene_id, 1))?;
    let mut occluders = match spec.regime {
        RegimeMode::SingleOccluder => Vec::new(),
        mode => regime_occluders(&prepared, &ObservabilityRegime { mode, seed: scene_seed(spec.seed, &scene.scene_id, 0) })?,
    };
    if !occluders.contains(&ooi) {
        occluders.push(ooi);
        occluders.sort_unstable();
    }
    let (mut applied, shadows) = apply_regime_with(&prepared, &occluders)?;
    let occluder_id = prepared.agents[ooi].id.clone();
    let anchors = build_anchor_set(
        &applied,
        &shadows,
        &occluder_id,
        spec.occlusion_anchors,
        scene_seed(spec.seed, &scene.scene_id, 2),
    )?;
    applied.anchors = Some(anchors.records());
    let features = featurize(&applied)?;
    let all: Vec<usize> = (0..prepared.agents.len()).collect();
    let t = prepared.prediction_step();
    let reference_observed = prepared
        .agents
        .iter()
        .zip(visibility_with(&prepared, &all))
        .filter(|(a, v)| a.states.iter().position(|s| s.t as usize == t).is_some_and(|k| v[k]))
        .map(|(a, _)| a.id.clone())
        .collect();
    Ok(Sample {
        scene_id: scene.scene_id.clone(),
        scene: applied,
        frame,
        features,
        anchors,
        occluder_id,
        reference_observed,
    })
}

/// Samples for every scene that admits one, in input order, plus the ids of
/// scenes skipped because no agent casts a shadow.
pub fn build_samples(scenes: &[Scene], spec: &SampleSpec) -> Result<(Vec<Sample>, Vec<String>)> {
    use rayon::prelude::*;
    let results: Vec<Result<Sample>> = crate::with_workers(|| scenes.par_iter().map(|s| build_sample(s, spec)).collect());
    let mut samples = Vec::with_capacity(scenes.len());
    let mut skipped = Vec::new();
    for (scene, r) in scenes.iter().zip(results) {
        match r {
            Ok(s) => samples.push(s),
            Err(Error::NoOcclusion(_)) => skipped.push(scene.scene_id.clone()),
            Err(e) => return Err(e),
        }
    }
    Ok((samples, skipped))
}
