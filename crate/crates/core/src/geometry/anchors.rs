use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Footprint, ShadowPolygon};
use crate::error::{Error, Result};
use crate::scene::{AnchorRecord, AnchorSource, Scene, Vec2};

pub const DEFAULT_OCC_ANCHORS: usize = 48;

#[derive(Clone, Debug, PartialEq)]
pub struct Anchor {
    pub position: Vec2,
    pub source: AnchorSource,
    pub gt_occupied: bool,
    /// Positions over the `P` future steps when occupied.
    pub gt_future: Option<Vec<Vec2>>,
    pub gt_agent_id: Option<String>,
}

impl Anchor {
    pub fn is_occlusion(&self) -> bool {
        matches!(self.source, AnchorSource::Occlusion(_))
    }

    pub fn to_record(&self) -> AnchorRecord {
        AnchorRecord {
            x: self.position.x,
            y: self.position.y,
            source: self.source.clone(),
            gt_occupied: self.gt_occupied,
            gt_agent_id: self.gt_agent_id.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnchorSet {
    pub anchors: Vec<Anchor>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn records(&self) -> Vec<AnchorRecord> {
        self.anchors.iter().map(Anchor::to_record).collect()
    }
}

fn future_of(scene: &Scene, idx: usize) -> Vec<Vec2> {
    let a = &scene.agents[idx];
    (scene.history..scene.steps()).map(|t| a.state_at(t).map(|s| s.position()).unwrap_or_default()).collect()
}

/// Anchors for one training or evaluation sample.
///
/// Every agent observed at the prediction step gets an anchor at its center.
/// `n_occ_anchors` further points are drawn uniformly inside the shadow of
/// `occluder_id` by bounding-box rejection. An occlusion anchor is occupied
/// iff it falls inside the footprint of an agent hidden at the prediction
/// step; overlapping footprints resolve to the nearest center.
pub fn build_anchor_set(
    scene: &Scene,
    shadows: &[ShadowPolygon],
    occluder_id: &str,
    n_occ_anchors: usize,
    seed: u64,
) -> Result<AnchorSet> {
    let t = scene.prediction_step();
    let mut anchors = Vec::new();
    for (i, a) in scene.agents.iter().enumerate() {
        if let Some(s) = a.state_at(t).filter(|s| s.observed) {
            anchors.push(Anchor {
                position: s.position(),
                source: AnchorSource::ObservedAgent(a.id.clone()),
                gt_occupied: true,
                gt_future: Some(future_of(scene, i)),
                gt_agent_id: Some(a.id.clone()),
            });
        }
    }
    let shadow = shadows
        .iter()
        .find(|s| s.occluder_id == occluder_id)
        .ok_or_else(|| Error::NoOcclusion(format!("occluder `{occluder_id}` casts no shadow")))?;
    let hidden: Vec<(usize, Footprint)> = scene
        .agents
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.state_at(t).filter(|s| !s.observed).map(|s| (i, Footprint::of(a, s))))
        .collect();
    let (lo, hi) = shadow.bounding_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = 1000 * n_occ_anchors;
    let mut proposals = 0;
    let mut placed = 0;
    while placed < n_occ_anchors {
        if proposals >= budget {
            return Err(Error::SamplingExhausted { what: format!("anchors in shadow of `{occluder_id}`"), proposals });
        }
        proposals += 1;
        let p = Vec2::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
        if !shadow.contains(p) {
            continue;
        }
        placed += 1;
        let owner = hidden
            .iter()
            .filter(|(_, fp)| fp.contains(p))
            .min_by(|(_, a), (_, b)| a.center.dist(p).total_cmp(&b.center.dist(p)))
            .map(|(i, _)| *i);
        anchors.push(Anchor {
            position: p,
            source: AnchorSource::Occlusion(occluder_id.to_string()),
            gt_occupied: owner.is_some(),
            gt_future: owner.map(|i| future_of(scene, i)),
            gt_agent_id: owner.map(|i| scene.agents[i].id.clone()),
        });
    }
    Ok(AnchorSet { anchors })
}
