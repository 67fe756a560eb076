//! Vectorized scene representation: agent tracks, polyline maps, the ego
//! frame, cropping and resampling.

mod features;
mod io;

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

pub use features::{featurize, SceneFeatures, AGENT_FEATURES, MAP_FEATURES};
pub use io::{parse_scene_line, read_scenes, read_scenes_from_str, scene_to_line, write_scenes};

/// Default observable radius around the ego (m).
pub const DEFAULT_RADIUS: f64 = 60.0;
/// Minimum spacing between resampled map points (m).
pub const MAP_MIN_SPACING: f64 = 1.5;
pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_HISTORY: usize = 10;
pub const DEFAULT_FUTURE: usize = 40;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Vec2 {
    fn from(p: [f64; 2]) -> Self {
        Self { x: p[0], y: p[1] }
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(p: Vec2) -> Self {
        [p.x, p.y]
    }
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self { x: theta.cos(), y: theta.sin() }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2 { x: c * self.x - s * self.y, y: s * self.x + c * self.y }
    }

    pub fn perp(self) -> Vec2 {
        Vec2 { x: -self.y, y: self.x }
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            self
        }
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2 { x: self.x + o.x, y: self.y + o.y }
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2 { x: self.x - o.x, y: self.y - o.y }
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2 { x: self.x * s, y: self.y * s }
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut h = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if h <= -PI {
        h += 2.0 * PI;
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::Vehicle, AgentKind::Pedestrian, AgentKind::Cyclist];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PolylineKind {
    LaneCenter,
    LaneBoundary,
    RoadEdge,
    Crosswalk,
    StopSign,
}

impl PolylineKind {
    pub const ALL: [PolylineKind; 5] = [
        PolylineKind::LaneCenter,
        PolylineKind::LaneBoundary,
        PolylineKind::RoadEdge,
        PolylineKind::Crosswalk,
        PolylineKind::StopSign,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Maps a type name to a kind; unrecognized names become `RoadEdge`.
    pub fn from_name(name: &str) -> Self {
        match name {
            "lane_center" => Self::LaneCenter,
            "lane_boundary" => Self::LaneBoundary,
            "crosswalk" => Self::Crosswalk,
            "stop_sign" => Self::StopSign,
            _ => Self::RoadEdge,
        }
    }
}

impl<'de> Deserialize<'de> for PolylineKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Self::from_name(&s))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentState {
    pub t: u32,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub observed: bool,
}

impl AgentState {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::new(self.vx, self.vy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentTrack {
    pub id: String,
    pub kind: AgentKind,
    pub length: f64,
    pub width: f64,
    pub states: Vec<AgentState>,
}

impl AgentTrack {
    pub fn state_at(&self, t: usize) -> Option<&AgentState> {
        self.states.iter().find(|s| s.t as usize == t)
    }

    pub fn observed_at(&self, t: usize) -> bool {
        self.state_at(t).is_some_and(|s| s.observed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Polyline {
    pub kind: PolylineKind,
    pub points: Vec<Vec2>,
}

/// Shadow polygon record carried alongside a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionRecord {
    pub occluder_id: String,
    pub polygon: Vec<Vec2>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSource {
    ObservedAgent(String),
    Occlusion(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorRecord {
    pub x: f64,
    pub y: f64,
    pub source: AnchorSource,
    pub gt_occupied: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_agent_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub scene_id: String,
    pub dt: f64,
    #[serde(rename = "H")]
    pub history: usize,
    #[serde(rename = "P")]
    pub future: usize,
    pub ego_id: String,
    pub radius: f64,
    pub agents: Vec<AgentTrack>,
    pub map: Vec<Polyline>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occlusions: Option<Vec<OcclusionRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<AnchorRecord>>,
}

/// Rigid 2-D frame: `origin` and `heading` of the local frame in the parent frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub origin: Vec2,
    pub heading: f64,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform { origin: Vec2::ZERO, heading: 0.0 };

    /// Parent-frame point into the local frame.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.origin).rotate(-self.heading)
    }

    /// Local-frame point into the parent frame.
    pub fn to_parent(&self, p: Vec2) -> Vec2 {
        p.rotate(self.heading) + self.origin
    }

    pub fn vec_to_local(&self, v: Vec2) -> Vec2 {
        v.rotate(-self.heading)
    }

    pub fn vec_to_parent(&self, v: Vec2) -> Vec2 {
        v.rotate(self.heading)
    }
}

impl Scene {
    /// Index of the last history step, where every label and frame is anchored.
    pub fn prediction_step(&self) -> usize {
        self.history.saturating_sub(1)
    }

    pub fn steps(&self) -> usize {
        self.history + self.future
    }

    pub fn agent(&self, id: &str) -> Option<&AgentTrack> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn agent_index(&self, id: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.id == id)
    }

    pub fn ego(&self) -> Option<&AgentTrack> {
        self.agent(&self.ego_id)
    }

    /// Ego position and heading at the prediction step.
    pub fn ego_frame(&self) -> Result<RigidTransform> {
        let t = self.prediction_step();
        let s = self
            .ego()
            .and_then(|e| e.state_at(t))
            .ok_or_else(|| Error::MissingEgoState(self.ego_id.clone()))?;
        Ok(RigidTransform { origin: s.position(), heading: s.heading })
    }

    /// Re-expresses every position, heading and velocity in the frame `tf`.
    pub fn to_frame(&self, tf: &RigidTransform) -> Scene {
        let mut out = self.clone();
        for a in &mut out.agents {
            for s in &mut a.states {
                let p = tf.to_local(s.position());
                let v = tf.vec_to_local(s.velocity());
                s.x = p.x;
                s.y = p.y;
                s.vx = v.x;
                s.vy = v.y;
                s.heading = normalize_angle(s.heading - tf.heading);
            }
        }
        for pl in &mut out.map {
            pl.points.iter_mut().for_each(|p| *p = tf.to_local(*p));
        }
        if let Some(occ) = &mut out.occlusions {
            for o in occ {
                o.polygon.iter_mut().for_each(|p| *p = tf.to_local(*p));
            }
        }
        if let Some(anchors) = &mut out.anchors {
            for a in anchors {
                let p = tf.to_local(Vec2::new(a.x, a.y));
                a.x = p.x;
                a.y = p.y;
            }
        }
        out
    }

    /// Applies `tf` as a motion of the whole scene (inverse of [`to_frame`](Self::to_frame)).
    pub fn moved_by(&self, tf: &RigidTransform) -> Scene {
        let inv_origin = (Vec2::ZERO - tf.origin).rotate(-tf.heading);
        self.to_frame(&RigidTransform { origin: inv_origin, heading: -tf.heading })
    }
}

/// Expresses the scene in the ego frame at the prediction step: ego at the
/// origin facing +x.
pub fn to_ego_frame(scene: &Scene) -> Result<Scene> {
    let tf = scene.ego_frame()?;
    let mut out = scene.to_frame(&tf);
    // pin the ego exactly so the transform is idempotent
    let t = scene.prediction_step();
    if let Some(ego) = out.agents.iter_mut().find(|a| a.id == scene.ego_id) {
        if let Some(s) = ego.states.iter_mut().find(|s| s.t as usize == t) {
            s.x = 0.0;
            s.y = 0.0;
            s.heading = 0.0;
        }
    }
    Ok(out)
}

/// Greedy thinning: walk from the first point and keep a point only if it is
/// at least `min_spacing` away from the last kept point. The first and last
/// points are always kept.
pub fn resample_polyline(p: &Polyline, min_spacing: f64) -> Polyline {
    let pts = &p.points;
    if pts.len() <= 1 {
        return p.clone();
    }
    let mut kept = vec![pts[0]];
    let mut last_idx = 0;
    for (i, &q) in pts.iter().enumerate().take(pts.len() - 1).skip(1) {
        if q.dist(kept[kept.len() - 1]) >= min_spacing - 1e-9 {
            kept.push(q);
            last_idx = i;
        }
    }
    if last_idx != pts.len() - 1 {
        kept.push(pts[pts.len() - 1]);
    }
    Polyline { kind: p.kind, points: kept }
}

/// Drops agents farther than `radius` from the ego at the prediction step and
/// clips polylines to the disk, splitting them into contiguous inside runs.
pub fn crop_to_radius(scene: &Scene, radius: f64) -> Result<Scene> {
    let center = scene.ego_frame()?.origin;
    let t = scene.prediction_step();
    let mut out = scene.clone();
    out.radius = radius;
    out.agents.retain(|a| {
        a.id == scene.ego_id || a.state_at(t).is_some_and(|s| s.position().dist(center) <= radius)
    });
    out.map = scene
        .map
        .iter()
        .flat_map(|pl| {
            let mut runs: Vec<Polyline> = Vec::new();
            let mut current: Vec<Vec2> = Vec::new();
            for &p in &pl.points {
                if p.dist(center) <= radius {
                    current.push(p);
                } else if !current.is_empty() {
                    runs.push(Polyline { kind: pl.kind, points: std::mem::take(&mut current) });
                }
            }
            if !current.is_empty() {
                runs.push(Polyline { kind: pl.kind, points: current });
            }
            runs
        })
        .collect();
    Ok(out)
}

/// Ego frame, crop and map resampling in one step.
pub fn prepare_scene(scene: &Scene) -> Result<Scene> {
    let mut s = crop_to_radius(&to_ego_frame(scene)?, scene.radius)?;
    for pl in &mut s.map {
        *pl = resample_polyline(pl, MAP_MIN_SPACING);
    }
    Ok(s)
}
