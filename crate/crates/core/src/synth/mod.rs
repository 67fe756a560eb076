//! Synthetic traffic scenes: straight roads and four-way intersections with
//! scripted vehicles, cyclists, parked cars and pedestrians.

mod layout;
mod path;

use std::f64::consts::PI;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Footprint;
use crate::scene::{
    crop_to_radius, normalize_angle, resample_polyline, AgentKind, AgentState, AgentTrack, Polyline, PolylineKind,
    RigidTransform, Scene, Vec2, MAP_MIN_SPACING,
};
use layout::{Layout, Route};
use path::{Path, SpeedProfile};

pub use crate::scene::{read_scenes, write_scenes};

pub const TRAIN_SEEDS: Range<u64> = 0..8_000;
pub const VAL_SEEDS: Range<u64> = 8_000..9_000;
pub const TEST_SEEDS: Range<u64> = 9_000..10_000;

/// Largest heading change between consecutive steps of a generated track (rad).
pub const MAX_HEADING_STEP: f64 = 0.2;
/// Map polylines are cut into pieces no longer than this (m).
pub const MAX_SEGMENT_LENGTH: f64 = 20.0;

pub const VEHICLE_DIMS: (f64, f64) = (4.5, 2.0);
pub const PEDESTRIAN_DIMS: (f64, f64) = (0.8, 0.8);
pub const CYCLIST_DIMS: (f64, f64) = (1.8, 0.6);

/// Spawn radius around the ego's initial position (m).
const SPAWN_RADIUS: f64 = 50.0;
/// Clearance added to every footprint in the overlap check (m).
const CLEARANCE: f64 = 0.3;
const TURN_SPEED_CAP: f64 = 8.0;
const AGENT_ATTEMPTS: usize = 60;
const REQUIRED_ATTEMPTS: usize = 1_000;
const SCENE_ROUNDS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    StraightRoad,
    FourWayIntersection,
}

impl TemplateKind {
    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::StraightRoad => "straight_road",
            TemplateKind::FourWayIntersection => "four_way_intersection",
        }
    }
}

/// Generator settings. Ranges are inclusive `[min, max]`; `lane_count` is per
/// travel direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioTemplate {
    pub kind: TemplateKind,
    pub lane_count: usize,
    pub lane_width: f64,
    pub crosswalk: bool,
    pub vehicles: [usize; 2],
    pub parked_vehicles: [usize; 2],
    pub pedestrians: [usize; 2],
    pub cyclists: [usize; 2],
    pub vehicle_speed: [f64; 2],
    pub pedestrian_speed: [f64; 2],
    pub cyclist_speed: [f64; 2],
    /// Probability that a moving vehicle or cyclist follows a non-constant speed profile.
    pub maneuver_rate: f64,
    /// Probability that an intersection vehicle turns.
    pub turn_rate: f64,
    pub dt: f64,
    #[serde(rename = "H")]
    pub history: usize,
    #[serde(rename = "P")]
    pub future: usize,
    pub radius: f64,
}

impl Default for ScenarioTemplate {
    fn default() -> Self {
        Self::straight_road()
    }
}

impl ScenarioTemplate {
    pub fn straight_road() -> Self {
        Self {
            kind: TemplateKind::StraightRoad,
            lane_count: 2,
            lane_width: 3.5,
            crosswalk: true,
            vehicles: [4, 10],
            parked_vehicles: [1, 5],
            pedestrians: [2, 6],
            cyclists: [0, 3],
            vehicle_speed: [4.0, 13.0],
            pedestrian_speed: [0.8, 1.8],
            cyclist_speed: [3.0, 7.0],
            maneuver_rate: 0.5,
            turn_rate: 0.4,
            dt: crate::scene::DEFAULT_DT,
            history: crate::scene::DEFAULT_HISTORY,
            future: crate::scene::DEFAULT_FUTURE,
            radius: crate::scene::DEFAULT_RADIUS,
        }
    }

    pub fn four_way_intersection() -> Self {
        Self { kind: TemplateKind::FourWayIntersection, lane_count: 1, ..Self::straight_road() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lane_width > 2.5) {
            return bad(format!("lane_width must exceed 2.5 m, got {}", self.lane_width));
        }
        if self.lane_count == 0 || self.lane_count > 4 {
            return bad(format!("lane_count must be in 1..=4, got {}", self.lane_count));
        }
        for (name, r) in [
            ("vehicles", self.vehicles),
            ("parked_vehicles", self.parked_vehicles),
            ("pedestrians", self.pedestrians),
            ("cyclists", self.cyclists),
        ] {
            if r[0] > r[1] {
                return bad(format!("{name}: empty range [{}, {}]", r[0], r[1]));
            }
        }
        for (name, r) in [
            ("vehicle_speed", self.vehicle_speed),
            ("pedestrian_speed", self.pedestrian_speed),
            ("cyclist_speed", self.cyclist_speed),
        ] {
            if !(r[0] >= 0.0 && r[0] <= r[1] && r[1] <= 20.0) {
                return bad(format!("{name}: invalid range [{}, {}]", r[0], r[1]));
            }
        }
        for (name, p) in [("maneuver_rate", self.maneuver_rate), ("turn_rate", self.turn_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if !(self.dt > 0.0) || self.history == 0 || !(self.radius > 0.0) {
            return bad("dt, H and radius must be positive".into());
        }
        Ok(())
    }
}

/// The two stock templates, alternated by seed in [`generate_dataset`].
pub fn default_templates() -> Vec<ScenarioTemplate> {
    vec![ScenarioTemplate::straight_road(), ScenarioTemplate::four_way_intersection()]
}

struct Builder<'a> {
    t: &'a ScenarioTemplate,
    layout: Layout,
    steps: usize,
    agents: Vec<AgentTrack>,
    footprints: Vec<Vec<Footprint>>,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn count(rng: &mut ChaCha8Rng, r: [usize; 2]) -> usize {
    rng.random_range(r[0]..=r[1])
}

impl Builder<'_> {
    fn ego_start(&self) -> Vec2 {
        self.agents[0].states[0].position()
    }

    fn track(&self, kind: AgentKind, dims: (f64, f64), path: &Path, profile: SpeedProfile, s0: f64) -> AgentTrack {
        let states = profile
            .integrate(s0, self.steps, self.t.dt)
            .into_iter()
            .enumerate()
            .map(|(t, (s, v))| {
                let (p, h) = path.at(s);
                AgentState {
                    t: t as u32,
                    x: p.x,
                    y: p.y,
                    heading: normalize_angle(h),
                    vx: v * h.cos(),
                    vy: v * h.sin(),
                    observed: true,
                }
            })
            .collect();
        AgentTrack { id: String::new(), kind, length: dims.0, width: dims.1, states }
    }

    /// Accepts the track if it is kinematically plausible and never overlaps a placed agent.
    fn try_place(&mut self, mut track: AgentTrack, prefix: &str) -> bool {
        let smooth = track
            .states
            .windows(2)
            .all(|w| normalize_angle(w[1].heading - w[0].heading).abs() <= MAX_HEADING_STEP);
        if !smooth {
            return false;
        }
        let fps: Vec<Footprint> = track
            .states
            .iter()
            .map(|s| Footprint {
                center: s.position(),
                heading: s.heading,
                length: track.length + CLEARANCE,
                width: track.width + CLEARANCE,
            })
            .collect();
        if self.footprints.iter().any(|other| other.iter().zip(&fps).any(|(a, b)| a.overlaps(b))) {
            return false;
        }
        let n = self.agents.iter().filter(|a| a.id.starts_with(prefix)).count();
        track.id = if prefix == "ego" { "ego".into() } else { format!("{prefix}_{}", n + 1) };
        self.agents.push(track);
        self.footprints.push(fps);
        true
    }

    fn profile(&self, rng: &mut ChaCha8Rng, route: &Route, speeds: [f64; 2], s0: &mut f64) -> SpeedProfile {
        let mut v = uniform(rng, speeds);
        if route.turning {
            v = v.min(TURN_SPEED_CAP);
        }
        if rng.random::<f64>() >= self.t.maneuver_rate {
            return SpeedProfile::Constant(v);
        }
        let stop = route.stop_s.filter(|&stop| *s0 < stop - 8.0);
        match rng.random_range(0..3) {
            0 if stop.is_some() => SpeedProfile::StopAt { v0: v, stop_s: stop.unwrap(), decel: rng.random_range(1.5..3.5) },
            1 if route.stop_s.is_some() => {
                *s0 = route.stop_s.unwrap() - rng.random_range(0.0..12.0);
                SpeedProfile::Launch { start_step: rng.random_range(0..30), accel: rng.random_range(1.0..2.5), v_max: v.max(2.0) }
            }
            _ => SpeedProfile::Ramp {
                v0: v,
                v1: uniform(rng, speeds),
                start_step: rng.random_range(0..40),
                accel: rng.random_range(0.5..2.0),
            },
        }
    }

    /// Arc length on `path` whose point lies within the spawn radius of the ego.
    fn spawn_s(&self, rng: &mut ChaCha8Rng, path: &Path, lo: f64, hi: f64) -> Option<f64> {
        let ego = self.ego_start();
        (0..40).map(|_| rng.random_range(lo..hi)).find(|&s| path.at(s).0.dist(ego) <= SPAWN_RADIUS)
    }

    fn place_ego(&mut self, rng: &mut ChaCha8Rng) -> bool {
        let (route, (lo, hi)) = self.layout.ego_routes[rng.random_range(0..self.layout.ego_routes.len())].clone();
        let mut s0 = rng.random_range(lo..hi);
        let profile = self.profile(rng, &route, self.t.vehicle_speed, &mut s0);
        let track = self.track(AgentKind::Vehicle, VEHICLE_DIMS, &route.path, profile, s0);
        self.try_place(track, "ego")
    }

    fn place_vehicle(&mut self, rng: &mut ChaCha8Rng) -> bool {
        let group = &self.layout.vehicle_routes[rng.random_range(0..self.layout.vehicle_routes.len())];
        let route = if group.len() > 1 && rng.random::<f64>() < self.t.turn_rate {
            group[rng.random_range(1..group.len())].clone()
        } else {
            group[0].clone()
        };
        let Some(mut s0) = self.spawn_s(rng, &route.path, 0.0, route.path.length()) else { return false };
        let profile = self.profile(rng, &route, self.t.vehicle_speed, &mut s0);
        let track = self.track(AgentKind::Vehicle, VEHICLE_DIMS, &route.path, profile, s0);
        self.try_place(track, "veh")
    }

    fn place_cyclist(&mut self, rng: &mut ChaCha8Rng) -> bool {
        let route = self.layout.cyclist_routes[rng.random_range(0..self.layout.cyclist_routes.len())].clone();
        let Some(mut s0) = self.spawn_s(rng, &route.path, 0.0, route.path.length()) else { return false };
        let profile = self.profile(rng, &route, self.t.cyclist_speed, &mut s0);
        let track = self.track(AgentKind::Cyclist, CYCLIST_DIMS, &route.path, profile, s0);
        self.try_place(track, "cyc")
    }

    fn place_parked(&mut self, rng: &mut ChaCha8Rng) -> bool {
        let strip = self.layout.parking[rng.random_range(0..self.layout.parking.len())].clone();
        let Some(s0) = self.spawn_s(rng, &strip, 0.0, strip.length()) else { return false };
        let track = self.track(AgentKind::Vehicle, VEHICLE_DIMS, &strip, SpeedProfile::Constant(0.0), s0);
        self.try_place(track, "park")
    }

    fn place_pedestrian(&mut self, rng: &mut ChaCha8Rng, on_crosswalk: bool) -> bool {
        let v = uniform(rng, self.t.pedestrian_speed);
        let ego = self.ego_start();
        let (path, s0) = if on_crosswalk {
            let near: Vec<&Path> = self
                .layout
                .crosswalks
                .iter()
                .filter(|p| p.at(p.length() / 2.0).0.dist(ego) <= SPAWN_RADIUS - 5.0)
                .collect();
            if near.is_empty() {
                return false;
            }
            let p = near[rng.random_range(0..near.len())].clone();
            let s0 = rng.random_range(-3.0..p.length() - 2.0);
            (p, s0)
        } else {
            let p = self.layout.sidewalks[rng.random_range(0..self.layout.sidewalks.len())].clone();
            let Some(s0) = self.spawn_s(rng, &p, 0.0, p.length()) else { return false };
            (p, s0)
        };
        let track = self.track(AgentKind::Pedestrian, PEDESTRIAN_DIMS, &path, SpeedProfile::Constant(v), s0);
        self.try_place(track, "ped")
    }
}

fn populate(t: &ScenarioTemplate, rng: &mut ChaCha8Rng) -> Result<Option<(Vec<AgentTrack>, Layout)>> {
    let crosswalk_x = rng.random_range(-15.0..15.0);
    let mut b = Builder {
        t,
        layout: layout::build(t, crosswalk_x),
        steps: t.history + t.future,
        agents: Vec::new(),
        footprints: Vec::new(),
    };
    if !(0..REQUIRED_ATTEMPTS).any(|_| b.place_ego(rng)) {
        return Err(Error::SamplingExhausted { what: "ego placement".into(), proposals: REQUIRED_ATTEMPTS });
    }
    let n_ped = count(rng, t.pedestrians);
    let mut placed_ped = 0;
    if t.crosswalk && n_ped > 0 {
        if !(0..AGENT_ATTEMPTS).any(|_| b.place_pedestrian(rng, true)) {
            return Ok(None);
        }
        placed_ped = 1;
    }
    let n_park = count(rng, t.parked_vehicles);
    let n_veh = count(rng, t.vehicles);
    let n_cyc = count(rng, t.cyclists);
    for _ in 0..n_park {
        let _ = (0..AGENT_ATTEMPTS).any(|_| b.place_parked(rng));
    }
    for _ in 0..n_veh {
        let _ = (0..AGENT_ATTEMPTS).any(|_| b.place_vehicle(rng));
    }
    for _ in 0..n_cyc {
        let _ = (0..AGENT_ATTEMPTS).any(|_| b.place_cyclist(rng));
    }
    for _ in placed_ped..n_ped {
        let on_crosswalk = t.crosswalk && rng.random::<f64>() < 0.5;
        let _ = (0..AGENT_ATTEMPTS).any(|_| b.place_pedestrian(rng, on_crosswalk));
    }
    if b.agents.len() < 2 {
        return Ok(None);
    }
    Ok(Some((b.agents, b.layout)))
}

/// Cuts a polyline into consecutive pieces of at most `max_len` arc length
/// sharing their end points.
pub fn segment_polyline(p: &Polyline, max_len: f64) -> Vec<Polyline> {
    let pts = &p.points;
    if pts.len() < 2 {
        return vec![p.clone()];
    }
    let mut out = Vec::new();
    let mut cur = vec![pts[0]];
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let d = w[0].dist(w[1]);
        if acc + d > max_len + 1e-9 && cur.len() > 1 {
            let last = cur[cur.len() - 1];
            out.push(Polyline { kind: p.kind, points: std::mem::replace(&mut cur, vec![last]) });
            acc = 0.0;
        }
        cur.push(w[1]);
        acc += d;
    }
    out.push(Polyline { kind: p.kind, points: cur });
    out
}

/// Generates one scene in a randomly placed world frame. Deterministic in
/// `(template, seed)`.
pub fn generate_scene(template: &ScenarioTemplate, seed: u64) -> Result<Scene> {
    template.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..SCENE_ROUNDS {
        let Some((agents, layout)) = populate(template, &mut rng)? else { continue };
        let local = Scene {
            scene_id: format!("{}-{seed:06}", template.kind.name()),
            dt: template.dt,
            history: template.history,
            future: template.future,
            ego_id: "ego".into(),
            radius: template.radius,
            agents,
            map: layout.polylines.into_iter().map(|(kind, points)| Polyline { kind, points }).collect(),
            occlusions: None,
            anchors: None,
        };
        let world = RigidTransform {
            origin: Vec2::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0)),
            heading: rng.random_range(-PI..PI),
        };
        let mut scene = crop_to_radius(&local.moved_by(&world), template.radius)?;
        if scene.agents.len() < 2 {
            continue;
        }
        scene.map = scene
            .map
            .iter()
            .flat_map(|p| segment_polyline(p, MAX_SEGMENT_LENGTH))
            .map(|p| resample_polyline(&p, MAP_MIN_SPACING))
            .collect();
        return Ok(scene);
    }
    Err(Error::SamplingExhausted { what: format!("scene with at least two agents (seed {seed})"), proposals: SCENE_ROUNDS })
}

/// Scenes for `seeds`, alternating through `templates` by seed; output order follows `seeds`.
pub fn generate_dataset(templates: &[ScenarioTemplate], seeds: Range<u64>) -> Result<Vec<Scene>> {
    if templates.is_empty() {
        return Err(Error::Config("no scenario templates".into()));
    }
    crate::with_workers(|| {
        seeds
            .into_par_iter()
            .map(|s| generate_scene(&templates[(s % templates.len() as u64) as usize], s))
            .collect()
    })
}

/// Polyline kinds present, for summaries.
pub fn kind_histogram(scenes: &[Scene]) -> Vec<(PolylineKind, usize)> {
    PolylineKind::ALL
        .iter()
        .map(|&k| (k, scenes.iter().flat_map(|s| &s.map).filter(|p| p.kind == k).count()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::scene_to_line;

    #[test]
    fn deterministic_per_seed() {
        for t in default_templates() {
            let a = scene_to_line(&generate_scene(&t, 42).unwrap()).unwrap();
            let b = scene_to_line(&generate_scene(&t, 42).unwrap()).unwrap();
            assert_eq!(a, b);
            let c = scene_to_line(&generate_scene(&t, 43).unwrap()).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn constant_speed_vehicles_cover_v_times_t() {
        let t = ScenarioTemplate {
            vehicles: [3, 3],
            vehicle_speed: [10.0, 10.0],
            maneuver_rate: 0.0,
            parked_vehicles: [0, 0],
            pedestrians: [0, 0],
            cyclists: [0, 0],
            ..ScenarioTemplate::straight_road()
        };
        let s = generate_scene(&t, 5).unwrap();
        assert!(s.agents.len() >= 2);
        for a in &s.agents {
            let (p0, p9) = (a.states[0].position(), a.states[9].position());
            assert!((p0.dist(p9) - 9.0).abs() < 1e-9, "{}", p0.dist(p9));
            assert!((a.states[0].velocity().norm() - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn template_validation() {
        let mut t = ScenarioTemplate::straight_road();
        t.lane_width = 2.4;
        assert!(matches!(generate_scene(&t, 0), Err(Error::Config(_))));
        t = ScenarioTemplate { vehicles: [4, 2], ..ScenarioTemplate::straight_road() };
        assert!(t.validate().is_err());
        let err = toml_like_unknown_key();
        assert!(err.contains("unknown field"), "{err}");
    }

    fn toml_like_unknown_key() -> String {
        serde_json::from_str::<ScenarioTemplate>(r#"{"kind":"straight_road","lanes":3}"#).unwrap_err().to_string()
    }

    #[test]
    fn segments_are_bounded_and_share_endpoints() {
        let p = Polyline {
            kind: PolylineKind::LaneCenter,
            points: (0..=100).map(|i| Vec2::new(i as f64 * 0.5, 0.0)).collect(),
        };
        let segs = segment_polyline(&p, 20.0);
        assert_eq!(segs.len(), 3);
        for w in segs.windows(2) {
            assert_eq!(w[0].points.last(), w[1].points.first());
        }
        for s in &segs {
            assert!(s.points.windows(2).map(|w| w[0].dist(w[1])).sum::<f64>() <= 20.0 + 1e-9);
        }
    }
}
