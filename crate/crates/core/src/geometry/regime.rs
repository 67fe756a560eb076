use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{shadow_polygon, Footprint, ShadowPolygon};
use crate::error::{Error, Result};
use crate::scene::Scene;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegimeMode {
    Full,
    Partial(f64),
    Limited,
    SingleOccluder,
}

impl fmt::Display for RegimeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegimeMode::Full => write!(f, "full"),
            RegimeMode::Partial(p) => write!(f, "partial:{p}"),
            RegimeMode::Limited => write!(f, "limited"),
            RegimeMode::SingleOccluder => write!(f, "single_occluder"),
        }
    }
}

/// Accepts `full`, `limited`, `single_occluder` and `partial:<p>` with `p` in `[0, 1]`.
impl FromStr for RegimeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "limited" => Ok(Self::Limited),
            "single_occluder" => Ok(Self::SingleOccluder),
            _ => {
                let p = s
                    .strip_prefix("partial:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown regime `{s}`")))?;
                Self::partial(p)
            }
        }
    }
}

impl RegimeMode {
    pub fn partial(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("partial fraction {p} outside [0, 1]")));
        }
        Ok(Self::Partial(p))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObservabilityRegime {
    pub mode: RegimeMode,
    pub seed: u64,
}

/// Indices of the agents that act as occluders under `regime`.
///
/// For `partial(p)` one uniform is drawn per agent in list order, so the
/// occluder sets for increasing `p` are nested under a fixed seed.
pub fn regime_occluders(scene: &Scene, regime: &ObservabilityRegime) -> Result<Vec<usize>> {
    let others: Vec<usize> = (0..scene.agents.len()).filter(|&i| scene.agents[i].id != scene.ego_id).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(regime.seed);
    Ok(match regime.mode {
        RegimeMode::Full => Vec::new(),
        RegimeMode::Limited => others,
        RegimeMode::Partial(p) => {
            let u: Vec<f64> = (0..scene.agents.len()).map(|_| rng.random::<f64>()).collect();
            others.into_iter().filter(|&i| u[i] < p).collect()
        }
        RegimeMode::SingleOccluder => {
            if scene.agents.len() < 2 {
                return Err(Error::InvalidArgument("single_occluder needs at least two agents".into()));
            }
            vec![others[rng.random_range(0..others.len())]]
        }
    })
}

/// Per-agent, per-step visibility given a set of occluder indices.
///
/// A state is hidden iff its center is behind (or inside) an active occluder
/// other than itself, seen from the ego at that same step. The ego is always
/// visible.
pub fn visibility_with(scene: &Scene, occluders: &[usize]) -> Vec<Vec<bool>> {
    let ego = scene.ego();
    scene
        .agents
        .iter()
        .enumerate()
        .map(|(j, a)| {
            a.states
                .iter()
                .map(|s| {
                    if a.id == scene.ego_id {
                        return true;
                    }
                    let Some(eye) = ego.and_then(|e| e.state_at(s.t as usize)).map(|e| e.position()) else {
                        return true;
                    };
                    !occluders.iter().filter(|&&k| k != j).any(|&k| {
                        let occ = &scene.agents[k];
                        occ.state_at(s.t as usize).is_some_and(|os| {
                            let fp = Footprint::of(occ, os);
                            !fp.contains(eye) && fp.intersects_segment(eye, s.position())
                        })
                    })
                })
                .collect()
        })
        .collect()
}

/// Applies visibility for an explicit occluder set. Shadows are built at the
/// prediction step from the ego's position then.
pub fn apply_regime_with(scene: &Scene, occluders: &[usize]) -> Result<(Scene, Vec<ShadowPolygon>)> {
    let vis = visibility_with(scene, occluders);
    let mut out = scene.clone();
    for (a, flags) in out.agents.iter_mut().zip(vis) {
        for (s, v) in a.states.iter_mut().zip(flags) {
            s.observed = v;
        }
    }
    let t = scene.prediction_step();
    let eye = scene.ego_frame()?.origin;
    let mut shadows = Vec::new();
    for &k in occluders {
        let occ = &scene.agents[k];
        if let Some(st) = occ.state_at(t) {
            let fp = Footprint::of(occ, st);
            if fp.contains(eye) {
                continue;
            }
            if let Some(p) = shadow_polygon(eye, &fp, scene.radius, &occ.id)? {
                shadows.push(p);
            }
        }
    }
    out.occlusions = Some(shadows.iter().map(ShadowPolygon::to_record).collect());
    Ok((out, shadows))
}

pub fn apply_regime(scene: &Scene, regime: &ObservabilityRegime) -> Result<(Scene, Vec<ShadowPolygon>)> {
    apply_regime_with(scene, &regime_occluders(scene, regime)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{to_ego_frame, AgentKind, AgentState, AgentTrack, Polyline, Scene};

    fn parked(id: &str, x: f64, y: f64) -> AgentTrack {
        AgentTrack {
            id: id.into(),
            kind: AgentKind::Vehicle,
            length: 4.5,
            width: 2.0,
            states: (0..50).map(|t| AgentState { t, x, y, heading: 0.0, vx: 0.0, vy: 0.0, observed: true }).collect(),
        }
    }

    fn row_scene() -> Scene {
        Scene {
            scene_id: "row".into(),
            dt: 0.1,
            history: 10,
            future: 40,
            ego_id: "ego".into(),
            radius: 60.0,
            agents: vec![parked("ego", 0.0, 0.0), parked("near", 10.0, 0.0), parked("far", 20.0, 0.0), parked("side", 0.0, 15.0)],
            map: Vec::<Polyline>::new(),
            occlusions: None,
            anchors: None,
        }
    }

    fn observed(s: &Scene) -> Vec<&str> {
        s.agents.iter().filter(|a| a.observed_at(s.prediction_step())).map(|a| a.id.as_str()).collect()
    }

    #[test]
    fn full_regime_has_no_shadows() {
        let s = to_ego_frame(&row_scene()).unwrap();
        let (out, shadows) = apply_regime(&s, &ObservabilityRegime { mode: RegimeMode::Full, seed: 1 }).unwrap();
        assert!(shadows.is_empty());
        assert_eq!(observed(&out).len(), 4);
    }

    #[test]
    fn limited_regime_hides_agents_behind_others() {
        let s = row_scene();
        let (out, shadows) = apply_regime(&s, &ObservabilityRegime { mode: RegimeMode::Limited, seed: 1 }).unwrap();
        assert_eq!(shadows.len(), 3);
        assert_eq!(observed(&out), vec!["ego", "near", "side"]);
    }

    #[test]
    fn single_occluder_needs_two_agents() {
        let mut s = row_scene();
        s.agents.truncate(1);
        let r = ObservabilityRegime { mode: RegimeMode::SingleOccluder, seed: 3 };
        assert!(apply_regime(&s, &r).is_err());
        let s = row_scene();
        assert_eq!(regime_occluders(&s, &r).unwrap().len(), 1);
    }

    #[test]
    fn regime_names_parse() {
        assert_eq!("partial:0.25".parse::<RegimeMode>().unwrap(), RegimeMode::Partial(0.25));
        assert!("partial:1.5".parse::<RegimeMode>().is_err());
        assert!("foggy".parse::<RegimeMode>().is_err());
        for m in [RegimeMode::Full, RegimeMode::Limited, RegimeMode::SingleOccluder, RegimeMode::Partial(0.5)] {
            assert_eq!(m.to_string().parse::<RegimeMode>().unwrap(), m);
        }
    }
}
