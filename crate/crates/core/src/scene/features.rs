use super::{AgentKind, PolylineKind, Scene};
use crate::error::{Error, Result};

/// Per-step agent features: `x, y, cos h, sin h, vx, vy, length, width, valid`.
pub const AGENT_FEATURES: usize = 9;
/// Per-point map features: `x, y, dx, dy` then a one-hot polyline kind.
pub const MAP_FEATURES: usize = 4 + PolylineKind::ALL.len();

/// Numeric model inputs for one scene. Arrays are row-major and kept in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFeatures {
    pub history: usize,
    pub agent_ids: Vec<String>,
    pub agent_kinds: Vec<AgentKind>,
    /// `agents × history × AGENT_FEATURES`.
    pub agent_tokens: Vec<f64>,
    /// `agents × history`, true where the step was observed.
    pub agent_step_mask: Vec<bool>,
    pub polyline_kinds: Vec<PolylineKind>,
    /// Padded points per polyline.
    pub max_points: usize,
    /// `polylines × max_points × MAP_FEATURES`.
    pub polyline_tokens: Vec<f64>,
    /// `polylines × max_points`, true for real (non-padding) points.
    pub point_mask: Vec<bool>,
}

impl SceneFeatures {
    pub fn num_agents(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn num_polylines(&self) -> usize {
        self.polyline_kinds.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.num_agents() + self.num_polylines()
    }

    pub fn agent_row(&self, agent: usize, step: usize) -> &[f64] {
        let o = (agent * self.history + step) * AGENT_FEATURES;
        &self.agent_tokens[o..o + AGENT_FEATURES]
    }

    pub fn point_row(&self, polyline: usize, point: usize) -> &[f64] {
        let o = (polyline * self.max_points + point) * MAP_FEATURES;
        &self.polyline_tokens[o..o + MAP_FEATURES]
    }
}

/// Builds model inputs from an ego-frame, cropped scene whose `observed`
/// flags carry the visibility annotation of the active regime.
///
/// Agents observed at one or more history steps become tokens; their
/// unobserved steps are zero rows.
pub fn featurize(scene: &Scene) -> Result<SceneFeatures> {
    let h = scene.history;
    let mut f = SceneFeatures {
        history: h,
        agent_ids: Vec::new(),
        agent_kinds: Vec::new(),
        agent_tokens: Vec::new(),
        agent_step_mask: Vec::new(),
        polyline_kinds: Vec::new(),
        max_points: scene.map.iter().map(|p| p.points.len()).max().unwrap_or(0),
        polyline_tokens: Vec::new(),
        point_mask: Vec::new(),
    };
    for a in scene.agents.iter().filter(|a| (0..h).any(|t| a.observed_at(t))) {
        f.agent_ids.push(a.id.clone());
        f.agent_kinds.push(a.kind);
        for t in 0..h {
            match a.state_at(t).filter(|s| s.observed) {
                Some(s) => {
                    f.agent_tokens.extend_from_slice(&[
                        s.x,
                        s.y,
                        s.heading.cos(),
                        s.heading.sin(),
                        s.vx,
                        s.vy,
                        a.length,
                        a.width,
                        1.0,
                    ]);
                    f.agent_step_mask.push(true);
                }
                None => {
                    f.agent_tokens.extend_from_slice(&[0.0; AGENT_FEATURES]);
                    f.agent_step_mask.push(false);
                }
            }
        }
    }
    for pl in &scene.map {
        f.polyline_kinds.push(pl.kind);
        let n = pl.points.len();
        for i in 0..f.max_points {
            if i < n {
                let p = pl.points[i];
                let d = if i + 1 < n { pl.points[i + 1] - p } else { super::Vec2::ZERO };
                let mut row = [0.0; MAP_FEATURES];
                row[..4].copy_from_slice(&[p.x, p.y, d.x, d.y]);
                row[4 + pl.kind.index()] = 1.0;
                f.polyline_tokens.extend_from_slice(&row);
                f.point_mask.push(true);
            } else {
                f.polyline_tokens.extend_from_slice(&[0.0; MAP_FEATURES]);
                f.point_mask.push(false);
            }
        }
    }
    if f.num_tokens() == 0 {
        return Err(Error::EmptyScene);
    }
    if !f.agent_tokens.iter().chain(&f.polyline_tokens).all(|x| x.is_finite()) {
        return Err(Error::InvalidArgument(format!("scene {} has non-finite features", scene.scene_id)));
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::super::tests::small_scene;
    use super::super::{to_ego_frame, Polyline, Vec2};
    use super::*;

    #[test]
    fn counts_and_history_mask() {
        let mut s = to_ego_frame(&small_scene()).unwrap();
        let mut c = s.agents[1].clone();
        c.id = "c".into();
        for st in c.states.iter_mut().take(6) {
            st.observed = false;
        }
        s.agents.push(c);
        let mut hidden = s.agents[1].clone();
        hidden.id = "hidden".into();
        hidden.states[9].observed = false;
        s.agents.push(hidden);
        let mut unseen = s.agents[1].clone();
        unseen.id = "unseen".into();
        for st in &mut unseen.states {
            st.observed = false;
        }
        s.agents.push(unseen);
        s.map = (0..5)
            .map(|i| Polyline { kind: PolylineKind::Crosswalk, points: vec![Vec2::new(i as f64, 1.0); i + 1] })
            .collect();
        let f = featurize(&s).unwrap();
        assert_eq!(f.num_agents(), 4);
        assert!(!f.agent_ids.iter().any(|id| id == "unseen"));
        assert!(!f.agent_step_mask[39]);
        assert_eq!(f.num_polylines(), 5);
        assert_eq!(f.max_points, 5);
        let mask: Vec<bool> = f.agent_step_mask[20..30].to_vec();
        assert_eq!(mask, [vec![false; 6], vec![true; 4]].concat());
        assert!(f.agent_row(2, 0).iter().all(|&x| x == 0.0));
        assert_eq!(f.agent_row(2, 9)[8], 1.0);
    }

    #[test]
    fn last_point_vector_is_zero_and_padding_is_zero() {
        let mut s = to_ego_frame(&small_scene()).unwrap();
        s.map = vec![
            Polyline { kind: PolylineKind::StopSign, points: vec![Vec2::new(1.0, 2.0)] },
            Polyline { kind: PolylineKind::LaneCenter, points: vec![Vec2::new(0.0, 0.0), Vec2::new(3.0, 4.0)] },
        ];
        let f = featurize(&s).unwrap();
        assert_eq!(f.point_row(0, 0)[..4], [1.0, 2.0, 0.0, 0.0]);
        assert_eq!(f.point_row(0, 0)[4 + PolylineKind::StopSign.index()], 1.0);
        assert!(!f.point_mask[1]);
        assert!(f.point_row(0, 1).iter().all(|&x| x == 0.0));
        assert_eq!(f.point_row(1, 0)[..4], [0.0, 0.0, 3.0, 4.0]);
        assert_eq!(f.point_row(1, 1)[2..4], [0.0, 0.0]);
    }

    #[test]
    fn empty_scene_is_rejected() {
        let mut s = to_ego_frame(&small_scene()).unwrap();
        s.map.clear();
        for st in s.agents.iter_mut().flat_map(|a| a.states.iter_mut()) {
            st.observed = false;
        }
        assert!(matches!(featurize(&s), Err(Error::EmptyScene)));
    }
}
