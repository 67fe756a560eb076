use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};
use crate::scene::{SceneFeatures, Vec2, AGENT_FEATURES, MAP_FEATURES};

/// Positions are divided by this before entering the network.
pub const POSITION_SCALE: f64 = 20.0;
const VELOCITY_SCALE: f64 = 10.0;
const DIMENSION_SCALE: f64 = 5.0;
const POINT_STEP_SCALE: f64 = 2.0;
/// Sinusoidal bands per coordinate; wavelengths halve from 128 m.
pub const POSITION_BANDS: usize = 8;
const LONGEST_WAVELENGTH: f64 = 128.0;
/// Network inputs per history step: the scaled features then the
/// sinusoidal position code.
pub const AGENT_INPUTS: usize = AGENT_FEATURES + 4 * POSITION_BANDS;
/// Network inputs per anchor.
pub const ANCHOR_INPUTS: usize = 2 + 4 * POSITION_BANDS;

/// Appends `sin, cos` of each coordinate at every band.
fn position_code(p: Vec2, out: &mut Vec<f64>) {
    for b in 0..POSITION_BANDS {
        let w = std::f64::consts::TAU * (1u32 << b) as f64 / LONGEST_WAVELENGTH;
        for v in [p.x, p.y] {
            let (s, c) = (w * v).sin_cos();
            out.extend([s, c]);
        }
    }
}

/// Flattened histories of the agents of one kind.
#[derive(Clone, Debug)]
pub struct AgentGroup<T> {
    /// `[n, H * AGENT_INPUTS]`, time-major within a row.
    pub rows: Tensor<T>,
    /// Position of each row in the feature agent order.
    pub indices: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct PolylineBatch<T> {
    /// `[count * max_points, MAP_FEATURES]`
    pub points: Tensor<T>,
    /// One flag per point row, true for padding.
    pub padding: Vec<bool>,
    pub count: usize,
    pub max_points: usize,
}

/// Scaled network inputs for one scene.
#[derive(Clone, Debug)]
pub struct ModelInputs<T> {
    pub history: usize,
    pub agents_by_kind: Vec<Option<AgentGroup<T>>>,
    pub polylines: Option<PolylineBatch<T>>,
}

fn scale_agent(row: &[f64], observed: bool, out: &mut Vec<f64>) {
    let s = [
        POSITION_SCALE,
        POSITION_SCALE,
        1.0,
        1.0,
        VELOCITY_SCALE,
        VELOCITY_SCALE,
        DIMENSION_SCALE,
        DIMENSION_SCALE,
        1.0,
    ];
    out.extend(row.iter().zip(s).map(|(v, s)| v / s));
    if observed {
        position_code(Vec2::new(row[0], row[1]), out);
    } else {
        out.extend([0.0; 4 * POSITION_BANDS]);
    }
}

fn scale_point(row: &[f64], out: &mut Vec<f64>) {
    out.extend(row.iter().enumerate().map(|(i, v)| match i {
        0 | 1 => v / POSITION_SCALE,
        2 | 3 => v / POINT_STEP_SCALE,
        _ => *v,
    }));
}

impl<T: Real> ModelInputs<T> {
    pub fn new(f: &SceneFeatures) -> Result<Self> {
        if f.num_tokens() == 0 {
            return Err(Error::EmptyScene);
        }
        let h = f.history;
        let mut agents_by_kind = Vec::new();
        for kind in crate::scene::AgentKind::ALL {
            let indices: Vec<usize> = (0..f.num_agents()).filter(|&a| f.agent_kinds[a] == kind).collect();
            if indices.is_empty() {
                agents_by_kind.push(None);
                continue;
            }
            let mut data = Vec::with_capacity(indices.len() * h * AGENT_INPUTS);
            for &a in &indices {
                for t in 0..h {
                    scale_agent(f.agent_row(a, t), f.agent_step_mask[a * h + t], &mut data);
                }
            }
            let rows = Tensor::from_f64(&[indices.len(), h * AGENT_INPUTS], &data)?;
            agents_by_kind.push(Some(AgentGroup { rows, indices }));
        }
        let polylines = if f.num_polylines() == 0 {
            None
        } else {
            let (m, p) = (f.num_polylines(), f.max_points);
            let mut data = Vec::with_capacity(m * p * MAP_FEATURES);
            for i in 0..m {
                for j in 0..p {
                    scale_point(f.point_row(i, j), &mut data);
                }
            }
            Some(PolylineBatch {
                points: Tensor::from_f64(&[m * p, MAP_FEATURES], &data)?,
                padding: f.point_mask.iter().map(|v| !v).collect(),
                count: m,
                max_points: p,
            })
        };
        Ok(Self { history: h, agents_by_kind, polylines })
    }
}

/// Anchor inputs `[n, ANCHOR_INPUTS]`: scaled coordinates then the position code.
pub fn anchor_tensor<T: Real>(anchors: &[Vec2]) -> Result<Tensor<T>> {
    if anchors.iter().any(|a| !a.x.is_finite() || !a.y.is_finite()) {
        return Err(Error::InvalidArgument("non-finite anchor position".into()));
    }
    let mut data = Vec::with_capacity(anchors.len() * ANCHOR_INPUTS);
    for a in anchors {
        data.extend([a.x / POSITION_SCALE, a.y / POSITION_SCALE]);
        position_code(*a, &mut data);
    }
    Tensor::from_f64(&[anchors.len(), ANCHOR_INPUTS], &data)
}
