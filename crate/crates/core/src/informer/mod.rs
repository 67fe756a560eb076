//! The occlusion-aware encoder/decoder: per-kind agent encoders, a point-set
//! polyline encoder, a transformer over scene tokens, and an anchor decoder
//! with occupancy, mode and trajectory heads.

mod config;
mod inputs;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::nn::{DecoderLayer, EncoderLayer, LayerNorm, Mlp};
use crate::numerics::{Graph, ParamStore, Real, Var};
use crate::scene::{AgentKind, SceneFeatures, Vec2, MAP_FEATURES};

pub use config::ModelConfig;
pub use inputs::{
    anchor_tensor, AgentGroup, ModelInputs, PolylineBatch, AGENT_INPUTS, ANCHOR_INPUTS, POSITION_BANDS, POSITION_SCALE,
};

/// Trajectory parameters per step: `mu_x, mu_y, sigma_x, sigma_y, rho`.
pub const GAUSSIAN_PARAMS: usize = 5;
/// Raw mean outputs are multiplied by this to give meters.
pub const MEAN_SCALE: f64 = 10.0;
pub const SIGMA_MIN: f64 = 1e-2;
pub const SIGMA_MAX: f64 = 1e2;
pub const RHO_LIMIT: f64 = 0.999;

#[derive(Clone, Debug)]
pub struct Informer {
    pub config: ModelConfig,
    agent_encoders: Vec<Mlp>,
    point_encoder: Mlp,
    anchor_encoder: Mlp,
    encoder: Vec<EncoderLayer>,
    encoder_norm: LayerNorm,
    decoder: Vec<DecoderLayer>,
    decoder_norm: LayerNorm,
    occupancy_head: Mlp,
    mode_head: Mlp,
    trajectory_head: Mlp,
}

/// Raw head outputs for `n` anchors.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutputs {
    /// `[n, 1]`
    pub occupancy_logit: Var,
    /// `[n, K]`
    pub mode_logits: Var,
    /// `[n, K * P * 5]`, row-major over (mode, step, parameter).
    pub trajectory_raw: Var,
}

/// Constrained Gaussian parameters as graph nodes, each `[rows, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVars {
    pub mu_x: Var,
    pub mu_y: Var,
    pub sigma_x: Var,
    pub sigma_y: Var,
    pub rho: Var,
}

/// Decoded prediction for one anchor. Means are absolute positions in the
/// frame of the anchor coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorPrediction {
    pub p_occ: f64,
    pub mode_probs: Vec<f64>,
    /// `K` modes of `P` steps of `[mu_x, mu_y, sigma_x, sigma_y, rho]`.
    pub trajectories: Vec<Vec<[f64; 5]>>,
}

impl AnchorPrediction {
    pub fn mode_means(&self, k: usize) -> impl Iterator<Item = Vec2> + '_ {
        self.trajectories[k].iter().map(|g| Vec2::new(g[0], g[1]))
    }
}

impl Informer {
    pub fn new<T: Real>(config: ModelConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let agent_in = config.history * AGENT_INPUTS;
        let agent_encoders = AgentKind::ALL
            .iter()
            .map(|k| Mlp::new(store, &format!("agent_encoder.{}", kind_name(*k)), agent_in, d, d, rng))
            .collect();
        let point_encoder = Mlp::new(store, "polyline_encoder", MAP_FEATURES, d, d, rng);
        let anchor_encoder = Mlp::new(store, "anchor_encoder", ANCHOR_INPUTS, d, d, rng);
        let encoder = (0..config.enc_layers)
            .map(|i| EncoderLayer::new(store, &format!("encoder.{i}"), d, config.enc_heads, config.ff_dim, rng))
            .collect::<Result<_>>()?;
        let encoder_norm = LayerNorm::new(store, "encoder.norm", d);
        let decoder = (0..config.dec_layers)
            .map(|i| DecoderLayer::new(store, &format!("decoder.{i}"), d, config.enc_heads, config.ff_dim, rng))
            .collect::<Result<_>>()?;
        let decoder_norm = LayerNorm::new(store, "decoder.norm", d);
        let traj_out = config.modes * config.future * GAUSSIAN_PARAMS;
        Ok(Self {
            occupancy_head: Mlp::new(store, "head.occupancy", d, d, 1, rng),
            mode_head: Mlp::new(store, "head.mode", d, d, config.modes, rng),
            trajectory_head: Mlp::new(store, "head.trajectory", d, d, traj_out, rng),
            config,
            agent_encoders,
            point_encoder,
            anchor_encoder,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
        })
    }

    /// One embedding per scene token: agents first (in feature order), then polylines.
    pub fn encode_scene<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, inputs: &ModelInputs<T>) -> Result<Var> {
        if inputs.history != self.config.history {
            return Err(Error::Shape {
                op: "encode_scene",
                detail: format!("inputs have {} history steps, model expects {}", inputs.history, self.config.history),
            });
        }
        let mut parts = Vec::new();
        let mut order = Vec::new();
        for (k, enc) in self.agent_encoders.iter().enumerate() {
            if let Some(group) = &inputs.agents_by_kind[k] {
                let x = g.constant(group.rows.clone());
                parts.push(enc.forward(g, store, x)?);
                order.extend_from_slice(&group.indices);
            }
        }
        let mut tokens = Vec::new();
        if !parts.is_empty() {
            let stacked = if parts.len() == 1 { parts[0] } else { g.concat(&parts, 0)? };
            // row r of `stacked` is agent order[r]; invert to restore feature order
            let mut inverse = vec![0; order.len()];
            for (r, &a) in order.iter().enumerate() {
                inverse[a] = r;
            }
            tokens.push(g.gather_rows(stacked, &inverse)?);
        }
        if let Some(p) = &inputs.polylines {
            let d = self.config.d_model;
            let x = g.constant(p.points.clone());
            let h = self.point_encoder.forward(g, store, x)?;
            let mask: Vec<bool> = p.padding.iter().flat_map(|&m| std::iter::repeat_n(m, d)).collect();
            let h = g.masked_fill(h, &mask, f64::NEG_INFINITY)?;
            let h = g.reshape(h, &[p.count, p.max_points, d])?;
            tokens.push(g.max_pool(h, 1)?);
        }
        if tokens.is_empty() {
            return Err(Error::EmptyScene);
        }
        let mut x = if tokens.len() == 1 { tokens[0] } else { g.concat(&tokens, 0)? };
        for layer in &self.encoder {
            x = layer.forward(g, store, x, None)?;
        }
        self.encoder_norm.forward(g, store, x)
    }

    /// `anchors` holds scaled anchor coordinates `[n, 2]` (see [`anchor_tensor`]).
    pub fn decode_anchors<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        anchors: Var,
        scene: Var,
    ) -> Result<HeadOutputs> {
        if g.shape(anchors).first().copied().unwrap_or(0) == 0 {
            return Err(Error::InvalidArgument("decoder needs at least one anchor".into()));
        }
        let mut x = self.anchor_encoder.forward(g, store, anchors)?;
        for layer in &self.decoder {
            x = layer.forward(g, store, x, scene, None)?;
        }
        let x = self.decoder_norm.forward(g, store, x)?;
        Ok(HeadOutputs {
            occupancy_logit: self.occupancy_head.forward(g, store, x)?,
            mode_logits: self.mode_head.forward(g, store, x)?,
            trajectory_raw: self.trajectory_head.forward(g, store, x)?,
        })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        inputs: &ModelInputs<T>,
        anchors: &[Vec2],
    ) -> Result<HeadOutputs> {
        let scene = self.encode_scene(g, store, inputs)?;
        let a = g.constant(anchor_tensor(anchors)?);
        self.decode_anchors(g, store, a, scene)
    }

    /// Applies the constraint maps to the rows `rows` of the `[n*K*P, 5]`
    /// view of the trajectory output. Means stay offsets from the anchor.
    pub fn gaussians<T: Real>(&self, g: &mut Graph<T>, raw: Var, rows: Option<&[usize]>) -> Result<GaussianVars> {
        let n = g.value(raw).len() / GAUSSIAN_PARAMS;
        let flat = g.reshape(raw, &[n, GAUSSIAN_PARAMS])?;
        let flat = match rows {
            Some(r) => g.gather_rows(flat, r)?,
            None => flat,
        };
        let col = |g: &mut Graph<T>, c: usize| g.slice(flat, 1, c, c + 1);
        let (mx, my, sx, sy, r) = (col(g, 0)?, col(g, 1)?, col(g, 2)?, col(g, 3)?, col(g, 4)?);
        let sigma = |g: &mut Graph<T>, v: Var| {
            let e = g.exp(v);
            g.clamp(e, SIGMA_MIN, SIGMA_MAX)
        };
        let rho = g.tanh(r);
        Ok(GaussianVars {
            mu_x: g.scale(mx, MEAN_SCALE),
            mu_y: g.scale(my, MEAN_SCALE),
            sigma_x: sigma(g, sx),
            sigma_y: sigma(g, sy),
            rho: g.scale(rho, RHO_LIMIT),
        })
    }

    /// Reads decoded predictions off a finished forward pass.
    pub fn decode_predictions<T: Real>(&self, g: &Graph<T>, out: &HeadOutputs, anchors: &[Vec2]) -> Vec<AnchorPrediction> {
        let (k, p) = (self.config.modes, self.config.future);
        let occ = g.value(out.occupancy_logit).data();
        let modes = g.value(out.mode_logits).data();
        let traj = g.value(out.trajectory_raw).data();
        anchors
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let logits: Vec<f64> = modes[i * k..(i + 1) * k].iter().map(|x| x.as_f64()).collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                let trajectories = (0..k)
                    .map(|j| {
                        (0..p)
                            .map(|s| {
                                let o = ((i * k + j) * p + s) * GAUSSIAN_PARAMS;
                                let r = |c: usize| traj[o + c].as_f64();
                                [
                                    a.x + MEAN_SCALE * r(0),
                                    a.y + MEAN_SCALE * r(1),
                                    r(2).exp().clamp(SIGMA_MIN, SIGMA_MAX),
                                    r(3).exp().clamp(SIGMA_MIN, SIGMA_MAX),
                                    RHO_LIMIT * r(4).tanh(),
                                ]
                            })
                            .collect()
                    })
                    .collect();
                AnchorPrediction {
                    p_occ: 1.0 / (1.0 + (-occ[i].as_f64()).exp()),
                    mode_probs: e.iter().map(|x| x / z).collect(),
                    trajectories,
                }
            })
            .collect()
    }

    /// Forward pass and decoding in one call.
    pub fn predict<T: Real>(
        &self,
        store: &ParamStore<T>,
        features: &SceneFeatures,
        anchors: &[Vec2],
    ) -> Result<Vec<AnchorPrediction>> {
        let inputs = ModelInputs::new(features)?;
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, &inputs, anchors)?;
        Ok(self.decode_predictions(&g, &out, anchors))
    }
}

fn kind_name(k: AgentKind) -> &'static str {
    match k {
        AgentKind::Vehicle => "vehicle",
        AgentKind::Pedestrian => "pedestrian",
        AgentKind::Cyclist => "cyclist",
    }
}

/// Trainable scalar count for `config`.
pub fn parameter_count(config: &ModelConfig) -> Result<usize> {
    use rand::SeedableRng;
    let mut store = ParamStore::<f32>::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    Informer::new(config.clone(), &mut store, &mut rng)?;
    Ok(store.num_scalars())
}
