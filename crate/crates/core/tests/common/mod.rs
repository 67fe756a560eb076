//! Helpers shared by the integration and acceptance targets: finite-difference
//! gradient checking, an independent occlusion oracle and scene utilities.
//!
//! Analytic gradients come from a float32 graph. Reference derivatives are
//! float64 central differences at the same (float32-representable) point.

#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scene_informer::geometry::RegimeMode;
use scene_informer::informer::{Informer, ModelConfig, ModelInputs};
use scene_informer::numerics::nn::{DecoderLayer, EncoderLayer, LayerNorm, Linear, Mlp, MultiHeadAttention};
use scene_informer::numerics::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use scene_informer::scene::{SceneFeatures, Vec2, AGENT_FEATURES, MAP_FEATURES};
use scene_informer::synth::{default_templates, generate_scene};
use scene_informer::train::{build_sample, graph_loss, Balance, Sample, SampleSpec};
use scene_informer::Result;

/// Central-difference step.
pub const STEP: f64 = 1e-4;
/// Acceptance bound on the relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Gradient scales below this are compared absolutely.
pub const FLOOR: f64 = 1e-2;
/// Central differences at `h`, `h/2` and `h/4` of a smooth function have
/// successive gaps in ratio 4:1. A relative residual above this marks a kink
/// inside the stencil large enough to move the reference by a tenth of the
/// tolerance.
pub const KINK_TOLERANCE: f64 = 1e-5;

/// Largest deviation over one tensor's checked entries, relative to the
/// largest derivative magnitude in that tensor.
pub fn relative_error(pairs: &[(f64, f64)]) -> f64 {
    let dev = pairs.iter().map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = pairs.iter().map(|(a, n)| a.abs().max(n.abs())).fold(FLOOR, f64::max);
    dev / scale
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Case {
    Matmul,
    Add,
    Sub,
    Mul,
    Div,
    AddRow,
    Scale,
    AddScalar,
    Concat,
    Slice,
    Transpose,
    Reshape,
    Relu,
    Tanh,
    Exp,
    Log,
    Sigmoid,
    LogSigmoid,
    Clamp,
    Softmax,
    LogSoftmax,
    LayerNormOp,
    MaxPool,
    MaskedFill,
    GatherRows,
    Sum,
    Mean,
    Linear,
    LayerNorm,
    Mlp,
    Attention,
    MaskedAttention,
    Encoder,
    Decoder,
    ModelLoss,
}

impl Case {
    pub const OPS: [Case; 27] = [
        Case::Matmul,
        Case::Add,
        Case::Sub,
        Case::Mul,
        Case::Div,
        Case::AddRow,
        Case::Scale,
        Case::AddScalar,
        Case::Concat,
        Case::Slice,
        Case::Transpose,
        Case::Reshape,
        Case::Relu,
        Case::Tanh,
        Case::Exp,
        Case::Log,
        Case::Sigmoid,
        Case::LogSigmoid,
        Case::Clamp,
        Case::Softmax,
        Case::LogSoftmax,
        Case::LayerNormOp,
        Case::MaxPool,
        Case::MaskedFill,
        Case::GatherRows,
        Case::Sum,
        Case::Mean,
    ];
    pub const LAYERS: [Case; 7] = [
        Case::Linear,
        Case::LayerNorm,
        Case::Mlp,
        Case::Attention,
        Case::MaskedAttention,
        Case::Encoder,
        Case::Decoder,
    ];
}

enum Layer {
    None,
    Linear(Linear),
    Norm(LayerNorm),
    Mlp(Mlp),
    Attention(MultiHeadAttention, Vec<bool>),
    Encoder(EncoderLayer, Vec<bool>),
    Decoder(DecoderLayer, Vec<bool>),
    Model(Informer, Box<Sample>),
}

/// One random instance of a case: its inputs, parameters and the fixed
/// weights that reduce the output to a scalar.
pub struct Problem {
    pub case: Case,
    leaves: Vec<Tensor<f32>>,
    store: ParamStore<f32>,
    projection: Option<Tensor<f32>>,
    layer: Layer,
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    Tensor::from_f64(shape, &(0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>()).unwrap()
}

fn unit(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    uniform(shape, -1.0, 1.0, rng)
}

/// Output shape of each op case for the inputs built in [`Problem::new`].
fn output_shape(case: Case) -> Vec<usize> {
    match case {
        Case::Matmul => vec![3, 5],
        Case::Concat => vec![5, 4],
        Case::Slice => vec![3, 2],
        Case::Transpose => vec![4, 3],
        Case::Reshape => vec![2, 6],
        Case::MaxPool | Case::MaskedFill => vec![3, 4],
        Case::GatherRows => vec![5, 4],
        Case::Sum | Case::Mean => vec![1],
        Case::Linear => vec![4, 5],
        Case::LayerNorm | Case::Mlp | Case::Encoder => vec![4, 8],
        Case::Attention | Case::MaskedAttention | Case::Decoder => vec![3, 8],
        _ => vec![3, 4],
    }
}

impl Problem {
    pub fn new(case: Case, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut store = ParamStore::<f32>::new();
        let mut layer = Layer::None;
        let leaves = match case {
            Case::Matmul => vec![unit(&[3, 4], rng), unit(&[4, 5], rng)],
            Case::Add | Case::Sub | Case::Mul => vec![unit(&[3, 4], rng), unit(&[3, 4], rng)],
            Case::Div => vec![unit(&[3, 4], rng), uniform(&[3, 4], 0.5, 2.0, rng)],
            Case::AddRow => vec![unit(&[3, 4], rng), unit(&[4], rng)],
            Case::Concat => vec![unit(&[2, 4], rng), unit(&[3, 4], rng)],
            Case::Slice | Case::Transpose | Case::Reshape => vec![unit(&[3, 4], rng)],
            Case::Log => vec![uniform(&[3, 4], 0.5, 2.0, rng)],
            Case::Clamp | Case::Exp => vec![uniform(&[3, 4], -2.0, 2.0, rng)],
            Case::LayerNormOp => vec![unit(&[3, 4], rng), uniform(&[4], 0.5, 1.5, rng), unit(&[4], rng)],
            Case::MaxPool | Case::MaskedFill => vec![unit(&[3, 5, 4], rng)],
            Case::GatherRows => vec![unit(&[3, 4], rng)],
            Case::Linear => {
                layer = Layer::Linear(Linear::new(&mut store, "linear", 3, 5, rng));
                vec![unit(&[4, 3], rng)]
            }
            Case::LayerNorm => {
                layer = Layer::Norm(LayerNorm::new(&mut store, "norm", 8));
                vec![unit(&[4, 8], rng)]
            }
            Case::Mlp => {
                layer = Layer::Mlp(Mlp::new(&mut store, "mlp", 8, 16, 8, rng));
                vec![unit(&[4, 8], rng)]
            }
            Case::Attention | Case::MaskedAttention => {
                let mask = if case == Case::MaskedAttention { vec![false, true, false, false, true] } else { vec![false; 5] };
                layer = Layer::Attention(MultiHeadAttention::new(&mut store, "attn", 8, 2, rng)?, mask);
                vec![unit(&[3, 8], rng), unit(&[5, 8], rng)]
            }
            Case::Encoder => {
                layer = Layer::Encoder(EncoderLayer::new(&mut store, "enc", 8, 2, 16, rng)?, vec![false, false, true, false]);
                vec![unit(&[4, 8], rng)]
            }
            Case::Decoder => {
                layer = Layer::Decoder(DecoderLayer::new(&mut store, "dec", 8, 2, 16, rng)?, vec![false, true, false, false, false]);
                vec![unit(&[3, 8], rng), unit(&[5, 8], rng)]
            }
            Case::ModelLoss => {
                let (model, sample) = model_problem(&mut store, rng)?;
                layer = Layer::Model(model, Box::new(sample));
                Vec::new()
            }
            _ => vec![unit(&[3, 4], rng)],
        };
        // random (not uniform) reduction weights so every output entry matters differently
        let projection = (case != Case::ModelLoss).then(|| unit(&output_shape(case), rng));
        Ok(Self { case, leaves, store, projection, layer })
    }

    fn output<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: &[Var]) -> Result<Var> {
        Ok(match (&self.layer, self.case) {
            (_, Case::Matmul) => g.matmul(x[0], x[1])?,
            (_, Case::Add) => g.add(x[0], x[1])?,
            (_, Case::Sub) => g.sub(x[0], x[1])?,
            (_, Case::Mul) => g.mul(x[0], x[1])?,
            (_, Case::Div) => g.div(x[0], x[1])?,
            (_, Case::AddRow) => g.add_row(x[0], x[1])?,
            (_, Case::Scale) => g.scale(x[0], -1.7),
            (_, Case::AddScalar) => g.add_scalar(x[0], 0.3),
            (_, Case::Concat) => g.concat(&[x[0], x[1]], 0)?,
            (_, Case::Slice) => g.slice(x[0], 1, 1, 3)?,
            (_, Case::Transpose) => g.transpose(x[0])?,
            (_, Case::Reshape) => g.reshape(x[0], &[2, 6])?,
            (_, Case::Relu) => g.relu(x[0]),
            (_, Case::Tanh) => g.tanh(x[0]),
            (_, Case::Exp) => g.exp(x[0]),
            (_, Case::Log) => g.log(x[0]),
            (_, Case::Sigmoid) => g.sigmoid(x[0]),
            (_, Case::LogSigmoid) => g.log_sigmoid(x[0]),
            (_, Case::Clamp) => g.clamp(x[0], -1.0, 1.0),
            (_, Case::Softmax) => g.softmax(x[0]),
            (_, Case::LogSoftmax) => g.log_softmax(x[0]),
            (_, Case::LayerNormOp) => g.layer_norm(x[0], x[1], x[2], 1e-5)?,
            (_, Case::MaxPool) => g.max_pool(x[0], 1)?,
            (_, Case::MaskedFill) => {
                let mask: Vec<bool> = (0..60).map(|i| (i / 4) % 5 == 3).collect();
                let y = g.masked_fill(x[0], &mask, f64::NEG_INFINITY)?;
                g.max_pool(y, 1)?
            }
            (_, Case::GatherRows) => g.gather_rows(x[0], &[2, 0, 2, 1, 0])?,
            (_, Case::Sum) => g.sum(x[0]),
            (_, Case::Mean) => g.mean(x[0]),
            (Layer::Linear(l), _) => l.forward(g, store, x[0])?,
            (Layer::Norm(l), _) => l.forward(g, store, x[0])?,
            (Layer::Mlp(l), _) => l.forward(g, store, x[0])?,
            (Layer::Attention(l, mask), _) => l.forward(g, store, x[0], x[1], Some(mask))?,
            (Layer::Encoder(l, mask), _) => l.forward(g, store, x[0], Some(mask))?,
            (Layer::Decoder(l, mask), _) => l.forward(g, store, x[0], x[1], Some(mask))?,
            (Layer::Model(model, sample), _) => {
                let inputs = ModelInputs::<T>::new(&sample.features)?;
                let out = model.forward(g, store, &inputs, &sample.anchor_positions())?;
                graph_loss(g, model, &out, &sample.anchors.anchors, Balance::PerClass, None)?.0
            }
            (Layer::None, c) => unreachable!("{c:?} needs a layer"),
        })
    }

    /// Scalar objective at the given parameters and inputs.
    fn objective<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, leaves: &[Tensor<T>], track: bool) -> Result<(Var, Vec<Var>)> {
        let x: Vec<Var> = leaves.iter().map(|t| g.leaf(t.clone(), track)).collect();
        let y = self.output(g, store, &x)?;
        let loss = match &self.projection {
            Some(w) => {
                let w = g.constant(w.cast());
                let y = if g.shape(y).is_empty() { g.reshape(y, &[1])? } else { y };
                let y = g.reshape(y, g.shape(w).to_vec().as_slice())?;
                let p = g.mul(y, w)?;
                g.sum(p)
            }
            None => y,
        };
        Ok((loss, x))
    }

    fn value64(&self, store: &ParamStore<f64>, leaves: &[Tensor<f64>]) -> Result<f64> {
        let mut g = Graph::<f64>::new();
        let (loss, _) = self.objective(&mut g, store, leaves, false)?;
        Ok(g.value(loss).item())
    }
}

/// Which scalar a checked coordinate perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Coord {
    Leaf(usize, usize),
    Param(ParamId, usize),
}

#[derive(Clone, Debug, Default)]
pub struct Outcome {
    /// Largest relative error over the checked coordinates.
    pub max_error: f64,
    /// Coordinates compared.
    pub coords: usize,
    /// Coordinates skipped because a kink fell inside their stencil.
    pub screened: usize,
}

/// Compares analytic and numeric derivatives on every input coordinate and
/// on up to `param_coords` parameter coordinates (all if fewer exist).
pub fn check(problem: &Problem, param_coords: usize, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    // analytic side in f64 too, so f32 rounding in long reductions is not mistaken for a wrong derivative
    let base_store: ParamStore<f64> = problem.store.cast();
    let base_leaves: Vec<Tensor<f64>> = problem.leaves.iter().map(|t| t.cast()).collect();
    let mut g = Graph::<f64>::new();
    let (loss, leaf_vars) = problem.objective(&mut g, &base_store, &base_leaves, true)?;
    let grads = g.backward(loss)?;
    let mut pbuf = base_store.new_grad_buffer();
    g.backward_into(loss, &mut pbuf)?;

    let mut coords: Vec<Coord> = Vec::new();
    for (l, t) in problem.leaves.iter().enumerate() {
        coords.extend((0..t.len()).map(|i| Coord::Leaf(l, i)));
    }
    let ids: Vec<ParamId> = problem.store.ids().collect();
    let total: usize = ids.iter().map(|&id| problem.store.value(id).len()).sum();
    if total <= param_coords {
        for &id in &ids {
            coords.extend((0..problem.store.value(id).len()).map(|i| Coord::Param(id, i)));
        }
    } else {
        // one tensor at a time first, so small tensors are never skipped
        for k in 0..param_coords {
            let id = ids[if k < ids.len() { k } else { rng.random_range(0..ids.len()) }];
            coords.push(Coord::Param(id, rng.random_range(0..problem.store.value(id).len())));
        }
    }

    let mut out = Outcome::default();
    let mut groups: std::collections::BTreeMap<Coord, Vec<(f64, f64)>> = Default::default();
    let mut queue: std::collections::VecDeque<Coord> = coords.into();
    while let Some(c) = queue.pop_front() {
        let analytic = match c {
            Coord::Leaf(l, i) => grads.wrt(leaf_vars[l]).map_or(0.0, |d| d[i]),
            Coord::Param(id, i) => pbuf.get(id)[i],
        };
        let eval = |delta: f64| -> Result<f64> {
            match c {
                Coord::Leaf(l, i) => {
                    let mut leaves = base_leaves.clone();
                    leaves[l].data_mut()[i] += delta;
                    problem.value64(&base_store, &leaves)
                }
                Coord::Param(id, i) => {
                    let mut store = base_store.clone();
                    store.value_mut(id).data_mut()[i] += delta;
                    problem.value64(&store, &base_leaves)
                }
            }
        };
        let central = |h: f64| -> Result<f64> { Ok((eval(h)? - eval(-h)?) / (2.0 * h)) };
        let (wide, mid, narrow) = (central(STEP)?, central(STEP / 2.0)?, central(STEP / 4.0)?);
        let residual = (wide - mid) - 4.0 * (mid - narrow);
        if residual.abs() > KINK_TOLERANCE * wide.abs().max(FLOOR) {
            out.screened += 1;
            // sampled parameter coordinates are replaced by another entry of the same tensor
            if let (Coord::Param(id, _), true) = (c, total > param_coords && out.screened < 20 * param_coords.max(1)) {
                queue.push_back(Coord::Param(id, rng.random_range(0..problem.store.value(id).len())));
            }
            continue;
        }
        out.coords += 1;
        let key = match c {
            Coord::Leaf(l, _) => Coord::Leaf(l, 0),
            Coord::Param(id, _) => Coord::Param(id, 0),
        };
        groups.entry(key).or_default().push((analytic, wide));
    }
    out.max_error = groups.values().map(|p| relative_error(p)).fold(0.0, f64::max);
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Summary {
    pub case: Case,
    pub instances: usize,
    pub max_error: f64,
    pub coords: usize,
    pub screened: usize,
}

/// Checks `instances` random instances of `case`.
pub fn check_case(case: Case, instances: usize, param_coords: usize, seed: u64) -> Result<Summary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Summary { case, instances, max_error: 0.0, coords: 0, screened: 0 };
    for _ in 0..instances {
        let problem = Problem::new(case, &mut rng)?;
        let o = check(&problem, param_coords, &mut rng)?;
        s.coords += o.coords;
        s.screened += o.screened;
        s.max_error = s.max_error.max(o.max_error);
    }
    Ok(s)
}

fn model_problem(store: &mut ParamStore<f32>, rng: &mut ChaCha8Rng) -> Result<(Informer, Sample)> {
    let model = Informer::new(ModelConfig::desk(), store, rng)?;
    // give biases and norms non-trivial values so their gradients are generic
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        if store.value(id).rank() == 1 {
            for v in store.value_mut(id).data_mut() {
                *v += rng.random_range(-0.1f32..0.1);
            }
        }
    }
    let templates = default_templates();
    loop {
        let t = &templates[rng.random_range(0..templates.len())];
        let scene = generate_scene(t, rng.random())?;
        let spec = SampleSpec { regime: RegimeMode::SingleOccluder, occlusion_anchors: 12, seed: rng.random() };
        if let Ok(mut sample) = build_sample(&scene, &spec) {
            // keep the instance small: at most eight observed-agent anchors
            let mut observed = 0;
            sample.anchors.anchors.retain(|a| {
                if a.is_occlusion() {
                    return true;
                }
                observed += 1;
                observed <= 8
            });
            trim_features(&mut sample.features, 6, 10);
            // an occupied anchor with a random offset so the trajectory terms are active
            if let Some(a) = sample.anchors.anchors.iter_mut().find(|a| a.is_occlusion()) {
                let future: Vec<Vec2> =
                    (1..=model.config.future).map(|k| a.position + Vec2::new(0.3 * k as f64, -0.05 * k as f64)).collect();
                a.gt_occupied = true;
                a.gt_future = Some(future);
            }
            return Ok((model, sample));
        }
    }
}

/// Keeps the first `agents` agent tokens and `polylines` polyline tokens,
/// so fewer ReLU units sit near zero within the difference stencil.
fn trim_features(f: &mut SceneFeatures, agents: usize, polylines: usize) {
    let a = agents.min(f.num_agents());
    let p = polylines.min(f.num_polylines());
    let h = f.history;
    f.agent_ids.truncate(a);
    f.agent_kinds.truncate(a);
    f.agent_tokens.truncate(a * h * AGENT_FEATURES);
    f.agent_step_mask.truncate(a * h);
    f.polyline_kinds.truncate(p);
    f.polyline_tokens.truncate(p * f.max_points * MAP_FEATURES);
    f.point_mask.truncate(p * f.max_points);
}

/// Independent segment/rectangle test: clips the open segment `(p, q)`
/// against the footprint in its local frame (Liang-Barsky).
pub fn segment_hits_rectangle(p: Vec2, q: Vec2, center: Vec2, heading: f64, length: f64, width: f64) -> bool {
    let local = |v: Vec2| (v - center).rotate(-heading);
    let (a, b) = (local(p), local(q));
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (start, delta, half) in [(a.x, d.x, length / 2.0), (a.y, d.y, width / 2.0)] {
        for (s, dd) in [(start + half, delta), (half - start, -delta)] {
            // need s + t*dd >= 0
            if dd == 0.0 {
                if s < 0.0 {
                    return false;
                }
            } else if dd > 0.0 {
                t0 = t0.max(-s / dd);
            } else {
                t1 = t1.min(-s / dd);
            }
        }
    }
    t0 <= t1 && t1 > 0.0 && t0 < 1.0
}

/// Result of comparing a shadow polygon with the segment oracle.
#[derive(Clone, Copy, Debug, Default)]
pub struct ShadowAgreement {
    pub points: usize,
    pub agree: usize,
    /// Disagreements farther than the arc tolerance from the disk boundary.
    pub outside_band: usize,
}

/// Samples `n` uniform points in the disk of `radius` around the origin
/// (the ego) and compares membership.
pub fn shadow_agreement(
    footprint: &scene_informer::geometry::Footprint,
    radius: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<ShadowAgreement>> {
    use scene_informer::geometry::{arc_tolerance, shadow_polygon};
    let Some(shadow) = shadow_polygon(Vec2::ZERO, footprint, radius, "occluder")? else {
        return Ok(None);
    };
    let band = arc_tolerance(radius);
    let mut out = ShadowAgreement { points: n, ..Default::default() };
    for _ in 0..n {
        let r = radius * rng.random::<f64>().sqrt();
        let q = Vec2::from_angle(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)) * r;
        let oracle = segment_hits_rectangle(
            Vec2::ZERO,
            q,
            footprint.center,
            footprint.heading,
            footprint.length,
            footprint.width,
        );
        if oracle == shadow.contains(q) {
            out.agree += 1;
        } else if r < radius - band {
            out.outside_band += 1;
        }
    }
    Ok(Some(out))
}

/// Random footprint with its center 5-50 m from the origin.
pub fn random_footprint(rng: &mut ChaCha8Rng) -> scene_informer::geometry::Footprint {
    let center = Vec2::from_angle(rng.random_range(-PI..PI)) * rng.random_range(5.0..50.0);
    let length = rng.random_range(0.5..6.0);
    let width = rng.random_range(0.5..2.5);
    scene_informer::geometry::Footprint::new(center, rng.random_range(-PI..PI), length, width).unwrap()
}

/// Agents observed at the prediction step for each partial fraction in `ps`
/// under one seed.
pub fn observed_sets(scene: &scene_informer::scene::Scene, seed: u64, ps: &[f64]) -> Result<Vec<std::collections::BTreeSet<String>>> {
    use scene_informer::geometry::{apply_regime, ObservabilityRegime};
    let prepared = scene_informer::scene::prepare_scene(scene)?;
    ps.iter()
        .map(|&p| {
            let regime = ObservabilityRegime { mode: RegimeMode::partial(p)?, seed };
            let (s, _) = apply_regime(&prepared, &regime)?;
            let t = s.prediction_step();
            Ok(s.agents.iter().filter(|a| a.observed_at(t)).map(|a| a.id.clone()).collect())
        })
        .collect()
}

/// The scene with its agents and polylines in a random order.
pub fn shuffled(scene: &scene_informer::scene::Scene, rng: &mut ChaCha8Rng) -> scene_informer::scene::Scene {
    use rand::seq::SliceRandom;
    let mut s = scene.clone();
    s.agents.shuffle(rng);
    s.map.shuffle(rng);
    s
}

/// Largest absolute difference between two prediction lists.
pub fn max_gap(a: &[scene_informer::informer::AnchorPrediction], b: &[scene_informer::informer::AnchorPrediction]) -> f64 {
    let mut gap = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        gap = gap.max((x.p_occ - y.p_occ).abs());
        for (p, q) in x.mode_probs.iter().zip(&y.mode_probs) {
            gap = gap.max((p - q).abs());
        }
        for (s, t) in x.trajectories.iter().flatten().zip(y.trajectories.iter().flatten()) {
            for c in 0..5 {
                gap = gap.max((s[c] - t[c]).abs());
            }
        }
    }
    gap
}
