//! Composite anchor loss: mixture NLL for the assigned mode, mode
//! cross-entropy, and occupancy binary cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Anchor;
use crate::informer::{AnchorPrediction, HeadOutputs, Informer};
use crate::numerics::{Graph, Real, Tensor, Var};
use crate::scene::Vec2;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nll_traj: f64,
    pub ce_mode: f64,
    pub bce_occ: f64,
    pub total: f64,
    pub occupied: usize,
    pub free: usize,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.nll_traj.is_finite() && self.ce_mode.is_finite() && self.bce_occ.is_finite() && self.total.is_finite()
    }
}

/// Negative log density of a bivariate Gaussian `[mu_x, mu_y, sigma_x, sigma_y, rho]` at `gt`.
pub fn gmm_step_nll(gt: Vec2, params: [f64; 5]) -> Result<f64> {
    let [mx, my, sx, sy, rho] = params;
    if !(sx > 0.0 && sy > 0.0 && rho.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!("gaussian needs sigma > 0 and |rho| < 1, got {params:?}")));
    }
    let (dx, dy) = (gt.x - mx, gt.y - my);
    let one_m = 1.0 - rho * rho;
    let q = dx * dx / (sx * sx) + dy * dy / (sy * sy) - 2.0 * rho * dx * dy / (sx * sy);
    Ok(LN_2PI + sx.ln() + sy.ln() + 0.5 * one_m.ln() + q / (2.0 * one_m))
}

/// Mode whose means have the smallest average displacement to `gt`; ties go to the lowest index.
pub fn hard_assign<I>(gt: &[Vec2], modes: I) -> usize
where
    I: IntoIterator,
    I::Item: IntoIterator<Item = Vec2>,
{
    let mut best = (0, f64::INFINITY);
    for (k, mode) in modes.into_iter().enumerate() {
        let ade = average_displacement(gt, mode);
        if ade < best.1 {
            best = (k, ade);
        }
    }
    best.0
}

pub(crate) fn average_displacement(gt: &[Vec2], mode: impl IntoIterator<Item = Vec2>) -> f64 {
    let n = gt.len().max(1) as f64;
    gt.iter().zip(mode).map(|(g, m)| g.dist(m)).sum::<f64>() / n
}

fn gt_future(anchor: &Anchor) -> Result<&[Vec2]> {
    anchor
        .gt_future
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("occupied anchor at {:?} has no future", anchor.position)))
}

fn class_split(anchors: &[Anchor]) -> (Vec<usize>, Vec<usize>) {
    (0..anchors.len()).partition(|&i| anchors[i].gt_occupied)
}

/// How BCE terms are averaged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Balance {
    /// Mean over occupied anchors plus mean over free anchors.
    #[default]
    PerClass,
    /// Mean over all anchors.
    Pooled,
}

fn bce_weights(balance: Balance, occ: usize, free: usize) -> (f64, f64) {
    let inv = |n: usize| if n == 0 { 0.0 } else { 1.0 / n as f64 };
    match balance {
        Balance::PerClass => (inv(occ), inv(free)),
        Balance::Pooled => (inv(occ + free), inv(occ + free)),
    }
}

/// Loss from decoded predictions, evaluated directly in f64.
pub fn scene_loss(preds: &[AnchorPrediction], anchors: &[Anchor], balance: Balance) -> Result<LossBreakdown> {
    if preds.len() != anchors.len() {
        return Err(Error::InvalidArgument(format!("{} predictions for {} anchors", preds.len(), anchors.len())));
    }
    let (occ, free) = class_split(anchors);
    let (w_occ, w_free) = bce_weights(balance, occ.len(), free.len());
    let mut out = LossBreakdown { occupied: occ.len(), free: free.len(), ..Default::default() };
    for &i in &occ {
        let (p, a) = (&preds[i], &anchors[i]);
        let gt = gt_future(a)?;
        let j = hard_assign(gt, (0..p.trajectories.len()).map(|k| p.mode_means(k)));
        for (g, params) in gt.iter().zip(&p.trajectories[j]) {
            out.nll_traj += gmm_step_nll(*g, *params)?;
        }
        out.ce_mode -= p.mode_probs[j].max(PROB_FLOOR).ln();
        out.bce_occ -= w_occ * p.p_occ.max(PROB_FLOOR).ln();
    }
    for &i in &free {
        out.bce_occ -= w_free * (1.0 - preds[i].p_occ).max(PROB_FLOOR).ln();
    }
    if !occ.is_empty() {
        out.nll_traj /= occ.len() as f64;
        out.ce_mode /= occ.len() as f64;
    }
    out.total = out.nll_traj + out.ce_mode + out.bce_occ;
    Ok(out)
}

/// Builds the loss on the graph for a finished forward pass. Mode assignment
/// reads the current means and is not differentiated.
///
/// With `sigma_floor = Some(f)` every predicted standard deviation enters the
/// likelihood as `sqrt(sigma^2 + f^2)`.
pub fn graph_loss<T: Real>(
    g: &mut Graph<T>,
    model: &Informer,
    out: &HeadOutputs,
    anchors: &[Anchor],
    balance: Balance,
    sigma_floor: Option<f64>,
) -> Result<(Var, LossBreakdown)> {
    let positions: Vec<Vec2> = anchors.iter().map(|a| a.position).collect();
    let (k, p) = (model.config.modes, model.config.future);
    let (occ, free) = class_split(anchors);
    let (w_occ, w_free) = bce_weights(balance, occ.len(), free.len());
    let mut terms = Vec::new();

    let bce_part = |g: &mut Graph<T>, rows: &[usize], sign: f64, w: f64| -> Result<Option<Var>> {
        if rows.is_empty() {
            return Ok(None);
        }
        let z = g.gather_rows(out.occupancy_logit, rows)?;
        let z = g.scale(z, sign);
        let ls = g.log_sigmoid(z);
        let s = g.sum(ls);
        Ok(Some(g.scale(s, -w)))
    };
    let bce_occ = bce_part(g, &occ, 1.0, w_occ)?;
    let bce_free = bce_part(g, &free, -1.0, w_free)?;
    let bce = match (bce_occ, bce_free) {
        (Some(a), Some(b)) => g.add(a, b)?,
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => return Err(Error::InvalidArgument("loss needs at least one anchor".into())),
    };
    terms.push(bce);

    let mut nll_v = None;
    let mut ce_v = None;
    if !occ.is_empty() {
        let preds = model.decode_predictions(g, out, &positions);
        let mut mode_rows = Vec::with_capacity(occ.len());
        let mut step_rows = Vec::with_capacity(occ.len() * p);
        let mut gx = Vec::with_capacity(occ.len() * p);
        let mut gy = Vec::with_capacity(occ.len() * p);
        for &i in &occ {
            let gt = gt_future(&anchors[i])?;
            if gt.len() != p {
                return Err(Error::InvalidArgument(format!("future of {} steps, model predicts {p}", gt.len())));
            }
            let j = hard_assign(gt, (0..k).map(|m| preds[i].mode_means(m)));
            mode_rows.push(i * k + j);
            step_rows.extend((0..p).map(|s| (i * k + j) * p + s));
            let a = anchors[i].position;
            gx.extend(gt.iter().map(|v| v.x - a.x));
            gy.extend(gt.iter().map(|v| v.y - a.y));
        }
        let inv = 1.0 / occ.len() as f64;

        let n = anchors.len();
        let ls = g.log_softmax(out.mode_logits);
        let flat = g.reshape(ls, &[n * k, 1])?;
        let picked = g.gather_rows(flat, &mode_rows)?;
        let s = g.sum(picked);
        let ce = g.scale(s, -inv);

        let mut gv = model.gaussians(g, out.trajectory_raw, Some(&step_rows))?;
        if let Some(f) = sigma_floor {
            let widen = |g: &mut Graph<T>, s: Var| -> Result<Var> {
                let s2 = g.mul(s, s)?;
                let v = g.add_scalar(s2, f * f);
                let l = g.log(v);
                let h = g.scale(l, 0.5);
                Ok(g.exp(h))
            };
            gv.sigma_x = widen(g, gv.sigma_x)?;
            gv.sigma_y = widen(g, gv.sigma_y)?;
        }
        let rows = step_rows.len();
        let tx = g.constant(Tensor::from_f64(&[rows, 1], &gx)?);
        let ty = g.constant(Tensor::from_f64(&[rows, 1], &gy)?);
        let dx = g.sub(tx, gv.mu_x)?;
        let dy = g.sub(ty, gv.mu_y)?;
        let zx = g.div(dx, gv.sigma_x)?;
        let zy = g.div(dy, gv.sigma_y)?;
        let zx2 = g.mul(zx, zx)?;
        let zy2 = g.mul(zy, zy)?;
        let zxy = g.mul(zx, zy)?;
        let rzxy = g.mul(gv.rho, zxy)?;
        let rzxy2 = g.scale(rzxy, 2.0);
        let q = g.add(zx2, zy2)?;
        let q = g.sub(q, rzxy2)?;
        let rho2 = g.mul(gv.rho, gv.rho)?;
        let neg = g.scale(rho2, -1.0);
        let one_m = g.add_scalar(neg, 1.0);
        let two_one_m = g.scale(one_m, 2.0);
        let quad = g.div(q, two_one_m)?;
        let log_sx = g.log(gv.sigma_x);
        let log_sy = g.log(gv.sigma_y);
        let log_om = g.log(one_m);
        let half_log_om = g.scale(log_om, 0.5);
        let a = g.add(log_sx, log_sy)?;
        let a = g.add(a, half_log_om)?;
        let a = g.add(a, quad)?;
        let a = g.add_scalar(a, LN_2PI);
        let s = g.sum(a);
        let nll = g.scale(s, inv);
        terms.push(nll);
        terms.push(ce);
        nll_v = Some(nll);
        ce_v = Some(ce);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    let val = |g: &Graph<T>, v: Option<Var>| v.map_or(0.0, |v| g.value(v).data()[0].as_f64());
    let breakdown = LossBreakdown {
        nll_traj: val(g, nll_v),
        ce_mode: val(g, ce_v),
        bce_occ: val(g, Some(bce)),
        total: val(g, Some(total)),
        occupied: occ.len(),
        free: free.len(),
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::AnchorSource;
    use std::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Log density written out from the covariance matrix, independent of the NLL form.
    fn log_density(gt: Vec2, p: [f64; 5]) -> f64 {
        let [mx, my, sx, sy, rho] = p;
        let (a, b, d) = (sx * sx, rho * sx * sy, sy * sy);
        let det = a * d - b * b;
        let (ia, ib, id) = (d / det, -b / det, a / det);
        let (x, y) = (gt.x - mx, gt.y - my);
        let m = x * (ia * x + ib * y) + y * (ib * x + id * y);
        -0.5 * m - (2.0 * PI * det.sqrt()).ln()
    }

    #[test]
    fn nll_analytic_points() {
        let v = gmm_step_nll(Vec2::ZERO, [0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((v - 1.837877).abs() < 1e-6);
        assert!((v - (2.0 * PI).ln()).abs() < 1e-12);
        let v = gmm_step_nll(Vec2::new(1.0, 0.0), [0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((v - 2.337877).abs() < 1e-6);
        assert!(gmm_step_nll(Vec2::ZERO, [0.0, 0.0, 0.0, 1.0, 0.0]).is_err());
        assert!(gmm_step_nll(Vec2::ZERO, [0.0, 0.0, 1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn nll_matches_covariance_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let p = [
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(0.2..4.0),
                rng.random_range(0.2..4.0),
                rng.random_range(-0.95..0.95),
            ];
            let gt = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let want = -log_density(gt, p);
            assert!((gmm_step_nll(gt, p).unwrap() - want).abs() < 1e-9);
        }
    }

    #[test]
    fn hard_assign_examples() {
        let gt: Vec<Vec2> = (0..5).map(|i| Vec2::new(i as f64, 0.0)).collect();
        let shifted: Vec<Vec2> = gt.iter().map(|v| *v + Vec2::new(0.0, 1.0)).collect();
        let far: Vec<Vec2> = gt.iter().map(|v| *v + Vec2::new(0.0, 5.0)).collect();
        assert_eq!(hard_assign(&gt, [far.clone(), shifted.clone(), gt.clone()]), 2);
        assert_eq!(hard_assign(&gt, [shifted.clone(), shifted.clone()]), 0);
    }

    fn anchor(occupied: bool, future: Option<Vec<Vec2>>) -> Anchor {
        Anchor {
            position: Vec2::new(1.0, 2.0),
            source: AnchorSource::Occlusion("o".into()),
            gt_occupied: occupied,
            gt_future: future,
            gt_agent_id: None,
        }
    }

    fn flat_prediction(k: usize, steps: &[Vec2]) -> AnchorPrediction {
        AnchorPrediction {
            p_occ: 0.5,
            mode_probs: vec![1.0 / k as f64; k],
            trajectories: vec![steps.iter().map(|v| [v.x, v.y, 1.0, 1.0, 0.0]).collect(); k],
        }
    }

    #[test]
    fn all_free_is_ln2() {
        let anchors = vec![anchor(false, None); 5];
        let preds = vec![flat_prediction(3, &[Vec2::ZERO; 40]); 5];
        let l = scene_loss(&preds, &anchors, Balance::PerClass).unwrap();
        assert!((l.total - 2f64.ln()).abs() < 1e-12);
        assert_eq!((l.nll_traj, l.ce_mode), (0.0, 0.0));
    }

    #[test]
    fn one_occupied_exact_prediction() {
        let fut: Vec<Vec2> = (0..40).map(|i| Vec2::new(1.0 + i as f64, 2.0)).collect();
        let l = scene_loss(&[flat_prediction(3, &fut)], &[anchor(true, Some(fut.clone()))], Balance::PerClass).unwrap();
        assert!((l.nll_traj - 40.0 * (2.0 * PI).ln()).abs() < 1e-9);
        assert!((l.ce_mode - 3f64.ln()).abs() < 1e-12);
        assert!((l.bce_occ - 2f64.ln()).abs() < 1e-12);
        assert!(scene_loss(&[flat_prediction(3, &fut)], &[anchor(true, None)], Balance::PerClass).is_err());
    }

    #[test]
    fn matches_negated_per_anchor_objective() {
        // sum_i 1[occ](log Pr(j*) + log Pr(GT | Y_j*)) + log Pr(i), here over occupied anchors only
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut anchors = Vec::new();
        let mut preds = Vec::new();
        for _ in 0..4 {
            let fut: Vec<Vec2> = (0..6).map(|i| Vec2::new(i as f64, rng.random_range(-1.0..1.0))).collect();
            let trajectories: Vec<Vec<[f64; 5]>> = (0..3)
                .map(|_| {
                    fut.iter()
                        .map(|v| [v.x + rng.random_range(-1.0..1.0), v.y, rng.random_range(0.5..2.0), 1.0, 0.3])
                        .collect()
                })
                .collect();
            let probs = [0.2, 0.5, 0.3];
            preds.push(AnchorPrediction { p_occ: rng.random_range(0.1..0.9), mode_probs: probs.to_vec(), trajectories });
            anchors.push(anchor(true, Some(fut)));
        }
        let mut objective = 0.0;
        for (p, a) in preds.iter().zip(&anchors) {
            let gt = a.gt_future.as_ref().unwrap();
            let j = hard_assign(gt, (0..3).map(|k| p.mode_means(k)));
            let log_gt: f64 = gt.iter().zip(&p.trajectories[j]).map(|(g, q)| log_density(*g, *q)).sum();
            objective += p.mode_probs[j].ln() + log_gt + p.p_occ.ln();
        }
        let l = scene_loss(&preds, &anchors, Balance::PerClass).unwrap();
        assert!((l.total + objective / 4.0).abs() < 1e-9);
    }

    #[test]
    fn graph_loss_matches_scene_loss() {
        use crate::geometry::RegimeMode;
        use crate::informer::{ModelConfig, ModelInputs};
        use crate::numerics::ParamStore;
        use crate::synth::{default_templates, generate_scene};
        use crate::train::{build_sample, SampleSpec};

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let model = Informer::new(ModelConfig::desk(), &mut store, &mut rng).unwrap();
        let sample = (0..50)
            .find_map(|seed| {
                let scene = generate_scene(&default_templates()[0], seed).unwrap();
                let spec = SampleSpec { regime: RegimeMode::SingleOccluder, occlusion_anchors: 8, seed };
                build_sample(&scene, &spec).ok()
            })
            .unwrap();
        let anchors = &sample.anchors.anchors;
        let positions = sample.anchor_positions();
        for floor in [None, Some(0.7)] {
            let mut g = Graph::new();
            let inputs = ModelInputs::new(&sample.features).unwrap();
            let out = model.forward(&mut g, &store, &inputs, &positions).unwrap();
            let (_, got) = graph_loss(&mut g, &model, &out, anchors, Balance::PerClass, floor).unwrap();
            let mut preds = model.decode_predictions(&g, &out, &positions);
            if let Some(f) = floor {
                for step in preds.iter_mut().flat_map(|p| p.trajectories.iter_mut().flatten()) {
                    step[2] = step[2].hypot(f);
                    step[3] = step[3].hypot(f);
                }
            }
            let want = scene_loss(&preds, anchors, Balance::PerClass).unwrap();
            for (a, b) in [(got.total, want.total), (got.nll_traj, want.nll_traj), (got.bce_occ, want.bce_occ)] {
                assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "{floor:?}: {a} vs {b}");
            }
        }
    }
}
