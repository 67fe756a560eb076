//! Line-of-sight occlusion: oriented footprints, the exact segment test,
//! shadow polygons, observability regimes and anchor sampling.

mod anchors;
mod regime;

use crate::error::{Error, Result};
use crate::scene::{AgentState, AgentTrack, OcclusionRecord, Vec2};

pub use anchors::{build_anchor_set, Anchor, AnchorSet, DEFAULT_OCC_ANCHORS};
pub use regime::{apply_regime, apply_regime_with, regime_occluders, visibility_with, ObservabilityRegime, RegimeMode};

/// Angular spacing of the chords approximating the shadow's outer arc.
pub const ARC_STEP_DEG: f64 = 2.0;

/// Maximum radial gap between the outer arc and its chords.
pub fn arc_tolerance(radius: f64) -> f64 {
    radius * (1.0 - (ARC_STEP_DEG.to_radians() / 2.0).cos())
}

/// Oriented rectangle; `length` runs along `heading`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Footprint {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl Footprint {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Result<Self> {
        if !(length > 0.0 && width > 0.0) {
            return Err(Error::InvalidArgument(format!("footprint dimensions must be positive, got {length}x{width}")));
        }
        Ok(Self { center, heading, length, width })
    }

    pub fn of(track: &AgentTrack, state: &AgentState) -> Self {
        Self { center: state.position(), heading: state.heading, length: track.length, width: track.width }
    }

    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.center).rotate(-self.heading)
    }

    /// Corners in counterclockwise order.
    pub fn corners(&self) -> [Vec2; 4] {
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        [Vec2::new(hl, -hw), Vec2::new(hl, hw), Vec2::new(-hl, hw), Vec2::new(-hl, -hw)]
            .map(|c| c.rotate(self.heading) + self.center)
    }

    /// Closed-rectangle membership.
    pub fn contains(&self, p: Vec2) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= self.length / 2.0 && l.y.abs() <= self.width / 2.0
    }

    /// Separating-axis overlap test; touching rectangles do not overlap.
    pub fn overlaps(&self, other: &Footprint) -> bool {
        let (a, b) = (self.corners(), other.corners());
        let axes = [
            Vec2::from_angle(self.heading),
            Vec2::from_angle(self.heading).perp(),
            Vec2::from_angle(other.heading),
            Vec2::from_angle(other.heading).perp(),
        ];
        axes.iter().all(|ax| {
            let (amin, amax) = project(&a, *ax);
            let (bmin, bmax) = project(&b, *ax);
            amax > bmin && bmax > amin
        })
    }

    /// True iff segment `[p, q]` touches the closed rectangle.
    pub fn intersects_segment(&self, p: Vec2, q: Vec2) -> bool {
        let (a, b) = (self.to_local(p), self.to_local(q));
        let d = b - a;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for (start, delta, half) in [(a.x, d.x, self.length / 2.0), (a.y, d.y, self.width / 2.0)] {
            if delta.abs() < 1e-15 {
                if start.abs() > half {
                    return false;
                }
                continue;
            }
            let t0 = (-half - start) / delta;
            let t1 = (half - start) / delta;
            lo = lo.max(t0.min(t1));
            hi = hi.min(t0.max(t1));
            if lo > hi {
                return false;
            }
        }
        true
    }
}

fn project(pts: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    pts.iter().map(|p| p.dot(axis)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Ground-truth line-of-sight test: `q` is hidden from `ego` iff the segment
/// between them meets the footprint. Points inside the footprint are hidden.
pub fn is_point_occluded(ego: Vec2, footprint: &Footprint, q: Vec2) -> Result<bool> {
    if footprint.contains(ego) {
        return Err(Error::ViewpointInsideFootprint);
    }
    Ok(footprint.intersects_segment(ego, q))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShadowPolygon {
    pub occluder_id: String,
    /// Counterclockwise, closed implicitly.
    pub vertices: Vec<Vec2>,
}

impl ShadowPolygon {
    pub fn contains(&self, p: Vec2) -> bool {
        point_in_polygon(&self.vertices, p)
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn bounding_box(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = Vec2::new(lo.x.min(v.x), lo.y.min(v.y));
            hi = Vec2::new(hi.x.max(v.x), hi.y.max(v.y));
        }
        (lo, hi)
    }

    pub fn to_record(&self) -> OcclusionRecord {
        OcclusionRecord { occluder_id: self.occluder_id.clone(), polygon: self.vertices.clone() }
    }

    pub fn from_record(r: &OcclusionRecord) -> Self {
        Self { occluder_id: r.occluder_id.clone(), vertices: r.polygon.clone() }
    }
}

/// Shadow cast by `footprint` as seen from `ego`, truncated at `radius`.
///
/// Returns `Ok(None)` when any corner of the footprint lies outside the disk.
pub fn shadow_polygon(ego: Vec2, footprint: &Footprint, radius: f64, occluder_id: &str) -> Result<Option<ShadowPolygon>> {
    if footprint.contains(ego) {
        return Err(Error::ViewpointInsideFootprint);
    }
    let corners = footprint.corners();
    if corners.iter().any(|c| c.dist(ego) >= radius) {
        return Ok(None);
    }
    let base = (footprint.center - ego).angle();
    let rel: Vec<f64> = corners.iter().map(|c| crate::scene::normalize_angle((*c - ego).angle() - base)).collect();
    let dist: Vec<f64> = corners.iter().map(|c| c.dist(ego)).collect();
    let tie = 1e-12;
    let pick = |better: &dyn Fn(f64, f64) -> bool| {
        (0..4).fold(0, |best, i| {
            if better(rel[i], rel[best]) || ((rel[i] - rel[best]).abs() <= tie && dist[i] < dist[best]) {
                i
            } else {
                best
            }
        })
    };
    let a = pick(&|x, y| x < y - tie);
    let b = pick(&|x, y| x > y + tie);
    let (alpha_a, alpha_b) = (base + rel[a], base + rel[b]);
    let step = ARC_STEP_DEG.to_radians();
    let chords = (((alpha_b - alpha_a) / step).ceil() as usize).max(1);

    let mut v = vec![corners[a]];
    for k in 0..=chords {
        let ang = alpha_a + (alpha_b - alpha_a) * k as f64 / chords as f64;
        v.push(ego + Vec2::from_angle(ang) * radius);
    }
    v.push(corners[b]);
    let mut i = (b + 1) % 4;
    while i != a {
        v.push(corners[i]);
        i = (i + 1) % 4;
    }
    Ok(Some(ShadowPolygon { occluder_id: occluder_id.to_string(), vertices: v }))
}

/// Even-odd crossing test.
pub fn point_in_polygon(poly: &[Vec2], p: Vec2) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + n - 1) % n]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
    }
    inside
}

/// Shoelace area; positive for counterclockwise polygons.
pub fn signed_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum::<f64>() / 2.0
}

/// True when no two non-adjacent edges intersect.
pub fn is_simple(poly: &[Vec2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let o = |a: Vec2, b: Vec2, c: Vec2| (b - a).cross(c - a);
    let (d1, d2) = (o(q1, q2, p1), o(q1, q2, p2));
    let (d3, d4) = (o(p1, p2, q1), o(p1, p2, q2));
    ((d1 > 0.0) != (d2 > 0.0)) && ((d3 > 0.0) != (d4 > 0.0)) && d1 != 0.0 && d2 != 0.0 && d3 != 0.0 && d4 != 0.0
}
