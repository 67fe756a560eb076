//! Road layouts in a local frame: dense map polylines plus the routes agents
//! may follow on them.

use std::f64::consts::{FRAC_PI_2, PI};

use super::path::{Path, Piece};
use super::{ScenarioTemplate, TemplateKind};
use crate::scene::{PolylineKind, Vec2};

/// Half-length of every road arm (m).
const ARM: f64 = 100.0;
/// Extra curb radius at intersection corners (m).
const CORNER: f64 = 6.0;
/// Lateral offset of parked cars beyond the road edge (m).
const PARKING_OFFSET: f64 = 1.2;
/// Lateral offset of sidewalks beyond the road edge (m).
const SIDEWALK_OFFSET: f64 = 3.5;
const DENSE_STEP: f64 = 0.5;

#[derive(Clone, Debug)]
pub(crate) struct Route {
    pub path: Path,
    /// Arc length of the stop line, when the route crosses a crosswalk.
    pub stop_s: Option<f64>,
    pub turning: bool,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub polylines: Vec<(PolylineKind, Vec<Vec2>)>,
    /// Routes the ego may take, with the admissible range of initial arc length.
    pub ego_routes: Vec<(Route, (f64, f64))>,
    /// Vehicle routes grouped by lane; each group holds straight and turning variants.
    pub vehicle_routes: Vec<Vec<Route>>,
    pub cyclist_routes: Vec<Route>,
    /// Crossing paths that start just off the curb.
    pub crosswalks: Vec<Path>,
    pub sidewalks: Vec<Path>,
    /// Parking strips; a spot is any point along them, facing along the strip.
    pub parking: Vec<Path>,
}

fn straight(from: Vec2, heading: f64, len: f64) -> Path {
    Path::new(vec![Piece::Line { from, heading, len }])
}

pub(crate) fn build(t: &ScenarioTemplate, crosswalk_x: f64) -> Layout {
    match t.kind {
        TemplateKind::StraightRoad => straight_road(t, crosswalk_x),
        TemplateKind::FourWayIntersection => intersection(t),
    }
}

fn straight_road(t: &ScenarioTemplate, xc: f64) -> Layout {
    let (n, w) = (t.lane_count, t.lane_width);
    let hw = n as f64 * w;
    let mut polylines = Vec::new();
    let line = |y: f64| vec![Vec2::new(-ARM, y), Vec2::new(ARM, y)];
    let dense = |pts: Vec<Vec2>| Path::line(pts[0], pts[1]).dense(DENSE_STEP);
    for i in 0..n {
        let o = (i as f64 + 0.5) * w;
        polylines.push((PolylineKind::LaneCenter, dense(line(-o))));
        polylines.push((PolylineKind::LaneCenter, dense(line(o))));
    }
    for k in 0..n {
        let y = k as f64 * w;
        polylines.push((PolylineKind::LaneBoundary, dense(line(-y))));
        if k > 0 {
            polylines.push((PolylineKind::LaneBoundary, dense(line(y))));
        }
    }
    polylines.push((PolylineKind::RoadEdge, dense(line(-hw))));
    polylines.push((PolylineKind::RoadEdge, dense(line(hw))));

    let mut crosswalks = Vec::new();
    if t.crosswalk {
        polylines.push((PolylineKind::Crosswalk, dense(vec![Vec2::new(xc, -hw - 1.0), Vec2::new(xc, hw + 1.0)])));
        polylines.push((PolylineKind::StopSign, vec![Vec2::new(xc - 4.0, -hw - 0.5)]));
        polylines.push((PolylineKind::StopSign, vec![Vec2::new(xc + 4.0, hw + 0.5)]));
        crosswalks.push(straight(Vec2::new(xc, -hw - 2.0), FRAC_PI_2, 2.0 * hw + 4.0));
        crosswalks.push(straight(Vec2::new(xc, hw + 2.0), -FRAC_PI_2, 2.0 * hw + 4.0));
    }

    let stop = |s: f64| t.crosswalk.then_some(s);
    let mut vehicle_routes = Vec::new();
    for i in 0..n {
        let o = (i as f64 + 0.5) * w;
        vehicle_routes.push(vec![Route {
            path: straight(Vec2::new(-ARM, -o), 0.0, 2.0 * ARM),
            stop_s: stop(ARM + xc - 4.0),
            turning: false,
        }]);
        vehicle_routes.push(vec![Route {
            path: straight(Vec2::new(ARM, o), PI, 2.0 * ARM),
            stop_s: stop(ARM - xc - 4.0),
            turning: false,
        }]);
    }
    let ego_routes = (0..n)
        .map(|i| (vehicle_routes[2 * i][0].clone(), (ARM - 25.0, ARM + 5.0)))
        .collect();
    let edge = hw - 0.9;
    let cyclist_routes = vec![
        Route { path: straight(Vec2::new(-ARM, -edge), 0.0, 2.0 * ARM), stop_s: stop(ARM + xc - 4.0), turning: false },
        Route { path: straight(Vec2::new(ARM, edge), PI, 2.0 * ARM), stop_s: stop(ARM - xc - 4.0), turning: false },
    ];
    let side = hw + SIDEWALK_OFFSET;
    let park = hw + PARKING_OFFSET;
    Layout {
        polylines,
        ego_routes,
        vehicle_routes,
        cyclist_routes,
        crosswalks,
        sidewalks: vec![
            straight(Vec2::new(-ARM, -side), 0.0, 2.0 * ARM),
            straight(Vec2::new(ARM, -side), PI, 2.0 * ARM),
            straight(Vec2::new(-ARM, side), 0.0, 2.0 * ARM),
            straight(Vec2::new(ARM, side), PI, 2.0 * ARM),
        ],
        parking: vec![straight(Vec2::new(-ARM, -park), 0.0, 2.0 * ARM), straight(Vec2::new(ARM, park), PI, 2.0 * ARM)],
    }
}

/// Built for the west arm (traffic arriving eastbound) and rotated to the
/// other three arms.
fn intersection(t: &ScenarioTemplate) -> Layout {
    let (n, w) = (t.lane_count, t.lane_width);
    let hw = n as f64 * w;
    let box_edge = hw + CORNER;
    let xc = box_edge + 2.0;
    let approach_len = ARM - box_edge;
    let stop_s = t.crosswalk.then_some(ARM - xc - 4.0);

    let mut polylines: Vec<(PolylineKind, Vec<Vec2>)> = Vec::new();
    let mut vehicle_routes = Vec::new();
    let mut cyclist_routes = Vec::new();
    let mut crosswalks = Vec::new();
    let mut sidewalks = Vec::new();
    let mut parking = Vec::new();
    let mut ego_routes = Vec::new();

    for arm in 0..4 {
        let rot = arm as f64 * FRAC_PI_2;
        let mut add = |kind: PolylineKind, path: Path| polylines.push((kind, path.rotated(rot).dense(DENSE_STEP)));
        let lane_group = |o: f64| {
            let entry = Piece::Line { from: Vec2::new(-ARM, -o), heading: 0.0, len: approach_len };
            let through = Path::new(vec![Piece::Line { from: Vec2::new(-ARM, -o), heading: 0.0, len: 2.0 * ARM }]);
            let right = Path::new(vec![
                entry.clone(),
                Piece::Arc { center: Vec2::new(-box_edge, -box_edge), radius: box_edge - o, start: FRAC_PI_2, sweep: -FRAC_PI_2 },
                Piece::Line { from: Vec2::new(-o, -box_edge), heading: -FRAC_PI_2, len: approach_len },
            ]);
            let left = Path::new(vec![
                entry,
                Piece::Arc { center: Vec2::new(-box_edge, box_edge), radius: box_edge + o, start: -FRAC_PI_2, sweep: FRAC_PI_2 },
                Piece::Line { from: Vec2::new(o, box_edge), heading: FRAC_PI_2, len: approach_len },
            ]);
            (through, right, left)
        };
        for i in 0..n {
            let o = (i as f64 + 0.5) * w;
            let (through, right, left) = lane_group(o);
            // through lanes are drawn once per road (arms 0 and 1 cover both directions)
            if arm < 2 {
                add(PolylineKind::LaneCenter, through.clone());
                add(PolylineKind::LaneCenter, through.rotated(PI));
            }
            add(PolylineKind::LaneCenter, turn_arc(&right));
            add(PolylineKind::LaneCenter, turn_arc(&left));
            let group: Vec<Route> = [(through, false), (right, true), (left, true)]
                .into_iter()
                .map(|(p, turning)| Route { path: p.rotated(rot), stop_s, turning })
                .collect();
            if arm == 0 {
                for r in &group {
                    ego_routes.push((r.clone(), (ARM - box_edge - 40.0, ARM - box_edge - 8.0)));
                }
            }
            vehicle_routes.push(group);
        }
        // boundaries between same-direction lanes, and the center line, outside the box
        for k in 0..n {
            let y = k as f64 * w;
            add(PolylineKind::LaneBoundary, straight(Vec2::new(-ARM, -y), 0.0, approach_len));
            if k > 0 {
                add(PolylineKind::LaneBoundary, straight(Vec2::new(-ARM, y), 0.0, approach_len));
            }
        }
        // south-west curb: along the west arm, around the corner, down the south arm
        add(
            PolylineKind::RoadEdge,
            Path::new(vec![
                Piece::Line { from: Vec2::new(-ARM, -hw), heading: 0.0, len: approach_len },
                Piece::Arc { center: Vec2::new(-box_edge, -box_edge), radius: CORNER, start: FRAC_PI_2, sweep: -FRAC_PI_2 },
                Piece::Line { from: Vec2::new(-hw, -box_edge), heading: -FRAC_PI_2, len: approach_len },
            ]),
        );
        if t.crosswalk {
            add(PolylineKind::Crosswalk, Path::line(Vec2::new(-xc, -hw - 1.0), Vec2::new(-xc, hw + 1.0)));
            polylines.push((PolylineKind::StopSign, vec![Vec2::new(-xc - 3.0, -hw - 0.5).rotate(rot)]));
            crosswalks.push(straight(Vec2::new(-xc, -hw - 2.0), FRAC_PI_2, 2.0 * hw + 4.0).rotated(rot));
            crosswalks.push(straight(Vec2::new(-xc, hw + 2.0), -FRAC_PI_2, 2.0 * hw + 4.0).rotated(rot));
        }
        let edge = hw - 0.9;
        cyclist_routes.push(Route {
            path: straight(Vec2::new(-ARM, -edge), 0.0, 2.0 * ARM).rotated(rot),
            stop_s,
            turning: false,
        });
        let side = hw + SIDEWALK_OFFSET;
        sidewalks.push(straight(Vec2::new(-ARM, -side), 0.0, approach_len - 1.0).rotated(rot));
        sidewalks.push(straight(Vec2::new(-box_edge - 1.0, -side), PI, approach_len - 1.0).rotated(rot));
        parking.push(straight(Vec2::new(-ARM, -hw - PARKING_OFFSET), 0.0, ARM - xc - 8.0).rotated(rot));
    }
    Layout { polylines, ego_routes, vehicle_routes, cyclist_routes, crosswalks, sidewalks, parking }
}

/// The turning arc of a turn route, drawn as its own lane center.
fn turn_arc(p: &Path) -> Path {
    Path::new(p.pieces().iter().filter(|pc| matches!(pc, Piece::Arc { .. })).cloned().collect())
}
