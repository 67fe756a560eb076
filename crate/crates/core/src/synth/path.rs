//! Analytic reference paths (lines and circular arcs) and longitudinal
//! speed profiles integrated at a fixed step.

use std::f64::consts::FRAC_PI_2;

use crate::scene::Vec2;

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Piece {
    Line { from: Vec2, heading: f64, len: f64 },
    /// Counterclockwise when `sweep > 0`.
    Arc { center: Vec2, radius: f64, start: f64, sweep: f64 },
}

impl Piece {
    fn len(&self) -> f64 {
        match *self {
            Piece::Line { len, .. } => len,
            Piece::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    fn at(&self, u: f64) -> (Vec2, f64) {
        match *self {
            Piece::Line { from, heading, .. } => (from + Vec2::from_angle(heading) * u, heading),
            Piece::Arc { center, radius, start, sweep } => {
                let sign = sweep.signum();
                let phi = start + sign * u / radius;
                (center + Vec2::from_angle(phi) * radius, phi + sign * FRAC_PI_2)
            }
        }
    }

    fn rotated(&self, theta: f64) -> Piece {
        match *self {
            Piece::Line { from, heading, len } => Piece::Line { from: from.rotate(theta), heading: heading + theta, len },
            Piece::Arc { center, radius, start, sweep } => {
                Piece::Arc { center: center.rotate(theta), radius, start: start + theta, sweep }
            }
        }
    }
}

/// Arc-length parameterized path; beyond either end it extends straight.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Path {
    pieces: Vec<Piece>,
}

impl Path {
    pub fn new(pieces: Vec<Piece>) -> Self {
        assert!(!pieces.is_empty());
        Self { pieces }
    }

    pub fn line(from: Vec2, to: Vec2) -> Self {
        let d = to - from;
        Self::new(vec![Piece::Line { from, heading: d.angle(), len: d.norm() }])
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn length(&self) -> f64 {
        self.pieces.iter().map(Piece::len).sum()
    }

    /// Position and heading at arc length `s`.
    pub fn at(&self, s: f64) -> (Vec2, f64) {
        if s < 0.0 {
            let (p, h) = self.pieces[0].at(0.0);
            return (p + Vec2::from_angle(h) * s, h);
        }
        let mut rest = s;
        for piece in &self.pieces {
            let l = piece.len();
            if rest <= l {
                return piece.at(rest);
            }
            rest -= l;
        }
        let last = &self.pieces[self.pieces.len() - 1];
        let (p, h) = last.at(last.len());
        (p + Vec2::from_angle(h) * rest, h)
    }

    pub fn rotated(&self, theta: f64) -> Path {
        Path { pieces: self.pieces.iter().map(|p| p.rotated(theta)).collect() }
    }

    pub fn dense(&self, step: f64) -> Vec<Vec2> {
        let len = self.length();
        let n = (len / step).ceil().max(1.0) as usize;
        (0..=n).map(|i| self.at(len * i as f64 / n as f64).0).collect()
    }
}

/// Longitudinal behaviour along a path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum SpeedProfile {
    Constant(f64),
    /// Cruise, then brake to rest at arc length `stop_s`.
    StopAt { v0: f64, stop_s: f64, decel: f64 },
    /// Wait at rest until `start_step`, then accelerate to `v_max`.
    Launch { start_step: usize, accel: f64, v_max: f64 },
    /// Change speed from `v0` toward `v1` from `start_step` on.
    Ramp { v0: f64, v1: f64, start_step: usize, accel: f64 },
}

impl SpeedProfile {
    fn initial_speed(&self) -> f64 {
        match *self {
            SpeedProfile::Constant(v) => v,
            SpeedProfile::StopAt { v0, .. } | SpeedProfile::Ramp { v0, .. } => v0,
            SpeedProfile::Launch { .. } => 0.0,
        }
    }

    fn next_speed(&self, step: usize, s: f64, v: f64, dt: f64) -> f64 {
        match *self {
            SpeedProfile::Constant(c) => c,
            SpeedProfile::StopAt { stop_s, decel, .. } => {
                let gap = stop_s - s;
                if gap <= 0.05 {
                    return 0.0;
                }
                if gap <= v * v / (2.0 * decel) + v * dt {
                    let needed = (v * v / (2.0 * gap)).min(2.0 * decel);
                    (v - needed * dt).max(0.0)
                } else {
                    v
                }
            }
            SpeedProfile::Launch { start_step, accel, v_max } => {
                if step + 1 >= start_step {
                    (v + accel * dt).min(v_max)
                } else {
                    0.0
                }
            }
            SpeedProfile::Ramp { v1, start_step, accel, .. } => {
                if step + 1 < start_step {
                    v
                } else if v < v1 {
                    (v + accel * dt).min(v1)
                } else {
                    (v - accel * dt).max(v1)
                }
            }
        }
    }

    /// Arc length and speed at each of `steps` samples spaced `dt` apart.
    pub fn integrate(&self, s0: f64, steps: usize, dt: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(steps);
        let (mut s, mut v) = (s0, self.initial_speed());
        for step in 0..steps {
            out.push((s, v));
            let vn = self.next_speed(step, s, v, dt);
            s += 0.5 * (v + vn) * dt;
            v = vn;
        }
        out
    }
}
