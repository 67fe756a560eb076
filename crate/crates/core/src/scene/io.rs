//! Line-delimited JSON scene files: one scene object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::Scene;
use crate::error::{Error, Result};

pub fn scene_to_line(scene: &Scene) -> Result<String> {
    Ok(serde_json::to_string(scene)?)
}

/// Parses and validates one line; `line` is 1-based and only used in errors.
pub fn parse_scene_line(text: &str, line: usize) -> Result<Scene> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scene: Scene = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Schema { line, path, msg: e.into_inner().to_string() }
    })?;
    validate(&scene).map_err(|(path, msg)| Error::Schema { line, path, msg })?;
    Ok(scene)
}

fn validate(s: &Scene) -> std::result::Result<(), (String, String)> {
    let fail = |p: String, m: &str| Err((p, m.to_string()));
    if !(s.dt > 0.0) {
        return fail("dt".into(), "must be positive");
    }
    if !(s.radius > 0.0) {
        return fail("radius".into(), "must be positive");
    }
    if s.history == 0 {
        return fail("H".into(), "must be at least 1");
    }
    if s.ego().is_none() {
        return fail("ego_id".into(), &format!("`{}` is not among agents", s.ego_id));
    }
    let steps = s.steps();
    for (i, a) in s.agents.iter().enumerate() {
        if s.agents[..i].iter().any(|b| b.id == a.id) {
            return fail(format!("agents[{i}].id"), &format!("duplicate agent id `{}`", a.id));
        }
        if !(a.length > 0.0) || !(a.width > 0.0) {
            return fail(format!("agents[{i}]"), "length and width must be positive");
        }
        if a.states.len() != steps {
            return fail(format!("agents[{i}].states"), &format!("expected {steps} states, found {}", a.states.len()));
        }
        for (j, st) in a.states.iter().enumerate() {
            let path = format!("agents[{i}].states[{j}]");
            if j > 0 && st.t <= a.states[j - 1].t {
                return fail(format!("{path}.t"), "time indices must be strictly increasing");
            }
            if !(st.heading > -std::f64::consts::PI && st.heading <= std::f64::consts::PI) {
                return fail(format!("{path}.heading"), "must lie in (-pi, pi]");
            }
            if ![st.x, st.y, st.vx, st.vy].iter().all(|v| v.is_finite()) {
                return fail(path, "non-finite value");
            }
        }
    }
    for (i, pl) in s.map.iter().enumerate() {
        if pl.points.is_empty() {
            return fail(format!("map[{i}].points"), "polyline needs at least one point");
        }
        if !pl.points.iter().all(|p| p.x.is_finite() && p.y.is_finite()) {
            return fail(format!("map[{i}].points"), "non-finite value");
        }
    }
    Ok(())
}

pub fn read_scenes_from_str(text: &str) -> Result<Vec<Scene>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_scene_line(l, i + 1))
        .collect()
}

pub fn read_scenes(path: &Path) -> Result<Vec<Scene>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(parse_scene_line(&line, i + 1)?);
        }
    }
    Ok(out)
}

pub fn write_scenes(path: &Path, scenes: &[Scene]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in scenes {
        writeln!(w, "{}", scene_to_line(s)?)?;
    }
    w.flush()?;
    Ok(())
}
