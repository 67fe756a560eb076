use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use scene_informer::synth::{default_templates, ScenarioTemplate};
use scene_informer::{Error, Result};

/// Reads a TOML file, reporting the key path of any schema error.
pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    parse_toml(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.message().trim().to_string();
        Error::Config(if path == "." { msg } else { format!("{path}: {msg}") })
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub count: usize,
    pub seed: u64,
    pub templates: Vec<ScenarioTemplate>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { count: 0, seed: 0, templates: default_templates() }
    }
}

/// A built-in template name or a TOML template file.
pub fn resolve_templates(spec: &str) -> Result<Vec<ScenarioTemplate>> {
    match spec {
        "mixed" => Ok(default_templates()),
        "straight_road" => Ok(vec![ScenarioTemplate::straight_road()]),
        "four_way_intersection" => Ok(vec![ScenarioTemplate::four_way_intersection()]),
        path if Path::new(path).is_file() => Ok(vec![load_toml(Path::new(path))?]),
        other => Err(Error::Config(format!(
            "unknown template `{other}` (expected straight_road, four_way_intersection, mixed or a TOML file)"
        ))),
    }
}
