//! Scene arguments: a preset id or a path to a scene file.

use std::path::PathBuf;
use std::str::FromStr;

use neotraj::world::{build_distance_field, preset_scene, GridWorld, SceneRecipe, SceneSpec};

use crate::error::{read_file, CliError};

#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    /// Presets 1..=3 are fixed layouts; 4..=9 draw a new layout per episode.
    Preset(u32),
    File(PathBuf),
}

impl FromStr for SceneSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.parse::<u32>() {
            Ok(id) if (1..=9).contains(&id) => Ok(SceneSource::Preset(id)),
            Ok(id) => Err(format!("unknown scene preset {id} (expected 1..=9)")),
            Err(_) => Ok(SceneSource::File(PathBuf::from(s))),
        }
    }
}

impl SceneSource {
    /// Column value used in CSV output.
    pub fn label(&self) -> String {
        match self {
            SceneSource::Preset(id) => id.to_string(),
            SceneSource::File(p) => p
                .file_stem()
                .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()),
        }
    }

    /// Tag stored in dataset records.
    pub fn tag(&self) -> u32 {
        match self {
            SceneSource::Preset(id) => *id,
            SceneSource::File(_) => 0,
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, SceneSource::Preset(id) if SceneRecipe::preset(*id).is_some())
    }
}

/// Scene source resolved once, so files are read a single time.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub source: SceneSource,
    fixed: Option<(SceneSpec, GridWorld)>,
}

impl LoadedScene {
    pub fn load(source: &SceneSource, resolution: f64) -> Result<Self, CliError> {
        let spec = match source {
            SceneSource::File(path) => Some(
                SceneSpec::from_json(&read_file(path)?)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
            ),
            SceneSource::Preset(id) if !source.is_random() => Some(preset_scene(*id, 0).map_err(CliError::runtime)?),
            SceneSource::Preset(_) => None,
        };
        Ok(Self {
            source: source.clone(),
            fixed: spec.map(|s| {
                let w = build_distance_field(&s, resolution);
                (s, w)
            }),
        })
    }

    /// Layout for one episode: fixed scenes ignore `layout_seed`.
    pub fn instantiate(&self, layout_seed: u64, resolution: f64) -> Result<(SceneSpec, GridWorld), CliError> {
        if let Some((s, w)) = &self.fixed {
            return Ok((s.clone(), w.clone()));
        }
        let SceneSource::Preset(id) = self.source else {
            unreachable!("files are always fixed")
        };
        let spec = preset_scene(id, layout_seed).map_err(CliError::runtime)?;
        let world = build_distance_field(&spec, resolution);
        Ok((spec, world))
    }
}
