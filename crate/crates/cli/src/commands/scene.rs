use std::path::PathBuf;

use clap::Args;
use neotraj::world::{generate_scene, preset_scene, SceneRecipe, SceneSpec};

use super::emit;
use crate::error::CliError;

#[derive(Debug, Clone, Args)]
pub struct SceneArgs {
    /// Scene preset 1..=9.
    #[arg(long, conflicts_with = "count", required_unless_present = "count")]
    pub preset: Option<u32>,
    /// Number of random obstacles.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub width_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub width_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_scene(args: &SceneArgs) -> Result<SceneSpec, CliError> {
    let spec = match (args.preset, args.count) {
        (Some(id), _) => preset_scene(id, args.seed).map_err(|e| match e {
            neotraj::world::WorldError::UnknownPreset(_) => CliError::Usage(e.to_string()),
            other => CliError::runtime(other),
        })?,
        (None, Some(count)) => {
            let recipe = SceneRecipe {
                count,
                width_min: args.width_min,
                width_max: args.width_max,
            };
            generate_scene(recipe, args.seed).map_err(|e| match e {
                neotraj::world::WorldError::InvalidScene(m) => CliError::Usage(m),
                other => CliError::runtime(other),
            })?
        }
        (None, None) => return Err(CliError::Usage("give --preset or --count".into())),
    };
    emit(args.out.as_deref(), &spec.to_json())?;
    Ok(spec)
}
