use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamConfig, Mlp, Parameterized};
use crate::error::Result;
use crate::numeric::io::{load_tensors, save_tensors};

/// JSON sidecar stored next to `<name>.gaud`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpManifest {
    pub widths: Vec<usize>,
    pub dropout_p: f64,
    pub optimizer: Option<AdamConfig>,
}

pub fn save_mlp(dir: &Path, name: &str, model: &Mlp, optimizer: Option<AdamConfig>) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_tensors(dir.join(format!("{name}.gaud")), &model.params())?;
    let manifest = MlpManifest {
        widths: model.widths().to_vec(),
        dropout_p: model.dropout_p(),
        optimizer,
    };
    fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_mlp(dir: &Path, name: &str) -> Result<(Mlp, MlpManifest)> {
    let manifest_path = dir.join(format!("{name}.json"));
    if !manifest_path.exists() {
        return Err(crate::GaudaError::MissingArtifact(manifest_path));
    }
    let manifest: MlpManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    let params = load_tensors(dir.join(format!("{name}.gaud")))?;
    let model = Mlp::from_params(&manifest.widths, manifest.dropout_p, params)?;
    Ok((model, manifest))
}
