//! Versioned parameter files with content hashes.

use std::path::Path;

use super::{content_hash, BackboneError, BodyBackboneParams};

pub const BODY_PARAMS_VERSION: &str = "posefuse-body-backbone-v1";

#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct BodyParamsFile {
    pub version: String,
    pub content_hash: String,
    pub params: BodyBackboneParams,
}

pub fn save_body_backbone(
    params: &BodyBackboneParams,
    path: &Path,
) -> Result<(), std::io::Error> {
    let file = BodyParamsFile {
        version: BODY_PARAMS_VERSION.to_string(),
        content_hash: content_hash(params),
        params: params.clone(),
    };
    let json = serde_json::to_vec(&file).expect("serializable params");
    std::fs::write(path, json)
}

pub fn load_body_backbone(path: &Path) -> Result<BodyBackboneParams, BackboneError> {
    let bytes = std::fs::read(path).map_err(|_| BackboneError::FrozenParamsModified)?;
    let file: BodyParamsFile =
        serde_json::from_slice(&bytes).map_err(|_| BackboneError::FrozenParamsModified)?;
    if file.version != BODY_PARAMS_VERSION || content_hash(&file.params) != file.content_hash {
        return Err(BackboneError::FrozenParamsModified);
    }
    Ok(file.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{init_body_backbone, BodyBackboneConfig};

    #[test]
    fn round_trip_verifies_hash() {
        let params = init_body_backbone(3, BodyBackboneConfig::default());
        let dir = std::env::temp_dir().join("posefuse_backbone_io");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("body.json");
        save_body_backbone(&params, &path).unwrap();
        let loaded = load_body_backbone(&path).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn tampered_file_is_rejected() {
        let params = init_body_backbone(4, BodyBackboneConfig::default());
        let dir = std::env::temp_dir().join("posefuse_backbone_io");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tampered.json");
        save_body_backbone(&params, &path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replacen("\"frozen\":true", "\"frozen\":false", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_body_backbone(&path),
            Err(BackboneError::FrozenParamsModified)
        ));
    }
}
