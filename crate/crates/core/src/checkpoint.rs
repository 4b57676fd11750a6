//! Encoder checkpoints.
//!
//! A checkpoint root holds versioned subdirectories `ckpt-<episode>/`, each with
//! one tensor file per parameter blob and a `checkpoint.json`. The `LATEST`
//! file names the newest complete subdirectory and is replaced by rename, so
//! an interrupted write leaves the previous checkpoint loadable.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderDims, EncoderParams};
use crate::error::{Error, Result};
use crate::metric::Metric;
use crate::tensor::{load_tensor, save_tensor};

pub const FORMAT: &str = "pixelmeta-checkpoint/1";
const LATEST: &str = "LATEST";
const META_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub dims: EncoderDims,
    pub metric: Metric,
    pub episode: usize,
    pub params_checksum: String,
    /// Parameter blob names in load order; files are `<name>.pxt`.
    pub parameters: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl CheckpointMeta {
    pub fn new(
        params: &EncoderParams,
        metric: Metric,
        episode: usize,
        config: Option<serde_json::Value>,
    ) -> Self {
        Self {
            format: FORMAT.into(),
            dims: params.dims(),
            metric,
            episode,
            params_checksum: params.checksum(),
            parameters: params.to_tensors().into_iter().map(|(n, _)| n).collect(),
            config,
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Validation(format!("serializing {}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes a new versioned checkpoint under `root` and points `LATEST` at it.
pub fn save_checkpoint(root: &Path, params: &EncoderParams, meta: &CheckpointMeta) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let name = format!("ckpt-{:08}", meta.episode);
    let staging = root.join(format!(".staging-{name}"));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir(&staging).map_err(|e| Error::io(&staging, e))?;
    for (blob, tensor) in params.to_tensors() {
        save_tensor(&tensor, staging.join(format!("{blob}.pxt")))?;
    }
    write_json(&staging.join(META_FILE), meta)?;

    let target = root.join(&name);
    if target.exists() {
        fs::remove_dir_all(&target).map_err(|e| Error::io(&target, e))?;
    }
    fs::rename(&staging, &target).map_err(|e| Error::io(&target, e))?;

    let pointer_tmp = root.join(".LATEST.tmp");
    fs::write(&pointer_tmp, format!("{name}\n")).map_err(|e| Error::io(&pointer_tmp, e))?;
    fs::rename(&pointer_tmp, root.join(LATEST)).map_err(|e| Error::io(root.join(LATEST), e))?;

    // older versions are no longer referenced
    if let Ok(entries) = fs::read_dir(root) {
        for entry in entries.flatten() {
            let fname = entry.file_name();
            let fname = fname.to_string_lossy();
            if fname.starts_with("ckpt-") && fname != name {
                let _ = fs::remove_dir_all(entry.path());
            }
        }
    }
    Ok(target)
}

/// Loads from a checkpoint root (via `LATEST`) or a single checkpoint directory.
pub fn load_checkpoint(path: &Path) -> Result<(EncoderParams, CheckpointMeta)> {
    let pointer = path.join(LATEST);
    let dir = if pointer.is_file() {
        let name = fs::read_to_string(&pointer).map_err(|e| Error::io(&pointer, e))?;
        path.join(name.trim())
    } else {
        path.to_path_buf()
    };
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Validation(format!("{}: {e}", meta_path.display())))?;
    if meta.format != FORMAT {
        return Err(Error::Validation(format!(
            "unsupported checkpoint format {:?}",
            meta.format
        )));
    }
    let tensors = meta
        .parameters
        .iter()
        .map(|name| Ok((name.clone(), load_tensor(dir.join(format!("{name}.pxt")))?)))
        .collect::<Result<Vec<_>>>()?;
    let params = EncoderParams::from_tensors(meta.dims, &tensors)?;
    if params.checksum() != meta.params_checksum {
        return Err(Error::Validation(format!(
            "checkpoint {} fails its checksum",
            dir.display()
        )));
    }
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Encoder;

    #[test]
    fn save_load_and_supersede() {
        let dir = tempfile::tempdir().unwrap();
        let a = Encoder::init(EncoderDims::new(4, 6, 5, 3), 1);
        let b = Encoder::init(EncoderDims::new(4, 6, 5, 3), 2);
        save_checkpoint(dir.path(), &a, &CheckpointMeta::new(&a, Metric::Cosine, 10, None)).unwrap();
        let (loaded, meta) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded, a);
        assert_eq!(meta.metric, Metric::Cosine);

        let path = save_checkpoint(dir.path(), &b, &CheckpointMeta::new(&b, Metric::Cosine, 20, None)).unwrap();
        assert_eq!(load_checkpoint(dir.path()).unwrap().0, b);
        assert_eq!(load_checkpoint(&path).unwrap().1.episode, 20);
        assert!(!dir.path().join("ckpt-00000010").exists());
    }

    #[test]
    fn interrupted_write_keeps_previous() {
        let dir = tempfile::tempdir().unwrap();
        let a = Encoder::init(EncoderDims::new(2, 3, 3, 2), 1);
        save_checkpoint(dir.path(), &a, &CheckpointMeta::new(&a, Metric::SquaredEuclidean, 5, None)).unwrap();
        // a half-written staging directory from a crashed run
        fs::create_dir(dir.path().join(".staging-ckpt-00000006")).unwrap();
        assert_eq!(load_checkpoint(dir.path()).unwrap().0, a);
    }

    #[test]
    fn tampered_blob_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let a = Encoder::init(EncoderDims::new(2, 3, 3, 2), 1);
        let path = save_checkpoint(dir.path(), &a, &CheckpointMeta::new(&a, Metric::SquaredEuclidean, 1, None)).unwrap();
        let mut b = a.clone();
        b.output.bias[0] = 9.0;
        for (name, t) in b.to_tensors() {
            save_tensor(&t, path.join(format!("{name}.pxt"))).unwrap();
        }
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Validation(_))));
    }
}
