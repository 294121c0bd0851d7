//! On-disk feature cache: `manifest.json` plus one sample per line in
//! `samples.jsonl`, both written atomically.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use matmodal_models::{FeaturizeConfig, Sample};

use crate::error::{CliError, Context, Result};

pub const CACHE_ENV: &str = "MATMODAL_CACHE_DIR";
const DEFAULT_DIR: &str = "matmodal-cache";
const MANIFEST: &str = "manifest.json";
const SAMPLES: &str = "samples.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub config_hash: String,
    pub featurize: FeaturizeConfig,
    pub dataset: PathBuf,
    pub ids: Vec<String>,
}

/// Flag, then environment, then config, then `./matmodal-cache`.
pub fn cache_dir(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    config.map_or_else(|| PathBuf::from(DEFAULT_DIR), Path::to_path_buf)
}

pub fn write_atomic(command: &'static str, path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).ctx(command, &tmp)?;
    f.write_all(bytes).ctx(command, &tmp)?;
    f.sync_all().ctx(command, &tmp)?;
    fs::rename(&tmp, path).ctx(command, path)
}

pub fn store(
    command: &'static str,
    dir: &Path,
    manifest: &CacheManifest,
    samples: &[Sample],
) -> Result<()> {
    fs::create_dir_all(dir).ctx(command, dir)?;
    let mut body = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut body, s).ctx(command, dir)?;
        body.push(b'\n');
    }
    write_atomic(command, &dir.join(SAMPLES), &body)?;
    let m = serde_json::to_vec_pretty(manifest).ctx(command, dir)?;
    write_atomic(command, &dir.join(MANIFEST), &m)
}

/// Samples cached under `dir` for `featurize`; a cache built with another
/// config is rejected rather than silently reused.
pub fn load(
    command: &'static str,
    dir: &Path,
    featurize: &FeaturizeConfig,
) -> Result<(CacheManifest, Vec<Sample>)> {
    let mpath = dir.join(MANIFEST);
    if !mpath.exists() {
        return Err(CliError::new(
            command,
            Some(&mpath),
            "no feature cache here; run `matmodal precompute` first",
        ));
    }
    let manifest: CacheManifest =
        serde_json::from_slice(&fs::read(&mpath).ctx(command, &mpath)?).ctx(command, &mpath)?;
    let want = featurize.hash();
    if manifest.config_hash != want {
        return Err(CliError::new(
            command,
            Some(&mpath),
            format!(
                "stale cache: built with featurize config hash {}, this run needs {}; rerun `matmodal precompute`",
                manifest.config_hash, want
            ),
        ));
    }
    let spath = dir.join(SAMPLES);
    let file = fs::File::open(&spath).ctx(command, &spath)?;
    let mut samples = Vec::with_capacity(manifest.ids.len());
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.ctx(command, &spath)?;
        let s: Sample = serde_json::from_str(&line)
            .map_err(|e| CliError::new(command, Some(&spath), format!("line {}: {e}", i + 1)))?;
        samples.push(s);
    }
    let ids_match = samples.len() == manifest.ids.len()
        && samples.iter().zip(&manifest.ids).all(|(s, id)| &s.id == id);
    if !ids_match {
        return Err(CliError::new(
            command,
            Some(&spath),
            "samples do not match the manifest's record ids; rerun `matmodal precompute`",
        ));
    }
    Ok((manifest, samples))
}
