use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use matmodal_core::crystal::ClassifyTolerance;
use matmodal_core::dataset::{
    self, load_jsonl, parse_cif_p1, synth_generate, write_jsonl, DatasetRecord, PrototypeFamily,
    Split, SplitSpec,
};
use matmodal_core::eval::{pca3, SplitCounts};
use matmodal_models::checkpoint::Checkpoint;
use matmodal_models::{
    featurize_record, load_checkpoint, save_checkpoint, train_align, train_align_fuse,
    train_downstream, Architecture, EncoderInit, FeaturizeConfig, Modality, Sample, TrainOutcome,
};

use crate::cache::{self, write_atomic, CacheManifest};
use crate::config::RunConfig;
use crate::error::{CliError, Context, Result};

pub const RUN_CONFIG: &str = "run_config.json";
pub const CHECKPOINT: &str = "model.ckpt";
pub const HISTORY: &str = "history.json";

fn write_json<T: Serialize>(command: &'static str, path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).ctx(command, path)?;
    bytes.push(b'\n');
    write_atomic(command, path, &bytes)
}

pub fn synth(n: usize, seed: u64, out: &Path) -> Result<()> {
    const CMD: &str = "dataset synth";
    let records = synth_generate(n, seed, &PrototypeFamily::ALL).ctx_no_path(CMD)?;
    write_jsonl(&records, out).ctx(CMD, out)?;
    info!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

pub fn import_cif(dir: &Path, out: &Path) -> Result<()> {
    const CMD: &str = "dataset import-cif";
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .ctx(CMD, dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("cif")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::new(CMD, Some(dir), "no .cif files found"));
    }
    let mut records = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = fs::read_to_string(p).ctx(CMD, p)?;
        let structure = parse_cif_p1(&text).ctx(CMD, p)?;
        let id = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        records.push(DatasetRecord {
            id,
            structure,
            formation_energy: None,
            crystal_system: None,
        });
    }
    write_jsonl(&records, out).ctx(CMD, out)?;
    info!(
        "imported {} structures into {}",
        records.len(),
        out.display()
    );
    Ok(())
}

fn split_path(prefix: &Path, part: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(format!(".{part}.json"));
    PathBuf::from(s)
}

pub fn split(input: &Path, seed: u64, prefix: &Path, ratios: &[f64]) -> Result<()> {
    const CMD: &str = "dataset split";
    let records = load_jsonl(input).ctx(CMD, input)?;
    let ratios: [f64; 3] = ratios
        .try_into()
        .map_err(|_| CliError::new(CMD, None, "--ratios needs exactly three values"))?;
    let spec = SplitSpec::new(ratios, seed).ctx_no_path(CMD)?;
    let s = dataset::split(records.len(), &spec).ctx(CMD, input)?;
    for (part, idx) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
        write_json(CMD, &split_path(prefix, part), idx)?;
    }
    Ok(())
}

fn featurize_parallel(
    command: &'static str,
    input: &Path,
    records: &[DatasetRecord],
    cfg: &FeaturizeConfig,
) -> Result<Vec<Sample>> {
    records
        .par_iter()
        .map(|r| {
            featurize_record(r, cfg)
                .map_err(|e| CliError::new(command, Some(input), format!("record {:?}: {e}", r.id)))
        })
        .collect()
}

pub fn precompute(input: &Path, out: Option<&Path>, config: Option<&Path>) -> Result<()> {
    const CMD: &str = "precompute";
    let cfg = match config {
        Some(p) => RunConfig::load(CMD, p)?,
        None => RunConfig::default(),
    };
    let dir = cache::cache_dir(out, cfg.paths.cache_dir.as_deref());
    let records = load_jsonl(input).ctx(CMD, input)?;
    let samples = featurize_parallel(CMD, input, &records, &cfg.featurize)?;
    let manifest = CacheManifest {
        config_hash: cfg.featurize.hash(),
        featurize: cfg.featurize,
        dataset: input.to_path_buf(),
        ids: samples.iter().map(|s| s.id.clone()).collect(),
    };
    cache::store(CMD, &dir, &manifest, &samples)?;
    info!("cached {} records in {}", samples.len(), dir.display());
    Ok(())
}

fn read_indices(command: &'static str, path: &Path, n: usize) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).ctx(command, path)?;
    let idx: Vec<usize> = serde_json::from_str(&text).ctx(command, path)?;
    if let Some(bad) = idx.iter().find(|&&i| i >= n) {
        return Err(CliError::new(
            command,
            Some(path),
            format!("index {bad} out of range for {n} cached records"),
        ));
    }
    Ok(idx)
}

fn resolve_split(command: &'static str, cfg: &RunConfig, n: usize) -> Result<Split> {
    match &cfg.paths.split_prefix {
        Some(prefix) => Ok(Split {
            train: read_indices(command, &split_path(prefix, "train"), n)?,
            val: read_indices(command, &split_path(prefix, "val"), n)?,
            test: read_indices(command, &split_path(prefix, "test"), n)?,
        }),
        None => dataset::split(n, &cfg.split).ctx_no_path(command),
    }
}

fn pick(samples: &[Sample], idx: &[usize]) -> Vec<Sample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

#[derive(Debug, Clone, Copy)]
pub enum TrainKind {
    Align,
    Downstream,
    AlignFuse,
}

pub fn train(kind: TrainKind, config: &Path, out: &Path, cache_flag: Option<&Path>) -> Result<()> {
    let cmd: &'static str = match kind {
        TrainKind::Align => "train align",
        TrainKind::Downstream => "train downstream",
        TrainKind::AlignFuse => "train align-fuse",
    };
    let cfg = RunConfig::load(cmd, config)?;
    let dir = cache::cache_dir(cache_flag, cfg.paths.cache_dir.as_deref());
    let (_, samples) = cache::load(cmd, &dir, &cfg.featurize)?;
    let s = resolve_split(cmd, &cfg, samples.len())?;
    let (train_set, val_set) = (pick(&samples, &s.train), pick(&samples, &s.val));
    let pair = |m: Vec<Modality>| -> Result<(Modality, Modality)> {
        match m[..] {
            [a, b] => Ok((a, b)),
            _ => Err(CliError::new(
                cmd,
                Some(config),
                "modalities must list exactly two entries",
            )),
        }
    };
    let fail = |e: matmodal_models::ModelError| CliError::new(cmd, Some(config), e.to_string());
    let outcome: TrainOutcome = match kind {
        TrainKind::Align => {
            let p = pair(cfg.modalities_or(cmd, &[Modality::Structure, Modality::Xrd])?)?;
            train_align(p, &train_set, &val_set, &cfg.encoder, &cfg.train).map_err(fail)?
        }
        TrainKind::AlignFuse => {
            let p = pair(cfg.modalities_or(cmd, &[Modality::Xrd, Modality::Composition])?)?;
            train_align_fuse(p, &train_set, &val_set, &cfg.encoder, &cfg.train).map_err(fail)?
        }
        TrainKind::Downstream => {
            let m = cfg.modalities_or(cmd, &[Modality::Structure])?;
            let arch = match m[..] {
                [modality] => Architecture::Single { modality },
                [first, second] => Architecture::Fused { first, second },
                _ => unreachable!("validated to one or two"),
            };
            let aligned = match &cfg.init_checkpoint {
                Some(p) => Some(load_checkpoint(p).ctx(cmd, p)?),
                None => None,
            };
            let init = aligned
                .as_ref()
                .map_or(EncoderInit::Random, |c| EncoderInit::Aligned(&c.model));
            train_downstream(arch, init, &train_set, &val_set, &cfg.encoder, &cfg.train)
                .map_err(fail)?
        }
    };
    fs::create_dir_all(out).ctx(cmd, out)?;
    write_json(cmd, &out.join(RUN_CONFIG), &cfg)?;
    write_json(cmd, &out.join(HISTORY), &outcome.history)?;
    let ckpt = Checkpoint {
        model: outcome.model,
        seed: cfg.train.seed,
        train_config: Some(cfg.train.clone()),
        featurize: Some(cfg.featurize),
    };
    let path = out.join(CHECKPOINT);
    save_checkpoint(&ckpt, &path).ctx(cmd, &path)?;
    info!("wrote {}", path.display());
    Ok(())
}

pub fn eval(
    checkpoint: &Path,
    split_name: &str,
    out: &Path,
    config: Option<&Path>,
    cache_flag: Option<&Path>,
) -> Result<()> {
    const CMD: &str = "eval";
    let ckpt = load_checkpoint(checkpoint).ctx(CMD, checkpoint)?;
    let cfg_path = config.map_or_else(
        || {
            checkpoint
                .parent()
                .unwrap_or(Path::new("."))
                .join(RUN_CONFIG)
        },
        Path::to_path_buf,
    );
    let cfg = RunConfig::load(CMD, &cfg_path)?;
    if let Some(f) = &ckpt.featurize {
        if f.hash() != cfg.featurize.hash() {
            return Err(CliError::new(
                CMD,
                Some(&cfg_path),
                "featurize config differs from the one the checkpoint was trained with",
            ));
        }
    }
    let dir = cache::cache_dir(cache_flag, cfg.paths.cache_dir.as_deref());
    let (_, samples) = cache::load(CMD, &dir, &cfg.featurize)?;
    let s = resolve_split(CMD, &cfg, samples.len())?;
    let idx = match split_name {
        "train" => &s.train,
        "val" => &s.val,
        "test" => &s.test,
        other => {
            return Err(CliError::new(
                CMD,
                None,
                format!("--split must be train, val or test, got {other:?}"),
            ))
        }
    };
    let chosen: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
    let counts = SplitCounts {
        train: s.train.len(),
        val: s.val.len(),
        test: s.test.len(),
    };
    let report = ckpt
        .model
        .evaluate(&chosen, split_name, counts)
        .ctx(CMD, checkpoint)?;
    write_json(CMD, out, &report)
}

#[derive(Serialize)]
struct EmbeddingLine<'a> {
    id: &'a str,
    crystal_system: &'static str,
    embedding: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    xyz: Option<[f64; 3]>,
}

fn parse_modality(s: &str) -> Option<Modality> {
    [Modality::Xrd, Modality::Composition, Modality::Structure]
        .into_iter()
        .find(|m| m.name() == s)
}

pub fn embed(
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    with_pca: bool,
    modality: Option<&str>,
) -> Result<()> {
    const CMD: &str = "embed";
    let ckpt = load_checkpoint(checkpoint).ctx(CMD, checkpoint)?;
    let records = load_jsonl(input).ctx(CMD, input)?;
    let fcfg = ckpt.featurize.unwrap_or_default();
    let samples = featurize_parallel(CMD, input, &records, &fcfg)?;
    let refs: Vec<&Sample> = samples.iter().collect();
    let model = &ckpt.model;
    let embeddings = match (model.spec.architecture, modality) {
        (_, Some(name)) => {
            let m = parse_modality(name).ok_or_else(|| {
                CliError::new(
                    CMD,
                    None,
                    format!("--modality must be xrd, composition or structure, got {name:?}"),
                )
            })?;
            model.encode_samples(m, &refs).ctx(CMD, checkpoint)?
        }
        (Architecture::Aligned { first, .. }, None) => {
            model.encode_samples(first, &refs).ctx(CMD, checkpoint)?
        }
        _ => model.predict(&refs).ctx(CMD, checkpoint)?.embeddings,
    };
    let xyz = if with_pca {
        Some(pca3(&embeddings).ctx(CMD, input)?)
    } else {
        None
    };
    let tol = ClassifyTolerance::default();
    let mut body = Vec::new();
    for (i, (r, e)) in records.iter().zip(&embeddings).enumerate() {
        let line = EmbeddingLine {
            id: &r.id,
            crystal_system: r.effective_crystal_system(tol).name(),
            embedding: e,
            xyz: xyz.as_ref().map(|p| p[i]),
        };
        serde_json::to_writer(&mut body, &line).ctx(CMD, out)?;
        body.push(b'\n');
    }
    write_atomic(CMD, out, &body)
}
