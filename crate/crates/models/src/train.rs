//! Seeded mini-batch training: contrastive alignment, downstream task
//! training and joint alignment + fusion.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use matmodal_core::eval::SplitCounts;
use matmodal_core::rng::Xoshiro256;
use matmodal_nn::loss::contrastive_on_tape;
use matmodal_nn::{cosine_sim, Adam, Tape, Var};

use crate::config::{EncoderConfig, Modality, Task, TrainConfig};
use crate::data::{Sample, Standardization, Targets};
use crate::model::{Architecture, Model, ModelSpec};
use crate::{ModelError, Result};

/// RNG stream of the batch shuffler; parameter init uses its own stream.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Lower is better; see [`History::val_metric`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    /// What `EpochRecord::val` measures.
    pub val_metric: String,
    pub epochs: Vec<EpochRecord>,
    /// Loss of every optimizer step.
    pub steps: Vec<f64>,
    /// Epoch whose parameters were kept, if validation ran.
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: History,
}

/// Where a downstream encoder starts.
#[derive(Debug, Clone, Copy)]
pub enum EncoderInit<'a> {
    Random,
    /// Copies encoder weights of matching modalities from an aligned pair.
    Aligned(&'a Model),
}

fn refs(samples: &[Sample]) -> Vec<&Sample> {
    samples.iter().collect()
}

fn check_nonempty(train: &[Sample]) -> Result<()> {
    if train.len() < 2 {
        return Err(ModelError::Data(format!(
            "training needs at least 2 records, got {}",
            train.len()
        )));
    }
    Ok(())
}

fn xrd_points(train: &[Sample]) -> usize {
    train[0].xrd.len()
}

/// Shared loop. `loss_fn` builds the batch loss; `val_fn` scores the model
/// after every epoch and the best-scoring parameters are kept.
fn fit<L, V>(
    model: &mut Model,
    train: &[Sample],
    cfg: &TrainConfig,
    val_metric: &str,
    loss_fn: L,
    val_fn: Option<V>,
) -> Result<History>
where
    L: Fn(&Model, &mut Tape, &[&Sample]) -> Result<Var>,
    V: Fn(&Model) -> Result<f64>,
{
    cfg.validate()?;
    if !cfg.trainable_tau {
        model.set_tau(cfg.tau);
    }
    let mut adam = Adam::new(&model.store, cfg.adam);
    let mut shuffler = Xoshiro256::fork(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let log_tau = model.log_tau().index();
    let frozen: Vec<bool> = model
        .store
        .iter()
        .map(|(_, p)| cfg.freeze_encoder && p.name.starts_with("enc."))
        .collect();
    let mut history = History {
        val_metric: val_metric.to_string(),
        ..History::default()
    };
    let mut best: Option<(f64, matmodal_nn::ParamStore)> = None;
    'epochs: for epoch in 0..cfg.epochs {
        shuffler.shuffle(&mut order);
        let mut total = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| history.steps.len() >= m) {
                break;
            }
            if chunk.len() < 2 {
                warn!(
                    "skipping batch of {} record(s) in epoch {epoch}",
                    chunk.len()
                );
                continue;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let mut grads = {
                let mut tape = Tape::new(&model.store);
                let loss = loss_fn(model, &mut tape, &batch)?;
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(ModelError::Data(format!(
                        "non-finite loss at epoch {epoch}, step {}",
                        history.steps.len()
                    )));
                }
                history.steps.push(value);
                total += value;
                n_batches += 1;
                tape.backward(loss)?.into_param_grads()
            };
            for (g, f) in grads.iter_mut().zip(&frozen) {
                if *f {
                    *g = None;
                }
            }
            if !cfg.trainable_tau {
                grads[log_tau] = None;
            }
            adam.step(&mut model.store, &grads)?;
        }
        if n_batches == 0 {
            break 'epochs;
        }
        let val = match &val_fn {
            Some(f) => Some(f(model)?),
            None => None,
        };
        let train_loss = total / n_batches as f64;
        debug!("epoch {epoch}: train loss {train_loss:.6} val {val:?}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val,
        });
        if let Some(v) = val {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.store.clone()));
                history.best_epoch = Some(epoch);
            }
        }
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    Ok(history)
}

fn contrastive(model: &Model, tape: &mut Tape, z1: Var, z2: Var, cfg: &TrainConfig) -> Result<Var> {
    let lt = tape.param(model.log_tau());
    let tau = tape.exp(lt);
    Ok(contrastive_on_tape(tape, z1, z2, tau, cfg.variant)?)
}

/// Mean contrastive loss of `samples` in batches of the training size.
fn contrastive_eval(
    model: &Model,
    samples: &[&Sample],
    first: Modality,
    second: Modality,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0;
    for chunk in samples.chunks(cfg.batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let inputs = model.inputs(chunk)?;
        let mut tape = Tape::new(&model.store);
        let z1 = model.encode(&mut tape, first, &inputs)?;
        let z2 = model.encode(&mut tape, second, &inputs)?;
        let l = contrastive(model, &mut tape, z1, z2, cfg)?;
        total += tape.scalar(l);
        n += 1;
    }
    Ok(if n == 0 {
        f64::INFINITY
    } else {
        total / n as f64
    })
}

/// Contrastive pre-training of two encoders.
pub fn train_align(
    pair: (Modality, Modality),
    train: &[Sample],
    val: &[Sample],
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    check_nonempty(train)?;
    let (first, second) = pair;
    let spec = ModelSpec {
        architecture: Architecture::Aligned { first, second },
        encoder: encoder.clone(),
        tasks: Vec::new(),
        xrd_points: xrd_points(train),
    };
    let stats = Standardization::fit(&refs(train))?;
    let mut model = Model::new(spec, stats, cfg.seed)?;
    let val_refs = refs(val);
    let val_fn =
        (val.len() >= 2).then_some(|m: &Model| contrastive_eval(m, &val_refs, first, second, cfg));
    let history = fit(
        &mut model,
        train,
        cfg,
        "contrastive_loss",
        |m, tape, batch| {
            let inputs = m.inputs(batch)?;
            let z1 = m.encode(tape, first, &inputs)?;
            let z2 = m.encode(tape, second, &inputs)?;
            contrastive(m, tape, z1, z2, cfg)
        },
        val_fn,
    )?;
    Ok(TrainOutcome { model, history })
}

/// Validation score for task models: lattice-length MAE when predicted,
/// else formation-energy MAE, else classification error rate.
fn task_val(model: &Model, val: &[&Sample]) -> Result<f64> {
    let r = model.evaluate(
        val,
        "val",
        SplitCounts {
            train: 0,
            val: val.len(),
            test: 0,
        },
    )?;
    r.mae_lattice_lengths
        .or(r.mae_formation_energy)
        .or(r.accuracy.map(|a| 1.0 - a))
        .ok_or_else(|| ModelError::Data("validation produced no metric".into()))
}

fn task_val_name(tasks: &[Task]) -> &'static str {
    if tasks.contains(&Task::Lattice) {
        "mae_lattice_lengths"
    } else if tasks.contains(&Task::FormationEnergy) {
        "mae_formation_energy"
    } else {
        "classification_error"
    }
}

fn task_model(
    architecture: Architecture,
    train: &[Sample],
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<Model> {
    check_nonempty(train)?;
    let spec = ModelSpec {
        architecture,
        encoder: encoder.clone(),
        tasks: cfg.tasks.clone(),
        xrd_points: xrd_points(train),
    };
    let stats = Standardization::fit(&refs(train))?;
    // Fail before training if a requested label is missing anywhere.
    Targets::build(&refs(train), &cfg.tasks, &stats)?;
    Model::new(spec, stats, cfg.seed)
}

/// Task training of a single-modality or fused model. With
/// [`EncoderInit::Aligned`] the matching encoders start from the aligned
/// pair's weights; `cfg.freeze_encoder` keeps them fixed.
pub fn train_downstream(
    architecture: Architecture,
    init: EncoderInit,
    train: &[Sample],
    val: &[Sample],
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if let Architecture::Aligned { .. } = architecture {
        return Err(ModelError::Config(
            "downstream training needs a model with task heads".into(),
        ));
    }
    let mut model = task_model(architecture, train, encoder, cfg)?;
    if let EncoderInit::Aligned(src) = init {
        if src.spec.encoder != *encoder {
            return Err(ModelError::Config(
                "aligned checkpoint was trained with a different encoder config".into(),
            ));
        }
        let mut copied = 0;
        for m in architecture.modalities() {
            copied += model.store.copy_matching(&src.store, m.prefix());
        }
        if copied == 0 {
            return Err(ModelError::Config(format!(
                "aligned checkpoint ({}) shares no encoder with {}",
                src.spec.architecture.describe(),
                architecture.describe()
            )));
        }
    }
    let val_refs = refs(val);
    let val_fn = (!val.is_empty()).then_some(|m: &Model| task_val(m, &val_refs));
    let history = fit(
        &mut model,
        train,
        cfg,
        task_val_name(&cfg.tasks),
        |m, tape, batch| {
            let inputs = m.inputs(batch)?;
            let targets = Targets::build(batch, &m.spec.tasks, &m.stats)?;
            let (z, _) = m.embed_on_tape(tape, &inputs)?;
            let heads = m.heads_on_tape(tape, z)?;
            m.task_loss(tape, &heads, &targets)
        },
        val_fn,
    )?;
    Ok(TrainOutcome { model, history })
}

/// Joint objective `L_task + λ·L_contrastive`: the contrastive term aligns
/// the two encoder outputs, the heads read their fused embedding.
pub fn train_align_fuse(
    pair: (Modality, Modality),
    train: &[Sample],
    val: &[Sample],
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let architecture = Architecture::Fused {
        first: pair.0,
        second: pair.1,
    };
    let mut model = task_model(architecture, train, encoder, cfg)?;
    let val_refs = refs(val);
    let val_fn = (!val.is_empty()).then_some(|m: &Model| task_val(m, &val_refs));
    let history = fit(
        &mut model,
        train,
        cfg,
        task_val_name(&cfg.tasks),
        |m, tape, batch| {
            let inputs = m.inputs(batch)?;
            let targets = Targets::build(batch, &m.spec.tasks, &m.stats)?;
            let (z, parts) = m.embed_on_tape(tape, &inputs)?;
            let heads = m.heads_on_tape(tape, z)?;
            let task = m.task_loss(tape, &heads, &targets)?;
            if cfg.lambda == 0.0 {
                return Ok(task);
            }
            let con = contrastive(m, tape, parts[0], parts[1], cfg)?;
            let con = tape.scale(con, cfg.lambda);
            Ok(tape.add(task, con)?)
        },
        val_fn,
    )?;
    Ok(TrainOutcome { model, history })
}

/// Fraction of rows `i` whose partner `b[i]` is among the `k` most
/// cosine-similar rows of `b` to `a[i]`. Ties count against the partner.
pub fn retrieval_top_k(a: &[Vec<f64>], b: &[Vec<f64>], k: usize) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(ModelError::Data(format!(
            "retrieval needs equal nonempty sets, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut hits = 0;
    for (i, q) in a.iter().enumerate() {
        let own = cosine_sim(q, &b[i])?;
        let mut better = 0;
        for (j, c) in b.iter().enumerate() {
            if j != i && cosine_sim(q, c)? >= own {
                better += 1;
            }
        }
        if better < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / a.len() as f64)
}
