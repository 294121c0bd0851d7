//! A parameter store wired into encoders, optional fusion and task heads.

use serde::{Deserialize, Serialize};

use matmodal_core::eval::{self, ClassAccuracy, EvalReport, SplitCounts};
use matmodal_core::rng::Xoshiro256;
use matmodal_core::CrystalSystem;
use matmodal_nn::{Init, ParamId, ParamStore, Tape, Var};

use crate::config::{EncoderConfig, Modality, Task};
use crate::data::{BatchInputs, Sample, Standardization, Targets};
use crate::encoders::{CompMlp, Fusion, Head, Mpnn, XrdCnn};
use crate::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// One encoder feeding the heads.
    Single { modality: Modality },
    /// Two encoders, concatenation fusion, heads on the fused embedding.
    Fused { first: Modality, second: Modality },
    /// Two encoders trained for cross-modal agreement; no heads.
    Aligned { first: Modality, second: Modality },
}

impl Architecture {
    pub fn modalities(&self) -> Vec<Modality> {
        match *self {
            Architecture::Single { modality } => vec![modality],
            Architecture::Fused { first, second } | Architecture::Aligned { first, second } => {
                vec![first, second]
            }
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Architecture::Single { modality } => modality.name().to_string(),
            Architecture::Fused { first, second } => {
                format!("{}+{} fused", first.name(), second.name())
            }
            Architecture::Aligned { first, second } => {
                format!("{}/{} aligned", first.name(), second.name())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub encoder: EncoderConfig,
    pub tasks: Vec<Task>,
    /// Length of the XRD grid the CNN expects.
    pub xrd_points: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let mods = self.architecture.modalities();
        if mods.len() == 2 && mods[0] == mods[1] {
            return Err(ModelError::Config("the two modalities must differ".into()));
        }
        if let Architecture::Aligned { .. } = self.architecture {
            if !self.tasks.is_empty() {
                return Err(ModelError::Config(
                    "an aligned encoder pair has no task heads".into(),
                ));
            }
        } else if self.tasks.is_empty() {
            return Err(ModelError::Config("at least one task is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Parts {
    xrd: Option<XrdCnn>,
    comp: Option<CompMlp>,
    structure: Option<Mpnn>,
    fusion: Option<Fusion>,
    heads: Vec<(Task, Head)>,
    log_tau: ParamId,
}

/// Predictions in physical units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Predictions {
    pub lattice: Vec<[f64; 6]>,
    pub formation_energy: Vec<f64>,
    pub crystal_system: Vec<usize>,
    pub embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub stats: Standardization,
    parts: Parts,
}

pub const EVAL_BATCH: usize = 256;

impl Model {
    /// Fresh parameters drawn from `seed`.
    pub fn new(spec: ModelSpec, stats: Standardization, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = Xoshiro256::fork(seed, 0x1417);
        let mut store = ParamStore::new();
        let enc = &spec.encoder;
        let mods = spec.architecture.modalities();
        let log_tau = store.add("log_tau", vec![1], Init::Constant(0.1f64.ln()), &mut rng)?;
        let mut parts = Parts {
            xrd: None,
            comp: None,
            structure: None,
            fusion: None,
            heads: Vec::new(),
            log_tau,
        };
        for m in &mods {
            match m {
                Modality::Xrd => {
                    parts.xrd = Some(XrdCnn::new(
                        &mut store,
                        m.prefix(),
                        enc,
                        spec.xrd_points,
                        &mut rng,
                    )?)
                }
                Modality::Composition => {
                    parts.comp = Some(CompMlp::new(&mut store, m.prefix(), enc, &mut rng)?)
                }
                Modality::Structure => {
                    parts.structure = Some(Mpnn::new(&mut store, m.prefix(), enc, &mut rng)?)
                }
            }
        }
        if let Architecture::Fused { .. } = spec.architecture {
            parts.fusion = Some(Fusion::new(&mut store, "fuse", enc.d, &mut rng)?);
        }
        for t in &spec.tasks {
            let head = Head::new(
                &mut store,
                &format!("head.{}", t.name()),
                enc.d,
                enc.head_hidden,
                t.out_dim(),
                &mut rng,
            )?;
            parts.heads.push((*t, head));
        }
        Ok(Self {
            spec,
            store,
            stats,
            parts,
        })
    }

    /// Rebuilds the model for `spec` and installs `store`'s values; every
    /// parameter must be present with the right shape.
    pub fn from_parts(spec: ModelSpec, stats: Standardization, store: ParamStore) -> Result<Self> {
        let mut model = Self::new(spec, stats, 0)?;
        if store.len() != model.store.len() {
            return Err(ModelError::Config(format!(
                "{} stored parameters, model has {}",
                store.len(),
                model.store.len()
            )));
        }
        for (_, p) in store.iter() {
            model.store.set(&p.name, p.value.clone())?;
        }
        Ok(model)
    }

    pub fn log_tau(&self) -> ParamId {
        self.parts.log_tau
    }

    pub fn tau(&self) -> f64 {
        self.store.get(self.parts.log_tau).data()[0].exp()
    }

    pub fn set_tau(&mut self, tau: f64) {
        self.store.get_mut(self.parts.log_tau).data_mut()[0] = tau.ln();
    }

    pub fn inputs(&self, samples: &[&Sample]) -> Result<BatchInputs> {
        BatchInputs::build(
            samples,
            &self.spec.architecture.modalities(),
            &self.stats,
            self.spec.encoder.cnn.coord_channel,
        )
    }

    pub fn encode(&self, tape: &mut Tape, modality: Modality, inputs: &BatchInputs) -> Result<Var> {
        let absent = || ModelError::Config(format!("model has no {} encoder", modality.name()));
        match modality {
            Modality::Xrd => self
                .parts
                .xrd
                .as_ref()
                .ok_or_else(absent)?
                .forward(tape, inputs),
            Modality::Composition => self
                .parts
                .comp
                .as_ref()
                .ok_or_else(absent)?
                .forward(tape, inputs),
            Modality::Structure => self
                .parts
                .structure
                .as_ref()
                .ok_or_else(absent)?
                .forward(tape, inputs),
        }
    }

    /// The embedding the heads read, plus the per-modality encoder outputs
    /// that produced it.
    pub fn embed_on_tape(&self, tape: &mut Tape, inputs: &BatchInputs) -> Result<(Var, Vec<Var>)> {
        match self.spec.architecture {
            Architecture::Single { modality } => {
                let z = self.encode(tape, modality, inputs)?;
                Ok((z, vec![z]))
            }
            Architecture::Fused { first, second } => {
                let z1 = self.encode(tape, first, inputs)?;
                let z2 = self.encode(tape, second, inputs)?;
                let fusion = self
                    .parts
                    .fusion
                    .as_ref()
                    .expect("fused model has a fusion block");
                let z = fusion.forward(tape, z1, z2)?;
                Ok((z, vec![z1, z2]))
            }
            Architecture::Aligned { .. } => Err(ModelError::Config(
                "an aligned encoder pair has no joint embedding; encode each modality".into(),
            )),
        }
    }

    pub fn heads_on_tape(&self, tape: &mut Tape, z: Var) -> Result<Vec<(Task, Var)>> {
        self.parts
            .heads
            .iter()
            .map(|(t, h)| Ok((*t, h.forward(tape, z)?)))
            .collect()
    }

    /// Equal-weight sum of MSE (regression, standardized) and
    /// cross-entropy (classification) over the model's tasks.
    pub fn task_loss(
        &self,
        tape: &mut Tape,
        heads: &[(Task, Var)],
        targets: &Targets,
    ) -> Result<Var> {
        let mut total: Option<Var> = None;
        for (t, out) in heads {
            let l = match t {
                Task::Lattice => tape.mse(*out, &targets.lattice)?,
                Task::FormationEnergy => tape.mse(*out, &targets.energy)?,
                Task::CrystalSystem => tape.cross_entropy(*out, &targets.system)?,
            };
            total = Some(match total {
                None => l,
                Some(acc) => tape.add(acc, l)?,
            });
        }
        total.ok_or_else(|| ModelError::Config("no task heads".into()))
    }

    /// Predictions and head-input embeddings in batches of [`EVAL_BATCH`].
    pub fn predict(&self, samples: &[&Sample]) -> Result<Predictions> {
        let mut p = Predictions::default();
        for chunk in samples.chunks(EVAL_BATCH) {
            let inputs = self.inputs(chunk)?;
            let mut tape = Tape::new(&self.store);
            let (z, _) = self.embed_on_tape(&mut tape, &inputs)?;
            let d = tape.shape(z)[1];
            p.embeddings
                .extend(tape.value(z).chunks(d).map(|r| r.to_vec()));
            for (t, out) in self.heads_on_tape(&mut tape, z)? {
                let v = tape.value(out);
                match t {
                    Task::Lattice => p
                        .lattice
                        .extend(v.chunks(6).map(|r| self.stats.lattice_from_std(r))),
                    Task::FormationEnergy => p
                        .formation_energy
                        .extend(v.iter().map(|z| self.stats.energy_from_std(*z))),
                    Task::CrystalSystem => {
                        p.crystal_system
                            .extend(v.chunks(CrystalSystem::COUNT).map(|r| {
                                r.iter()
                                    .enumerate()
                                    .fold(0, |best, (i, x)| if *x > r[best] { i } else { best })
                            }))
                    }
                }
            }
        }
        Ok(p)
    }

    /// Per-modality encoder outputs, e.g. for retrieval with an aligned pair.
    pub fn encode_samples(&self, modality: Modality, samples: &[&Sample]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(EVAL_BATCH) {
            let inputs = BatchInputs::build(
                chunk,
                &[modality],
                &self.stats,
                self.spec.encoder.cnn.coord_channel,
            )?;
            let mut tape = Tape::new(&self.store);
            let z = self.encode(&mut tape, modality, &inputs)?;
            let d = tape.shape(z)[1];
            out.extend(tape.value(z).chunks(d).map(|r| r.to_vec()));
        }
        Ok(out)
    }

    /// Metrics on `samples` in physical units. Silhouette is computed on
    /// the full head-input embeddings against crystal-system labels.
    pub fn evaluate(
        &self,
        samples: &[&Sample],
        split_name: &str,
        counts: SplitCounts,
    ) -> Result<EvalReport> {
        let p = self.predict(samples)?;
        let mut report = EvalReport {
            model: self.spec.architecture.describe(),
            split: split_name.to_string(),
            mae_lattice_lengths: None,
            mae_lattice_angles: None,
            mae_formation_energy: None,
            accuracy: None,
            per_class_accuracy: Vec::new(),
            confusion: None,
            silhouette: None,
            silhouette_space: "full_embedding".into(),
            n_evaluated: samples.len(),
            counts,
        };
        if !p.lattice.is_empty() {
            let (mut pl, mut tl, mut pa, mut ta) = (vec![], vec![], vec![], vec![]);
            for (pred, s) in p.lattice.iter().zip(samples) {
                pl.extend_from_slice(&pred[..3]);
                tl.extend_from_slice(&s.lattice[..3]);
                pa.extend_from_slice(&pred[3..]);
                ta.extend_from_slice(&s.lattice[3..]);
            }
            report.mae_lattice_lengths = Some(eval::mae(&pl, &tl)?);
            report.mae_lattice_angles = Some(eval::mae(&pa, &ta)?);
        }
        if !p.formation_energy.is_empty() {
            let mut pe = Vec::new();
            let mut te = Vec::new();
            for (e, s) in p.formation_energy.iter().zip(samples) {
                if let Some(t) = s.formation_energy {
                    pe.push(*e);
                    te.push(t);
                }
            }
            if !pe.is_empty() {
                report.mae_formation_energy = Some(eval::mae(&pe, &te)?);
            }
        }
        let labels: Vec<usize> = samples.iter().map(|s| s.crystal_system.index()).collect();
        if !p.crystal_system.is_empty() {
            report.accuracy = Some(eval::accuracy(&p.crystal_system, &labels)?);
            let pc = eval::per_class_accuracy(&p.crystal_system, &labels)?;
            for (k, acc) in pc.iter().enumerate() {
                if let Some(a) = acc {
                    report.per_class_accuracy.push(ClassAccuracy {
                        crystal_system: CrystalSystem::ALL[k],
                        accuracy: *a,
                        count: labels.iter().filter(|l| **l == k).count(),
                    });
                }
            }
            let cm = eval::confusion_matrix(&p.crystal_system, &labels)?;
            report.confusion = Some(cm.iter().map(|r| r.to_vec()).collect());
        }
        report.silhouette = eval::silhouette(&p.embeddings, &labels).ok();
        Ok(report)
    }
}
