//! Per-record model inputs and their batching.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use matmodal_core::crystal::ClassifyTolerance;
use matmodal_core::dataset::DatasetRecord;
use matmodal_core::elements::ElementTable;
use matmodal_core::featurize::{magpie_features, FEATURE_LEN};
use matmodal_core::graph::{build_radius_graph, GraphConfig, StructureGraph};
use matmodal_core::xrd::{simulate_pattern, ScatteringTable, XrdSimConfig};
use matmodal_core::CrystalSystem;

use crate::config::{Modality, Task};
use crate::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturizeConfig {
    pub xrd: XrdSimConfig,
    pub graph: GraphConfig,
}

impl FeaturizeConfig {
    /// Hex SHA-256 of the canonical JSON form; identifies cached features.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Everything a model can consume for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    /// Smeared pattern, maximum 100.
    pub xrd: Vec<f64>,
    pub comp: Vec<f64>,
    pub graph: StructureGraph,
    /// a, b, c (Å), α, β, γ (degrees).
    pub lattice: [f64; 6],
    pub formation_energy: Option<f64>,
    pub crystal_system: CrystalSystem,
}

pub fn featurize_record(record: &DatasetRecord, cfg: &FeaturizeConfig) -> Result<Sample> {
    let s = &record.structure;
    let xrd = simulate_pattern(s, &cfg.xrd, ScatteringTable::builtin())?;
    let comp = magpie_features(&s.composition(), ElementTable::builtin())?;
    let graph = build_radius_graph(s, cfg.graph.cutoff, cfg.graph.max_neighbors)?;
    Ok(Sample {
        id: record.id.clone(),
        xrd: xrd.intensities,
        comp: comp.0,
        graph,
        lattice: s.lattice().to_array(),
        formation_energy: record.formation_energy,
        crystal_system: record.effective_crystal_system(ClassifyTolerance::default()),
    })
}

pub fn featurize(records: &[DatasetRecord], cfg: &FeaturizeConfig) -> Result<Vec<Sample>> {
    records.iter().map(|r| featurize_record(r, cfg)).collect()
}

fn mean_std(cols: usize, rows: impl Iterator<Item = Vec<f64>> + Clone) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0usize;
    let mut mean = vec![0.0; cols];
    for r in rows.clone() {
        n += 1;
        for (m, v) in mean.iter_mut().zip(&r) {
            *m += v;
        }
    }
    let nf = n.max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut var = vec![0.0; cols];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(&r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    // Constant columns keep unit scale.
    let std = var
        .iter()
        .map(|s| {
            let sd = (s / nf).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

/// Train-split statistics used to z-score composition inputs and
/// regression targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub comp_mean: Vec<f64>,
    pub comp_std: Vec<f64>,
    pub lattice_mean: [f64; 6],
    pub lattice_std: [f64; 6],
    pub energy_mean: f64,
    pub energy_std: f64,
}

impl Standardization {
    pub fn fit(samples: &[&Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(ModelError::Data(
                "cannot fit standardization on zero samples".into(),
            ));
        }
        let (comp_mean, comp_std) = mean_std(FEATURE_LEN, samples.iter().map(|s| s.comp.clone()));
        let (lm, ls) = mean_std(6, samples.iter().map(|s| s.lattice.to_vec()));
        let (em, es) = mean_std(
            1,
            samples
                .iter()
                .filter_map(|s| s.formation_energy.map(|e| vec![e])),
        );
        Ok(Self {
            comp_mean,
            comp_std,
            lattice_mean: lm.try_into().expect("6 columns"),
            lattice_std: ls.try_into().expect("6 columns"),
            energy_mean: em[0],
            energy_std: es[0],
        })
    }

    pub fn lattice_to_std(&self, v: &[f64; 6]) -> [f64; 6] {
        std::array::from_fn(|k| (v[k] - self.lattice_mean[k]) / self.lattice_std[k])
    }

    pub fn lattice_from_std(&self, z: &[f64]) -> [f64; 6] {
        std::array::from_fn(|k| z[k] * self.lattice_std[k] + self.lattice_mean[k])
    }

    pub fn energy_to_std(&self, e: f64) -> f64 {
        (e - self.energy_mean) / self.energy_std
    }

    pub fn energy_from_std(&self, z: f64) -> f64 {
        z * self.energy_std + self.energy_mean
    }
}

/// Concatenated radius graphs of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub species: Vec<usize>,
    pub node_graph: Vec<usize>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub distances: Vec<f64>,
    pub n_graphs: usize,
}

impl GraphBatch {
    pub fn new(graphs: &[&StructureGraph]) -> Result<Self> {
        let mut b = GraphBatch {
            species: Vec::new(),
            node_graph: Vec::new(),
            src: Vec::new(),
            dst: Vec::new(),
            distances: Vec::new(),
            n_graphs: graphs.len(),
        };
        for (gi, g) in graphs.iter().enumerate() {
            if g.node_species.is_empty() {
                return Err(ModelError::Data(format!("graph {gi} has no nodes")));
            }
            let offset = b.species.len();
            b.species.extend(g.node_species.iter().map(|z| *z as usize));
            b.node_graph
                .extend(std::iter::repeat_n(gi, g.node_species.len()));
            for e in &g.edges {
                b.src.push(offset + e.src);
                b.dst.push(offset + e.dst);
                b.distances.push(e.distance);
            }
        }
        Ok(b)
    }

    pub fn n_nodes(&self) -> usize {
        self.species.len()
    }
}

/// Model-ready inputs of one batch; absent modalities are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInputs {
    pub n: usize,
    /// `[n, channels, points]` row-major.
    pub xrd: Option<Vec<f64>>,
    /// `[n, FEATURE_LEN]`, standardized.
    pub comp: Option<Vec<f64>>,
    pub graph: Option<GraphBatch>,
}

impl BatchInputs {
    pub fn build(
        samples: &[&Sample],
        modalities: &[Modality],
        stats: &Standardization,
        coord_channel: bool,
    ) -> Result<Self> {
        let n = samples.len();
        let mut out = BatchInputs {
            n,
            xrd: None,
            comp: None,
            graph: None,
        };
        if modalities.contains(&Modality::Xrd) {
            let points = samples.first().map_or(0, |s| s.xrd.len());
            let mut v = Vec::with_capacity(n * points * if coord_channel { 2 } else { 1 });
            for s in samples {
                if s.xrd.len() != points {
                    return Err(ModelError::Data(format!(
                        "record {:?}: pattern has {} points, expected {points}",
                        s.id,
                        s.xrd.len()
                    )));
                }
                v.extend(s.xrd.iter().map(|x| x / 100.0));
                if coord_channel {
                    let denom = (points.max(2) - 1) as f64;
                    v.extend((0..points).map(|i| i as f64 / denom));
                }
            }
            out.xrd = Some(v);
        }
        if modalities.contains(&Modality::Composition) {
            let mut v = Vec::with_capacity(n * FEATURE_LEN);
            for s in samples {
                if s.comp.len() != FEATURE_LEN {
                    return Err(ModelError::Data(format!(
                        "record {:?}: {} composition features, expected {FEATURE_LEN}",
                        s.id,
                        s.comp.len()
                    )));
                }
                v.extend(
                    s.comp
                        .iter()
                        .zip(stats.comp_mean.iter().zip(&stats.comp_std))
                        .map(|(x, (m, sd))| (x - m) / sd),
                );
            }
            out.comp = Some(v);
        }
        if modalities.contains(&Modality::Structure) {
            let graphs: Vec<&StructureGraph> = samples.iter().map(|s| &s.graph).collect();
            out.graph = Some(GraphBatch::new(&graphs)?);
        }
        Ok(out)
    }
}

/// Standardized targets of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub lattice: Vec<f64>,
    pub energy: Vec<f64>,
    pub system: Vec<usize>,
}

impl Targets {
    pub fn build(samples: &[&Sample], tasks: &[Task], stats: &Standardization) -> Result<Self> {
        let mut t = Targets {
            lattice: Vec::new(),
            energy: Vec::new(),
            system: Vec::new(),
        };
        for s in samples {
            if tasks.contains(&Task::Lattice) {
                t.lattice.extend(stats.lattice_to_std(&s.lattice));
            }
            if tasks.contains(&Task::FormationEnergy) {
                let e = s.formation_energy.ok_or_else(|| ModelError::MissingLabel {
                    id: s.id.clone(),
                    task: Task::FormationEnergy.name(),
                })?;
                t.energy.push(stats.energy_to_std(e));
            }
            if tasks.contains(&Task::CrystalSystem) {
                t.system.push(s.crystal_system.index());
            }
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use matmodal_core::dataset::{synth_generate, PrototypeFamily};

    #[test]
    fn featurized_shapes_and_hash() {
        let recs = synth_generate(4, 1, &PrototypeFamily::ALL).unwrap();
        let cfg = FeaturizeConfig::default();
        let samples = featurize(&recs, &cfg).unwrap();
        for s in &samples {
            assert_eq!(s.xrd.len(), 901);
            assert_eq!(s.comp.len(), FEATURE_LEN);
            assert!(!s.graph.edges.is_empty());
        }
        assert_eq!(cfg.hash(), FeaturizeConfig::default().hash());
        let mut other = cfg;
        other.xrd.sigma = 0.2;
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn standardization_round_trip() {
        let recs = synth_generate(20, 2, &PrototypeFamily::ALL).unwrap();
        let samples = featurize(&recs, &FeaturizeConfig::default()).unwrap();
        let refs: Vec<&Sample> = samples.iter().collect();
        let st = Standardization::fit(&refs).unwrap();
        for s in &samples {
            let z = st.lattice_to_std(&s.lattice);
            let back = st.lattice_from_std(&z);
            for k in 0..6 {
                assert!((back[k] - s.lattice[k]).abs() <= 1e-12 * s.lattice[k].abs());
            }
        }
        let batch = BatchInputs::build(&refs, &[Modality::Composition], &st, false).unwrap();
        let comp = batch.comp.unwrap();
        let col_mean: f64 = (0..20).map(|i| comp[i * FEATURE_LEN]).sum::<f64>() / 20.0;
        assert!(col_mean.abs() < 1e-12);
    }

    #[test]
    fn missing_energy_label_is_named() {
        let recs = synth_generate(3, 2, &PrototypeFamily::ALL).unwrap();
        let mut samples = featurize(&recs, &FeaturizeConfig::default()).unwrap();
        samples[1].formation_energy = None;
        let refs: Vec<&Sample> = samples.iter().collect();
        let st = Standardization::fit(&refs).unwrap();
        let err = Targets::build(&refs, &[Task::FormationEnergy], &st).unwrap_err();
        assert!(err.to_string().contains("formation_energy"), "{err}");
        assert!(Targets::build(&refs, &[Task::Lattice, Task::CrystalSystem], &st).is_ok());
    }
}
