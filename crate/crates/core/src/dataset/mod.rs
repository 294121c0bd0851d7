//! Dataset records, interchange formats and splitting.

mod cif;
mod jsonl;
mod split;
mod synth;

pub use cif::parse_cif_p1;
pub use jsonl::{load_jsonl, read_jsonl, write_jsonl, RecordLine};
pub use split::{split, Split, SplitSpec};
pub use synth::{synth_generate, PrototypeFamily, ELEMENT_POOL};

use crate::crystal::{ClassifyTolerance, CrystalStructure, CrystalSystem};

/// One material: structure plus optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub structure: CrystalStructure,
    /// eV/atom.
    pub formation_energy: Option<f64>,
    pub crystal_system: Option<CrystalSystem>,
}

impl DatasetRecord {
    /// The explicit label when present, otherwise the metric classification.
    pub fn effective_crystal_system(&self, tol: ClassifyTolerance) -> CrystalSystem {
        self.crystal_system
            .unwrap_or_else(|| self.structure.lattice().crystal_system(tol))
    }
}
