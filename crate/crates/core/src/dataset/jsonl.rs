use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatasetRecord;
use crate::crystal::{CrystalStructure, CrystalSystem, Lattice, Vec3};
use crate::{Error, Result};

/// On-disk shape of one JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordLine {
    pub id: String,
    /// `[a, b, c, alpha, beta, gamma]`.
    pub lattice: [f64; 6],
    pub species: Vec<u8>,
    pub frac_coords: Vec<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formation_energy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crystal_system: Option<CrystalSystem>,
}

impl From<&DatasetRecord> for RecordLine {
    fn from(r: &DatasetRecord) -> Self {
        Self {
            id: r.id.clone(),
            lattice: r.structure.lattice().to_array(),
            species: r.structure.species().to_vec(),
            frac_coords: r.structure.frac_coords().to_vec(),
            formation_energy: r.formation_energy,
            crystal_system: r.crystal_system,
        }
    }
}

impl RecordLine {
    pub fn into_record(self) -> Result<DatasetRecord> {
        if self.id.is_empty() {
            return Err(Error::InvalidStructure("empty record id".into()));
        }
        if let Some(e) = self.formation_energy {
            if !e.is_finite() {
                return Err(Error::InvalidStructure(format!(
                    "formation_energy {e} is not finite"
                )));
            }
        }
        let lattice = Lattice::from_array(self.lattice)?;
        let structure = CrystalStructure::new(lattice, self.species, self.frac_coords)?;
        Ok(DatasetRecord {
            id: self.id,
            structure,
            formation_energy: self.formation_energy,
            crystal_system: self.crystal_system,
        })
    }
}

/// Parses JSONL text. Blank lines are skipped; ids must be unique.
pub fn read_jsonl(text: &str) -> Result<Vec<DatasetRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line: RecordLine = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let id = line.id.clone();
        let record = line.into_record().map_err(|e| Error::InvalidRecord {
            line: line_no,
            id: id.clone(),
            message: e.to_string(),
        })?;
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId { line: line_no, id });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(&text)
}

pub fn write_jsonl(records: &[DatasetRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(&RecordLine::from(r)).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
