//! Tabulated elemental data shipped with the crate.
//!
//! `data/elements.txt` holds the eight properties used for composition
//! statistics; `data/cromer_mann.txt` holds X-ray scattering factor
//! coefficients. Both cover Z = 1..98 and are parsed once on first use.

use std::sync::OnceLock;

use crate::{Error, Result};

pub const MAX_Z: u8 = 98;

const ELEMENTS_TXT: &str = include_str!("../data/elements.txt");

/// Number of per-element properties in [`ElementTable`].
pub const N_PROPERTIES: usize = 8;

/// Property names in the order they appear in feature vectors.
pub const PROPERTY_NAMES: [&str; N_PROPERTIES] = [
    "atomic_number",
    "atomic_mass",
    "electronegativity",
    "row",
    "group",
    "covalent_radius",
    "valence_electrons",
    "mendeleev_number",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ElementData {
    pub z: u8,
    pub symbol: String,
    pub properties: [f64; N_PROPERTIES],
    /// Electronegativity was gap-filled rather than tabulated.
    pub en_extrapolated: bool,
}

impl ElementData {
    pub fn electronegativity(&self) -> f64 {
        self.properties[2]
    }

    /// Covalent radius in pm.
    pub fn covalent_radius(&self) -> f64 {
        self.properties[5]
    }
}

#[derive(Debug, Clone)]
pub struct ElementTable {
    entries: Vec<ElementData>,
}

impl ElementTable {
    /// The bundled table. Parsed once and shared.
    pub fn builtin() -> &'static ElementTable {
        static TABLE: OnceLock<ElementTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            ElementTable::parse(ELEMENTS_TXT).expect("bundled element table is well formed")
        })
    }

    /// Parses the columnar text format: `Z symbol` followed by the eight
    /// properties and a 0/1 extrapolation flag. `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 3 + N_PROPERTIES {
                return Err(parse_err(format!(
                    "expected {} columns, found {}",
                    3 + N_PROPERTIES,
                    cols.len()
                )));
            }
            let z: u8 = cols[0]
                .parse()
                .map_err(|e| parse_err(format!("bad Z {:?}: {e}", cols[0])))?;
            let mut properties = [0.0; N_PROPERTIES];
            for (k, slot) in properties.iter_mut().enumerate() {
                *slot = cols[2 + k]
                    .parse()
                    .map_err(|e| parse_err(format!("bad value {:?}: {e}", cols[2 + k])))?;
            }
            let en_extrapolated = cols[2 + N_PROPERTIES] == "1";
            entries.push(ElementData {
                z,
                symbol: cols[1].to_string(),
                properties,
                en_extrapolated,
            });
        }
        entries.sort_by_key(|e| e.z);
        Ok(Self { entries })
    }

    pub fn get(&self, z: u8) -> Result<&ElementData> {
        self.entries
            .binary_search_by_key(&z, |e| e.z)
            .map(|i| &self.entries[i])
            .map_err(|_| Error::MissingElement(z))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ElementData> {
        self.entries.iter()
    }
}

/// Chemical symbol for an atomic number in 1..=98.
pub fn symbol(z: u8) -> Option<&'static str> {
    ElementTable::builtin()
        .get(z)
        .ok()
        .map(|e| e.symbol.as_str())
}

/// Maps a symbol such as `"Fe"`, `"FE"`, `"fe"` or `"Fe3+"` to its atomic
/// number. Oxidation-state and site-label suffixes are stripped.
pub fn atomic_number(label: &str) -> Result<u8> {
    let letters: String = label
        .trim()
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect();
    let unknown = || Error::UnknownElement(label.to_string());
    if letters.is_empty() {
        return Err(unknown());
    }
    let table = ElementTable::builtin();
    let find = |s: &str| {
        table
            .iter()
            .find(|e| e.symbol.eq_ignore_ascii_case(s))
            .map(|e| e.z)
    };
    // Two-letter symbol first, then a single letter ("Os" vs "O", "Co1" vs "C").
    let mut chars = letters.chars();
    let first = chars.next().unwrap();
    if let Some(second) = chars.next() {
        let two: String = [first, second].iter().collect();
        if let Some(z) = find(&two) {
            return Ok(z);
        }
        if letters.len() > 2 || second.is_ascii_uppercase() {
            return find(&first.to_string()).ok_or_else(unknown);
        }
    }
    find(&first.to_string()).ok_or_else(unknown)
}
