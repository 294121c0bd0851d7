//! Minimal CIF reader for P1 structures.

use std::collections::HashMap;

use crate::crystal::{CrystalStructure, Lattice};
use crate::elements::atomic_number;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Word(String),
    Quoted(String),
}

impl Token {
    fn text(&self) -> &str {
        match self {
            Token::Word(s) | Token::Quoted(s) => s,
        }
    }

    fn is_tag(&self) -> bool {
        matches!(self, Token::Word(s) if s.starts_with('_'))
    }

    fn is_keyword(&self) -> bool {
        match self {
            Token::Word(s) => {
                let l = s.to_ascii_lowercase();
                l == "loop_" || l.starts_with("data_") || l.starts_with("save_") || l == "global_"
            }
            Token::Quoted(_) => false,
        }
    }
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        if let Some(rest) = line.strip_prefix(';') {
            let mut block = rest.to_string();
            for next in lines.by_ref() {
                if next.starts_with(';') {
                    break;
                }
                block.push('\n');
                block.push_str(next);
            }
            tokens.push(Token::Quoted(block));
            continue;
        }
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
            } else if c == '#' {
                break;
            } else if c == '\'' || c == '"' {
                // A quote closes only when followed by whitespace or end of line.
                let mut j = i + 1;
                while j < chars.len()
                    && !(chars[j] == c && (j + 1 == chars.len() || chars[j + 1].is_whitespace()))
                {
                    j += 1;
                }
                tokens.push(Token::Quoted(
                    chars[i + 1..j.min(chars.len())].iter().collect(),
                ));
                i = j + 1;
            } else {
                let mut j = i;
                while j < chars.len() && !chars[j].is_whitespace() {
                    j += 1;
                }
                tokens.push(Token::Word(chars[i..j].iter().collect()));
                i = j;
            }
        }
    }
    tokens
}

#[derive(Debug, Default)]
struct CifBlock {
    items: HashMap<String, String>,
    loops: Vec<(Vec<String>, Vec<Vec<String>>)>,
}

impl CifBlock {
    fn parse(text: &str) -> Result<Self> {
        let tokens = tokenize(text);
        let mut block = CifBlock::default();
        let mut i = 0;
        while i < tokens.len() {
            let tok = &tokens[i];
            if tok.text().eq_ignore_ascii_case("loop_") {
                i += 1;
                let mut tags = Vec::new();
                while i < tokens.len() && tokens[i].is_tag() {
                    tags.push(tokens[i].text().to_ascii_lowercase());
                    i += 1;
                }
                let mut values = Vec::new();
                while i < tokens.len() && !tokens[i].is_tag() && !tokens[i].is_keyword() {
                    values.push(tokens[i].text().to_string());
                    i += 1;
                }
                if tags.is_empty() || values.len() % tags.len() != 0 {
                    return Err(Error::Parse {
                        line: 0,
                        message: format!(
                            "loop with {} tags has {} values",
                            tags.len(),
                            values.len()
                        ),
                    });
                }
                let rows = values.chunks(tags.len()).map(|c| c.to_vec()).collect();
                block.loops.push((tags, rows));
            } else if tok.is_tag() {
                let tag = tok.text().to_ascii_lowercase();
                let value = tokens
                    .get(i + 1)
                    .filter(|t| !t.is_tag() && !t.is_keyword())
                    .ok_or_else(|| Error::Parse {
                        line: 0,
                        message: format!("tag {tag} has no value"),
                    })?;
                block.items.insert(tag, value.text().to_string());
                i += 2;
            } else {
                i += 1;
            }
        }
        Ok(block)
    }

    fn item(&self, tag: &str) -> Option<&str> {
        self.items.get(tag).map(String::as_str)
    }

    fn number(&self, tag: &str) -> Result<f64> {
        let raw = self
            .item(tag)
            .ok_or_else(|| Error::MissingTag(tag.to_string()))?;
        parse_number(raw).ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("{tag}: bad number {raw:?}"),
        })
    }

    fn column(&self, tag: &str) -> Option<Vec<&str>> {
        self.loops.iter().find_map(|(tags, rows)| {
            let k = tags.iter().position(|t| t == tag)?;
            Some(rows.iter().map(|r| r[k].as_str()).collect())
        })
    }
}

/// Strips a trailing standard uncertainty such as `5.6402(3)`.
fn parse_number(raw: &str) -> Option<f64> {
    let s = raw.split('(').next()?.trim();
    s.parse().ok()
}

fn is_identity_op(op: &str) -> bool {
    let compact: String = op
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '\'' && *c != '"')
        .collect::<String>()
        .to_ascii_lowercase();
    compact == "x,y,z" || compact == "+x,+y,+z"
}

fn check_p1(block: &CifBlock) -> Result<()> {
    for tag in ["_space_group_it_number", "_symmetry_int_tables_number"] {
        if let Some(v) = block.item(tag) {
            if parse_number(v) != Some(1.0) {
                return Err(Error::UnsupportedSymmetry(format!("{tag} = {v}")));
            }
        }
    }
    for tag in [
        "_symmetry_space_group_name_h-m",
        "_space_group_name_h-m_alt",
    ] {
        if let Some(v) = block.item(tag) {
            let name: String = v.chars().filter(|c| !c.is_whitespace()).collect();
            if !name.eq_ignore_ascii_case("p1") {
                return Err(Error::UnsupportedSymmetry(format!("{tag} = {v}")));
            }
        }
    }
    for tag in [
        "_symmetry_equiv_pos_as_xyz",
        "_space_group_symop_operation_xyz",
    ] {
        if let Some(ops) = block.column(tag) {
            if let Some(op) = ops.iter().find(|op| !is_identity_op(op)) {
                return Err(Error::UnsupportedSymmetry(format!(
                    "symmetry operation {op:?}"
                )));
            }
        }
    }
    Ok(())
}

/// Reads the first data block of a P1 CIF file.
///
/// Element symbols come from `_atom_site_type_symbol` with oxidation-state
/// suffixes stripped; coordinates are wrapped into [0, 1).
pub fn parse_cif_p1(text: &str) -> Result<CrystalStructure> {
    let block = CifBlock::parse(text)?;
    check_p1(&block)?;
    let lattice = Lattice::new(
        block.number("_cell_length_a")?,
        block.number("_cell_length_b")?,
        block.number("_cell_length_c")?,
        block.number("_cell_angle_alpha")?,
        block.number("_cell_angle_beta")?,
        block.number("_cell_angle_gamma")?,
    )?;
    let symbols = block
        .column("_atom_site_type_symbol")
        .ok_or_else(|| Error::MissingTag("_atom_site_type_symbol".into()))?;
    let mut coords = Vec::with_capacity(symbols.len());
    let cols: Vec<Vec<&str>> = [
        "_atom_site_fract_x",
        "_atom_site_fract_y",
        "_atom_site_fract_z",
    ]
    .iter()
    .map(|t| {
        block
            .column(t)
            .ok_or_else(|| Error::MissingTag(t.to_string()))
    })
    .collect::<Result<_>>()?;
    for i in 0..symbols.len() {
        let mut f = [0.0; 3];
        for k in 0..3 {
            f[k] = parse_number(cols[k][i]).ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("bad fractional coordinate {:?}", cols[k][i]),
            })?;
        }
        coords.push(f);
    }
    let species = symbols
        .iter()
        .map(|s| atomic_number(s))
        .collect::<Result<Vec<_>>>()?;
    CrystalStructure::new(lattice, species, coords)
}
