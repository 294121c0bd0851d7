//! Lattice geometry and the crystal data model.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::elements::MAX_Z;
use crate::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Unit cell given by edge lengths (Å) and inter-axial angles (degrees).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    a: f64,
    b: f64,
    c: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl Lattice {
    pub fn new(a: f64, b: f64, c: f64, alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [("a", a), ("b", b), ("c", c)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidLattice(format!("{name}={v} must be > 0")));
            }
        }
        for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !(v.is_finite() && v > 0.0 && v < 180.0) {
                return Err(Error::InvalidLattice(format!(
                    "{name}={v} must lie strictly between 0 and 180 degrees"
                )));
            }
        }
        let lattice = Self {
            a,
            b,
            c,
            alpha,
            beta,
            gamma,
        };
        let radicand = lattice.volume_radicand();
        // Cells flatter than this are numerically coplanar.
        if radicand <= 1e-10 {
            return Err(Error::DegenerateCell { radicand });
        }
        Ok(lattice)
    }

    pub fn from_array(p: [f64; 6]) -> Result<Self> {
        Self::new(p[0], p[1], p[2], p[3], p[4], p[5])
    }

    pub fn cubic(a: f64) -> Result<Self> {
        Self::new(a, a, a, 90.0, 90.0, 90.0)
    }

    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lengths(&self) -> Vec3 {
        [self.a, self.b, self.c]
    }

    pub fn angles(&self) -> Vec3 {
        [self.alpha, self.beta, self.gamma]
    }

    /// `[a, b, c, alpha, beta, gamma]`.
    pub fn to_array(&self) -> [f64; 6] {
        [self.a, self.b, self.c, self.alpha, self.beta, self.gamma]
    }

    /// Same angles, every edge multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.a * factor,
            self.b * factor,
            self.c * factor,
            self.alpha,
            self.beta,
            self.gamma,
        )
    }

    fn cosines(&self) -> Vec3 {
        [
            self.alpha.to_radians().cos(),
            self.beta.to_radians().cos(),
            self.gamma.to_radians().cos(),
        ]
    }

    fn volume_radicand(&self) -> f64 {
        let [ca, cb, cg] = self.cosines();
        1.0 - ca * ca - cb * cb - cg * cg + 2.0 * ca * cb * cg
    }

    /// Cell volume in Å³ from the triclinic formula.
    pub fn volume(&self) -> f64 {
        self.a * self.b * self.c * self.volume_radicand().sqrt()
    }

    /// Lattice vectors as rows, `a` along x and `b` in the xy plane.
    pub fn matrix(&self) -> Mat3 {
        let [ca, cb, cg] = self.cosines();
        let sg = self.gamma.to_radians().sin();
        let cy = (ca - cb * cg) / sg;
        let cz = (1.0 - cb * cb - cy * cy).max(0.0).sqrt();
        [
            [self.a, 0.0, 0.0],
            [self.b * cg, self.b * sg, 0.0],
            [self.c * cb, self.c * cy, self.c * cz],
        ]
    }

    pub fn frac_to_cart(&self, frac: Vec3) -> Vec3 {
        let m = self.matrix();
        let mut out = [0.0; 3];
        for (i, f) in frac.iter().enumerate() {
            for k in 0..3 {
                out[k] += f * m[i][k];
            }
        }
        out
    }

    pub fn cart_to_frac(&self, cart: Vec3) -> Vec3 {
        // Rows of the lattice matrix are the lattice vectors, so
        // frac = cart · M⁻¹.
        let inv = invert3(&self.matrix());
        let mut out = [0.0; 3];
        for (k, c) in cart.iter().enumerate() {
            for i in 0..3 {
                out[i] += c * inv[k][i];
            }
        }
        out
    }

    /// Reciprocal lattice vectors as rows (without the 2π factor).
    pub fn reciprocal_matrix(&self) -> Mat3 {
        transpose3(&invert3(&self.matrix()))
    }

    /// Interplanar spacing for Miller indices `hkl` in Å.
    pub fn d_spacing(&self, hkl: [i32; 3]) -> Result<f64> {
        if hkl == [0, 0, 0] {
            return Err(Error::InvalidArgument(
                "d-spacing undefined for hkl = (0,0,0)".into(),
            ));
        }
        let g = self.reciprocal_matrix();
        let mut q = [0.0; 3];
        for (i, h) in hkl.iter().enumerate() {
            for k in 0..3 {
                q[k] += *h as f64 * g[i][k];
            }
        }
        Ok(1.0 / norm(q))
    }

    /// Distances between opposite cell faces (V / |b×c| and so on).
    pub fn perpendicular_widths(&self) -> Vec3 {
        let m = self.matrix();
        let v = self.volume();
        [
            v / norm(cross(m[1], m[2])),
            v / norm(cross(m[2], m[0])),
            v / norm(cross(m[0], m[1])),
        ]
    }

    /// Metric-only classification of the lattice into one of seven systems.
    pub fn crystal_system(&self, tol: ClassifyTolerance) -> CrystalSystem {
        classify_crystal_system(self, tol)
    }
}

/// Cell volume in Å³.
pub fn cell_volume(lattice: &Lattice) -> f64 {
    lattice.volume()
}

pub(crate) fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub(crate) fn cross(u: Vec3, v: Vec3) -> Vec3 {
    [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ]
}

pub(crate) fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn transpose3(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = m[j][i];
        }
    }
    t
}

fn invert3(m: &Mat3) -> Mat3 {
    let det = det3(m);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    inv
}

/// The seven crystal systems, in descending order of symmetry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrystalSystem {
    Cubic,
    Hexagonal,
    Trigonal,
    Tetragonal,
    Orthorhombic,
    Monoclinic,
    Triclinic,
}

impl CrystalSystem {
    pub const COUNT: usize = 7;

    pub const ALL: [CrystalSystem; 7] = [
        CrystalSystem::Cubic,
        CrystalSystem::Hexagonal,
        CrystalSystem::Trigonal,
        CrystalSystem::Tetragonal,
        CrystalSystem::Orthorhombic,
        CrystalSystem::Monoclinic,
        CrystalSystem::Triclinic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CrystalSystem::Cubic => "cubic",
            CrystalSystem::Hexagonal => "hexagonal",
            CrystalSystem::Trigonal => "trigonal",
            CrystalSystem::Tetragonal => "tetragonal",
            CrystalSystem::Orthorhombic => "orthorhombic",
            CrystalSystem::Monoclinic => "monoclinic",
            CrystalSystem::Triclinic => "triclinic",
        }
    }
}

impl fmt::Display for CrystalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyTolerance {
    /// Relative tolerance for edge-length equality.
    pub rel_tol: f64,
    /// Absolute tolerance in degrees for angle comparisons.
    pub angle_tol: f64,
}

impl Default for ClassifyTolerance {
    fn default() -> Self {
        Self {
            rel_tol: 1e-3,
            angle_tol: 0.1,
        }
    }
}

/// Decision tree over lattice-parameter (in)equalities.
///
/// Trigonal cells are only recognised in the rhombohedral setting; a
/// trigonal cell in hexagonal axes classifies as hexagonal.
pub fn classify_crystal_system(lattice: &Lattice, tol: ClassifyTolerance) -> CrystalSystem {
    let len_eq = |x: f64, y: f64| (x - y).abs() <= tol.rel_tol * x.max(y);
    let ang_is = |x: f64, v: f64| (x - v).abs() <= tol.angle_tol;
    let (a, b, c) = (lattice.a, lattice.b, lattice.c);
    let (al, be, ga) = (lattice.alpha, lattice.beta, lattice.gamma);

    let right = [ang_is(al, 90.0), ang_is(be, 90.0), ang_is(ga, 90.0)];
    let n_right = right.iter().filter(|r| **r).count();
    let ab = len_eq(a, b);
    let bc = len_eq(b, c);
    let ac = len_eq(a, c);

    if n_right == 3 {
        if ab && bc {
            CrystalSystem::Cubic
        } else if ab || bc || ac {
            CrystalSystem::Tetragonal
        } else {
            CrystalSystem::Orthorhombic
        }
    } else if ab && right[0] && right[1] && ang_is(ga, 120.0) {
        CrystalSystem::Hexagonal
    } else if ab && bc && (al - be).abs() <= tol.angle_tol && (be - ga).abs() <= tol.angle_tol {
        CrystalSystem::Trigonal
    } else if n_right == 2 {
        CrystalSystem::Monoclinic
    } else {
        CrystalSystem::Triclinic
    }
}

/// Lattice plus atoms on fractional coordinates wrapped into [0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct CrystalStructure {
    lattice: Lattice,
    species: Vec<u8>,
    frac_coords: Vec<Vec3>,
}

/// Wraps a fractional coordinate into [0, 1).
pub fn wrap_unit(x: f64) -> f64 {
    let w = x - x.floor();
    // x slightly below an integer can round up to exactly 1.0.
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

impl CrystalStructure {
    pub fn new(lattice: Lattice, species: Vec<u8>, frac_coords: Vec<Vec3>) -> Result<Self> {
        if species.is_empty() {
            return Err(Error::InvalidStructure("structure has no atoms".into()));
        }
        if species.len() != frac_coords.len() {
            return Err(Error::InvalidStructure(format!(
                "{} species but {} coordinates",
                species.len(),
                frac_coords.len()
            )));
        }
        if let Some(z) = species.iter().find(|z| **z == 0 || **z > MAX_Z) {
            return Err(Error::InvalidStructure(format!(
                "atomic number {z} outside 1..={MAX_Z}"
            )));
        }
        let mut wrapped = Vec::with_capacity(frac_coords.len());
        for f in frac_coords {
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidStructure(format!(
                    "non-finite coordinate {f:?}"
                )));
            }
            wrapped.push([wrap_unit(f[0]), wrap_unit(f[1]), wrap_unit(f[2])]);
        }
        Ok(Self {
            lattice,
            species,
            frac_coords: wrapped,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn species(&self) -> &[u8] {
        &self.species
    }

    pub fn frac_coords(&self) -> &[Vec3] {
        &self.frac_coords
    }

    pub fn len(&self) -> usize {
        self.species.len()
    }

    pub fn is_empty(&self) -> bool {
        self.species.is_empty()
    }

    pub fn cart_coords(&self) -> Vec<Vec3> {
        self.frac_coords
            .iter()
            .map(|f| self.lattice.frac_to_cart(*f))
            .collect()
    }

    pub fn composition(&self) -> Composition {
        composition_of(self)
    }

    /// Same fractional coordinates on a uniformly scaled lattice.
    pub fn with_lattice(&self, lattice: Lattice) -> Self {
        Self {
            lattice,
            species: self.species.clone(),
            frac_coords: self.frac_coords.clone(),
        }
    }
}

/// Element amounts keyed by atomic number.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    amounts: BTreeMap<u8, f64>,
}

impl Composition {
    pub fn new(amounts: impl IntoIterator<Item = (u8, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (z, amt) in amounts {
            if !(amt.is_finite() && amt > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "amount for Z={z} must be > 0, got {amt}"
                )));
            }
            *map.entry(z).or_insert(0.0) += amt;
        }
        if map.is_empty() {
            return Err(Error::InvalidArgument("empty composition".into()));
        }
        Ok(Self { amounts: map })
    }

    pub fn amounts(&self) -> &BTreeMap<u8, f64> {
        &self.amounts
    }

    pub fn total(&self) -> f64 {
        self.amounts.values().sum()
    }

    /// `(Z, amount / total)` in ascending Z.
    pub fn fractions(&self) -> Vec<(u8, f64)> {
        let total = self.total();
        self.amounts.iter().map(|(z, a)| (*z, a / total)).collect()
    }

    pub fn get(&self, z: u8) -> f64 {
        self.amounts.get(&z).copied().unwrap_or(0.0)
    }
}

pub fn composition_of(structure: &CrystalStructure) -> Composition {
    let mut amounts = BTreeMap::new();
    for z in &structure.species {
        *amounts.entry(*z).or_insert(0.0) += 1.0;
    }
    Composition { amounts }
}
