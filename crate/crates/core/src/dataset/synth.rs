//! Synthetic prototype-structure generator.
//!
//! Each record is a binary compound A_xB_y placed on one of eight fixed
//! prototype templates. Each cell is rescaled so its shortest interatomic
//! distance is the sum of covalent radii of the pair (±3%); the
//! crystal-system label comes from the family. Formation energies follow a declared surrogate,
//!
//! ```text
//! E_f = -0.5 Δχ_w + 0.02 (V / n_atoms - 15) + ε,   ε ~ N(0, 0.01²)
//! ```
//!
//! where Δχ_w is the stoichiometry-weighted mean absolute deviation of the
//! Pauling electronegativities.

use serde::{Deserialize, Serialize};

use super::DatasetRecord;
use crate::crystal::{norm, CrystalStructure, CrystalSystem, Lattice, Vec3};
use crate::elements::ElementTable;
use crate::rng::Xoshiro256;
use crate::{Error, Result};

/// Cation (A-site) pool followed by anion (B-site) pool, 20 elements total.
pub const ELEMENT_POOL: [u8; 20] = [
    3, 11, 19, 37, 12, 20, 38, 56, 13, 31, 22, 40, 30,
    48, // Li Na K Rb Mg Ca Sr Ba Al Ga Ti Zr Zn Cd
    8, 16, 34, 9, 17, 35, // O S Se F Cl Br
];
const N_CATIONS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeFamily {
    RockSalt,
    CesiumChloride,
    Rutile,
    DistortedPerovskite,
    Wurtzite,
    RhombohedralBinary,
    MonoclinicBinary,
    TriclinicBinary,
}

impl PrototypeFamily {
    pub const ALL: [PrototypeFamily; 8] = [
        PrototypeFamily::RockSalt,
        PrototypeFamily::CesiumChloride,
        PrototypeFamily::Rutile,
        PrototypeFamily::DistortedPerovskite,
        PrototypeFamily::Wurtzite,
        PrototypeFamily::RhombohedralBinary,
        PrototypeFamily::MonoclinicBinary,
        PrototypeFamily::TriclinicBinary,
    ];

    pub fn crystal_system(self) -> CrystalSystem {
        match self {
            PrototypeFamily::RockSalt | PrototypeFamily::CesiumChloride => CrystalSystem::Cubic,
            PrototypeFamily::Rutile => CrystalSystem::Tetragonal,
            PrototypeFamily::DistortedPerovskite => CrystalSystem::Orthorhombic,
            PrototypeFamily::Wurtzite => CrystalSystem::Hexagonal,
            PrototypeFamily::RhombohedralBinary => CrystalSystem::Trigonal,
            PrototypeFamily::MonoclinicBinary => CrystalSystem::Monoclinic,
            PrototypeFamily::TriclinicBinary => CrystalSystem::Triclinic,
        }
    }

    /// Sampling weight mirroring the MP20 train-split crystal-system
    /// ratios (cubic, hexagonal, trigonal, tetragonal, orthorhombic,
    /// monoclinic, triclinic = 22.9, 19.4, 11.3, 16.7, 16.7, 15.0, 4.2);
    /// the two cubic families share the cubic weight.
    pub fn default_weight(self) -> f64 {
        match self {
            PrototypeFamily::RockSalt | PrototypeFamily::CesiumChloride => 22.9 / 2.0,
            PrototypeFamily::Wurtzite => 19.4,
            PrototypeFamily::RhombohedralBinary => 11.3,
            PrototypeFamily::Rutile => 16.7,
            PrototypeFamily::DistortedPerovskite => 16.7,
            PrototypeFamily::MonoclinicBinary => 15.0,
            PrototypeFamily::TriclinicBinary => 4.2,
        }
    }

    /// Lattice `[a, b, c, α, β, γ]` and sites `(is_anion, frac)` for a
    /// cation–anion bond length `d0` in Å.
    fn template(self, d0: f64, rng: &mut Xoshiro256) -> ([f64; 6], Vec<(bool, Vec3)>) {
        let jitter = |rng: &mut Xoshiro256| rng.uniform(0.97, 1.03);
        match self {
            PrototypeFamily::RockSalt => {
                let a = 2.0 * d0 * jitter(rng);
                let sites = vec![
                    (false, [0.0, 0.0, 0.0]),
                    (false, [0.0, 0.5, 0.5]),
                    (false, [0.5, 0.0, 0.5]),
                    (false, [0.5, 0.5, 0.0]),
                    (true, [0.5, 0.5, 0.5]),
                    (true, [0.5, 0.0, 0.0]),
                    (true, [0.0, 0.5, 0.0]),
                    (true, [0.0, 0.0, 0.5]),
                ];
                ([a, a, a, 90.0, 90.0, 90.0], sites)
            }
            PrototypeFamily::CesiumChloride => {
                let a = 2.0 * d0 / 3f64.sqrt() * jitter(rng);
                let sites = vec![(false, [0.0, 0.0, 0.0]), (true, [0.5, 0.5, 0.5])];
                ([a, a, a, 90.0, 90.0, 90.0], sites)
            }
            PrototypeFamily::Rutile => {
                let a = 2.35 * d0 * jitter(rng);
                let c = a * rng.uniform(0.60, 0.68);
                let x = 0.305;
                let sites = vec![
                    (false, [0.0, 0.0, 0.0]),
                    (false, [0.5, 0.5, 0.5]),
                    (true, [x, x, 0.0]),
                    (true, [1.0 - x, 1.0 - x, 0.0]),
                    (true, [0.5 + x, 0.5 - x, 0.5]),
                    (true, [0.5 - x, 0.5 + x, 0.5]),
                ];
                ([a, a, c, 90.0, 90.0, 90.0], sites)
            }
            PrototypeFamily::DistortedPerovskite => {
                let a = 2.0 * d0 * jitter(rng);
                let b = a * rng.uniform(1.04, 1.10);
                let c = a * rng.uniform(1.14, 1.22);
                let sites = vec![
                    (false, [0.0, 0.0, 0.0]),
                    (true, [0.5, 0.0, 0.0]),
                    (true, [0.0, 0.5, 0.0]),
                    (true, [0.0, 0.0, 0.5]),
                ];
                ([a, b, c, 90.0, 90.0, 90.0], sites)
            }
            PrototypeFamily::Wurtzite => {
                let a = 1.633 * d0 * jitter(rng);
                let c = a * rng.uniform(1.58, 1.66);
                let u = 0.375;
                let sites = vec![
                    (false, [1.0 / 3.0, 2.0 / 3.0, 0.0]),
                    (false, [2.0 / 3.0, 1.0 / 3.0, 0.5]),
                    (true, [1.0 / 3.0, 2.0 / 3.0, u]),
                    (true, [2.0 / 3.0, 1.0 / 3.0, 0.5 + u]),
                ];
                ([a, a, c, 90.0, 90.0, 120.0], sites)
            }
            PrototypeFamily::RhombohedralBinary => {
                let a = 1.8 * d0 * jitter(rng);
                // At 60° this cell is rock salt and at 90° it is CsCl, so stay
                // well clear of both.
                let alpha = rng.uniform(68.0, 80.0);
                let sites = vec![(false, [0.0, 0.0, 0.0]), (true, [0.5, 0.5, 0.5])];
                ([a, a, a, alpha, alpha, alpha], sites)
            }
            PrototypeFamily::MonoclinicBinary => {
                let a = 2.0 * d0 * jitter(rng);
                let b = a * rng.uniform(1.08, 1.16);
                let c = a * rng.uniform(1.24, 1.34);
                let beta = rng.uniform(96.0, 115.0);
                let sites = vec![
                    (false, [0.0, 0.0, 0.0]),
                    (false, [0.5, 0.5, 0.0]),
                    (true, [0.3, 0.2, 0.5]),
                    (true, [0.8, 0.7, 0.5]),
                ];
                ([a, b, c, 90.0, beta, 90.0], sites)
            }
            PrototypeFamily::TriclinicBinary => {
                let a = 2.0 * d0 * jitter(rng);
                let b = a * rng.uniform(1.08, 1.16);
                let c = a * rng.uniform(1.24, 1.34);
                let alpha = rng.uniform(76.0, 84.0);
                let beta = rng.uniform(96.0, 104.0);
                let gamma = rng.uniform(100.0, 108.0);
                let sites = vec![(false, [0.0, 0.0, 0.0]), (true, [0.45, 0.55, 0.5])];
                ([a, b, c, alpha, beta, gamma], sites)
            }
        }
    }
}

fn shortest_distance(lattice: &Lattice, sites: &[(bool, Vec3)]) -> f64 {
    let mut best = f64::INFINITY;
    for (_, fi) in sites {
        for (_, fj) in sites {
            for a in -2..=2 {
                for b in -2..=2 {
                    for c in -2..=2 {
                        let df = [
                            fj[0] - fi[0] + a as f64,
                            fj[1] - fi[1] + b as f64,
                            fj[2] - fi[2] + c as f64,
                        ];
                        let d = norm(lattice.frac_to_cart(df));
                        if d > 1e-9 {
                            best = best.min(d);
                        }
                    }
                }
            }
        }
    }
    best
}

fn electronegativity_spread(species: &[u8], table: &ElementTable) -> Result<f64> {
    let n = species.len() as f64;
    let mut chis = Vec::with_capacity(species.len());
    for z in species {
        chis.push(table.get(*z)?.electronegativity());
    }
    let mean = chis.iter().sum::<f64>() / n;
    Ok(chis.iter().map(|c| (c - mean).abs()).sum::<f64>() / n)
}

/// Generates `n` labelled records from the given prototype families.
///
/// Identical `(n, seed, families)` always yields identical records.
pub fn synth_generate(
    n: usize,
    seed: u64,
    families: &[PrototypeFamily],
) -> Result<Vec<DatasetRecord>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be > 0".into()));
    }
    if families.is_empty() {
        return Err(Error::InvalidArgument("no prototype families given".into()));
    }
    let table = ElementTable::builtin();
    let weights: Vec<f64> = families.iter().map(|f| f.default_weight()).collect();
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let family = families[rng.weighted_index(&weights)];
        let cation = ELEMENT_POOL[rng.below(N_CATIONS as u64) as usize];
        let anion =
            ELEMENT_POOL[N_CATIONS + rng.below((ELEMENT_POOL.len() - N_CATIONS) as u64) as usize];
        let d0 =
            (table.get(cation)?.covalent_radius() + table.get(anion)?.covalent_radius()) / 100.0;
        let (params, sites) = family.template(d0, &mut rng);
        let lattice = Lattice::from_array(params)?;
        let shortest = shortest_distance(&lattice, &sites);
        let lattice = lattice.scaled(d0 * rng.uniform(0.97, 1.03) / shortest)?;
        let species: Vec<u8> = sites
            .iter()
            .map(|(is_anion, _)| if *is_anion { anion } else { cation })
            .collect();
        let coords = sites.iter().map(|(_, f)| *f).collect();
        let structure = CrystalStructure::new(lattice, species, coords)?;

        let spread = electronegativity_spread(structure.species(), table)?;
        let vpa = lattice.volume() / structure.len() as f64;
        let energy = -0.5 * spread + 0.02 * (vpa - 15.0) + 0.01 * rng.normal();

        records.push(DatasetRecord {
            id: format!("synth-{i:06}"),
            structure,
            formation_energy: Some(energy),
            crystal_system: Some(family.crystal_system()),
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::{classify_crystal_system, ClassifyTolerance};
    use crate::dataset::RecordLine;

    #[test]
    fn rock_salt_only_is_cubic() {
        let recs = synth_generate(10, 1, &[PrototypeFamily::RockSalt]).unwrap();
        assert_eq!(recs.len(), 10);
        for r in &recs {
            assert_eq!(r.crystal_system, Some(CrystalSystem::Cubic));
            assert_eq!(
                classify_crystal_system(r.structure.lattice(), ClassifyTolerance::default()),
                CrystalSystem::Cubic
            );
        }
    }

    #[test]
    fn deterministic_bytes() {
        let fams = PrototypeFamily::ALL;
        let a = synth_generate(50, 9, &fams).unwrap();
        let b = synth_generate(50, 9, &fams).unwrap();
        let ser = |rs: &[DatasetRecord]| {
            rs.iter()
                .map(|r| serde_json::to_string(&RecordLine::from(r)).unwrap())
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(ser(&a), ser(&b));
        let c = synth_generate(50, 10, &fams).unwrap();
        assert_ne!(ser(&a), ser(&c));
    }

    #[test]
    fn every_template_classifies_to_its_family_system() {
        let tol = ClassifyTolerance::default();
        for fam in PrototypeFamily::ALL {
            let recs = synth_generate(200, 3, &[fam]).unwrap();
            for r in recs {
                assert_eq!(
                    classify_crystal_system(r.structure.lattice(), tol),
                    fam.crystal_system(),
                    "{fam:?} {:?}",
                    r.structure.lattice()
                );
            }
        }
    }

    #[test]
    fn default_weights_track_train_ratios() {
        let recs = synth_generate(2000, 2024, &PrototypeFamily::ALL).unwrap();
        let targets = [22.9, 19.4, 11.3, 16.7, 16.7, 15.0, 4.2];
        let mut counts = [0usize; 7];
        for r in &recs {
            counts[r.crystal_system.unwrap().index()] += 1;
        }
        for (k, target) in targets.iter().enumerate() {
            let pct = 100.0 * counts[k] as f64 / recs.len() as f64;
            assert!(
                (pct - target).abs() <= 3.0,
                "{}: {pct:.2}% vs {target}%",
                CrystalSystem::ALL[k]
            );
        }
    }

    #[test]
    fn energies_follow_surrogate() {
        let table = ElementTable::builtin();
        let recs = synth_generate(300, 5, &PrototypeFamily::ALL).unwrap();
        let mut resid = Vec::new();
        for r in &recs {
            let s = &r.structure;
            let n = s.len() as f64;
            let chi: Vec<f64> = s
                .species()
                .iter()
                .map(|z| table.get(*z).unwrap().electronegativity())
                .collect();
            let mean = chi.iter().sum::<f64>() / n;
            let spread = chi.iter().map(|c| (c - mean).abs()).sum::<f64>() / n;
            let noiseless = -0.5 * spread + 0.02 * (s.lattice().volume() / n - 15.0);
            resid.push(r.formation_energy.unwrap() - noiseless);
        }
        let m = resid.iter().sum::<f64>() / resid.len() as f64;
        let sd = (resid.iter().map(|x| (x - m).powi(2)).sum::<f64>() / resid.len() as f64).sqrt();
        assert!(resid.iter().all(|x| x.abs() < 0.06));
        assert!(m.abs() < 0.003 && (sd - 0.01).abs() < 0.002, "{m} {sd}");
    }

    #[test]
    fn shortest_bond_matches_covalent_sum() {
        let table = ElementTable::builtin();
        for r in synth_generate(100, 9, &PrototypeFamily::ALL).unwrap() {
            let s = &r.structure;
            let (a, b) = (s.species()[0], *s.species().last().unwrap());
            let d0 = (table.get(a).unwrap().covalent_radius()
                + table.get(b).unwrap().covalent_radius())
                / 100.0;
            let sites: Vec<(bool, Vec3)> = s.frac_coords().iter().map(|f| (false, *f)).collect();
            let d = shortest_distance(s.lattice(), &sites);
            assert!(
                d >= 0.97 * d0 - 1e-9 && d <= 1.03 * d0 + 1e-9,
                "{} {d} {d0}",
                r.id
            );
        }
    }

    #[test]
    fn rejects_empty_requests() {
        assert!(synth_generate(0, 1, &PrototypeFamily::ALL).is_err());
        assert!(synth_generate(5, 1, &[]).is_err());
    }
}
