//! Ideal powder X-ray diffraction patterns.
//!
//! Reflections are enumerated from the Bragg condition, weighted by
//! |F_hkl|² and the Lorentz-polarization factor, merged into sticks and
//! smeared with a Gaussian onto a uniform 2θ grid normalised to a maximum
//! of 100. No thermal factors, Kα2 doublet or preferred orientation.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::crystal::{CrystalStructure, Lattice};
use crate::elements::MAX_Z;
use crate::{Error, Result};

const CROMER_MANN_TXT: &str = include_str!("../data/cromer_mann.txt");

/// Sticks closer than this (degrees 2θ) are summed into one.
pub const MERGE_TOL_DEG: f64 = 0.01;
/// Sticks weaker than this fraction of the strongest are dropped.
pub const REL_INTENSITY_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XrdSimConfig {
    /// Å; Cu Kα1 by default.
    pub wavelength: f64,
    /// Gaussian width in degrees 2θ.
    pub sigma: f64,
    pub two_theta_min: f64,
    pub two_theta_max: f64,
    pub n_points: usize,
}

impl Default for XrdSimConfig {
    fn default() -> Self {
        Self {
            wavelength: 1.5406,
            sigma: 0.3,
            two_theta_min: 0.0,
            two_theta_max: 90.0,
            n_points: 901,
        }
    }
}

impl XrdSimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return bad(format!("wavelength {} must be > 0", self.wavelength));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma {} must be > 0", self.sigma));
        }
        if !(self.two_theta_min >= 0.0
            && self.two_theta_min < self.two_theta_max
            && self.two_theta_max <= 180.0)
        {
            return bad(format!(
                "2θ range [{}, {}] must satisfy 0 <= min < max <= 180",
                self.two_theta_min, self.two_theta_max
            ));
        }
        if self.n_points < 2 {
            return bad(format!("n_points {} must be >= 2", self.n_points));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.two_theta_max - self.two_theta_min) / (self.n_points - 1) as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        let step = self.step();
        (0..self.n_points)
            .map(|i| self.two_theta_min + i as f64 * step)
            .collect()
    }
}

/// Atomic scattering factors f(s), s = sin θ / λ.
#[derive(Debug, Clone)]
pub struct ScatteringTable {
    /// `[a1, a2, a3, a4, b1, b2, b3, b4, c]` indexed by Z.
    coeffs: Vec<Option<[f64; 9]>>,
    approximate: bool,
}

impl ScatteringTable {
    /// Bundled Cromer–Mann coefficients for Z = 1..98.
    pub fn builtin() -> &'static ScatteringTable {
        static TABLE: OnceLock<ScatteringTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            ScatteringTable::parse(CROMER_MANN_TXT).expect("bundled scattering table parses")
        })
    }

    /// Lower-fidelity mode: f(s) = Z for every element and angle.
    pub fn approximate() -> Self {
        Self {
            coeffs: Vec::new(),
            approximate: true,
        }
    }

    pub fn is_approximate(&self) -> bool {
        self.approximate
    }

    /// Text format: one element per line, `Z a1 a2 a3 a4 b1 b2 b3 b4 c`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut coeffs = vec![None; MAX_Z as usize + 1];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 10 {
                return Err(err(format!("expected 10 columns, found {}", cols.len())));
            }
            let z: usize = cols[0]
                .parse()
                .map_err(|e| err(format!("bad Z {:?}: {e}", cols[0])))?;
            if z == 0 || z > MAX_Z as usize {
                return Err(err(format!("Z={z} outside 1..={MAX_Z}")));
            }
            let mut c = [0.0; 9];
            for (k, slot) in c.iter_mut().enumerate() {
                *slot = cols[k + 1]
                    .parse()
                    .map_err(|e| err(format!("bad coefficient {:?}: {e}", cols[k + 1])))?;
            }
            coeffs[z] = Some(c);
        }
        Ok(Self {
            coeffs,
            approximate: false,
        })
    }

    pub fn form_factor(&self, z: u8, s: f64) -> Result<f64> {
        if self.approximate {
            return Ok(z as f64);
        }
        let c = self
            .coeffs
            .get(z as usize)
            .copied()
            .flatten()
            .ok_or(Error::MissingElement(z))?;
        let s2 = s * s;
        Ok((0..4).map(|i| c[i] * (-c[4 + i] * s2).exp()).sum::<f64>() + c[8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reflection {
    pub hkl: [i32; 3],
    pub d: f64,
    pub two_theta: f64,
}

/// All hkl ≠ 0 with λ / 2d ≤ sin θ_max.
///
/// Since `h = q · a` for a reciprocal vector `q`, `|h| ≤ |q|_max · |a|`
/// bounds the search box exhaustively.
pub fn enumerate_reflections(lattice: &Lattice, config: &XrdSimConfig) -> Vec<Reflection> {
    let sin_max = (config.two_theta_max.to_radians() / 2.0).sin();
    let q_max = 2.0 * sin_max / config.wavelength;
    let bound = |len: f64| (q_max * len).floor() as i32;
    let (hm, km, lm) = (bound(lattice.a()), bound(lattice.b()), bound(lattice.c()));
    let mut out = Vec::new();
    for h in -hm..=hm {
        for k in -km..=km {
            for l in -lm..=lm {
                if h == 0 && k == 0 && l == 0 {
                    continue;
                }
                let d = lattice.d_spacing([h, k, l]).expect("nonzero hkl");
                let sin_theta = config.wavelength / (2.0 * d);
                if sin_theta > sin_max || sin_theta > 1.0 {
                    continue;
                }
                out.push(Reflection {
                    hkl: [h, k, l],
                    d,
                    two_theta: 2.0 * sin_theta.asin().to_degrees(),
                });
            }
        }
    }
    out
}

/// |F_hkl|² with F = Σ_j f_j(s) exp(2πi h·x_j), s = 1/(2d).
pub fn structure_factor_sq(
    structure: &CrystalStructure,
    hkl: [i32; 3],
    table: &ScatteringTable,
) -> Result<f64> {
    let d = structure.lattice().d_spacing(hkl)?;
    structure_factor_sq_at(structure, hkl, 1.0 / (2.0 * d), table)
}

fn structure_factor_sq_at(
    structure: &CrystalStructure,
    hkl: [i32; 3],
    s: f64,
    table: &ScatteringTable,
) -> Result<f64> {
    let (mut re, mut im) = (0.0, 0.0);
    for (z, x) in structure.species().iter().zip(structure.frac_coords()) {
        let f = table.form_factor(*z, s)?;
        let mut t = hkl[0] as f64 * x[0] + hkl[1] as f64 * x[1] + hkl[2] as f64 * x[2];
        t -= t.round();
        let phase = 2.0 * PI * t;
        re += f * phase.cos();
        im += f * phase.sin();
    }
    Ok(re * re + im * im)
}

/// (1 + cos² 2θ) / (sin² θ cos θ).
pub fn lorentz_polarization(two_theta_deg: f64) -> f64 {
    let tt = two_theta_deg.to_radians();
    let th = tt / 2.0;
    (1.0 + tt.cos().powi(2)) / (th.sin().powi(2) * th.cos())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stick {
    pub two_theta: f64,
    pub intensity: f64,
}

/// Sticks sorted by strictly increasing 2θ.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StickPattern {
    pub sticks: Vec<Stick>,
}

impl StickPattern {
    pub fn len(&self) -> usize {
        self.sticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sticks.is_empty()
    }
}

/// Merges contributions closer than [`MERGE_TOL_DEG`] to the first member
/// of their group. The merged stick sits at the group's smallest 2θ.
fn merge_sticks(mut raw: Vec<(f64, [i32; 3], f64)>) -> Vec<Stick> {
    raw.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut merged: Vec<Stick> = Vec::new();
    for (tt, _, intensity) in raw {
        match merged.last_mut() {
            Some(last) if tt - last.two_theta < MERGE_TOL_DEG => last.intensity += intensity,
            _ => merged.push(Stick {
                two_theta: tt,
                intensity,
            }),
        }
    }
    let max = merged.iter().map(|s| s.intensity).fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    merged.retain(|s| s.intensity >= REL_INTENSITY_FLOOR * max);
    merged
}

pub fn simulate_sticks(
    structure: &CrystalStructure,
    config: &XrdSimConfig,
    table: &ScatteringTable,
) -> Result<StickPattern> {
    config.validate()?;
    let mut raw = Vec::new();
    for r in enumerate_reflections(structure.lattice(), config) {
        let f2 = structure_factor_sq_at(structure, r.hkl, 1.0 / (2.0 * r.d), table)?;
        raw.push((r.two_theta, r.hkl, f2 * lorentz_polarization(r.two_theta)));
    }
    Ok(StickPattern {
        sticks: merge_sticks(raw),
    })
}

/// Intensities on the configured 2θ grid.
#[derive(Debug, Clone, PartialEq)]
pub struct XrdPattern {
    pub config: XrdSimConfig,
    pub intensities: Vec<f64>,
}

impl XrdPattern {
    pub fn grid(&self) -> Vec<f64> {
        self.config.grid()
    }

    pub fn argmax(&self) -> Option<usize> {
        self.intensities
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
    }
}

/// Gaussian smearing onto the grid, rescaled so the maximum is exactly 100.
///
/// Each Gaussian keeps the stick height. Contributions beyond 12σ
/// (relative weight below 1e-31) are skipped.
pub fn smear(sticks: &StickPattern, config: &XrdSimConfig) -> Result<XrdPattern> {
    config.validate()?;
    let mut out = vec![0.0; config.n_points];
    let step = config.step();
    let two_sigma_sq = 2.0 * config.sigma * config.sigma;
    let reach = 12.0 * config.sigma;
    for stick in &sticks.sticks {
        let lo = ((stick.two_theta - reach - config.two_theta_min) / step)
            .floor()
            .max(0.0) as usize;
        let hi = (((stick.two_theta + reach - config.two_theta_min) / step)
            .ceil()
            .max(0.0) as usize)
            .min(config.n_points - 1);
        for (i, slot) in out.iter_mut().enumerate().take(hi + 1).skip(lo) {
            let g = config.two_theta_min + i as f64 * step;
            let dx = g - stick.two_theta;
            *slot += stick.intensity * (-dx * dx / two_sigma_sq).exp();
        }
    }
    let (imax, max) = out
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    if max > 0.0 {
        for v in out.iter_mut() {
            *v = (*v * 100.0 / max).min(100.0);
        }
        out[imax] = 100.0;
    }
    Ok(XrdPattern {
        config: *config,
        intensities: out,
    })
}

pub fn simulate_pattern(
    structure: &CrystalStructure,
    config: &XrdSimConfig,
    table: &ScatteringTable,
) -> Result<XrdPattern> {
    let sticks = simulate_sticks(structure, config, table)?;
    smear(&sticks, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn po() -> CrystalStructure {
        CrystalStructure::new(Lattice::cubic(3.35).unwrap(), vec![84], vec![[0.0; 3]]).unwrap()
    }

    fn fcc_cu() -> CrystalStructure {
        CrystalStructure::new(
            Lattice::cubic(3.615).unwrap(),
            vec![29; 4],
            vec![[0., 0., 0.], [0., 0.5, 0.5], [0.5, 0., 0.5], [0.5, 0.5, 0.]],
        )
        .unwrap()
    }

    fn nacl(a: f64) -> CrystalStructure {
        let coords = vec![
            [0., 0., 0.],
            [0., 0.5, 0.5],
            [0.5, 0., 0.5],
            [0.5, 0.5, 0.],
            [0.5, 0.5, 0.5],
            [0.5, 0., 0.],
            [0., 0.5, 0.],
            [0., 0., 0.5],
        ];
        let species = vec![11, 11, 11, 11, 17, 17, 17, 17];
        CrystalStructure::new(Lattice::cubic(a).unwrap(), species, coords).unwrap()
    }

    fn bragg(a: f64, n2: f64) -> f64 {
        2.0 * (1.5406 / (2.0 * a / n2.sqrt())).asin().to_degrees()
    }

    #[test]
    fn table_self_check() {
        let t = ScatteringTable::builtin();
        for z in 1..=MAX_Z {
            let f0 = t.form_factor(z, 0.0).unwrap();
            assert!((f0 - z as f64).abs() <= 0.02 * z as f64, "Z={z} f0={f0}");
            assert!(t.form_factor(z, 0.5).unwrap() < f0);
        }
        assert!(!t.is_approximate());
        assert_eq!(
            ScatteringTable::approximate().form_factor(26, 0.4).unwrap(),
            26.0
        );
    }

    #[test]
    fn missing_element_is_named() {
        let t = ScatteringTable::parse(
            "8 3.0485 2.2868 1.5463 0.8670 13.2771 5.7011 0.3239 32.9089 0.2508",
        )
        .unwrap();
        assert!(matches!(
            t.form_factor(11, 0.1),
            Err(Error::MissingElement(11))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(XrdSimConfig::default().validate().is_ok());
        let bad = [
            XrdSimConfig {
                wavelength: 0.0,
                ..Default::default()
            },
            XrdSimConfig {
                sigma: -1.0,
                ..Default::default()
            },
            XrdSimConfig {
                two_theta_min: 90.0,
                ..Default::default()
            },
            XrdSimConfig {
                n_points: 1,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn bragg_positions() {
        let cfg = XrdSimConfig::default();
        let refl = enumerate_reflections(&Lattice::cubic(3.35).unwrap(), &cfg);
        let r100 = refl.iter().find(|r| r.hkl == [1, 0, 0]).unwrap();
        let oracle = 2.0 * (1.5406f64 / 6.70).asin().to_degrees();
        assert!((r100.two_theta - 26.58).abs() < 0.01);
        assert_relative_eq!(r100.two_theta, oracle, epsilon = 1e-9);
        for r in &refl {
            let neg = [-r.hkl[0], -r.hkl[1], -r.hkl[2]];
            assert!(refl.iter().any(|q| q.hkl == neg));
            assert!(r.two_theta <= 90.0);
        }
    }

    #[test]
    fn enumeration_is_exhaustive() {
        // Brute force over a generous box.
        let l = Lattice::new(3.1, 4.7, 5.3, 81.0, 97.0, 104.0).unwrap();
        let cfg = XrdSimConfig::default();
        let fast = enumerate_reflections(&l, &cfg);
        let mut brute = 0;
        for h in -12i32..=12 {
            for k in -12i32..=12 {
                for m in -12i32..=12 {
                    if [h, k, m] == [0, 0, 0] {
                        continue;
                    }
                    let d = l.d_spacing([h, k, m]).unwrap();
                    if 1.5406 / (2.0 * d) <= (45f64).to_radians().sin() {
                        brute += 1;
                    }
                }
            }
        }
        assert_eq!(fast.len(), brute);
    }

    #[test]
    fn long_wavelength_has_no_reflections() {
        let cfg = XrdSimConfig {
            wavelength: 20.0,
            ..Default::default()
        };
        assert!(enumerate_reflections(&Lattice::cubic(3.0).unwrap(), &cfg).is_empty());
        let sticks = simulate_sticks(&po(), &cfg, ScatteringTable::builtin()).unwrap();
        assert!(sticks.is_empty());
        let p = smear(&sticks, &cfg).unwrap();
        assert!(p.intensities.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_atom_structure_factor() {
        let t = ScatteringTable::builtin();
        let s = po();
        for hkl in [[1, 0, 0], [1, 1, 0], [2, 1, 1]] {
            let d = s.lattice().d_spacing(hkl).unwrap();
            let f = t.form_factor(84, 1.0 / (2.0 * d)).unwrap();
            assert_relative_eq!(
                structure_factor_sq(&s, hkl, t).unwrap(),
                f * f,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn fcc_mixed_parity_extinct() {
        let t = ScatteringTable::builtin();
        let cu = fcc_cu();
        for hkl in [[1, 0, 0], [1, 1, 0], [2, 1, 0], [2, 1, 1]] {
            assert!(structure_factor_sq(&cu, hkl, t).unwrap() < 1e-8, "{hkl:?}");
        }
        assert!(structure_factor_sq(&cu, [1, 1, 1], t).unwrap() > 1.0);
        let sticks = simulate_sticks(&cu, &XrdSimConfig::default(), t).unwrap();
        let pos100 = bragg(3.615, 1.0);
        assert!(sticks
            .sticks
            .iter()
            .all(|s| (s.two_theta - pos100).abs() > 0.5));
    }

    #[test]
    fn rock_salt_even_reflections_beat_odd() {
        // Oracle: |F(200)| = 4(f_Na + f_Cl), |F(111)| = 4|f_Cl - f_Na|.
        let t = ScatteringTable::builtin();
        let a = 5.64;
        let nacl = nacl(a);
        let s111 = 3f64.sqrt() / (2.0 * a);
        let s200 = 2.0 / (2.0 * a);
        let f = |z, s| t.form_factor(z, s).unwrap();
        let o111 = (4.0 * (f(17, s111) - f(11, s111))).powi(2);
        let o200 = (4.0 * (f(17, s200) + f(11, s200))).powi(2);
        let f111 = structure_factor_sq(&nacl, [1, 1, 1], t).unwrap();
        let f200 = structure_factor_sq(&nacl, [2, 0, 0], t).unwrap();
        assert_relative_eq!(f111, o111, max_relative = 1e-9);
        assert_relative_eq!(f200, o200, max_relative = 1e-9);
        assert!(f200 > f111);
    }

    #[test]
    fn simple_cubic_first_sticks() {
        let sticks =
            simulate_sticks(&po(), &XrdSimConfig::default(), ScatteringTable::builtin()).unwrap();
        assert!((sticks.sticks[0].two_theta - 26.58).abs() < 0.01);
        // (100), (110), (111): 26.587°, 37.954°, 46.940°.
        let expected = [26.587, 37.954, 46.940];
        for (s, (e, n2)) in sticks
            .sticks
            .iter()
            .zip(expected.iter().zip([1.0, 2.0, 3.0]))
        {
            assert!((s.two_theta - e).abs() < 0.02, "{} vs {e}", s.two_theta);
            assert_relative_eq!(s.two_theta, bragg(3.35, n2), epsilon = 1e-9);
        }
        for w in sticks.sticks.windows(2) {
            assert!(w[1].two_theta > w[0].two_theta);
        }
    }

    #[test]
    fn friedel_pair_merges_to_double() {
        // A triclinic one-atom cell: only hkl and -hkl coincide.
        let l = Lattice::new(3.1, 4.7, 5.3, 81.0, 97.0, 104.0).unwrap();
        let s = CrystalStructure::new(l, vec![26], vec![[0.1, 0.2, 0.3]]).unwrap();
        let cfg = XrdSimConfig::default();
        let t = ScatteringTable::builtin();
        let sticks = simulate_sticks(&s, &cfg, t).unwrap();
        let first = enumerate_reflections(&l, &cfg)
            .into_iter()
            .min_by(|a, b| a.two_theta.total_cmp(&b.two_theta))
            .unwrap();
        let one_sided =
            structure_factor_sq(&s, first.hkl, t).unwrap() * lorentz_polarization(first.two_theta);
        assert_relative_eq!(
            sticks.sticks[0].intensity,
            2.0 * one_sided,
            max_relative = 1e-12
        );
    }

    #[test]
    fn smear_single_stick() {
        let cfg = XrdSimConfig::default();
        let sticks = StickPattern {
            sticks: vec![Stick {
                two_theta: 30.0,
                intensity: 7.0,
            }],
        };
        let p = smear(&sticks, &cfg).unwrap();
        assert_eq!(p.argmax(), Some(300));
        assert_eq!(p.intensities[300], 100.0);
        assert!((p.intensities[303] - 100.0 * (-0.5f64).exp()).abs() < 1e-6);
        assert!(p.intensities.iter().all(|v| (0.0..=100.0).contains(v)));
    }

    #[test]
    fn smear_two_far_sticks_equal_heights() {
        let cfg = XrdSimConfig::default();
        let sticks = StickPattern {
            sticks: vec![
                Stick {
                    two_theta: 20.0,
                    intensity: 1.0,
                },
                Stick {
                    two_theta: 70.0,
                    intensity: 1.0,
                },
            ],
        };
        let p = smear(&sticks, &cfg).unwrap();
        assert!((p.intensities[200] - 100.0).abs() < 1e-10);
        assert!((p.intensities[700] - 100.0).abs() < 1e-10);
    }

    #[test]
    fn rock_salt_strongest_peak_is_200() {
        let a = 5.64;
        let nacl = nacl(a);
        let p =
            simulate_pattern(&nacl, &XrdSimConfig::default(), ScatteringTable::builtin()).unwrap();
        let peak = p.grid()[p.argmax().unwrap()];
        assert!((peak - 31.7).abs() < 0.1, "{peak}");
        assert!((peak - bragg(a, 4.0)).abs() < 0.1);
    }
}
