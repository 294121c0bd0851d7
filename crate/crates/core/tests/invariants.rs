use matmodal_core::crystal::{ClassifyTolerance, CrystalStructure, Lattice};
use matmodal_core::dataset::{load_jsonl, synth_generate, write_jsonl, PrototypeFamily};
use matmodal_core::graph::build_radius_graph;
use matmodal_core::xrd::{simulate_pattern, ScatteringTable, XrdSimConfig};
use proptest::prelude::*;

fn arb_structure() -> impl Strategy<Value = CrystalStructure> {
    (
        prop::array::uniform3(3.0..7.0f64),
        prop::array::uniform3(70.0..110.0f64),
        prop::collection::vec((1u8..84, prop::array::uniform3(0.0..1.0f64)), 1..5),
    )
        .prop_filter_map("valid cell and sites", |(len, ang, sites)| {
            let lat = Lattice::new(len[0], len[1], len[2], ang[0], ang[1], ang[2]).ok()?;
            let (species, coords) = sites.into_iter().unzip();
            CrystalStructure::new(lat, species, coords).ok()
        })
}

fn small_xrd() -> XrdSimConfig {
    XrdSimConfig {
        n_points: 301,
        ..XrdSimConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn radius_graph_is_symmetric_and_within_cutoff(s in arb_structure(), cutoff in 2.0..5.0f64, k in 1usize..16) {
        let g = build_radius_graph(&s, cutoff, k).unwrap();
        prop_assert_eq!(g.n_nodes(), s.len());
        for e in &g.edges {
            prop_assert!(e.distance > 0.0 && e.distance <= cutoff);
            let back = [-e.image[0], -e.image[1], -e.image[2]];
            let rev = g.edges.iter().find(|r| r.src == e.dst && r.dst == e.src && r.image == back);
            prop_assert!(rev.is_some_and(|r| r.distance == e.distance));
        }
        let mut keys: Vec<_> = g.edges.iter().map(|e| (e.src, e.dst, e.image)).collect();
        let sorted = keys.clone();
        keys.sort();
        keys.dedup();
        prop_assert_eq!(keys, sorted);
    }

    #[test]
    fn truncation_keeps_a_subset(s in arb_structure(), k in 1usize..8) {
        let full = build_radius_graph(&s, 4.0, usize::MAX).unwrap();
        let cut = build_radius_graph(&s, 4.0, k).unwrap();
        for e in &cut.edges {
            prop_assert!(full.edges.contains(e));
        }
    }

    #[test]
    fn pattern_is_normalized(s in arb_structure()) {
        let p = simulate_pattern(&s, &small_xrd(), ScatteringTable::builtin()).unwrap();
        prop_assert_eq!(p.intensities.len(), 301);
        prop_assert!(p.intensities.iter().all(|v| (0.0..=100.0).contains(v)));
        if p.intensities.iter().any(|v| *v > 0.0) {
            prop_assert_eq!(p.intensities[p.argmax().unwrap()], 100.0);
        }
    }

    #[test]
    fn pattern_ignores_whole_cell_shifts(s in arb_structure(), shift in prop::array::uniform3(-3i32..4)) {
        let moved: Vec<[f64; 3]> = s
            .frac_coords()
            .iter()
            .map(|f| [f[0] + shift[0] as f64, f[1] + shift[1] as f64, f[2] + shift[2] as f64])
            .collect();
        let t = CrystalStructure::new(*s.lattice(), s.species().to_vec(), moved).unwrap();
        let cfg = small_xrd();
        let a = simulate_pattern(&s, &cfg, ScatteringTable::builtin()).unwrap();
        let b = simulate_pattern(&t, &cfg, ScatteringTable::builtin()).unwrap();
        for (x, y) in a.intensities.iter().zip(&b.intensities) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn synthetic_labels_match_metric_classification(n in 1usize..40, seed in any::<u64>()) {
        let recs = synth_generate(n, seed, &PrototypeFamily::ALL).unwrap();
        prop_assert_eq!(recs.len(), n);
        for r in &recs {
            let metric = r.structure.lattice().crystal_system(ClassifyTolerance::default());
            prop_assert_eq!(Some(metric), r.crystal_system);
            prop_assert!(r.formation_energy.unwrap().is_finite());
        }
    }
}

#[test]
fn jsonl_round_trip_is_exact() {
    let recs = synth_generate(50, 9, &PrototypeFamily::ALL).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    write_jsonl(&recs, &path).unwrap();
    assert_eq!(load_jsonl(&path).unwrap(), recs);
}

#[test]
fn synthetic_cells_have_no_overlapping_atoms() {
    let recs = synth_generate(300, 4, &PrototypeFamily::ALL).unwrap();
    for r in &recs {
        let g = build_radius_graph(&r.structure, 1.0, usize::MAX).unwrap();
        assert!(g.edges.is_empty(), "{} has atoms closer than 1 Å", r.id);
    }
}
