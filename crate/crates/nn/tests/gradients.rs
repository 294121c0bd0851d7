use matmodal_core::rng::Xoshiro256;
use matmodal_nn::layers::{Conv1d, Dense, LayerNorm};
use matmodal_nn::loss::contrastive_on_tape;
use matmodal_nn::{gradient_check, ContrastiveVariant, Init, ParamStore, Tape};
use proptest::prelude::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn normal(
    store: &mut ParamStore,
    name: &str,
    shape: Vec<usize>,
    rng: &mut Xoshiro256,
) -> matmodal_nn::ParamId {
    store
        .add(name, shape, Init::Normal { std: 1.0 }, rng)
        .unwrap()
}

/// Weighted sum with fixed random coefficients so every output entry gets a
/// distinct upstream gradient.
fn probe(tape: &mut Tape, y: matmodal_nn::Var, seed: u64) -> matmodal_nn::Result<matmodal_nn::Var> {
    let n = tape.value(y).len();
    let mut rng = Xoshiro256::seed_from_u64(seed ^ 0xABCD);
    let c: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let shape = tape.shape(y).to_vec();
    let c = tape.constant(shape, c)?;
    let p = tape.mul(y, c)?;
    Ok(tape.sum(p))
}

#[test]
fn dense_relu_mse_pipeline() {
    let mut rng = Xoshiro256::seed_from_u64(1);
    let mut s = ParamStore::new();
    let x = normal(&mut s, "x", vec![5, 4], &mut rng);
    let l1 = Dense::new(&mut s, "l1", 4, 6, &mut rng).unwrap();
    let l2 = Dense::new(&mut s, "l2", 6, 3, &mut rng).unwrap();
    // Nonzero biases so relu kinks are not all at the origin.
    for id in [l1.b, l2.b] {
        for v in s.get_mut(id).data_mut() {
            *v = 0.1;
        }
    }
    let target: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
    let r = gradient_check(&mut s, H, |t| {
        let xv = t.param(x);
        let h = l1.forward(t, xv)?;
        let h = t.relu(h);
        let y = l2.forward(t, h)?;
        t.mse(y, &target)
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn conv_pool_layer_norm_stack() {
    let mut rng = Xoshiro256::seed_from_u64(2);
    let mut s = ParamStore::new();
    let x = normal(&mut s, "x", vec![2, 2, 17], &mut rng);
    let c1 = Conv1d::new(&mut s, "c1", 2, 3, 5, 2, 2, &mut rng).unwrap();
    let c2 = Conv1d::new(&mut s, "c2", 3, 4, 3, 1, 1, &mut rng).unwrap();
    let ln = LayerNorm::new(&mut s, "ln", 4, &mut rng).unwrap();
    for v in s.get_mut(ln.gamma).data_mut() {
        *v = 1.0 + 0.5 * rng.normal();
    }
    let r = gradient_check(&mut s, H, |t| {
        let xv = t.param(x);
        let h = c1.forward(t, xv)?;
        let h = t.relu(h);
        let h = t.max_pool1d(h, 2, 2)?;
        let h = c2.forward(t, h)?;
        let h = t.global_avg_pool(h)?;
        let h = ln.forward(t, h)?;
        probe(t, h, 2)
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn contrastive_both_variants_n4_d8() {
    for variant in [
        ContrastiveVariant::Standard,
        ContrastiveVariant::ExcludePositive,
    ] {
        let mut rng = Xoshiro256::seed_from_u64(3);
        let mut s = ParamStore::new();
        let a = normal(&mut s, "a", vec![4, 8], &mut rng);
        let b = normal(&mut s, "b", vec![4, 8], &mut rng);
        let log_tau = s
            .add("log_tau", vec![1], Init::Constant(0.1f64.ln()), &mut rng)
            .unwrap();
        let r = gradient_check(&mut s, H, |t| {
            let (av, bv, lt) = (t.param(a), t.param(b), t.param(log_tau));
            let tau = t.exp(lt);
            contrastive_on_tape(t, av, bv, tau, variant)
        })
        .unwrap();
        assert!(r.max_rel_error < TOL, "{variant:?} {r:?}");
    }
}

#[test]
fn cross_entropy_softmax_and_mae() {
    let mut rng = Xoshiro256::seed_from_u64(4);
    let mut s = ParamStore::new();
    let z = normal(&mut s, "z", vec![5, 7], &mut rng);
    let r = gradient_check(&mut s, H, |t| {
        let zv = t.param(z);
        t.cross_entropy(zv, &[0, 3, 6, 2, 2])
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
    let r = gradient_check(&mut s, H, |t| {
        let zv = t.param(z);
        let p = t.softmax(zv)?;
        probe(t, p, 5)
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
    let target: Vec<f64> = (0..35).map(|i| i as f64 * 0.01 + 0.5).collect();
    let r = gradient_check(&mut s, H, |t| {
        let zv = t.param(z);
        t.mae(zv, &target)
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn graph_ops() {
    let mut rng = Xoshiro256::seed_from_u64(6);
    let mut s = ParamStore::new();
    let h = normal(&mut s, "h", vec![5, 3], &mut rng);
    let e = normal(&mut s, "e", vec![7, 2], &mut rng);
    let src = [0, 1, 1, 2, 3, 4, 4];
    let dst = [1, 0, 2, 1, 4, 3, 3];
    let r = gradient_check(&mut s, H, |t| {
        let hv = t.param(h);
        let ev = t.param(e);
        let hs = t.gather_rows(hv, &src)?;
        let hd = t.gather_rows(hv, &dst)?;
        let m = t.concat(hs, hd)?;
        let m = t.concat(m, ev)?;
        let agg = t.segment_mean(m, &dst, 6)?;
        let pooled = t.segment_mean(agg, &[0, 0, 1, 1, 1, 0], 2)?;
        let n = t.l2_normalize(pooled)?;
        let sq = t.scale(n, 3.0);
        let d = t.sub(sq, n)?;
        let d = t.add(d, n)?;
        let r = t.reshape(d, vec![2, 8, 1])?;
        let m = t.mean(r);
        let p = probe(t, d, 6)?;
        let out = t.add(p, m)?;
        Ok(out)
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dense_random_shapes(seed in 0u64..1000, rows in 1usize..5, inp in 1usize..6, out in 1usize..6) {
        let mut rng = Xoshiro256::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let x = normal(&mut s, "x", vec![rows, inp], &mut rng);
        let d = Dense::new(&mut s, "d", inp, out, &mut rng).unwrap();
        let r = gradient_check(&mut s, H, |t| {
            let xv = t.param(x);
            let y = d.forward(t, xv)?;
            probe(t, y, seed)
        }).unwrap();
        prop_assert!(r.max_rel_error < TOL, "{:?}", r);
    }

    #[test]
    fn conv_random_shapes(
        seed in 0u64..1000,
        batch in 1usize..3,
        cin in 1usize..3,
        cout in 1usize..4,
        k in 1usize..6,
        stride in 1usize..4,
        padding in 0usize..3,
        extra in 0usize..10,
    ) {
        let len = k + extra;
        let mut rng = Xoshiro256::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let x = normal(&mut s, "x", vec![batch, cin, len], &mut rng);
        let c = Conv1d::new(&mut s, "c", cin, cout, k, stride, padding, &mut rng).unwrap();
        let r = gradient_check(&mut s, H, |t| {
            let xv = t.param(x);
            let y = c.forward(t, xv)?;
            probe(t, y, seed)
        }).unwrap();
        prop_assert!(r.max_rel_error < TOL, "{:?}", r);
    }

    #[test]
    fn layer_norm_random_shapes(seed in 0u64..1000, rows in 1usize..4, cols in 2usize..9) {
        let mut rng = Xoshiro256::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let x = normal(&mut s, "x", vec![rows, cols], &mut rng);
        let ln = LayerNorm::new(&mut s, "ln", cols, &mut rng).unwrap();
        let r = gradient_check(&mut s, H, |t| {
            let xv = t.param(x);
            let y = ln.forward(t, xv)?;
            probe(t, y, seed)
        }).unwrap();
        prop_assert!(r.max_rel_error < TOL, "{:?}", r);
    }

    #[test]
    fn contrastive_random_shapes(seed in 0u64..1000, n in 2usize..7, d in 2usize..7, excl in any::<bool>()) {
        let variant = if excl { ContrastiveVariant::ExcludePositive } else { ContrastiveVariant::Standard };
        let mut rng = Xoshiro256::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let a = normal(&mut s, "a", vec![n, d], &mut rng);
        let b = normal(&mut s, "b", vec![n, d], &mut rng);
        let tau = s.add("tau", vec![1], Init::Constant(0.2), &mut rng).unwrap();
        let r = gradient_check(&mut s, H, |t| {
            let (av, bv, tv) = (t.param(a), t.param(b), t.param(tau));
            contrastive_on_tape(t, av, bv, tv, variant)
        }).unwrap();
        prop_assert!(r.max_rel_error < TOL, "{:?}", r);
    }
}
