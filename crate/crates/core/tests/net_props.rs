mod common;

use common::*;
use proptest::prelude::*;
use wnorm::bounds::layer_output_bound;
use wnorm::{make_network, ActivationSpec, Dims, InitScheme};

fn arb_net() -> impl Strategy<Value = (usize, usize, usize, bool, f64, u64)> {
    (
        1usize..6,
        1usize..12,
        1usize..5,
        any::<bool>(),
        0.0f64..2.0,
        any::<u64>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn positive_row_scaling_leaves_output_unchanged(
        (d, m, depth, gelu, rho1, seed) in arb_net(),
        layer_pick in any::<usize>(),
        row_pick in any::<usize>(),
        c in 1e-3f64..1e3,
    ) {
        let p = net_with_rho1(d, m, depth, gelu, rho1, 1.0, seed);
        let x = unit_vec(&mut rng(seed), d);
        let (layer, row) = (layer_pick % depth, row_pick % m);
        let mut q = p.clone();
        q.row_mut(layer, row).iter_mut().for_each(|w| *w *= c);
        let (a, b) = (p.predict(&x).unwrap(), q.predict(&x).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-12) + 1e-15, "{a} vs {b}");
    }

    #[test]
    fn layer_outputs_and_predictor_are_bounded((d, m, depth, gelu, rho1, seed) in arb_net()) {
        let p = net_with_rho1(d, m, depth, gelu, rho1, 1.0, seed);
        let x = unit_vec(&mut rng(seed ^ 1), d);
        let t = p.forward(&x).unwrap();
        let phi0 = p.activation().phi0_abs();
        for (l, a) in t.acts.iter().enumerate() {
            let n = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(n <= layer_output_bound(l + 1, m, phi0) + 1e-12);
        }
        prop_assert!(t.output.abs() <= (1.0 + rho1) * (1.0 + depth as f64 * phi0 * (m as f64).sqrt()) + 1e-12);
        if !gelu {
            let vn = p.v().iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(t.output.abs() <= vn * (m as f64).sqrt() + 1e-12);
        }
    }

    #[test]
    fn library_forward_agrees_with_reference((d, m, depth, gelu, rho1, seed) in arb_net()) {
        let p = net_with_rho1(d, m, depth, gelu, rho1, 1.0, seed);
        let x = unit_vec(&mut rng(seed ^ 2), d);
        let a = p.predict(&x).unwrap();
        let b = ref_predict_params(&p, &x);
        prop_assert!((a - b).abs() <= 1e-13 * (1.0 + b.abs()));
    }
}

#[test]
fn shifted_activation_layer_bound() {
    let act = ActivationSpec::custom(
        |z| z.tanh() + 0.5,
        |z| 1.0 - z.tanh().powi(2),
        |z| -2.0 * z.tanh() * (1.0 - z.tanh().powi(2)),
    );
    let p = make_network(
        Dims::new(3, 9, 3).unwrap(),
        act,
        InitScheme::Gaussian { sigma: 1.0 },
        5,
    )
    .unwrap();
    let x = [0.0, 0.6, 0.8];
    let t = p.forward(&x).unwrap();
    for (l, a) in t.acts.iter().enumerate() {
        let n = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(n <= layer_output_bound(l + 1, 9, 0.5));
    }
}

#[test]
fn forward_is_shareable_across_threads() {
    let p = net_with_rho1(4, 8, 2, true, 0.3, 1.0, 11);
    let x = unit_vec(&mut rng(1), 4);
    let expect = p.predict(&x).unwrap();
    std::thread::scope(|s| {
        let hs: Vec<_> = (0..4).map(|_| s.spawn(|| p.predict(&x).unwrap())).collect();
        for h in hs {
            assert_eq!(h.join().unwrap(), expect);
        }
    });
}
