mod common;

use common::*;
use proptest::prelude::*;
use wnorm::bounds::{
    check_dominance, grad_theta_bound, grad_x_bound, hessian_bound, BoundInputs, HessianProbe,
};
use wnorm::deriv::Batch;
use wnorm::ActivationSpec;

fn arb_inputs() -> impl Strategy<Value = BoundInputs> {
    (
        1usize..512,
        1usize..9,
        0.0f64..2.0,
        0.0f64..1.0,
        0.05f64..10.0,
        0.0f64..1.0,
    )
        .prop_map(|(m, depth, rho1, phi0, minw, y)| BoundInputs {
            m,
            depth,
            phi0,
            beta_phi: ActivationSpec::tanh().beta_phi,
            rho1,
            rho2: 0.1,
            minw,
            y_sq_mean: y,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn monotone_in_minw_depth_and_rho1(inp in arb_inputs(), f in 1.0f64..4.0) {
        for b in [hessian_bound, grad_theta_bound] {
            let wider = BoundInputs { minw: inp.minw * f, ..inp };
            prop_assert!(b(&wider) <= b(&inp));
            let deeper = BoundInputs { depth: inp.depth + 1, ..inp };
            prop_assert!(b(&deeper) >= b(&inp));
            let farther = BoundInputs { rho1: inp.rho1 + f, ..inp };
            prop_assert!(b(&farther) >= b(&inp));
        }
    }

    #[test]
    fn nonincreasing_in_width_when_phi0_is_zero(inp in arb_inputs(), k in 2usize..8) {
        let inp = BoundInputs { phi0: 0.0, ..inp };
        let wide = BoundInputs { m: inp.m * k, ..inp };
        prop_assert!(hessian_bound(&wide) <= hessian_bound(&inp));
        prop_assert!(grad_theta_bound(&wide) <= grad_theta_bound(&inp));
    }

    #[test]
    fn grad_x_bound_ignores_width_and_depth(inp in arb_inputs(), m in 1usize..2048, depth in 1usize..16) {
        let other = BoundInputs { m, depth, ..inp };
        prop_assert_eq!(grad_x_bound(&other), grad_x_bound(&inp));
        prop_assert_eq!(grad_x_bound(&inp), 1.0 + inp.rho1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn measured_quantities_are_dominated(
        d in 2usize..7, m in prop::sample::select(vec![4usize, 8, 16, 32]), depth in 1usize..5,
        gelu in any::<bool>(), rho1 in 0.0f64..1.5, scale in 0.3f64..3.0, seed in any::<u64>(),
    ) {
        let p = net_with_rho1(d, m, depth, gelu, rho1, scale, seed);
        let mut r = rng(seed ^ 3);
        let xs: Vec<Vec<f64>> = (0..6).map(|_| unit_vec(&mut r, d)).collect();
        let ys: Vec<f64> = (0..6).map(|i| (i as f64 - 2.5) / 2.5).collect();
        let batch = Batch::from_rows(&xs, &ys).unwrap();
        let inp = BoundInputs::measure(&p, 0.0, 0.0, batch.y_sq_mean());
        let probe = HessianProbe { samples: 1, tol: 1e-9, max_iter: 5000 };
        for dom in check_dominance(&p, &batch, &inp, Some(probe)).unwrap() {
            prop_assert!(dom.holds(), "{:?}", dom);
        }
    }
}
