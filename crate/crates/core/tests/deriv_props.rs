mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use wnorm::deriv::{
    default_hvp_step, grad_theta, grad_x, hessian_spectral_norm, hvp, layer_jacobian,
    loss_and_grad, Batch,
};
use wnorm::linalg::{dot, norm};

fn arb_small() -> impl Strategy<Value = (usize, usize, usize, bool, f64, u64)> {
    (
        1usize..6,
        2usize..10,
        1usize..4,
        any::<bool>(),
        0.0f64..1.5,
        any::<u64>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn gradients_match_finite_differences((d, m, depth, gelu, rho1, seed) in arb_small()) {
        let p = net_with_rho1(d, m, depth, gelu, rho1, 1.0, seed);
        let x = unit_vec(&mut rng(seed), d);
        let g = grad_theta(&p, &x).unwrap();
        let fd = fd_grad(|t| ref_predict(p.activation(), p.dims(), t, &x), p.theta(), 1e-5);
        prop_assert!(max_rel_err(g.as_slice(), &fd) <= 1e-6);
        let gx = grad_x(&p, &x).unwrap();
        let fdx = fd_grad(|z| ref_predict(p.activation(), p.dims(), p.theta(), z), &x, 1e-5);
        prop_assert!(max_rel_err(&gx, &fdx) <= 1e-6);
    }

    #[test]
    fn row_gradients_are_orthogonal_to_rows((d, m, depth, gelu, rho1, seed) in arb_small()) {
        let p = net_with_rho1(d, m, depth, gelu, rho1, 1.0, seed);
        let x = unit_vec(&mut rng(seed), d);
        let g = grad_theta(&p, &x).unwrap();
        // d = 1 rows are scalars whose exact row gradient is zero
        let floor = 1e-14 * norm(g.as_slice());
        for l in 0..depth {
            for i in 0..m {
                let (gr, w) = (g.row(l, i), p.row(l, i));
                prop_assert!(dot(gr, w).abs() <= (1e-10 * norm(gr) + floor) * norm(w));
            }
        }
    }

    #[test]
    fn layer_jacobians_are_contractions((d, m, depth, gelu, rho1, seed) in arb_small()) {
        let p = net_with_rho1(d, m, depth, gelu, rho1, 1.0, seed);
        let x = unit_vec(&mut rng(seed), d);
        // df/d alpha^(L) = v, then pulled back one layer at a time
        let mut back = p.v().to_vec();
        prop_assert!(norm(&back) <= 1.0 + rho1 + 1e-12);
        for l in (0..depth).rev() {
            let j = layer_jacobian(&p, &x, l).unwrap();
            let mat = DMatrix::from_row_slice(j.rows, j.cols, &j.data);
            let s = mat.singular_values().max();
            prop_assert!(s <= 1.0 + 1e-12, "layer {l}: {s}");
            back = j.transpose_mul(&back);
            prop_assert!(norm(&back) <= 1.0 + rho1 + 1e-12);
        }
    }

    #[test]
    fn hvp_is_symmetric_and_linear((d, m, depth, gelu, rho1, seed) in arb_small()) {
        let p = net_with_rho1(d, m, depth, gelu, rho1, 1.0, seed);
        let x = unit_vec(&mut rng(seed), d);
        let mut r = rng(seed ^ 9);
        let n = p.theta().len();
        let u = unit_vec(&mut r, n);
        let w = unit_vec(&mut r, n);
        // one step for every direction; the O(h^2) term is cubic in the direction
        let h = 0.1 * default_hvp_step(p.theta(), &u);
        let hv = |z: &[f64]| hvp(&p, &x, z, h).unwrap();
        let (hu, hw) = (hv(&u), hv(&w));
        let scale = norm(&hu).max(norm(&hw)).max(1e-3);
        prop_assert!((dot(&w, &hu) - dot(&u, &hw)).abs() <= 1e-4 * scale);
        let comb: Vec<f64> = u.iter().zip(&w).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let hc = hv(&comb);
        for k in 0..n {
            prop_assert!((hc[k] - (2.0 * hu[k] - 0.5 * hw[k])).abs() <= 1e-4 * scale);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn power_iteration_matches_dense_oracle(
        d in 1usize..4, m in 2usize..7, depth in 1usize..4, gelu in any::<bool>(), seed in any::<u64>()
    ) {
        let p = net_with_rho1(d, m, depth, gelu, 0.4, 1.0, seed);
        prop_assume!(p.theta().len() <= 200);
        let x = unit_vec(&mut rng(seed), d);
        let dense = fd_hessian(|t| ref_predict(p.activation(), p.dims(), t, &x), p.theta(), 1e-4);
        // the dense oracle carries roughly 1e-8 of rounding noise
        let oracle = spectral_norm_sym(dense);
        let est = hessian_spectral_norm(&p, &x, 1e-12, 20000)
            .map(|e| e.value)
            .unwrap_or_else(|e| match e {
                wnorm::Error::NotConverged { estimate, .. } => estimate,
                other => panic!("{other}"),
            });
        prop_assert!((est - oracle).abs() <= 1e-3 * oracle + 1e-6, "{est} vs {oracle}");
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let p = net_with_rho1(4, 6, 2, true, 0.5, 1.0, 77);
    let mut r = rng(78);
    let xs: Vec<Vec<f64>> = (0..5).map(|_| unit_vec(&mut r, 4)).collect();
    let ys = vec![0.5, -0.25, 1.0, 0.0, -1.0];
    let batch = Batch::from_rows(&xs, &ys).unwrap();
    let lg = loss_and_grad(&p, &batch).unwrap();
    let f = |t: &[f64]| {
        xs.iter()
            .zip(&ys)
            .map(|(x, y)| (y - ref_predict(p.activation(), p.dims(), t, x)).powi(2))
            .sum::<f64>()
            / 5.0
    };
    assert!((lg.loss - f(p.theta())).abs() < 1e-14);
    assert!(max_rel_err(&lg.grad, &fd_grad(f, p.theta(), 1e-5)) <= 1e-6);
}
