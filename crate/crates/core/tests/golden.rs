//! Values frozen from an independent numpy evaluation of the formulas.

use wnorm::bounds::{
    grad_theta_bound, hessian_bound, loss_bound_varphi, loss_grad_bound, BoundInputs,
};
use wnorm::gen::{generalization_bound, GenInputs};
use wnorm::rsc::{alpha_theta, beta_theta};
use wnorm::{ActivationSpec, Dims, NetworkParams};

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1e-300)
}

fn fixed_net(act: ActivationSpec) -> NetworkParams {
    let theta = vec![1.0, 2.0, -1.0, 0.5, 0.3, -0.7, 1.1, 0.4, 0.6, -0.8];
    let v0 = vec![0.6, -0.8];
    NetworkParams::from_parts(Dims::new(2, 2, 2).unwrap(), theta, v0, act).unwrap()
}

#[test]
fn forward_matches_frozen_values() {
    let x = [0.6, 0.8];
    let t = fixed_net(ActivationSpec::tanh()).predict(&x).unwrap();
    assert!(close(t, -0.13618622486261123, 1e-14), "{t}");
    let g = fixed_net(ActivationSpec::gelu()).predict(&x).unwrap();
    assert!(close(g, -0.10671296420500037, 1e-13), "{g}");
}

fn inputs() -> BoundInputs {
    BoundInputs {
        m: 16,
        depth: 3,
        phi0: 0.0,
        beta_phi: ActivationSpec::tanh().beta_phi,
        rho1: 0.5,
        rho2: 0.1,
        minw: 0.7,
        y_sq_mean: 0.3,
    }
}

#[test]
fn bounds_match_frozen_values() {
    let inp = inputs();
    assert!(close(grad_theta_bound(&inp), 2.1080506519105295, 1e-12));
    assert!(close(hessian_bound(&inp), 99.6742470546257, 1e-10));
    assert!(close(loss_bound_varphi(&inp), 5.1, 1e-14));
    assert!(close(loss_grad_bound(&inp), 9.52129728770278, 1e-12));
}

#[test]
fn rsc_parameters_match_frozen_values() {
    let inp = inputs();
    assert!(close(
        alpha_theta(0.2, 0.05, 0.5, &inp),
        -534.2083787654233,
        1e-10
    ));
    assert!(close(beta_theta(&inp), 459.0800392745861, 1e-10));
}

#[test]
fn generalization_bound_matches_frozen_value() {
    let gi = GenInputs {
        rho1: 0.25,
        depth: 3,
        n: 2048,
        delta: 0.1,
    };
    let b = generalization_bound(&gi, &ActivationSpec::tanh()).unwrap();
    assert!(close(b, 1.0327561866701658, 1e-13));
}
