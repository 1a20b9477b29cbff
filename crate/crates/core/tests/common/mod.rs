#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wnorm::{make_network, ActivationSpec, Dims, InitScheme, NetworkParams};

/// Forward pass written directly from the layer formula, without the
/// library's input checks.
pub fn ref_predict(act: &ActivationSpec, dims: Dims, theta: &[f64], x: &[f64]) -> f64 {
    let m = dims.m;
    let mut a = x.to_vec();
    let mut off = 0;
    for _ in 0..dims.depth {
        let n_in = a.len();
        let mut next = vec![0.0; m];
        for (i, out) in next.iter_mut().enumerate() {
            let w = &theta[off + i * n_in..off + (i + 1) * n_in];
            let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            let s: f64 = w.iter().zip(&a).map(|(p, q)| p * q).sum();
            *out = (act.eval)(s / (wn * (m as f64).sqrt()));
        }
        off += m * n_in;
        a = next;
    }
    theta[off..].iter().zip(&a).map(|(p, q)| p * q).sum()
}

pub fn ref_predict_params(p: &NetworkParams, x: &[f64]) -> f64 {
    ref_predict(p.activation(), p.dims(), p.theta(), x)
}

/// Central differences with step `h` on every coordinate.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    let mut p = at.to_vec();
    (0..at.len())
        .map(|k| {
            let o = p[k];
            p[k] = o + h;
            let up = f(&p);
            p[k] = o - h;
            let dn = f(&p);
            p[k] = o;
            (up - dn) / (2.0 * h)
        })
        .collect()
}

/// Dense Hessian of `f` by the four-point formula, symmetrized.
pub fn fd_hessian(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> nalgebra::DMatrix<f64> {
    let n = at.len();
    let mut hm = nalgebra::DMatrix::zeros(n, n);
    let mut p = at.to_vec();
    let f0 = f(&p);
    for i in 0..n {
        for j in i..n {
            let v = if i == j {
                let o = p[i];
                p[i] = o + h;
                let up = f(&p);
                p[i] = o - h;
                let dn = f(&p);
                p[i] = o;
                (up - 2.0 * f0 + dn) / (h * h)
            } else {
                let (oi, oj) = (p[i], p[j]);
                let mut eval = |si: f64, sj: f64| {
                    p[i] = oi + si * h;
                    p[j] = oj + sj * h;
                    let r = f(&p);
                    p[i] = oi;
                    p[j] = oj;
                    r
                };
                (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                    / (4.0 * h * h)
            };
            hm[(i, j)] = v;
            hm[(j, i)] = v;
        }
    }
    hm
}

pub fn spectral_norm_sym(h: nalgebra::DMatrix<f64>) -> f64 {
    h.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0, |a: f64, v| a.max(v.abs()))
}

pub fn max_rel_err(analytic: &[f64], reference: &[f64]) -> f64 {
    let scale = reference
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(1e-12);
    analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

pub fn unit_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn act(gelu: bool) -> ActivationSpec {
    if gelu {
        ActivationSpec::gelu()
    } else {
        ActivationSpec::tanh()
    }
}

/// A network with `v` moved to distance `rho1` from `v0`.
pub fn net_with_rho1(
    d: usize,
    m: usize,
    depth: usize,
    gelu: bool,
    rho1: f64,
    init_scale: f64,
    seed: u64,
) -> NetworkParams {
    let mut p = make_network(
        Dims::new(d, m, depth).unwrap(),
        act(gelu),
        InitScheme::Uniform { scale: init_scale },
        seed,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let dir = unit_vec(&mut rng, m);
    let v0 = p.v0().to_vec();
    for ((v, a), b) in p.v_mut().iter_mut().zip(&v0).zip(&dir) {
        *v = a + rho1 * b;
    }
    p
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
