mod common;

use common::{expm, stable_matrix};
use ndfusion::autodiff::{Graph, Var};
use ndfusion::ode::{gradients, integrate, integrate_path, solve_values, FnField, OdeNet, SolverConfig};
use ndfusion::params::ParamStore;
use ndfusion::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `z' = z Aᵀ` for row vectors, that is `z' = A z` in column form.
fn linear_field(a: Vec<f64>, n: usize) -> FnField<impl Fn(&mut Graph<'_>, Var, f64) -> Var> {
    let a = Tensor::new(n, n, a);
    FnField(move |g: &mut Graph<'_>, z: Var, _t: f64| {
        let w = g.constant(a.clone());
        g.linear(z, w, None)
    })
}

#[test]
fn dopri5_matches_matrix_exponential() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 4;
    for _ in 0..5 {
        let a = stable_matrix(&mut rng, n);
        let z0: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let times: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
        let store = ParamStore::new();
        let f = linear_field(a.clone(), n);
        let zs = solve_values(&store, &f, &Tensor::row(&z0), 0.0, &times, &SolverConfig::dopri5(1e-5, 1e-7)).unwrap();
        for (t, z) in times.iter().zip(&zs) {
            let e = expm(&a.iter().map(|v| v * t).collect::<Vec<_>>(), n);
            for i in 0..n {
                let exact: f64 = (0..n).map(|j| e[i * n + j] * z0[j]).sum();
                assert!((z.data()[i] - exact).abs() < 1e-4, "t={t} i={i}: {} vs {exact}", z.data()[i]);
            }
        }
    }
}

#[test]
fn euler_is_first_order() {
    let store = ParamStore::new();
    let f = FnField(|g: &mut Graph<'_>, z: Var, _t: f64| g.scale(z, -1.0));
    let err = |h: f64| {
        let z = solve_values(&store, &f, &Tensor::scalar(1.0), 0.0, &[1.0], &SolverConfig::euler(h)).unwrap();
        (z[0].data()[0] - (-1f64).exp()).abs()
    };
    let hs = [0.1, 0.05, 0.025, 0.0125];
    for w in hs.windows(2) {
        let order = (err(w[0]) / err(w[1])).log2();
        assert!(order >= 0.9, "order {order} at h={}", w[1]);
    }
}

#[test]
fn dopri5_global_error_tracks_tolerance() {
    let store = ParamStore::new();
    let f = FnField(|g: &mut Graph<'_>, z: Var, t: f64| {
        let s = g.scale(z, -2.0);
        g.add_scalar(s, t.cos())
    });
    // z' = −2z + cos t, z(0) = 1
    let exact = |t: f64| (2.0 * t.cos() + t.sin()) / 5.0 + (1.0 - 0.4) * (-2.0 * t).exp();
    for (rtol, atol) in [(1e-4, 1e-6), (1e-6, 1e-8), (1e-8, 1e-10)] {
        let times: Vec<f64> = (1..=8).map(|k| k as f64 * 0.125).collect();
        let zs = solve_values(&store, &f, &Tensor::scalar(1.0), 0.0, &times, &SolverConfig::dopri5(rtol, atol)).unwrap();
        for (t, z) in times.iter().zip(&zs) {
            let e = exact(*t);
            let bound = 10.0 * (atol + rtol * e.abs());
            assert!((z.data()[0] - e).abs() <= bound, "rtol {rtol} t {t}: err {}", (z.data()[0] - e).abs());
        }
    }
}

#[test]
fn incremental_path_agrees_with_direct_solves() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let net = OdeNet::new(&mut store, "d", 5, &[16], &mut rng);
    let z0 = Tensor::row(&(0..5).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
    let mut times: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
    times.sort_by(f64::total_cmp);
    for cfg in [SolverConfig::dopri5(1e-5, 1e-7), SolverConfig::euler(0.01)] {
        let path = solve_values(&store, &net, &z0, 0.0, &times, &cfg).unwrap();
        for (t, zp) in times.iter().zip(&path) {
            let direct = solve_values(&store, &net, &z0, 0.0, &[*t], &cfg).unwrap();
            for (a, b) in zp.data().iter().zip(direct[0].data()) {
                let tol = 10.0 * (cfg.atol + cfg.rtol * b.abs());
                let tol = if cfg.method == ndfusion::ode::SolverMethod::Euler { 10.0 * cfg.step } else { tol };
                assert!((a - b).abs() <= tol, "{t}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn forward_then_backward_returns_to_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let net = OdeNet::new(&mut store, "d", 3, &[8], &mut rng);
    let cfg = SolverConfig::dopri5(1e-7, 1e-9);
    let mut g = Graph::new(&store);
    let z0 = g.constant(Tensor::row(&[0.3, -0.5, 0.9]));
    let z1 = integrate(&mut g, &net, z0, 0.0, 1.0, &cfg).unwrap();
    let back = integrate(&mut g, &net, z1, 1.0, 0.0, &cfg).unwrap();
    for (a, b) in g.value(back).data().iter().zip(g.value(z0).data()) {
        assert!((a - b).abs() < 10.0 * (cfg.atol + cfg.rtol * b.abs()), "{a} vs {b}");
    }
}

fn central_difference(store: &ParamStore, f: &OdeNet, z0: &Tensor, cfg: &SolverConfig, upstream: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let h = 1e-5;
    let objective = |s: &ParamStore, z: &Tensor| {
        let out = solve_values(s, f, z, 0.0, &[1.0], cfg).unwrap();
        out[0].data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut dz = Vec::new();
    for i in 0..z0.len() {
        let (mut p, mut m) = (z0.clone(), z0.clone());
        p.data_mut()[i] += h;
        m.data_mut()[i] -= h;
        dz.push((objective(store, &p) - objective(store, &m)) / (2.0 * h));
    }
    let flat = store.flatten();
    let mut dp = Vec::new();
    for i in 0..flat.len() {
        let mut s = store.clone();
        let mut v = flat.clone();
        v[i] += h;
        s.load_flat(&v).unwrap();
        let up = objective(&s, z0);
        v[i] -= 2.0 * h;
        s.load_flat(&v).unwrap();
        dp.push((up - objective(&s, z0)) / (2.0 * h));
    }
    (dz, dp)
}

fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
        assert!(rel <= 1e-4, "{what}[{i}]: analytic {a} numeric {n}");
    }
}

#[test]
fn solver_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let net = OdeNet::new(&mut store, "d", 3, &[6], &mut rng);
    let z0 = Tensor::row(&[0.4, -0.2, 0.7]);
    let upstream = Tensor::row(&[1.0, -0.5, 0.25]);
    for cfg in [SolverConfig::euler(0.05), SolverConfig::dopri5(1e-8, 1e-10)] {
        let (dz0, dp) = gradients(&store, &net, &z0, 0.0, 1.0, &cfg, &upstream).unwrap();
        let (nz, np) = central_difference(&store, &net, &z0, &cfg, &upstream);
        assert_close(dz0.data(), &nz, "z0");
        assert_close(&dp.flatten(), &np, "params");
    }
}

#[test]
fn path_outputs_hit_query_times_exactly() {
    let store = ParamStore::new();
    let f = FnField(|g: &mut Graph<'_>, z: Var, t: f64| {
        let rows = g.value(z).rows();
        g.constant(Tensor::full(rows, 1, 2.0 * t))
    });
    let mut g = Graph::new(&store);
    let z0 = g.constant(Tensor::scalar(0.0));
    let times = [0.0, 0.13, 0.5, 0.77, 1.0];
    let zs = integrate_path(&mut g, &f, z0, 0.0, &times, &SolverConfig::default()).unwrap();
    for (t, z) in times.iter().zip(zs) {
        assert!((g.scalar(z) - t * t).abs() < 1e-12);
    }
}
