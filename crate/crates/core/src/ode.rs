//! Neural ODE vector fields and differentiable integrators.
//!
//! Both solvers record every accepted step on the autodiff tape, so gradients
//! are exact for the discrete solution (discretise-then-differentiate).
//! Dormand–Prince outputs at intermediate query times come from its
//! fourth-order dense interpolant; the last query time is always hit by a
//! solver step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::params::{ParamGrads, ParamStore};
use crate::tensor::Tensor;

/// `dz/dt = f(z, t)` evaluated on the tape. `z` may hold several rows.
pub trait VectorField {
    fn eval(&self, g: &mut Graph<'_>, z: Var, t: f64) -> Var;
}

/// Adapter for closures, handy for analytic test fields.
pub struct FnField<F>(pub F);

impl<F> VectorField for FnField<F>
where
    F: Fn(&mut Graph<'_>, Var, f64) -> Var,
{
    fn eval(&self, g: &mut Graph<'_>, z: Var, t: f64) -> Var {
        (self.0)(g, z, t)
    }
}

/// Learned vector field: an MLP over `[z, t]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OdeNet {
    pub mlp: Mlp,
    pub dim: usize,
}

impl OdeNet {
    pub fn new<R: Rng>(store: &mut ParamStore, group: &str, dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut dims = vec![dim + 1];
        dims.extend_from_slice(hidden);
        dims.push(dim);
        OdeNet { mlp: Mlp::new(store, group, "ode", &dims, rng), dim }
    }
}

impl VectorField for OdeNet {
    fn eval(&self, g: &mut Graph<'_>, z: Var, t: f64) -> Var {
        let rows = g.value(z).rows();
        let tcol = g.constant(Tensor::full(rows, 1, t));
        let input = g.concat_cols(&[z, tcol]);
        self.mlp.forward(g, input)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    Euler,
    Dopri5,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: SolverMethod,
    /// Fixed step for Euler, in normalised time.
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig::dopri5(1e-5, 1e-7)
    }
}

impl SolverConfig {
    pub fn euler(step: f64) -> Self {
        SolverConfig { method: SolverMethod::Euler, step, rtol: 1e-5, atol: 1e-7, max_steps: 10_000 }
    }

    pub fn dopri5(rtol: f64, atol: f64) -> Self {
        SolverConfig { method: SolverMethod::Dopri5, step: 0.01, rtol, atol, max_steps: 10_000 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::invalid("solver step must be positive"));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be positive"));
        }
        Ok(())
    }
}

/// `z(t1)` from `z(t0) = z0`; `t1 < t0` integrates backwards.
pub fn integrate(g: &mut Graph<'_>, f: &dyn VectorField, z0: Var, t0: f64, t1: f64, cfg: &SolverConfig) -> Result<Var> {
    Ok(solve(g, f, z0, t0, &[t1], cfg)?.pop().expect("one output"))
}

/// `z` at each of `times` (strictly increasing, `times[0] ≥ t0`), continuing
/// one solve rather than restarting from `t0` for every query.
pub fn integrate_path(
    g: &mut Graph<'_>,
    f: &dyn VectorField,
    z0: Var,
    t0: f64,
    times: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<Var>> {
    if times.is_empty() {
        return Ok(Vec::new());
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("query times must be strictly increasing"));
    }
    if times[0] < t0 {
        return Err(Error::invalid(format!("query time {} precedes t0 = {t0}", times[0])));
    }
    solve(g, f, z0, t0, times, cfg)
}

/// Core driver: `times` must be monotone in the direction of integration.
fn solve(g: &mut Graph<'_>, f: &dyn VectorField, z0: Var, t0: f64, times: &[f64], cfg: &SolverConfig) -> Result<Vec<Var>> {
    cfg.validate()?;
    if !t0.is_finite() || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("non-finite integration time"));
    }
    match cfg.method {
        SolverMethod::Euler => {
            let mut out = Vec::with_capacity(times.len());
            let (mut z, mut t) = (z0, t0);
            for &tq in times {
                z = euler_segment(g, f, z, t, tq, cfg.step);
                t = tq;
                out.push(z);
            }
            Ok(out)
        }
        SolverMethod::Dopri5 => dopri5(g, f, z0, t0, times, cfg),
    }
}

fn euler_segment(g: &mut Graph<'_>, f: &dyn VectorField, z0: Var, ta: f64, tb: f64, h: f64) -> Var {
    let span = tb - ta;
    if span == 0.0 {
        return z0;
    }
    let n = ((span.abs() / h) - 1e-9).ceil().max(1.0) as usize;
    let dt = span / n as f64;
    let mut z = z0;
    for i in 0..n {
        let t = ta + i as f64 * dt;
        let k = f.eval(g, z, t);
        z = g.lin_comb(&[(z, 1.0), (k, dt)]);
    }
    z
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 7] = [
    &[],
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights (equal to the last tableau row, FSAL).
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
/// Embedded fourth-order weights.
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];
/// Weights producing the solution at the step midpoint for dense output.
const C_MID: [f64; 7] = [
    6025192743.0 / 30085553152.0 / 2.0,
    0.0,
    51252292925.0 / 65400821598.0 / 2.0,
    -2691868925.0 / 45128329728.0 / 2.0,
    187940372067.0 / 1594534317056.0 / 2.0,
    -1776094331.0 / 19743644256.0 / 2.0,
    11237099.0 / 235043384.0 / 2.0,
];

fn error_norm(err: &[f64], y0: &Tensor, y1: &Tensor, rtol: f64, atol: f64) -> f64 {
    let n = err.len() as f64;
    let s: f64 = err
        .iter()
        .zip(y0.data())
        .zip(y1.data())
        .map(|((e, a), b)| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

fn rms_scaled(v: &[f64], scale: &[f64]) -> f64 {
    (v.iter().zip(scale).map(|(x, s)| (x / s).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Starting step size (Hairer, Nørsett & Wanner, II.4). The probe
/// evaluation is removed from the tape afterwards.
fn initial_step(g: &mut Graph<'_>, f: &dyn VectorField, z0: Var, f0: Var, t0: f64, dir: f64, cfg: &SolverConfig) -> f64 {
    let y0 = g.value(z0).clone();
    let fy0 = g.value(f0).clone();
    let scale: Vec<f64> = y0.data().iter().map(|y| cfg.atol + y.abs() * cfg.rtol).collect();
    let d0 = rms_scaled(y0.data(), &scale);
    let d1 = rms_scaled(fy0.data(), &scale);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let mark = g.len();
    let y1 = g.lin_comb(&[(z0, 1.0), (f0, dir * h0)]);
    let f1 = f.eval(g, y1, t0 + dir * h0);
    let diff: Vec<f64> = g.value(f1).data().iter().zip(fy0.data()).map(|(a, b)| a - b).collect();
    g.truncate(mark);
    let d2 = rms_scaled(&diff, &scale) / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(1.0 / 5.0) };
    (100.0 * h0).min(h1)
}

/// Coefficients of the quartic dense-output polynomial at fraction `x` of
/// the step, applied to `(y0, y1, y_mid, h·f0, h·f1)`.
fn dense_weights(x: f64) -> [f64; 5] {
    let (x2, x3, x4) = (x * x, x * x * x, x * x * x * x);
    [
        1.0 - 11.0 * x2 + 18.0 * x3 - 8.0 * x4,
        -5.0 * x2 + 14.0 * x3 - 8.0 * x4,
        16.0 * x2 - 32.0 * x3 + 16.0 * x4,
        x - 4.0 * x2 + 5.0 * x3 - 2.0 * x4,
        x2 - 3.0 * x3 + 2.0 * x4,
    ]
}

fn dopri5(g: &mut Graph<'_>, f: &dyn VectorField, z0: Var, t0: f64, times: &[f64], cfg: &SolverConfig) -> Result<Vec<Var>> {
    let t_end = *times.last().expect("non-empty");
    let mut out = Vec::with_capacity(times.len());
    let mut idx = 0;
    while idx < times.len() && times[idx] == t0 {
        out.push(z0);
        idx += 1;
    }
    if idx == times.len() {
        return Ok(out);
    }
    let dir = if t_end > t0 { 1.0 } else { -1.0 };
    let mut k1 = f.eval(g, z0, t0);
    let mut h = dir * initial_step(g, f, z0, k1, t0, dir, cfg).min((t_end - t0).abs());
    let (mut y, mut t) = (z0, t0);
    let mut attempts = 0usize;
    while idx < times.len() {
        if attempts >= cfg.max_steps {
            return Err(Error::MaxStepsExceeded { max_steps: cfg.max_steps, last_t: t });
        }
        attempts += 1;
        let hits_end = dir * (t + h - t_end) >= 0.0;
        if hits_end {
            h = t_end - t;
        }
        let mark = g.len();
        let mut k = [k1; 7];
        for s in 1..7 {
            let mut terms = Vec::with_capacity(s + 1);
            terms.push((y, 1.0));
            for (j, &a) in A[s].iter().enumerate() {
                if a != 0.0 {
                    terms.push((k[j], h * a));
                }
            }
            let ys = g.lin_comb(&terms);
            if s == 6 {
                // Stage 7 is evaluated at the 5th-order solution (FSAL).
                k[6] = f.eval(g, ys, t + h);
                let y_new = ys;
                let err = {
                    let dim = g.value(y).len();
                    let mut e = vec![0.0; dim];
                    for (j, kv) in k.iter().enumerate() {
                        let wgt = h * (B5[j] - B4[j]);
                        if wgt != 0.0 {
                            for (ei, kj) in e.iter_mut().zip(g.value(*kv).data()) {
                                *ei += wgt * kj;
                            }
                        }
                    }
                    error_norm(&e, g.value(y), g.value(y_new), cfg.rtol, cfg.atol)
                };
                if !err.is_finite() {
                    g.truncate(mark);
                    return Err(Error::invalid(format!("non-finite local error at t = {t}")));
                }
                let accept = err <= 1.0;
                let factor = if err == 0.0 { 10.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 10.0) };
                if accept {
                    let t_new = if hits_end { t_end } else { t + h };
                    let mut y_mid: Option<Var> = None;
                    while idx < times.len() && dir * (times[idx] - t_new) <= 0.0 {
                        let tq = times[idx];
                        if tq == t_new {
                            out.push(y_new);
                        } else {
                            let ym = *y_mid.get_or_insert_with(|| {
                                let mut terms = vec![(y, 1.0)];
                                for (j, &c) in C_MID.iter().enumerate() {
                                    if c != 0.0 {
                                        terms.push((k[j], h * c));
                                    }
                                }
                                g.lin_comb(&terms)
                            });
                            let w = dense_weights((tq - t) / h);
                            let zq = g.lin_comb(&[(y, w[0]), (y_new, w[1]), (ym, w[2]), (k[0], h * w[3]), (k[6], h * w[4])]);
                            out.push(zq);
                        }
                        idx += 1;
                    }
                    y = y_new;
                    k1 = k[6];
                    t = t_new;
                    h *= factor;
                } else {
                    g.truncate(mark);
                    h *= factor.min(1.0);
                }
                break;
            }
            k[s] = f.eval(g, ys, t + C[s] * h);
        }
    }
    Ok(out)
}

/// Gradients of `⟨upstream, z(t1)⟩` with respect to `z0` and every
/// parameter the vector field touches.
pub fn gradients(
    store: &ParamStore,
    f: &dyn VectorField,
    z0: &Tensor,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
    upstream: &Tensor,
) -> Result<(Tensor, ParamGrads)> {
    let mut g = Graph::new(store);
    let z = g.input(z0.clone());
    let z1 = integrate(&mut g, f, z, t0, t1, cfg)?;
    let mut acc = store.zeros_like();
    let grads = g.backward_seeded_into(z1, upstream.clone(), &mut acc);
    let dz0 = grads.wrt(z).cloned().unwrap_or_else(|| Tensor::zeros(z0.rows(), z0.cols()));
    Ok((dz0, acc))
}

/// Forward-only convenience: integrate a plain tensor along `times`.
pub fn solve_values(store: &ParamStore, f: &dyn VectorField, z0: &Tensor, t0: f64, times: &[f64], cfg: &SolverConfig) -> Result<Vec<Tensor>> {
    let mut g = Graph::new(store);
    let z = g.constant(z0.clone());
    let zs = integrate_path(&mut g, f, z, t0, times, cfg)?;
    Ok(zs.into_iter().map(|v| g.value(v).clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn decay() -> FnField<impl Fn(&mut Graph<'_>, Var, f64) -> Var> {
        FnField(|g: &mut Graph<'_>, z: Var, _t: f64| g.scale(z, -1.0))
    }

    fn run_scalar(f: &dyn VectorField, z0: f64, t0: f64, t1: f64, cfg: &SolverConfig) -> f64 {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let z = g.constant(Tensor::scalar(z0));
        let out = integrate(&mut g, f, z, t0, t1, cfg).unwrap();
        g.scalar(out)
    }

    #[test]
    fn empty_interval_returns_initial_state() {
        for cfg in [SolverConfig::euler(0.01), SolverConfig::default()] {
            assert_eq!(run_scalar(&decay(), 1.3, 0.4, 0.4, &cfg), 1.3);
        }
    }

    #[test]
    fn euler_hand_iteration() {
        // Two steps of z ← z − 0.1 z from 1.
        let z = run_scalar(&decay(), 1.0, 0.0, 0.2, &SolverConfig::euler(0.1));
        assert!((z - 0.81).abs() < 1e-15, "{z}");
    }

    #[test]
    fn dopri5_matches_exponential() {
        let cfg = SolverConfig::default();
        let z = run_scalar(&decay(), 1.0, 0.0, 0.2, &cfg);
        let exact = (-0.2f64).exp();
        assert!((z - exact).abs() <= cfg.rtol * exact + cfg.atol, "{z} vs {exact}");
    }

    #[test]
    fn euler_order_is_about_one() {
        let exact = (-1.0f64).exp();
        let e1 = (run_scalar(&decay(), 1.0, 0.0, 1.0, &SolverConfig::euler(0.01)) - exact).abs();
        let e2 = (run_scalar(&decay(), 1.0, 0.0, 1.0, &SolverConfig::euler(0.005)) - exact).abs();
        let order = (e1 / e2).log2();
        assert!(order >= 0.9, "order {order}");
    }

    #[test]
    fn backward_then_forward_is_reversible() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let net = OdeNet::new(&mut store, "f", 3, &[8], &mut rng);
        let cfg = SolverConfig::default();
        let z0 = Tensor::row(&[0.3, -0.2, 0.5]);
        let mut g = Graph::new(&store);
        let z = g.constant(z0.clone());
        let z1 = integrate(&mut g, &net, z, 0.0, 1.0, &cfg).unwrap();
        let back = integrate(&mut g, &net, z1, 1.0, 0.0, &cfg).unwrap();
        for (a, b) in g.value(back).data().iter().zip(z0.data()) {
            assert!((a - b).abs() <= 10.0 * (cfg.rtol * b.abs() + cfg.atol), "{a} vs {b}");
        }
    }

    #[test]
    fn path_requires_increasing_times() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let z = g.constant(Tensor::scalar(1.0));
        let f = decay();
        assert!(integrate_path(&mut g, &f, z, 0.0, &[0.2, 0.2], &SolverConfig::default()).is_err());
        assert!(integrate_path(&mut g, &f, z, 0.5, &[0.2, 0.7], &SolverConfig::default()).is_err());
    }

    #[test]
    fn single_time_path_equals_integrate() {
        let f = decay();
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let z = g.constant(Tensor::scalar(2.0));
        let a = integrate_path(&mut g, &f, z, 0.0, &[0.7], &SolverConfig::default()).unwrap();
        let b = integrate(&mut g, &f, z, 0.0, 0.7, &SolverConfig::default()).unwrap();
        assert_eq!(g.value(a[0]), g.value(b));
    }

    #[test]
    fn max_steps_exceeded_reports_last_time() {
        let f = FnField(|g: &mut Graph<'_>, z: Var, _t: f64| g.scale(z, 50.0));
        let mut cfg = SolverConfig::dopri5(1e-12, 1e-14);
        cfg.max_steps = 5;
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let z = g.constant(Tensor::scalar(1.0));
        match integrate(&mut g, &f, z, 0.0, 1.0, &cfg) {
            Err(Error::MaxStepsExceeded { max_steps: 5, last_t }) => assert!(last_t < 1.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    struct ScalarGrowth(ParamId);

    impl VectorField for ScalarGrowth {
        fn eval(&self, g: &mut Graph<'_>, z: Var, _t: f64) -> Var {
            let a = g.param(self.0);
            g.mul(z, a)
        }
    }

    #[test]
    fn gradient_of_linear_growth_is_exponential() {
        let mut store = ParamStore::new();
        let a = 0.7;
        let id = store.add("f", "a", Tensor::scalar(a));
        let cfg = SolverConfig::dopri5(1e-10, 1e-12);
        let (dz0, dp) = gradients(&store, &ScalarGrowth(id), &Tensor::scalar(1.5), 0.1, 0.9, &cfg, &Tensor::scalar(1.0)).unwrap();
        let span = 0.8;
        assert!((dz0.data()[0] - (a * span).exp()).abs() < 1e-8);
        // ∂/∂a [z0 e^{a·Δt}] = z0 Δt e^{a·Δt}
        assert!((dp.get(id).data()[0] - 1.5 * span * (a * span).exp()).abs() < 1e-7);
    }

    #[test]
    fn state_independent_field_has_identity_jacobian() {
        let f = FnField(|g: &mut Graph<'_>, z: Var, t: f64| {
            let rows = g.value(z).rows();
            let cols = g.value(z).cols();
            g.constant(Tensor::full(rows, cols, t.sin()))
        });
        let store = ParamStore::new();
        for cfg in [SolverConfig::euler(0.01), SolverConfig::default()] {
            let (dz0, _) = gradients(&store, &f, &Tensor::row(&[1.0, 2.0]), 0.0, 1.0, &cfg, &Tensor::row(&[0.3, -2.0])).unwrap();
            assert_eq!(dz0.data(), &[0.3, -2.0]);
        }
    }

    #[test]
    fn dense_weights_interpolate_endpoints() {
        let w0 = dense_weights(0.0);
        assert_eq!(w0, [1.0, 0.0, 0.0, 0.0, 0.0]);
        let w1 = dense_weights(1.0);
        for (a, b) in w1.iter().zip(&[0.0, 1.0, 0.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-14);
        }
        let wm = dense_weights(0.5);
        for (a, b) in wm.iter().zip(&[0.0, 0.0, 1.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
