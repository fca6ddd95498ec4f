//! ODE-RNN encoders: a reversed pass over one measurement stream yields
//! the Gaussian posterior of the initial latent condition.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{CellKind, Mlp, RecurrentCell};
use crate::ode::{integrate, OdeNet, SolverConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Lower bound added to the softplus that produces σ.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Encoder {
    pub cell: RecurrentCell,
    pub ode: OdeNet,
    pub head: Mlp,
    pub latent_dim: usize,
}

/// Posterior mean and standard deviation, both `1 × L`.
#[derive(Clone, Copy, Debug)]
pub struct Posterior {
    pub mu: Var,
    pub sigma: Var,
}

/// `z0 = μ + σ ⊙ ε`, with the draw kept for reproducibility.
#[derive(Clone, Copy, Debug)]
pub struct InitialLatent {
    pub z0: Var,
    pub posterior: Posterior,
    pub epsilon: Var,
}

impl Encoder {
    /// Parameters go to groups `g.<band>` (cell), `e.<band>` (hidden-state
    /// ODE) and `z.<band>` (posterior head).
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        band: &str,
        kind: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        latent_dim: usize,
        mlp_hidden: usize,
        rng: &mut R,
    ) -> Self {
        let cell = RecurrentCell::new(kind, store, &format!("g.{band}"), input_dim, hidden_dim, rng);
        let ode = OdeNet::new(store, &format!("e.{band}"), hidden_dim, &[mlp_hidden], rng);
        let head = Mlp::new(store, &format!("z.{band}"), "head", &[hidden_dim, mlp_hidden, 2 * latent_dim], rng);
        Encoder { cell, ode, head, latent_dim }
    }

    /// Hidden state at `t0` after absorbing `values` (one row per time in
    /// `times`) from the last observation back to the first. The hidden
    /// state before the last observation is zero.
    pub fn encode_sequence(&self, g: &mut Graph<'_>, times: &[f64], values: &Tensor, t0: f64, cfg: &SolverConfig) -> Result<Var> {
        if times.is_empty() {
            return Err(Error::invalid("cannot encode an empty sequence"));
        }
        if values.rows() != times.len() || values.cols() != self.cell.input_dim() {
            return Err(Error::invalid(format!(
                "encoder expects {}x{} inputs, got {}x{}",
                times.len(),
                self.cell.input_dim(),
                values.rows(),
                values.cols()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("encoder timestamps must be strictly increasing"));
        }
        if times[0] < t0 {
            return Err(Error::invalid("first observation precedes t0"));
        }
        let mut state = self.cell.zero_state(g, 1);
        let last = times.len() - 1;
        for n in (0..times.len()).rev() {
            let h_tilde = if n == last { state.h } else { integrate(g, &self.ode, state.h, times[n + 1], times[n], cfg)? };
            let x = g.constant(Tensor::row(values.row_slice(n)));
            state = self.cell.step(g, h_tilde, state.mem, x);
        }
        integrate(g, &self.ode, state.h, times[0], t0, cfg)
    }

    /// `μ` unconstrained, `σ = softplus(raw) + 1e-6`.
    pub fn posterior_head(&self, g: &mut Graph<'_>, h0: Var) -> Posterior {
        let out = self.head.forward(g, h0);
        let mu = g.slice_cols(out, 0, self.latent_dim);
        let raw = g.slice_cols(out, self.latent_dim, self.latent_dim);
        let sp = g.softplus(raw);
        let sigma = g.add_scalar(sp, SIGMA_FLOOR);
        Posterior { mu, sigma }
    }

    pub fn encode(&self, g: &mut Graph<'_>, times: &[f64], values: &Tensor, t0: f64, cfg: &SolverConfig, epsilon: &[f64]) -> Result<InitialLatent> {
        let h0 = self.encode_sequence(g, times, values, t0, cfg)?;
        let posterior = self.posterior_head(g, h0);
        sample_initial(g, posterior, epsilon)
    }
}

/// Reparameterised draw `z0 = μ + σ ⊙ ε`.
pub fn sample_initial(g: &mut Graph<'_>, posterior: Posterior, epsilon: &[f64]) -> Result<InitialLatent> {
    if epsilon.len() != g.value(posterior.mu).cols() {
        return Err(Error::invalid("epsilon length does not match the latent dimension"));
    }
    let eps = g.constant(Tensor::row(epsilon));
    let noise = g.mul(posterior.sigma, eps);
    let z0 = g.add(posterior.mu, noise);
    Ok(InitialLatent { z0, posterior, epsilon: eps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(kind: CellKind) -> (ParamStore, Encoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, "c", kind, 3, 5, 2, 8, &mut rng);
        (store, enc)
    }

    fn h0(store: &ParamStore, enc: &Encoder, times: &[f64], values: &Tensor) -> Vec<f64> {
        let mut g = Graph::new(store);
        let h = enc.encode_sequence(&mut g, times, values, 0.0, &SolverConfig::euler(0.01)).unwrap();
        g.value(h).data().to_vec()
    }

    #[test]
    fn single_observation_at_t0_is_one_cell_update() {
        let (store, enc) = encoder(CellKind::Gru);
        let x = Tensor::row(&[0.2, -0.1, 0.5]);
        let got = h0(&store, &enc, &[0.0], &x);
        let mut g = Graph::new(&store);
        let zero = g.constant(Tensor::zeros(1, 5));
        let xv = g.constant(x);
        let s = enc.cell.step(&mut g, zero, None, xv);
        assert_eq!(got, g.value(s.h).data());
    }

    #[test]
    fn zero_dynamics_reduce_to_a_reversed_rnn() {
        let (mut store, enc) = encoder(CellKind::Gru);
        enc.ode.mlp.zero(&mut store);
        let vals = Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![0.5, 0.1, -0.2], vec![0.0, 0.9, 0.4]]);
        let got = h0(&store, &enc, &[0.1, 0.4, 0.8], &vals);
        let mut g = Graph::new(&store);
        let mut h = g.constant(Tensor::zeros(1, 5));
        for n in (0..3).rev() {
            let x = g.constant(Tensor::row(vals.row_slice(n)));
            h = enc.cell.step(&mut g, h, None, x).h;
        }
        for (a, b) in got.iter().zip(g.value(h).data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn encoder_is_time_aware_and_order_sensitive() {
        for kind in [CellKind::Gru, CellKind::Lstm] {
            let (store, enc) = encoder(kind);
            let vals = Tensor::from_rows(&[vec![0.3, 0.1, 0.7], vec![0.3, 0.1, 0.7]]);
            let a = h0(&store, &enc, &[0.1, 0.2], &vals);
            let b = h0(&store, &enc, &[0.1, 0.9], &vals);
            assert_ne!(a, b);
            let seq = Tensor::from_rows(&[vec![0.9, 0.1, 0.0], vec![0.1, 0.5, 0.2], vec![0.4, 0.4, 0.8]]);
            let shuffled = Tensor::from_rows(&[vec![0.4, 0.4, 0.8], vec![0.9, 0.1, 0.0], vec![0.1, 0.5, 0.2]]);
            assert_ne!(h0(&store, &enc, &[0.1, 0.3, 0.6], &seq), h0(&store, &enc, &[0.1, 0.3, 0.6], &shuffled));
        }
    }

    #[test]
    fn encoder_rejects_bad_sequences() {
        let (store, enc) = encoder(CellKind::Gru);
        let mut g = Graph::new(&store);
        let cfg = SolverConfig::euler(0.01);
        assert!(enc.encode_sequence(&mut g, &[], &Tensor::zeros(0, 3), 0.0, &cfg).is_err());
        assert!(enc.encode_sequence(&mut g, &[0.2, 0.1], &Tensor::zeros(2, 3), 0.0, &cfg).is_err());
    }

    #[test]
    fn posterior_sigma_is_positive_and_zero_head_gives_bias() {
        let (mut store, enc) = encoder(CellKind::Gru);
        let last = enc.head.layers.last().unwrap();
        store.get_mut(last.weight).fill(0.0);
        store.get_mut(last.bias).data_mut().copy_from_slice(&[0.5, -1.0, -800.0, 3.0]);
        let mut g = Graph::new(&store);
        let h = g.constant(Tensor::row(&[1.0, -2.0, 0.3, 0.0, 4.0]));
        let p = enc.posterior_head(&mut g, h);
        assert_eq!(g.value(p.mu).data(), &[0.5, -1.0]);
        let s = g.value(p.sigma).data();
        assert!(s[0] >= SIGMA_FLOOR && s[0] < 2e-6);
        assert!((s[1] - (3.0f64.exp().ln_1p() + SIGMA_FLOOR)).abs() < 1e-12);
    }

    #[test]
    fn reparameterisation_examples() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let mu = g.constant(Tensor::row(&[1.0]));
        let sigma = g.constant(Tensor::row(&[2.0]));
        let z = sample_initial(&mut g, Posterior { mu, sigma }, &[-0.5]).unwrap();
        assert_eq!(g.value(z.z0).data(), &[0.0]);
        let z = sample_initial(&mut g, Posterior { mu, sigma }, &[0.0]).unwrap();
        assert_eq!(g.value(z.z0).data(), &[1.0]);
        let tiny = g.constant(Tensor::row(&[0.0]));
        let z = sample_initial(&mut g, Posterior { mu, sigma: tiny }, &[7.0]).unwrap();
        assert_eq!(g.value(z.z0).data(), &[1.0]);
        assert!(sample_initial(&mut g, Posterior { mu, sigma }, &[0.0, 1.0]).is_err());
    }
}
