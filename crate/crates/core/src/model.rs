//! The full NDF network and the interface shared with the baselines.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::MeasurementWindow;
use crate::decoder::{ndf_loss, Decoders, LossInputs, LossTerms, LossWeights};
use crate::encoder::{Encoder, InitialLatent};
use crate::error::{Error, Result};
use crate::fusion::{unroll_two, Fusion, FusionScheme};
use crate::nn::CellKind;
use crate::ode::{OdeNet, SolverConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// A window ready for a model: normalised times, scaled measurements and
/// labels in metres.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowInput {
    pub id: usize,
    pub beam_t: Vec<f64>,
    pub beam: Tensor,
    pub csi_t: Vec<f64>,
    pub csi: Tensor,
    pub label_t: Vec<f64>,
    pub labels: Tensor,
}

impl WindowInput {
    pub fn from_window(w: &MeasurementWindow) -> Result<WindowInput> {
        if !w.normalized {
            return Err(Error::invalid("window times must be normalised first"));
        }
        if w.has_empty_stream() {
            return Err(Error::invalid(format!("window {} has an empty stream", w.id)));
        }
        let stack = |rows: Vec<Vec<f64>>| Tensor::from_rows(&rows);
        Ok(WindowInput {
            id: w.id,
            beam_t: w.beam_times(),
            beam: stack(w.beam.iter().map(|f| f.values.clone()).collect()),
            csi_t: w.csi_times(),
            csi: stack(w.csi.iter().map(|f| f.values.clone()).collect()),
            label_t: w.label_times(),
            labels: stack(w.labels.iter().map(|f| f.xy.to_vec()).collect()),
        })
    }
}

/// Anything trainable that maps a window to coordinates at its label times.
pub trait Regressor: Sync {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Training objective of one window. `noise` drives any sampling; with
    /// `None` the model runs deterministically.
    fn window_loss(&self, g: &mut Graph<'_>, w: &WindowInput, weights: &LossWeights, noise: Option<&mut ChaCha8Rng>) -> Result<(Var, LossTerms)>;
    /// Coordinates at the label times, `N_p × 2`.
    fn predict(&self, w: &WindowInput) -> Result<Tensor>;
    fn method_id(&self) -> String;
    /// Digest of the architecture, stored with checkpoints.
    fn config_hash(&self) -> Result<String>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NdfConfig {
    pub m_b: usize,
    pub m_c: usize,
    pub cell: CellKind,
    /// Encoder hidden size `H_b = H_c`.
    pub hidden: usize,
    /// Initial-condition size `L_b = L_c`.
    pub latent: usize,
    /// Fused latent size `L_p`.
    pub fused: usize,
    /// Lift size `L_f`.
    pub lift: usize,
    /// Width of every hidden MLP layer.
    pub mlp_hidden: usize,
    pub fusion: FusionScheme,
    pub encoder_solver: SolverConfig,
    pub latent_solver: SolverConfig,
    /// Time of the initial latent condition (normalised).
    pub t0: f64,
}

impl Default for NdfConfig {
    fn default() -> Self {
        NdfConfig {
            m_b: 36,
            m_c: 36,
            cell: CellKind::Gru,
            hidden: 20,
            latent: 20,
            fused: 20,
            lift: 128,
            mlp_hidden: 64,
            fusion: FusionScheme::Mlp,
            encoder_solver: SolverConfig::euler(0.01),
            latent_solver: SolverConfig::dopri5(1e-5, 1e-7),
            t0: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Ndf {
    pub config: NdfConfig,
    pub store: ParamStore,
    pub encoder_b: Encoder,
    pub encoder_c: Encoder,
    pub dynamics_b: OdeNet,
    pub dynamics_c: OdeNet,
    pub fusion: Fusion,
    pub decoders: Decoders,
}

/// Every intermediate of one forward pass.
#[derive(Clone, Debug)]
pub struct NdfOutputs {
    pub init_b: InitialLatent,
    pub init_c: InitialLatent,
    /// Aligned latents at the label times, stacked `N_p × L`.
    pub aligned_b: Var,
    pub aligned_c: Var,
    pub fused: Var,
    pub trajectory: Var,
    pub beam: Var,
    pub csi: Var,
}

impl Ndf {
    pub fn new(config: NdfConfig, seed: u64) -> Result<Ndf> {
        config.encoder_solver.validate()?;
        config.latent_solver.validate()?;
        let c = &config;
        if [c.m_b, c.m_c, c.hidden, c.latent, c.fused, c.lift, c.mlp_hidden].contains(&0) {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder_b = Encoder::new(&mut store, "beam", c.cell, c.m_b, c.hidden, c.latent, c.mlp_hidden, &mut rng);
        let encoder_c = Encoder::new(&mut store, "csi", c.cell, c.m_c, c.hidden, c.latent, c.mlp_hidden, &mut rng);
        let dynamics_b = OdeNet::new(&mut store, "d.beam", c.latent, &[c.mlp_hidden], &mut rng);
        let dynamics_c = OdeNet::new(&mut store, "d.csi", c.latent, &[c.mlp_hidden], &mut rng);
        let fusion = Fusion::new(&mut store, c.fusion, c.latent, c.latent, c.lift, c.fused, c.mlp_hidden, &mut rng);
        let decoders = Decoders::new(&mut store, c.fused, c.latent, c.latent, c.m_c, c.m_b, c.mlp_hidden, &mut rng);
        Ok(Ndf { config, store, encoder_b, encoder_c, dynamics_b, dynamics_c, fusion, decoders })
    }

    pub fn forward(&self, g: &mut Graph<'_>, w: &WindowInput, eps_b: &[f64], eps_c: &[f64]) -> Result<NdfOutputs> {
        let c = &self.config;
        let init_b = self.encoder_b.encode(g, &w.beam_t, &w.beam, c.t0, &c.encoder_solver, eps_b)?;
        let init_c = self.encoder_c.encode(g, &w.csi_t, &w.csi, c.t0, &c.encoder_solver, eps_c)?;
        let (pb, zb) = unroll_two(g, &self.dynamics_b, init_b.z0, c.t0, &w.label_t, &w.beam_t, &c.latent_solver)?;
        let (pc, zc) = unroll_two(g, &self.dynamics_c, init_c.z0, c.t0, &w.label_t, &w.csi_t, &c.latent_solver)?;
        let aligned_b = g.stack_rows(&pb);
        let aligned_c = g.stack_rows(&pc);
        let fused = self.fusion.fuse(g, aligned_b, aligned_c, init_b.z0, init_c.z0)?;
        let trajectory = self.decoders.decode_trajectory(g, fused);
        let native_b = g.stack_rows(&zb);
        let native_c = g.stack_rows(&zc);
        let beam = self.decoders.decode_bsnr(g, native_b);
        let csi = self.decoders.decode_csi(g, native_c);
        Ok(NdfOutputs { init_b, init_c, aligned_b, aligned_c, fused, trajectory, beam, csi })
    }

    pub fn loss_with_eps(&self, g: &mut Graph<'_>, w: &WindowInput, weights: &LossWeights, eps_b: &[f64], eps_c: &[f64]) -> Result<(Var, LossTerms)> {
        let out = self.forward(g, w, eps_b, eps_c)?;
        let inputs = LossInputs {
            trajectory: out.trajectory,
            trajectory_target: &w.labels,
            beam: out.beam,
            beam_target: &w.beam,
            csi: out.csi,
            csi_target: &w.csi,
            posterior_beam: out.init_b.posterior,
            posterior_csi: out.init_c.posterior,
        };
        ndf_loss(g, &inputs, weights)
    }

    /// Fused latent states at the label times (posterior means), `N_p × L_p`.
    pub fn fused_latents(&self, w: &WindowInput) -> Result<Tensor> {
        let zeros = vec![0.0; self.config.latent];
        let mut g = Graph::new(&self.store);
        let out = self.forward(&mut g, w, &zeros, &zeros)?;
        Ok(g.value(out.fused).clone())
    }
}

impl Regressor for Ndf {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn window_loss(&self, g: &mut Graph<'_>, w: &WindowInput, weights: &LossWeights, noise: Option<&mut ChaCha8Rng>) -> Result<(Var, LossTerms)> {
        let l = self.config.latent;
        let (eps_b, eps_c): (Vec<f64>, Vec<f64>) = match noise {
            Some(rng) => ((0..l).map(|_| rng.sample(StandardNormal)).collect(), (0..l).map(|_| rng.sample(StandardNormal)).collect()),
            None => (vec![0.0; l], vec![0.0; l]),
        };
        self.loss_with_eps(g, w, weights, &eps_b, &eps_c)
    }

    /// Decodes from the posterior means.
    fn predict(&self, w: &WindowInput) -> Result<Tensor> {
        let zeros = vec![0.0; self.config.latent];
        let mut g = Graph::new(&self.store);
        let out = self.forward(&mut g, w, &zeros, &zeros)?;
        Ok(g.value(out.trajectory).clone())
    }

    fn method_id(&self) -> String {
        format!("ndf-{}", serde_json::to_value(self.config.fusion).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
    }

    fn config_hash(&self) -> Result<String> {
        crate::checkpoint::config_hash(&self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_window() -> WindowInput {
        WindowInput {
            id: 0,
            beam_t: vec![0.1, 0.6],
            beam: Tensor::from_rows(&[vec![0.2, 0.8, 0.1], vec![0.5, 0.4, 0.9]]),
            csi_t: vec![0.05, 0.3, 0.7],
            csi: Tensor::from_rows(&[vec![0.1, 0.2], vec![0.7, 0.3], vec![0.4, 0.9]]),
            label_t: vec![0.0, 0.5, 0.9],
            labels: Tensor::from_rows(&[vec![1.0, 2.0], vec![1.5, 2.2], vec![2.0, 2.1]]),
        }
    }

    fn toy_config() -> NdfConfig {
        NdfConfig { m_b: 3, m_c: 2, hidden: 4, latent: 3, fused: 3, lift: 6, mlp_hidden: 5, ..Default::default() }
    }

    #[test]
    fn forward_shapes() {
        for fusion in [FusionScheme::Mlp, FusionScheme::Pairwise, FusionScheme::Weighted] {
            let m = Ndf::new(NdfConfig { fusion, ..toy_config() }, 0).unwrap();
            let w = toy_window();
            let mut g = Graph::new(&m.store);
            let out = m.forward(&mut g, &w, &[0.0; 3], &[0.0; 3]).unwrap();
            assert_eq!(g.value(out.trajectory).shape(), (3, 2));
            assert_eq!(g.value(out.beam).shape(), (2, 3));
            assert_eq!(g.value(out.csi).shape(), (3, 2));
            assert_eq!(g.value(out.fused).shape(), (3, 3));
            let p = m.predict(&w).unwrap();
            assert_eq!(p, m.predict(&w).unwrap());
        }
    }

    #[test]
    fn label_at_t0_aligns_to_initial_condition() {
        let m = Ndf::new(toy_config(), 1).unwrap();
        let w = toy_window();
        let mut g = Graph::new(&m.store);
        let out = m.forward(&mut g, &w, &[0.1, 0.2, 0.3], &[0.0; 3]).unwrap();
        assert_eq!(g.value(out.aligned_b).row_slice(0), g.value(out.init_b.z0).data());
        assert_eq!(g.value(out.aligned_c).row_slice(0), g.value(out.init_c.z0).data());
    }
}
