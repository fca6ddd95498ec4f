//! Trajectory, CSI and beam-SNR decoders, the Gaussian KL term and the
//! training loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::encoder::Posterior;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Three-layer MLP decoders shared across time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Decoders {
    /// Fused latent to `[x, y]`, group `p`.
    pub trajectory: Mlp,
    /// CSI latent to an embedding, group `c`.
    pub csi: Mlp,
    /// Beam latent to SNRs, group `b`.
    pub beam: Mlp,
}

impl Decoders {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        fused_dim: usize,
        latent_c: usize,
        latent_b: usize,
        m_c: usize,
        m_b: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Decoders {
            trajectory: Mlp::new(store, "p", "decoder", &[fused_dim, hidden, hidden, 2], rng),
            csi: Mlp::new(store, "c", "decoder", &[latent_c, hidden, hidden, m_c], rng),
            beam: Mlp::new(store, "b", "decoder", &[latent_b, hidden, hidden, m_b], rng),
        }
    }

    pub fn decode_trajectory(&self, g: &mut Graph<'_>, z_p: Var) -> Var {
        self.trajectory.forward(g, z_p)
    }

    pub fn decode_csi(&self, g: &mut Graph<'_>, z_c: Var) -> Var {
        self.csi.forward(g, z_c)
    }

    pub fn decode_bsnr(&self, g: &mut Graph<'_>, z_b: Var) -> Var {
        self.beam.forward(g, z_b)
    }
}

/// `½ Σ (μ² + σ² − 1 − ln σ²)` against a standard normal prior.
pub fn kl_gaussian_value(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::invalid("mu and sigma lengths differ"));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::invalid(format!("sigma must be positive, got {s}")));
    }
    Ok(0.5 * mu.iter().zip(sigma).map(|(m, s)| m * m + s * s - 1.0 - (s * s).ln()).sum::<f64>())
}

/// `Σ (μ² + σ² − 1 − ln σ²)` on the tape, i.e. twice the KL divergence.
fn kl_sum(g: &mut Graph<'_>, post: Posterior) -> Var {
    let mu2 = g.square(post.mu);
    let s2 = g.square(post.sigma);
    let ln = g.ln(s2);
    let inner = g.lin_comb(&[(mu2, 1.0), (s2, 1.0), (ln, -1.0)]);
    let shifted = g.add_scalar(inner, -1.0);
    g.sum(shifted)
}

/// KL divergence of a posterior from `N(0, I)` on the tape.
pub fn kl_gaussian(g: &mut Graph<'_>, post: Posterior) -> Result<Var> {
    if g.value(post.sigma).data().iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid("sigma must be positive"));
    }
    let s = kl_sum(g, post);
    Ok(g.scale(s, 0.5))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Beam-SNR reconstruction.
    pub lambda1: f64,
    /// CSI reconstruction.
    pub lambda2: f64,
    /// Beam KL.
    pub lambda3: f64,
    /// CSI KL.
    pub lambda4: f64,
    /// Laplace scale of the coordinate likelihood.
    pub b_p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda1: 0.7, lambda2: 1.0, lambda3: 0.001, lambda4: 0.25, b_p: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let l = [self.lambda1, self.lambda2, self.lambda3, self.lambda4];
        if l.iter().any(|v| !(*v >= 0.0)) || !(self.b_p > 0.0) {
            return Err(Error::invalid("loss weights must be non-negative and b_p positive"));
        }
        Ok(())
    }
}

/// Values of the individual terms before weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    /// `Σ_n ‖p_n − p̂_n‖₁ / b_p`.
    pub trajectory: f64,
    pub beam: f64,
    pub csi: f64,
    /// `Σ_l (μ² + σ² − 1 − ln σ²)` for each band.
    pub kl_beam: f64,
    pub kl_csi: f64,
}

/// Decoder outputs and their targets for one window.
pub struct LossInputs<'a> {
    pub trajectory: Var,
    pub trajectory_target: &'a Tensor,
    pub beam: Var,
    pub beam_target: &'a Tensor,
    pub csi: Var,
    pub csi_target: &'a Tensor,
    pub posterior_beam: Posterior,
    pub posterior_csi: Posterior,
}

fn l1_sum(g: &mut Graph<'_>, pred: Var, target: &Tensor, what: &str) -> Result<Var> {
    if g.value(pred).shape() != target.shape() {
        let (r, c) = g.value(pred).shape();
        return Err(Error::invalid(format!("{what} prediction {r}x{c} vs target {}x{}", target.rows(), target.cols())));
    }
    let t = g.constant(target.clone());
    let d = g.sub(pred, t);
    let a = g.abs(d);
    Ok(g.sum(a))
}

/// `Σ‖p − p̂‖₁/b_p + λ1 Σ‖b − b̂‖₁ + λ2 Σ‖c − ĉ‖₁ + λ3 Σ_l(μ_b² + σ_b² − 1 − ln σ_b²)
/// + λ4 Σ_l(μ_c² + σ_c² − 1 − ln σ_c²)`, summed over the window.
pub fn ndf_loss(g: &mut Graph<'_>, inputs: &LossInputs<'_>, w: &LossWeights) -> Result<(Var, LossTerms)> {
    w.validate()?;
    let traj = l1_sum(g, inputs.trajectory, inputs.trajectory_target, "trajectory")?;
    let beam = l1_sum(g, inputs.beam, inputs.beam_target, "beam")?;
    let csi = l1_sum(g, inputs.csi, inputs.csi_target, "csi")?;
    let kl_b = kl_sum(g, inputs.posterior_beam);
    let kl_c = kl_sum(g, inputs.posterior_csi);
    let terms = LossTerms {
        total: 0.0,
        trajectory: g.scalar(traj) / w.b_p,
        beam: g.scalar(beam),
        csi: g.scalar(csi),
        kl_beam: g.scalar(kl_b),
        kl_csi: g.scalar(kl_c),
    };
    for (name, v) in [
        ("trajectory", terms.trajectory),
        ("beam", terms.beam),
        ("csi", terms.csi),
        ("kl_beam", terms.kl_beam),
        ("kl_csi", terms.kl_csi),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { term: name.to_string() });
        }
    }
    let total = g.lin_comb(&[(traj, 1.0 / w.b_p), (beam, w.lambda1), (csi, w.lambda2), (kl_b, w.lambda3), (kl_c, w.lambda4)]);
    let terms = LossTerms { total: g.scalar(total), ..terms };
    Ok((total, terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kl_closed_form_examples() {
        assert_eq!(kl_gaussian_value(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!((kl_gaussian_value(&[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        let v = kl_gaussian_value(&[0.0], &[2f64.sqrt()]).unwrap();
        assert!((v - 0.5 * (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((v - 0.1534).abs() < 1e-4);
        assert!(kl_gaussian_value(&[0.0], &[0.0]).is_err());
    }

    #[test]
    fn tape_kl_matches_value() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let mu = g.constant(Tensor::row(&[0.3, -1.2]));
        let sigma = g.constant(Tensor::row(&[0.5, 1.7]));
        let kl = kl_gaussian(&mut g, Posterior { mu, sigma }).unwrap();
        assert!((g.scalar(kl) - kl_gaussian_value(&[0.3, -1.2], &[0.5, 1.7]).unwrap()).abs() < 1e-14);
    }

    fn loss_of(pred: [f64; 2], target: [f64; 2], w: LossWeights, mu: f64, sigma: f64) -> LossTerms {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let t = Tensor::row(&target);
        let b = Tensor::row(&[0.5]);
        let p = g.constant(Tensor::row(&pred));
        let bh = g.constant(b.clone());
        let mu = g.constant(Tensor::row(&[mu]));
        let sigma = g.constant(Tensor::row(&[sigma]));
        let post = Posterior { mu, sigma };
        let inputs = LossInputs {
            trajectory: p,
            trajectory_target: &t,
            beam: bh,
            beam_target: &b,
            csi: bh,
            csi_target: &b,
            posterior_beam: post,
            posterior_csi: post,
        };
        ndf_loss(&mut g, &inputs, &w).unwrap().1
    }

    #[test]
    fn loss_examples() {
        let zero = LossWeights { lambda1: 0.0, lambda2: 0.0, lambda3: 0.0, lambda4: 0.0, b_p: 1.0 };
        assert_eq!(loss_of([1.0, 1.0], [0.0, 0.0], zero, 0.0, 1.0).total, 2.0);
        assert_eq!(loss_of([0.3, 0.1], [0.3, 0.1], LossWeights::default(), 0.0, 1.0).total, 0.0);
        let a = loss_of([0.5, 0.0], [0.0, 0.0], LossWeights::default(), 0.2, 0.9).total;
        let b = loss_of([0.6, 0.0], [0.0, 0.0], LossWeights::default(), 0.2, 0.9).total;
        assert!(b > a && a > 0.0);
    }

    #[test]
    fn non_finite_term_is_attributed() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let t = Tensor::row(&[0.0, 0.0]);
        let p = g.constant(Tensor::row(&[f64::NAN, 0.0]));
        let b = Tensor::row(&[0.5]);
        let bh = g.constant(b.clone());
        let mu = g.constant(Tensor::row(&[0.0]));
        let sigma = g.constant(Tensor::row(&[1.0]));
        let post = Posterior { mu, sigma };
        let inputs = LossInputs { trajectory: p, trajectory_target: &t, beam: bh, beam_target: &b, csi: bh, csi_target: &b, posterior_beam: post, posterior_csi: post };
        match ndf_loss(&mut g, &inputs, &LossWeights::default()) {
            Err(Error::NonFiniteLoss { term }) => assert_eq!(term, "trajectory"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decoder_output_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let d = Decoders::new(&mut store, 20, 20, 20, 36, 36, 16, &mut rng);
        let mut g = Graph::new(&store);
        let z = g.constant(Tensor::zeros(3, 20));
        let p = d.decode_trajectory(&mut g, z);
        let c = d.decode_csi(&mut g, z);
        let b = d.decode_bsnr(&mut g, z);
        assert_eq!(g.value(p).shape(), (3, 2));
        assert_eq!(g.value(c).shape(), (3, 36));
        assert_eq!(g.value(b).shape(), (3, 36));
    }
}
