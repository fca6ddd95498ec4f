//! Latent unrolling to shared and native time stamps, and the three
//! post-ODE fusion schemes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::ode::{integrate_path, OdeNet, SolverConfig};
use crate::params::ParamStore;

/// Latent trajectory of one band at `times` (non-decreasing from `t0`).
pub fn recover_latents(g: &mut Graph<'_>, dynamics: &OdeNet, z0: Var, t0: f64, times: &[f64], cfg: &SolverConfig) -> Result<Vec<Var>> {
    integrate_path(g, dynamics, z0, t0, times, cfg)
}

/// Both bands unrolled to the label times, each with its own dynamics.
#[allow(clippy::too_many_arguments)]
pub fn align_latents(
    g: &mut Graph<'_>,
    dynamics_b: &OdeNet,
    dynamics_c: &OdeNet,
    z0_b: Var,
    z0_c: Var,
    t0: f64,
    label_times: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<Var>, Vec<Var>)> {
    if let Some(&t) = label_times.iter().find(|&&t| t < t0) {
        return Err(Error::invalid(format!("label time {t} precedes t0 = {t0}")));
    }
    let b = recover_latents(g, dynamics_b, z0_b, t0, label_times, cfg)?;
    let c = recover_latents(g, dynamics_c, z0_c, t0, label_times, cfg)?;
    Ok((b, c))
}

/// One solve serving two sorted query lists, e.g. label times and native
/// measurement times. Returns the states for `a` and for `b`.
pub fn unroll_two(
    g: &mut Graph<'_>,
    dynamics: &OdeNet,
    z0: Var,
    t0: f64,
    a: &[f64],
    b: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<Var>, Vec<Var>)> {
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    if all.iter().any(|&t| t < t0) {
        return Err(Error::invalid(format!("query time precedes t0 = {t0}")));
    }
    all.sort_by(f64::total_cmp);
    all.dedup();
    let states = integrate_path(g, dynamics, z0, t0, &all, cfg)?;
    let pick = |ts: &[f64]| -> Vec<Var> {
        ts.iter().map(|t| states[all.partition_point(|x| x < t)]).collect()
    };
    Ok((pick(a), pick(b)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionScheme {
    Mlp,
    Pairwise,
    Weighted,
}

impl std::str::FromStr for FusionScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(FusionScheme::Mlp),
            "pairwise" => Ok(FusionScheme::Pairwise),
            "weighted" => Ok(FusionScheme::Weighted),
            _ => Err(Error::invalid(format!("unknown fusion scheme `{s}`"))),
        }
    }
}

/// Fuses stacked aligned latents (`N × L_b`, `N × L_c`) into `N × L_p`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Fusion {
    pub scheme: FusionScheme,
    pub lift_b: Option<Mlp>,
    pub lift_c: Option<Mlp>,
    pub weight_b: Option<Mlp>,
    pub weight_c: Option<Mlp>,
    pub head: Mlp,
    pub latent_b: usize,
    pub latent_c: usize,
}

impl Fusion {
    /// Lifts and weight nets have one hidden layer of `hidden` units.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        scheme: FusionScheme,
        latent_b: usize,
        latent_c: usize,
        lift_dim: usize,
        fused_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let lift = |store: &mut ParamStore, group: &str, from: usize, rng: &mut R| Mlp::new(store, group, "lift", &[from, hidden, lift_dim], rng);
        let (lift_b, lift_c) = match scheme {
            FusionScheme::Mlp | FusionScheme::Weighted => (Some(lift(store, "f.beam", latent_b, rng)), Some(lift(store, "f.csi", latent_c, rng))),
            FusionScheme::Pairwise => (None, None),
        };
        let (weight_b, weight_c) = match scheme {
            FusionScheme::Weighted => (
                Some(Mlp::new(store, "w.beam", "weight", &[latent_b, hidden, lift_dim], rng)),
                Some(Mlp::new(store, "w.csi", "weight", &[latent_c, hidden, lift_dim], rng)),
            ),
            _ => (None, None),
        };
        let head_in = match scheme {
            FusionScheme::Mlp => 2 * lift_dim,
            FusionScheme::Pairwise => latent_b + latent_c + latent_b * latent_c,
            FusionScheme::Weighted => lift_dim,
        };
        let head = Mlp::new(store, "f.fused", "head", &[head_in, hidden, fused_dim], rng);
        Fusion { scheme, lift_b, lift_c, weight_b, weight_c, head, latent_b, latent_c }
    }

    pub fn head_input_dim(&self) -> usize {
        self.head.in_dim()
    }

    pub fn fused_dim(&self) -> usize {
        self.head.out_dim()
    }

    /// Normalised importance weights `(w̃_b, w̃_c)`, each `1 × L_f`; a
    /// two-way softmax per element.
    pub fn importance(&self, g: &mut Graph<'_>, z0_b: Var, z0_c: Var) -> Result<(Var, Var)> {
        let (Some(wb), Some(wc)) = (&self.weight_b, &self.weight_c) else {
            return Err(Error::invalid("importance weights exist only for the weighted scheme"));
        };
        let raw_b = wb.forward(g, z0_b);
        let raw_c = wc.forward(g, z0_c);
        let diff = g.sub(raw_b, raw_c);
        let w_b = g.sigmoid(diff);
        let neg = g.scale(w_b, -1.0);
        let w_c = g.add_scalar(neg, 1.0);
        Ok((w_b, w_c))
    }

    pub fn fuse(&self, g: &mut Graph<'_>, z_pb: Var, z_pc: Var, z0_b: Var, z0_c: Var) -> Result<Var> {
        let (sb, sc) = (g.value(z_pb).shape(), g.value(z_pc).shape());
        if sb.1 != self.latent_b || sc.1 != self.latent_c || sb.0 != sc.0 {
            return Err(Error::invalid(format!("fusion inputs {}x{} and {}x{} do not match the model", sb.0, sb.1, sc.0, sc.1)));
        }
        let input = match self.scheme {
            FusionScheme::Mlp => {
                let lb = self.lift_b.as_ref().expect("mlp lift").forward(g, z_pb);
                let lc = self.lift_c.as_ref().expect("mlp lift").forward(g, z_pc);
                g.concat_cols(&[lb, lc])
            }
            FusionScheme::Pairwise => {
                let k = g.kron_rows(z_pb, z_pc);
                g.concat_cols(&[z_pb, z_pc, k])
            }
            FusionScheme::Weighted => {
                let (w_b, w_c) = self.importance(g, z0_b, z0_c)?;
                let lb = self.lift_b.as_ref().expect("weighted lift").forward(g, z_pb);
                let lc = self.lift_c.as_ref().expect("weighted lift").forward(g, z_pc);
                let xb = g.mul_row(lb, w_b);
                let xc = g.mul_row(lc, w_c);
                g.add(xb, xc)
            }
        };
        Ok(self.head.forward(g, input))
    }
}
