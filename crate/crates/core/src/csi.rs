//! CSI front end: STO phase calibration, conjugate multiplication across
//! receive antennas, complex-to-real conversion and the convolutional
//! autoencoder (CAE) that compresses a calibrated frame to an embedding.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::checkpoint;
use crate::data::{CsiEmbedding, RawCsiFrame};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::optim::{Adamax, OneCycle};
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Phase of every entry, unwrapped along the subcarrier axis. Same
/// layout as [`RawCsiFrame::data`].
pub fn unwrap_phase(raw: &RawCsiFrame) -> Result<Vec<f64>> {
    let mut out = vec![0.0; raw.data.len()];
    for i in 0..raw.n_tx {
        for j in 0..raw.n_rx {
            let mut offset = 0.0;
            let mut prev = 0.0;
            for k in 0..raw.n_s {
                let c = raw.get(i, j, k);
                if c.norm() == 0.0 {
                    return Err(Error::ZeroMagnitude { tx: i, rx: j, subcarrier: k });
                }
                let p = c.arg();
                if k > 0 {
                    let d = p - prev;
                    let mut dd = (d + PI).rem_euclid(2.0 * PI) - PI;
                    if dd == -PI && d > 0.0 {
                        dd = PI;
                    }
                    offset += dd - d;
                }
                prev = p;
                out[raw.idx(i, j, k)] = p + offset;
            }
        }
    }
    Ok(out)
}

/// STO line for one packet: `ψ(i, j, k) ≈ 2π f_δ k τ̂_i − β̂_i` with `k`
/// counted from zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub tau_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
}

/// Least-squares fit of `tau, beta` to `psi[j][k]` jointly over the rows
/// `j` of one TX antenna.
pub fn fit_sto_line(psi: &[&[f64]], f_delta: f64) -> Result<(f64, f64)> {
    let n_s = psi.first().map_or(0, |r| r.len());
    if n_s < 2 {
        return Err(Error::invalid("STO fit needs at least two subcarriers"));
    }
    if psi.iter().any(|r| r.len() != n_s) {
        return Err(Error::invalid("ragged phase rows"));
    }
    let x = |k: usize| 2.0 * PI * f_delta * k as f64;
    let x_mean = x(n_s - 1) / 2.0;
    let y_mean = psi.iter().flat_map(|r| r.iter()).sum::<f64>() / (psi.len() * n_s) as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for row in psi {
        for (k, &y) in row.iter().enumerate() {
            let dx = x(k) - x_mean;
            sxy += dx * (y - y_mean);
            sxx += dx * dx;
        }
    }
    let tau = sxy / sxx;
    Ok((tau, tau * x_mean - y_mean))
}

/// Phase-corrected frame kept in polar form, so magnitudes are exactly
/// those of the raw frame.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectedCsi {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_s: usize,
    pub magnitude: Vec<f64>,
    pub phase: Vec<f64>,
}

pub fn fit_frame(raw: &RawCsiFrame, psi: &[f64], f_delta: f64) -> Result<CalibrationFit> {
    let mut fit = CalibrationFit { tau_hat: Vec::with_capacity(raw.n_tx), beta_hat: Vec::with_capacity(raw.n_tx) };
    for i in 0..raw.n_tx {
        let rows: Vec<&[f64]> = (0..raw.n_rx).map(|j| &psi[raw.idx(i, j, 0)..raw.idx(i, j, 0) + raw.n_s]).collect();
        let (tau, beta) = fit_sto_line(&rows, f_delta)?;
        fit.tau_hat.push(tau);
        fit.beta_hat.push(beta);
    }
    Ok(fit)
}

/// `ψ̂(i, j, k) = ψ(i, j, k) − 2π f_δ k τ̂_i`.
pub fn remove_linear_phase(raw: &RawCsiFrame, psi: &[f64], fit: &CalibrationFit, f_delta: f64) -> CorrectedCsi {
    let mut phase = psi.to_vec();
    for i in 0..raw.n_tx {
        for j in 0..raw.n_rx {
            for k in 0..raw.n_s {
                phase[raw.idx(i, j, k)] -= 2.0 * PI * f_delta * k as f64 * fit.tau_hat[i];
            }
        }
    }
    CorrectedCsi { n_tx: raw.n_tx, n_rx: raw.n_rx, n_s: raw.n_s, magnitude: raw.data.iter().map(|c| c.norm()).collect(), phase }
}

/// Calibrated tensor of shape `n_tx × (n_rx − 1) × n_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibratedCsi {
    pub n_tx: usize,
    pub n_pairs: usize,
    pub n_s: usize,
    pub data: Vec<Complex64>,
}

/// `out(i, j, k) = C(i, j, k)·conj(C(i, j+1, k))`.
pub fn conjugate_multiply(c: &CorrectedCsi) -> Result<CalibratedCsi> {
    if c.n_rx < 2 {
        return Err(Error::invalid("conjugate multiplication needs at least two RX antennas"));
    }
    let idx = |i: usize, j: usize, k: usize| (i * c.n_rx + j) * c.n_s + k;
    let mut data = Vec::with_capacity(c.n_tx * (c.n_rx - 1) * c.n_s);
    for i in 0..c.n_tx {
        for j in 0..c.n_rx - 1 {
            for k in 0..c.n_s {
                let (a, b) = (idx(i, j, k), idx(i, j + 1, k));
                data.push(Complex64::from_polar(c.magnitude[a] * c.magnitude[b], c.phase[a] - c.phase[b]));
            }
        }
    }
    Ok(CalibratedCsi { n_tx: c.n_tx, n_pairs: c.n_rx - 1, n_s: c.n_s, data })
}

/// Rows in `(i, j, k)` order; columns real, imaginary, phase in
/// `(−π, π]`, magnitude.
pub fn complex_to_real(cal: &CalibratedCsi) -> Tensor {
    let mut t = Tensor::zeros(cal.data.len(), 4);
    for (r, c) in cal.data.iter().enumerate() {
        let mut phase = c.arg();
        if phase <= -PI {
            phase = PI;
        }
        t.row_slice_mut(r).copy_from_slice(&[c.re, c.im, phase, c.norm()]);
    }
    t
}

/// The whole calibration chain for one raw frame.
pub fn calibrate(raw: &RawCsiFrame, f_delta: f64) -> Result<(CalibratedCsi, CalibrationFit)> {
    let psi = unwrap_phase(raw)?;
    let fit = fit_frame(raw, &psi, f_delta)?;
    let cal = conjugate_multiply(&remove_linear_phase(raw, &psi, &fit, f_delta))?;
    Ok((cal, fit))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaeConfig {
    /// Rows of the real CSI matrix, `n_tx·(n_rx − 1)·n_s`.
    pub input_rows: usize,
    pub conv_channels: [usize; 3],
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub mlp_hidden: [usize; 2],
    pub embedding_dim: usize,
}

impl CaeConfig {
    pub fn new(input_rows: usize, embedding_dim: usize) -> Self {
        CaeConfig { input_rows, conv_channels: [8, 16, 16], kernel: 4, stride: 2, pad: 1, mlp_hidden: [128, 64], embedding_dim }
    }

    fn conv_lengths(&self) -> Result<[usize; 4]> {
        let mut lens = [self.input_rows; 4];
        for l in 1..4 {
            let inner = lens[l - 1] + 2 * self.pad;
            if inner < self.kernel {
                return Err(Error::invalid("CAE input too short for its convolutions"));
            }
            lens[l] = (inner - self.kernel) / self.stride + 1;
            let back = (lens[l] - 1) * self.stride + self.kernel - 2 * self.pad;
            if back != lens[l - 1] {
                return Err(Error::invalid(format!("CAE length {} does not survive a stride-{} round trip", lens[l - 1], self.stride)));
            }
        }
        Ok(lens)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ConvLayer {
    weight: ParamId,
    bias: ParamId,
}

/// Convolutional autoencoder over the `4 × rows` channel view of a real
/// CSI matrix. Columns are standardised with statistics from the
/// training frames.
#[derive(Clone, Debug)]
pub struct Cae {
    pub config: CaeConfig,
    pub store: ParamStore,
    enc_conv: Vec<ConvLayer>,
    enc_mlp: Mlp,
    dec_mlp: Mlp,
    dec_conv: Vec<ConvLayer>,
    bottleneck: (usize, usize),
    pub col_mean: [f64; 4],
    pub col_std: [f64; 4],
}

impl Cae {
    pub fn new(config: CaeConfig, seed: u64) -> Result<Cae> {
        let lens = config.conv_lengths()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let k = config.kernel;
        let chans = [4, config.conv_channels[0], config.conv_channels[1], config.conv_channels[2]];
        let mut enc_conv = Vec::new();
        for l in 0..3 {
            let bound = 1.0 / ((chans[l] * k) as f64).sqrt();
            enc_conv.push(ConvLayer {
                weight: store.add_uniform("cae.enc", &format!("conv{l}.weight"), chans[l + 1], chans[l] * k, bound, &mut rng),
                bias: store.add_uniform("cae.enc", &format!("conv{l}.bias"), 1, chans[l + 1], bound, &mut rng),
            });
        }
        let flat = chans[3] * lens[3];
        let [h1, h2] = config.mlp_hidden;
        let enc_mlp = Mlp::new(&mut store, "cae.enc", "mlp", &[flat, h1, h2, config.embedding_dim], &mut rng);
        let dec_mlp = Mlp::new(&mut store, "cae.dec", "mlp", &[config.embedding_dim, h2, h1, flat], &mut rng);
        let mut dec_conv = Vec::new();
        for l in (0..3).rev() {
            let bound = 1.0 / ((chans[l] * k) as f64).sqrt();
            dec_conv.push(ConvLayer {
                weight: store.add_uniform("cae.dec", &format!("deconv{l}.weight"), chans[l + 1], chans[l] * k, bound, &mut rng),
                bias: store.add_uniform("cae.dec", &format!("deconv{l}.bias"), 1, chans[l], bound, &mut rng),
            });
        }
        Ok(Cae { config, store, enc_conv, enc_mlp, dec_mlp, dec_conv, bottleneck: (chans[3], lens[3]), col_mean: [0.0; 4], col_std: [1.0; 4] })
    }

    /// Standardised `4 × rows` channel view of a real CSI matrix.
    pub fn prepare(&self, real: &Tensor) -> Result<Tensor> {
        if real.shape() != (self.config.input_rows, 4) {
            return Err(Error::invalid(format!("CAE expects a {}x4 matrix, got {}x{}", self.config.input_rows, real.rows(), real.cols())));
        }
        let mut x = real.transpose();
        for c in 0..4 {
            let (m, s) = (self.col_mean[c], self.col_std[c]);
            x.row_slice_mut(c).iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        Ok(x)
    }

    fn fit_standardisation(&mut self, frames: &[Tensor]) {
        let n = (frames.len() * self.config.input_rows) as f64;
        for c in 0..4 {
            let mean = frames.iter().flat_map(|f| (0..f.rows()).map(move |r| f.get(r, c))).sum::<f64>() / n;
            let var = frames.iter().flat_map(|f| (0..f.rows()).map(move |r| (f.get(r, c) - mean).powi(2))).sum::<f64>() / n;
            self.col_mean[c] = mean;
            self.col_std[c] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
    }

    fn encode_graph(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let (k, s, p) = (self.config.kernel, self.config.stride, self.config.pad);
        let mut h = x;
        for layer in &self.enc_conv {
            let (w, b) = (g.param(layer.weight), g.param(layer.bias));
            h = g.conv1d(h, w, b, k, s, p);
            h = g.tanh(h);
        }
        let flat = g.reshape(h, 1, self.bottleneck.0 * self.bottleneck.1);
        self.enc_mlp.forward(g, flat)
    }

    fn decode_graph(&self, g: &mut Graph<'_>, z: Var) -> Var {
        let (k, s, p) = (self.config.kernel, self.config.stride, self.config.pad);
        let flat = self.dec_mlp.forward(g, z);
        let mut h = g.reshape(flat, self.bottleneck.0, self.bottleneck.1);
        for layer in &self.dec_conv {
            h = g.tanh(h);
            let (w, b) = (g.param(layer.weight), g.param(layer.bias));
            h = g.conv_transpose1d(h, w, b, k, s, p);
        }
        h
    }

    /// Embedding of a real CSI matrix; time plays no part.
    pub fn encode(&self, real: &Tensor) -> Result<Vec<f64>> {
        let x = self.prepare(real)?;
        let mut g = Graph::new(&self.store);
        let xv = g.constant(x);
        let z = self.encode_graph(&mut g, xv);
        Ok(g.value(z).data().to_vec())
    }

    /// Reconstruction in the standardised channel view.
    pub fn decode(&self, z: &[f64]) -> Result<Tensor> {
        if z.len() != self.config.embedding_dim {
            return Err(Error::invalid("embedding length does not match the CAE"));
        }
        let mut g = Graph::new(&self.store);
        let zv = g.constant(Tensor::row(z));
        let out = self.decode_graph(&mut g, zv);
        Ok(g.value(out).clone())
    }

    /// Map a standardised channel view back to a real CSI matrix.
    pub fn unprepare(&self, x: &Tensor) -> Tensor {
        let mut x = x.clone();
        for c in 0..4 {
            let (m, s) = (self.col_mean[c], self.col_std[c]);
            x.row_slice_mut(c).iter_mut().for_each(|v| *v = *v * s + m);
        }
        x.transpose()
    }

    /// Mean squared reconstruction error of one prepared frame, and its
    /// parameter gradient when `grads` is given.
    fn loss(&self, x: &Tensor, grads: Option<&mut ParamGrads>) -> f64 {
        let mut g = Graph::new(&self.store);
        let xv = g.constant(x.clone());
        let z = self.encode_graph(&mut g, xv);
        let y = self.decode_graph(&mut g, z);
        let d = g.sub(y, xv);
        let sq = g.square(d);
        let s = g.sum(sq);
        let loss = g.scale(s, 1.0 / x.len() as f64);
        if let Some(acc) = grads {
            g.backward_into(loss, acc);
        }
        g.scalar(loss)
    }

    pub fn mse(&self, prepared: &[Tensor]) -> f64 {
        if prepared.is_empty() {
            return 0.0;
        }
        prepared.par_iter().map(|x| self.loss(x, None)).collect::<Vec<_>>().iter().sum::<f64>() / prepared.len() as f64
    }

    pub fn save(&self, dir: &Path, stem: &str, meta: serde_json::Value) -> Result<()> {
        let meta = serde_json::json!({
            "config": self.config,
            "col_mean": self.col_mean,
            "col_std": self.col_std,
            "embedding_dim": self.config.embedding_dim,
            "extra": meta,
        });
        checkpoint::save(dir, stem, &self.store, &checkpoint::config_hash(&self.config)?, meta)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Cae> {
        let m = checkpoint::read_manifest(dir, stem)?;
        let config: CaeConfig = serde_json::from_value(m.meta["config"].clone())?;
        let mut cae = Cae::new(config, 0)?;
        checkpoint::load(dir, stem, &mut cae.store, &checkpoint::config_hash(&cae.config)?)?;
        cae.col_mean = serde_json::from_value(m.meta["col_mean"].clone())?;
        cae.col_std = serde_json::from_value(m.meta["col_std"].clone())?;
        Ok(cae)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    /// Share of the training frames held out to measure reconstruction.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { epochs: 40, batch_size: 8, max_lr: 3e-3, holdout: 0.2, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub initial_holdout_mse: f64,
    pub final_holdout_mse: f64,
    pub train_mse: Vec<f64>,
}

/// Train the CAE on real CSI matrices from the training split.
pub fn pretrain_cae(cae: &mut Cae, frames: &[Tensor], cfg: &PretrainConfig) -> Result<PretrainReport> {
    if frames.is_empty() || cfg.batch_size == 0 {
        return Err(Error::invalid("CAE pretraining needs frames and a positive batch size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = if frames.len() > 1 { ((frames.len() as f64 * cfg.holdout).round() as usize).min(frames.len() - 1) } else { 0 };
    let (hold_idx, train_idx) = order.split_at(n_hold);
    let train_raw: Vec<Tensor> = train_idx.iter().map(|&i| frames[i].clone()).collect();
    cae.fit_standardisation(&train_raw);
    let train: Vec<Tensor> = train_raw.iter().map(|f| cae.prepare(f)).collect::<Result<_>>()?;
    let hold: Vec<Tensor> = hold_idx.iter().map(|&i| cae.prepare(&frames[i])).collect::<Result<_>>()?;
    let eval_set = if hold.is_empty() { &train } else { &hold };
    let initial = cae.mse(eval_set);
    let batches = train.len().div_ceil(cfg.batch_size);
    let schedule = OneCycle::new(cfg.max_lr, (cfg.epochs * batches).max(1));
    let mut opt = Adamax::new(&cae.store);
    let mut idx: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in idx.chunks(cfg.batch_size) {
            let parts: Vec<(f64, ParamGrads)> = batch
                .par_iter()
                .map(|&i| {
                    let mut acc = cae.store.zeros_like();
                    let l = cae.loss(&train[i], Some(&mut acc));
                    (l, acc)
                })
                .collect();
            let mut grads = cae.store.zeros_like();
            for (l, g) in &parts {
                total += l;
                grads.add_assign(g);
            }
            grads.scale(1.0 / batch.len() as f64);
            if !total.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch, reason: "non-finite CAE reconstruction loss".to_string() });
            }
            opt.step(&mut cae.store, &grads, schedule.lr(step));
            step += 1;
        }
        curve.push(total / train.len() as f64);
    }
    Ok(PretrainReport { initial_holdout_mse: initial, final_holdout_mse: cae.mse(eval_set), train_mse: curve })
}

/// Raw frames to embeddings with a frozen CAE, keeping timestamps.
pub fn embed_frames(cae: &Cae, raw: &[RawCsiFrame], f_delta: f64) -> Result<Vec<CsiEmbedding>> {
    raw.par_iter()
        .map(|f| {
            let (cal, _) = calibrate(f, f_delta)?;
            Ok(CsiEmbedding { t: f.t, values: cae.encode(&complex_to_real(&cal))? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(phases: &[f64], n_rx: usize) -> RawCsiFrame {
        let n_s = phases.len();
        let mut f = RawCsiFrame::zeros(0.0, 1, n_rx, n_s);
        for j in 0..n_rx {
            for (k, &p) in phases.iter().enumerate() {
                let i = f.idx(0, j, k);
                f.data[i] = Complex64::from_polar(1.0 + j as f64, p + 0.3 * j as f64);
            }
        }
        f
    }

    #[test]
    fn unwrap_constant_and_ramp() {
        let f = frame(&[0.7; 8], 1);
        assert_eq!(unwrap_phase(&f).unwrap(), vec![0.7; 8]);
        let ramp: Vec<f64> = (0..40).map(|k| 0.5 * k as f64).collect();
        let wrapped: Vec<f64> = ramp.iter().map(|p| Complex64::from_polar(1.0, *p).arg()).collect();
        let u = unwrap_phase(&frame(&wrapped, 1)).unwrap();
        assert!(u.windows(2).all(|w| w[1] > w[0] && w[1] - w[0] <= PI));
        for (a, b) in u.iter().zip(&ramp) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_magnitude_reports_index() {
        let mut f = frame(&[0.0; 4], 2);
        let i = f.idx(0, 1, 2);
        f.data[i] = Complex64::new(0.0, 0.0);
        assert!(matches!(unwrap_phase(&f), Err(Error::ZeroMagnitude { tx: 0, rx: 1, subcarrier: 2 })));
    }

    #[test]
    fn sto_fit_recovers_slope_and_ignores_offsets() {
        let fd = 312.5e3;
        let tau = 3.7e-8;
        let row: Vec<f64> = (0..64).map(|k| 2.0 * PI * fd * k as f64 * tau - 0.4).collect();
        let shifted: Vec<f64> = row.iter().map(|p| p + 5.0).collect();
        let (t, b) = fit_sto_line(&[&row], fd).unwrap();
        assert!((t - tau).abs() < 1e-6 * tau);
        assert!((b - 0.4).abs() < 1e-9);
        let (t2, b2) = fit_sto_line(&[&shifted], fd).unwrap();
        assert!((t2 - t).abs() < 1e-18);
        assert!((b2 - (b - 5.0)).abs() < 1e-9);
        let (t0, _) = fit_sto_line(&[&[1.0; 10]], fd).unwrap();
        assert_eq!(t0, 0.0);
        assert!(fit_sto_line(&[&[1.0]], fd).is_err());
    }

    #[test]
    fn removal_flattens_pure_sto_and_keeps_magnitudes() {
        let fd = 312.5e3;
        let phases: Vec<f64> = (0..30).map(|k| 2.0 * PI * fd * k as f64 * 2e-8).collect();
        let f = frame(&phases, 2);
        let psi = unwrap_phase(&f).unwrap();
        let fit = fit_frame(&f, &psi, fd).unwrap();
        let c = remove_linear_phase(&f, &psi, &fit, fd);
        let rows: Vec<&[f64]> = (0..2).map(|j| &c.phase[j * 30..(j + 1) * 30]).collect();
        let (residual, _) = fit_sto_line(&rows, fd).unwrap();
        assert!(residual.abs() < 1e-20);
        let mags: Vec<f64> = f.data.iter().map(|c| c.norm()).collect();
        assert_eq!(c.magnitude, mags);
        let zero = CalibrationFit { tau_hat: vec![0.0], beta_hat: vec![0.0] };
        assert_eq!(remove_linear_phase(&f, &psi, &zero, fd).phase, psi);
    }

    #[test]
    fn conjugate_multiply_examples() {
        let c = CorrectedCsi { n_tx: 1, n_rx: 2, n_s: 1, magnitude: vec![1.0, 1.0], phase: vec![0.3, 0.1] };
        let out = conjugate_multiply(&c).unwrap();
        assert!((out.data[0].arg() - 0.2).abs() < 1e-15);
        assert!((out.data[0].norm() - 1.0).abs() < 1e-15);
        let single = CorrectedCsi { n_rx: 1, magnitude: vec![1.0], phase: vec![0.0], ..c };
        assert!(conjugate_multiply(&single).is_err());
    }

    #[test]
    fn complex_to_real_rows() {
        let cal = CalibratedCsi { n_tx: 1, n_pairs: 1, n_s: 3, data: vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(-1.0, -0.0)] };
        let t = complex_to_real(&cal);
        assert_eq!(t.row_slice(0), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(t.row_slice(1), &[0.0, 1.0, PI / 2.0, 1.0]);
        assert_eq!(t.get(2, 2), PI);
        let big = CalibratedCsi { n_tx: 4, n_pairs: 1, n_s: 234, data: vec![Complex64::new(1.0, 1.0); 936] };
        assert_eq!(complex_to_real(&big).rows(), 936);
    }

    #[test]
    fn cae_shapes_and_determinism() {
        let cae = Cae::new(CaeConfig::new(936, 36), 1).unwrap();
        let x = Tensor::new(936, 4, (0..936 * 4).map(|i| (i as f64 * 0.01).sin()).collect());
        let z = cae.encode(&x).unwrap();
        assert_eq!(z.len(), 36);
        assert_eq!(z, cae.encode(&x).unwrap());
        assert_eq!(cae.decode(&z).unwrap().shape(), (4, 936));
        assert!(cae.encode(&Tensor::zeros(935, 4)).is_err());
        assert!(Cae::new(CaeConfig::new(30, 4), 1).is_err());
    }
}
