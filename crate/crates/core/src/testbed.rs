//! Synthetic multi-band testbed: a robot driving laps of a rectangle,
//! observed by a 60 GHz beam sweep (beam SNR) and a 5 GHz CSI stream.

use std::collections::BTreeMap;
use std::f64::consts::{LN_10, PI};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    make_splits, write_split, BeamSnrFrame, Coordinate, CsiEmbedding, DatasetConfig, MeasurementWindow, RawCsiFrame, Region, SplitFile,
    SplitSpec, Splits, StreamSet,
};
use crate::error::{Error, Result};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

// Sub-stream tags for per-chunk random number generators.
const RNG_LAP: u64 = 1;
const RNG_CSI_TIMES: u64 = 2;
const RNG_BEAM_TIMES: u64 = 3;
const RNG_BEAM_NOISE: u64 = 4;
const RNG_CSI_NOISE: u64 = 5;
const RNG_RAW: u64 = 6;
const RNG_FEATURES: u64 = 7;

/// Independent generator for `(seed, tag, index)`; chunks can be rendered
/// in any order and give the same stream.
pub fn stream_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 48) ^ index);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Metres per second along the perimeter.
    pub speed: f64,
    /// Std of the per-lap inward offset, metres.
    pub lap_jitter: f64,
    pub ap: [f64; 2],
}

impl Default for TrackSpec {
    fn default() -> Self {
        TrackSpec { x_min: 0.0, x_max: 6.0, y_min: 0.0, y_max: 4.0, speed: 0.25, lap_jitter: 0.05, ap: [3.0, -1.0] }
    }
}

impl TrackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_max > self.x_min && self.y_max > self.y_min) {
            return Err(Error::invalid("track rectangle is degenerate"));
        }
        if !(self.speed > 0.0) || !(self.lap_jitter >= 0.0) {
            return Err(Error::invalid("track speed must be positive and jitter non-negative"));
        }
        Ok(())
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * ((self.x_max - self.x_min) + (self.y_max - self.y_min))
    }

    pub fn lap_time(&self) -> f64 {
        self.perimeter() / self.speed
    }

    /// Point at fraction `u ∈ [0, 1)` along the counter-clockwise perimeter
    /// (starting at the lower-left corner) of the rectangle shrunk by `inset`.
    pub fn perimeter_point(&self, u: f64, inset: f64) -> [f64; 2] {
        let (x0, x1, y0, y1) = (self.x_min + inset, self.x_max - inset, self.y_min + inset, self.y_max - inset);
        let (w, h) = (x1 - x0, y1 - y0);
        let mut d = u.rem_euclid(1.0) * 2.0 * (w + h);
        if d < w {
            return [x0 + d, y0];
        }
        d -= w;
        if d < h {
            return [x1, y0 + d];
        }
        d -= h;
        if d < w {
            return [x1 - d, y1];
        }
        d -= w;
        [x0, y1 - d]
    }

    /// Whether `p` lies on the rectangle's boundary.
    pub fn on_perimeter(&self, p: [f64; 2], tol: f64) -> bool {
        let inside = p[0] >= self.x_min - tol && p[0] <= self.x_max + tol && p[1] >= self.y_min - tol && p[1] <= self.y_max + tol;
        let edge = (p[0] - self.x_min).abs() <= tol
            || (p[0] - self.x_max).abs() <= tol
            || (p[1] - self.y_min).abs() <= tol
            || (p[1] - self.y_max).abs() <= tol;
        inside && edge
    }

    /// Eight regions along the track: the four corners and the four edge
    /// midpoints, each a box of half-width `half` around its anchor.
    pub fn regions(&self, half: f64) -> Vec<Region> {
        (0..8)
            .map(|r| {
                let c = self.region_anchor(r);
                Region { x_min: c[0] - half, x_max: c[0] + half, y_min: c[1] - half, y_max: c[1] + half }
            })
            .collect()
    }

    fn region_anchor(&self, r: usize) -> [f64; 2] {
        let xm = 0.5 * (self.x_min + self.x_max);
        let ym = 0.5 * (self.y_min + self.y_max);
        [
            [self.x_min, self.y_min],
            [xm, self.y_min],
            [self.x_max, self.y_min],
            [self.x_max, ym],
            [self.x_max, self.y_max],
            [xm, self.y_max],
            [self.x_min, self.y_max],
            [self.x_min, ym],
        ][r]
    }

    /// The box around the upper-right corner used for the unseen-location split.
    pub fn upper_right_region(&self, size: f64) -> Region {
        Region { x_min: self.x_max - size, x_max: self.x_max + 1.0, y_min: self.y_max - size, y_max: self.y_max + 1.0 }
    }
}

/// Ground-truth position as a continuous function of time.
#[derive(Clone, Debug)]
pub struct Trajectory {
    spec: TrackSpec,
    insets: Vec<f64>,
}

impl Trajectory {
    pub fn new(spec: &TrackSpec, duration: f64, seed: u64) -> Result<Trajectory> {
        spec.validate()?;
        if !(duration > 0.0) {
            return Err(Error::invalid("duration must be positive"));
        }
        let laps = (duration / spec.lap_time()).ceil() as usize + 2;
        let normal = Normal::new(0.0, spec.lap_jitter.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
        let limit = 0.25 * (spec.x_max - spec.x_min).min(spec.y_max - spec.y_min);
        let insets = (0..laps)
            .map(|l| if spec.lap_jitter == 0.0 { 0.0 } else { normal.sample(&mut stream_rng(seed, RNG_LAP, l as u64)).clamp(-limit, limit) })
            .collect();
        Ok(Trajectory { spec: spec.clone(), insets })
    }

    pub fn position(&self, t: f64) -> [f64; 2] {
        let laps = (self.spec.speed * t / self.spec.perimeter()).max(0.0);
        let l = (laps.floor() as usize).min(self.insets.len() - 2);
        let frac = laps - l as f64;
        let inset = self.insets[l] + (self.insets[l + 1] - self.insets[l]) * frac;
        self.spec.perimeter_point(frac, inset)
    }
}

/// Labels at `label_rate` over `[0, duration)`.
pub fn gen_trajectory(spec: &TrackSpec, duration: f64, label_rate: f64, seed: u64) -> Result<Vec<Coordinate>> {
    let traj = Trajectory::new(spec, duration, seed)?;
    Ok(label_times(duration, label_rate).into_iter().map(|t| Coordinate { t, xy: traj.position(t) }).collect())
}

fn label_times(duration: f64, rate: f64) -> Vec<f64> {
    let n = (duration * rate - 1e-9).ceil().max(0.0) as usize;
    (0..n).map(|i| i as f64 / rate).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingModel {
    pub csi_rate: f64,
    /// Each CSI time is displaced from its grid slot by up to
    /// `±csi_jitter/2` periods; must be below 1.
    pub csi_jitter: f64,
    /// Gamma shape of the beam-training inter-arrival times.
    pub beam_shape: f64,
    /// Mean beam inter-arrival time in seconds.
    pub beam_mean: f64,
    pub label_rate: f64,
    /// Length of the independently seeded generation chunks, seconds.
    pub chunk: f64,
}

impl Default for SamplingModel {
    fn default() -> Self {
        SamplingModel { csi_rate: 5.0, csi_jitter: 0.5, beam_shape: 4.0, beam_mean: 1.0, label_rate: 10.0, chunk: 5.0 }
    }
}

impl SamplingModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.csi_rate > 0.0 && self.beam_mean > 0.0 && self.beam_shape > 0.0 && self.label_rate > 0.0 && self.chunk > 0.0) {
            return Err(Error::invalid("sampling rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.csi_jitter) {
            return Err(Error::invalid("csi_jitter must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleTimes {
    pub csi: Vec<f64>,
    pub beam: Vec<f64>,
}

pub fn sample_times(model: &SamplingModel, duration: f64, seed: u64) -> Result<SampleTimes> {
    model.validate()?;
    if !(duration > 0.0) {
        return Err(Error::invalid("duration must be positive"));
    }
    let chunks = (duration / model.chunk).ceil() as usize;
    let period = 1.0 / model.csi_rate;
    let gamma = Gamma::new(model.beam_shape, model.beam_mean / model.beam_shape).map_err(|e| Error::invalid(e.to_string()))?;
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let (lo, hi) = (c as f64 * model.chunk, ((c + 1) as f64 * model.chunk).min(duration));
            let mut rng = stream_rng(seed, RNG_CSI_TIMES, c as u64);
            let k0 = (lo / period - 1e-9).ceil() as i64;
            let mut csi = Vec::new();
            let mut k = k0;
            while (k as f64) * period < hi - 1e-12 {
                let u: f64 = rng.random();
                let t = (k as f64 + model.csi_jitter * (u - 0.5)) * period;
                if t >= 0.0 && t < duration {
                    csi.push(t);
                }
                k += 1;
            }
            let mut rng = stream_rng(seed, RNG_BEAM_TIMES, c as u64);
            let mut beam = Vec::new();
            let u: f64 = rng.random();
            let mut t = lo + u * gamma.sample(&mut rng);
            while t < hi {
                beam.push(t);
                t += gamma.sample(&mut rng).max(1e-6);
            }
            (csi, beam)
        })
        .collect();
    let mut out = SampleTimes::default();
    for (c, b) in parts {
        out.csi.extend(c);
        out.beam.extend(b);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    /// Azimuth of each beam's main lobe, radians, measured at the AP.
    pub beam_azimuths: Vec<f64>,
    /// Lobe width in radians; the von Mises concentration is `1/width²`.
    pub beam_width: f64,
    pub tx_power_db: f64,
    pub path_loss_exponent: f64,
    /// SNRs approach this level far outside a lobe.
    pub noise_floor_db: f64,
    pub beam_noise_std: f64,
    pub csi_noise_std: f64,
    pub csi_amplitude: f64,
    /// Random Fourier feature frequencies (rad/m) and phases.
    pub csi_freqs: Vec<[f64; 2]>,
    pub csi_phases: Vec<f64>,
}

impl SensorModel {
    /// Evenly spaced beams over the half-plane in front of the AP and a
    /// random Fourier feature map with length scale `length_scale` metres.
    pub fn generate(m_b: usize, m_c: usize, length_scale: f64, feature_seed: u64) -> SensorModel {
        let beam_azimuths = (0..m_b).map(|m| PI * (m as f64 + 0.5) / m_b as f64).collect();
        let mut rng = stream_rng(feature_seed, RNG_FEATURES, 0);
        let normal = Normal::new(0.0, 1.0 / length_scale).expect("positive length scale");
        let cap = 3.0 / length_scale;
        let csi_freqs = (0..m_c)
            .map(|_| {
                let w = [normal.sample(&mut rng), normal.sample(&mut rng)];
                let n = w[0].hypot(w[1]);
                if n > cap {
                    [w[0] * cap / n, w[1] * cap / n]
                } else {
                    w
                }
            })
            .collect();
        let csi_phases = (0..m_c).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
        SensorModel {
            beam_azimuths,
            beam_width: 0.14,
            tx_power_db: 40.0,
            path_loss_exponent: 2.0,
            noise_floor_db: 0.0,
            beam_noise_std: 2.0,
            csi_noise_std: 0.15,
            csi_amplitude: 1.0,
            csi_freqs,
            csi_phases,
        }
    }

    pub fn validate(&self, cfg: &DatasetConfig) -> Result<()> {
        if self.beam_azimuths.len() != cfg.m_b || self.csi_freqs.len() != cfg.m_c || self.csi_phases.len() != cfg.m_c {
            return Err(Error::invalid("sensor model dimensions do not match the dataset config"));
        }
        if !(self.beam_noise_std >= 0.0 && self.csi_noise_std >= 0.0 && self.beam_width > 0.0) {
            return Err(Error::invalid("noise std must be non-negative and beam width positive"));
        }
        Ok(())
    }

    /// Lobe gain in dB relative to the peak.
    pub fn beam_gain_db(&self, azimuth: f64, m: usize) -> f64 {
        let kappa = 1.0 / (self.beam_width * self.beam_width);
        10.0 / LN_10 * kappa * ((azimuth - self.beam_azimuths[m]).cos() - 1.0)
    }

    /// Noise-free beam SNRs in dB at `pos`.
    pub fn beam_snr_clean(&self, pos: [f64; 2], ap: [f64; 2]) -> Result<Vec<f64>> {
        let (dx, dy) = (pos[0] - ap[0], pos[1] - ap[1]);
        let d = dx.hypot(dy);
        if d < 1e-9 {
            return Err(Error::invalid("position coincides with the access point"));
        }
        let az = dy.atan2(dx);
        let pl = path_loss_db(d, self.path_loss_exponent);
        let floor = 10f64.powf(self.noise_floor_db / 10.0);
        Ok((0..self.beam_azimuths.len())
            .map(|m| {
                let s = self.tx_power_db - pl + self.beam_gain_db(az, m);
                10.0 * (10f64.powf(s / 10.0) + floor).log10()
            })
            .collect())
    }

    pub fn csi_embedding_clean(&self, pos: [f64; 2]) -> Vec<f64> {
        self.csi_freqs
            .iter()
            .zip(&self.csi_phases)
            .map(|(w, p)| self.csi_amplitude * (w[0] * pos[0] + w[1] * pos[1] + p).cos())
            .collect()
    }

    /// Lipschitz constant of the noise-free embedding in the Euclidean
    /// norm: `a·sqrt(Σ_m |ω_m|²)`.
    pub fn csi_lipschitz(&self) -> f64 {
        self.csi_amplitude * self.csi_freqs.iter().map(|w| w[0] * w[0] + w[1] * w[1]).sum::<f64>().sqrt()
    }
}

/// Free-space style loss `10·n·log10(d)` in dB, with `d` in metres.
pub fn path_loss_db(d: f64, exponent: f64) -> f64 {
    10.0 * exponent * d.log10()
}

pub fn render_beam_snr<R: Rng>(t: f64, pos: [f64; 2], ap: [f64; 2], model: &SensorModel, rng: &mut R) -> Result<BeamSnrFrame> {
    let mut values = model.beam_snr_clean(pos, ap)?;
    if model.beam_noise_std > 0.0 {
        let n = Normal::new(0.0, model.beam_noise_std).expect("valid std");
        values.iter_mut().for_each(|v| *v += n.sample(rng));
    }
    Ok(BeamSnrFrame { t, values })
}

pub fn render_csi_embedding<R: Rng>(t: f64, pos: [f64; 2], model: &SensorModel, rng: &mut R) -> CsiEmbedding {
    let mut values = model.csi_embedding_clean(pos);
    if model.csi_noise_std > 0.0 {
        let n = Normal::new(0.0, model.csi_noise_std).expect("valid std");
        values.iter_mut().for_each(|v| *v += n.sample(rng));
    }
    CsiEmbedding { t, values }
}

/// Three-path channel used to synthesise raw CSI: line of sight plus
/// mirror images of the AP in two walls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawCsiModel {
    pub carrier_hz: f64,
    /// Wall `x = wall_x` and wall `y = wall_y`.
    pub wall_x: f64,
    pub wall_y: f64,
    pub reflection_gain: f64,
    /// Injected STO is uniform in `±max_sto` seconds per packet.
    pub max_sto: f64,
}

impl Default for RawCsiModel {
    fn default() -> Self {
        RawCsiModel { carrier_hz: 5.18e9, wall_x: -1.5, wall_y: 5.5, reflection_gain: 0.5, max_sto: 50e-9 }
    }
}

impl RawCsiModel {
    /// CFR at `pos` with a given STO (seconds) and per-packet phase (radians).
    pub fn render(&self, cfg: &DatasetConfig, t: f64, pos: [f64; 2], ap: [f64; 2], sto: f64, packet_phase: f64) -> RawCsiFrame {
        let sources = [
            (ap, 1.0),
            ([2.0 * self.wall_x - ap[0], ap[1]], self.reflection_gain),
            ([ap[0], 2.0 * self.wall_y - ap[1]], self.reflection_gain),
        ];
        let mut f = RawCsiFrame::zeros(t, cfg.n_tx, cfg.n_rx, cfg.n_s);
        let centre = 0.5 * (cfg.n_s as f64 - 1.0);
        for (src, gain) in sources {
            let (dx, dy) = (pos[0] - src[0], pos[1] - src[1]);
            let d = dx.hypot(dy).max(1e-3);
            let delay = d / SPEED_OF_LIGHT;
            let theta = dy.atan2(dx);
            let amp = gain / d;
            for i in 0..cfg.n_tx {
                for j in 0..cfg.n_rx {
                    let spatial = -PI * (j as f64 * theta.sin() + i as f64 * theta.cos());
                    for k in 0..cfg.n_s {
                        let fk = self.carrier_hz + (k as f64 - centre) * cfg.f_delta;
                        let idx = f.idx(i, j, k);
                        f.data[idx] += Complex64::from_polar(amp, -2.0 * PI * fk * delay + spatial);
                    }
                }
            }
        }
        for i in 0..cfg.n_tx {
            for j in 0..cfg.n_rx {
                for k in 0..cfg.n_s {
                    let idx = f.idx(i, j, k);
                    f.data[idx] *= Complex64::from_polar(1.0, 2.0 * PI * cfg.f_delta * k as f64 * sto + packet_phase);
                }
            }
        }
        f
    }
}

/// Everything needed to regenerate a dataset; written as `scenario.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub dataset: DatasetConfig,
    pub track: TrackSpec,
    pub sensors: SensorModel,
    pub sampling: SamplingModel,
    pub raw_csi: RawCsiModel,
}

impl Scenario {
    pub fn standard(dataset: DatasetConfig, feature_seed: u64) -> Scenario {
        let sensors = SensorModel::generate(dataset.m_b, dataset.m_c, 1.5, feature_seed);
        let sampling = SamplingModel { label_rate: dataset.label_rate, ..Default::default() };
        Scenario { dataset, track: TrackSpec::default(), sensors, sampling, raw_csi: RawCsiModel::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.track.validate()?;
        self.sensors.validate(&self.dataset)?;
        self.sampling.validate()
    }

    fn chunk_of(&self, t: f64) -> u64 {
        (t / self.sampling.chunk).floor().max(0.0) as u64
    }

    /// All three streams over `[0, duration)`.
    pub fn simulate(&self, duration: f64, seed: u64) -> Result<StreamSet> {
        self.validate()?;
        let traj = Trajectory::new(&self.track, duration, seed)?;
        let times = sample_times(&self.sampling, duration, seed)?;
        let labels = label_times(duration, self.sampling.label_rate).into_iter().map(|t| Coordinate { t, xy: traj.position(t) }).collect();
        let beam = per_chunk(&times.beam, |t| self.chunk_of(t), |c| stream_rng(seed, RNG_BEAM_NOISE, c), |t, rng| {
            render_beam_snr(t, traj.position(t), self.track.ap, &self.sensors, rng)
        })?;
        let csi = per_chunk(&times.csi, |t| self.chunk_of(t), |c| stream_rng(seed, RNG_CSI_NOISE, c), |t, rng| {
            Ok(render_csi_embedding(t, traj.position(t), &self.sensors, rng))
        })?;
        Ok(StreamSet { origin: 0.0, duration, beam, csi, labels })
    }

    /// Raw CFR frames at the CSI sample times, with random STO and
    /// per-packet phase.
    pub fn simulate_raw_csi(&self, duration: f64, seed: u64) -> Result<Vec<RawCsiFrame>> {
        self.validate()?;
        let traj = Trajectory::new(&self.track, duration, seed)?;
        let times = sample_times(&self.sampling, duration, seed)?;
        per_chunk(&times.csi, |t| self.chunk_of(t), |c| stream_rng(seed, RNG_RAW, c), |t, rng| {
            let sto = (rng.random::<f64>() * 2.0 - 1.0) * self.raw_csi.max_sto;
            let phase = rng.random::<f64>() * 2.0 * PI - PI;
            Ok(self.raw_csi.render(&self.dataset, t, traj.position(t), self.track.ap, sto, phase))
        })
    }
}

/// Render `times` grouped by chunk, each chunk with its own generator,
/// in parallel; output order follows `times`.
fn per_chunk<T, C, G, F>(times: &[f64], chunk: C, rng_for: G, render: F) -> Result<Vec<T>>
where
    T: Send,
    C: Fn(f64) -> u64 + Sync,
    G: Fn(u64) -> ChaCha8Rng + Sync,
    F: Fn(f64, &mut ChaCha8Rng) -> Result<T> + Sync,
{
    let mut groups: Vec<(u64, &[f64])> = Vec::new();
    let mut start = 0;
    for i in 1..=times.len() {
        if i == times.len() || chunk(times[i]) != chunk(times[start]) {
            if i > start {
                groups.push((chunk(times[start]), &times[start..i]));
            }
            start = i;
        }
    }
    let parts: Vec<Result<Vec<T>>> = groups
        .into_par_iter()
        .map(|(c, ts)| {
            let mut rng = rng_for(c);
            ts.iter().map(|&t| render(t, &mut rng)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(times.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Histogram of frames per window for each measurement stream.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub windows: usize,
    pub csi_histogram: BTreeMap<usize, usize>,
    pub beam_histogram: BTreeMap<usize, usize>,
    pub mean_csi: f64,
    pub mean_beam: f64,
    pub mean_labels: f64,
}

pub fn frame_stats(windows: &[MeasurementWindow]) -> FrameStats {
    let mut s = FrameStats { windows: windows.len(), ..Default::default() };
    for w in windows {
        *s.csi_histogram.entry(w.csi.len()).or_default() += 1;
        *s.beam_histogram.entry(w.beam.len()).or_default() += 1;
        s.mean_csi += w.csi.len() as f64;
        s.mean_beam += w.beam.len() as f64;
        s.mean_labels += w.labels.len() as f64;
    }
    if !windows.is_empty() {
        let n = windows.len() as f64;
        s.mean_csi /= n;
        s.mean_beam /= n;
        s.mean_labels /= n;
    }
    s
}

#[derive(Clone, Debug)]
pub struct BuiltDataset {
    pub splits: Splits,
    pub stats: FrameStats,
    pub dropped: usize,
}

/// Simulate, window, split and write `train.jsonl`, `val.jsonl`,
/// `test.jsonl` and `scenario.json` into `out_dir`.
pub fn build_dataset(scenario: &Scenario, duration: f64, seed: u64, split: &SplitSpec, out_dir: &Path) -> Result<BuiltDataset> {
    let frames = scenario.simulate(duration, seed)?;
    let span = scenario.dataset.window_span;
    let built = make_splits(&frames, span, split)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (name, ws) in [("train", &built.splits.train), ("val", &built.splits.val), ("test", &built.splits.test)] {
        let file = SplitFile::from_windows(&scenario.dataset, name, frames.origin, frames.duration, ws)?;
        write_split(&out_dir.join(format!("{name}.jsonl")), &file)?;
    }
    let path = out_dir.join("scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(scenario)?).map_err(|e| Error::io(&path, e))?;
    let all: Vec<MeasurementWindow> =
        built.splits.train.iter().chain(&built.splits.val).chain(&built.splits.test).cloned().collect();
    Ok(BuiltDataset { stats: frame_stats(&all), splits: built.splits, dropped: built.dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> Scenario {
        Scenario::standard(DatasetConfig::default(), 11)
    }

    #[test]
    fn zero_jitter_stays_on_perimeter_and_laps_repeat() {
        let spec = TrackSpec { lap_jitter: 0.0, ..Default::default() };
        let traj = Trajectory::new(&spec, 300.0, 1).unwrap();
        for i in 0..500 {
            let t = i as f64 * 0.37;
            let p = traj.position(t);
            assert!(spec.on_perimeter(p, 1e-9), "{p:?}");
            let q = traj.position(t + spec.lap_time());
            assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
        }
        assert!((spec.lap_time() - 20.0 / 0.25).abs() < 1e-12);
    }

    #[test]
    fn trajectory_is_deterministic_and_at_label_rate() {
        let spec = TrackSpec::default();
        let a = gen_trajectory(&spec, 30.0, 10.0, 5).unwrap();
        let b = gen_trajectory(&spec, 30.0, 10.0, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 300);
        let c = gen_trajectory(&spec, 30.0, 10.0, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_time_statistics() {
        let m = SamplingModel::default();
        let s = sample_times(&m, 2000.0, 3).unwrap();
        assert!(s.csi.windows(2).all(|w| w[1] > w[0]));
        assert!(s.beam.windows(2).all(|w| w[1] > w[0]));
        let per_window = |ts: &[f64]| {
            let mut counts = vec![0usize; 400];
            for &t in ts {
                counts[(t / 5.0) as usize] += 1;
            }
            counts
        };
        let csi = per_window(&s.csi);
        assert!(csi.iter().all(|&c| (20..=30).contains(&c)));
        let beam = per_window(&s.beam);
        let mean = beam.iter().sum::<usize>() as f64 / beam.len() as f64;
        assert!((mean - 5.0).abs() < 0.3, "beam mean {mean}");
        let grid = sample_times(&SamplingModel { csi_jitter: 0.0, ..m }, 3.0, 0).unwrap();
        for (k, t) in grid.csi.iter().enumerate() {
            assert!((t - k as f64 * 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn path_loss_doubling_is_six_db() {
        let d = path_loss_db(4.0, 2.0) - path_loss_db(2.0, 2.0);
        assert!((d - 20.0 * 2f64.log10()).abs() < 1e-12);
        assert!((d - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn aligned_beam_is_strongest() {
        let s = scenario();
        let ap = [0.0, 0.0];
        for m in [3, 17, 30] {
            let az = s.sensors.beam_azimuths[m];
            let snr = s.sensors.beam_snr_clean([3.0 * az.cos(), 3.0 * az.sin()], ap).unwrap();
            let best = snr.iter().cloned().enumerate().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
            assert_eq!(best, m);
        }
        assert!(s.sensors.beam_snr_clean(ap, ap).is_err());
    }

    #[test]
    fn csi_embedding_is_lipschitz() {
        let s = scenario();
        let l = s.sensors.csi_lipschitz();
        let p = [2.0, 1.0];
        let q = [2.01, 1.0];
        let a = s.sensors.csi_embedding_clean(p);
        let b = s.sensors.csi_embedding_clean(q);
        assert_eq!(a.len(), 36);
        let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        assert!(d < l * 0.01, "{d} vs {}", l * 0.01);
        assert_eq!(a, s.sensors.csi_embedding_clean(p));
    }

    #[test]
    fn injected_sto_is_a_phase_slope() {
        let cfg = DatasetConfig { n_tx: 1, n_rx: 1, ..Default::default() };
        let model = RawCsiModel { reflection_gain: 0.0, ..Default::default() };
        let tau = 20e-9;
        let a = model.render(&cfg, 0.0, [2.0, 2.0], [3.0, -1.0], 0.0, 0.0);
        let b = model.render(&cfg, 0.0, [2.0, 2.0], [3.0, -1.0], tau, 0.0);
        for k in 1..cfg.n_s {
            let ratio = |k: usize| (b.get(0, 0, k) / a.get(0, 0, k)).arg();
            let step = (ratio(k) - ratio(k - 1) + PI).rem_euclid(2.0 * PI) - PI;
            assert!((step - 2.0 * PI * cfg.f_delta * tau).abs() < 1e-9);
        }
    }

    #[test]
    fn simulation_is_chunk_deterministic() {
        let s = scenario();
        let a = s.simulate(30.0, 9).unwrap();
        let b = s.simulate(30.0, 9).unwrap();
        assert_eq!(a, b);
        a.check_sorted().unwrap();
        assert_eq!(a.labels.len(), 300);
    }
}
