//! Measurement types, windowing and time normalisation.

mod container;
mod scaler;
mod split;

pub use container::{read_split, write_split, SplitFile, SplitHeader};
pub use scaler::{ScaleReport, Scaler};
pub use split::{
    largest_remainder, make_splits, split_coordinate, split_random, split_temporal, temporal_cut, BuiltSplits, RandomSplit, Region, SplitKind,
    SplitSpec, Splits, TemporalSplit,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Something that carries a timestamp in seconds (or normalised time).
pub trait Timestamped: Clone {
    fn t(&self) -> f64;
    fn set_t(&mut self, t: f64);
}

/// One beam-training event: an SNR value (dB) per beam pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamSnrFrame {
    pub t: f64,
    pub values: Vec<f64>,
}

/// A compressed CSI measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsiEmbedding {
    pub t: f64,
    pub values: Vec<f64>,
}

/// Ground-truth position in metres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coordinate {
    pub t: f64,
    pub xy: [f64; 2],
}

/// Raw channel frequency response, indexed `[(i·n_rx + j)·n_s + k]`
/// for TX antenna `i`, RX antenna `j` and subcarrier `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawCsiFrame {
    pub t: f64,
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_s: usize,
    pub data: Vec<Complex64>,
}

impl RawCsiFrame {
    pub fn zeros(t: f64, n_tx: usize, n_rx: usize, n_s: usize) -> RawCsiFrame {
        RawCsiFrame { t, n_tx, n_rx, n_s, data: vec![Complex64::new(0.0, 0.0); n_tx * n_rx * n_s] }
    }

    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n_rx + j) * self.n_s + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.data[self.idx(i, j, k)]
    }

    pub fn validate(&self, cfg: &DatasetConfig) -> Result<()> {
        if (self.n_tx, self.n_rx, self.n_s) != (cfg.n_tx, cfg.n_rx, cfg.n_s) {
            return Err(Error::invalid(format!(
                "raw CSI shape {}x{}x{} does not match config {}x{}x{}",
                self.n_tx, self.n_rx, self.n_s, cfg.n_tx, cfg.n_rx, cfg.n_s
            )));
        }
        if self.data.len() != self.n_tx * self.n_rx * self.n_s {
            return Err(Error::invalid("raw CSI buffer length does not match its shape"));
        }
        if self.data.iter().any(|c| c.re.is_nan() || c.im.is_nan()) {
            return Err(Error::invalid("raw CSI contains NaN"));
        }
        Ok(())
    }
}

macro_rules! impl_timestamped {
    ($($ty:ty),*) => {$(
        impl Timestamped for $ty {
            fn t(&self) -> f64 {
                self.t
            }
            fn set_t(&mut self, t: f64) {
                self.t = t;
            }
        }
    )*};
}

impl_timestamped!(BeamSnrFrame, CsiEmbedding, Coordinate, RawCsiFrame);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Beam,
    Csi,
    Label,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Beam => "beam",
            Stream::Csi => "csi",
            Stream::Label => "label",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Beam patterns per SNR frame.
    pub m_b: usize,
    /// CSI embedding length.
    pub m_c: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    /// Subcarriers per CSI frame.
    pub n_s: usize,
    /// Subcarrier spacing in Hz.
    pub f_delta: f64,
    pub window_span: f64,
    pub label_rate: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { m_b: 36, m_c: 36, n_tx: 4, n_rx: 2, n_s: 234, f_delta: 312.5e3, window_span: 5.0, label_rate: 10.0 }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_b == 0 || self.m_c == 0 || self.n_tx == 0 || self.n_rx == 0 || self.n_s == 0 {
            return Err(Error::invalid("dataset dimensions must be positive"));
        }
        if !(self.f_delta > 0.0 && self.window_span > 0.0 && self.label_rate > 0.0) {
            return Err(Error::invalid("f_delta, window_span and label_rate must be positive"));
        }
        Ok(())
    }
}

/// The three timestamped streams of a recording, covering
/// `[origin, origin + duration)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamSet {
    pub origin: f64,
    pub duration: f64,
    pub beam: Vec<BeamSnrFrame>,
    pub csi: Vec<CsiEmbedding>,
    pub labels: Vec<Coordinate>,
}

impl StreamSet {
    pub fn frame_count(&self) -> usize {
        self.beam.len() + self.csi.len() + self.labels.len()
    }

    pub fn check_sorted(&self) -> Result<()> {
        check_sorted(Stream::Beam, &self.beam)?;
        check_sorted(Stream::Csi, &self.csi)?;
        check_sorted(Stream::Label, &self.labels)
    }

    /// Frames with `t` in `[from, to)`, re-based to a new origin/duration.
    pub fn slice_time(&self, from: f64, to: f64) -> StreamSet {
        StreamSet {
            origin: from,
            duration: to - from,
            beam: in_range(&self.beam, from, to),
            csi: in_range(&self.csi, from, to),
            labels: in_range(&self.labels, from, to),
        }
    }
}

pub(crate) fn check_sorted<T: Timestamped>(stream: Stream, frames: &[T]) -> Result<()> {
    for (i, w) in frames.windows(2).enumerate() {
        if !(w[1].t() > w[0].t()) {
            return Err(Error::Unsorted { stream: stream.name().to_string(), index: i + 1 });
        }
    }
    Ok(())
}

/// Frames with `t ∈ [from, to)`; `frames` must be sorted.
pub(crate) fn in_range<T: Timestamped>(frames: &[T], from: f64, to: f64) -> Vec<T> {
    let lo = frames.partition_point(|f| f.t() < from);
    let hi = frames.partition_point(|f| f.t() < to);
    frames[lo..hi].to_vec()
}

/// One window of the three streams. Times are absolute seconds until
/// [`normalize_window_times`] maps them onto `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementWindow {
    pub id: usize,
    pub start: f64,
    pub span: f64,
    pub beam: Vec<BeamSnrFrame>,
    pub csi: Vec<CsiEmbedding>,
    pub labels: Vec<Coordinate>,
    pub normalized: bool,
}

impl MeasurementWindow {
    pub fn beam_times(&self) -> Vec<f64> {
        self.beam.iter().map(|f| f.t).collect()
    }

    pub fn csi_times(&self) -> Vec<f64> {
        self.csi.iter().map(|f| f.t).collect()
    }

    pub fn label_times(&self) -> Vec<f64> {
        self.labels.iter().map(|f| f.t).collect()
    }

    pub fn has_empty_stream(&self) -> bool {
        self.beam.is_empty() || self.csi.is_empty() || self.labels.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Windowing {
    pub windows: Vec<MeasurementWindow>,
    /// Windows discarded because one of their streams had no frames.
    pub dropped: usize,
    /// Non-fatal conditions, e.g. empty input.
    pub warnings: Vec<String>,
}

/// Start times `origin + k·step` of every window that fits in the recording.
pub fn window_starts(origin: f64, duration: f64, span: f64, step: f64) -> Vec<f64> {
    if duration < span {
        return Vec::new();
    }
    let n = ((duration - span) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|k| origin + k as f64 * step).collect()
}

/// Cut the streams into windows `[start, start + span)` every `step`
/// seconds. Windows with an empty stream are dropped and counted.
pub fn window_sequences(frames: &StreamSet, span: f64, step: f64) -> Result<Windowing> {
    if !(span > 0.0) || !(step > 0.0) {
        return Err(Error::invalid("window span and step must be positive"));
    }
    frames.check_sorted()?;
    let mut out = Windowing::default();
    if frames.frame_count() == 0 {
        out.warnings.push("no frames to window".to_string());
        return Ok(out);
    }
    let starts = window_starts(frames.origin, frames.duration, span, step);
    out.windows = windows_at(frames, &starts, span, &mut out.dropped);
    if out.dropped > 0 {
        out.warnings.push(format!("dropped {} windows with an empty stream", out.dropped));
    }
    Ok(out)
}

/// Build windows at explicit start times; window ids are the start indices.
pub fn windows_at(frames: &StreamSet, starts: &[f64], span: f64, dropped: &mut usize) -> Vec<MeasurementWindow> {
    let mut windows = Vec::with_capacity(starts.len());
    for (id, &start) in starts.iter().enumerate() {
        let end = start + span;
        let w = MeasurementWindow {
            id,
            start,
            span,
            beam: in_range(&frames.beam, start, end),
            csi: in_range(&frames.csi, start, end),
            labels: in_range(&frames.labels, start, end),
            normalized: false,
        };
        if w.has_empty_stream() {
            *dropped += 1;
        } else {
            windows.push(w);
        }
    }
    windows
}

/// `t' = (t − start) / span` on every stream.
pub fn normalize_window_times(w: &MeasurementWindow) -> Result<MeasurementWindow> {
    if !(w.span > 0.0) {
        return Err(Error::invalid("window span must be positive"));
    }
    if w.normalized {
        return Ok(w.clone());
    }
    let end = w.start + w.span;
    let check = |t: f64| -> Result<()> {
        if t < w.start || t > end {
            Err(Error::invalid(format!("timestamp {t} outside window [{}, {end}]", w.start)))
        } else {
            Ok(())
        }
    };
    fn map<T: Timestamped>(frames: &[T], start: f64, span: f64) -> Vec<T> {
        frames
            .iter()
            .map(|f| {
                let mut f = f.clone();
                f.set_t(((f.t() - start) / span).clamp(0.0, 1.0));
                f
            })
            .collect()
    }
    for t in w.beam.iter().map(|f| f.t).chain(w.csi.iter().map(|f| f.t)).chain(w.labels.iter().map(|f| f.t)) {
        check(t)?;
    }
    Ok(MeasurementWindow {
        id: w.id,
        start: w.start,
        span: w.span,
        beam: map(&w.beam, w.start, w.span),
        csi: map(&w.csi, w.start, w.span),
        labels: map(&w.labels, w.start, w.span),
        normalized: true,
    })
}
