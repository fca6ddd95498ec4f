use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{window_sequences, MeasurementWindow, StreamSet, Timestamped};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Random,
    Temporal,
    Coordinate,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RandomSplit {
    pub train: Vec<MeasurementWindow>,
    pub val: Vec<MeasurementWindow>,
    pub test: Vec<MeasurementWindow>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TemporalSplit {
    pub train: Vec<MeasurementWindow>,
    pub test: Vec<MeasurementWindow>,
    /// Time of the first test frame.
    pub cutoff: f64,
}

/// Split sizes by the largest-remainder rule: floor every quota
/// `n·r_i`, then hand the leftover windows to the largest fractional
/// parts, lower index first on ties.
pub fn largest_remainder(n: usize, ratios: &[f64]) -> Result<Vec<usize>> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(*r >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("split ratios must be non-negative and sum to 1"));
    }
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let mut left = n.saturating_sub(sizes.iter().sum());
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            sizes[i] += 1;
            left -= 1;
        }
    }
    Ok(sizes)
}

/// Shuffle with a seeded ChaCha8 stream and cut into train/val/test.
pub fn split_random(windows: &[MeasurementWindow], ratios: [f64; 3], seed: u64) -> Result<RandomSplit> {
    let needed = ratios.iter().filter(|r| **r > 0.0).count();
    if windows.len() < needed {
        return Err(Error::invalid(format!("{} windows cannot fill {needed} splits", windows.len())));
    }
    let sizes = largest_remainder(windows.len(), &ratios)?;
    let mut idx: Vec<usize> = (0..windows.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |r: std::ops::Range<usize>| {
        let mut part: Vec<usize> = idx[r].to_vec();
        part.sort_unstable();
        part.into_iter().map(|i| windows[i].clone()).collect::<Vec<_>>()
    };
    let (a, b) = (sizes[0], sizes[0] + sizes[1]);
    Ok(RandomSplit { train: pick(0..a), val: pick(a..b), test: pick(b..windows.len()) })
}

/// Cut the recording chronologically so that the first `floor(s·N)`
/// frames (all streams merged by time) are train and the rest test.
/// Returns `(train, test)`.
pub fn temporal_cut(frames: &StreamSet, s: f64) -> Result<(StreamSet, StreamSet)> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::invalid(format!("temporal split fraction {s} outside (0, 1)")));
    }
    frames.check_sorted()?;
    let mut times: Vec<f64> = frames
        .beam
        .iter()
        .map(Timestamped::t)
        .chain(frames.csi.iter().map(Timestamped::t))
        .chain(frames.labels.iter().map(Timestamped::t))
        .collect();
    times.sort_by(f64::total_cmp);
    let n_train = (s * times.len() as f64 + 1e-9).floor() as usize;
    if n_train == 0 {
        return Err(Error::invalid("temporal split leaves the training set empty"));
    }
    if n_train >= times.len() {
        return Err(Error::invalid("temporal split leaves the test set empty"));
    }
    let cutoff = times[n_train];
    if times[n_train - 1] == cutoff {
        return Err(Error::invalid("temporal split falls between simultaneous frames"));
    }
    let end = frames.origin + frames.duration;
    Ok((frames.slice_time(frames.origin, cutoff), frames.slice_time(cutoff, end)))
}

/// Chronological split; train windows use `train_step`, test windows
/// `test_step`, and no window crosses the cutoff.
pub fn split_temporal(frames: &StreamSet, s: f64, span: f64, train_step: f64, test_step: f64) -> Result<TemporalSplit> {
    let (train, test) = temporal_cut(frames, s)?;
    let cutoff = test.origin;
    let train = window_sequences(&train, span, train_step)?.windows;
    let test = window_sequences(&test, span, test_step)?.windows;
    if test.is_empty() {
        return Err(Error::invalid("temporal split produced no test windows"));
    }
    if train.is_empty() {
        return Err(Error::invalid("temporal split produced no training windows"));
    }
    Ok(TemporalSplit { train, test, cutoff })
}

/// Axis-aligned box in metres. A box with `min >= max` on either axis
/// contains nothing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub fn is_empty(&self) -> bool {
        !(self.x_min < self.x_max && self.y_min < self.y_max)
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        !self.is_empty() && p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }
}

/// Windows with any label inside `region` go to test. Returns `(train, test)`.
pub fn split_coordinate(windows: &[MeasurementWindow], region: Region) -> Result<(Vec<MeasurementWindow>, Vec<MeasurementWindow>)> {
    let (test, train): (Vec<_>, Vec<_>) =
        windows.iter().cloned().partition(|w| w.labels.iter().any(|p| region.contains(p.xy)));
    if train.is_empty() && !windows.is_empty() {
        return Err(Error::invalid("held-out region covers every window"));
    }
    Ok((train, test))
}

/// Which protocol to use and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub kind: SplitKind,
    /// Train/val/test ratios for the random split.
    pub ratios: [f64; 3],
    /// Train fraction of the temporal split.
    pub fraction: f64,
    /// Held-out box of the coordinate split.
    pub region: Option<Region>,
    /// Window step for the training part (and the whole random split).
    pub train_step: f64,
    /// Window step for the test part of the temporal split.
    pub test_step: f64,
    /// Share of the training windows moved to validation by the temporal
    /// and coordinate splits.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            kind: SplitKind::Random,
            ratios: [0.8, 0.1, 0.1],
            fraction: 0.6,
            region: None,
            train_step: 5.0,
            test_step: 5.0,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_step > 0.0 && self.test_step > 0.0) {
            return Err(Error::invalid("window steps must be positive"));
        }
        match self.kind {
            SplitKind::Random => largest_remainder(0, &self.ratios).map(|_| ()),
            SplitKind::Temporal if !(self.fraction > 0.0 && self.fraction < 1.0) => {
                Err(Error::invalid(format!("temporal split fraction {} outside (0, 1)", self.fraction)))
            }
            SplitKind::Coordinate if self.region.is_none() => Err(Error::invalid("coordinate split needs a region")),
            _ if !(0.0..1.0).contains(&self.val_fraction) => Err(Error::invalid("val_fraction must lie in [0, 1)")),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<MeasurementWindow>,
    pub val: Vec<MeasurementWindow>,
    pub test: Vec<MeasurementWindow>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BuiltSplits {
    pub splits: Splits,
    /// Windows dropped for an empty stream.
    pub dropped: usize,
}

/// Window the recording and split it according to `spec`.
pub fn make_splits(frames: &StreamSet, span: f64, spec: &SplitSpec) -> Result<BuiltSplits> {
    spec.validate()?;
    let carve = |train: Vec<MeasurementWindow>, test: Vec<MeasurementWindow>| -> Result<Splits> {
        if spec.val_fraction == 0.0 {
            return Ok(Splits { train, val: Vec::new(), test });
        }
        let r = split_random(&train, [1.0 - spec.val_fraction, spec.val_fraction, 0.0], spec.seed)?;
        Ok(Splits { train: r.train, val: r.val, test })
    };
    match spec.kind {
        SplitKind::Random => {
            let w = window_sequences(frames, span, spec.train_step)?;
            let r = split_random(&w.windows, spec.ratios, spec.seed)?;
            Ok(BuiltSplits { splits: Splits { train: r.train, val: r.val, test: r.test }, dropped: w.dropped })
        }
        SplitKind::Temporal => {
            let t = split_temporal(frames, spec.fraction, span, spec.train_step, spec.test_step)?;
            Ok(BuiltSplits { splits: carve(t.train, t.test)?, dropped: 0 })
        }
        SplitKind::Coordinate => {
            let w = window_sequences(frames, span, spec.train_step)?;
            let (train, test) = split_coordinate(&w.windows, spec.region.expect("validated"))?;
            Ok(BuiltSplits { splits: carve(train, test)?, dropped: w.dropped })
        }
    }
}
