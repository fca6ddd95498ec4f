//! Line-delimited dataset container: one JSON header line, then one
//! record `{"stream", "t", "values"}` per frame in time order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{windows_at, BeamSnrFrame, Coordinate, CsiEmbedding, DatasetConfig, MeasurementWindow, Stream, StreamSet};
use crate::error::{Error, Result};

pub const FORMAT: &str = "ndfusion-dataset";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitHeader {
    pub format: String,
    pub version: u32,
    pub config: DatasetConfig,
    /// Split name, e.g. `train`, `val`, `test` or `all`.
    pub split: String,
    pub origin: f64,
    pub duration: f64,
    pub window_span: f64,
    /// Start times of the windows in this split; the frames are stored
    /// once even when windows overlap.
    pub window_starts: Vec<f64>,
    /// Window ids parallel to `window_starts`.
    pub window_ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitFile {
    pub header: SplitHeader,
    pub frames: StreamSet,
}

#[derive(Serialize, Deserialize)]
struct Record {
    stream: Stream,
    t: f64,
    values: Vec<f64>,
}

impl SplitFile {
    /// Collect the frames covered by `windows` into a container.
    pub fn from_windows(config: &DatasetConfig, split: &str, origin: f64, duration: f64, windows: &[MeasurementWindow]) -> Result<SplitFile> {
        let mut frames = StreamSet { origin, duration, ..Default::default() };
        for w in windows {
            if w.normalized {
                return Err(Error::invalid("store windows before time normalisation"));
            }
            frames.beam.extend(w.beam.iter().cloned());
            frames.csi.extend(w.csi.iter().cloned());
            frames.labels.extend(w.labels.iter().cloned());
        }
        frames.beam.sort_by(|a, b| a.t.total_cmp(&b.t));
        frames.beam.dedup_by(|a, b| a.t == b.t);
        frames.csi.sort_by(|a, b| a.t.total_cmp(&b.t));
        frames.csi.dedup_by(|a, b| a.t == b.t);
        frames.labels.sort_by(|a, b| a.t.total_cmp(&b.t));
        frames.labels.dedup_by(|a, b| a.t == b.t);
        let header = SplitHeader {
            format: FORMAT.to_string(),
            version: VERSION,
            config: config.clone(),
            split: split.to_string(),
            origin,
            duration,
            window_span: windows.first().map_or(config.window_span, |w| w.span),
            window_starts: windows.iter().map(|w| w.start).collect(),
            window_ids: windows.iter().map(|w| w.id).collect(),
        };
        Ok(SplitFile { header, frames })
    }

    /// Rebuild the windows listed in the header.
    pub fn windows(&self) -> Vec<MeasurementWindow> {
        let mut dropped = 0;
        let mut ws = windows_at(&self.frames, &self.header.window_starts, self.header.window_span, &mut dropped);
        let mut ids = self.header.window_ids.iter();
        for w in &mut ws {
            if let Some(&id) = ids.next() {
                w.id = id;
            }
        }
        ws
    }
}

pub fn write_split(path: &Path, file: &SplitFile) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(f);
    let mut records: Vec<(f64, u8, Record)> = Vec::with_capacity(file.frames.frame_count());
    records.extend(file.frames.beam.iter().map(|f| (f.t, 0, Record { stream: Stream::Beam, t: f.t, values: f.values.clone() })));
    records.extend(file.frames.csi.iter().map(|f| (f.t, 1, Record { stream: Stream::Csi, t: f.t, values: f.values.clone() })));
    records.extend(file.frames.labels.iter().map(|f| (f.t, 2, Record { stream: Stream::Label, t: f.t, values: f.xy.to_vec() })));
    records.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut line = serde_json::to_string(&file.header)?;
    line.push('\n');
    for (_, _, r) in &records {
        line.push_str(&serde_json::to_string(r)?);
        line.push('\n');
        if line.len() > 1 << 16 {
            out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
            line.clear();
        }
    }
    out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_split(path: &Path) -> Result<SplitFile> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let first = lines.next().ok_or_else(|| Error::invalid(format!("{}: empty container", path.display())))?;
    let header: SplitHeader = serde_json::from_str(&first.map_err(|e| Error::io(path, e))?)?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::invalid(format!("{}: unsupported container {} v{}", path.display(), header.format, header.version)));
    }
    let cfg = &header.config;
    let mut frames = StreamSet { origin: header.origin, duration: header.duration, ..Default::default() };
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(&line)?;
        let expect = match r.stream {
            Stream::Beam => cfg.m_b,
            Stream::Csi => cfg.m_c,
            Stream::Label => 2,
        };
        if r.values.len() != expect || !r.t.is_finite() || r.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{}: malformed {} record on line {}", path.display(), r.stream.name(), n + 2)));
        }
        match r.stream {
            Stream::Beam => frames.beam.push(BeamSnrFrame { t: r.t, values: r.values }),
            Stream::Csi => frames.csi.push(CsiEmbedding { t: r.t, values: r.values }),
            Stream::Label => frames.labels.push(Coordinate { t: r.t, xy: [r.values[0], r.values[1]] }),
        }
    }
    frames.check_sorted()?;
    Ok(SplitFile { header, frames })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_windows_bit_for_bit() {
        let cfg = DatasetConfig { m_b: 2, m_c: 1, ..Default::default() };
        let frames = StreamSet {
            origin: 0.0,
            duration: 4.0,
            beam: vec![BeamSnrFrame { t: 0.1, values: vec![0.1 + 0.2, -1e-300] }, BeamSnrFrame { t: 2.5, values: vec![1.0 / 3.0, 2.0] }],
            csi: vec![CsiEmbedding { t: 0.3, values: vec![std::f64::consts::PI] }, CsiEmbedding { t: 3.1, values: vec![0.7] }],
            labels: vec![Coordinate { t: 0.0, xy: [1.0, 2.0] }, Coordinate { t: 2.0, xy: [3.0, 4.0] }],
        };
        let ws = crate::data::window_sequences(&frames, 2.0, 2.0).unwrap().windows;
        let file = SplitFile::from_windows(&cfg, "train", 0.0, 4.0, &ws).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.jsonl");
        write_split(&p, &file).unwrap();
        let back = read_split(&p).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.windows(), ws);
    }

    #[test]
    fn wrong_length_record_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        let cfg = DatasetConfig { m_b: 2, m_c: 1, ..Default::default() };
        let file = SplitFile::from_windows(&cfg, "all", 0.0, 1.0, &[]).unwrap();
        write_split(&p, &file).unwrap();
        let mut text = std::fs::read_to_string(&p).unwrap();
        text.push_str("{\"stream\":\"beam\",\"t\":0.5,\"values\":[1.0]}\n");
        std::fs::write(&p, text).unwrap();
        assert!(read_split(&p).is_err());
    }
}
