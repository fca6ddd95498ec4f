//! Localisation metrics, evaluation reports and latent export.

use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Region;
use crate::error::{Error, Result};
use crate::model::{Ndf, Regressor, WindowInput};

/// Percentile by linear interpolation between order statistics at rank
/// `q·(n − 1)`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("percentile level {q} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean: f64,
    pub median: f64,
    pub cdf90: f64,
}

pub fn metrics(errors: &[f64]) -> Result<Metrics> {
    if errors.is_empty() {
        return Err(Error::invalid("no errors to summarise"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(Metrics { mean, median: percentile(&sorted, 0.5)?, cdf90: percentile(&sorted, 0.9)? })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Trained,
    RandomInit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub split: String,
    pub provenance: Provenance,
    pub points: usize,
    pub mean: f64,
    pub median: f64,
    pub cdf90: f64,
    /// Euclidean error of every label point in window order, metres.
    pub errors: Vec<f64>,
}

impl EvalReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<EvalReport> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// Predicted coordinates of every window, in order.
pub fn predict_all<M: Regressor>(model: &M, windows: &[WindowInput]) -> Result<Vec<crate::tensor::Tensor>> {
    windows.par_iter().map(|w| model.predict(w)).collect()
}

pub fn point_errors<M: Regressor>(model: &M, windows: &[WindowInput]) -> Result<Vec<f64>> {
    let preds = predict_all(model, windows)?;
    let mut errors = Vec::new();
    for (w, p) in windows.iter().zip(&preds) {
        for r in 0..w.labels.rows() {
            let (a, b) = (p.row_slice(r), w.labels.row_slice(r));
            errors.push(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
        }
    }
    Ok(errors)
}

pub fn evaluate<M: Regressor>(model: &M, windows: &[WindowInput], split: &str, provenance: Provenance) -> Result<EvalReport> {
    if windows.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let errors = point_errors(model, windows)?;
    let m = metrics(&errors)?;
    Ok(EvalReport { method: model.method_id(), split: split.to_string(), provenance, points: errors.len(), mean: m.mean, median: m.median, cdf90: m.cdf90, errors })
}

/// One exported fused latent state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentRecord {
    pub window_id: usize,
    /// Normalised time within the window.
    pub t: f64,
    pub region: usize,
    pub xy: [f64; 2],
    pub z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentExport {
    /// Records grouped by region, in region order.
    pub groups: Vec<Vec<LatentRecord>>,
    pub warnings: Vec<String>,
}

impl LatentExport {
    pub fn len(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One JSON record per line, grouped by region.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(f);
        for rec in self.groups.iter().flatten() {
            serde_json::to_writer(&mut out, rec)?;
            writeln!(out).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<LatentRecord>> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        s.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
    }
}

/// Fused latent states of every label point whose true coordinate falls in
/// one of `regions` (first match wins).
pub fn export_latents(model: &Ndf, windows: &[WindowInput], regions: &[Region]) -> Result<LatentExport> {
    let latents: Vec<_> = windows.par_iter().map(|w| model.fused_latents(w)).collect::<Result<_>>()?;
    let mut groups = vec![Vec::new(); regions.len()];
    for (w, z) in windows.iter().zip(&latents) {
        for r in 0..w.labels.rows() {
            let xy = [w.labels.get(r, 0), w.labels.get(r, 1)];
            if let Some(k) = regions.iter().position(|reg| reg.contains(xy)) {
                groups[k].push(LatentRecord { window_id: w.id, t: w.label_t[r], region: k, xy, z: z.row_slice(r).to_vec() });
            }
        }
    }
    let warnings = groups.iter().enumerate().filter(|(_, g)| g.is_empty()).map(|(k, _)| format!("region {k} has no label points")).collect();
    Ok(LatentExport { groups, warnings })
}
