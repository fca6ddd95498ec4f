use serde::{Deserialize, Serialize};

use super::MeasurementWindow;
use crate::error::{Error, Result};

/// Per-dimension min/max of one measurement stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Range {
    fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Result<Range> {
        let mut r: Option<Range> = None;
        for v in rows {
            let r = r.get_or_insert_with(|| Range { min: vec![f64::INFINITY; v.len()], max: vec![f64::NEG_INFINITY; v.len()] });
            if v.len() != r.min.len() {
                return Err(Error::invalid("measurement vectors have inconsistent length"));
            }
            for (i, &x) in v.iter().enumerate() {
                if !x.is_finite() {
                    return Err(Error::invalid("non-finite measurement"));
                }
                r.min[i] = r.min[i].min(x);
                r.max[i] = r.max[i].max(x);
            }
        }
        r.ok_or_else(|| Error::invalid("no measurements to fit a scaler on"))
    }

    fn constant_dims(&self) -> usize {
        self.min.iter().zip(&self.max).filter(|(a, b)| a == b).count()
    }

    /// Map `v` in place, returning how many entries fell outside `[0, 1]`.
    fn apply(&self, v: &mut [f64]) -> Result<usize> {
        if v.len() != self.min.len() {
            return Err(Error::invalid(format!("expected {} values, got {}", self.min.len(), v.len())));
        }
        let mut out = 0;
        for (i, x) in v.iter_mut().enumerate() {
            let (lo, hi) = (self.min[i], self.max[i]);
            *x = if hi > lo { (*x - lo) / (hi - lo) } else { 0.5 };
            if !(0.0..=1.0).contains(x) {
                out += 1;
            }
        }
        Ok(out)
    }
}

/// Min-max scaler for beam SNR and CSI embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub beam: Range,
    pub csi: Range,
    /// Dimensions whose training range is a single value.
    pub constant_dims: usize,
}

/// Bookkeeping from one [`Scaler::apply`] call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScaleReport {
    /// Scaled values outside `[0, 1]`. They are kept as is.
    pub out_of_range: usize,
}

impl Scaler {
    /// Fit on training windows only.
    pub fn fit(train: &[MeasurementWindow]) -> Result<Scaler> {
        let beam = Range::fit(train.iter().flat_map(|w| w.beam.iter().map(|f| f.values.as_slice())))?;
        let csi = Range::fit(train.iter().flat_map(|w| w.csi.iter().map(|f| f.values.as_slice())))?;
        let constant_dims = beam.constant_dims() + csi.constant_dims();
        Ok(Scaler { beam, csi, constant_dims })
    }

    pub fn warnings(&self) -> Vec<String> {
        if self.constant_dims > 0 {
            vec![format!("{} constant measurement dimensions map to 0.5", self.constant_dims)]
        } else {
            Vec::new()
        }
    }

    pub fn apply(&self, w: &MeasurementWindow) -> Result<(MeasurementWindow, ScaleReport)> {
        let mut w = w.clone();
        let mut report = ScaleReport::default();
        for f in &mut w.beam {
            report.out_of_range += self.beam.apply(&mut f.values)?;
        }
        for f in &mut w.csi {
            report.out_of_range += self.csi.apply(&mut f.values)?;
        }
        Ok((w, report))
    }

    pub fn apply_all(&self, ws: &[MeasurementWindow]) -> Result<(Vec<MeasurementWindow>, ScaleReport)> {
        let mut report = ScaleReport::default();
        let mut out = Vec::with_capacity(ws.len());
        for w in ws {
            let (w, r) = self.apply(w)?;
            report.out_of_range += r.out_of_range;
            out.push(w);
        }
        Ok((out, report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BeamSnrFrame, Coordinate, CsiEmbedding};

    fn window(beam: &[f64], csi: &[f64]) -> MeasurementWindow {
        MeasurementWindow {
            id: 0,
            start: 0.0,
            span: 1.0,
            beam: beam.iter().enumerate().map(|(i, &v)| BeamSnrFrame { t: i as f64 * 0.1, values: vec![v, 7.0] }).collect(),
            csi: csi.iter().enumerate().map(|(i, &v)| CsiEmbedding { t: i as f64 * 0.1, values: vec![v] }).collect(),
            labels: vec![Coordinate { t: 0.0, xy: [0.0, 0.0] }],
            normalized: false,
        }
    }

    #[test]
    fn hand_min_max() {
        let s = Scaler::fit(&[window(&[2.0, 4.0], &[0.0, 1.0])]).unwrap();
        let (w, r) = s.apply(&window(&[3.0], &[0.5])).unwrap();
        assert_eq!(w.beam[0].values, vec![0.5, 0.5]);
        assert_eq!(r.out_of_range, 0);
        let (w, r) = s.apply(&window(&[5.0], &[0.5])).unwrap();
        assert_eq!(w.beam[0].values[0], 1.5);
        assert_eq!(r.out_of_range, 1);
    }

    #[test]
    fn constant_dimension_maps_to_half_and_warns() {
        let s = Scaler::fit(&[window(&[2.0, 4.0], &[1.0])]).unwrap();
        assert_eq!(s.constant_dims, 2);
        assert_eq!(s.warnings().len(), 1);
        let (w, _) = s.apply(&window(&[2.0], &[123.0])).unwrap();
        assert_eq!(w.beam[0].values[1], 0.5);
        assert_eq!(w.csi[0].values[0], 0.5);
    }

    #[test]
    fn training_data_maps_inside_unit_interval() {
        let train = [window(&[-3.0, 9.0, 1.0], &[0.2, -0.4]), window(&[5.0], &[1.1])];
        let s = Scaler::fit(&train).unwrap();
        let (ws, r) = s.apply_all(&train).unwrap();
        assert_eq!(r.out_of_range, 0);
        for w in ws {
            for v in w.beam.iter().flat_map(|f| &f.values).chain(w.csi.iter().flat_map(|f| &f.values)) {
                assert!((0.0..=1.0).contains(v));
            }
        }
    }
}
