//! Minimal SVG renderings: trajectory overlays, error CDFs and 2-D latent
//! projections.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::eval::LatentRecord;

const W: f64 = 640.0;
const H: f64 = 480.0;
const M: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    out: String,
}

impl Frame {
    fn new(points: impl Iterator<Item = [f64; 2]>, title: &str, xlabel: &str, ylabel: &str) -> Result<Frame> {
        let (mut x, mut y) = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
        for [a, b] in points {
            if a.is_finite() && b.is_finite() {
                x = (x.0.min(a), x.1.max(a));
                y = (y.0.min(b), y.1.max(b));
            }
        }
        if !x.0.is_finite() {
            return Err(Error::invalid("nothing to plot"));
        }
        let pad = |r: (f64, f64)| if r.1 > r.0 { (r.0, r.1) } else { (r.0 - 0.5, r.1 + 0.5) };
        let (x, y) = (pad(x), pad(y));
        let mut out = String::new();
        let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(out, r#"<text x="{}" y="25" text-anchor="middle" font-size="16">{}</text>"#, W / 2.0, escape(title));
        let _ = writeln!(out, r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#, W - 2.0 * M, H - 2.0 * M);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, W / 2.0, H - 12.0, escape(xlabel));
        let _ = writeln!(out, r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#, H / 2.0, H / 2.0, escape(ylabel));
        let mut f = Frame { x, y, out };
        for i in 0..=4 {
            let v = x.0 + (x.1 - x.0) * i as f64 / 4.0;
            let _ = writeln!(f.out, r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">{}</text>"#, f.px(v), H - M + 14.0, tick(v));
            let v = y.0 + (y.1 - y.0) * i as f64 / 4.0;
            let _ = writeln!(f.out, r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#, M - 4.0, f.py(v) + 3.0, tick(v));
        }
        Ok(f)
    }

    fn px(&self, v: f64) -> f64 {
        M + (v - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * M)
    }

    fn py(&self, v: f64) -> f64 {
        H - M - (v - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * M)
    }

    fn polyline(&mut self, pts: &[[f64; 2]], color: &str, dashed: bool) {
        let coords: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", self.px(p[0]), self.py(p[1]))).collect();
        let dash = if dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(self.out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#, coords.join(" "));
    }

    fn dot(&mut self, p: [f64; 2], color: &str) {
        let _ = writeln!(self.out, r#"<circle cx="{:.1}" cy="{:.1}" r="2" fill="{color}" fill-opacity="0.7"/>"#, self.px(p[0]), self.py(p[1]));
    }

    fn legend(&mut self, entries: &[(String, &str)]) {
        for (i, (name, color)) in entries.iter().enumerate() {
            let y = M + 16.0 + 16.0 * i as f64;
            let _ = writeln!(self.out, r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#, W - M - 150.0, y - 9.0);
            let _ = writeln!(self.out, r#"<text x="{}" y="{y}" font-size="11">{}</text>"#, W - M - 135.0, escape(name));
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Ground truth against one or more estimated tracks, each given as
/// segments (one per window).
pub fn trajectory_svg(truth: &[Vec<[f64; 2]>], estimates: &[(String, Vec<Vec<[f64; 2]>>)]) -> Result<String> {
    let all = truth.iter().flatten().copied().chain(estimates.iter().flat_map(|(_, e)| e.iter().flatten().copied()));
    let mut f = Frame::new(all, "Trajectory", "x (m)", "y (m)")?;
    for seg in truth {
        f.polyline(seg, "black", false);
    }
    let mut legend = vec![("ground truth".to_string(), "black")];
    for (i, (name, est)) in estimates.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for seg in est {
            f.polyline(seg, color, true);
        }
        legend.push((name.clone(), color));
    }
    f.legend(&legend);
    Ok(f.finish())
}

/// Empirical CDF of each error sample.
pub fn cdf_svg(series: &[(String, Vec<f64>)]) -> Result<String> {
    let curves: Vec<(String, Vec<[f64; 2]>)> = series
        .iter()
        .map(|(name, e)| {
            let mut v = e.clone();
            v.sort_by(f64::total_cmp);
            let n = v.len() as f64;
            (name.clone(), v.iter().enumerate().map(|(i, x)| [*x, (i + 1) as f64 / n]).collect())
        })
        .collect();
    let bounds = curves.iter().flat_map(|(_, c)| c.iter().copied()).chain([[0.0, 0.0], [0.0, 1.0]]);
    let mut f = Frame::new(bounds, "Localization error CDF", "error (m)", "CDF")?;
    let mut legend = Vec::new();
    for (i, (name, c)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        f.polyline(c, color, false);
        legend.push((name.clone(), color));
    }
    f.legend(&legend);
    Ok(f.finish())
}

/// Projection onto the two leading principal axes, by power iteration with
/// deflation.
pub fn project_2d(rows: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let d = rows.first().map(Vec::len).ok_or_else(|| Error::invalid("no latent rows"))?;
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("latent rows must share a positive width"));
    }
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut cov = vec![0.0; d * d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]) / n;
            }
        }
    }
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for k in 0..2 {
        let mut v: Vec<f64> = (0..d).map(|i| if i == k % d { 1.0 } else { 0.1 }).collect();
        for _ in 0..200 {
            let mut w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| cov[i * d + j] * v[j]).sum()).collect();
            for a in &axes {
                let dot: f64 = w.iter().zip(a).map(|(x, y)| x * y).sum();
                w.iter_mut().zip(a).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                break;
            }
            v = w.into_iter().map(|x| x / norm).collect();
        }
        axes.push(v);
    }
    Ok(rows
        .iter()
        .map(|r| {
            let c: Vec<f64> = r.iter().zip(&mean).map(|(x, m)| x - m).collect();
            [0, 1].map(|k| c.iter().zip(&axes[k]).map(|(x, y)| x * y).sum())
        })
        .collect())
}

/// Latent states projected to 2-D and coloured by region.
pub fn latents_svg(records: &[LatentRecord]) -> Result<String> {
    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.z.clone()).collect();
    let pts = project_2d(&rows)?;
    let mut f = Frame::new(pts.iter().copied(), "Fused latent states", "component 1", "component 2")?;
    let mut regions: Vec<usize> = records.iter().map(|r| r.region).collect();
    regions.sort_unstable();
    regions.dedup();
    for (p, r) in pts.iter().zip(records) {
        f.dot(*p, PALETTE[r.region % PALETTE.len()]);
    }
    let legend: Vec<(String, &str)> = regions.iter().map(|r| (format!("region {r}"), PALETTE[r % PALETTE.len()])).collect();
    f.legend(&legend);
    Ok(f.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_recovers_dominant_axis() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| { let t = i as f64 - 25.0; vec![t, 0.1 * (i % 3) as f64, 2.0 * t] }).collect();
        let p = project_2d(&rows).unwrap();
        let spread0 = p.iter().map(|q| q[0].abs()).fold(0.0, f64::max);
        let spread1 = p.iter().map(|q| q[1].abs()).fold(0.0, f64::max);
        assert!(spread0 > 50.0 && spread1 < 0.2, "{spread0} {spread1}");
    }

    #[test]
    fn documents_are_well_formed() {
        let s = cdf_svg(&[("a".into(), vec![0.1, 0.5, 0.2])]).unwrap();
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        let s = trajectory_svg(&[vec![[0.0, 0.0], [1.0, 1.0]]], &[("x<y".into(), vec![vec![[0.1, 0.0], [0.9, 1.1]]])]).unwrap();
        assert!(s.contains("x&lt;y"));
        assert!(cdf_svg(&[]).is_ok());
        assert!(trajectory_svg(&[], &[]).is_err());
    }
}
