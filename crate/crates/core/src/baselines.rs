//! Comparison methods: frame-to-frame interpolation fusion and
//! sequence-to-sequence RNN fusion, each with single-band variants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::decoder::{LossTerms, LossWeights};
use crate::error::{Error, Result};
use crate::model::{Regressor, WindowInput};
use crate::nn::{GruCell, Mlp};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    LinearInt,
    NearestInt,
    RnnDecay,
    RnnDelta,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::LinearInt => "linear_int",
            BaselineMethod::NearestInt => "nearest_int",
            BaselineMethod::RnnDecay => "rnn_decay",
            BaselineMethod::RnnDelta => "rnn_delta",
        }
    }

    pub fn is_rnn(self) -> bool {
        matches!(self, BaselineMethod::RnnDecay | BaselineMethod::RnnDelta)
    }

    pub const ALL: [BaselineMethod; 4] = [BaselineMethod::LinearInt, BaselineMethod::NearestInt, BaselineMethod::RnnDecay, BaselineMethod::RnnDelta];
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown baseline method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bands {
    Csi,
    Beam,
    Both,
}

impl Bands {
    pub fn name(self) -> &'static str {
        match self {
            Bands::Csi => "csi",
            Bands::Beam => "beam",
            Bands::Both => "both",
        }
    }

    fn uses_csi(self) -> bool {
        self != Bands::Beam
    }

    fn uses_beam(self) -> bool {
        self != Bands::Csi
    }
}

impl std::str::FromStr for Bands {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Bands::Csi, Bands::Beam, Bands::Both]
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown band selection {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    pub bands: Bands,
    pub m_b: usize,
    pub m_c: usize,
    /// RNN hidden size per band.
    pub hidden: usize,
    /// Hidden width of the regression head.
    pub mlp_hidden: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { method: BaselineMethod::RnnDecay, bands: Bands::Both, m_b: 36, m_c: 36, hidden: 20, mlp_hidden: 64 }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_b == 0 || self.m_c == 0 || self.hidden == 0 || self.mlp_hidden == 0 {
            return Err(Error::invalid("baseline dimensions must be positive"));
        }
        Ok(())
    }
}

fn check_sequence(times: &[f64], values: &Tensor) -> Result<()> {
    if times.is_empty() {
        return Err(Error::invalid("cannot interpolate an empty sequence"));
    }
    if times.len() != values.rows() {
        return Err(Error::invalid(format!("{} times for {} rows", times.len(), values.rows())));
    }
    if times.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::invalid("sequence times must be sorted"));
    }
    Ok(())
}

/// Index of the last sample at or before `q`, or `None` if `q` precedes
/// every sample.
fn last_at_or_before(times: &[f64], q: f64) -> Option<usize> {
    times.partition_point(|t| *t <= q).checked_sub(1)
}

/// Piecewise-linear interpolation; queries outside the sample range clamp to
/// the nearest end sample.
pub fn linear_interp(times: &[f64], values: &Tensor, queries: &[f64]) -> Result<Tensor> {
    check_sequence(times, values)?;
    let n = times.len();
    let mut out = Tensor::zeros(queries.len(), values.cols());
    for (r, &q) in queries.iter().enumerate() {
        let dst = out.row_slice_mut(r);
        match last_at_or_before(times, q) {
            None => dst.copy_from_slice(values.row_slice(0)),
            Some(i) if i + 1 == n || times[i] == q => dst.copy_from_slice(values.row_slice(i)),
            Some(i) => {
                let a = (q - times[i]) / (times[i + 1] - times[i]);
                let (lo, hi) = (values.row_slice(i), values.row_slice(i + 1));
                for ((d, l), h) in dst.iter_mut().zip(lo).zip(hi) {
                    *d = l + a * (h - l);
                }
            }
        }
    }
    Ok(out)
}

/// Nearest-sample interpolation; the left sample wins exact ties.
pub fn nearest_interp(times: &[f64], values: &Tensor, queries: &[f64]) -> Result<Tensor> {
    check_sequence(times, values)?;
    let n = times.len();
    let mut out = Tensor::zeros(queries.len(), values.cols());
    for (r, &q) in queries.iter().enumerate() {
        let i = match last_at_or_before(times, q) {
            None => 0,
            Some(i) if i + 1 == n => i,
            Some(i) if q - times[i] <= times[i + 1] - q => i,
            Some(i) => i + 1,
        };
        out.row_slice_mut(r).copy_from_slice(values.row_slice(i));
    }
    Ok(out)
}

fn check_gap(dt: f64) -> Result<()> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("time gap must be finite and non-negative, got {dt}")));
    }
    Ok(())
}

/// `R(h_prev · e^{−Δt}, x)`.
pub fn rnn_decay_step(g: &mut Graph<'_>, cell: &GruCell, h_prev: Var, dt: f64, x: Var) -> Result<Var> {
    check_gap(dt)?;
    if g.value(x).cols() != cell.input_dim {
        return Err(Error::invalid(format!("input width {} for a cell expecting {}", g.value(x).cols(), cell.input_dim)));
    }
    let h_tilde = g.scale(h_prev, (-dt).exp());
    Ok(cell.step(g, h_tilde, x))
}

/// `R(h_prev, [x; Δt])`.
pub fn rnn_delta_step(g: &mut Graph<'_>, cell: &GruCell, h_prev: Var, dt: f64, x: Var) -> Result<Var> {
    check_gap(dt)?;
    let (rows, cols) = g.value(x).shape();
    if cols + 1 != cell.input_dim {
        return Err(Error::invalid(format!("input width {cols} plus the gap does not match a cell expecting {}", cell.input_dim)));
    }
    let gap = g.constant(Tensor::full(rows, 1, dt));
    let xa = g.concat_cols(&[x, gap]);
    Ok(cell.step(g, h_prev, xa))
}

#[derive(Clone, Debug)]
pub struct Baseline {
    pub config: BaselineConfig,
    pub store: ParamStore,
    pub cell_c: Option<GruCell>,
    pub cell_b: Option<GruCell>,
    pub head: Mlp,
}

impl Baseline {
    pub fn new(config: BaselineConfig, seed: u64) -> Result<Baseline> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let extra = usize::from(c.method == BaselineMethod::RnnDelta);
        let (mut cell_c, mut cell_b) = (None, None);
        let head_in = if c.method.is_rnn() {
            if c.bands.uses_csi() {
                cell_c = Some(GruCell::new(&mut store, "r.csi", c.m_c + extra, c.hidden, &mut rng));
            }
            if c.bands.uses_beam() {
                cell_b = Some(GruCell::new(&mut store, "r.beam", c.m_b + extra, c.hidden, &mut rng));
            }
            c.hidden * (usize::from(c.bands.uses_csi()) + usize::from(c.bands.uses_beam()))
        } else {
            usize::from(c.bands.uses_csi()) * c.m_c + usize::from(c.bands.uses_beam()) * c.m_b
        };
        let head = Mlp::new(&mut store, "head", "mlp", &[head_in, c.mlp_hidden, c.mlp_hidden, 2], &mut rng);
        Ok(Baseline { config, store, cell_c, cell_b, head })
    }

    /// Head input at every label time, `N_p × width`, CSI part first.
    pub fn features(&self, g: &mut Graph<'_>, w: &WindowInput) -> Result<Var> {
        let c = &self.config;
        let mut parts = Vec::new();
        let bands: [(bool, &[f64], &Tensor, Option<&GruCell>); 2] =
            [(c.bands.uses_csi(), &w.csi_t, &w.csi, self.cell_c.as_ref()), (c.bands.uses_beam(), &w.beam_t, &w.beam, self.cell_b.as_ref())];
        for (used, times, values, cell) in bands {
            if !used {
                continue;
            }
            let v = match c.method {
                BaselineMethod::LinearInt => g.constant(linear_interp(times, values, &w.label_t)?),
                BaselineMethod::NearestInt => g.constant(nearest_interp(times, values, &w.label_t)?),
                BaselineMethod::RnnDecay | BaselineMethod::RnnDelta => {
                    let cell = cell.ok_or_else(|| Error::invalid("missing recurrent cell"))?;
                    self.band_states(g, cell, times, values, &w.label_t)?
                }
            };
            parts.push(v);
        }
        Ok(if parts.len() == 1 { parts[0] } else { g.concat_cols(&parts) })
    }

    /// Run the band cell along its native times from a zero state at time 0,
    /// then carry the last state at or before each label time forward with
    /// zero input. Labels before the first measurement start from the zero
    /// state.
    fn band_states(&self, g: &mut Graph<'_>, cell: &GruCell, times: &[f64], values: &Tensor, label_t: &[f64]) -> Result<Var> {
        check_sequence(times, values)?;
        let decay = self.config.method == BaselineMethod::RnnDecay;
        let zero = g.constant(Tensor::zeros(1, cell.hidden_dim));
        let mut states = vec![zero];
        let mut t_prev = 0.0;
        for (i, &t) in times.iter().enumerate() {
            let x = g.constant(Tensor::row(values.row_slice(i)));
            let h_prev = *states.last().expect("non-empty");
            let h = if decay { rnn_decay_step(g, cell, h_prev, t - t_prev, x)? } else { rnn_delta_step(g, cell, h_prev, t - t_prev, x)? };
            states.push(h);
            t_prev = t;
        }
        let n = label_t.len();
        let mut picked = Vec::with_capacity(n);
        let mut gaps = Vec::with_capacity(n);
        for &q in label_t {
            let (k, t_ref) = match last_at_or_before(times, q) {
                Some(i) => (i + 1, times[i]),
                None => (0, 0.0),
            };
            check_gap(q - t_ref)?;
            picked.push(states[k]);
            gaps.push(q - t_ref);
        }
        let h = g.stack_rows(&picked);
        let m = values.cols();
        if decay {
            let mut factor = Tensor::zeros(n, cell.hidden_dim);
            for (r, dt) in gaps.iter().enumerate() {
                factor.row_slice_mut(r).fill((-dt).exp());
            }
            let f = g.constant(factor);
            let h_tilde = g.mul(h, f);
            let x = g.constant(Tensor::zeros(n, m));
            Ok(cell.step(g, h_tilde, x))
        } else {
            let mut x = Tensor::zeros(n, m + 1);
            for (r, dt) in gaps.iter().enumerate() {
                x.set(r, m, *dt);
            }
            let x = g.constant(x);
            Ok(cell.step(g, h, x))
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, w: &WindowInput) -> Result<Var> {
        let f = self.features(g, w)?;
        Ok(self.head.forward(g, f))
    }
}

impl Regressor for Baseline {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Coordinate term of the objective only; the baselines reconstruct
    /// nothing.
    fn window_loss(&self, g: &mut Graph<'_>, w: &WindowInput, weights: &LossWeights, _noise: Option<&mut ChaCha8Rng>) -> Result<(Var, LossTerms)> {
        weights.validate()?;
        let p = self.forward(g, w)?;
        if g.value(p).shape() != w.labels.shape() {
            return Err(Error::invalid("label shape mismatch"));
        }
        let t = g.constant(w.labels.clone());
        let d = g.sub(p, t);
        let a = g.abs(d);
        let s = g.sum(a);
        let loss = g.scale(s, 1.0 / weights.b_p);
        let v = g.scalar(loss);
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { term: "trajectory".into() });
        }
        Ok((loss, LossTerms { total: v, trajectory: v, ..Default::default() }))
    }

    fn predict(&self, w: &WindowInput) -> Result<Tensor> {
        let mut g = Graph::new(&self.store);
        let p = self.forward(&mut g, w)?;
        Ok(g.value(p).clone())
    }

    fn method_id(&self) -> String {
        format!("{}-{}", self.config.method.name(), self.config.bands.name())
    }

    fn config_hash(&self) -> Result<String> {
        crate::checkpoint::config_hash(&self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq() -> (Vec<f64>, Tensor) {
        (vec![0.0, 1.0], Tensor::from_rows(&[vec![2.0], vec![4.0]]))
    }

    #[test]
    fn linear_examples() {
        let (t, v) = seq();
        let out = linear_interp(&t, &v, &[0.0, 0.5, 0.25, 1.0, -1.0, 3.0]).unwrap();
        assert_eq!(out.data(), &[2.0, 3.0, 2.5, 4.0, 2.0, 4.0]);
        assert!(linear_interp(&[], &Tensor::zeros(0, 1), &[0.0]).is_err());
    }

    #[test]
    fn nearest_examples() {
        let (t, v) = seq();
        let out = nearest_interp(&t, &v, &[0.5, 0.3, 0.7, 2.0, -0.5]).unwrap();
        assert_eq!(out.data(), &[2.0, 2.0, 4.0, 4.0, 2.0]);
    }

    #[test]
    fn duplicate_times_do_not_divide_by_zero() {
        let t = vec![0.0, 0.5, 0.5, 1.0];
        let v = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![3.0], vec![5.0]]);
        let out = linear_interp(&t, &v, &[0.5, 0.75]).unwrap();
        assert_eq!(out.data(), &[3.0, 4.0]);
    }

    fn cell(input: usize, hidden: usize) -> (ParamStore, GruCell) {
        let mut store = ParamStore::new();
        let c = GruCell::new(&mut store, "r", input, hidden, &mut ChaCha8Rng::seed_from_u64(3));
        (store, c)
    }

    #[test]
    fn decay_step_scales_the_previous_state() {
        let (store, c) = cell(2, 3);
        let mut g = Graph::new(&store);
        let h = g.constant(Tensor::row(&[0.4, -0.8, 1.2]));
        let half = g.constant(Tensor::row(&[0.2, -0.4, 0.6]));
        let x = g.constant(Tensor::row(&[0.3, 0.1]));
        let a = rnn_decay_step(&mut g, &c, h, 2f64.ln(), x).unwrap();
        let b = c.step(&mut g, half, x);
        for (p, q) in g.value(a).data().iter().zip(g.value(b).data()) {
            assert!((p - q).abs() < 1e-15);
        }
        let same = rnn_decay_step(&mut g, &c, h, 0.0, x).unwrap();
        let direct = c.step(&mut g, h, x);
        assert_eq!(g.value(same), g.value(direct));
        assert!(rnn_decay_step(&mut g, &c, h, -0.1, x).is_err());
    }

    #[test]
    fn delta_step_sees_the_gap() {
        let (store, c) = cell(3, 3);
        let mut g = Graph::new(&store);
        let h = g.constant(Tensor::row(&[0.1, 0.2, 0.3]));
        let x = g.constant(Tensor::row(&[0.3, 0.1]));
        let a = rnn_delta_step(&mut g, &c, h, 0.1, x).unwrap();
        let b = rnn_delta_step(&mut g, &c, h, 0.7, x).unwrap();
        assert_ne!(g.value(a), g.value(b));
        let wide = g.constant(Tensor::row(&[0.3, 0.1, 0.0]));
        assert!(rnn_delta_step(&mut g, &c, h, 0.1, wide).is_err());
        assert!(rnn_delta_step(&mut g, &c, h, -1.0, x).is_err());
    }

    fn window() -> WindowInput {
        WindowInput {
            id: 0,
            beam_t: vec![0.2, 0.7],
            beam: Tensor::from_rows(&[vec![0.2, 0.8], vec![0.5, 0.4]]),
            csi_t: vec![0.1, 0.6],
            csi: Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![0.7, 0.3, 0.5]]),
            label_t: vec![0.0, 0.1, 0.65, 1.0],
            labels: Tensor::from_rows(&[vec![1.0, 2.0], vec![1.5, 2.2], vec![2.0, 2.1], vec![2.5, 2.0]]),
        }
    }

    fn config(method: BaselineMethod, bands: Bands) -> BaselineConfig {
        BaselineConfig { method, bands, m_b: 2, m_c: 3, hidden: 4, mlp_hidden: 5 }
    }

    #[test]
    fn output_count_matches_labels() {
        for method in BaselineMethod::ALL {
            for bands in [Bands::Csi, Bands::Beam, Bands::Both] {
                let m = Baseline::new(config(method, bands), 1).unwrap();
                assert_eq!(m.predict(&window()).unwrap().shape(), (4, 2), "{}", m.method_id());
            }
        }
    }

    #[test]
    fn constant_interpolants_give_constant_output() {
        let mut w = window();
        w.beam = Tensor::full(2, 2, 0.3);
        w.csi = Tensor::full(2, 3, 0.6);
        for method in [BaselineMethod::LinearInt, BaselineMethod::NearestInt] {
            let p = Baseline::new(config(method, Bands::Both), 2).unwrap().predict(&w).unwrap();
            for r in 1..p.rows() {
                assert_eq!(p.row_slice(r), p.row_slice(0));
            }
        }
    }

    #[test]
    fn hand_unrolled_decay_matches() {
        let m = Baseline::new(config(BaselineMethod::RnnDecay, Bands::Csi), 4).unwrap();
        let w = window();
        let cell = m.cell_c.as_ref().unwrap();
        let mut g = Graph::new(&m.store);
        let run = |g: &mut Graph<'_>, h: Var, dt: f64, x: &[f64]| {
            let h_tilde = g.scale(h, (-dt).exp());
            let x = g.constant(Tensor::row(x));
            cell.step(g, h_tilde, x)
        };
        let z = g.constant(Tensor::zeros(1, 4));
        let h1 = run(&mut g, z, 0.1, w.csi.row_slice(0));
        let h2 = run(&mut g, h1, 0.5, w.csi.row_slice(1));
        let zero_in = [0.0; 3];
        let rows = [run(&mut g, z, 0.0, &zero_in), run(&mut g, h1, 0.0, &zero_in), run(&mut g, h2, 0.05, &zero_in), run(&mut g, h2, 0.4, &zero_in)];
        let stacked = g.stack_rows(&rows);
        let expect = m.head.forward(&mut g, stacked);
        let got = m.predict(&w).unwrap();
        for (a, b) in got.data().iter().zip(g.value(expect).data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zeroed_beam_branch_reduces_to_csi_only() {
        for method in [BaselineMethod::RnnDecay, BaselineMethod::RnnDelta] {
            let mut both = Baseline::new(config(method, Bands::Both), 5).unwrap();
            let mut single = Baseline::new(config(method, Bands::Csi), 6).unwrap();
            let cb = both.cell_c.clone().unwrap();
            let cs = single.cell_c.clone().unwrap();
            for (a, b) in [(cb.w_input, cs.w_input), (cb.w_hidden, cs.w_hidden), (cb.b_input, cs.b_input), (cb.b_hidden, cs.b_hidden)] {
                *single.store.get_mut(b) = both.store.get(a).clone();
            }
            let first = both.head.layers[0].weight;
            let w0 = both.store.get_mut(first);
            for r in 0..w0.rows() {
                for c in 4..8 {
                    w0.set(r, c, 0.0);
                }
            }
            let w0 = both.store.get(first).clone();
            let mut narrow = Tensor::zeros(w0.rows(), 4);
            for r in 0..w0.rows() {
                narrow.row_slice_mut(r).copy_from_slice(&w0.row_slice(r)[..4]);
            }
            *single.store.get_mut(single.head.layers[0].weight) = narrow;
            for (a, b) in both.head.param_ids().into_iter().zip(single.head.param_ids()).skip(1) {
                *single.store.get_mut(b) = both.store.get(a).clone();
            }
            let w = window();
            assert_eq!(both.predict(&w).unwrap(), single.predict(&w).unwrap());
        }
    }
}
