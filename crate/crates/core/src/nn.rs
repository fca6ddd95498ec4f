//! Layers built on the autodiff tape: dense layers, MLPs and recurrent cells.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, group: &str, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add_uniform(group, &format!("{name}.weight"), fan_out, fan_in, bound, rng);
        let bias = store.add_uniform(group, &format!("{name}.bias"), 1, fan_out, bound, rng);
        Linear { weight, bias, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.linear(x, w, Some(b))
    }
}

/// Feed-forward net with `tanh` between layers and a linear output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new<R: Rng>(store: &mut ParamStore, group: &str, name: &str, dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output widths");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, group, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h);
            if i < last {
                h = g.tanh(h);
            }
        }
        h
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    /// Overwrite every weight and bias with zero.
    pub fn zero(&self, store: &mut ParamStore) {
        for id in self.param_ids() {
            store.get_mut(id).fill(0.0);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

/// Gated recurrent unit; gate order in the stacked matrices is (reset,
/// update, candidate).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GruCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub b_input: ParamId,
    pub b_hidden: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new<R: Rng>(store: &mut ParamStore, group: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden_dim as f64).sqrt();
        GruCell {
            w_input: store.add_uniform(group, "gru.w_input", 3 * hidden_dim, input_dim, k, rng),
            w_hidden: store.add_uniform(group, "gru.w_hidden", 3 * hidden_dim, hidden_dim, k, rng),
            b_input: store.add_uniform(group, "gru.b_input", 1, 3 * hidden_dim, k, rng),
            b_hidden: store.add_uniform(group, "gru.b_hidden", 1, 3 * hidden_dim, k, rng),
            input_dim,
            hidden_dim,
        }
    }

    /// `h = (1 − u) ⊙ n + u ⊙ h̃` with reset `r`, update `u` and candidate
    /// `n = tanh(W_in x + b_in + r ⊙ (W_hn h̃ + b_hn))`. Works row-wise on
    /// stacked inputs.
    pub fn step(&self, g: &mut Graph<'_>, h_tilde: Var, x: Var) -> Var {
        let hd = self.hidden_dim;
        let wi = g.param(self.w_input);
        let bi = g.param(self.b_input);
        let wh = g.param(self.w_hidden);
        let bh = g.param(self.b_hidden);
        let gi = g.linear(x, wi, Some(bi));
        let gh = g.linear(h_tilde, wh, Some(bh));
        let gi_r = g.slice_cols(gi, 0, hd);
        let gi_u = g.slice_cols(gi, hd, hd);
        let gi_n = g.slice_cols(gi, 2 * hd, hd);
        let gh_r = g.slice_cols(gh, 0, hd);
        let gh_u = g.slice_cols(gh, hd, hd);
        let gh_n = g.slice_cols(gh, 2 * hd, hd);
        let r_pre = g.add(gi_r, gh_r);
        let r = g.sigmoid(r_pre);
        let u_pre = g.add(gi_u, gh_u);
        let u = g.sigmoid(u_pre);
        let rh = g.mul(r, gh_n);
        let n_pre = g.add(gi_n, rh);
        let n = g.tanh(n_pre);
        // h = n + u ⊙ (h̃ − n)
        let diff = g.sub(h_tilde, n);
        let ud = g.mul(u, diff);
        g.add(n, ud)
    }
}

/// LSTM cell with a diagonal peephole from the new memory to the output gate.
/// Stacked gate order is (candidate, forget, input, output).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub w_peephole: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(store: &mut ParamStore, group: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden_dim as f64).sqrt();
        LstmCell {
            w_input: store.add_uniform(group, "lstm.w_input", 4 * hidden_dim, input_dim, k, rng),
            w_hidden: store.add_uniform(group, "lstm.w_hidden", 4 * hidden_dim, hidden_dim, k, rng),
            bias: store.add_uniform(group, "lstm.bias", 1, 4 * hidden_dim, k, rng),
            w_peephole: store.add_uniform(group, "lstm.w_peephole", 1, hidden_dim, k, rng),
            input_dim,
            hidden_dim,
        }
    }

    /// Returns `(h, ĉ)`.
    pub fn step(&self, g: &mut Graph<'_>, h_tilde: Var, mem_prev: Var, x: Var) -> (Var, Var) {
        let hd = self.hidden_dim;
        let wi = g.param(self.w_input);
        let wh = g.param(self.w_hidden);
        let b = g.param(self.bias);
        let wco = g.param(self.w_peephole);
        let gx = g.linear(x, wi, Some(b));
        let gh = g.linear(h_tilde, wh, None);
        let pre = g.add(gx, gh);
        let c_pre = g.slice_cols(pre, 0, hd);
        let f_pre = g.slice_cols(pre, hd, hd);
        let i_pre = g.slice_cols(pre, 2 * hd, hd);
        let o_pre = g.slice_cols(pre, 3 * hd, hd);
        let cand = g.tanh(c_pre);
        let forget = g.sigmoid(f_pre);
        let input = g.sigmoid(i_pre);
        let keep = g.mul(forget, mem_prev);
        let add = g.mul(input, cand);
        let mem = g.add(keep, add);
        let peep = g.mul_row(mem, wco);
        let o_full = g.add(o_pre, peep);
        let out_gate = g.sigmoid(o_full);
        let squashed = g.tanh(mem);
        let h = g.mul(squashed, out_gate);
        (h, mem)
    }
}

/// Either recurrent cell behind one interface; the LSTM memory is carried
/// alongside the hidden state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum RecurrentCell {
    Gru(GruCell),
    Lstm(LstmCell),
}

#[derive(Clone, Copy, Debug)]
pub struct CellState {
    pub h: Var,
    pub mem: Option<Var>,
}

impl RecurrentCell {
    pub fn new<R: Rng>(kind: CellKind, store: &mut ParamStore, group: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        match kind {
            CellKind::Gru => RecurrentCell::Gru(GruCell::new(store, group, input_dim, hidden_dim, rng)),
            CellKind::Lstm => RecurrentCell::Lstm(LstmCell::new(store, group, input_dim, hidden_dim, rng)),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            RecurrentCell::Gru(c) => c.hidden_dim,
            RecurrentCell::Lstm(c) => c.hidden_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            RecurrentCell::Gru(c) => c.input_dim,
            RecurrentCell::Lstm(c) => c.input_dim,
        }
    }

    pub fn zero_state(&self, g: &mut Graph<'_>, rows: usize) -> CellState {
        let hd = self.hidden_dim();
        let h = g.constant(Tensor::zeros(rows, hd));
        let mem = match self {
            RecurrentCell::Gru(_) => None,
            RecurrentCell::Lstm(_) => Some(g.constant(Tensor::zeros(rows, hd))),
        };
        CellState { h, mem }
    }

    /// Absorb `x` given the auxiliary hidden state `h_tilde` (and the previous
    /// memory for the LSTM).
    pub fn step(&self, g: &mut Graph<'_>, h_tilde: Var, mem_prev: Option<Var>, x: Var) -> CellState {
        match self {
            RecurrentCell::Gru(c) => CellState { h: c.step(g, h_tilde, x), mem: None },
            RecurrentCell::Lstm(c) => {
                let mem_prev = mem_prev.unwrap_or_else(|| g.constant(Tensor::zeros(1, c.hidden_dim)));
                let (h, mem) = c.step(g, h_tilde, mem_prev, x);
                CellState { h, mem: Some(mem) }
            }
        }
    }
}
