use rand::Rng;

use super::graph::{Graph, Var};
use super::param::{Init, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Weight `[in, out]` and optional bias `[1, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_init(format!("{name}.w"), &[in_dim, out_dim], Init::GlorotUniform, rng);
        let bias = bias.then(|| store.add_init(format!("{name}.b"), &[1, out_dim], Init::Zeros, rng));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.linear(x, w, b)
    }
}

/// A single-direction LSTM with gate order input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w_ih: store.add_init(format!("{name}.w_ih"), &[in_dim, 4 * hidden], Init::GlorotUniform, rng),
            w_hh: store.add_init(format!("{name}.w_hh"), &[hidden, 4 * hidden], Init::GlorotUniform, rng),
            bias: store.add_init(format!("{name}.b"), &[1, 4 * hidden], Init::Zeros, rng),
            in_dim,
            hidden,
        }
    }

    /// One step from pre-computed input gates `x W_ih` (`[1, 4h]`).
    fn step_from_gates(&self, g: &mut Graph, x_gates: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let w_hh = g.param(self.w_hh);
        let b = g.param(self.bias);
        let rec = g.matmul(h, w_hh)?;
        let pre = g.add(x_gates, rec)?;
        let pre = g.add_row(pre, b)?;
        let n = self.hidden;
        let i = g.slice_cols(pre, 0, n)?;
        let f = g.slice_cols(pre, n, 2 * n)?;
        let cand = g.slice_cols(pre, 2 * n, 3 * n)?;
        let o = g.slice_cols(pre, 3 * n, 4 * n)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.hadamard(f, c)?;
        let write = g.hadamard(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next);
        let h_next = g.hadamard(o, squashed)?;
        Ok((h_next, c_next))
    }

    /// `x_t` is `[1, in]`, `h`/`c` are `[1, hidden]`.
    pub fn cell(&self, g: &mut Graph, x_t: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let w_ih = g.param(self.w_ih);
        let gates = g.matmul(x_t, w_ih)?;
        self.step_from_gates(g, gates, h, c)
    }

    /// Runs over the rows of `seq` (`[T, in]`), in reverse when asked.
    /// Returns the hidden state at every position (in input order) and the
    /// final state of the pass.
    pub fn run(&self, g: &mut Graph, seq: Var, reverse: bool) -> Result<(Vec<Var>, Var)> {
        let steps = g.value(seq).rows();
        if g.value(seq).cols() != self.in_dim {
            return Err(Error::Dimension {
                op: "lstm",
                left: g.shape(seq).to_vec(),
                right: vec![self.in_dim],
            });
        }
        let w_ih = g.param(self.w_ih);
        let gates = g.matmul(seq, w_ih)?;
        let zero = super::tensor::Tensor::zeros(&[1, self.hidden]);
        let mut h = g.input(zero.clone());
        let mut c = g.input(zero);
        let mut hiddens = vec![h; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let x_gates = g.slice_rows(gates, t, t + 1)?;
            (h, c) = self.step_from_gates(g, x_gates, h, c)?;
            hiddens[t] = h;
        }
        Ok((hiddens, h))
    }
}

/// Bidirectional LSTM whose output width is split evenly across directions.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
    pub out_dim: usize,
}

impl BiLstm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        if out_dim == 0 || !out_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "BiLSTM output width must be even, got {out_dim}"
            )));
        }
        let half = out_dim / 2;
        Ok(Self {
            forward: Lstm::new(store, &format!("{name}.fwd"), in_dim, half, rng),
            backward: Lstm::new(store, &format!("{name}.bwd"), in_dim, half, rng),
            out_dim,
        })
    }

    /// `seq` is `[T, in]`. Returns `[T, out]` hidden states and the `[1, out]`
    /// concatenation of both directions' last states.
    pub fn encode(&self, g: &mut Graph, seq: Var) -> Result<(Var, Var)> {
        let (fwd, fwd_last) = self.forward.run(g, seq, false)?;
        let (bwd, bwd_last) = self.backward.run(g, seq, true)?;
        let rows = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| g.concat_cols(&[f, b]))
            .collect::<Result<Vec<_>>>()?;
        let hiddens = g.concat_rows(&rows)?;
        let final_state = g.concat_cols(&[fwd_last, bwd_last])?;
        Ok((hiddens, final_state))
    }
}

/// `-ln p[label]` for a probability row `p`.
pub fn cross_entropy(g: &mut Graph, probs: Var, label: usize) -> Result<Var> {
    let p = g.pick(probs, label)?;
    let lp = g.ln(p);
    Ok(g.scale(lp, -1.0))
}

/// `max(0, 1 + s_n - s_p)`.
pub fn hinge_pair(g: &mut Graph, positive: Var, negative: Var) -> Result<Var> {
    let diff = g.sub(negative, positive)?;
    let shifted = g.add_scalar(diff, 1.0);
    Ok(g.relu(shifted))
}

/// Mean squared error over all elements.
pub fn mse(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let diff = g.sub(pred, target)?;
    let sq = g.hadamard(diff, diff)?;
    Ok(g.mean(sq))
}
