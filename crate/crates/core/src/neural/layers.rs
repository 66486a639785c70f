use ndarray::Array2;
use rand::Rng;

use super::params::{Builder, ParamId};
use super::tape::{Mat, Tape, Var};

/// `x · W + b`, with `W: in × out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(b: &mut Builder<R>, name: &str, din: usize, dout: usize) -> Self {
        b.scoped(name, |b| Linear {
            w: b.weight("w", din, dout),
            b: b.constant("b", 1, dout, 0.0),
        })
    }

    /// Weight and bias initialized to zero.
    pub fn zeros<R: Rng>(b: &mut Builder<R>, name: &str, din: usize, dout: usize) -> Self {
        b.scoped(name, |b| Linear {
            w: b.constant("w", din, dout, 0.0),
            b: b.constant("b", 1, dout, 0.0),
        })
    }

    /// Small random weight, constant bias; used for FiLM scale heads.
    pub fn with_bias<R: Rng>(b: &mut Builder<R>, name: &str, din: usize, dout: usize, std: f64, bias: f64) -> Self {
        b.scoped(name, |b| Linear {
            w: b.normal("w", din, dout, std),
            b: b.constant("b", 1, dout, bias),
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }
}

/// Layer normalization with learned per-feature scale and shift.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<R: Rng>(b: &mut Builder<R>, name: &str, dim: usize) -> Self {
        b.scoped(name, |b| LayerNorm {
            gain: b.constant("gain", 1, dim, 1.0),
            bias: b.constant("bias", 1, dim, 0.0),
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let n = tape.layer_norm(x);
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        let y = tape.mul_row(n, g);
        tape.add_row(y, b)
    }
}

/// Feature-wise linear modulation: `x ⊙ γ + β`.
///
/// `γ`/`β` either match `x` exactly or are single rows broadcast over time.
pub fn film(tape: &mut Tape, x: Var, gamma: Var, beta: Var) -> Var {
    let row = tape.shape(gamma).0 == 1 && tape.shape(x).0 != 1;
    if row {
        let y = tape.mul_row(x, gamma);
        tape.add_row(y, beta)
    } else {
        let y = tape.mul(x, gamma);
        tape.add(y, beta)
    }
}

/// One direction of a GRU layer.
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    pub input: Linear,
    pub wh: ParamId,
    pub bh: ParamId,
}

impl GruCell {
    pub fn new<R: Rng>(b: &mut Builder<R>, name: &str, din: usize, hidden: usize) -> Self {
        b.scoped(name, |b| {
            let std = (1.0 / hidden as f64).sqrt();
            GruCell {
                input: Linear::new(b, "in", din, 3 * hidden),
                wh: b.normal("wh", hidden, 3 * hidden, std),
                bh: b.constant("bh", 1, 3 * hidden, 0.0),
            }
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, reverse: bool) -> Var {
        let gx = self.input.forward(tape, x);
        let wh = tape.param(self.wh);
        let bh = tape.param(self.bh);
        tape.gru(gx, wh, bh, reverse)
    }
}

/// Stack of bidirectional GRU layers; output `T × 2H`.
#[derive(Debug, Clone)]
pub struct BiGru {
    pub layers: Vec<(GruCell, GruCell)>,
}

impl BiGru {
    pub fn new<R: Rng>(b: &mut Builder<R>, name: &str, din: usize, hidden: usize, n_layers: usize) -> Self {
        b.scoped(name, |b| BiGru {
            layers: (0..n_layers)
                .map(|l| {
                    let d = if l == 0 { din } else { 2 * hidden };
                    (
                        GruCell::new(b, &format!("l{l}.fwd"), d, hidden),
                        GruCell::new(b, &format!("l{l}.bwd"), d, hidden),
                    )
                })
                .collect(),
        })
    }

    pub fn forward(&self, tape: &mut Tape, mut x: Var) -> Var {
        for (f, r) in &self.layers {
            let hf = f.forward(tape, x, false);
            let hr = r.forward(tape, x, true);
            x = tape.concat_cols(&[hf, hr]);
        }
        x
    }
}

/// Pre-norm transformer encoder block without positional encoding.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub heads: usize,
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl TransformerBlock {
    pub fn new<R: Rng>(b: &mut Builder<R>, name: &str, dim: usize, heads: usize, ffn: usize) -> Self {
        assert!(heads > 0 && dim % heads == 0, "model width must divide by head count");
        b.scoped(name, |b| TransformerBlock {
            heads,
            ln1: LayerNorm::new(b, "ln1", dim),
            q: Linear::new(b, "q", dim, dim),
            k: Linear::new(b, "k", dim, dim),
            v: Linear::new(b, "v", dim, dim),
            o: Linear::new(b, "o", dim, dim),
            ln2: LayerNorm::new(b, "ln2", dim),
            ff1: Linear::new(b, "ff1", dim, ffn),
            ff2: Linear::new(b, "ff2", ffn, dim),
        })
    }

    /// Attention weights (`T × T` per head) for inspection.
    pub fn attention_weights(&self, tape: &mut Tape, x: Var) -> Vec<Var> {
        self.attend(tape, x).1
    }

    fn attend(&self, tape: &mut Tape, x: Var) -> (Var, Vec<Var>) {
        let a = self.ln1.forward(tape, x);
        let q = self.q.forward(tape, a);
        let k = self.k.forward(tape, a);
        let v = self.v.forward(tape, a);
        let dim = tape.shape(q).1;
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = tape.slice_cols(q, lo, hi);
            let kh = tape.slice_cols(k, lo, hi);
            let vh = tape.slice_cols(v, lo, hi);
            let scores = tape.matmul_t(qh, kh);
            let scores = tape.scale(scores, scale);
            let p = tape.softmax(scores);
            weights.push(p);
            outs.push(tape.matmul(p, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
        (self.o.forward(tape, cat), weights)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let (attn, _) = self.attend(tape, x);
        let x = tape.add(x, attn);
        let f = self.ln2.forward(tape, x);
        let f = self.ff1.forward(tape, f);
        let f = tape.gelu(f);
        let f = self.ff2.forward(tape, f);
        tape.add(x, f)
    }
}

/// Sinusoidal embedding of a diffusion step, `1 × dim`.
pub fn step_embedding(step: usize, dim: usize) -> Mat {
    let half = (dim / 2).max(1);
    let denom = (half.max(2) - 1) as f64;
    let mut out = Array2::zeros((1, dim));
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / denom).exp();
        let arg = step as f64 * freq;
        out[[0, i]] = arg.sin();
        if half + i < dim {
            out[[0, half + i]] = arg.cos();
        }
    }
    out
}

/// Kernel-3 non-causal convolution along time as `[x(t−1) | x(t) | x(t+1)] · W`.
#[derive(Debug, Clone, Copy)]
pub struct Conv3 {
    pub lin: Linear,
}

impl Conv3 {
    pub fn new<R: Rng>(b: &mut Builder<R>, name: &str, din: usize, dout: usize) -> Self {
        Conv3 {
            lin: Linear::new(b, name, 3 * din, dout),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let prev = tape.shift_rows(x, 1);
        let next = tape.shift_rows(x, -1);
        let cat = tape.concat_cols(&[prev, x, next]);
        self.lin.forward(tape, cat)
    }
}
