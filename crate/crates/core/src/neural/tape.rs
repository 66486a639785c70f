//! Reverse-mode differentiation over 2-D `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter as
//! borrowed leaves, so building a tape never copies weights. [`Tape::backward`]
//! walks the record in reverse and returns one gradient slot per parameter.

use std::borrow::Cow;

use ndarray::{concatenate, s, Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct GruCache {
    // per time step, in processing order: (r, z, n, gh_n, h_prev)
    r: Mat,
    z: Mat,
    n: Mat,
    gh_n: Mat,
    h_prev: Mat,
}

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ShiftRows(Var, isize),
    BroadcastRows(Var),
    Gru {
        gx: Var,
        wh: Var,
        bh: Var,
        reverse: bool,
        cache: Box<GruCache>,
    },
    Mse {
        pred: Var,
        target: Mat,
        mask: Option<Mat>,
        denom: f64,
    },
    Sum(Vec<Var>),
}

struct Node<'a> {
    value: Cow<'a, Mat>,
    op: Op,
    needs_grad: bool,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gradient per parameter, `None` where the loss does not depend on it.
pub type Grads = Vec<Option<Mat>>;

pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node<'a>>,
    param_vars: Vec<Option<Var>>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    fn push(&mut self, value: Cow<'a, Mat>, op: Op, needs_grad: bool) -> Var {
        debug_assert!(
            value.iter().all(|v| v.is_finite()),
            "non-finite value produced by node {}",
            self.nodes.len()
        );
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Mat, op: Op, parents: &[Var]) -> Var {
        let needs = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(Cow::Owned(value), op, needs)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Constant input, never differentiated.
    pub fn input(&mut self, m: Mat) -> Var {
        self.push(Cow::Owned(m), Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let store = self.store;
        let v = self.push(Cow::Borrowed(store.value(id)), Op::Param(id), true);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.derived(v, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.derived(v, Op::MatMulT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = self.value(a) + self.value(b);
        self.derived(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let v = self.value(a) - self.value(b);
        self.derived(v, Op::Sub(a, b), &[a, b])
    }

    /// `a (m×n) + row (1×n)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1);
        assert_eq!(self.shape(a).1, self.shape(row).1, "add_row width mismatch");
        let v = self.value(a) + self.value(row);
        self.derived(v, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = self.value(a) * self.value(b);
        self.derived(v, Op::Mul(a, b), &[a, b])
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1);
        assert_eq!(self.shape(a).1, self.shape(row).1, "mul_row width mismatch");
        let v = self.value(a) * self.value(row);
        self.derived(v, Op::MulRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.derived(v, Op::Scale(a, k), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.derived(v, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.derived(v, Op::Tanh(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.derived(v, Op::Gelu(a), &[a])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row /= s;
        }
        self.derived(v, Op::Softmax(a), &[a])
    }

    /// Row-wise normalization to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            row.mapv_inplace(|x| x - mean);
            let var = row.iter().map(|x| x * x).sum::<f64>() / n;
            row /= (var + LN_EPS).sqrt();
        }
        self.derived(v, Op::LayerNorm(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.derived(v, Op::Transpose(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        self.derived(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.derived(v, Op::SliceCols(a, start), &[a])
    }

    /// `out[t] = a[t - shift]`, zero outside the sequence.
    pub fn shift_rows(&mut self, a: Var, shift: isize) -> Var {
        let src = self.value(a);
        let (t, c) = src.dim();
        let mut v = Array2::zeros((t, c));
        let k = shift.unsigned_abs().min(t);
        if shift >= 0 {
            v.slice_mut(s![k.., ..]).assign(&src.slice(s![..t - k, ..]));
        } else {
            v.slice_mut(s![..t - k, ..]).assign(&src.slice(s![k.., ..]));
        }
        self.derived(v, Op::ShiftRows(a, shift), &[a])
    }

    /// Repeats a `1×n` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        assert_eq!(self.shape(a).0, 1);
        let v = self.value(a).broadcast((rows, self.shape(a).1)).unwrap().to_owned();
        self.derived(v, Op::BroadcastRows(a), &[a])
    }

    /// GRU recurrence over pre-computed input gates `gx = x·W_ih + b_ih`
    /// (`T × 3H`, gate order r|z|n). Returns hidden states `T × H`, row `t`
    /// holding the state after consuming frame `t` in the scan direction.
    pub fn gru(&mut self, gx: Var, wh: Var, bh: Var, reverse: bool) -> Var {
        let (t_len, three_h) = self.shape(gx);
        let h = three_h / 3;
        assert_eq!(self.shape(wh), (h, three_h), "gru recurrent weight shape");
        assert_eq!(self.shape(bh), (1, three_h), "gru recurrent bias shape");
        let gxv = self.value(gx);
        let whv = self.value(wh);
        let bhv = self.value(bh);
        let mut out = Array2::zeros((t_len, h));
        let mut cache = GruCache {
            r: Array2::zeros((t_len, h)),
            z: Array2::zeros((t_len, h)),
            n: Array2::zeros((t_len, h)),
            gh_n: Array2::zeros((t_len, h)),
            h_prev: Array2::zeros((t_len, h)),
        };
        let mut state = vec![0.0; h];
        let mut gh = vec![0.0; three_h];
        for step in 0..t_len {
            let t = if reverse { t_len - 1 - step } else { step };
            for (j, g) in gh.iter_mut().enumerate() {
                let mut acc = bhv[[0, j]];
                for (i, s) in state.iter().enumerate() {
                    acc += s * whv[[i, j]];
                }
                *g = acc;
            }
            for j in 0..h {
                let r = sigmoid(gxv[[t, j]] + gh[j]);
                let z = sigmoid(gxv[[t, h + j]] + gh[h + j]);
                let n = (gxv[[t, 2 * h + j]] + r * gh[2 * h + j]).tanh();
                cache.r[[step, j]] = r;
                cache.z[[step, j]] = z;
                cache.n[[step, j]] = n;
                cache.gh_n[[step, j]] = gh[2 * h + j];
                cache.h_prev[[step, j]] = state[j];
            }
            for j in 0..h {
                let z = cache.z[[step, j]];
                state[j] = (1.0 - z) * cache.n[[step, j]] + z * state[j];
                out[[t, j]] = state[j];
            }
        }
        self.derived(
            out,
            Op::Gru {
                gx,
                wh,
                bh,
                reverse,
                cache: Box::new(cache),
            },
            &[gx, wh, bh],
        )
    }

    /// `Σ mask·(pred − target)² / Σ mask`, or the plain mean without a mask.
    pub fn mse(&mut self, pred: Var, target: Mat, mask: Option<Mat>) -> Var {
        let p = self.value(pred);
        assert_eq!(p.dim(), target.dim(), "mse shape mismatch");
        let (num, denom) = match &mask {
            Some(m) => {
                assert_eq!(m.dim(), target.dim(), "mse mask shape mismatch");
                let mut num = 0.0;
                Zip::from(p).and(&target).and(m).for_each(|&a, &b, &w| num += w * (a - b) * (a - b));
                (num, m.sum())
            }
            None => (
                Zip::from(p).and(&target).fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b)),
                target.len() as f64,
            ),
        };
        let value = if denom > 0.0 { num / denom } else { 0.0 };
        self.derived(
            Array2::from_elem((1, 1), value),
            Op::Mse {
                pred,
                target,
                mask,
                denom,
            },
            &[pred],
        )
    }

    /// Sum of `1×1` scalars.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let v: f64 = parts.iter().map(|p| self.scalar(*p)).sum();
        self.derived(Array2::from_elem((1, 1), v), Op::Sum(parts.to_vec()), parts)
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out: Grads = vec![None; self.store.len()];

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let val = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out[id.0] = Some(g),
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if self.nodes[b.0].needs_grad {
                        acc(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        acc(&mut grads, *a, g.dot(self.value(*b)));
                    }
                    if self.nodes[b.0].needs_grad {
                        acc(&mut grads, *b, g.t().dot(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * self.value(*b));
                    acc(&mut grads, *b, g * self.value(*a));
                }
                Op::MulRow(a, row) => {
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g * self.value(*row));
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::Sigmoid(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&**val).for_each(|d, &y| *d *= y * (1.0 - y));
                    acc(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&**val).for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(&mut grads, *a, d);
                }
                Op::Gelu(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| *d *= gelu_grad(x));
                    acc(&mut grads, *a, d);
                }
                Op::Softmax(a) => {
                    let mut d = g;
                    Zip::from(d.rows_mut()).and(val.rows()).for_each(|mut dr, yr| {
                        let dot: f64 = dr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum();
                        Zip::from(&mut dr).and(&yr).for_each(|d, &y| *d = y * (*d - dot));
                    });
                    acc(&mut grads, *a, d);
                }
                Op::LayerNorm(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    Zip::from(d.rows_mut())
                        .and(val.rows())
                        .and(x.rows())
                        .for_each(|mut dr, yr, xr| {
                            let n = xr.len() as f64;
                            let mean = xr.sum() / n;
                            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                            let inv = 1.0 / (var + LN_EPS).sqrt();
                            let mean_d = dr.sum() / n;
                            let mean_dy = dr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                            Zip::from(&mut dr)
                                .and(&yr)
                                .for_each(|d, &y| *d = inv * (*d - mean_d - y * mean_dy));
                        });
                    acc(&mut grads, *a, d);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        if self.nodes[p.0].needs_grad {
                            acc(&mut grads, *p, g.slice(s![.., col..col + w]).to_owned());
                        }
                        col += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::zeros(self.shape(*a));
                    let w = g.ncols();
                    d.slice_mut(s![.., *start..*start + w]).assign(&g);
                    acc(&mut grads, *a, d);
                }
                Op::ShiftRows(a, shift) => {
                    let (t, c) = g.dim();
                    let mut d = Array2::zeros((t, c));
                    let k = shift.unsigned_abs().min(t);
                    if *shift >= 0 {
                        d.slice_mut(s![..t - k, ..]).assign(&g.slice(s![k.., ..]));
                    } else {
                        d.slice_mut(s![k.., ..]).assign(&g.slice(s![..t - k, ..]));
                    }
                    acc(&mut grads, *a, d);
                }
                Op::BroadcastRows(a) => acc(&mut grads, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0))),
                Op::Gru {
                    gx,
                    wh,
                    bh,
                    reverse,
                    cache,
                } => {
                    let (d_gx, d_wh, d_bh) = gru_backward(&g, self.value(*wh), cache, *reverse);
                    acc(&mut grads, *gx, d_gx);
                    acc(&mut grads, *wh, d_wh);
                    acc(&mut grads, *bh, d_bh);
                }
                Op::Mse {
                    pred,
                    target,
                    mask,
                    denom,
                } => {
                    if *denom > 0.0 {
                        let k = 2.0 * g[[0, 0]] / denom;
                        let mut d = self.value(*pred) - target;
                        if let Some(m) = mask {
                            d *= m;
                        }
                        d *= k;
                        acc(&mut grads, *pred, d);
                    }
                }
                Op::Sum(parts) => {
                    for p in parts {
                        acc(&mut grads, *p, g.clone());
                    }
                }
            }
        }
        out
    }
}

fn gru_backward(g: &Mat, wh: &Mat, c: &GruCache, reverse: bool) -> (Mat, Mat, Mat) {
    let (t_len, h) = g.dim();
    let mut d_gx = Array2::zeros((t_len, 3 * h));
    let mut d_wh = Array2::zeros((h, 3 * h));
    let mut d_bh = Array2::zeros((1, 3 * h));
    let mut dh_next = vec![0.0; h];
    let mut d_gh = vec![0.0; 3 * h];
    for step in (0..t_len).rev() {
        let t = if reverse { t_len - 1 - step } else { step };
        for j in 0..h {
            let dh = g[[t, j]] + dh_next[j];
            let (r, z, n) = (c.r[[step, j]], c.z[[step, j]], c.n[[step, j]]);
            let hp = c.h_prev[[step, j]];
            let dn = dh * (1.0 - z);
            let dz = dh * (hp - n);
            dh_next[j] = dh * z;
            let da_n = dn * (1.0 - n * n);
            let dr = da_n * c.gh_n[[step, j]];
            let da_r = dr * r * (1.0 - r);
            let da_z = dz * z * (1.0 - z);
            d_gx[[t, j]] = da_r;
            d_gx[[t, h + j]] = da_z;
            d_gx[[t, 2 * h + j]] = da_n;
            d_gh[j] = da_r;
            d_gh[h + j] = da_z;
            d_gh[2 * h + j] = da_n * r;
        }
        for (k, &dg) in d_gh.iter().enumerate() {
            d_bh[[0, k]] += dg;
            for i in 0..h {
                d_wh[[i, k]] += c.h_prev[[step, i]] * dg;
            }
        }
        for (i, dh) in dh_next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &dg) in d_gh.iter().enumerate() {
                acc += dg * wh[[i, k]];
            }
            *dh += acc;
        }
    }
    (d_gx, d_wh, d_bh)
}
