//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of a forward pass in execution order.
//! Node indices are therefore already a topological order, and
//! [`Tape::backward`] walks them in reverse to accumulate adjoints.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, PoolGeom};
use crate::tensor::{nchw, Tensor};

pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Index of a trainable tensor in a parameter store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    /// Value supplied by the caller (quantized, faulted); gradient flows to
    /// `src` unchanged, or only through `keep` sites when a mask is given.
    Substitute {
        src: Var,
        keep: Option<Vec<bool>>,
    },
    WeightedSum(Vec<(Var, f64)>),
    Add(Var, Var),
    Relu(Var),
    Tanh(Var),
    Conv {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    AvgPool {
        x: Var,
        geom: PoolGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Concat(Vec<Var>),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    SumSquares(Var),
    LogSoftmax(Var),
    Entropy(Var),
    Index(Var, usize),
    Row(Var, usize),
    Narrow(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId, t: Tensor) -> Var {
        self.push(t, Op::Param(id))
    }

    /// Replace the value of `src` with `value` while keeping `src`'s gradient
    /// path. Used for straight-through quantization and fault injection.
    pub fn substitute(&mut self, src: Var, value: Tensor, keep: Option<Vec<bool>>) -> Result<Var> {
        if value.shape() != self.value(src).shape() {
            return Err(Error::shape("substitute must preserve shape"));
        }
        if let Some(k) = &keep {
            if k.len() != value.len() {
                return Err(Error::shape("gradient mask length mismatch"));
            }
        }
        Ok(self.push(value, Op::Substitute { src, keep }))
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let first = terms.first().ok_or_else(|| Error::shape("empty weighted sum"))?;
        let mut out = Tensor::zeros(self.value(first.0).shape());
        for &(v, c) in terms {
            let t = self.value(v);
            if t.shape() != out.shape() {
                return Err(Error::shape(format!("weighted sum of {:?} and {:?}", out.shape(), t.shape())));
            }
            for (o, x) in out.data_mut().iter_mut().zip(t.data()) {
                *o += c * x;
            }
        }
        Ok(self.push(out, Op::WeightedSum(terms.to_vec())))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!("add {:?} + {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        self.push(t, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::tanh);
        self.push(t, Op::Tanh(x))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        let xs = nchw(self.value(x))?;
        let ws = nchw(self.value(w))?;
        let [o, cg, kh, kw] = ws;
        if kh != geom.kernel || kw != geom.kernel {
            return Err(Error::shape(format!("kernel {kh}x{kw} vs geometry {}", geom.kernel)));
        }
        if geom.groups == 0 || xs[1] % geom.groups != 0 || o % geom.groups != 0 || xs[1] / geom.groups != cg {
            return Err(Error::shape(format!("conv input {:?} weight {:?} groups {}", xs, ws, geom.groups)));
        }
        let (out, os) = kernels::conv2d_forward(self.value(x).data(), xs, self.value(w).data(), o, &geom);
        let t = Tensor::new(os.to_vec(), out)?;
        Ok(self.push(t, Op::Conv { x, w, geom }))
    }

    /// `x: [n, f]`, `w: [o, f]`, `b: [o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (n, f) = dims2(tx)?;
        let (o, f2) = dims2(tw)?;
        if f != f2 {
            return Err(Error::shape(format!("linear {:?} x {:?}^T", tx.shape(), tw.shape())));
        }
        let mut out = vec![0.0; n * o];
        for i in 0..n {
            let xi = &tx.data()[i * f..(i + 1) * f];
            for j in 0..o {
                let wj = &tw.data()[j * f..(j + 1) * f];
                out[i * o + j] = xi.iter().zip(wj).map(|(a, b)| a * b).sum();
            }
        }
        if let Some(b) = b {
            let tb = self.value(b);
            if tb.len() != o {
                return Err(Error::shape("linear bias length"));
            }
            for i in 0..n {
                for j in 0..o {
                    out[i * o + j] += tb.data()[j];
                }
            }
        }
        let t = Tensor::new(vec![n, o], out)?;
        Ok(self.push(t, Op::Linear { x, w, b }))
    }

    /// Batch norm over (N, H, W) per channel. With `running = None` the batch
    /// statistics are used and returned; otherwise the given mean/var are
    /// treated as constants.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, running: Option<(&[f64], &[f64])>) -> Result<(Var, Option<BnStats>)> {
        let [n, c, h, w] = nchw(self.value(x))?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape("batch norm affine length"));
        }
        let m = (n * h * w) as f64;
        let hw = h * w;
        let xd = self.value(x).data();
        let (mean, var) = match running {
            Some((mu, var)) => (mu.to_vec(), var.to_vec()),
            None => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for s_i in 0..n {
                        s += xd[(s_i * c + ch) * hw..][..hw].iter().sum::<f64>();
                    }
                    let mu = s / m;
                    let mut v = 0.0;
                    for s_i in 0..n {
                        v += xd[(s_i * c + ch) * hw..][..hw].iter().map(|x| (x - mu) * (x - mu)).sum::<f64>();
                    }
                    mean[ch] = mu;
                    var[ch] = v / m;
                }
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for s_i in 0..n {
            for ch in 0..c {
                let base = (s_i * c + ch) * hw;
                for k in base..base + hw {
                    let xh = (xd[k] - mean[ch]) * inv_std[ch];
                    xhat[k] = xh;
                    out[k] = g[ch] * xh + b[ch];
                }
            }
        }
        let shape = self.value(x).shape().to_vec();
        let batch_stats = running.is_none();
        let stats = batch_stats.then_some(BnStats { mean, var });
        let t = Tensor::new(shape, out)?;
        let v = self.push(t, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats });
        Ok((v, stats))
    }

    pub fn avg_pool(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let xs = nchw(self.value(x))?;
        let geom = PoolGeom { kernel, stride, pad };
        let (out, os) = kernels::avg_pool_forward(self.value(x).data(), xs, &geom);
        let t = Tensor::new(os.to_vec(), out)?;
        Ok(self.push(t, Op::AvgPool { x, geom }))
    }

    pub fn max_pool(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let xs = nchw(self.value(x))?;
        let geom = PoolGeom { kernel, stride, pad };
        let (out, argmax, os) = kernels::max_pool_forward(self.value(x).data(), xs, &geom);
        let t = Tensor::new(os.to_vec(), out)?;
        Ok(self.push(t, Op::MaxPool { x, argmax }))
    }

    /// `[n, c, h, w] -> [n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = nchw(self.value(x))?;
        let hw = h * w;
        let xd = self.value(x).data();
        let out = (0..n * c).map(|i| xd[i * hw..(i + 1) * hw].iter().sum::<f64>() / hw as f64).collect();
        let t = Tensor::new(vec![n, c], out)?;
        Ok(self.push(t, Op::GlobalAvgPool(x)))
    }

    /// Channel concatenation of NCHW tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = nchw(self.value(*parts.first().ok_or_else(|| Error::shape("empty concat"))?))?;
        let [n, _, h, w] = first;
        let mut chans = Vec::with_capacity(parts.len());
        for &p in parts {
            let [pn, pc, ph, pw] = nchw(self.value(p))?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape("concat extents differ"));
            }
            chans.push(pc);
        }
        let total: usize = chans.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total * hw);
        for s in 0..n {
            for (&p, &pc) in parts.iter().zip(&chans) {
                out.extend_from_slice(&self.value(p).data()[s * pc * hw..(s + 1) * pc * hw]);
            }
        }
        let t = Tensor::new(vec![n, total, h, w], out)?;
        Ok(self.push(t, Op::Concat(parts.to_vec())))
    }

    /// Mean softmax cross-entropy of `[n, k]` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = dims2(self.value(logits))?;
        if labels.len() != n {
            return Err(Error::shape("label count differs from batch"));
        }
        let ld = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for i in 0..n {
            if labels[i] >= k {
                return Err(Error::LabelOutOfRange { label: labels[i], classes: k });
            }
            let row = &ld[i * k..(i + 1) * k];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            for j in 0..k {
                probs[i * k + j] = (row[j] - mx).exp() / z;
            }
            loss += -(row[labels[i]] - mx - z.ln());
        }
        let t = Tensor::scalar(loss / n as f64);
        Ok(self.push(t, Op::CrossEntropy { logits, labels: labels.to_vec(), probs }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        self.push(t, Op::Sum(x))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).data().iter().map(|v| v * v).sum());
        self.push(t, Op::SumSquares(x))
    }

    /// Log-softmax over all elements (used for single-row logits).
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xd = self.value(x).data();
        let mx = xd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + xd.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        let t = self.value(x).map(|v| v - lse);
        self.push(t, Op::LogSoftmax(x))
    }

    /// Entropy of the categorical distribution with the given logits.
    pub fn entropy(&mut self, x: Var) -> Var {
        let p = softmax(self.value(x).data());
        let h = -p.iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>();
        self.push(Tensor::scalar(h), Op::Entropy(x))
    }

    pub fn index(&mut self, x: Var, i: usize) -> Result<Var> {
        let v = *self.value(x).data().get(i).ok_or_else(|| Error::shape("index out of range"))?;
        Ok(self.push(Tensor::scalar(v), Op::Index(x, i)))
    }

    /// Row `i` of a `[rows, cols]` tensor as `[1, cols]`.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let (r, c) = dims2(self.value(x))?;
        if i >= r {
            return Err(Error::shape("row out of range"));
        }
        let t = Tensor::new(vec![1, c], self.value(x).data()[i * c..(i + 1) * c].to_vec())?;
        Ok(self.push(t, Op::Row(x, i)))
    }

    /// First `len` entries of a `[1, k]` tensor.
    pub fn narrow(&mut self, x: Var, len: usize) -> Result<Var> {
        let (r, c) = dims2(self.value(x))?;
        if r != 1 || len == 0 || len > c {
            return Err(Error::shape("narrow expects [1, k] and 0 < len <= k"));
        }
        let t = Tensor::new(vec![1, len], self.value(x).data()[..len].to_vec())?;
        Ok(self.push(t, Op::Narrow(x, len)))
    }

    /// Adjoints of every node with respect to the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::precondition("loss variable is not on this tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward needs a scalar loss"));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj)?;
            adj[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { adj, params })
    }

    fn propagate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Substitute { src, keep } => {
                let mut d = g.clone();
                if let Some(keep) = keep {
                    for (v, &k) in d.data_mut().iter_mut().zip(keep) {
                        if !k {
                            *v = 0.0;
                        }
                    }
                }
                accumulate(adj, *src, d);
            }
            Op::WeightedSum(terms) => {
                for &(v, c) in terms {
                    accumulate(adj, v, g.map(|x| x * c));
                }
            }
            Op::Add(a, b) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.clone());
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let d = gd.iter().zip(xv).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                accumulate(adj, *x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Tanh(x) => {
                let yv = self.nodes[i].value.data();
                let d = gd.iter().zip(yv).map(|(g, y)| g * (1.0 - y * y)).collect();
                accumulate(adj, *x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Conv { x, w, geom } => {
                let tx = self.value(*x);
                let tw = self.value(*w);
                let o = tw.shape()[0];
                let (dx, dw) = kernels::conv2d_backward(tx.data(), nchw(tx)?, tw.data(), o, geom, gd);
                accumulate(adj, *x, Tensor::new(tx.shape().to_vec(), dx)?);
                accumulate(adj, *w, Tensor::new(tw.shape().to_vec(), dw)?);
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (n, f) = dims2(tx)?;
                let o = tw.shape()[0];
                let mut dx = vec![0.0; n * f];
                let mut dw = vec![0.0; o * f];
                for s in 0..n {
                    let xs = &tx.data()[s * f..(s + 1) * f];
                    for j in 0..o {
                        let gv = gd[s * o + j];
                        if gv == 0.0 {
                            continue;
                        }
                        let wj = &tw.data()[j * f..(j + 1) * f];
                        for k in 0..f {
                            dx[s * f + k] += gv * wj[k];
                            dw[j * f + k] += gv * xs[k];
                        }
                    }
                }
                accumulate(adj, *x, Tensor::new(tx.shape().to_vec(), dx)?);
                accumulate(adj, *w, Tensor::new(tw.shape().to_vec(), dw)?);
                if let Some(b) = b {
                    let mut db = vec![0.0; o];
                    for s in 0..n {
                        for j in 0..o {
                            db[j] += gd[s * o + j];
                        }
                    }
                    accumulate(adj, *b, Tensor::new(self.value(*b).shape().to_vec(), db)?);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let [n, c, h, w] = nchw(self.value(*x))?;
                let hw = h * w;
                let m = (n * hw) as f64;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * hw;
                        for k in base..base + hw {
                            dgamma[ch] += gd[k] * xhat[k];
                            dbeta[ch] += gd[k];
                        }
                    }
                }
                let mut dx = vec![0.0; gd.len()];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * hw;
                        let scale = gam[ch] * inv_std[ch];
                        for k in base..base + hw {
                            dx[k] = if *batch_stats { scale * (gd[k] - dbeta[ch] / m - xhat[k] * dgamma[ch] / m) } else { scale * gd[k] };
                        }
                    }
                }
                accumulate(adj, *x, Tensor::new(g.shape().to_vec(), dx)?);
                accumulate(adj, *gamma, Tensor::new(self.value(*gamma).shape().to_vec(), dgamma)?);
                accumulate(adj, *beta, Tensor::new(self.value(*beta).shape().to_vec(), dbeta)?);
            }
            Op::AvgPool { x, geom } => {
                let tx = self.value(*x);
                let dx = kernels::avg_pool_backward(nchw(tx)?, geom, gd);
                accumulate(adj, *x, Tensor::new(tx.shape().to_vec(), dx)?);
            }
            Op::MaxPool { x, argmax } => {
                let tx = self.value(*x);
                let mut dx = vec![0.0; tx.len()];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src] += gd[o];
                }
                accumulate(adj, *x, Tensor::new(tx.shape().to_vec(), dx)?);
            }
            Op::GlobalAvgPool(x) => {
                let tx = self.value(*x);
                let [n, c, h, w] = nchw(tx)?;
                let hw = h * w;
                let mut dx = vec![0.0; tx.len()];
                for p in 0..n * c {
                    let v = gd[p] / hw as f64;
                    dx[p * hw..(p + 1) * hw].fill(v);
                }
                accumulate(adj, *x, Tensor::new(tx.shape().to_vec(), dx)?);
            }
            Op::Concat(parts) => {
                let [n, total, h, w] = nchw(g)?;
                let hw = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).shape()[1];
                    let mut d = Vec::with_capacity(n * pc * hw);
                    for s in 0..n {
                        d.extend_from_slice(&gd[(s * total + offset) * hw..][..pc * hw]);
                    }
                    accumulate(adj, p, Tensor::new(self.value(p).shape().to_vec(), d)?);
                    offset += pc;
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = probs.len() / labels.len();
                let scale = gd[0] / labels.len() as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * k + l] -= scale;
                }
                accumulate(adj, *logits, Tensor::new(self.value(*logits).shape().to_vec(), d)?);
            }
            Op::Sum(x) => {
                accumulate(adj, *x, Tensor::full(self.value(*x).shape(), gd[0]));
            }
            Op::SumSquares(x) => {
                accumulate(adj, *x, self.value(*x).map(|v| 2.0 * v * gd[0]));
            }
            Op::LogSoftmax(x) => {
                let y = self.nodes[i].value.data();
                let total: f64 = gd.iter().sum();
                let d = gd.iter().zip(y).map(|(g, y)| g - y.exp() * total).collect();
                accumulate(adj, *x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Entropy(x) => {
                let p = softmax(self.value(*x).data());
                let h = self.nodes[i].value.data()[0];
                let d = p.iter().map(|&q| if q > 0.0 { -q * (q.ln() + h) * gd[0] } else { 0.0 }).collect();
                accumulate(adj, *x, Tensor::new(self.value(*x).shape().to_vec(), d)?);
            }
            Op::Index(x, k) => {
                let mut d = Tensor::zeros(self.value(*x).shape());
                d.data_mut()[*k] = gd[0];
                accumulate(adj, *x, d);
            }
            Op::Row(x, r) => {
                let mut d = Tensor::zeros(self.value(*x).shape());
                let c = gd.len();
                d.data_mut()[r * c..(r + 1) * c].copy_from_slice(gd);
                accumulate(adj, *x, d);
            }
            Op::Narrow(x, len) => {
                let mut d = Tensor::zeros(self.value(*x).shape());
                d.data_mut()[..*len].copy_from_slice(gd);
                accumulate(adj, *x, d);
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match &mut adj[v.0] {
        Some(t) => t.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

fn dims2(t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [a, b] => Ok((a, b)),
        ref s => Err(Error::shape(format!("expected a matrix, got {s:?}"))),
    }
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Adjoints from one backward pass.
#[derive(Debug)]
pub struct Gradients {
    adj: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.adj.get(v.0).and_then(|a| a.as_ref())
    }

    /// Gradients of every parameter that reached the loss, summed over all
    /// places the parameter was loaded.
    pub fn params(&self) -> BTreeMap<ParamId, Tensor> {
        let mut out: BTreeMap<ParamId, Tensor> = BTreeMap::new();
        for &(id, node) in &self.params {
            if let Some(g) = &self.adj[node] {
                match out.get_mut(&id) {
                    Some(t) => t.add_assign(g),
                    None => {
                        out.insert(id, g.clone());
                    }
                }
            }
        }
        out
    }
}
