//! The autodiff tape and its operations.
//!
//! Shapes are plain dimension lists. Batched layouts: dense inputs are
//! `[rows, features]`, 1D convolutions take `[batch, channels, length]`.

use crate::error::{arg_err, shape_err};
use crate::params::{ParamId, ParamStore};
use crate::{NnError, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        rows: usize,
        inp: usize,
        out: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Relu(Var),
    Reshape(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: ConvDims,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: Var,
        len: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        cols: usize,
    },
    Softmax {
        x: Var,
        cols: usize,
    },
    Concat {
        a: Var,
        b: Var,
        rows: usize,
        ca: usize,
        cb: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
        cols: usize,
    },
    SegmentMean {
        x: Var,
        seg: Vec<usize>,
        counts: Vec<usize>,
        cols: usize,
    },
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
        cols: usize,
    },
    InfoNce {
        u: Var,
        v: Var,
        tau: Var,
        n: usize,
        d: usize,
        sims: Vec<f64>,
        p_row: Vec<f64>,
        p_col: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    Mae {
        pred: Var,
        target: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
        classes: usize,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    batch: usize,
    cin: usize,
    len: usize,
    cout: usize,
    k: usize,
    stride: usize,
    padding: usize,
    lout: usize,
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
}

/// One forward pass worth of recorded operations.
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

/// Gradients of a scalar with respect to every node and parameter.
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params[id.index()].as_deref()
    }

    pub fn var(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].as_deref()
    }

    /// Per-parameter gradients indexed by [`ParamId`]; `None` where the
    /// parameter did not take part in the computation.
    pub fn into_param_grads(self) -> Vec<Option<Vec<f64>>> {
        self.params
    }
}

/// Sum that is independent of input order: values are sorted first.
pub(crate) fn sorted_sum(vals: &mut [f64]) -> f64 {
    vals.sort_by(f64::total_cmp);
    vals.iter().sum()
}

/// `(m, ln Σ exp(v − m))` with `m = max(v)`. The second part is computed
/// as `ln_1p` of the non-maximal terms so it stays accurate when one entry
/// dominates.
fn log_sum_exp_parts(vals: &[f64]) -> (f64, f64) {
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = vals.iter().map(|v| (v - m).exp()).collect();
    exps.sort_by(f64::total_cmp);
    exps.pop();
    (m, exps.iter().sum::<f64>().ln_1p())
}

/// `ln Σ exp(v) − target`.
fn neg_log_softmax(vals: &[f64], target: f64) -> f64 {
    let (m, rest) = log_sum_exp_parts(vals);
    (m - target) + rest
}

fn dims2(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(shape_err(
            op,
            format!("expected a 2-d input, got {shape:?}"),
        )),
    }
}

fn dims3(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [b, c, l] => Ok((*b, *c, *l)),
        _ => Err(shape_err(
            op,
            format!("expected a 3-d input, got {shape:?}"),
        )),
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node { value, shape, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        let shape = t.shape().to_vec();
        Ok(self.push(t.into_data(), shape, Op::Leaf))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let t = self.store.get(id);
        let v = self.push(t.data().to_vec(), t.shape().to_vec(), Op::Leaf);
        self.param_vars[id.index()] = Some(v);
        v
    }

    /// `x · w + b` for `x: [rows, inp]`, `w: [inp, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (rows, inp) = dims2("linear", self.shape(x))?;
        let (wi, out) = dims2("linear", self.shape(w))?;
        if wi != inp {
            return Err(shape_err(
                "linear",
                format!("input {:?} vs weight {:?}", self.shape(x), self.shape(w)),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [out] {
                return Err(shape_err(
                    "linear",
                    format!("bias {:?} vs {out} outputs", self.shape(b)),
                ));
            }
        }
        let xv = self.value(x);
        let wv = self.value(w);
        let mut y = vec![0.0; rows * out];
        for r in 0..rows {
            let yr = &mut y[r * out..(r + 1) * out];
            if let Some(b) = b {
                yr.copy_from_slice(&self.nodes[b.0].value);
            }
            for i in 0..inp {
                let xi = xv[r * inp + i];
                if xi == 0.0 {
                    continue;
                }
                let wr = &wv[i * out..(i + 1) * out];
                for (yo, wo) in yr.iter_mut().zip(wr) {
                    *yo += xi * wo;
                }
            }
        }
        Ok(self.push(
            y,
            vec![rows, out],
            Op::Linear {
                x,
                w,
                b,
                rows,
                inp,
                out,
            },
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let y = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(y, shape, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let y = self.value(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push(y, shape, Op::Scale(a, c))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let y = self.value(a).iter().map(|x| x.exp()).collect();
        let shape = self.shape(a).to_vec();
        self.push(y, shape, Op::Exp(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.value(a).iter().map(|x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        self.push(y, shape, Op::Relu(a))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} to {shape:?}", self.shape(a)),
            ));
        }
        let y = self.value(a).to_vec();
        Ok(self.push(y, shape, Op::Reshape(a)))
    }

    /// `x: [batch, cin, len]`, `w: [cout, cin, k]`, `b: [cout]`; zero padding
    /// on both ends.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (batch, cin, len) = dims3("conv1d", self.shape(x))?;
        let (cout, wc, k) = dims3("conv1d", self.shape(w))?;
        if wc != cin || k == 0 || stride == 0 {
            return Err(shape_err(
                "conv1d",
                format!(
                    "input {:?}, kernel {:?}, stride {stride}",
                    self.shape(x),
                    self.shape(w)
                ),
            ));
        }
        if len + 2 * padding < k {
            return Err(shape_err(
                "conv1d",
                format!("length {len} + padding {padding} shorter than kernel {k}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(shape_err("conv1d", format!("bias {:?}", self.shape(b))));
            }
        }
        let lout = (len + 2 * padding - k) / stride + 1;
        let dims = ConvDims {
            batch,
            cin,
            len,
            cout,
            k,
            stride,
            padding,
            lout,
        };
        let xv = self.value(x);
        let wv = self.value(w);
        let mut y = vec![0.0; batch * cout * lout];
        for bi in 0..batch {
            for o in 0..cout {
                let yrow = &mut y[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                if let Some(b) = b {
                    yrow.fill(self.nodes[b.0].value[o]);
                }
                for c in 0..cin {
                    let xrow = &xv[(bi * cin + c) * len..(bi * cin + c + 1) * len];
                    for kk in 0..k {
                        let wgt = wv[(o * cin + c) * k + kk];
                        let (t0, t1) = conv_range(&dims, kk);
                        for t in t0..t1 {
                            yrow[t] += wgt * xrow[t * stride + kk - padding];
                        }
                    }
                }
            }
        }
        Ok(self.push(y, vec![batch, cout, lout], Op::Conv1d { x, w, b, dims }))
    }

    /// Non-overlapping or strided max pooling over the last axis.
    pub fn max_pool1d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let (batch, c, len) = dims3("max_pool1d", self.shape(x))?;
        if kernel == 0 || stride == 0 || kernel > len {
            return Err(arg_err(
                "max_pool1d",
                format!("kernel {kernel}, stride {stride}, length {len}"),
            ));
        }
        let lout = (len - kernel) / stride + 1;
        let xv = self.value(x);
        let mut y = Vec::with_capacity(batch * c * lout);
        let mut argmax = Vec::with_capacity(batch * c * lout);
        for row in 0..batch * c {
            for t in 0..lout {
                let start = row * len + t * stride;
                let mut best = start;
                for i in start + 1..start + kernel {
                    if xv[i] > xv[best] {
                        best = i;
                    }
                }
                y.push(xv[best]);
                argmax.push(best);
            }
        }
        Ok(self.push(y, vec![batch, c, lout], Op::MaxPool1d { x, argmax }))
    }

    /// `[batch, c, len] → [batch, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (batch, c, len) = dims3("global_avg_pool", self.shape(x))?;
        if len == 0 {
            return Err(shape_err("global_avg_pool", "empty length"));
        }
        let y = self
            .value(x)
            .chunks(len)
            .map(|r| r.iter().sum::<f64>() / len as f64)
            .collect();
        Ok(self.push(y, vec![batch, c], Op::GlobalAvgPool { x, len }))
    }

    /// Normalizes each row of `[rows, cols]`, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = dims2("layer_norm", self.shape(x))?;
        if self.shape(gamma) != [cols] || self.shape(beta) != [cols] {
            return Err(shape_err(
                "layer_norm",
                format!(
                    "input {:?}, gamma {:?}, beta {:?}",
                    self.shape(x),
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let xv = self.value(x);
        let g = self.value(gamma);
        let bt = self.value(beta);
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut y = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..cols {
                let h = (row[j] - mean) * is;
                xhat[r * cols + j] = h;
                y[r * cols + j] = h * g[j] + bt[j];
            }
        }
        Ok(self.push(
            y,
            vec![rows, cols],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                cols,
            },
        ))
    }

    /// Row-wise softmax of `[rows, cols]`.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = dims2("softmax", self.shape(x))?;
        let y = softmax_rows(self.value(x), cols);
        Ok(self.push(y, vec![rows, cols], Op::Softmax { x, cols }))
    }

    /// Column concatenation of `[rows, ca]` and `[rows, cb]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (rows, ca) = dims2("concat", self.shape(a))?;
        let (rb, cb) = dims2("concat", self.shape(b))?;
        if rows != rb {
            return Err(shape_err(
                "concat",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut y = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            y.extend_from_slice(&av[r * ca..(r + 1) * ca]);
            y.extend_from_slice(&bv[r * cb..(r + 1) * cb]);
        }
        Ok(self.push(y, vec![rows, ca + cb], Op::Concat { a, b, rows, ca, cb }))
    }

    /// Selects rows `idx` of `[n, cols]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, cols) = dims2("gather_rows", self.shape(x))?;
        if let Some(i) = idx.iter().find(|i| **i >= n) {
            return Err(arg_err("gather_rows", format!("row {i} out of {n}")));
        }
        let xv = self.value(x);
        let mut y = Vec::with_capacity(idx.len() * cols);
        for i in idx {
            y.extend_from_slice(&xv[i * cols..(i + 1) * cols]);
        }
        Ok(self.push(
            y,
            vec![idx.len(), cols],
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
                cols,
            },
        ))
    }

    /// Mean of the rows of `[m, cols]` assigned to each of `n_segments`
    /// groups by `seg`. Empty groups give zero rows.
    pub fn segment_mean(&mut self, x: Var, seg: &[usize], n_segments: usize) -> Result<Var> {
        let (m, cols) = dims2("segment_mean", self.shape(x))?;
        if seg.len() != m {
            return Err(shape_err(
                "segment_mean",
                format!("{m} rows vs {} segment ids", seg.len()),
            ));
        }
        if let Some(s) = seg.iter().find(|s| **s >= n_segments) {
            return Err(arg_err(
                "segment_mean",
                format!("segment {s} out of {n_segments}"),
            ));
        }
        let mut counts = vec![0usize; n_segments];
        for s in seg {
            counts[*s] += 1;
        }
        let xv = self.value(x);
        let mut y = vec![0.0; n_segments * cols];
        for (r, s) in seg.iter().enumerate() {
            let yr = &mut y[s * cols..(s + 1) * cols];
            for (yo, xo) in yr.iter_mut().zip(&xv[r * cols..(r + 1) * cols]) {
                *yo += xo;
            }
        }
        for (s, c) in counts.iter().enumerate() {
            if *c > 0 {
                let inv = 1.0 / *c as f64;
                y[s * cols..(s + 1) * cols]
                    .iter_mut()
                    .for_each(|v| *v *= inv);
            }
        }
        Ok(self.push(
            y,
            vec![n_segments, cols],
            Op::SegmentMean {
                x,
                seg: seg.to_vec(),
                counts,
                cols,
            },
        ))
    }

    /// Scales each row of `[rows, cols]` to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = dims2("l2_normalize", self.shape(x))?;
        let xv = self.value(x);
        let mut norms = Vec::new();
        let mut y = Vec::with_capacity(xv.len());
        for row in xv.chunks(cols) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(NnError::ZeroVector { op: "l2_normalize" });
            }
            norms.push(n);
            y.extend(row.iter().map(|v| v / n));
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(y, shape, Op::L2Normalize { x, norms, cols }))
    }

    /// Two-direction InfoNCE over unit-norm rows `u`, `v` (`[n, d]`) with
    /// logits `u_i·v_j / tau`; the two directions are averaged. With
    /// `exclude_positive` the matched pair is left out of its own
    /// denominator.
    pub fn info_nce(&mut self, u: Var, v: Var, tau: Var, exclude_positive: bool) -> Result<Var> {
        let (n, d) = dims2("contrastive_loss", self.shape(u))?;
        if self.shape(v) != [n, d] {
            return Err(shape_err(
                "contrastive_loss",
                format!("{:?} vs {:?}", self.shape(u), self.shape(v)),
            ));
        }
        if n < 2 {
            return Err(arg_err(
                "contrastive_loss",
                format!("batch of {n} rows, need >= 2"),
            ));
        }
        if self.value(tau).len() != 1 {
            return Err(shape_err(
                "contrastive_loss",
                "temperature must be a scalar",
            ));
        }
        let t = self.scalar(tau);
        if !(t > 0.0 && t.is_finite()) {
            return Err(arg_err(
                "contrastive_loss",
                format!("temperature {t} must be > 0"),
            ));
        }
        let uv = self.value(u);
        let vv = self.value(v);
        let mut sims = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                sims[i * n + j] = uv[i * d..(i + 1) * d]
                    .iter()
                    .zip(&vv[j * d..(j + 1) * d])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
        }
        let logits: Vec<f64> = sims.iter().map(|s| s / t).collect();
        let logits_t: Vec<f64> = (0..n * n).map(|k| logits[(k % n) * n + k / n]).collect();
        let (l_row, p_row) = info_nce_direction(&logits, n, exclude_positive);
        let (l_col, p_col_t) = info_nce_direction(&logits_t, n, exclude_positive);
        let p_col: Vec<f64> = (0..n * n).map(|k| p_col_t[(k % n) * n + k / n]).collect();
        let loss = 0.5 * (l_row + l_col);
        Ok(self.push(
            vec![loss],
            vec![1],
            Op::InfoNce {
                u,
                v,
                tau,
                n,
                d,
                sims,
                p_row,
                p_col,
            },
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() || p.is_empty() {
            return Err(shape_err(
                "mse",
                format!("{} predictions vs {} targets", p.len(), target.len()),
            ));
        }
        let mut sq: Vec<f64> = p
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .collect();
        let loss = sorted_sum(&mut sq) / p.len() as f64;
        Ok(self.push(
            vec![loss],
            vec![1],
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
        ))
    }

    /// Mean absolute error over all elements.
    pub fn mae(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() || p.is_empty() {
            return Err(shape_err(
                "mae",
                format!("{} predictions vs {} targets", p.len(), target.len()),
            ));
        }
        let mut ab: Vec<f64> = p.iter().zip(target).map(|(a, b)| (a - b).abs()).collect();
        let loss = sorted_sum(&mut ab) / p.len() as f64;
        Ok(self.push(
            vec![loss],
            vec![1],
            Op::Mae {
                pred,
                target: target.to_vec(),
            },
        ))
    }

    /// Mean softmax cross-entropy of `[rows, classes]` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, classes) = dims2("cross_entropy", self.shape(logits))?;
        if labels.len() != rows || rows == 0 {
            return Err(shape_err(
                "cross_entropy",
                format!("{rows} rows vs {} labels", labels.len()),
            ));
        }
        if let Some(l) = labels.iter().find(|l| **l >= classes) {
            return Err(arg_err(
                "cross_entropy",
                format!("label {l} out of {classes} classes"),
            ));
        }
        let lv = self.value(logits);
        let mut per_row = Vec::with_capacity(rows);
        for (r, y) in labels.iter().enumerate() {
            let row = &lv[r * classes..(r + 1) * classes];
            per_row.push(neg_log_softmax(row, row[*y]));
        }
        let probs = softmax_rows(lv, classes);
        let loss = sorted_sum(&mut per_row) / rows as f64;
        Ok(self.push(
            vec![loss],
            vec![1],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                classes,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![s], vec![1], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        self.push(vec![s], vec![1], Op::Mean(x))
    }

    /// Reverse pass from a one-element node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(NnError::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .param_vars
            .iter()
            .map(|v| v.and_then(|v| grads[v.0].clone()))
            .collect();
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| -> &[f64] { &self.nodes[v.0].value };
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = self.nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Linear {
                x,
                w,
                b,
                rows,
                inp,
                out,
            } => {
                let (rows, inp, out) = (*rows, *inp, *out);
                let xv = val(*x);
                let wv = val(*w);
                acc(*x, &mut |dx| {
                    for r in 0..rows {
                        let gr = &g[r * out..(r + 1) * out];
                        for ii in 0..inp {
                            let wr = &wv[ii * out..(ii + 1) * out];
                            dx[r * inp + ii] += gr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
                acc(*w, &mut |dw| {
                    for r in 0..rows {
                        let gr = &g[r * out..(r + 1) * out];
                        for ii in 0..inp {
                            let xi = xv[r * inp + ii];
                            if xi == 0.0 {
                                continue;
                            }
                            for (d, go) in dw[ii * out..(ii + 1) * out].iter_mut().zip(gr) {
                                *d += xi * go;
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    acc(*b, &mut |db| {
                        for r in 0..rows {
                            for (d, go) in db.iter_mut().zip(&g[r * out..(r + 1) * out]) {
                                *d += go;
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * bv[k];
                    }
                });
                acc(*b, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * av[k];
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(*a, &mut |d| {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g)
                });
            }
            Op::Exp(a) => {
                let y = &node.value;
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * y[k];
                    }
                });
            }
            Op::Relu(a) => {
                let xv = val(*a);
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        if xv[k] > 0.0 {
                            d[k] += g[k];
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Conv1d { x, w, b, dims } => {
                let ConvDims {
                    batch,
                    cin,
                    len,
                    cout,
                    k,
                    stride,
                    padding,
                    lout,
                } = *dims;
                let xv = val(*x);
                let wv = val(*w);
                acc(*x, &mut |dx| {
                    for bi in 0..batch {
                        for o in 0..cout {
                            let grow = &g[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                            for c in 0..cin {
                                let dxrow = &mut dx[(bi * cin + c) * len..(bi * cin + c + 1) * len];
                                for kk in 0..k {
                                    let wgt = wv[(o * cin + c) * k + kk];
                                    let (t0, t1) = conv_range(dims, kk);
                                    for t in t0..t1 {
                                        dxrow[t * stride + kk - padding] += wgt * grow[t];
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*w, &mut |dw| {
                    for bi in 0..batch {
                        for o in 0..cout {
                            let grow = &g[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                            for c in 0..cin {
                                let xrow = &xv[(bi * cin + c) * len..(bi * cin + c + 1) * len];
                                for kk in 0..k {
                                    let (t0, t1) = conv_range(dims, kk);
                                    let mut s = 0.0;
                                    for t in t0..t1 {
                                        s += grow[t] * xrow[t * stride + kk - padding];
                                    }
                                    dw[(o * cin + c) * k + kk] += s;
                                }
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    acc(*b, &mut |db| {
                        for bi in 0..batch {
                            for o in 0..cout {
                                db[o] += g[(bi * cout + o) * lout..(bi * cout + o + 1) * lout]
                                    .iter()
                                    .sum::<f64>();
                            }
                        }
                    });
                }
            }
            Op::MaxPool1d { x, argmax } => {
                acc(*x, &mut |d| {
                    for (gi, src) in g.iter().zip(argmax) {
                        d[*src] += gi;
                    }
                });
            }
            Op::GlobalAvgPool { x, len } => {
                let inv = 1.0 / *len as f64;
                acc(*x, &mut |d| {
                    for (row, gi) in d.chunks_mut(*len).zip(g) {
                        row.iter_mut().for_each(|v| *v += gi * inv);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                cols,
            } => {
                let cols = *cols;
                let gv = val(*gamma);
                acc(*x, &mut |dx| {
                    for (r, is) in inv_std.iter().enumerate() {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let hr = &xhat[r * cols..(r + 1) * cols];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..cols {
                            let gh = gr[j] * gv[j];
                            m1 += gh;
                            m2 += gh * hr[j];
                        }
                        m1 /= cols as f64;
                        m2 /= cols as f64;
                        for j in 0..cols {
                            dx[r * cols + j] += is * (gr[j] * gv[j] - m1 - hr[j] * m2);
                        }
                    }
                });
                acc(*gamma, &mut |dg| {
                    for (k, gi) in g.iter().enumerate() {
                        dg[k % cols] += gi * xhat[k];
                    }
                });
                acc(*beta, &mut |db| {
                    for (k, gi) in g.iter().enumerate() {
                        db[k % cols] += gi;
                    }
                });
            }
            Op::Softmax { x, cols } => {
                let y = &node.value;
                acc(*x, &mut |d| {
                    for (r, yr) in y.chunks(*cols).enumerate() {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..*cols {
                            d[r * cols + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Concat { a, b, rows, ca, cb } => {
                let w = ca + cb;
                acc(*a, &mut |d| {
                    for r in 0..*rows {
                        for j in 0..*ca {
                            d[r * ca + j] += g[r * w + j];
                        }
                    }
                });
                acc(*b, &mut |d| {
                    for r in 0..*rows {
                        for j in 0..*cb {
                            d[r * cb + j] += g[r * w + ca + j];
                        }
                    }
                });
            }
            Op::GatherRows { x, idx, cols } => {
                acc(*x, &mut |d| {
                    for (r, src) in idx.iter().enumerate() {
                        for j in 0..*cols {
                            d[src * cols + j] += g[r * cols + j];
                        }
                    }
                });
            }
            Op::SegmentMean {
                x,
                seg,
                counts,
                cols,
            } => {
                acc(*x, &mut |d| {
                    for (r, s) in seg.iter().enumerate() {
                        let inv = 1.0 / counts[*s] as f64;
                        for j in 0..*cols {
                            d[r * cols + j] += g[s * cols + j] * inv;
                        }
                    }
                });
            }
            Op::L2Normalize { x, norms, cols } => {
                let y = &node.value;
                acc(*x, &mut |d| {
                    for (r, n) in norms.iter().enumerate() {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..*cols {
                            d[r * cols + j] += (gr[j] - yr[j] * dot) / n;
                        }
                    }
                });
            }
            Op::InfoNce {
                u,
                v,
                tau,
                n,
                d,
                sims,
                p_row,
                p_col,
            } => {
                let (n, dd) = (*n, *d);
                let t = self.nodes[tau.0].value[0];
                // dL/dlogit_ij; logits are sims / t.
                let scale = g[0] * 0.5 / n as f64;
                let mut dlogit = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        let k = i * n + j;
                        // Probabilities are zero outside each denominator set.
                        let mut s = p_row[k] + p_col[k];
                        if i == j {
                            s -= 2.0;
                        }
                        dlogit[k] = scale * s;
                    }
                }
                let uv = val(*u);
                let vv = val(*v);
                acc(*u, &mut |du| {
                    for i in 0..n {
                        for j in 0..n {
                            let c = dlogit[i * n + j] / t;
                            for k in 0..dd {
                                du[i * dd + k] += c * vv[j * dd + k];
                            }
                        }
                    }
                });
                acc(*v, &mut |dv| {
                    for i in 0..n {
                        for j in 0..n {
                            let c = dlogit[i * n + j] / t;
                            for k in 0..dd {
                                dv[j * dd + k] += c * uv[i * dd + k];
                            }
                        }
                    }
                });
                acc(*tau, &mut |dt| {
                    let s: f64 = dlogit.iter().zip(sims).map(|(a, b)| a * b).sum();
                    dt[0] -= s / (t * t);
                });
            }
            Op::Mse { pred, target } => {
                let p = val(*pred);
                let c = 2.0 * g[0] / p.len() as f64;
                acc(*pred, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += c * (p[k] - target[k]);
                    }
                });
            }
            Op::Mae { pred, target } => {
                let p = val(*pred);
                let c = g[0] / p.len() as f64;
                acc(*pred, &mut |d| {
                    for k in 0..d.len() {
                        let diff = p[k] - target[k];
                        if diff != 0.0 {
                            d[k] += c * diff.signum();
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
                classes,
            } => {
                let c = g[0] / labels.len() as f64;
                acc(*logits, &mut |d| {
                    for (r, y) in labels.iter().enumerate() {
                        for j in 0..*classes {
                            let k = r * classes + j;
                            let onehot = if j == *y { 1.0 } else { 0.0 };
                            d[k] += c * (probs[k] - onehot);
                        }
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, &mut |d| d.iter_mut().for_each(|v| *v += g[0]));
            }
            Op::Mean(x) => {
                let c = g[0] / self.nodes[x.0].value.len().max(1) as f64;
                acc(*x, &mut |d| d.iter_mut().for_each(|v| *v += c));
            }
        }
    }
}

/// Output positions `t` for kernel tap `kk` that read inside the input.
fn conv_range(d: &ConvDims, kk: usize) -> (usize, usize) {
    // need padding <= t*stride + kk < len + padding
    let lo = if kk >= d.padding {
        0
    } else {
        (d.padding - kk).div_ceil(d.stride)
    };
    let hi_excl = if d.len + d.padding > kk {
        ((d.len + d.padding - kk - 1) / d.stride + 1).min(d.lout)
    } else {
        0
    };
    (lo.min(hi_excl), hi_excl)
}

pub(crate) fn softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        y.extend(e.iter().map(|v| v / s));
    }
    y
}

/// Mean over rows of `-log softmax(row)[i]`, and the softmax probabilities
/// restricted to each row's denominator set (zero elsewhere).
fn info_nce_direction(logits: &[f64], n: usize, exclude_positive: bool) -> (f64, Vec<f64>) {
    let mut probs = vec![0.0; n * n];
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let row = &logits[i * n..(i + 1) * n];
        let denom: Vec<f64> = (0..n)
            .filter(|j| !(exclude_positive && *j == i))
            .map(|j| row[j])
            .collect();
        let (m, rest) = log_sum_exp_parts(&denom);
        let lse = m + rest;
        terms.push((m - row[i]) + rest);
        for j in 0..n {
            if !(exclude_positive && j == i) {
                probs[i * n + j] = (row[j] - lse).exp();
            }
        }
    }
    (sorted_sum(&mut terms) / n as f64, probs)
}
