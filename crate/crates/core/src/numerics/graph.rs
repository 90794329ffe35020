//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Graph`] owns every intermediate value. Operations append nodes and
//! return [`Var`] handles; since an op can only reference earlier vars, tape
//! order is already a topological order and the backward pass is a single
//! reverse sweep with fixed sequential reductions. Results are deterministic
//! given identical inputs.

use crate::error::{Error, Result};
use crate::numerics::array::Array;

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Conv1dSame { x: Var, w: Var, b: Var },
    Relu { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, eps: f64 },
    Embedding { table: Var, ids: Vec<usize> },
    SoftBinEmbed { values: Var, table: Var, centers: Vec<f64>, tau: f64 },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    Concat0 { parts: Vec<Var> },
    GatherRows { x: Var, idx: Vec<usize> },
    RepeatRows { x: Var, counts: Vec<usize> },
    Reshape { x: Var },
    MaskedMix { x: Var, use_x: Vec<bool> },
    SumAll { x: Var },
    MeanAll { x: Var },
    L1Loss { a: Var, b: Var },
    MseLoss { a: Var, b: Var },
    SoftmaxCrossEntropy { logits: Var, classes: Vec<usize> },
}

struct Node {
    value: Array,
    op: Op,
    needs_grad: bool,
}

/// Computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Array>>,
}

fn shape_err(op: &'static str, left: &Array, right: &Array) -> Error {
    Error::ShapeMismatch {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Array, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Tape value of a variable.
    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target with respect to `v`, if any
    /// was accumulated.
    pub fn grad(&self, v: Var) -> Option<&Array> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Constant input; no gradient is tracked through it.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(Array::scalar(v))
    }

    /// Differentiable input (parameter or probed value).
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// `x @ w + b` for `x: [n, din]`, `w: [din, dout]`, `b: [dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.rank() != 2 || wv.rank() != 2 || xv.shape()[1] != wv.shape()[0] {
            return Err(shape_err("linear", xv, wv));
        }
        if bv.rank() != 1 || bv.shape()[0] != wv.shape()[1] {
            return Err(shape_err("linear(bias)", wv, bv));
        }
        let (n, din) = (xv.shape()[0], xv.shape()[1]);
        let dout = wv.shape()[1];
        let mut out = vec![0.0; n * dout];
        let xd = xv.data();
        let wd = wv.data();
        let bd = bv.data();
        for t in 0..n {
            let orow = &mut out[t * dout..(t + 1) * dout];
            orow.copy_from_slice(bd);
            let xrow = &xd[t * din..(t + 1) * din];
            for (k, &xk) in xrow.iter().enumerate() {
                let wrow = &wd[k * dout..(k + 1) * dout];
                for (o, wkj) in orow.iter_mut().zip(wrow) {
                    *o += xk * wkj;
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Array::new(vec![n, dout], out)?,
            Op::Linear { x, w, b },
            needs,
        ))
    }

    /// 1-D convolution along axis 0 with zero same-padding.
    /// `x: [n, cin]`, `w: [k, cin, cout]` (odd `k`), `b: [cout]`.
    pub fn conv1d_same(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.rank() != 2 || wv.rank() != 3 || xv.shape()[1] != wv.shape()[1] {
            return Err(shape_err("conv1d_same", xv, wv));
        }
        let (k, cin, cout) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if k % 2 == 0 {
            return Err(Error::Dimension {
                op: "conv1d_same",
                msg: format!("kernel size {} must be odd", k),
                shape: wv.shape().to_vec(),
            });
        }
        if bv.rank() != 1 || bv.shape()[0] != cout {
            return Err(shape_err("conv1d_same(bias)", wv, bv));
        }
        let n = xv.shape()[0];
        let pad = k / 2;
        let mut out = vec![0.0; n * cout];
        let xd = xv.data();
        let wd = wv.data();
        let bd = bv.data();
        for t in 0..n {
            let orow = &mut out[t * cout..(t + 1) * cout];
            orow.copy_from_slice(bd);
            for dk in 0..k {
                let s = t as isize + dk as isize - pad as isize;
                if s < 0 || s >= n as isize {
                    continue;
                }
                let xrow = &xd[s as usize * cin..(s as usize + 1) * cin];
                let wplane = &wd[dk * cin * cout..(dk + 1) * cin * cout];
                for (i, &xi) in xrow.iter().enumerate() {
                    let wrow = &wplane[i * cout..(i + 1) * cout];
                    for (o, wio) in orow.iter_mut().zip(wrow) {
                        *o += xi * wio;
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Array::new(vec![n, cout], out)?,
            Op::Conv1dSame { x, w, b },
            needs,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let shape = self.value(x).shape().to_vec();
        let needs = self.needs(x);
        self.push(
            Array::new(shape, out).expect("same shape"),
            Op::Relu { x },
            needs,
        )
    }

    /// Layer normalization over the last axis of a `[n, d]` input with
    /// learned per-feature gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        if xv.rank() != 2 {
            return Err(shape_err("layer_norm", xv, gv));
        }
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(shape_err("layer_norm(params)", xv, gv));
        }
        let mut out = vec![0.0; n * d];
        let xd = xv.data();
        let gd = gv.data();
        let bd = bv.data();
        for t in 0..n {
            let row = &xd[t * d..(t + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            let orow = &mut out[t * d..(t + 1) * d];
            for j in 0..d {
                orow[j] = (row[j] - mean) * inv * gd[j] + bd[j];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Array::new(vec![n, d], out)?,
            Op::LayerNorm { x, gain, bias, eps },
            needs,
        ))
    }

    /// Row lookup: `table: [v, d]`, `ids: [n]` → `[n, d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(Error::Dimension {
                op: "embedding",
                msg: "table must be rank 2".into(),
                shape: tv.shape().to_vec(),
            });
        }
        let v = tv.shape()[0];
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Dimension {
                op: "embedding",
                msg: format!("id {} out of range {}", bad, v),
                shape: tv.shape().to_vec(),
            });
        }
        let out = tv.gather_rows(ids);
        let needs = self.needs(table);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Differentiable bin embedding: each scalar selects a proximity-softmax
    /// mixture of bin embeddings. `values: [n]`, `table: [bins, d]` → `[n, d]`.
    pub fn soft_bin_embed(
        &mut self,
        values: Var,
        table: Var,
        centers: &[f64],
        tau: f64,
    ) -> Result<Var> {
        let (vv, tv) = (self.value(values), self.value(table));
        if vv.rank() != 1 || tv.rank() != 2 || tv.shape()[0] != centers.len() {
            return Err(shape_err("soft_bin_embed", vv, tv));
        }
        if !(tau > 0.0) {
            return Err(Error::Config(format!(
                "soft_bin_embed tau {} must be > 0",
                tau
            )));
        }
        let n = vv.shape()[0];
        let d = tv.shape()[1];
        let mut out = vec![0.0; n * d];
        for (t, &val) in vv.data().iter().enumerate() {
            let w = soft_bin_weights(val, centers, tau);
            let orow = &mut out[t * d..(t + 1) * d];
            for (j, &wj) in w.iter().enumerate() {
                let erow = tv.row(j);
                for (o, e) in orow.iter_mut().zip(erow) {
                    *o += wj * e;
                }
            }
        }
        let needs = self.needs(values) || self.needs(table);
        Ok(self.push(
            Array::new(vec![n, d], out)?,
            Op::SoftBinEmbed {
                values,
                table,
                centers: centers.to_vec(),
                tau,
            },
            needs,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(shape_err("add", av, bv));
        }
        let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let shape = av.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Array::new(shape, out)?, Op::Add { a, b }, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(shape_err("sub", av, bv));
        }
        let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let shape = av.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Array::new(shape, out)?, Op::Sub { a, b }, needs))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v * c).collect();
        let shape = self.value(x).shape().to_vec();
        let needs = self.needs(x);
        self.push(
            Array::new(shape, out).expect("same shape"),
            Op::Scale { x, c },
            needs,
        )
    }

    /// Concatenate along axis 0; trailing dimensions must agree.
    pub fn concat0(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Input("concat0 of zero parts".into()));
        }
        let width = self.value(parts[0]).row_width();
        let rank = self.value(parts[0]).rank();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rank() != rank || pv.row_width() != width {
                return Err(shape_err("concat0", self.value(parts[0]), pv));
            }
            rows += pv.rows();
        }
        let mut data = Vec::with_capacity(rows * width);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let shape = if rank == 1 {
            vec![rows]
        } else {
            let mut s = self.value(parts[0]).shape().to_vec();
            s[0] = rows;
            s
        };
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Array::new(shape, data)?,
            Op::Concat0 {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    /// Select rows along axis 0 (duplicates allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.rows();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Dimension {
                op: "gather_rows",
                msg: format!("row {} out of range {}", bad, n),
                shape: xv.shape().to_vec(),
            });
        }
        let out = xv.gather_rows(idx);
        let needs = self.needs(x);
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            needs,
        ))
    }

    /// Repeat row `p` `counts[p]` times (the length regulator primitive).
    pub fn repeat_rows(&mut self, x: Var, counts: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != counts.len() {
            return Err(Error::Dimension {
                op: "repeat_rows",
                msg: format!("{} rows vs {} counts", xv.rows(), counts.len()),
                shape: xv.shape().to_vec(),
            });
        }
        if let Some(p) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Input(format!(
                "repeat_rows: zero duration at position {}",
                p
            )));
        }
        let w = xv.row_width();
        let total: usize = counts.iter().sum();
        let mut data = Vec::with_capacity(total * w);
        for (p, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                data.extend_from_slice(xv.row(p));
            }
        }
        let shape = if xv.rank() == 1 {
            vec![total]
        } else {
            let mut s = xv.shape().to_vec();
            s[0] = total;
            s
        };
        let needs = self.needs(x);
        Ok(self.push(
            Array::new(shape, data)?,
            Op::RepeatRows {
                x,
                counts: counts.to_vec(),
            },
            needs,
        ))
    }

    /// Change shape without changing data (e.g. squeeze `[n,1]` to `[n]`).
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.len() {
            return Err(Error::Dimension {
                op: "reshape",
                msg: format!("cannot reshape {:?} to {:?}", xv.shape(), shape),
                shape: xv.shape().to_vec(),
            });
        }
        let out = Array::new(shape.to_vec(), xv.data().to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::Reshape { x }, needs))
    }

    /// Per-element choice between a tape value and a fixed value:
    /// `out[i] = use_x[i] ? x[i] : values[i]`. Gradient flows only into the
    /// positions taken from `x`.
    pub fn masked_mix(&mut self, x: Var, values: &[f64], use_x: &[bool]) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 1 || xv.len() != values.len() || values.len() != use_x.len() {
            return Err(Error::Dimension {
                op: "masked_mix",
                msg: format!(
                    "lengths differ: x {} values {} mask {}",
                    xv.len(),
                    values.len(),
                    use_x.len()
                ),
                shape: xv.shape().to_vec(),
            });
        }
        let out: Vec<f64> = xv
            .data()
            .iter()
            .zip(values.iter().zip(use_x))
            .map(|(&xi, (&vi, &m))| if m { xi } else { vi })
            .collect();
        let needs = self.needs(x);
        Ok(self.push(
            Array::vector(out),
            Op::MaskedMix {
                x,
                use_x: use_x.to_vec(),
            },
            needs,
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Array::scalar(s), Op::SumAll { x }, needs)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s: f64 = xv.data().iter().sum::<f64>() / xv.len() as f64;
        let needs = self.needs(x);
        self.push(Array::scalar(s), Op::MeanAll { x }, needs)
    }

    /// Mean absolute difference over all elements.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(shape_err("l1_loss", av, bv));
        }
        let n = av.len() as f64;
        let s: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / n;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Array::scalar(s), Op::L1Loss { a, b }, needs))
    }

    /// Mean squared difference over all elements.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(shape_err("mse_loss", av, bv));
        }
        let n = av.len() as f64;
        let s: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Array::scalar(s), Op::MseLoss { a, b }, needs))
    }

    /// Mean negative log-likelihood of integer class targets under a
    /// row-wise softmax of `logits: [n, c]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, classes: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != classes.len() {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                msg: format!("{} rows vs {} targets", lv.rows(), classes.len()),
                shape: lv.shape().to_vec(),
            });
        }
        let c = lv.shape()[1];
        if let Some(&bad) = classes.iter().find(|&&t| t >= c) {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                msg: format!("class {} out of range {}", bad, c),
                shape: lv.shape().to_vec(),
            });
        }
        let n = classes.len();
        let mut total = 0.0;
        for (t, &cls) in classes.iter().enumerate() {
            let row = lv.row(t);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[cls];
        }
        let needs = self.needs(logits);
        Ok(self.push(
            Array::scalar(total / n as f64),
            Op::SoftmaxCrossEntropy {
                logits,
                classes: classes.to_vec(),
            },
            needs,
        ))
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate for every node
    /// on a path from a differentiable leaf to the loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).rank() != 0 {
            return Err(Error::Dimension {
                op: "backward",
                msg: "loss must be a scalar".into(),
                shape: self.value(loss).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::scalar(1.0));
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        self.grads = grads;
        Ok(())
    }

    /// Zero-initialized gradient buffer for `v`, or `None` when `v` does not
    /// track gradients.
    fn acc<'g>(&self, grads: &'g mut [Option<Array>], v: Var) -> Option<&'g mut [f64]> {
        if !self.needs(v) {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Array::zeros(self.value(v).shape()));
        }
        slot.as_mut().map(|a| a.data_mut())
    }

    fn propagate(&self, i: usize, gy: &Array, grads: &mut [Option<Array>]) {
        let gd = gy.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, din) = (xv.shape()[0], xv.shape()[1]);
                let dout = wv.shape()[1];
                if let Some(g) = self.acc(grads, *x) {
                    for t in 0..n {
                        let gyr = &gd[t * dout..(t + 1) * dout];
                        let gxr = &mut g[t * din..(t + 1) * din];
                        for k in 0..din {
                            let wrow = &wv.data()[k * dout..(k + 1) * dout];
                            let mut acc = 0.0;
                            for (gyo, wko) in gyr.iter().zip(wrow) {
                                acc += gyo * wko;
                            }
                            gxr[k] += acc;
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *w) {
                    for t in 0..n {
                        let xrow = xv.row(t);
                        let gyr = &gd[t * dout..(t + 1) * dout];
                        for (k, &xk) in xrow.iter().enumerate() {
                            let grow = &mut g[k * dout..(k + 1) * dout];
                            for (gw, gyo) in grow.iter_mut().zip(gyr) {
                                *gw += xk * gyo;
                            }
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *b) {
                    for t in 0..n {
                        let gyr = &gd[t * dout..(t + 1) * dout];
                        for (gb, gyo) in g.iter_mut().zip(gyr) {
                            *gb += gyo;
                        }
                    }
                }
            }
            Op::Conv1dSame { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (k, cin, cout) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
                let n = xv.shape()[0];
                let pad = k / 2;
                if let Some(g) = self.acc(grads, *x) {
                    for t in 0..n {
                        let gyr = &gd[t * cout..(t + 1) * cout];
                        for dk in 0..k {
                            let s = t as isize + dk as isize - pad as isize;
                            if s < 0 || s >= n as isize {
                                continue;
                            }
                            let wplane = &wv.data()[dk * cin * cout..(dk + 1) * cin * cout];
                            let gxr = &mut g[s as usize * cin..(s as usize + 1) * cin];
                            for i in 0..cin {
                                let wrow = &wplane[i * cout..(i + 1) * cout];
                                let mut acc = 0.0;
                                for (gyo, wio) in gyr.iter().zip(wrow) {
                                    acc += gyo * wio;
                                }
                                gxr[i] += acc;
                            }
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *w) {
                    for t in 0..n {
                        let gyr = &gd[t * cout..(t + 1) * cout];
                        for dk in 0..k {
                            let s = t as isize + dk as isize - pad as isize;
                            if s < 0 || s >= n as isize {
                                continue;
                            }
                            let xrow = xv.row(s as usize);
                            let gplane = &mut g[dk * cin * cout..(dk + 1) * cin * cout];
                            for (i, &xi) in xrow.iter().enumerate() {
                                let grow = &mut gplane[i * cout..(i + 1) * cout];
                                for (gw, gyo) in grow.iter_mut().zip(gyr) {
                                    *gw += xi * gyo;
                                }
                            }
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *b) {
                    for t in 0..n {
                        let gyr = &gd[t * cout..(t + 1) * cout];
                        for (gb, gyo) in g.iter_mut().zip(gyr) {
                            *gb += gyo;
                        }
                    }
                }
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                if let Some(g) = self.acc(grads, *x) {
                    for ((gi, &xi), gyo) in g.iter_mut().zip(xv.data()).zip(gd) {
                        if xi > 0.0 {
                            *gi += gyo;
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let (n, d) = (xv.shape()[0], xv.shape()[1]);
                let mut zs = vec![0.0; n * d];
                let mut invs = vec![0.0; n];
                for t in 0..n {
                    let row = xv.row(t);
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    invs[t] = inv;
                    for j in 0..d {
                        zs[t * d + j] = (row[j] - mean) * inv;
                    }
                }
                if let Some(g) = self.acc(grads, *x) {
                    for t in 0..n {
                        let gyr = &gd[t * d..(t + 1) * d];
                        let zr = &zs[t * d..(t + 1) * d];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..d {
                            let gdy = gv.data()[j] * gyr[j];
                            m1 += gdy;
                            m2 += gdy * zr[j];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        let gxr = &mut g[t * d..(t + 1) * d];
                        for j in 0..d {
                            let gdy = gv.data()[j] * gyr[j];
                            gxr[j] += (gdy - m1 - zr[j] * m2) * invs[t];
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *gain) {
                    for t in 0..n {
                        for j in 0..d {
                            g[j] += gd[t * d + j] * zs[t * d + j];
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *bias) {
                    for t in 0..n {
                        for j in 0..d {
                            g[j] += gd[t * d + j];
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = self.value(*table).shape()[1];
                if let Some(g) = self.acc(grads, *table) {
                    for (t, &id) in ids.iter().enumerate() {
                        let gyr = &gd[t * d..(t + 1) * d];
                        let grow = &mut g[id * d..(id + 1) * d];
                        for (gi, gyo) in grow.iter_mut().zip(gyr) {
                            *gi += gyo;
                        }
                    }
                }
            }
            Op::SoftBinEmbed {
                values,
                table,
                centers,
                tau,
            } => {
                let vv = self.value(*values);
                let tv = self.value(*table);
                let d = tv.shape()[1];
                if let Some(g) = self.acc(grads, *table) {
                    for (t, &val) in vv.data().iter().enumerate() {
                        let w = soft_bin_weights(val, centers, *tau);
                        let gyr = &gd[t * d..(t + 1) * d];
                        for (j, &wj) in w.iter().enumerate() {
                            let grow = &mut g[j * d..(j + 1) * d];
                            for (gi, gyo) in grow.iter_mut().zip(gyr) {
                                *gi += wj * gyo;
                            }
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *values) {
                    for (t, &val) in vv.data().iter().enumerate() {
                        let w = soft_bin_weights(val, centers, *tau);
                        let gyr = &gd[t * d..(t + 1) * d];
                        let mut gbar = 0.0;
                        let mut slopes = Vec::with_capacity(centers.len());
                        for (j, &cj) in centers.iter().enumerate() {
                            let sj = -2.0 * (val - cj) / (tau * tau);
                            slopes.push(sj);
                            gbar += w[j] * sj;
                        }
                        let mut dv = 0.0;
                        for (j, &wj) in w.iter().enumerate() {
                            let erow = tv.row(j);
                            let mut aj = 0.0;
                            for (gyo, e) in gyr.iter().zip(erow) {
                                aj += gyo * e;
                            }
                            dv += aj * wj * (slopes[j] - gbar);
                        }
                        g[t] += dv;
                    }
                }
            }
            Op::Add { a, b } => {
                if let Some(g) = self.acc(grads, *a) {
                    for (gi, gyo) in g.iter_mut().zip(gd) {
                        *gi += gyo;
                    }
                }
                if let Some(g) = self.acc(grads, *b) {
                    for (gi, gyo) in g.iter_mut().zip(gd) {
                        *gi += gyo;
                    }
                }
            }
            Op::Sub { a, b } => {
                if let Some(g) = self.acc(grads, *a) {
                    for (gi, gyo) in g.iter_mut().zip(gd) {
                        *gi += gyo;
                    }
                }
                if let Some(g) = self.acc(grads, *b) {
                    for (gi, gyo) in g.iter_mut().zip(gd) {
                        *gi -= gyo;
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(g) = self.acc(grads, *x) {
                    for (gi, gyo) in g.iter_mut().zip(gd) {
                        *gi += c * gyo;
                    }
                }
            }
            Op::Concat0 { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    let slice = &gd[offset..offset + len];
                    offset += len;
                    if let Some(g) = self.acc(grads, p) {
                        for (gi, gyo) in g.iter_mut().zip(slice) {
                            *gi += gyo;
                        }
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let w = self.value(*x).row_width().max(1);
                if let Some(g) = self.acc(grads, *x) {
                    for (t, &src) in idx.iter().enumerate() {
                        let gyr = &gd[t * w..(t + 1) * w];
                        let grow = &mut g[src * w..(src + 1) * w];
                        for (gi, gyo) in grow.iter_mut().zip(gyr) {
                            *gi += gyo;
                        }
                    }
                }
            }
            Op::RepeatRows { x, counts } => {
                let w = self.value(*x).row_width().max(1);
                if let Some(g) = self.acc(grads, *x) {
                    let mut frame = 0;
                    for (p, &c) in counts.iter().enumerate() {
                        let grow = &mut g[p * w..(p + 1) * w];
                        for _ in 0..c {
                            let gyr = &gd[frame * w..(frame + 1) * w];
                            for (gi, gyo) in grow.iter_mut().zip(gyr) {
                                *gi += gyo;
                            }
                            frame += 1;
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(g) = self.acc(grads, *x) {
                    for (gi, gyo) in g.iter_mut().zip(gd) {
                        *gi += gyo;
                    }
                }
            }
            Op::MaskedMix { x, use_x, .. } => {
                if let Some(g) = self.acc(grads, *x) {
                    for ((gi, gyo), &m) in g.iter_mut().zip(gd).zip(use_x) {
                        if m {
                            *gi += gyo;
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                let gs = gy.item();
                if let Some(g) = self.acc(grads, *x) {
                    for gi in g.iter_mut() {
                        *gi += gs;
                    }
                }
            }
            Op::MeanAll { x } => {
                let n = self.value(*x).len() as f64;
                let gs = gy.item() / n;
                if let Some(g) = self.acc(grads, *x) {
                    for gi in g.iter_mut() {
                        *gi += gs;
                    }
                }
            }
            Op::L1Loss { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let n = av.len() as f64;
                let gs = gy.item() / n;
                if let Some(g) = self.acc(grads, *a) {
                    for ((gi, &x), &y) in g.iter_mut().zip(av.data()).zip(bv.data()) {
                        *gi += gs * sign(x - y);
                    }
                }
                if let Some(g) = self.acc(grads, *b) {
                    for ((gi, &x), &y) in g.iter_mut().zip(av.data()).zip(bv.data()) {
                        *gi -= gs * sign(x - y);
                    }
                }
            }
            Op::MseLoss { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let n = av.len() as f64;
                let gs = gy.item() / n;
                if let Some(g) = self.acc(grads, *a) {
                    for ((gi, &x), &y) in g.iter_mut().zip(av.data()).zip(bv.data()) {
                        *gi += gs * 2.0 * (x - y);
                    }
                }
                if let Some(g) = self.acc(grads, *b) {
                    for ((gi, &x), &y) in g.iter_mut().zip(av.data()).zip(bv.data()) {
                        *gi -= gs * 2.0 * (x - y);
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, classes } => {
                let lv = self.value(*logits);
                let c = lv.shape()[1];
                let gs = gy.item() / classes.len() as f64;
                if let Some(g) = self.acc(grads, *logits) {
                    for (t, &cls) in classes.iter().enumerate() {
                        let row = lv.row(t);
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 = row.iter().map(|v| (v - m).exp()).sum();
                        let grow = &mut g[t * c..(t + 1) * c];
                        for j in 0..c {
                            let p = (row[j] - m).exp() / denom;
                            let ind = if j == cls { 1.0 } else { 0.0 };
                            grow[j] += gs * (p - ind);
                        }
                    }
                }
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Proximity softmax over bin centers: `w_j ∝ exp(-((v-c_j)/tau)^2)`.
pub fn soft_bin_weights(v: f64, centers: &[f64], tau: f64) -> Vec<f64> {
    let scores: Vec<f64> = centers
        .iter()
        .map(|&c| {
            let z = (v - c) / tau;
            -z * z
        })
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Row-wise softmax of a `[n, c]` array (forward only).
pub fn softmax_rows(logits: &Array) -> Array {
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    let mut out = vec![0.0; n * c];
    for t in 0..n {
        let row = logits.row(t);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let orow = &mut out[t * c..(t + 1) * c];
        let mut total = 0.0;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - m).exp();
            total += *o;
        }
        for o in orow.iter_mut() {
            *o /= total;
        }
    }
    Array::new(vec![n, c], out).expect("same shape")
}
