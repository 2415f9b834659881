use super::kernels::{self, ConvGeom};
use super::{broadcast_shapes, broadcast_strides, for_each_broadcast, strides, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    MatMul {
        a: Var,
        b: Var,
        pairs: Vec<(usize, usize)>,
        m: usize,
        k: usize,
        n: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    Upsample2x(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Define-by-run record of a forward computation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// (outer, axis extent, inner) decomposition of a shape around one axis.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(
            value.is_finite(),
            "non-finite output of shape {:?}",
            value.shape()
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of the last [`Tape::backward`] calls, if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| Tensor {
            shape: node.value.shape().to_vec(),
            data: g.clone(),
        })
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ---- elementwise -------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let (va, vb) = (self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        if va.shape() == vb.shape() {
            let data = va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            return Ok((Tensor::new(va.shape(), data)?, rg));
        }
        let out = broadcast_shapes(va.shape(), vb.shape())?;
        let sa = broadcast_strides(va.shape(), &out);
        let sb = broadcast_strides(vb.shape(), &out);
        let mut data = vec![0.0; out.iter().product()];
        let (da, db) = (va.data(), vb.data());
        for_each_broadcast(&out, &sa, &sb, |o, i, j| data[o] = f(da[i], db[j]));
        Ok((Tensor::new(&out, data)?, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b), rg))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value(x);
        let t = Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|&e| f(e)).collect(),
        };
        let rg = self.rg(x);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |e| e * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Offset(x), |e| e + c)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |e| e.max(0.0))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Gelu(x), kernels::gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), kernels::sigmoid)
    }

    // ---- normalization -----------------------------------------------

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        if axis >= v.rank() {
            return Err(Error::dim(format!(
                "softmax axis {axis} out of range for shape {:?}",
                v.shape()
            )));
        }
        let (outer, len, inner) = split_axis(v.shape(), axis);
        let src = v.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len)
                    .map(|l| src[at(l)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for l in 0..len {
                    let e = (src[at(l)] - max).exp();
                    out[at(l)] = e;
                    z += e;
                }
                for l in 0..len {
                    out[at(l)] /= z;
                }
            }
        }
        let t = Tensor::new(v.shape(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Softmax { x, axis }, rg))
    }

    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let axis = self.value(x).rank() - 1;
        self.softmax(x, axis)
    }

    /// Layer normalization over the last axis (epsilon 1e-5) followed by an affine map.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let v = self.value(x);
        let d = *v.shape().last().unwrap();
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(Error::dim(format!(
                "layer_norm affine extents {:?}/{:?} do not match last extent {d}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = v.len() / d;
        let mut xhat = vec![0.0; v.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + EPS).sqrt();
            rstd[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(v.shape(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    // ---- linear algebra ------------------------------------------------

    /// Batched matrix product `[.., m, k] · [.., k, n]` with broadcast batch extents.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(Error::dim(format!(
                "matmul of incompatible shapes {sa:?} and {sb:?}"
            )));
        }
        let (m, k, n) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let batch = broadcast_shapes(ba, bb).map_err(|_| {
            Error::dim(format!(
                "matmul batch extents of {sa:?} and {sb:?} do not broadcast"
            ))
        })?;
        let mut pairs = Vec::with_capacity(batch.iter().product());
        for_each_broadcast(
            &batch,
            &broadcast_strides(ba, &batch),
            &broadcast_strides(bb, &batch),
            |_, i, j| pairs.push((i, j)),
        );
        let mut out = vec![0.0; pairs.len() * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for (o, &(i, j)) in pairs.iter().enumerate() {
            kernels::gemm(
                m,
                k,
                n,
                &da[i * m * k..],
                false,
                &db[j * k * n..],
                false,
                &mut out[o * m * n..(o + 1) * m * n],
                0.0,
            );
        }
        let mut shape = batch;
        shape.extend([m, n]);
        let t = Tensor::new(&shape, out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            t,
            Op::MatMul {
                a,
                b,
                pairs,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    // ---- layout --------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// General axis permutation; output axis `j` is input axis `perm[j]`. Copies.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let rank = v.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank
            || perm
                .iter()
                .any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::dim(format!(
                "{perm:?} is not a permutation of the axes of {:?}",
                v.shape()
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| v.shape()[p]).collect();
        let in_strides = strides(v.shape());
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let zeros = vec![0; rank];
        let src = v.data();
        let mut out = vec![0.0; src.len()];
        for_each_broadcast(&out_shape, &src_strides, &zeros, |o, i, _| out[o] = src[i]);
        let t = Tensor::new(&out_shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(
            t,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    /// Swaps the two innermost axes.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let r = self.value(x).rank();
        if r < 2 {
            return Err(Error::dim("transpose_last needs rank >= 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(x, &perm)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(
                *parts
                    .first()
                    .ok_or_else(|| Error::dim("concat of zero tensors"))?,
            )
            .to_vec();
        if axis >= first.len() {
            return Err(Error::dim(format!(
                "concat axis {axis} out of range for {first:?}"
            )));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!(
                    "cannot concat {s:?} with {first:?} along axis {axis}"
                )));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let rest: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * rest);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * rest;
                out.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let t = Tensor::new(&shape, out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        if axis >= v.rank() || len == 0 || start + len > v.shape()[axis] {
            return Err(Error::dim(format!(
                "slice [{start}, {}) on axis {axis} out of range for {:?}",
                start + len,
                v.shape()
            )));
        }
        let (outer, full, rest) = split_axis(v.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * rest);
        for o in 0..outer {
            let base = (o * full + start) * rest;
            out.extend_from_slice(&v.data()[base..base + len * rest]);
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = len;
        let t = Tensor::new(&shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Slice { x, axis, start }, rg))
    }

    // ---- reductions ----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum over one axis, keeping it with extent 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        if axis >= v.rank() {
            return Err(Error::dim(format!(
                "sum axis {axis} out of range for {:?}",
                v.shape()
            )));
        }
        let (outer, len, inner) = split_axis(v.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &v.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, e) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += e;
                }
            }
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = 1;
        let t = Tensor::new(&shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::SumAxis { x, axis }, rg))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| Error::dim(format!("mean axis {axis} out of range")))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / len as f64))
    }

    // ---- spatial -------------------------------------------------------

    /// 2× bilinear upsampling of the two innermost axes (half-pixel centers, edge clamped).
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let r = v.rank();
        if r < 2 {
            return Err(Error::dim("upsample2x needs rank >= 2"));
        }
        let (h, w) = (v.shape()[r - 2], v.shape()[r - 1]);
        let planes = v.len() / (h * w);
        let (ty, tx) = (kernels::upsample_taps(h), kernels::upsample_taps(w));
        let mut out = vec![0.0; planes * 4 * h * w];
        for p in 0..planes {
            let src = &v.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    dst[oy * 2 * w + ox] = (1.0 - wy)
                        * ((1.0 - wx) * src[y0 * w + x0] + wx * src[y0 * w + x1])
                        + wy * ((1.0 - wx) * src[y1 * w + x0] + wx * src[y1 * w + x1]);
                }
            }
        }
        let mut shape = v.shape().to_vec();
        shape[r - 2] = 2 * h;
        shape[r - 1] = 2 * w;
        let t = Tensor::new(&shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Upsample2x(x), rg))
    }

    /// Zero-padded cross-correlation of `x: [N, Cin, H, W]` with `w: [Cout, Cin, k, k]`
    /// (odd k, padding (k-1)/2) plus per-channel `bias: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Var, stride: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != sw[3] || sw[2] % 2 == 0 {
            return Err(Error::dim(format!(
                "conv2d expects [N,Cin,H,W] and [Cout,Cin,k,k] with odd k, got {sx:?} and {sw:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::contract("conv2d stride must be positive"));
        }
        let (n, cout, k) = (sx[0], sw[0], sw[2]);
        if self.value(bias).len() != cout {
            return Err(Error::dim(format!(
                "conv2d bias {:?} does not match {cout} output channels",
                self.shape(bias)
            )));
        }
        let geom = ConvGeom::new(sx[1], sx[2], sx[3], k, stride);
        if k > sx[2] + 2 * geom.pad || k > sx[3] + 2 * geom.pad {
            return Err(Error::dim(format!(
                "kernel {k} larger than padded input {sx:?}"
            )));
        }
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());
        let img = sx[1] * sx[2] * sx[3];
        let mut cols = vec![0.0; n * rows * ncols];
        let mut out = vec![0.0; n * cout * ncols];
        let (xd, wd, bd) = (
            self.value(x).data(),
            self.value(w).data(),
            self.value(bias).data(),
        );
        for i in 0..n {
            let c = &mut cols[i * rows * ncols..(i + 1) * rows * ncols];
            kernels::im2col(&geom, &xd[i * img..(i + 1) * img], c);
            let o = &mut out[i * cout * ncols..(i + 1) * cout * ncols];
            for (ch, row) in o.chunks_mut(ncols).enumerate() {
                row.fill(bd[ch]);
            }
            kernels::gemm(cout, rows, ncols, wd, false, c, false, o, 1.0);
        }
        let t = Tensor::new(&[n, cout, geom.ho, geom.wo], out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(bias);
        Ok(self.push(
            t,
            Op::Conv2d {
                x,
                w,
                b: bias,
                geom,
                cols,
            },
            rg,
        ))
    }

    // ---- reverse sweep -------------------------------------------------

    /// Accumulates d(loss)/d(node) into every reachable node that requires grad.
    /// Gradients from repeated calls add up until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    /// Zeroed gradient buffer for `v`, or `None` when `v` does not need one.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                self.reduce_broadcast(grads, *a, node.value.shape(), |o, _| g[o]);
                self.reduce_broadcast(grads, *b, node.value.shape(), |o, _| sign * g[o]);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.reduce_broadcast_pair(grads, *a, *b, node.value.shape(), |o, _, j| {
                    g[o] * vb.data()[j]
                });
                self.reduce_broadcast_pair(grads, *b, *a, node.value.shape(), |o, _, j| {
                    g[o] * va.data()[j]
                });
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                self.reduce_broadcast_pair(grads, *a, *b, node.value.shape(), |o, _, j| {
                    g[o] / vb.data()[j]
                });
                // d(a/b)/db = -(a/b)/b
                self.reduce_broadcast_pair(grads, *b, *b, node.value.shape(), |o, _, j| {
                    -g[o] * out[o] / vb.data()[j]
                });
            }
            Op::Scale(x, c) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += c * b);
                }
            }
            Op::Offset(x) | Op::Reshape(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                if let Some(gx) = self.slot(grads, *x) {
                    for j in 0..g.len() {
                        if xv[j] > 0.0 {
                            gx[j] += g[j];
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                if let Some(gx) = self.slot(grads, *x) {
                    for j in 0..g.len() {
                        gx[j] += g[j] * kernels::gelu_grad(xv[j]);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for j in 0..g.len() {
                        gx[j] += g[j] * out[j] * (1.0 - out[j]);
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        for q in 0..inner {
                            let at = |l: usize| (o * len + l) * inner + q;
                            let dot: f64 = (0..len).map(|l| g[at(l)] * out[at(l)]).sum();
                            for l in 0..len {
                                gx[at(l)] += out[at(l)] * (g[at(l)] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gamma).data();
                let d = gv.len();
                if let Some(gx) = self.slot(grads, *x) {
                    for (r, &s) in rstd.iter().enumerate() {
                        let row = r * d..(r + 1) * d;
                        let (gr, hr) = (&g[row.clone()], &xhat[row.clone()]);
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            m1 += dh;
                            m2 += dh * hr[j];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for j in 0..d {
                            gx[r * d + j] += s * (gr[j] * gv[j] - m1 - hr[j] * m2);
                        }
                    }
                }
                if let Some(gg) = self.slot(grads, *gamma) {
                    for (j, (ge, he)) in g.iter().zip(xhat).enumerate() {
                        gg[j % d] += ge * he;
                    }
                }
                if let Some(gb) = self.slot(grads, *beta) {
                    for (j, ge) in g.iter().enumerate() {
                        gb[j % d] += ge;
                    }
                }
            }
            Op::MatMul {
                a,
                b,
                pairs,
                m,
                k,
                n,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    for (o, &(ia, ib)) in pairs.iter().enumerate() {
                        kernels::gemm(
                            m,
                            n,
                            k,
                            &g[o * m * n..],
                            false,
                            &vb[ib * k * n..],
                            true,
                            &mut ga[ia * m * k..(ia + 1) * m * k],
                            1.0,
                        );
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (o, &(ia, ib)) in pairs.iter().enumerate() {
                        kernels::gemm(
                            k,
                            m,
                            n,
                            &va[ia * m * k..],
                            true,
                            &g[o * m * n..],
                            false,
                            &mut gb[ib * k * n..(ib + 1) * k * n],
                            1.0,
                        );
                    }
                }
            }
            Op::Permute { x, perm } => {
                let in_shape = self.shape(*x);
                let in_strides = strides(in_shape);
                let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
                let zeros = vec![0; perm.len()];
                if let Some(gx) = self.slot(grads, *x) {
                    for_each_broadcast(node.value.shape(), &src_strides, &zeros, |o, j, _| {
                        gx[j] += g[o]
                    });
                }
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let rest: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * rest;
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis] * rest;
                    if let Some(gp) = self.slot(grads, p) {
                        for o in 0..outer {
                            let src = &g[o * row + offset..o * row + offset + len];
                            gp[o * len..(o + 1) * len]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, full, rest) = split_axis(self.shape(*x), *axis);
                let len = node.value.shape()[*axis] * rest;
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        let base = (o * full + start) * rest;
                        gx[base..base + len]
                            .iter_mut()
                            .zip(&g[o * len..(o + 1) * len])
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::SumAxis { x, axis } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        for l in 0..len {
                            gx[(o * len + l) * inner..(o * len + l + 1) * inner]
                                .iter_mut()
                                .zip(&g[o * inner..(o + 1) * inner])
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                }
            }
            Op::Upsample2x(x) => {
                let s = self.shape(*x);
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let (ty, tx) = (kernels::upsample_taps(h), kernels::upsample_taps(w));
                if let Some(gx) = self.slot(grads, *x) {
                    for p in 0..gx.len() / (h * w) {
                        let dst = &mut gx[p * h * w..(p + 1) * h * w];
                        let src = &g[p * 4 * h * w..(p + 1) * 4 * h * w];
                        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                                let e = src[oy * 2 * w + ox];
                                dst[y0 * w + x0] += e * (1.0 - wy) * (1.0 - wx);
                                dst[y0 * w + x1] += e * (1.0 - wy) * wx;
                                dst[y1 * w + x0] += e * wy * (1.0 - wx);
                                dst[y1 * w + x1] += e * wy * wx;
                            }
                        }
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let (rows, ncols) = (geom.col_rows(), geom.col_cols());
                let cout = self.shape(*w)[0];
                let n = node.value.shape()[0];
                let wv = self.value(*w).data();
                if let Some(gw) = self.slot(grads, *w) {
                    for i in 0..n {
                        kernels::gemm(
                            cout,
                            ncols,
                            rows,
                            &g[i * cout * ncols..],
                            false,
                            &cols[i * rows * ncols..],
                            true,
                            gw,
                            1.0,
                        );
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (r, row) in g.chunks(ncols).enumerate() {
                        gb[r % cout] += row.iter().sum::<f64>();
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    let img = geom.cin * geom.h * geom.w;
                    let mut dcols = vec![0.0; rows * ncols];
                    for i in 0..n {
                        kernels::gemm(
                            rows,
                            cout,
                            ncols,
                            wv,
                            true,
                            &g[i * cout * ncols..],
                            false,
                            &mut dcols,
                            0.0,
                        );
                        kernels::col2im_add(geom, &dcols, &mut gx[i * img..(i + 1) * img]);
                    }
                }
            }
        }
    }

    /// Adds `f(out_index, input_index)` into the gradient of `x`, summing over
    /// axes along which `x` was broadcast to `out_shape`.
    fn reduce_broadcast(
        &self,
        grads: &mut [Option<Vec<f64>>],
        x: Var,
        out_shape: &[usize],
        f: impl Fn(usize, usize) -> f64,
    ) {
        self.reduce_broadcast_pair(grads, x, x, out_shape, |o, i, _| f(o, i));
    }

    /// Like [`Self::reduce_broadcast`], but also passes the element index of a
    /// second operand `other` under the same broadcast.
    fn reduce_broadcast_pair(
        &self,
        grads: &mut [Option<Vec<f64>>],
        x: Var,
        other: Var,
        out_shape: &[usize],
        f: impl Fn(usize, usize, usize) -> f64,
    ) {
        let (sx, so) = (self.shape(x).to_vec(), self.shape(other).to_vec());
        let Some(gx) = self.slot(grads, x) else {
            return;
        };
        if sx == out_shape && so == out_shape {
            for (o, e) in gx.iter_mut().enumerate() {
                *e += f(o, o, o);
            }
            return;
        }
        let a = broadcast_strides(&sx, out_shape);
        let b = broadcast_strides(&so, out_shape);
        for_each_broadcast(out_shape, &a, &b, |o, i, j| gx[i] += f(o, i, j));
    }
}
