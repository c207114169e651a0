//! Reverse-mode differentiation over a linear tape.
//!
//! Every operator pushes one node holding its forward value and whatever the
//! backward rule needs. Nodes only reference earlier nodes, so walking the tape
//! backwards is a reverse topological order.

use crate::error::{shape_err, RanpError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
}

impl Default for ConvParams {
    fn default() -> Self {
        ConvParams { stride: 1, padding: 0 }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv3d { x: Var, w: Var, b: Option<Var>, cfg: ConvParams },
    Relu(Var),
    MaxPool { x: Var, argmax: Vec<usize> },
    Upsample { x: Var, factor: usize },
    Concat { a: Var, b: Var },
    Linear { x: Var, w: Var, b: Option<Var> },
    Softmax { x: Var, axis: usize },
    Mul(Var, Var),
    Add(Var, Var),
    ScaleChannels { x: Var, c: Var },
    Reshape(Var),
    Sum(Var),
    Affine { x: Var, scale: f64 },
    SoftmaxCrossEntropy { logits: Var, probs: Vec<f64>, targets: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A single-threaded recording of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of the last `backward` target(s) w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, cfg: ConvParams) -> Result<Var> {
        let xd = self.value(x).dims5("conv3d")?;
        let wd = self.value(w).dims5("conv3d")?;
        if xd[1] != wd[1] {
            return Err(shape_err(
                "conv3d",
                format!("input has {} channels, weight expects {}", xd[1], wd[1]),
            ));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [wd[0]] {
                return Err(shape_err(
                    "conv3d",
                    format!("bias shape {:?}, expected [{}]", self.value(b).shape(), wd[0]),
                ));
            }
        }
        let od = conv_out_dims(xd, wd, cfg)?;
        let out = kernels::conv3d_forward(
            self.value(x).data(),
            xd,
            self.value(w).data(),
            wd,
            b.map(|b| self.value(b).data()),
            cfg,
            od,
        );
        let value = Tensor::new(od.to_vec(), out)?;
        Ok(self.push(value, Op::Conv3d { x, w, b, cfg }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(value, Op::Relu(x))
    }

    pub fn maxpool3d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        if window == 0 || stride == 0 {
            return Err(RanpError::Config("maxpool window and stride must be positive".into()));
        }
        let xd = self.value(x).dims5("maxpool3d")?;
        let od = pool_out_dims(xd, window, stride)?;
        let (out, argmax) = kernels::maxpool_forward(self.value(x).data(), xd, window, stride, od);
        let value = Tensor::new(od.to_vec(), out)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }))
    }

    pub fn upsample_nearest3d(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(RanpError::Config("upsample factor must be positive".into()));
        }
        let xd = self.value(x).dims5("upsample")?;
        let od = [xd[0], xd[1], xd[2] * factor, xd[3] * factor, xd[4] * factor];
        let src = self.value(x).data();
        let mut out = vec![0.0; od.iter().product()];
        for (o, slot) in out.iter_mut().enumerate() {
            *slot = src[kernels::upsample_source(o, xd, od, factor)];
        }
        let value = Tensor::new(od.to_vec(), out)?;
        Ok(self.push(value, Op::Upsample { x, factor }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let ad = self.value(a).dims5("concat")?;
        let bd = self.value(b).dims5("concat")?;
        if ad[0] != bd[0] || ad[2..] != bd[2..] {
            return Err(shape_err("concat", format!("{ad:?} vs {bd:?} differ outside the channel axis")));
        }
        let inner: usize = ad[2..].iter().product();
        let (ca, cb) = (ad[1], bd[1]);
        let mut out = Vec::with_capacity(ad[0] * (ca + cb) * inner);
        for n in 0..ad[0] {
            out.extend_from_slice(&self.value(a).data()[n * ca * inner..(n + 1) * ca * inner]);
            out.extend_from_slice(&self.value(b).data()[n * cb * inner..(n + 1) * cb * inner]);
        }
        let value = Tensor::new(vec![ad[0], ca + cb, ad[2], ad[3], ad[4]], out)?;
        Ok(self.push(value, Op::Concat { a, b }))
    }

    /// `y = x Wᵀ + b` with `x: [N, in]`, `W: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err("linear", format!("input {xs:?} vs weight {ws:?}")));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.value(b).shape() != [dout] {
                return Err(shape_err("linear", format!("bias {:?}", self.value(b).shape())));
            }
        }
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![0.0; n * dout];
        for i in 0..n {
            for o in 0..dout {
                let mut acc = b.map_or(0.0, |b| self.value(b).data()[o]);
                for k in 0..din {
                    acc += xv[i * din + k] * wv[o * din + k];
                }
                out[i * dout + o] = acc;
            }
        }
        let value = Tensor::new(vec![n, dout], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(shape_err("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let m = (0..len).map(|k| src[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..len {
                    let e = (src[idx(k)] - m).exp();
                    out[idx(k)] = e;
                    z += e;
                }
                for k in 0..len {
                    out[idx(k)] /= z;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Softmax { x, axis }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Multiplies channel `k` of `x: [N, C, ...]` by `c[k]`.
    pub fn scale_channels(&mut self, x: Var, c: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        if xs.len() < 2 || self.value(c).shape() != [xs[1]] {
            return Err(shape_err(
                "scale_channels",
                format!("input {xs:?} vs channel factors {:?}", self.value(c).shape()),
            ));
        }
        let (outer, ch, inner) = split_axis(xs, 1);
        let (xv, cv) = (self.value(x).data(), self.value(c).data());
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for (k, &f) in cv.iter().enumerate() {
                let base = (o * ch + k) * inner;
                for i in base..base + inner {
                    out[i] = xv[i] * f;
                }
            }
        }
        let value = Tensor::new(xs.to_vec(), out)?;
        Ok(self.push(value, Op::ScaleChannels { x, c }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    /// `scale * x + offset`; the offset carries no gradient.
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + offset);
        self.push(value, Op::Affine { x, scale })
    }

    /// Mean cross-entropy of `softmax(logits)` along axis 1 against class
    /// indices, one index per `(n, spatial)` position in row-major order.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.value(logits).shape().to_vec();
        if shape.len() < 2 {
            return Err(shape_err("cross_entropy", format!("logits {shape:?} lack a class axis")));
        }
        let (outer, classes, inner) = split_axis(&shape, 1);
        if targets.len() != outer * inner {
            return Err(shape_err(
                "cross_entropy",
                format!("{} targets for {} positions", targets.len(), outer * inner),
            ));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
            return Err(RanpError::Contract(format!("class index {t} >= class count {classes}")));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; src.len()];
        let mut loss = 0.0;
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * classes + k) * inner + i;
                let m = (0..classes).map(|k| src[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..classes).map(|k| (src[idx(k)] - m).exp()).sum();
                let lz = z.ln();
                for k in 0..classes {
                    probs[idx(k)] = (src[idx(k)] - m - lz).exp();
                }
                loss -= src[idx(targets[o * inner + i])] - m - lz;
            }
        }
        let count = (outer * inner) as f64;
        let value = Tensor::scalar(loss / count);
        Ok(self.push(value, Op::SoftmaxCrossEntropy { logits, probs, targets: targets.to_vec() }))
    }

    /// Backpropagates from a scalar `loss`, accumulating into every node's grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(RanpError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let seed = Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?;
        self.backward_with(loss, seed)
    }

    /// Vector-Jacobian product seeded with `upstream` at `output`.
    pub fn backward_with(&mut self, output: Var, upstream: Tensor) -> Result<()> {
        self.value(output).expect_same_shape(&upstream, "backward")?;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(upstream.into_data());
        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            let shape = self.nodes[i].value.shape().to_vec();
            let t = Tensor::new(shape, g)?;
            match &mut self.grads[i] {
                Some(acc) => acc.add_assign(&t)?,
                slot => *slot = Some(t),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv3d { x, w, b, cfg } => {
                let xd = self.value(*x).dims5("conv3d").expect("taped shape");
                let wd = self.value(*w).dims5("conv3d").expect("taped shape");
                let od = self.nodes[i].value.dims5("conv3d").expect("taped shape");
                let (gx, gw, gb) = kernels::conv3d_backward(val(*x), xd, val(*w), wd, *cfg, od, g);
                accumulate(adj, *x, &gx);
                accumulate(adj, *w, &gw);
                if let Some(b) = b {
                    accumulate(adj, *b, &gb);
                }
            }
            Op::Relu(x) => {
                let gx: Vec<f64> =
                    val(*x).iter().zip(g).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
                accumulate(adj, *x, &gx);
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = vec![0.0; val(*x).len()];
                for (o, &src) in argmax.iter().enumerate() {
                    gx[src] += g[o];
                }
                accumulate(adj, *x, &gx);
            }
            Op::Upsample { x, factor } => {
                let xd = self.value(*x).dims5("upsample").expect("taped shape");
                let od = self.nodes[i].value.dims5("upsample").expect("taped shape");
                let mut gx = vec![0.0; val(*x).len()];
                for (o, &go) in g.iter().enumerate() {
                    gx[kernels::upsample_source(o, xd, od, *factor)] += go;
                }
                accumulate(adj, *x, &gx);
            }
            Op::Concat { a, b } => {
                let ad = self.value(*a).dims5("concat").expect("taped shape");
                let cb = self.value(*b).shape()[1];
                let inner: usize = ad[2..].iter().product();
                let ca = ad[1];
                let (mut ga, mut gb) = (Vec::new(), Vec::new());
                for n in 0..ad[0] {
                    let base = n * (ca + cb) * inner;
                    ga.extend_from_slice(&g[base..base + ca * inner]);
                    gb.extend_from_slice(&g[base + ca * inner..base + (ca + cb) * inner]);
                }
                accumulate(adj, *a, &ga);
                accumulate(adj, *b, &gb);
            }
            Op::Linear { x, w, b } => {
                let xs = self.value(*x).shape();
                let (n, din) = (xs[0], xs[1]);
                let dout = self.value(*w).shape()[0];
                let (xv, wv) = (val(*x), val(*w));
                let mut gx = vec![0.0; n * din];
                let mut gw = vec![0.0; dout * din];
                let mut gb = vec![0.0; dout];
                for r in 0..n {
                    for o in 0..dout {
                        let go = g[r * dout + o];
                        gb[o] += go;
                        for k in 0..din {
                            gx[r * din + k] += go * wv[o * din + k];
                            gw[o * din + k] += go * xv[r * din + k];
                        }
                    }
                }
                accumulate(adj, *x, &gx);
                accumulate(adj, *w, &gw);
                if let Some(b) = b {
                    accumulate(adj, *b, &gb);
                }
            }
            Op::Softmax { x, axis } => {
                let y = self.nodes[i].value.data();
                let (outer, len, inner) = split_axis(self.nodes[i].value.shape(), *axis);
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for s in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + s;
                        let dot: f64 = (0..len).map(|k| g[idx(k)] * y[idx(k)]).sum();
                        for k in 0..len {
                            gx[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                        }
                    }
                }
                accumulate(adj, *x, &gx);
            }
            Op::Mul(a, b) => {
                let ga: Vec<f64> = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                let gb: Vec<f64> = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                accumulate(adj, *a, &ga);
                accumulate(adj, *b, &gb);
            }
            Op::Add(a, b) => {
                accumulate(adj, *a, g);
                accumulate(adj, *b, g);
            }
            Op::ScaleChannels { x, c } => {
                let (outer, ch, inner) = split_axis(self.value(*x).shape(), 1);
                let (xv, cv) = (val(*x), val(*c));
                let mut gx = vec![0.0; xv.len()];
                let mut gc = vec![0.0; ch];
                for o in 0..outer {
                    for k in 0..ch {
                        let base = (o * ch + k) * inner;
                        for s in 0..inner {
                            gx[base + s] = g[base + s] * cv[k];
                            gc[k] += g[base + s] * xv[base + s];
                        }
                    }
                }
                accumulate(adj, *x, &gx);
                accumulate(adj, *c, &gc);
            }
            Op::Reshape(x) => accumulate(adj, *x, g),
            Op::Sum(x) => {
                let gx = vec![g[0]; val(*x).len()];
                accumulate(adj, *x, &gx);
            }
            Op::Affine { x, scale } => {
                let gx: Vec<f64> = g.iter().map(|g| g * scale).collect();
                accumulate(adj, *x, &gx);
            }
            Op::SoftmaxCrossEntropy { logits, probs, targets } => {
                let (outer, classes, inner) = split_axis(self.value(*logits).shape(), 1);
                let scale = g[0] / (outer * inner) as f64;
                let mut gx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for o in 0..outer {
                    for s in 0..inner {
                        gx[(o * classes + targets[o * inner + s]) * inner + s] -= scale;
                    }
                }
                accumulate(adj, *logits, &gx);
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut adj[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g.to_vec()),
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Output extents of a convolution, or a configuration error if any is < 1.
pub fn conv_out_dims(xd: [usize; 5], wd: [usize; 5], cfg: ConvParams) -> Result<[usize; 5]> {
    if cfg.stride == 0 {
        return Err(RanpError::Config("conv stride must be positive".into()));
    }
    let mut od = [xd[0], wd[0], 0, 0, 0];
    for a in 0..3 {
        let span = xd[2 + a] + 2 * cfg.padding;
        if span < wd[2 + a] {
            return Err(RanpError::Config(format!(
                "conv output extent < 1 on axis {a}: input {} + 2*padding {} < kernel {}",
                xd[2 + a],
                cfg.padding,
                wd[2 + a]
            )));
        }
        od[2 + a] = (span - wd[2 + a]) / cfg.stride + 1;
    }
    Ok(od)
}

pub fn pool_out_dims(xd: [usize; 5], window: usize, stride: usize) -> Result<[usize; 5]> {
    let mut od = [xd[0], xd[1], 0, 0, 0];
    for a in 0..3 {
        if xd[2 + a] < window {
            return Err(RanpError::Config(format!(
                "pool output extent < 1 on axis {a}: input {} < window {window}",
                xd[2 + a]
            )));
        }
        od[2 + a] = (xd[2 + a] - window) / stride + 1;
    }
    Ok(od)
}

mod kernels {
    use super::ConvParams;

    #[inline]
    fn idx5(d: [usize; 5], n: usize, c: usize, z: usize, y: usize, x: usize) -> usize {
        (((n * d[1] + c) * d[2] + z) * d[3] + y) * d[4] + x
    }

    /// Input coordinates touched by kernel tap `k` along one axis, as
    /// `(first_out, last_out_exclusive)` so that `o*stride + k - pad` is in range.
    #[inline]
    fn valid_range(k: usize, stride: usize, pad: usize, input: usize, output: usize) -> (usize, usize) {
        // o*s + k >= pad  and  o*s + k - pad < input
        let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
        let hi = if input + pad > k { (input + pad - k).div_ceil(stride).min(output) } else { 0 };
        (lo, hi.max(lo))
    }

    pub fn conv3d_forward(
        x: &[f64],
        xd: [usize; 5],
        w: &[f64],
        wd: [usize; 5],
        b: Option<&[f64]>,
        cfg: ConvParams,
        od: [usize; 5],
    ) -> Vec<f64> {
        let (s, p) = (cfg.stride, cfg.padding);
        let mut out = vec![0.0; od.iter().product()];
        let plane = od[2] * od[3] * od[4];
        for n in 0..xd[0] {
            for co in 0..wd[0] {
                let base = idx5(od, n, co, 0, 0, 0);
                if let Some(b) = b {
                    out[base..base + plane].iter_mut().for_each(|v| *v = b[co]);
                }
                for ci in 0..wd[1] {
                    for kz in 0..wd[2] {
                        let (z0, z1) = valid_range(kz, s, p, xd[2], od[2]);
                        for ky in 0..wd[3] {
                            let (y0, y1) = valid_range(ky, s, p, xd[3], od[3]);
                            for kx in 0..wd[4] {
                                let (x0, x1) = valid_range(kx, s, p, xd[4], od[4]);
                                let wv = w[idx5(wd, co, ci, kz, ky, kx)];
                                for oz in z0..z1 {
                                    let iz = oz * s + kz - p;
                                    for oy in y0..y1 {
                                        let iy = oy * s + ky - p;
                                        let orow = idx5(od, n, co, oz, oy, 0);
                                        let irow = idx5(xd, n, ci, iz, iy, 0);
                                        for ox in x0..x1 {
                                            out[orow + ox] += wv * x[irow + ox * s + kx - p];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[allow(clippy::needless_range_loop)]
    pub fn conv3d_backward(
        x: &[f64],
        xd: [usize; 5],
        w: &[f64],
        wd: [usize; 5],
        cfg: ConvParams,
        od: [usize; 5],
        g: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (s, p) = (cfg.stride, cfg.padding);
        let mut gx = vec![0.0; x.len()];
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; wd[0]];
        let plane = od[2] * od[3] * od[4];
        for n in 0..xd[0] {
            for co in 0..wd[0] {
                let base = idx5(od, n, co, 0, 0, 0);
                gb[co] += g[base..base + plane].iter().sum::<f64>();
                for ci in 0..wd[1] {
                    for kz in 0..wd[2] {
                        let (z0, z1) = valid_range(kz, s, p, xd[2], od[2]);
                        for ky in 0..wd[3] {
                            let (y0, y1) = valid_range(ky, s, p, xd[3], od[3]);
                            for kx in 0..wd[4] {
                                let (x0, x1) = valid_range(kx, s, p, xd[4], od[4]);
                                let wi = idx5(wd, co, ci, kz, ky, kx);
                                let wv = w[wi];
                                let mut acc = 0.0;
                                for oz in z0..z1 {
                                    let iz = oz * s + kz - p;
                                    for oy in y0..y1 {
                                        let iy = oy * s + ky - p;
                                        let orow = idx5(od, n, co, oz, oy, 0);
                                        let irow = idx5(xd, n, ci, iz, iy, 0);
                                        for ox in x0..x1 {
                                            let go = g[orow + ox];
                                            let ii = irow + ox * s + kx - p;
                                            acc += go * x[ii];
                                            gx[ii] += go * wv;
                                        }
                                    }
                                }
                                gw[wi] += acc;
                            }
                        }
                    }
                }
            }
        }
        (gx, gw, gb)
    }

    /// Returns pooled values and, per output cell, the flat input index of the
    /// first maximal element in row-major window order.
    pub fn maxpool_forward(
        x: &[f64],
        xd: [usize; 5],
        window: usize,
        stride: usize,
        od: [usize; 5],
    ) -> (Vec<f64>, Vec<usize>) {
        let total = od.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut arg = Vec::with_capacity(total);
        for n in 0..od[0] {
            for c in 0..od[1] {
                for oz in 0..od[2] {
                    for oy in 0..od[3] {
                        for ox in 0..od[4] {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_i = usize::MAX;
                            for kz in 0..window {
                                for ky in 0..window {
                                    for kx in 0..window {
                                        let i = idx5(
                                            xd,
                                            n,
                                            c,
                                            oz * stride + kz,
                                            oy * stride + ky,
                                            ox * stride + kx,
                                        );
                                        if best_i == usize::MAX || x[i] > best {
                                            best = x[i];
                                            best_i = i;
                                        }
                                    }
                                }
                            }
                            out.push(best);
                            arg.push(best_i);
                        }
                    }
                }
            }
        }
        (out, arg)
    }

    pub fn upsample_source(o: usize, xd: [usize; 5], od: [usize; 5], factor: usize) -> usize {
        let ox = o % od[4];
        let oy = (o / od[4]) % od[3];
        let oz = (o / (od[4] * od[3])) % od[2];
        let nc = o / (od[4] * od[3] * od[2]);
        ((nc * xd[2] + oz / factor) * xd[3] + oy / factor) * xd[4] + ox / factor
    }
}
