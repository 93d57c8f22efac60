//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in execution order, so the tape is
//! already topologically sorted: the backward pass walks it once in reverse.
//! Values are immutable once recorded.

use super::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
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
    Mul(Var, Var),
    ScaleBy {
        x: Var,
        s: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Softmax(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        cols: Vec<f64>,
    },
    AvgPool {
        input: Var,
        factor: usize,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Sum(Var),
    Mean(Var),
    External {
        input: Var,
        grad: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every leaf that requires them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }
}

fn conv_out(size: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if padded < k || !(padded - k).is_multiple_of(stride) {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

/// `c += op(a) · op(b)` for row-major matrices, `op(x)` = `xᵀ` when the flag is set.
#[allow(clippy::too_many_arguments)]
fn matmul_acc(
    m: usize,
    n: usize,
    k: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
) {
    match (ta, tb) {
        (false, false) => gemm::gemm_nn(m, n, k, a, b, c),
        (false, true) => gemm::gemm_nt(m, n, k, a, b, c),
        (true, false) => gemm::gemm_tn(m, n, k, a, b, c),
        (true, true) => {
            // a is stored [k×m]; materialize [m×k]
            let mut at = vec![0.0; m * k];
            for p in 0..k {
                for i in 0..m {
                    at[i * k + p] = a[p * m + i];
                }
            }
            gemm::gemm_nt(m, n, k, &at, b, c)
        }
    }
}

struct MatDims {
    batch: usize,
    m: usize,
    n: usize,
    k: usize,
    a_rows: usize,
    a_cols: usize,
    b_rows: usize,
    b_cols: usize,
}

fn matmul_dims(a: &[usize], b: &[usize], ta: bool, tb: bool) -> Result<MatDims> {
    let (batch, a2, b2) = match (a, b) {
        ([ar, ac], [br, bc]) => (1, [*ar, *ac], [*br, *bc]),
        ([ab, ar, ac], [bb, br, bc]) if ab == bb => (*ab, [*ar, *ac], [*br, *bc]),
        _ => {
            return Err(Error::dim(
                "matmul",
                format!("incompatible operands {a:?} and {b:?}"),
            ))
        }
    };
    let (m, ka) = if ta { (a2[1], a2[0]) } else { (a2[0], a2[1]) };
    let (kb, n) = if tb { (b2[1], b2[0]) } else { (b2[0], b2[1]) };
    if ka != kb {
        return Err(Error::dim(
            "matmul",
            format!(
                "inner dimensions differ: {a:?} (transposed: {ta}) vs {b:?} (transposed: {tb})"
            ),
        ));
    }
    Ok(MatDims {
        batch,
        m,
        n,
        k: ka,
        a_rows: a2[0],
        a_cols: a2[1],
        b_rows: b2[0],
        b_cols: b2[1],
    })
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, name: &str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// `x · s` with `s` a single-element tensor.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::dim(
                "scale_by",
                format!("scale must hold one value, got shape {:?}", self.shape(s)),
            ));
        }
        let sv = self.value(s).data()[0];
        let out = self.value(x).map(|v| v * sv);
        self.push("scale_by", out, Op::ScaleBy { x, s }, &[x, s])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push("relu", out, Op::Relu(x), &[x])
    }

    /// Logistic sigmoid. Outputs are clamped into the open interval (0, 1)
    /// so downstream probabilities never hit exactly 0 or 1.
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x), &[x])
    }

    /// Plain or batched matrix product, optionally transposing either
    /// operand's last two axes.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let d = matmul_dims(self.shape(a), self.shape(b), ta, tb)?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; d.batch * d.m * d.n];
        let (sa, sb, sc) = (d.a_rows * d.a_cols, d.b_rows * d.b_cols, d.m * d.n);
        for bi in 0..d.batch {
            matmul_acc(
                d.m,
                d.n,
                d.k,
                &x[bi * sa..(bi + 1) * sa],
                ta,
                &y[bi * sb..(bi + 1) * sb],
                tb,
                &mut out[bi * sc..(bi + 1) * sc],
            );
        }
        let shape = if self.value(a).rank() == 2 {
            vec![d.m, d.n]
        } else {
            vec![d.batch, d.m, d.n]
        };
        let out = Tensor::new(shape, out)?;
        self.push("matmul", out, Op::MatMul { a, b, ta, tb }, &[a, b])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let width = *t.shape().last().unwrap();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(width) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        self.push("softmax", out, Op::Softmax(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    /// Concatenate `[B, C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).dims4("concat")?;
        let mut channels = 0;
        for &p in parts {
            let [b, c, h, w] = self.value(p).dims4("concat")?;
            if b != first[0] || h != first[2] || w != first[3] {
                return Err(Error::dim(
                    "concat",
                    format!("{:?} vs {:?}", self.shape(parts[0]), self.shape(p)),
                ));
            }
            channels += c;
        }
        let [batch, _, h, w] = first;
        let plane = h * w;
        let mut out = Vec::with_capacity(batch * channels * plane);
        for bi in 0..batch {
            for &p in parts {
                let t = self.value(p);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[bi * c * plane..(bi + 1) * c * plane]);
            }
        }
        let out = Tensor::new(vec![batch, channels, h, w], out)?;
        self.push("concat", out, Op::Concat(parts.to_vec()), parts)
    }

    /// 2-D cross-correlation with zero padding.
    ///
    /// `input` is `[B, C, H, W]`, `kernel` is `[O, C, kH, kW]` with odd kernel
    /// sides, `bias` (if any) is `[O]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let [batch, c, h, w] = self.value(input).dims4("conv2d")?;
        let kshape = self.shape(kernel).to_vec();
        let [o, kc, kh, kw] = match kshape[..] {
            [o, kc, kh, kw] => [o, kc, kh, kw],
            _ => {
                return Err(Error::dim(
                    "conv2d",
                    format!("kernel must be [O, C, kH, kW], got {kshape:?}"),
                ))
            }
        };
        if kc != c {
            return Err(Error::dim(
                "conv2d",
                format!(
                    "input {:?} has {c} channels but kernel {kshape:?} expects {kc}",
                    self.shape(input)
                ),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::dim(
                "conv2d",
                format!("kernel sides must be odd, got {kshape:?}"),
            ));
        }
        if stride == 0 {
            return Err(Error::Parameter("conv2d stride must be positive".into()));
        }
        let (ho, wo) = match (
            conv_out(h, kh, stride, padding),
            conv_out(w, kw, stride, padding),
        ) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => {
                return Err(Error::dim(
                    "conv2d",
                    format!(
                        "input {:?} with kernel {kshape:?}, stride {stride}, padding {padding} \
                         does not give an integral output size",
                        self.shape(input)
                    ),
                ))
            }
        };
        if let Some(bv) = bias {
            if self.shape(bv) != [o] {
                return Err(Error::dim(
                    "conv2d",
                    format!("bias must be [{o}], got {:?}", self.shape(bv)),
                ));
            }
        }

        let ckk = c * kh * kw;
        let hw = ho * wo;
        let x = self.value(input).data();
        let kdata = self.value(kernel).data();
        let mut cols = vec![0.0; batch * ckk * hw];
        let mut out = vec![0.0; batch * o * hw];
        for bi in 0..batch {
            let xin = &x[bi * c * h * w..(bi + 1) * c * h * w];
            let col = &mut cols[bi * ckk * hw..(bi + 1) * ckk * hw];
            im2col(xin, c, h, w, kh, kw, stride, padding, ho, wo, col);
            let ob = &mut out[bi * o * hw..(bi + 1) * o * hw];
            if let Some(bv) = bias {
                let bdata = self.value(bv).data();
                for (oc, row) in ob.chunks_mut(hw).enumerate() {
                    row.fill(bdata[oc]);
                }
            }
            gemm::gemm_nn(o, hw, ckk, kdata, col, ob);
        }
        let out = Tensor::new(vec![batch, o, ho, wo], out)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        self.push(
            "conv2d",
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
                cols,
            },
            &inputs,
        )
    }

    /// Average pooling over non-overlapping `factor × factor` windows.
    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        let [b, c, h, w] = self.value(x).dims4("avg_pool")?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::dim(
                "avg_pool",
                format!("spatial size {h}×{w} is not divisible by factor {factor}"),
            ));
        }
        let (ho, wo) = (h / factor, w / factor);
        let inv = 1.0 / (factor * factor) as f64;
        let src = self.value(x).data();
        let mut out = vec![0.0; b * c * ho * wo];
        for plane in 0..b * c {
            let s = &src[plane * h * w..(plane + 1) * h * w];
            let d = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
            for y in 0..ho {
                for xx in 0..wo {
                    let mut acc = 0.0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += s[(y * factor + dy) * w + xx * factor + dx];
                        }
                    }
                    d[y * wo + xx] = acc * inv;
                }
            }
        }
        let out = Tensor::new(vec![b, c, ho, wo], out)?;
        self.push("avg_pool", out, Op::AvgPool { input: x, factor }, &[x])
    }

    /// Nearest-neighbour upsampling: every pixel becomes a `factor × factor` block.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let [b, c, h, w] = self.value(x).dims4("upsample")?;
        if factor == 0 {
            return Err(Error::Parameter("upsample factor must be ≥ 1".into()));
        }
        let (ho, wo) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut out = vec![0.0; b * c * ho * wo];
        for plane in 0..b * c {
            let s = &src[plane * h * w..(plane + 1) * h * w];
            let d = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
            for y in 0..ho {
                for xx in 0..wo {
                    d[y * wo + xx] = s[(y / factor) * w + xx / factor];
                }
            }
        }
        let out = Tensor::new(vec![b, c, ho, wo], out)?;
        self.push("upsample", out, Op::Upsample { input: x, factor }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.push("mean", out, Op::Mean(x), &[x])
    }

    /// Attach a scalar computed outside the graph, together with its gradient
    /// with respect to `x`. Used for losses evaluated in closed form.
    pub fn external_scalar(&mut self, x: Var, value: f64, grad: Tensor) -> Result<Var> {
        if grad.shape() != self.shape(x) {
            return Err(Error::dim(
                "external_scalar",
                format!("gradient {:?} vs input {:?}", grad.shape(), self.shape(x)),
            ));
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite("external_scalar gradient".into()));
        }
        self.push(
            "external_scalar",
            Tensor::scalar(value),
            Op::External { input: x, grad },
            &[x],
        )
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        grads[loss.0] = Some(Tensor::full(lt.shape().to_vec(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
        if !self.nodes[v.0].needs_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g)?,
            slot => *slot = Some(g),
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = zip_map(g, y, |gv, yv| gv * yv);
                    self.accumulate(grads, *a, d)?;
                }
                if self.needs(*b) {
                    let d = zip_map(g, x, |gv, xv| gv * xv);
                    self.accumulate(grads, *b, d)?;
                }
            }
            Op::ScaleBy { x, s } => {
                let sv = self.value(*s).data()[0];
                if self.needs(*x) {
                    self.accumulate(grads, *x, g.map(|v| v * sv))?;
                }
                if self.needs(*s) {
                    let total = gemm::dot(g.data(), self.value(*x).data());
                    let ds = Tensor::new(self.shape(*s).to_vec(), vec![total])?;
                    self.accumulate(grads, *s, ds)?;
                }
            }
            Op::Relu(x) => {
                let d = zip_map(g, self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *x, d)?;
            }
            Op::Sigmoid(x) => {
                let d = zip_map(g, &node.value, |gv, yv| gv * yv * (1.0 - yv));
                self.accumulate(grads, *x, d)?;
            }
            Op::MatMul { a, b, ta, tb } => {
                let (ta, tb) = (*ta, *tb);
                let (av, bv) = (self.value(*a), self.value(*b));
                let d = matmul_dims(av.shape(), bv.shape(), ta, tb)?;
                let (sa, sb, sc) = (d.a_rows * d.a_cols, d.b_rows * d.b_cols, d.m * d.n);
                let gd = g.data();
                if self.needs(*a) {
                    let mut da = vec![0.0; d.batch * sa];
                    for bi in 0..d.batch {
                        let gc = &gd[bi * sc..(bi + 1) * sc];
                        let bs = &bv.data()[bi * sb..(bi + 1) * sb];
                        let out = &mut da[bi * sa..(bi + 1) * sa];
                        if ta {
                            // dAᵀ = op(B) · dCᵀ, shape [k×m]
                            matmul_acc(d.k, d.m, d.n, bs, tb, gc, true, out);
                        } else {
                            // dA = dC · op(B)ᵀ, shape [m×k]
                            matmul_acc(d.m, d.k, d.n, gc, false, bs, !tb, out);
                        }
                    }
                    self.accumulate(grads, *a, Tensor::new(av.shape().to_vec(), da)?)?;
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; d.batch * sb];
                    for bi in 0..d.batch {
                        let gc = &gd[bi * sc..(bi + 1) * sc];
                        let as_ = &av.data()[bi * sa..(bi + 1) * sa];
                        let out = &mut db[bi * sb..(bi + 1) * sb];
                        if tb {
                            // dBᵀ = dCᵀ · op(A), shape [n×k]
                            matmul_acc(d.n, d.k, d.m, gc, true, as_, ta, out);
                        } else {
                            // dB = op(A)ᵀ · dC, shape [k×n]
                            matmul_acc(d.k, d.n, d.m, as_, !ta, gc, false, out);
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), db)?)?;
                }
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let width = *y.shape().last().unwrap();
                let mut d = vec![0.0; y.len()];
                for ((drow, yrow), grow) in d
                    .chunks_mut(width)
                    .zip(y.data().chunks(width))
                    .zip(g.data().chunks(width))
                {
                    let inner = gemm::dot(grow, yrow);
                    for ((dv, &yv), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
                        *dv = yv * (gv - inner);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), d)?)?;
            }
            Op::Reshape(x) => {
                let d = g.clone().reshape(self.shape(*x).to_vec())?;
                self.accumulate(grads, *x, d)?;
            }
            Op::Concat(parts) => {
                let [batch, channels, h, w] = node.value.dims4("concat")?;
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(batch * c * plane);
                        for bi in 0..batch {
                            let start = (bi * channels + offset) * plane;
                            d.extend_from_slice(&g.data()[start..start + c * plane]);
                        }
                        self.accumulate(grads, p, Tensor::new(vec![batch, c, h, w], d)?)?;
                    }
                    offset += c;
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
                cols,
            } => {
                let [batch, c, h, w] = self.value(*input).dims4("conv2d")?;
                let kshape = self.shape(*kernel).to_vec();
                let (o, kh, kw) = (kshape[0], kshape[2], kshape[3]);
                let [_, _, ho, wo] = node.value.dims4("conv2d")?;
                let (ckk, hw) = (c * kh * kw, ho * wo);
                let gd = g.data();
                if self.needs(*kernel) {
                    let mut dk = vec![0.0; o * ckk];
                    for bi in 0..batch {
                        gemm::gemm_nt(
                            o,
                            ckk,
                            hw,
                            &gd[bi * o * hw..(bi + 1) * o * hw],
                            &cols[bi * ckk * hw..(bi + 1) * ckk * hw],
                            &mut dk,
                        );
                    }
                    self.accumulate(grads, *kernel, Tensor::new(kshape.clone(), dk)?)?;
                }
                if let Some(bv) = bias {
                    if self.needs(*bv) {
                        let mut db = vec![0.0; o];
                        for bi in 0..batch {
                            for (oc, row) in
                                gd[bi * o * hw..(bi + 1) * o * hw].chunks(hw).enumerate()
                            {
                                db[oc] += row.iter().sum::<f64>();
                            }
                        }
                        self.accumulate(grads, *bv, Tensor::new(vec![o], db)?)?;
                    }
                }
                if self.needs(*input) {
                    let kdata = self.value(*kernel).data();
                    let mut dx = vec![0.0; batch * c * h * w];
                    let mut dcol = vec![0.0; ckk * hw];
                    for bi in 0..batch {
                        dcol.fill(0.0);
                        gemm::gemm_tn(
                            ckk,
                            hw,
                            o,
                            kdata,
                            &gd[bi * o * hw..(bi + 1) * o * hw],
                            &mut dcol,
                        );
                        col2im(
                            &dcol,
                            c,
                            h,
                            w,
                            kh,
                            kw,
                            *stride,
                            *padding,
                            ho,
                            wo,
                            &mut dx[bi * c * h * w..(bi + 1) * c * h * w],
                        );
                    }
                    self.accumulate(grads, *input, Tensor::new(vec![batch, c, h, w], dx)?)?;
                }
            }
            Op::AvgPool { input, factor } => {
                let [b, c, h, w] = self.value(*input).dims4("avg_pool")?;
                let f = *factor;
                let (ho, wo) = (h / f, w / f);
                let inv = 1.0 / (f * f) as f64;
                let mut d = vec![0.0; b * c * h * w];
                for plane in 0..b * c {
                    let gs = &g.data()[plane * ho * wo..(plane + 1) * ho * wo];
                    let dd = &mut d[plane * h * w..(plane + 1) * h * w];
                    for y in 0..h {
                        for x in 0..w {
                            dd[y * w + x] = gs[(y / f) * wo + x / f] * inv;
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::new(vec![b, c, h, w], d)?)?;
            }
            Op::Upsample { input, factor } => {
                let [b, c, h, w] = self.value(*input).dims4("upsample")?;
                let f = *factor;
                let (ho, wo) = (h * f, w * f);
                let mut d = vec![0.0; b * c * h * w];
                for plane in 0..b * c {
                    let gs = &g.data()[plane * ho * wo..(plane + 1) * ho * wo];
                    let dd = &mut d[plane * h * w..(plane + 1) * h * w];
                    for y in 0..ho {
                        for x in 0..wo {
                            dd[(y / f) * w + x / f] += gs[y * wo + x];
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::new(vec![b, c, h, w], d)?)?;
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                self.accumulate(grads, *x, Tensor::full(self.shape(*x).to_vec(), gv))?;
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                let gv = g.data()[0] / n;
                self.accumulate(grads, *x, Tensor::full(self.shape(*x).to_vec(), gv))?;
            }
            Op::External { input, grad } => {
                let gv = g.data()[0];
                self.accumulate(grads, *input, grad.map(|v| v * gv))?;
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
    .expect("shapes already validated")
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
    col: &mut [f64],
) {
    let hw = ho * wo;
    for ch in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &mut col[((ch * kh + ki) * kw + kj) * hw..][..hw];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &x[(ch * h + iy as usize) * w..][..w];
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    col: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
    dx: &mut [f64],
) {
    let hw = ho * wo;
    for ch in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &col[((ch * kh + ki) * kw + kj) * hw..][..hw];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut dx[(ch * h + iy as usize) * w..][..w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}
