use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::tensor::Tensor;

/// Handle to a node on a [`Tape`]. Only valid for the tape that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Extension point for operations with hand-derived backward rules that live
/// outside this module (correlation losses and the like).
pub trait CustomOp<R: Real>: Send {
    fn name(&self) -> &'static str;

    /// Tape inputs this operation consumed, in a fixed order.
    fn inputs(&self) -> Vec<Var>;

    /// Cotangents for each input (same order as [`CustomOp::inputs`]).
    /// `None` entries are skipped by the driver.
    fn backward(
        &self,
        out_value: &Tensor<R>,
        out_grad: &Tensor<R>,
        input_values: &[&Tensor<R>],
    ) -> Vec<Option<Tensor<R>>>;
}

enum Op<R: Real> {
    Leaf,
    Conv2d { input: Var, kernels: Var, bias: Var },
    MaxPool2 { input: Var, argmax: Vec<u32> },
    PointwiseConv1d { input: Var, kernels: Var, bias: Var },
    Dense { input: Var, weights: Var, bias: Var },
    Relu { input: Var },
    Sigmoid { input: Var },
    Softmax { input: Var },
    Concat { inputs: Vec<Var> },
    StackRows { inputs: Vec<Var> },
    Log { input: Var },
    Sum { input: Var },
    Mean { input: Var },
    Mul { a: Var, b: Var },
    Add { a: Var, b: Var },
    MulConst { input: Var, factor: Tensor<R> },
    Affine { input: Var, scale: R },
    Clamp { input: Var, lo: R, hi: R },
    Dropout { input: Var, mask: Vec<bool>, scale: R },
    Custom(Box<dyn CustomOp<R>>),
}

struct Node<R: Real> {
    value: Tensor<R>,
    grad: Option<Tensor<R>>,
    op: Op<R>,
    needs_grad: bool,
}

/// Reverse-mode tape. Operations append nodes; [`Tape::backward`] replays
/// them in reverse, accumulating cotangents into every node that needs them.
///
/// A tape and its tensors are confined to one thread; independent tapes
/// (e.g. different cross-validation folds) may run on different threads.
/// Build a fresh tape per optimization step rather than reusing one.
pub struct Tape<R: Real> {
    nodes: Vec<Node<R>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a trainable leaf: participates in gradient accumulation.
    pub fn leaf(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Register a constant leaf: no gradient is ever stored for it.
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<R> {
        &self.nodes[var.0].value
    }

    /// Gradient of the last `backward` output with respect to `var`.
    /// Present only for leaves (intermediate cotangents are released as the
    /// reverse sweep consumes them).
    pub fn grad(&self, var: Var) -> Option<&Tensor<R>> {
        self.nodes[var.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_var(&self, var: Var, context: &'static str) -> Result<()> {
        if var.0 >= self.nodes.len() {
            return Err(Error::invalid(format!(
                "{context}: variable #{} does not belong to this tape",
                var.0
            )));
        }
        Ok(())
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// 3x3 convolution, stride 1, zero "same" padding.
    /// input [c_in, h, w], kernels [c_out, c_in, 3, 3], bias [c_out].
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        self.check_var(input, "conv2d")?;
        self.check_var(kernels, "conv2d")?;
        self.check_var(bias, "conv2d")?;
        let in_shape = self.value(input).shape().to_vec();
        let k_shape = self.value(kernels).shape().to_vec();
        let b_shape = self.value(bias).shape().to_vec();
        if in_shape.len() != 3 {
            return Err(Error::shape("conv2d input", "[c_in, h, w]", format!("{in_shape:?}")));
        }
        if k_shape.len() != 4 || k_shape[2] != 3 || k_shape[3] != 3 || k_shape[1] != in_shape[0] {
            return Err(Error::shape(
                "conv2d kernels",
                format!("[c_out, {}, 3, 3]", in_shape[0]),
                format!("{k_shape:?}"),
            ));
        }
        let (c_out, c_in, h, w) = (k_shape[0], in_shape[0], in_shape[1], in_shape[2]);
        if b_shape != [c_out] {
            return Err(Error::shape("conv2d bias", format!("[{c_out}]"), format!("{b_shape:?}")));
        }
        let mut out = vec![R::zero(); c_out * h * w];
        conv2d_forward(
            self.value(input).data(),
            self.value(kernels).data(),
            self.value(bias).data(),
            c_in,
            c_out,
            h,
            w,
            &mut out,
        );
        let needs = self.needs(&[input, kernels, bias]);
        Ok(self.push(
            Tensor::from_raw(vec![c_out, h, w], out),
            Op::Conv2d { input, kernels, bias },
            needs,
        ))
    }

    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    /// Ties resolve to the first element in scan order.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        self.check_var(input, "maxpool2")?;
        let shape = self.value(input).shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::shape("maxpool2 input", "[c, h, w]", format!("{shape:?}")));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        if h < 2 || w < 2 {
            return Err(Error::invalid(format!("maxpool2 needs h, w >= 2, got {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let data = self.value(input).data();
        let mut out = vec![R::zero(); c * oh * ow];
        let mut argmax = vec![0u32; c * oh * ow];
        for ch in 0..c {
            let plane = &data[ch * h * w..(ch + 1) * h * w];
            for y in 0..oh {
                for x in 0..ow {
                    let mut best_idx = 2 * y * w + 2 * x;
                    let mut best = plane[best_idx];
                    for &cand in &[2 * y * w + 2 * x + 1, (2 * y + 1) * w + 2 * x, (2 * y + 1) * w + 2 * x + 1] {
                        if plane[cand] > best {
                            best = plane[cand];
                            best_idx = cand;
                        }
                    }
                    out[(ch * oh + y) * ow + x] = best;
                    argmax[(ch * oh + y) * ow + x] = (ch * h * w + best_idx) as u32;
                }
            }
        }
        let needs = self.needs(&[input]);
        Ok(self.push(
            Tensor::from_raw(vec![c, oh, ow], out),
            Op::MaxPool2 { input, argmax },
            needs,
        ))
    }

    /// Pointwise (kernel size 1) 1-D convolution over landmark rows:
    /// input [l, c_in], kernels [c_out, c_in], bias [c_out] -> [l, c_out].
    pub fn pointwise_conv1d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        self.check_var(input, "pointwise_conv1d")?;
        self.check_var(kernels, "pointwise_conv1d")?;
        self.check_var(bias, "pointwise_conv1d")?;
        let in_shape = self.value(input).shape().to_vec();
        let k_shape = self.value(kernels).shape().to_vec();
        if in_shape.len() != 2 {
            return Err(Error::shape("pointwise_conv1d input", "[l, c_in]", format!("{in_shape:?}")));
        }
        if k_shape.len() != 2 || k_shape[1] != in_shape[1] {
            return Err(Error::shape(
                "pointwise_conv1d kernels",
                format!("[c_out, {}]", in_shape[1]),
                format!("{k_shape:?}"),
            ));
        }
        let (l, c_in, c_out) = (in_shape[0], in_shape[1], k_shape[0]);
        if self.value(bias).shape() != [c_out] {
            return Err(Error::shape(
                "pointwise_conv1d bias",
                format!("[{c_out}]"),
                format!("{:?}", self.value(bias).shape()),
            ));
        }
        let x = self.value(input).data();
        let k = self.value(kernels).data();
        let b = self.value(bias).data();
        let mut out = vec![R::zero(); l * c_out];
        for i in 0..l {
            let row = &x[i * c_in..(i + 1) * c_in];
            for co in 0..c_out {
                out[i * c_out + co] = b[co] + dot(row, &k[co * c_in..(co + 1) * c_in]);
            }
        }
        let needs = self.needs(&[input, kernels, bias]);
        Ok(self.push(
            Tensor::from_raw(vec![l, c_out], out),
            Op::PointwiseConv1d { input, kernels, bias },
            needs,
        ))
    }

    /// Fully connected layer. Accepts a flat input [n_in] (any rank is
    /// flattened) or a batch [b, n_in]; weights [n_out, n_in], bias [n_out].
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        self.check_var(input, "dense")?;
        self.check_var(weights, "dense")?;
        self.check_var(bias, "dense")?;
        let w_shape = self.value(weights).shape().to_vec();
        if w_shape.len() != 2 {
            return Err(Error::shape("dense weights", "[n_out, n_in]", format!("{w_shape:?}")));
        }
        let (n_out, n_in) = (w_shape[0], w_shape[1]);
        if self.value(bias).shape() != [n_out] {
            return Err(Error::shape(
                "dense bias",
                format!("[{n_out}]"),
                format!("{:?}", self.value(bias).shape()),
            ));
        }
        let in_tensor = self.value(input);
        let batched = in_tensor.rank() == 2 && in_tensor.shape()[1] == n_in;
        let rows = if batched {
            in_tensor.shape()[0]
        } else if in_tensor.len() == n_in {
            1
        } else {
            return Err(Error::shape(
                "dense input",
                format!("[{n_in}] or [b, {n_in}]"),
                format!("{:?}", in_tensor.shape()),
            ));
        };
        let x = in_tensor.data();
        let wts = self.value(weights).data();
        let b = self.value(bias).data();
        let mut out = vec![R::zero(); rows * n_out];
        for r in 0..rows {
            let row = &x[r * n_in..(r + 1) * n_in];
            for o in 0..n_out {
                out[r * n_out + o] = b[o] + dot(row, &wts[o * n_in..(o + 1) * n_in]);
            }
        }
        let shape = if batched { vec![rows, n_out] } else { vec![n_out] };
        let needs = self.needs(&[input, weights, bias]);
        Ok(self.push(
            Tensor::from_raw(shape, out),
            Op::Dense { input, weights, bias },
            needs,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.check_var(input, "relu")?;
        let value = self.value(input).map(|v| if v > R::zero() { v } else { R::zero() });
        let needs = self.needs(&[input]);
        Ok(self.push(value, Op::Relu { input }, needs))
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.check_var(input, "sigmoid")?;
        let value = self.value(input).map(sigmoid_scalar);
        let needs = self.needs(&[input]);
        Ok(self.push(value, Op::Sigmoid { input }, needs))
    }

    /// Softmax over the last axis of a [n] or [b, n] tensor.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        self.check_var(input, "softmax")?;
        let t = self.value(input);
        let shape = t.shape().to_vec();
        let n = match shape.len() {
            1 => shape[0],
            2 => shape[1],
            _ => return Err(Error::shape("softmax input", "[n] or [b, n]", format!("{shape:?}"))),
        };
        if n == 0 {
            return Err(Error::invalid("softmax over an empty axis"));
        }
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().cloned().fold(R::neg_infinity(), R::max);
            let mut sum = R::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let needs = self.needs(&[input]);
        Ok(self.push(Tensor::from_raw(shape, out), Op::Softmax { input }, needs))
    }

    /// Concatenate rank-1 tensors in order.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::invalid("concat needs at least one input"));
        }
        let mut data = Vec::new();
        for &v in inputs {
            self.check_var(v, "concat")?;
            let t = self.value(v);
            if t.rank() != 1 {
                return Err(Error::shape("concat input", "[n]", format!("{:?}", t.shape())));
            }
            data.extend_from_slice(t.data());
        }
        let needs = self.needs(inputs);
        let len = data.len();
        Ok(self.push(
            Tensor::from_raw(vec![len], data),
            Op::Concat { inputs: inputs.to_vec() },
            needs,
        ))
    }

    /// Stack equal-length rank-1 tensors into a [rows, n] matrix.
    pub fn stack_rows(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::invalid("stack_rows needs at least one input"));
        }
        self.check_var(inputs[0], "stack_rows")?;
        let n = self.value(inputs[0]).len();
        let mut data = Vec::with_capacity(inputs.len() * n);
        for &v in inputs {
            self.check_var(v, "stack_rows")?;
            let t = self.value(v);
            if t.rank() != 1 || t.len() != n {
                return Err(Error::shape("stack_rows input", format!("[{n}]"), format!("{:?}", t.shape())));
            }
            data.extend_from_slice(t.data());
        }
        let needs = self.needs(inputs);
        Ok(self.push(
            Tensor::from_raw(vec![inputs.len(), n], data),
            Op::StackRows { inputs: inputs.to_vec() },
            needs,
        ))
    }

    /// Elementwise natural log. Errors on non-positive inputs; callers are
    /// expected to clamp probabilities first.
    pub fn log(&mut self, input: Var) -> Result<Var> {
        self.check_var(input, "log")?;
        let t = self.value(input);
        if !t.data().iter().all(|v| *v > R::zero()) {
            return Err(Error::NonFinite("log of non-positive value"));
        }
        let value = t.map(|v| v.ln());
        let needs = self.needs(&[input]);
        Ok(self.push(value, Op::Log { input }, needs))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        self.check_var(input, "sum")?;
        let s: R = self.value(input).data().iter().copied().sum();
        let needs = self.needs(&[input]);
        Ok(self.push(Tensor::scalar(s), Op::Sum { input }, needs))
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        self.check_var(input, "mean")?;
        let t = self.value(input);
        if t.is_empty() {
            return Err(Error::invalid("mean of an empty tensor"));
        }
        let s: R = t.data().iter().copied().sum();
        let value = s / R::of(t.len() as f64);
        let needs = self.needs(&[input]);
        Ok(self.push(Tensor::scalar(value), Op::Mean { input }, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "mul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "add")
    }

    fn binary_elementwise(&mut self, a: Var, b: Var, what: &'static str) -> Result<Var> {
        self.check_var(a, what)?;
        self.check_var(b, what)?;
        let ta = self.value(a);
        let tb = self.value(b);
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                if what == "mul" { "mul" } else { "add" },
                format!("{:?}", ta.shape()),
                format!("{:?}", tb.shape()),
            ));
        }
        let data: Vec<R> = if what == "mul" {
            ta.data().iter().zip(tb.data()).map(|(x, y)| *x * *y).collect()
        } else {
            ta.data().iter().zip(tb.data()).map(|(x, y)| *x + *y).collect()
        };
        let shape = ta.shape().to_vec();
        let needs = self.needs(&[a, b]);
        let op = if what == "mul" { Op::Mul { a, b } } else { Op::Add { a, b } };
        Ok(self.push(Tensor::from_raw(shape, data), op, needs))
    }

    /// Elementwise multiplication by a constant tensor (targets, masks).
    pub fn mul_const(&mut self, input: Var, factor: Tensor<R>) -> Result<Var> {
        self.check_var(input, "mul_const")?;
        let t = self.value(input);
        if t.shape() != factor.shape() {
            return Err(Error::shape(
                "mul_const",
                format!("{:?}", t.shape()),
                format!("{:?}", factor.shape()),
            ));
        }
        let data: Vec<R> = t.data().iter().zip(factor.data()).map(|(x, f)| *x * *f).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(&[input]);
        Ok(self.push(
            Tensor::from_raw(shape, data),
            Op::MulConst { input, factor },
            needs,
        ))
    }

    /// Elementwise scale * x + shift.
    pub fn affine(&mut self, input: Var, scale: R, shift: R) -> Result<Var> {
        self.check_var(input, "affine")?;
        let value = self.value(input).map(|v| scale * v + shift);
        let needs = self.needs(&[input]);
        Ok(self.push(value, Op::Affine { input, scale }, needs))
    }

    /// Elementwise clamp with zero gradient outside [lo, hi].
    pub fn clamp(&mut self, input: Var, lo: R, hi: R) -> Result<Var> {
        self.check_var(input, "clamp")?;
        if !(lo <= hi) {
            return Err(Error::invalid(format!("clamp bounds out of order: [{lo}, {hi}]")));
        }
        let value = self.value(input).map(|v| v.max(lo).min(hi));
        let needs = self.needs(&[input]);
        Ok(self.push(value, Op::Clamp { input, lo, hi }, needs))
    }

    /// Inverted dropout: in training mode each element survives with
    /// probability 1-p and is scaled by 1/(1-p); in eval mode this is the
    /// identity (no node is recorded).
    pub fn dropout<G: Rng>(
        &mut self,
        input: Var,
        p: f64,
        training: bool,
        rng: &mut G,
    ) -> Result<Var> {
        self.check_var(input, "dropout")?;
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(input);
        }
        let scale = R::of(1.0 / (1.0 - p));
        let t = self.value(input);
        let mask: Vec<bool> = (0..t.len()).map(|_| rng.gen::<f64>() >= p).collect();
        let data: Vec<R> = t
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, keep)| if *keep { *v * scale } else { R::zero() })
            .collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(&[input]);
        Ok(self.push(
            Tensor::from_raw(shape, data),
            Op::Dropout { input, mask, scale },
            needs,
        ))
    }

    /// Record an externally computed operation with its own backward rule.
    pub fn custom(&mut self, op: Box<dyn CustomOp<R>>, value: Tensor<R>) -> Result<Var> {
        let inputs = op.inputs();
        for &v in &inputs {
            self.check_var(v, op.name())?;
        }
        let needs = self.needs(&inputs);
        Ok(self.push(value, Op::Custom(op), needs))
    }

    /// Reverse sweep from a scalar output. Leaf gradients remain readable via
    /// [`Tape::grad`]; intermediate cotangents are freed as they are consumed.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        self.check_var(output, "backward")?;
        if self.nodes[output.0].value.len() != 1 {
            return Err(Error::shape(
                "backward output",
                "scalar",
                format!("{:?}", self.nodes[output.0].value.shape()),
            ));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[output.0].needs_grad {
            return Ok(());
        }
        let seed_shape = self.nodes[output.0].value.shape().to_vec();
        self.nodes[output.0].grad = Some(Tensor::full(&seed_shape, R::one()));
        for i in (0..=output.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            if self.nodes[i].grad.is_none() {
                continue;
            }
            let grad_out = self.nodes[i].grad.take().expect("checked above");
            let (before, at) = self.nodes.split_at_mut(i);
            let node = &at[0];
            dispatch_backward(before, &node.op, &node.value, &grad_out)?;
        }
        Ok(())
    }

    /// Hash of every non-smooth decision recorded on the tape (ReLU signs,
    /// pooling argmax choices, clamp saturation, dropout masks). Two forward
    /// passes with the same hash lie on the same smooth piece of the
    /// function, which is what central finite differences require.
    pub fn nonsmooth_signature(&self) -> u64 {
        let mut h = Fnv::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { .. } => {
                    for v in node.value.data() {
                        h.bit(*v > R::zero());
                    }
                }
                Op::MaxPool2 { argmax, .. } => {
                    for a in argmax {
                        h.u32(*a);
                    }
                }
                Op::Clamp { input, lo, hi } => {
                    for v in self.nodes[input.0].value.data() {
                        h.bit(*v >= *lo && *v <= *hi);
                    }
                }
                Op::Dropout { mask, .. } => {
                    for b in mask {
                        h.bit(*b);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf29ce484222325)
    }
    fn byte(&mut self, b: u8) {
        self.0 ^= b as u64;
        self.0 = self.0.wrapping_mul(0x100000001b3);
    }
    fn bit(&mut self, b: bool) {
        self.byte(b as u8);
    }
    fn u32(&mut self, v: u32) {
        for b in v.to_le_bytes() {
            self.byte(b);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

#[inline]
fn sigmoid_scalar<R: Real>(v: R) -> R {
    // Split by sign for numerical stability at large |v|.
    if v >= R::zero() {
        R::one() / (R::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (R::one() + e)
    }
}

/// Dot product with four accumulators to break the add dependency chain.
/// The summation order is fixed, so results are bit-reproducible.
#[inline]
pub(crate) fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    debug_assert_eq!(a.len(), b.len());
    let mut s0 = R::zero();
    let mut s1 = R::zero();
    let mut s2 = R::zero();
    let mut s3 = R::zero();
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        s0 += x[0] * y[0];
        s1 += x[1] * y[1];
        s2 += x[2] * y[2];
        s3 += x[3] * y[3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        s += *x * *y;
    }
    s
}

#[inline]
pub(crate) fn axpy<R: Real>(dst: &mut [R], src: &[R], a: R) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * *s;
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward<R: Real>(
    input: &[R],
    kernels: &[R],
    bias: &[R],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    out: &mut [R],
) {
    for co in 0..c_out {
        let out_plane = &mut out[co * h * w..(co + 1) * h * w];
        out_plane.fill(bias[co]);
        for ci in 0..c_in {
            let in_plane = &input[ci * h * w..(ci + 1) * h * w];
            let k = &kernels[(co * c_in + ci) * 9..(co * c_in + ci + 1) * 9];
            for ky in 0..3usize {
                let dy = ky as isize - 1;
                let y0 = (-dy).max(0) as usize;
                let y1 = ((h as isize - dy).min(h as isize)) as usize;
                for kx in 0..3usize {
                    let wgt = k[ky * 3 + kx];
                    let dx = kx as isize - 1;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = ((w as isize - dx).min(w as isize)) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let src = &in_plane[sy * w + ((x0 as isize + dx) as usize)
                            ..sy * w + ((x1 as isize + dx) as usize)];
                        let dst = &mut out_plane[y * w + x0..y * w + x1];
                        axpy(dst, src, wgt);
                    }
                }
            }
        }
    }
}

fn ensure_grad<R: Real>(nodes: &mut [Node<R>], idx: usize) {
    if nodes[idx].needs_grad && nodes[idx].grad.is_none() {
        let shape = nodes[idx].value.shape().to_vec();
        nodes[idx].grad = Some(Tensor::zeros(&shape));
    }
}

/// Mutable gradient buffer of one node together with the value buffer of a
/// possibly different node. Handles the aliasing case (same node) by borrow
/// splitting on the node's fields.
fn grad_and_value<R: Real>(
    nodes: &mut [Node<R>],
    grad_of: usize,
    value_of: usize,
) -> (&mut [R], &[R]) {
    use std::cmp::Ordering;
    match grad_of.cmp(&value_of) {
        Ordering::Equal => {
            let Node { value, grad, .. } = &mut nodes[grad_of];
            (grad.as_mut().expect("ensure_grad first").data_mut(), value.data())
        }
        Ordering::Less => {
            let (lo, hi) = nodes.split_at_mut(value_of);
            (
                lo[grad_of].grad.as_mut().expect("ensure_grad first").data_mut(),
                hi[0].value.data(),
            )
        }
        Ordering::Greater => {
            let (lo, hi) = nodes.split_at_mut(grad_of);
            (
                hi[0].grad.as_mut().expect("ensure_grad first").data_mut(),
                lo[value_of].value.data(),
            )
        }
    }
}

fn accumulate<R: Real>(nodes: &mut [Node<R>], var: Var, contribution: &Tensor<R>) -> Result<()> {
    if !nodes[var.0].needs_grad {
        return Ok(());
    }
    ensure_grad(nodes, var.0);
    nodes[var.0]
        .grad
        .as_mut()
        .expect("just ensured")
        .add_assign(contribution)
}

fn dispatch_backward<R: Real>(
    nodes: &mut [Node<R>],
    op: &Op<R>,
    out_value: &Tensor<R>,
    g: &Tensor<R>,
) -> Result<()> {
    match op {
        Op::Leaf => {}
        Op::Conv2d { input, kernels, bias } => {
            let k_shape = nodes[kernels.0].value.shape().to_vec();
            let (c_out, c_in) = (k_shape[0], k_shape[1]);
            let out_shape = out_value.shape();
            let (h, w) = (out_shape[1], out_shape[2]);
            if nodes[bias.0].needs_grad {
                ensure_grad(nodes, bias.0);
                let gb = nodes[bias.0].grad.as_mut().expect("ensured").data_mut();
                for co in 0..c_out {
                    gb[co] += g.data()[co * h * w..(co + 1) * h * w].iter().copied().sum();
                }
            }
            if nodes[kernels.0].needs_grad {
                ensure_grad(nodes, kernels.0);
                let (gk, x) = grad_and_value(nodes, kernels.0, input.0);
                for co in 0..c_out {
                    let g_plane = &g.data()[co * h * w..(co + 1) * h * w];
                    for ci in 0..c_in {
                        let in_plane = &x[ci * h * w..(ci + 1) * h * w];
                        let gk_cell = &mut gk[(co * c_in + ci) * 9..(co * c_in + ci + 1) * 9];
                        for ky in 0..3usize {
                            let dy = ky as isize - 1;
                            let y0 = (-dy).max(0) as usize;
                            let y1 = ((h as isize - dy).min(h as isize)) as usize;
                            for kx in 0..3usize {
                                let dx = kx as isize - 1;
                                let x0 = (-dx).max(0) as usize;
                                let x1 = ((w as isize - dx).min(w as isize)) as usize;
                                if x0 >= x1 {
                                    continue;
                                }
                                let mut acc = R::zero();
                                for y in y0..y1 {
                                    let sy = (y as isize + dy) as usize;
                                    acc += dot(
                                        &g_plane[y * w + x0..y * w + x1],
                                        &in_plane[sy * w + ((x0 as isize + dx) as usize)
                                            ..sy * w + ((x1 as isize + dx) as usize)],
                                    );
                                }
                                gk_cell[ky * 3 + kx] += acc;
                            }
                        }
                    }
                }
            }
            if nodes[input.0].needs_grad {
                ensure_grad(nodes, input.0);
                let (gx, k) = grad_and_value(nodes, input.0, kernels.0);
                for co in 0..c_out {
                    let g_plane = &g.data()[co * h * w..(co + 1) * h * w];
                    for ci in 0..c_in {
                        let gx_plane = &mut gx[ci * h * w..(ci + 1) * h * w];
                        let kc = &k[(co * c_in + ci) * 9..(co * c_in + ci + 1) * 9];
                        for ky in 0..3usize {
                            let dy = ky as isize - 1;
                            let y0 = (-dy).max(0) as usize;
                            let y1 = ((h as isize - dy).min(h as isize)) as usize;
                            for kx in 0..3usize {
                                let wgt = kc[ky * 3 + kx];
                                let dx = kx as isize - 1;
                                let x0 = (-dx).max(0) as usize;
                                let x1 = ((w as isize - dx).min(w as isize)) as usize;
                                if x0 >= x1 {
                                    continue;
                                }
                                for y in y0..y1 {
                                    let sy = (y as isize + dy) as usize;
                                    let dst = &mut gx_plane[sy * w
                                        + ((x0 as isize + dx) as usize)
                                        ..sy * w + ((x1 as isize + dx) as usize)];
                                    axpy(dst, &g_plane[y * w + x0..y * w + x1], wgt);
                                }
                            }
                        }
                    }
                }
            }
        }
        Op::MaxPool2 { input, argmax } => {
            if nodes[input.0].needs_grad {
                ensure_grad(nodes, input.0);
                let gx = nodes[input.0].grad.as_mut().expect("ensured").data_mut();
                for (gi, &src) in g.data().iter().zip(argmax) {
                    gx[src as usize] += *gi;
                }
            }
        }
        Op::PointwiseConv1d { input, kernels, bias } => {
            let k_shape = nodes[kernels.0].value.shape().to_vec();
            let (c_out, c_in) = (k_shape[0], k_shape[1]);
            let l = out_value.shape()[0];
            if nodes[bias.0].needs_grad {
                ensure_grad(nodes, bias.0);
                let gb = nodes[bias.0].grad.as_mut().expect("ensured").data_mut();
                for i in 0..l {
                    for co in 0..c_out {
                        gb[co] += g.data()[i * c_out + co];
                    }
                }
            }
            if nodes[kernels.0].needs_grad {
                ensure_grad(nodes, kernels.0);
                let (gk, x) = grad_and_value(nodes, kernels.0, input.0);
                for i in 0..l {
                    let row = &x[i * c_in..(i + 1) * c_in];
                    for co in 0..c_out {
                        axpy(&mut gk[co * c_in..(co + 1) * c_in], row, g.data()[i * c_out + co]);
                    }
                }
            }
            if nodes[input.0].needs_grad {
                ensure_grad(nodes, input.0);
                let (gx, k) = grad_and_value(nodes, input.0, kernels.0);
                for i in 0..l {
                    let gx_row = &mut gx[i * c_in..(i + 1) * c_in];
                    for co in 0..c_out {
                        axpy(gx_row, &k[co * c_in..(co + 1) * c_in], g.data()[i * c_out + co]);
                    }
                }
            }
        }
        Op::Dense { input, weights, bias } => {
            let w_shape = nodes[weights.0].value.shape().to_vec();
            let (n_out, n_in) = (w_shape[0], w_shape[1]);
            let rows = g.len() / n_out;
            if nodes[bias.0].needs_grad {
                ensure_grad(nodes, bias.0);
                let gb = nodes[bias.0].grad.as_mut().expect("ensured").data_mut();
                for r in 0..rows {
                    for o in 0..n_out {
                        gb[o] += g.data()[r * n_out + o];
                    }
                }
            }
            if nodes[weights.0].needs_grad {
                ensure_grad(nodes, weights.0);
                let (gw, x) = grad_and_value(nodes, weights.0, input.0);
                for r in 0..rows {
                    let row = &x[r * n_in..(r + 1) * n_in];
                    for o in 0..n_out {
                        axpy(&mut gw[o * n_in..(o + 1) * n_in], row, g.data()[r * n_out + o]);
                    }
                }
            }
            if nodes[input.0].needs_grad {
                ensure_grad(nodes, input.0);
                let (gx, wts) = grad_and_value(nodes, input.0, weights.0);
                for r in 0..rows {
                    let gx_row = &mut gx[r * n_in..(r + 1) * n_in];
                    for o in 0..n_out {
                        axpy(gx_row, &wts[o * n_in..(o + 1) * n_in], g.data()[r * n_out + o]);
                    }
                }
            }
        }
        Op::Relu { input } => {
            // out > 0 iff in > 0; the derivative at exactly zero is taken as 0.
            let contrib = Tensor::from_raw(
                g.shape().to_vec(),
                g.data()
                    .iter()
                    .zip(out_value.data())
                    .map(|(gi, v)| if *v > R::zero() { *gi } else { R::zero() })
                    .collect(),
            );
            accumulate(nodes, *input, &contrib)?;
        }
        Op::Sigmoid { input } => {
            let contrib = Tensor::from_raw(
                g.shape().to_vec(),
                g.data()
                    .iter()
                    .zip(out_value.data())
                    .map(|(gi, s)| *gi * *s * (R::one() - *s))
                    .collect(),
            );
            accumulate(nodes, *input, &contrib)?;
        }
        Op::Softmax { input } => {
            let shape = out_value.shape();
            let n = shape[shape.len() - 1];
            let mut data = vec![R::zero(); g.len()];
            for (row, (grow, srow)) in g.data().chunks(n).zip(out_value.data().chunks(n)).enumerate()
            {
                let inner = dot(grow, srow);
                for j in 0..n {
                    data[row * n + j] = srow[j] * (grow[j] - inner);
                }
            }
            let contrib = Tensor::from_raw(g.shape().to_vec(), data);
            accumulate(nodes, *input, &contrib)?;
        }
        Op::Concat { inputs } => {
            let mut offset = 0;
            for &v in inputs {
                let len = nodes[v.0].value.len();
                let slice = &g.data()[offset..offset + len];
                let contrib = Tensor::from_raw(vec![len], slice.to_vec());
                accumulate(nodes, v, &contrib)?;
                offset += len;
            }
        }
        Op::StackRows { inputs } => {
            let n = out_value.shape()[1];
            for (r, &v) in inputs.iter().enumerate() {
                let contrib = Tensor::from_raw(vec![n], g.data()[r * n..(r + 1) * n].to_vec());
                accumulate(nodes, v, &contrib)?;
            }
        }
        Op::Log { input } => {
            if nodes[input.0].needs_grad {
                ensure_grad(nodes, input.0);
                let (gx, x) = grad_and_value(nodes, input.0, input.0);
                for ((d, gi), xi) in gx.iter_mut().zip(g.data()).zip(x) {
                    *d += *gi / *xi;
                }
            }
        }
        Op::Sum { input } => {
            let s = g.data()[0];
            let shape = nodes[input.0].value.shape().to_vec();
            let contrib = Tensor::full(&shape, s);
            accumulate(nodes, *input, &contrib)?;
        }
        Op::Mean { input } => {
            let n = nodes[input.0].value.len();
            let s = g.data()[0] / R::of(n as f64);
            let shape = nodes[input.0].value.shape().to_vec();
            let contrib = Tensor::full(&shape, s);
            accumulate(nodes, *input, &contrib)?;
        }
        Op::Mul { a, b } => {
            if nodes[a.0].needs_grad {
                ensure_grad(nodes, a.0);
                let (ga, bv) = grad_and_value(nodes, a.0, b.0);
                for ((d, gi), bi) in ga.iter_mut().zip(g.data()).zip(bv) {
                    *d += *gi * *bi;
                }
            }
            if nodes[b.0].needs_grad {
                ensure_grad(nodes, b.0);
                let (gb, av) = grad_and_value(nodes, b.0, a.0);
                for ((d, gi), ai) in gb.iter_mut().zip(g.data()).zip(av) {
                    *d += *gi * *ai;
                }
            }
        }
        Op::Add { a, b } => {
            accumulate(nodes, *a, g)?;
            accumulate(nodes, *b, g)?;
        }
        Op::MulConst { input, factor } => {
            if nodes[input.0].needs_grad {
                let contrib = Tensor::from_raw(
                    g.shape().to_vec(),
                    g.data().iter().zip(factor.data()).map(|(gi, f)| *gi * *f).collect(),
                );
                accumulate(nodes, *input, &contrib)?;
            }
        }
        Op::Affine { input, scale } => {
            if nodes[input.0].needs_grad {
                let contrib = g.map(|v| v * *scale);
                accumulate(nodes, *input, &contrib)?;
            }
        }
        Op::Clamp { input, lo, hi } => {
            if nodes[input.0].needs_grad {
                ensure_grad(nodes, input.0);
                let (gx, x) = grad_and_value(nodes, input.0, input.0);
                for ((d, gi), xi) in gx.iter_mut().zip(g.data()).zip(x) {
                    if *xi >= *lo && *xi <= *hi {
                        *d += *gi;
                    }
                }
            }
        }
        Op::Dropout { input, mask, scale } => {
            if nodes[input.0].needs_grad {
                let contrib = Tensor::from_raw(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(mask)
                        .map(|(gi, keep)| if *keep { *gi * *scale } else { R::zero() })
                        .collect(),
                );
                accumulate(nodes, *input, &contrib)?;
            }
        }
        Op::Custom(op) => {
            let inputs = op.inputs();
            let grads = {
                let values: Vec<&Tensor<R>> = inputs.iter().map(|v| &nodes[v.0].value).collect();
                op.backward(out_value, g, &values)
            };
            if grads.len() != inputs.len() {
                return Err(Error::invalid(format!(
                    "custom op {} returned {} gradients for {} inputs",
                    op.name(),
                    grads.len(),
                    inputs.len()
                )));
            }
            for (v, contrib) in inputs.iter().zip(grads) {
                if let Some(c) = contrib {
                    accumulate(nodes, *v, &c)?;
                }
            }
        }
    }
    Ok(())
}
