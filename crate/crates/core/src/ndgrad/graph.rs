use crate::scalar::Scalar;

use super::kernels::{self, ConvGeom, ResizeGeom};
use super::{numel, NdError, Result, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum UnaryKind {
    Tanh,
    Sigmoid,
    Exp,
    Atan,
    Sqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeom, cols: Vec<T> },
    Resize { input: Var, geom: Box<ResizeGeom<T>> },
    ResizeAdjoint { input: Var, geom: Box<ResizeGeom<T>> },
    LeakyRelu { input: Var, slope: T },
    LeakyMask { grad: Var, input: Var, slope: T },
    Unary { input: Var, kind: UnaryKind },
    Binary { a: Var, b: Var, kind: BinaryKind },
    Scale { input: Var, c: T },
    AddScalar { input: Var },
    Clamp { input: Var, lo: T, hi: T },
    Sum { input: Var },
    Mean { input: Var },
    Expand { input: Var },
    MseSum { a: Var, b: Var },
    Gather { input: Var, indices: Vec<usize> },
    BceLogits { input: Var, target: Vec<T> },
    FlipTranspose { input: Var },
    Reshape { input: Var },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
}

/// Append-only tape of tensor operations.
///
/// Nodes are topologically ordered by construction: every op's inputs already
/// exist when the op is pushed.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn leaky<T: Scalar>(x: T, slope: T) -> T {
    if x >= T::zero() {
        x
    } else {
        x * slope
    }
}

pub(crate) fn leaky_slope<T: Scalar>(x: T, slope: T) -> T {
    // the kink at exactly 0 takes the positive branch
    if x >= T::zero() {
        T::one()
    } else {
        slope
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, mut value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        value.set_requires_grad(requires_grad);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a tensor as a leaf; gradients are tracked iff the tensor requires them.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let rg = tensor.requires_grad();
        let mut t = tensor;
        t.zero_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Inserts a copy of a parameter as a trainable leaf.
    pub fn param(&mut self, tensor: &Tensor<T>) -> Var {
        let t = Tensor::new(tensor.shape().to_vec(), tensor.data().to_vec()).expect("valid tensor");
        self.push(t, Op::Leaf, true)
    }

    /// Inserts a tensor that never receives gradients.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        let mut t = tensor;
        t.zero_grad();
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Accumulated gradient of a leaf after [`backward`](Self::backward).
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires_grad(*v))
    }

    fn unary_map(&mut self, input: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let src = self.value(input);
        let data: Vec<T> = src.data().iter().map(|&x| f(x)).collect();
        let shape = src.shape().to_vec();
        let rg = self.rg(&[input]);
        self.push(Tensor::new(shape, data).expect("same shape"), op, rg)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, padding: usize, stride: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
            return Err(NdError::ShapeMismatch { op: "conv2d", left: xs, right: ks });
        }
        if ks[2].is_multiple_of(2) || ks[3].is_multiple_of(2) {
            return Err(NdError::Precondition(format!("conv2d: kernel {ks:?} must have odd spatial size")));
        }
        if stride == 0 {
            return Err(NdError::Precondition("conv2d: stride must be >= 1".into()));
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != [ks[0]] {
                return Err(NdError::ShapeMismatch { op: "conv2d bias", left: bs.to_vec(), right: vec![ks[0]] });
            }
        }
        let (h, w) = (xs[2] + 2 * padding, xs[3] + 2 * padding);
        if h < ks[2] || w < ks[3] || !(h - ks[2]).is_multiple_of(stride) || !(w - ks[3]).is_multiple_of(stride) {
            return Err(NdError::NonIntegerOutput { input: xs, kernel: ks, padding, stride });
        }
        let geom = ConvGeom {
            n: xs[0],
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            cout: ks[0],
            kh: ks[2],
            kw: ks[3],
            padding,
            stride,
            oh: (h - ks[2]) / stride + 1,
            ow: (w - ks[3]) / stride + 1,
        };
        let keep_cols = self.requires_grad(kernel);
        let (out, cols) = kernels::conv_forward(
            &geom,
            self.data(input),
            self.data(kernel),
            bias.map(|b| self.data(b)),
            keep_cols,
        );
        let mut vars = vec![input, kernel];
        vars.extend(bias);
        let rg = self.rg(&vars);
        let t = Tensor::new(vec![geom.n, geom.cout, geom.oh, geom.ow], out)?;
        Ok(self.push(t, Op::Conv2d { input, kernel, bias, geom, cols }, rg))
    }

    pub fn resize_bilinear(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 || out_h == 0 || out_w == 0 {
            return Err(NdError::Precondition(format!("resize_bilinear: input {s:?} to {out_h}x{out_w}")));
        }
        let geom = ResizeGeom::new(s[0] * s[1], s[2], s[3], out_h, out_w);
        let out = geom.forward(self.data(input));
        let rg = self.rg(&[input]);
        let t = Tensor::new(vec![s[0], s[1], out_h, out_w], out)?;
        Ok(self.push(t, Op::Resize { input, geom: Box::new(geom) }, rg))
    }

    pub(crate) fn resize_adjoint(&mut self, input: Var, geom: ResizeGeom<T>) -> Var {
        let s = self.shape(input).to_vec();
        let out = geom.adjoint(self.data(input));
        let rg = self.rg(&[input]);
        let t = Tensor::new(vec![s[0], s[1], geom.in_h, geom.in_w], out).expect("resize adjoint shape");
        self.push(t, Op::ResizeAdjoint { input, geom: Box::new(geom) }, rg)
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Var {
        self.unary_map(input, Op::LeakyRelu { input, slope }, |x| leaky(x, slope))
    }

    /// `grad * leaky_relu'(input)`; the mask is treated as locally constant in `input`.
    pub(crate) fn leaky_mask(&mut self, grad: Var, input: Var, slope: T) -> Var {
        let data: Vec<T> =
            self.data(grad).iter().zip(self.data(input)).map(|(&g, &x)| g * leaky_slope(x, slope)).collect();
        let shape = self.shape(grad).to_vec();
        let rg = self.rg(&[grad]);
        self.push(Tensor::new(shape, data).expect("same shape"), Op::LeakyMask { grad, input, slope }, rg)
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.unary_map(input, Op::Unary { input, kind: UnaryKind::Tanh }, |x| x.tanh())
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.unary_map(input, Op::Unary { input, kind: UnaryKind::Sigmoid }, sigmoid)
    }

    pub fn exp(&mut self, input: Var) -> Var {
        self.unary_map(input, Op::Unary { input, kind: UnaryKind::Exp }, |x| x.exp())
    }

    pub fn atan(&mut self, input: Var) -> Var {
        self.unary_map(input, Op::Unary { input, kind: UnaryKind::Atan }, |x| x.atan())
    }

    pub fn sqrt(&mut self, input: Var) -> Var {
        self.unary_map(input, Op::Unary { input, kind: UnaryKind::Sqrt }, |x| x.sqrt())
    }

    pub fn scale(&mut self, input: Var, c: T) -> Var {
        self.unary_map(input, Op::Scale { input, c }, |x| x * c)
    }

    pub fn neg(&mut self, input: Var) -> Var {
        self.scale(input, -T::one())
    }

    pub fn add_scalar(&mut self, input: Var, c: T) -> Var {
        self.unary_map(input, Op::AddScalar { input }, |x| x + c)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, input: Var, lo: T, hi: T) -> Var {
        self.unary_map(input, Op::Clamp { input, lo, hi }, |x| x.max(lo).min(hi))
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (da, db) = (self.data(a), self.data(b));
        let (shape, data): (Vec<usize>, Vec<T>) = if sa == sb {
            (sa, da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect())
        } else if sa.is_empty() {
            let x = da[0];
            (sb, db.iter().map(|&y| f(x, y)).collect())
        } else if sb.is_empty() {
            let y = db[0];
            (sa, da.iter().map(|&x| f(x, y)).collect())
        } else {
            let name = match kind {
                BinaryKind::Add => "add",
                BinaryKind::Sub => "sub",
                BinaryKind::Mul => "mul",
                BinaryKind::Div => "div",
                BinaryKind::Max => "maximum",
                BinaryKind::Min => "minimum",
            };
            return Err(NdError::ShapeMismatch { op: name, left: sa, right: sb });
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Binary { a, b, kind }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Div, |x, y| x / y)
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Max, |x, y| if x >= y { x } else { y })
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Min, |x, y| if x <= y { x } else { y })
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.data(input).iter().copied().sum::<T>();
        let rg = self.rg(&[input]);
        self.push(Tensor::scalar(s), Op::Sum { input }, rg)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let d = self.data(input);
        let s = d.iter().copied().sum::<T>() / T::from_usize(d.len()).unwrap();
        let rg = self.rg(&[input]);
        self.push(Tensor::scalar(s), Op::Mean { input }, rg)
    }

    /// Broadcasts a scalar to `shape`.
    pub fn expand(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        if !self.value(input).is_scalar() {
            return Err(NdError::ShapeMismatch { op: "expand", left: self.shape(input).to_vec(), right: vec![] });
        }
        let v = self.data(input)[0];
        let rg = self.rg(&[input]);
        Ok(self.push(Tensor::full(shape, v), Op::Expand { input }, rg))
    }

    /// Sum of squared differences, `||a - b||^2`.
    pub fn mse_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(NdError::ShapeMismatch { op: "mse_sum", left: self.shape(a).to_vec(), right: self.shape(b).to_vec() });
        }
        let s = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::MseSum { a, b }, rg))
    }

    /// Picks flat elements into a rank-1 tensor.
    pub fn gather(&mut self, input: Var, indices: Vec<usize>) -> Result<Var> {
        let d = self.data(input);
        if indices.is_empty() {
            return Err(NdError::Precondition("gather: empty index list".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= d.len()) {
            return Err(NdError::Precondition(format!("gather: index {bad} out of range for {} elements", d.len())));
        }
        let data: Vec<T> = indices.iter().map(|&i| d[i]).collect();
        let rg = self.rg(&[input]);
        let n = data.len();
        Ok(self.push(Tensor::new(vec![n], data)?, Op::Gather { input, indices }, rg))
    }

    /// Elementwise binary cross-entropy on logits against fixed targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, input: Var, target: Vec<T>) -> Result<Var> {
        if target.len() != self.value(input).numel() {
            return Err(NdError::ShapeMismatch {
                op: "bce_with_logits",
                left: self.shape(input).to_vec(),
                right: vec![target.len()],
            });
        }
        let data: Vec<T> = self.data(input).iter().zip(&target).map(|(&x, &t)| bce_logit(x, t)).collect();
        let shape = self.shape(input).to_vec();
        let rg = self.rg(&[input]);
        Ok(self.push(Tensor::new(shape, data)?, Op::BceLogits { input, target }, rg))
    }

    pub fn flip_transpose(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 {
            return Err(NdError::Precondition(format!("flip_transpose: expected a rank-4 kernel, got {s:?}")));
        }
        let out = kernels::flip_transpose(&s, self.data(input));
        let rg = self.rg(&[input]);
        Ok(self.push(Tensor::new(vec![s[1], s[0], s[2], s[3]], out)?, Op::FlipTranspose { input }, rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(input).numel() {
            return Err(NdError::InvalidShape { shape: shape.to_vec(), len: self.value(input).numel() });
        }
        let data = self.data(input).to_vec();
        let rg = self.rg(&[input]);
        Ok(self.push(Tensor::new(shape.to_vec(), data)?, Op::Reshape { input }, rg))
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `max(x, 0) - x t + ln(1 + e^{-|x|})`, stable for large logits.
pub(crate) fn bce_logit<T: Scalar>(x: T, t: T) -> T {
    x.max(T::zero()) - x * t + (-x.abs()).exp().ln_1p()
}
