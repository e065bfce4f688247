use crate::scalar::Scalar;

use super::graph::{leaky_slope, sigmoid, BinaryKind, Graph, Op, UnaryKind, Var};
use super::kernels;
use super::{NdError, Result};

type Adjoints<T> = Vec<Option<Vec<T>>>;

fn slot<T: Scalar>(adj: &mut Adjoints<T>, v: Var, len: usize) -> &mut Vec<T> {
    adj[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

/// Adds `g` (or its sum, when `v` is a broadcast scalar) into the adjoint of `v`.
fn add_into<T: Scalar>(adj: &mut Adjoints<T>, v: Var, len: usize, g: impl Iterator<Item = T>) {
    let buf = slot(adj, v, len);
    if buf.len() == 1 {
        buf[0] += g.sum::<T>();
    } else {
        buf.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
}

impl<T: Scalar> Graph<T> {
    /// Reverse pass from a scalar `loss`.
    ///
    /// Gradients are *added* to each leaf's buffer, so calling this twice without
    /// [`zero_grads`](Self::zero_grads) doubles them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(NdError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut adj: Adjoints<T> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            if !self.nodes[id].value.requires_grad() {
                continue;
            }
            self.propagate(id, &g, &mut adj);
            if matches!(self.nodes[id].op, Op::Leaf) {
                self.nodes[id].value.accumulate_grad(&g);
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[T], adj: &mut Adjoints<T>) {
        let node = &self.nodes[id];
        let y = node.value.data();
        let want = |v: &Var| self.requires_grad(*v);
        let len = |v: &Var| self.value(*v).numel();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, geom, cols } => {
                if want(input) {
                    let dx = slot(adj, *input, len(input));
                    kernels::conv_grad_input(geom, self.data(*kernel), g, dx);
                }
                if want(kernel) {
                    let dk = slot(adj, *kernel, len(kernel));
                    kernels::conv_grad_kernel(geom, self.data(*input), cols, g, dk);
                }
                if let Some(b) = bias.filter(want) {
                    let db = slot(adj, b, len(&b));
                    kernels::conv_grad_bias(geom, g, db);
                }
            }
            Op::Resize { input, geom } => {
                if want(input) {
                    let d = geom.adjoint(g);
                    add_into(adj, *input, d.len(), d.into_iter());
                }
            }
            Op::ResizeAdjoint { input, geom } => {
                if want(input) {
                    let d = geom.forward(g);
                    add_into(adj, *input, d.len(), d.into_iter());
                }
            }
            Op::LeakyRelu { input, slope } => {
                if want(input) {
                    let x = self.data(*input);
                    add_into(adj, *input, x.len(), g.iter().zip(x).map(|(&g, &x)| g * leaky_slope(x, *slope)));
                }
            }
            Op::LeakyMask { grad, input, slope } => {
                if want(grad) {
                    let x = self.data(*input);
                    add_into(adj, *grad, x.len(), g.iter().zip(x).map(|(&g, &x)| g * leaky_slope(x, *slope)));
                }
            }
            Op::Unary { input, kind } => {
                if want(input) {
                    let x = self.data(*input);
                    let one = T::one();
                    let it = g.iter().zip(x).zip(y).map(|((&g, &x), &y)| match kind {
                        UnaryKind::Tanh => g * (one - y * y),
                        UnaryKind::Sigmoid => g * y * (one - y),
                        UnaryKind::Exp => g * y,
                        UnaryKind::Atan => g / (one + x * x),
                        UnaryKind::Sqrt => g / (y + y),
                    });
                    add_into(adj, *input, x.len(), it);
                }
            }
            Op::Binary { a, b, kind } => {
                let (xa, xb) = (self.data(*a), self.data(*b));
                let n = g.len();
                let at = |s: &[T], i: usize| if s.len() == 1 { s[0] } else { s[i] };
                if want(a) {
                    let it = (0..n).map(|i| {
                        let (u, v) = (at(xa, i), at(xb, i));
                        match kind {
                            BinaryKind::Add | BinaryKind::Sub => g[i],
                            BinaryKind::Mul => g[i] * v,
                            BinaryKind::Div => g[i] / v,
                            BinaryKind::Max => if u >= v { g[i] } else { T::zero() },
                            BinaryKind::Min => if u <= v { g[i] } else { T::zero() },
                        }
                    });
                    add_into(adj, *a, xa.len(), it);
                }
                if want(b) {
                    let it = (0..n).map(|i| {
                        let (u, v) = (at(xa, i), at(xb, i));
                        match kind {
                            BinaryKind::Add => g[i],
                            BinaryKind::Sub => -g[i],
                            BinaryKind::Mul => g[i] * u,
                            BinaryKind::Div => -g[i] * u / (v * v),
                            BinaryKind::Max => if u >= v { T::zero() } else { g[i] },
                            BinaryKind::Min => if u <= v { T::zero() } else { g[i] },
                        }
                    });
                    add_into(adj, *b, xb.len(), it);
                }
            }
            Op::Scale { input, c } => {
                if want(input) {
                    add_into(adj, *input, g.len(), g.iter().map(|&g| g * *c));
                }
            }
            Op::AddScalar { input } | Op::Reshape { input } => {
                if want(input) {
                    add_into(adj, *input, g.len(), g.iter().copied());
                }
            }
            Op::Clamp { input, lo, hi } => {
                if want(input) {
                    let x = self.data(*input);
                    let it = g.iter().zip(x).map(|(&g, &x)| if x >= *lo && x <= *hi { g } else { T::zero() });
                    add_into(adj, *input, x.len(), it);
                }
            }
            Op::Sum { input } => {
                if want(input) {
                    let n = len(input);
                    add_into(adj, *input, n, std::iter::repeat_n(g[0], n));
                }
            }
            Op::Mean { input } => {
                if want(input) {
                    let n = len(input);
                    let v = g[0] / T::from_usize(n).unwrap();
                    add_into(adj, *input, n, std::iter::repeat_n(v, n));
                }
            }
            Op::Expand { input } => {
                if want(input) {
                    add_into(adj, *input, 1, std::iter::once(g.iter().copied().sum::<T>()));
                }
            }
            Op::MseSum { a, b } => {
                let (xa, xb) = (self.data(*a), self.data(*b));
                let two = T::lit(2.0) * g[0];
                if want(a) {
                    add_into(adj, *a, xa.len(), xa.iter().zip(xb).map(|(&u, &v)| two * (u - v)));
                }
                if want(b) {
                    add_into(adj, *b, xb.len(), xa.iter().zip(xb).map(|(&u, &v)| two * (v - u)));
                }
            }
            Op::Gather { input, indices } => {
                if want(input) {
                    let d = slot(adj, *input, len(input));
                    for (&i, &gv) in indices.iter().zip(g) {
                        d[i] += gv;
                    }
                }
            }
            Op::BceLogits { input, target } => {
                if want(input) {
                    let x = self.data(*input);
                    let it = g.iter().zip(x).zip(target).map(|((&g, &x), &t)| g * (sigmoid(x) - t));
                    add_into(adj, *input, x.len(), it);
                }
            }
            Op::FlipTranspose { input } => {
                if want(input) {
                    let s = node.value.shape();
                    let d = kernels::flip_transpose(s, g);
                    add_into(adj, *input, d.len(), d.into_iter());
                }
            }
        }
    }
}
