use crate::scalar::Scalar;

use super::graph::{BinaryKind, Graph, Op, UnaryKind, Var};
use super::{NdError, Result, Tensor};

/// Copy of the op fields the symbolic pass needs, so the graph can be extended
/// while walking it.
enum Sym<T> {
    Leaf,
    Conv { input: Var, kernel: Var, bias: Option<Var>, padding: usize, stride: usize, kh: usize, kw: usize },
    Resize { input: Var, adjoint: bool, geom: super::kernels::ResizeGeom<T> },
    Leaky { input: Var, slope: T },
    LeakyMask { grad: Var, input: Var, slope: T },
    Unary { input: Var, kind: UnaryKind },
    Binary { a: Var, b: Var, kind: BinaryKind },
    Scale { input: Var, c: T },
    Identity { input: Var },
    Sum { input: Var },
    Mean { input: Var },
    Expand { input: Var },
    Mse { a: Var, b: Var },
    Flip { input: Var },
    Reshape { input: Var },
    Unsupported(&'static str),
}

impl<T: Scalar> Graph<T> {
    fn sym(&self, id: usize) -> Sym<T> {
        match &self.nodes[id].op {
            Op::Leaf => Sym::Leaf,
            Op::Conv2d { input, kernel, bias, geom, .. } => Sym::Conv {
                input: *input,
                kernel: *kernel,
                bias: *bias,
                padding: geom.padding,
                stride: geom.stride,
                kh: geom.kh,
                kw: geom.kw,
            },
            Op::Resize { input, geom } => Sym::Resize { input: *input, adjoint: false, geom: (**geom).clone() },
            Op::ResizeAdjoint { input, geom } => Sym::Resize { input: *input, adjoint: true, geom: (**geom).clone() },
            Op::LeakyRelu { input, slope } => Sym::Leaky { input: *input, slope: *slope },
            Op::LeakyMask { grad, input, slope } => Sym::LeakyMask { grad: *grad, input: *input, slope: *slope },
            Op::Unary { input, kind } => Sym::Unary { input: *input, kind: *kind },
            Op::Binary { a, b, kind } => Sym::Binary { a: *a, b: *b, kind: *kind },
            Op::Scale { input, c } => Sym::Scale { input: *input, c: *c },
            Op::AddScalar { input } => Sym::Identity { input: *input },
            Op::Reshape { input } => Sym::Reshape { input: *input },
            Op::Sum { input } => Sym::Sum { input: *input },
            Op::Mean { input } => Sym::Mean { input: *input },
            Op::Expand { input } => Sym::Expand { input: *input },
            Op::MseSum { a, b } => Sym::Mse { a: *a, b: *b },
            Op::FlipTranspose { input } => Sym::Flip { input: *input },
            Op::Clamp { .. } => Sym::Unsupported("clamp"),
            Op::Gather { .. } => Sym::Unsupported("gather"),
            Op::BceLogits { .. } => Sym::Unsupported("bce_with_logits"),
        }
    }

    fn inputs_of(sym: &Sym<T>) -> Vec<Var> {
        match sym {
            Sym::Leaf | Sym::Unsupported(_) => vec![],
            Sym::Conv { input, kernel, bias, .. } => {
                let mut v = vec![*input, *kernel];
                v.extend(*bias);
                v
            }
            Sym::LeakyMask { grad, .. } => vec![*grad],
            Sym::Binary { a, b, .. } | Sym::Mse { a, b } => vec![*a, *b],
            Sym::Resize { input, .. }
            | Sym::Leaky { input, .. }
            | Sym::Unary { input, .. }
            | Sym::Scale { input, .. }
            | Sym::Identity { input }
            | Sym::Sum { input }
            | Sym::Mean { input }
            | Sym::Expand { input }
            | Sym::Flip { input }
            | Sym::Reshape { input } => vec![*input],
        }
    }

    /// Sums `g` down to a scalar when `target` is a broadcast scalar operand.
    fn reduce_to(&mut self, g: Var, target: Var) -> Var {
        if self.value(target).is_scalar() && !self.value(g).is_scalar() {
            self.sum(g)
        } else {
            g
        }
    }

    /// Builds `d output / d wrt[i]` as new differentiable nodes of this graph.
    ///
    /// Only the ops on paths from `wrt` to `output` need symbolic rules; kernels
    /// and biases of convolutions on that path are treated as constants unless
    /// they themselves lead back to `wrt` (which is rejected).
    pub fn grad_graph(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if !self.value(output).is_scalar() {
            return Err(NdError::NonScalarLoss(self.shape(output).to_vec()));
        }
        let top = output.0;
        let mut needs = vec![false; top + 1];
        for w in wrt {
            if w.0 <= top {
                needs[w.0] = true;
            }
        }
        let syms: Vec<Sym<T>> = (0..=top).map(|id| self.sym(id)).collect();
        for id in 0..=top {
            if !needs[id] && Self::inputs_of(&syms[id]).iter().any(|v| needs[v.0]) {
                needs[id] = true;
            }
        }
        let mut adj: Vec<Option<Var>> = vec![None; top + 1];
        adj[top] = Some(self.constant(Tensor::scalar(T::one())));
        let mut contributions: Vec<(Var, Var)> = Vec::new();
        for id in (0..=top).rev() {
            let Some(g) = adj[id] else { continue };
            if !needs[id] {
                continue;
            }
            contributions.clear();
            self.sym_step(&syms[id], Var(id), g, &needs, &mut contributions)?;
            for &(target, c) in &contributions {
                adj[target.0] = Some(match adj[target.0] {
                    None => c,
                    Some(prev) => self.add(prev, c)?,
                });
            }
        }
        wrt.iter()
            .map(|w| match adj.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.shape(*w).to_vec();
                    Ok(self.constant(Tensor::zeros(&shape)))
                }
            })
            .collect()
    }

    fn sym_step(&mut self, sym: &Sym<T>, y: Var, g: Var, needs: &[bool], out: &mut Vec<(Var, Var)>) -> Result<()> {
        let need = |v: &Var| needs[v.0];
        match sym {
            Sym::Leaf => {}
            Sym::Unsupported(name) => return Err(NdError::Unsupported((*name).into())),
            Sym::Conv { input, kernel, bias, padding, stride, kh, kw } => {
                if need(kernel) || bias.as_ref().is_some_and(need) {
                    return Err(NdError::Unsupported("conv2d kernel/bias".into()));
                }
                if need(input) {
                    if *stride != 1 || kh != kw || *padding > kh - 1 {
                        return Err(NdError::Unsupported(format!(
                            "conv2d input (stride {stride}, kernel {kh}x{kw}, padding {padding})"
                        )));
                    }
                    let ft = self.flip_transpose(*kernel)?;
                    let dx = self.conv2d(g, ft, None, kh - 1 - padding, 1)?;
                    out.push((*input, dx));
                }
            }
            Sym::Resize { input, adjoint, geom } => {
                if need(input) {
                    let d = if *adjoint {
                        let (h, w) = (geom.out_h, geom.out_w);
                        self.resize_bilinear(g, h, w)?
                    } else {
                        self.resize_adjoint(g, geom.clone())
                    };
                    out.push((*input, d));
                }
            }
            Sym::Leaky { input, slope } => {
                if need(input) {
                    out.push((*input, self.leaky_mask(g, *input, *slope)));
                }
            }
            Sym::LeakyMask { grad, input, slope } => {
                if need(grad) {
                    out.push((*grad, self.leaky_mask(g, *input, *slope)));
                }
            }
            Sym::Unary { input, kind } => {
                if need(input) {
                    let d = match kind {
                        UnaryKind::Tanh => {
                            let yy = self.mul(y, y)?;
                            let one_minus = self.scale(yy, -T::one());
                            let one_minus = self.add_scalar(one_minus, T::one());
                            self.mul(g, one_minus)?
                        }
                        UnaryKind::Sigmoid => {
                            let ny = self.scale(y, -T::one());
                            let one_minus = self.add_scalar(ny, T::one());
                            let s = self.mul(y, one_minus)?;
                            self.mul(g, s)?
                        }
                        UnaryKind::Exp => self.mul(g, y)?,
                        UnaryKind::Atan => {
                            let xx = self.mul(*input, *input)?;
                            let den = self.add_scalar(xx, T::one());
                            self.div(g, den)?
                        }
                        UnaryKind::Sqrt => {
                            let two_y = self.scale(y, T::lit(2.0));
                            self.div(g, two_y)?
                        }
                    };
                    out.push((*input, d));
                }
            }
            Sym::Binary { a, b, kind } => {
                let (a, b) = (*a, *b);
                match kind {
                    BinaryKind::Add | BinaryKind::Sub => {
                        if need(&a) {
                            let d = self.reduce_to(g, a);
                            out.push((a, d));
                        }
                        if need(&b) {
                            let d = if *kind == BinaryKind::Sub { self.neg(g) } else { g };
                            let d = self.reduce_to(d, b);
                            out.push((b, d));
                        }
                    }
                    BinaryKind::Mul => {
                        if need(&a) {
                            let d = self.mul(g, b)?;
                            let d = self.reduce_to(d, a);
                            out.push((a, d));
                        }
                        if need(&b) {
                            let d = self.mul(g, a)?;
                            let d = self.reduce_to(d, b);
                            out.push((b, d));
                        }
                    }
                    BinaryKind::Div => {
                        if need(&a) {
                            let d = self.div(g, b)?;
                            let d = self.reduce_to(d, a);
                            out.push((a, d));
                        }
                        if need(&b) {
                            let gy = self.mul(g, y)?;
                            let q = self.div(gy, b)?;
                            let d = self.neg(q);
                            let d = self.reduce_to(d, b);
                            out.push((b, d));
                        }
                    }
                    BinaryKind::Max | BinaryKind::Min => {
                        return Err(NdError::Unsupported("maximum/minimum".into()));
                    }
                }
            }
            Sym::Scale { input, c } => {
                if need(input) {
                    out.push((*input, self.scale(g, *c)));
                }
            }
            Sym::Identity { input } => {
                if need(input) {
                    out.push((*input, g));
                }
            }
            Sym::Sum { input } => {
                if need(input) {
                    let shape = self.shape(*input).to_vec();
                    out.push((*input, self.expand(g, &shape)?));
                }
            }
            Sym::Mean { input } => {
                if need(input) {
                    let shape = self.shape(*input).to_vec();
                    let n = T::from_usize(self.value(*input).numel()).unwrap();
                    let e = self.expand(g, &shape)?;
                    out.push((*input, self.scale(e, T::one() / n)));
                }
            }
            Sym::Expand { input } => {
                if need(input) {
                    out.push((*input, self.sum(g)));
                }
            }
            Sym::Mse { a, b } => {
                let shape = self.shape(*a).to_vec();
                let diff = self.sub(*a, *b)?;
                let e = self.expand(g, &shape)?;
                let two = self.scale(e, T::lit(2.0));
                let da = self.mul(two, diff)?;
                if need(a) {
                    out.push((*a, da));
                }
                if need(b) {
                    out.push((*b, self.neg(da)));
                }
            }
            Sym::Flip { input } => {
                if need(input) {
                    out.push((*input, self.flip_transpose(g)?));
                }
            }
            Sym::Reshape { input } => {
                if need(input) {
                    let shape = self.shape(*input).to_vec();
                    out.push((*input, self.reshape(g, &shape)?));
                }
            }
        }
        Ok(())
    }
}
