//! Minimal reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Graph`] is an append-only tape of nodes. Forward ops push a node holding
//! the computed value plus whatever the backward pass needs. [`Graph::backward`]
//! walks the tape once in reverse and accumulates gradients into every leaf that
//! requires them. [`Graph::grad_graph`] instead emits the gradient computation as
//! new differentiable nodes, which is how gradient penalties are built.
//!
//! Conventions: convolutions are cross-correlations (no kernel flip) and
//! resizing uses the align-corners-false sampling grid.

mod archive;
mod backward;
mod gradcheck;
mod graph;
mod higher;
mod kernels;
mod optim;
mod tensor;

pub use archive::{read_archive, write_archive, ARCHIVE_MAGIC};
pub use gradcheck::{grad_check, grad_check_report, GradCheckConfig, GradCheckReport};
pub use graph::{Graph, Var};
pub use optim::{AdamConfig, AdamState, ParamSet};
pub use tensor::{numel, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NdError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("conv2d: input {input:?} with kernel {kernel:?}, padding {padding}, stride {stride} gives a non-integer output size")]
    NonIntegerOutput { input: Vec<usize>, kernel: Vec<usize>, padding: usize, stride: usize },
    #[error("{0}")]
    Precondition(String),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("higher-order gradient not supported through {0}")]
    Unsupported(String),
    #[error("archive: {0}")]
    BadArchive(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NdError> = std::result::Result<T, E>;

pub(crate) fn kernels_resize<T: crate::scalar::Scalar>(
    planes: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) -> kernels::ResizeGeom<T> {
    kernels::ResizeGeom::new(planes, in_h, in_w, out_h, out_w)
}
