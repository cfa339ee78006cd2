//! A small CPU layer engine for convolutional generators and critics.
//!
//! Layers carry their own parameters and gradient buffers. A forward pass
//! returns the activation together with an explicit cache; the matching
//! backward pass consumes that cache, so a network can be evaluated several
//! times (for example a generator applied twice in a cycle) and each
//! invocation back-propagated independently.
//!
//! Piecewise-linear stacks additionally support a *linearized* forward pass
//! that pushes a tangent through the network with activation masks frozen
//! from a primal pass. Back-propagating that tangent pass yields exact
//! parameter gradients of input-gradient functionals such as a gradient
//! penalty, without second-order autodiff.

pub mod adam;
pub mod conv;
mod error;
pub mod im2col;
pub mod init;
pub mod layer;
pub mod linear;
pub mod norm;
pub mod param;
mod scalar;

pub use adam::{Adam, AdamConfig, AdamState};
pub use conv::{Conv2d, ConvTranspose2d};
pub use error::{NnError, Result};
pub use layer::{Backprop, Layer, LayerCache, SeqCache, Sequential};
pub use linear::Linear;
pub use norm::InstanceNorm2d;
pub use param::{Param, Parameterized};
pub use scalar::Scalar;

/// Dynamic-rank activation tensor used between layers.
pub type Tensor<T> = ndarray::ArrayD<T>;
