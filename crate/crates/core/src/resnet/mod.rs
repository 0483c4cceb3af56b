//! 18- and 34-layer 3D residual networks: architecture description, residual
//! blocks with zero-padded shortcuts, and whole-network forward/backward.

mod arch;
mod block;
mod network;

pub use arch::*;
pub use block::{type_a_shortcut, type_a_shortcut_backward, BasicBlock, BlockCache, BlockGrads, Shortcut};
pub use network::{Gradients, NamedTensor, Network, ParamKind};
