//! Dense tensors, sparse matrices, the differentiation tape and Adam.

mod adam;
mod dense;
mod params;
mod sparse;
mod tape;

pub use adam::AdamState;
pub use dense::Tensor;
pub use params::{xavier_uniform, Bound, ParamId, ParamStore};
pub use sparse::CsrMatrix;
pub use tape::{Gradients, Tape, Var};
