pub(crate) mod conv;
pub(crate) mod loss;
pub(crate) mod pool;

pub use loss::{block_softmax, softmax};
pub use pool::pooled_extent;
