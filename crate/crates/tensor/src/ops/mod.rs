mod attention;
mod conv;
mod elementwise;
mod norm;
mod pool;
mod shape;

pub use attention::attention_weights;
pub use conv::{conv2d_forward, conv_transpose2d_forward, Conv2dGeometry};
pub use elementwise::{sigmoid, softplus};
pub use norm::{NormGroups, NormStats};
pub use pool::{avg_pool2d, global_avg_pool, max_pool2d};
