//! Dense tensors with a small reverse-mode autodiff tape, sized for
//! convolutional image-to-image networks on the CPU.
//!
//! ```
//! use sigan_tensor::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::new([2], vec![1.0, -2.0]));
//! let loss = x.abs().mean_all();
//! let grads = tape.backward(loss);
//! assert_eq!(grads.get(&x).unwrap().data(), &[0.5, -0.5]);
//! ```

mod float;
pub mod linalg;
pub mod ops;
mod tape;
mod tensor;

pub use float::Float;
pub use ops::{Conv2dGeometry, NormGroups, NormStats};
pub use tape::{BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;
