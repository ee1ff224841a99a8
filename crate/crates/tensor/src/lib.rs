//! Rank-4 tensors and a reverse-mode gradient tape with the handful of
//! operations a convolutional encoder/decoder needs: same-size and stride-2
//! convolution, 2x2 max pooling, bilinear 2x upsampling, batch
//! normalization, ReLU, sigmoid, channel concatenation, residual addition,
//! and a mean-squared-error loss.
//!
//! ```
//! use trivessel_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_vec([1, 1, 1, 2], vec![0.5, 0.0]).unwrap());
//! let target = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 0.0]).unwrap();
//! let loss = tape.mse_loss(x, &target).unwrap();
//! assert_eq!(tape.value(loss).item().unwrap(), 0.125);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[-0.5, 0.0]);
//! ```

mod batchnorm;
mod error;
pub mod gradcheck;
pub mod kernels;
mod scalar;
mod tape;
mod tensor;

pub use batchnorm::{BatchNormConfig, BatchNormState, Mode};
pub use error::{Result, TensorError};
pub use scalar::{DType, Scalar};
pub use tape::{sigmoid, Gradients, OpKind, Tape, Var};
pub use tensor::{Shape, Tensor};
