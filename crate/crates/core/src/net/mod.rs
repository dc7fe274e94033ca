//! Toy feature-interaction network: tensors, a reverse-mode tape, the model,
//! training, gradient checking and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;
