//! Dense-tensor numerical core: layers with hand-written backward passes,
//! the sigmoid/binary cross-entropy head, optimizers and finite-difference
//! gradient checking.
//!
//! Everything here is generic over [`Scalar`](crate::Scalar). Gradient checks
//! run at 64-bit; training may run at 32-bit.

mod activation;
mod checkpoint;
mod conv;
mod dense;
mod dropout;
pub mod gradcheck;
mod init;
mod loss;
mod optim;
mod param;
mod pool;
mod recurrent;
mod seq;
mod tensor;

pub use activation::Activation;
pub use checkpoint::{read_tensor, write_tensor};
pub use conv::{conv1d, conv1d_backward, Conv1d};
pub use dense::{dense, dense_backward, Dense, DenseInput, SparseRows};
pub use dropout::{dropout, Dropout, Mode};
pub use gradcheck::{gradient_check, relative_error, GradCheckOptions, GradCheckReport};
pub use init::{glorot_uniform, orthogonal};
pub use loss::{bce_loss, bce_with_logits, BCE_EPSILON};
pub use optim::{Optimizer, OptimizerKind};
pub use param::Param;
pub use pool::{max_over_time, max_pool1d, max_pool1d_backward, GlobalMaxPool, MaxPool1d};
pub use recurrent::{
    gru_step, lstm_step, rnn_step, step_backward, CellKind, CellParams, CellState, Recurrent, RecurrentOutput,
    StepCache,
};
pub use seq::SeqBatch;
pub use tensor::{add_column_sums, dot, gemm_nn, gemm_nt, gemm_tn, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("backward called before forward on {0}")]
    NoCache(&'static str),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type NnResult<T> = Result<T, NnError>;
