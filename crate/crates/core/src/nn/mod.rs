//! Self-contained recurrent network engine.
//!
//! SimpleRNN and GRU cells, uni- or bidirectional stacking, conventional and
//! recurrent (fixed per-sequence mask) dropout, a per-timestep tanh dense
//! head, MSE loss, hand-derived backpropagation through time and Adam.
//! Everything runs in `f64`.

pub mod adam;
pub mod cell;
pub mod checkpoint;
pub mod dropout;
pub mod layer;
pub mod model;
pub mod tensor;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use cell::{gru_step, simple_rnn_step, CellKind, CellParams, Gate, GruConvention, GruParams, SimpleRnnParams};
pub use dropout::{sample_masks, DropoutMasks, LayerMasks};
pub use layer::{bidirectional_layer, dense_per_timestep, run_layer, Direction, StepEvent, StepMasks};
pub use model::{loss, mse_loss, LayerParams, LossKind, Mode, Model, ModelConfig, ModelParams, SequencePass};
pub use tensor::Tensor;
pub use train::{evaluate, train, EpochRecord, TrainConfig, TrainingHistory};
