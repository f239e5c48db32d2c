//! Small from-scratch neural toolkit: a gradient tape, LSTM and 1-D ConvLSTM
//! cells, dense layers, dropout masks, Glorot init and Adam.

pub mod adam;
pub mod layers;
pub mod params;
pub mod tape;

pub use adam::Adam;
pub use layers::{dropout_mask, ConvLstmCell, Dense, LstmCell};
pub use params::{ParamRef, ParamTensor, Params};
pub use tape::{softmax, NodeId, Tape};
