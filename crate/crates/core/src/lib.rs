pub mod autograd;
pub mod checkpoint;
pub mod codec;
pub mod commands;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod inference;
pub mod model;
pub mod par;
pub mod state;
pub mod tensor;
pub mod tokenizer;
pub mod train;
