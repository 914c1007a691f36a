pub mod tensor;
pub mod ctc;
pub mod cif;
pub mod data;
pub mod model;
pub mod train;
pub mod cli;
