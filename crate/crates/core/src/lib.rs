pub mod data;
pub mod model;
pub mod sqr;
pub mod ssm;
pub mod tensor;
pub mod train;
