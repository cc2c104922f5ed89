pub mod absint;
pub mod exec;
pub mod ir;
pub mod min;
pub mod specialize;
