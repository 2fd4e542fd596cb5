//! Forward and backward kernels. Each backward function is the exact
//! adjoint of its forward counterpart.

pub mod conv;
pub mod elementwise;
pub mod freq;
pub mod linalg;
pub mod norm;
pub mod spatial;
