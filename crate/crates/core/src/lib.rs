
// Guards are written as negated comparisons so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod asymptotics;
pub mod error;
pub mod fkappa;
pub mod labelmodel;
pub mod measures;
pub mod normal;
pub mod quadrature;
pub mod roots;
pub mod simulator;

pub use error::{Error, Result};
