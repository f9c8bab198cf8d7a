//! Compile weighted finite and tree automata into transformer weights and
//! check the compiled networks against the automata themselves.

pub mod automata;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod scan;
pub mod tensor_ops;
pub mod transformer;
pub mod wfa_compiler;
pub mod wta_compiler;

pub use error::{Error, Result};
