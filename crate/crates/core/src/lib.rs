//! Jets, compatibility operators and formal inverses for the linearized
//! isometric-embedding system.

pub mod combinatorics;
pub mod compat;
pub mod error;
pub mod expr;
pub mod grid;
pub mod inverse;
pub mod jet;
pub mod jetpoly;
pub mod linalg;
pub mod metric;
pub mod nash;
pub mod pdo;
pub mod poly;
pub mod quadrature;

pub use error::{Error, Result};
