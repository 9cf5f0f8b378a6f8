//! Numerical laboratory for parabolic implosion of holomorphic germs of
//! `(ℂ², 0)` tangent to the identity.

pub mod cli;
pub mod cplx_core;
pub mod error;
pub mod family;
pub mod fatou;
pub mod implosion;
pub mod lavaurs;
pub mod normal_form;
pub mod sampling;

pub use error::{Error, Result};
