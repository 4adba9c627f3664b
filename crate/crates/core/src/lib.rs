//! Edge-element eddy-current forward modelling and adjoint-based
//! reconstruction of conductivity anomalies from tangential boundary data.

pub mod config;
pub mod data;
pub mod dofs;
pub mod eddy;
pub mod error;
pub mod fem;
pub mod inverse;
pub mod linalg;
pub mod mesh;
pub mod verify;
pub mod vtk;

pub use error::{Error, ErrorClass, Result};
