//! Discrete-to-continuum homogenization of crystalline cell energies.

pub mod config;
pub mod driver;
pub mod elasticity;
pub mod error;
pub mod fields;
pub mod homogenize;
pub mod lattice;
pub mod mat;
pub mod models;
pub mod scalar;
pub mod simplex;
pub mod solver;
pub mod validation;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Mat64 = mat::Mat<f64>;
pub type LatticeSpec64 = lattice::LatticeSpec<f64>;
pub type CellGrid64 = lattice::CellGrid<f64>;
pub type Deformation64 = fields::Deformation<f64>;
pub type ElasticTensor64 = elasticity::ElasticTensor<f64>;
pub type Model64 = homogenize::Model<f64>;
pub type HomogenizationResult64 = homogenize::HomogenizationResult<f64>;
