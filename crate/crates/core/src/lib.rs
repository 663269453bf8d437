//! Operator learning on dispersive and elliptic PDEs.
//!
//! The crate provides dataset generators and reference solvers for Darcy
//! flow, the nonlinear Schrödinger equation and the KP-I equation, POD bases
//! built from snapshot matrices, a spectral neural operator with Fourier or
//! POD kernels, hand-written adjoints with an Adam trainer, and spectrum
//! diagnostics. All numerics are generic over [`Real`] (`f32` or `f64`);
//! the `*64` aliases below fix the double-precision instantiation used by
//! the command-line tool.

pub mod analysis;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod io;
pub mod neuralop;
pub mod pod;
pub mod scalar;
pub mod solvers;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
pub use grid::{Bounds, ComplexView, Field, Grid2D, GridDescriptor};
pub use dataset::{Dataset, Family};
pub use neuralop::{Gso, GsoConfig, KernelConfig};
pub use pod::{PodBasis, SnapshotMatrix};
pub use scalar::Real;
pub use training::TrainConfig;
pub use spectral::{ModeSet, Spectrum2D};

pub type Grid64 = Grid2D<f64>;
pub type Field64 = Field<f64>;
pub type Spectrum64 = Spectrum2D<f64>;
pub type PodBasis64 = PodBasis<f64>;
pub type Gso64 = Gso<f64>;
pub type Dataset64 = Dataset<f64>;
