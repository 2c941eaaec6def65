//! Deep-neural-network multigrid for incompressible flow: a coarse
//! Navier–Stokes solver corrected on finer levels by a patch-local
//! neural network.

pub mod assembly;
pub mod driver;
pub mod error;
pub mod io;
pub mod mesh;
pub mod msolve;
pub mod net;
pub mod patch_ops;
pub mod post;
pub mod reference;
pub mod scalar;
pub mod space;
pub mod sparse;

pub use error::{Error, Result};
pub use scalar::Real;

pub type MeshHierarchy64 = mesh::MeshHierarchy<f64>;
pub type MeshHierarchy32 = mesh::MeshHierarchy<f32>;
pub type Mlp64 = net::Mlp<f64>;
pub type Mlp32 = net::Mlp<f32>;
