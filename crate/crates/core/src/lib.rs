//! Design of lightweight periodic unit cells with prescribed homogenized
//! elastic and thermal-conductivity tensors.
//!
//! The pipeline couples density-based topology optimization (SIMP with an
//! MMA optimizer and adjoint sensitivities) with recovery-based anisotropic
//! mesh adaptation on the periodic unit square:
//!
//! * [`mesh`]: periodic triangulations of the unit cell, element anisotropy,
//!   patches and I/O.
//! * [`fem`]: P1 assembly and solution of the periodic cell problems.
//! * [`homogenize`]: homogenized tensors and engineering moduli.
//! * [`filters`]: Helmholtz smoothing and Heaviside projection.
//! * [`estimator`]: gradient recovery, anisotropic error estimator, metric.
//! * [`adapt`]: metric-conforming local remeshing on the periodic cell.
//! * [`optimizer`]: constraints, sensitivities and the MMA solver.
//! * [`driver`]: the adaptive design loop, the fixed-mesh baseline,
//!   verification, configuration and export.

pub mod adapt;
pub mod driver;
pub mod error;
pub mod estimator;
pub mod fem;
pub mod filters;
pub mod homogenize;
pub mod linalg;
pub mod mesh;
pub mod optimizer;

pub use error::{Error, Result};
