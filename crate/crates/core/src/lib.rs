//! Dense tensors, CP models and mode-reduced CP decomposition.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below pin the common choices.

pub mod error;
pub mod linalg;
pub mod scalar;
pub mod tensor;
pub mod assignment;
pub mod ktensor;
pub mod io;
pub mod gevd;
pub mod solvers;
pub mod krproj;
pub mod uniqueness;
pub mod mrcpd;

pub use error::{CpdError, Result};
pub use krproj::{kr_project, kr_project_with, KrMethod, KrProjOptions, KrProjResult, ProjectionKind};
pub use ktensor::{fit, match_factors, msir, KTensor, MatchResult};
pub use mrcpd::{
    mrcpd_decompose, mrcpd_decompose_with, plan_unfolding, BoundReport, Compression, MrcpdOptions, MrcpdResult,
    SplitChoice, Variant,
};
pub use scalar::Scalar;
pub use solvers::{cp_als, Init, SolveReport, SolverOptions, SolverRegistry, ThreeWaySolver};
pub use tensor::{matricize, reduce_modes, tensorize, DenseTensor, ModeSplit};

pub type Tensor64 = DenseTensor<f64>;
pub type Tensor32 = DenseTensor<f32>;
pub type KTensor64 = KTensor<f64>;
pub type KTensor32 = KTensor<f32>;
