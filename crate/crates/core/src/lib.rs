//! Dense tensor kernels, randomized Tucker compression and CP decomposition
//! (directly, or from a Tucker-format approximation).

pub mod cp;
pub mod error;
pub mod ffcp;
pub mod io;
pub mod linalg;
pub mod matrix;
pub mod random;
pub mod tensor;
pub mod tucker;

pub use cp::{cp_als, cp_hals, cp_mu, cp_reconstruct, CpModel, CpOutcome, StopRule, UpdateRule};
pub use error::{Result, TensorError};
pub use ffcp::{ffcp, tucker_cp, Constraint};
pub use matrix::Matrix;
pub use random::SeedSpec;
pub use tensor::DenseTensor;
pub use tucker::{hosvd, rand_tucker, rand_tucker_2i, reconstruct, TuckerModel};
