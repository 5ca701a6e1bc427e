pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod gmm;
pub mod io;
pub mod jacobi;
pub mod ot;
pub mod otda;

pub use error::{Error, Result};

pub use baselines::{otda_empirical, otda_linear, EmpiricalSolver};
pub use data::{BlobsSpec, Dataset, StandardizationParams};
pub use eval::{run_experiment, ClassifierSpec, ExperimentConfig, ExperimentReport};
pub use gaussian::{AffineMap, FullGaussian, LinearPart};
pub use gmm::{em_fit, DiagGaussian, EmConfig, Gmm};
pub use ot::{solve_exact, solve_sinkhorn, CostMatrix, Histogram, SinkhornConfig, TransportPlan};
pub use otda::{mixture_plan, AdaptationResult, Method, MixturePlan};
