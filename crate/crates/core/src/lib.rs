//! Finite-N consensus-based optimization.
//!
//! Deterministic and stochastic (anisotropic or isotropic) CBO dynamics,
//! the linear-algebra facts behind their exact decay toward the consensus
//! manifold, theoretical and empirical decay rates, and a reproducible
//! Monte-Carlo harness.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`. Matrix construction in
//! [`spectral`] also accepts exact rationals.

// `!(x > 0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod montecarlo;
pub mod noise;
pub mod objective;
pub mod scalar;
pub mod spectral;

pub use diagnostics::{
    em_as_rate_mc, fit_decay_rate, pathwise_log_rate, theoretical_rates, AsRateEstimate, DecayFit,
    DiagnosticSeries, PathwiseRate, RateReport,
};
pub use dynamics::{
    em_step_anisotropic, em_step_isotropic, euler_step_deterministic, simulate, simulate_centered,
    step, CboParams, Mode, Trajectory,
};
pub use ensemble::{
    consensus_point, distance_sq_to_manifold, projected_offset, softmax_weights, ConsensusState,
    ParticleEnsemble, WeightVector,
};
pub use error::{CboError, Result};
pub use montecarlo::{run_mc, sweep, ClipPolicy, McConfig, McResult, SweepParam};
pub use noise::NoiseSource;
pub use objective::{ObjectiveHandle, ObjectiveRegistry};
pub use scalar::Real;
pub use spectral::{
    build_l_hat, rank_one_det, verify_projection_identity, verify_spectrum, LaplacianHat,
    Projector, SpectrumReport,
};

pub type Ensemble = ParticleEnsemble<f64>;
pub type Ensemble32 = ParticleEnsemble<f32>;
pub type Weights = WeightVector<f64>;
pub type Params = CboParams<f64>;
pub type Params32 = CboParams<f32>;
pub type Objective = ObjectiveHandle<f64>;
pub type Registry = ObjectiveRegistry<f64>;
pub type Rates = RateReport<f64>;
pub type Series = DiagnosticSeries<f64>;
pub type Traj = Trajectory<f64>;
pub type MonteCarloConfig = McConfig<f64>;
pub type MonteCarloResult = McResult<f64>;
pub type LHat = LaplacianHat<f64>;
pub type Proj = Projector<f64>;
