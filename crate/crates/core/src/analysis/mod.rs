//! Experiments and verifiers built on the schemes.

mod coupling;
mod inequality;
mod ito;
mod poc;
mod rate;
mod stability;
pub mod stats;

pub use coupling::{noise_coupling_check, CouplingReport};
pub use inequality::{pth_power_inequality_check, pth_power_terms, InequalityReport};
pub use ito::{
    ito_refinement, ito_verify, ItoRefinement, ItoReport, ItoSpec, QuadraticMean, TestFunction,
};
pub use poc::{poc_experiment, PocPoint, PocStudy};
pub use rate::{
    fit_rate, rate_study, strong_error, ErrorPoint, RateFit, RateStudy, MAX_EXCLUDED_FRACTION,
};
pub use stability::{blow_up_study, moment_trend, BlowUpStudy, MomentTrend};
pub use stats::{linear_fit, LinearFit, MeanEstimate};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Evaluates `f` for every run on a pool of `threads` workers, keeping run
/// order.
pub(crate) fn map_runs<T, F>(threads: usize, runs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot build thread pool: {e}")))?;
    pool.install(|| (0..runs).into_par_iter().map(&f).collect())
}
