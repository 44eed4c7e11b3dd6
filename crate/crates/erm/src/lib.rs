//! Empirical risk minimization on random features at finite size: synthetic
//! data, K-learner training, empirical overlaps and test errors.

pub mod data;
pub mod experiment;
pub mod overlaps;
pub mod train;

pub use data::{featurize, generate_dataset, FeatureMap, SyntheticDataset};
pub use experiment::{run_experiment, Aggregate, ExperimentConfig, ExperimentResult, TrialRecord};
pub use overlaps::{empirical_overlaps, Overlaps, TrainedEnsemble};
pub use train::{train_ensemble, train_logistic, train_ridge, NewtonOptions, TrainStats, Trained};

/// Shared normalizations: learner scores are `wᵀu/√p`, the teacher field is
/// `θᵀx/√d` and features are `φ(F x/√d)`.
pub mod scaling {
    #[inline]
    pub fn score(p: usize) -> f64 {
        1.0 / (p as f64).sqrt()
    }

    #[inline]
    pub fn input(d: usize) -> f64 {
        1.0 / (d as f64).sqrt()
    }
}
