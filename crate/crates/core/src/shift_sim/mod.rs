//! Random distribution shift simulator.
//!
//! A source `P_k` reweights `m` equal-probability regions of a base law `P_f`
//! by i.i.d. mean-one weights `W_j^(k)`; sampling picks region `j` with
//! probability `W_j / sum W`, then a uniform point inside it, then maps it
//! through the base transform `h`.

mod source;
mod task;
mod weights;

pub use source::{
    sample_perturbed, sample_with_rng, BaseTransform, GaussianQuantile, PerturbedSource, RegionSampler,
};
pub use task::{
    make_synthetic_task, AtomPool, CovariateSpec, Marginal, OutcomeSpec, SharedGroupSpec, SyntheticTask,
    SyntheticWorld, TaskConfig,
};
pub use weights::{
    draw_source_weights, draw_weights, true_weight_cov, PartitionSpec, SharedComponent, WeightFamily,
    WeightLaw,
};
