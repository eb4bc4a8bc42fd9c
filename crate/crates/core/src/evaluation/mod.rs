//! Effect metrics, reports and hyper-parameter search.

mod metrics;
mod search;

pub use metrics::{
    ate_error, evaluate, evaluate_rows, mean_sem, nn_imputed_effects, nn_pehe, nn_pehe_rows,
    nn_pehe_split, pehe, MetricsReport, ReportMeta, Sample,
};
pub use search::{argmin, search, Sampler, SearchOutcome, SearchRun, SearchSpace};
