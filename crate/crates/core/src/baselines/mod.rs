//! Comparison estimators: S- and T-Lasso, and the discriminator-balanced
//! network. The ensemble ablation without adversarial steps is a trainer mode.

pub mod danncr;
pub mod lasso;

pub use danncr::{DanncrGroup, DanncrModel, DanncrTrainer};
pub use lasso::{
    default_alpha_grid, fit_lasso, lasso_cate, lasso_cv_scores, lasso_fit, lasso_select_alpha,
    LassoModel, LassoVariant, LinearFit,
};
