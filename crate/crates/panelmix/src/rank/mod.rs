//! Nonparametric lower bound on the number of components from the rank of
//! discretized bivariate outcome distributions.

mod partition;
mod statistic;
mod test;

pub use partition::{assign_cell, build_partition, estimate_pk, multinomial_covariance, Construction, DiscretizedPanel};
pub use statistic::{rk_statistic, MAX_CONDITION};
pub use test::{
    ave_max_rk, bayesian_bootstrap_pvalue, bayesian_bootstrap_with, bootstrap_weights, rank_sequential,
    rank_sequential_lower_bound, PeriodStatistic, RankLowerBound, RankOptions, RankTestResult, MAX_DEGENERATE_SHARE,
};
