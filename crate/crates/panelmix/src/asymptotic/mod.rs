//! Hermite scores, partitioned information matrices, cone projection and
//! simulated critical values for the limiting null law of the likelihood
//! ratio statistic.

mod cone;
mod critical;
mod info;
mod scores;

pub use cone::{cone_dim, cone_project, ConeProjection};
pub use critical::{simulate_critical_value, simulate_null_draws};
pub use info::{information_matrix, InfoMatrix};
pub use scores::{hermite, score_vector, second_derivative_ratios, v_map, vech_len, ScoreBundle};
