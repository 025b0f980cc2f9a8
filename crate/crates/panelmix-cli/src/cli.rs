use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "panelmix", version, about = "Estimate and test the number of latent components in panel data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an M-component model by constrained maximum likelihood.
    Fit(FitArgs),
    /// Choose the number of components by sequential LR tests, AIC and BIC.
    Select(SelectArgs),
    /// Rank test for a lower bound on the number of components.
    Ranktest(RankArgs),
    /// Run a Monte Carlo size/power or selection-frequency experiment.
    Simulate(SimulateArgs),
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Fit(a) => &a.common,
            Command::Select(a) => &a.common,
            Command::Ranktest(a) => &a.common,
            Command::Simulate(a) => &a.common,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Select(_) => "select",
            Command::Ranktest(_) => "ranktest",
            Command::Simulate(_) => "simulate",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration; flags override it.
    #[arg(long, env = "PANELMIX_CONFIG")]
    pub config: Option<PathBuf>,
    /// Master seed; a random one is drawn and printed when absent.
    #[arg(long, env = "PANELMIX_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, env = "PANELMIX_THREADS")]
    pub threads: Option<usize>,
    /// Output JSON file (default: standard output).
    #[arg(long, env = "PANELMIX_OUT")]
    pub out: Option<PathBuf>,
    /// Report failures as JSON on standard output.
    #[arg(long, env = "PANELMIX_JSON_ERRORS")]
    pub json_errors: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Long-format CSV with one row per unit and period.
    #[arg(long, env = "PANELMIX_DATA")]
    pub data: Option<PathBuf>,
    #[arg(long, env = "PANELMIX_ID_COL")]
    pub id_col: Option<String>,
    #[arg(long, env = "PANELMIX_TIME_COL")]
    pub time_col: Option<String>,
    #[arg(long, env = "PANELMIX_Y_COL")]
    pub y_col: Option<String>,
    /// Covariate columns, comma separated, in model order.
    #[arg(long, env = "PANELMIX_X_COLS", value_delimiter = ',')]
    pub x_cols: Option<Vec<String>>,
    /// Covariates to one-hot encode.
    #[arg(long, env = "PANELMIX_CATEGORICAL", value_delimiter = ',')]
    pub categorical: Option<Vec<String>>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// `normal` or `mixtureK` (K-part normal-mixture errors, e.g. `mixture2`).
    #[arg(long, env = "PANELMIX_ERROR_FAMILY")]
    pub error_family: Option<String>,
    /// `ci` (conditionally independent) or `ar1`.
    #[arg(long, env = "PANELMIX_DYNAMICS")]
    pub dynamics: Option<String>,
    #[command(flatten)]
    pub em: EmArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EmArgs {
    #[arg(long, env = "PANELMIX_MAX_ITER")]
    pub max_iter: Option<usize>,
    #[arg(long, env = "PANELMIX_TOL")]
    pub tol: Option<f64>,
    /// EM restarts per fit.
    #[arg(long, env = "PANELMIX_RESTARTS")]
    pub restarts: Option<usize>,
    /// Lower bound on mixing proportions.
    #[arg(long, env = "PANELMIX_C1")]
    pub c1: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of components.
    #[arg(long = "M", env = "PANELMIX_M")]
    pub m: Option<usize>,
    /// Add sandwich standard errors.
    #[arg(long, env = "PANELMIX_SE")]
    pub se: bool,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Largest number of components considered.
    #[arg(long = "M-max", env = "PANELMIX_M_MAX")]
    pub m_max: Option<usize>,
    /// Significance levels, comma separated; the first fills `chosen.lrt`.
    #[arg(long, env = "PANELMIX_Q", value_delimiter = ',')]
    pub q: Option<Vec<f64>>,
    /// Bootstrap replicates per test.
    #[arg(long = "B", env = "PANELMIX_B")]
    pub b: Option<usize>,
    /// `bootstrap` or `asymptotic`.
    #[arg(long, env = "PANELMIX_CRIT_SOURCE")]
    pub crit_source: Option<String>,
    #[arg(long, env = "PANELMIX_ASYMPTOTIC_DRAWS")]
    pub asymptotic_draws: Option<usize>,
    /// Stop bootstraps once non-rejection is certain.
    #[arg(long, env = "PANELMIX_EARLY_STOP")]
    pub early_stop: bool,
    /// Per-M table as CSV.
    #[arg(long, env = "PANELMIX_CSV")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Test `rank <= r` once.
    #[arg(long, env = "PANELMIX_R", conflicts_with = "r_max")]
    pub r: Option<usize>,
    /// Test `r = 1, 2, ...` up to this value until the first non-rejection.
    #[arg(long, env = "PANELMIX_R_MAX")]
    pub r_max: Option<usize>,
    #[arg(long, env = "PANELMIX_LEVEL")]
    pub level: Option<f64>,
    /// Bayesian-bootstrap draws.
    #[arg(long = "B", env = "PANELMIX_B")]
    pub b: Option<usize>,
    /// `square` or `khatri_rao`.
    #[arg(long, env = "PANELMIX_CONSTRUCTION")]
    pub construction: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Built-in design: table1, table2, tableA1_normal, tableA2_mixture, tableA3_ar1.
    #[arg(long, env = "PANELMIX_DESIGN")]
    pub design: Option<String>,
    /// JSON data-generating process for a custom design.
    #[arg(long, env = "PANELMIX_DGP", conflicts_with = "design")]
    pub dgp: Option<PathBuf>,
    /// `size_power` or `selection` (built-in designs imply one).
    #[arg(long, env = "PANELMIX_KIND")]
    pub kind: Option<String>,
    #[arg(long, env = "PANELMIX_REPS")]
    pub reps: Option<usize>,
    /// Bootstrap replicates of each likelihood-ratio test.
    #[arg(long = "B", env = "PANELMIX_B")]
    pub b: Option<usize>,
    /// Test level (size/power experiments).
    #[arg(long, env = "PANELMIX_Q")]
    pub q: Option<f64>,
    /// Overrides the design's number of units.
    #[arg(long, env = "PANELMIX_N")]
    pub n: Option<usize>,
    /// Null number of components (size/power experiments).
    #[arg(long, env = "PANELMIX_NULL_M")]
    pub null_m: Option<usize>,
    /// Largest M considered (selection experiments).
    #[arg(long, env = "PANELMIX_M_BAR")]
    pub m_bar: Option<usize>,
    /// Fitting families, comma separated: normal, mixture.
    #[arg(long, env = "PANELMIX_FAMILIES", value_delimiter = ',')]
    pub families: Option<Vec<String>>,
    /// Skip sequential LR testing (selection experiments).
    #[arg(long, env = "PANELMIX_NO_LRT")]
    pub no_lrt: bool,
    /// Skip the rank test (selection experiments).
    #[arg(long, env = "PANELMIX_NO_RANK")]
    pub no_rank: bool,
    /// Bayesian-bootstrap draws of the rank test.
    #[arg(long = "rank-B", env = "PANELMIX_RANK_B")]
    pub rank_b: Option<usize>,
    #[command(flatten)]
    pub em: EmArgs,
    /// Report rows as CSV.
    #[arg(long, env = "PANELMIX_CSV")]
    pub csv: Option<PathBuf>,
    /// Directory for plot-ready `x,y` files.
    #[arg(long, env = "PANELMIX_PLOT_DIR")]
    pub plot_dir: Option<PathBuf>,
}
