use std::hash::{BuildHasher, RandomState};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use panelmix::estimation::{fit_mle, sandwich_se, EmConfig, FitResult, StandardErrors};
use panelmix::rank::{bayesian_bootstrap_with, rank_sequential, Construction, RankOptions};
use panelmix::selection::{sequential_select_levels, CritSource, SelectionResult, SequentialConfig};
use panelmix::sim::{
    histogram, run_selection_frequency_experiment, run_size_power, Design, DgpSpec, ExperimentReport, FitFamily,
    SelectionMethods, SizePowerConfig,
};
use panelmix::{ConstraintSet, Dynamics, ErrorFamily, ModelSpec, VERSION};
use serde::Serialize;

use crate::cli::{Command, CommonArgs, DataArgs, EmArgs, FitArgs, ModelArgs, RankArgs, SelectArgs, SimulateArgs};
use crate::config::RunConfig;
use crate::ingest::{ingest_csv, CsvSchema, Ingested};
use crate::{DataError, UsageError};

/// Bins of the histograms written for plotting.
const HISTOGRAM_BINS: usize = 30;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Everything written to an output JSON file.
#[derive(Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    version: &'a str,
    command: &'a str,
    seed: u64,
    config: &'a C,
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<DataSummary<'a>>,
    result: &'a R,
}

#[derive(Serialize)]
struct DataSummary<'a> {
    n: usize,
    t: usize,
    dropped_units: usize,
    x_names: &'a [String],
    periods: &'a [String],
}

impl<'a> From<&'a Ingested> for DataSummary<'a> {
    fn from(d: &'a Ingested) -> Self {
        DataSummary {
            n: d.data.n(),
            t: d.data.t(),
            dropped_units: d.dropped_units,
            x_names: &d.x_names,
            periods: &d.periods,
        }
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn draw_seed() -> u64 {
    RandomState::new().hash_one(std::time::SystemTime::now())
}

struct RunContext {
    file: RunConfig,
    seed: u64,
    threads: Option<usize>,
    out: Option<PathBuf>,
}

fn load_context(common: &CommonArgs) -> Result<RunContext> {
    let file = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = match common.seed.or(file.seed) {
        Some(s) => s,
        None => {
            let s = draw_seed();
            eprintln!("no seed given; using --seed {s}");
            s
        }
    };
    let threads = common.threads.or(file.threads);
    if threads == Some(0) {
        return Err(usage("--threads must be at least 1"));
    }
    let out = common.out.clone().or_else(|| file.output.as_ref().and_then(|o| o.out.clone()));
    Ok(RunContext { file, seed, threads, out })
}

/// Run `f` on a thread pool of the requested size.
fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().context("starting the thread pool")?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Serialize)]
pub struct DataSettings {
    pub path: PathBuf,
    pub schema: CsvSchema,
}

fn resolve_data(args: &DataArgs, file: &RunConfig) -> Result<DataSettings> {
    let base = file.data.clone().unwrap_or_default();
    let path = args.data.clone().ok_or_else(|| usage("--data is required"))?;
    let schema = CsvSchema {
        id_col: args.id_col.clone().unwrap_or(base.id_col),
        time_col: args.time_col.clone().unwrap_or(base.time_col),
        y_col: args.y_col.clone().unwrap_or(base.y_col),
        x_cols: args.x_cols.clone().unwrap_or(base.x_cols),
        categorical: args.categorical.clone().unwrap_or(base.categorical),
    };
    Ok(DataSettings { path, schema })
}

fn load_data(settings: &DataSettings) -> Result<Ingested> {
    let ingested = ingest_csv(&settings.path, &settings.schema)?;
    if ingested.dropped_units > 0 {
        eprintln!("warning: dropped {} unit(s) not observed in every period", ingested.dropped_units);
    }
    Ok(ingested)
}

/// Parse `normal` or `mixtureK`.
pub fn parse_error_family(s: &str) -> Result<ErrorFamily> {
    if s == "normal" {
        return Ok(ErrorFamily::Normal);
    }
    let k = s
        .strip_prefix("mixture")
        .and_then(|k| if k.is_empty() { Some(2) } else { k.parse().ok() })
        .ok_or_else(|| usage(format!("unknown error family {s:?}; expected normal or mixtureK")))?;
    if k < 2 {
        return Err(usage("a mixture error family needs at least 2 parts"));
    }
    Ok(ErrorFamily::NormalMixture { k })
}

pub fn parse_dynamics(s: &str) -> Result<Dynamics> {
    match s {
        "ci" | "independent" => Ok(Dynamics::ConditionallyIndependent),
        "ar1" => Ok(Dynamics::MarkovAr1),
        _ => Err(usage(format!("unknown dynamics {s:?}; expected ci or ar1"))),
    }
}

fn resolve_em(args: &EmArgs, file: &RunConfig, seed: u64) -> Result<EmConfig> {
    let sec = file.em.clone().unwrap_or_default();
    let d = EmConfig::default();
    let dc = ConstraintSet::default();
    let cfg = EmConfig {
        max_iter: args.max_iter.or(sec.max_iter).unwrap_or(d.max_iter),
        tol: args.tol.or(sec.tol).unwrap_or(d.tol),
        n_restarts: args.restarts.or(sec.n_restarts).unwrap_or(d.n_restarts),
        seed,
        constraints: ConstraintSet {
            c1: args.c1.or(sec.c1).unwrap_or(dc.c1),
            tau_floor: sec.tau_floor.unwrap_or(dc.tau_floor),
            sigma_floor_mult: sec.sigma_floor_mult.unwrap_or(dc.sigma_floor_mult),
            ..dc
        },
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn resolve_spec(args: &ModelArgs, file: &RunConfig, q_x: usize) -> Result<ModelSpec> {
    let sec = file.model.clone().unwrap_or_default();
    let family = parse_error_family(args.error_family.as_deref().or(sec.error_family.as_deref()).unwrap_or("normal"))?;
    let dynamics = parse_dynamics(args.dynamics.as_deref().or(sec.dynamics.as_deref()).unwrap_or("ci"))?;
    ModelSpec::new(family, dynamics, q_x).map_err(|e| usage(e.to_string()))
}

pub fn execute(command: Command) -> Result<()> {
    let ctx = load_context(command.common())?;
    match command {
        Command::Fit(a) => cmd_fit(a, ctx),
        Command::Select(a) => cmd_select(a, ctx),
        Command::Ranktest(a) => cmd_ranktest(a, ctx),
        Command::Simulate(a) => cmd_simulate(a, ctx),
    }
}

#[derive(Serialize)]
struct FitSettings {
    data: DataSettings,
    spec: ModelSpec,
    m: usize,
    em: EmConfig,
    se: bool,
}

#[derive(Serialize)]
struct FitOutput {
    fit: FitResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    standard_errors: Option<StandardErrors>,
}

fn cmd_fit(a: FitArgs, ctx: RunContext) -> Result<()> {
    let sec = ctx.file.fit.clone().unwrap_or_default();
    let data_settings = resolve_data(&a.data, &ctx.file)?;
    let ingested = load_data(&data_settings)?;
    let settings = FitSettings {
        spec: resolve_spec(&a.model, &ctx.file, ingested.data.q_x())?,
        m: a.m.or(sec.m).ok_or_else(|| usage("--M is required"))?,
        em: resolve_em(&a.model.em, &ctx.file, ctx.seed)?,
        se: a.se || sec.se.unwrap_or(false),
        data: data_settings,
    };
    let output = with_threads(ctx.threads, || -> Result<FitOutput> {
        let fit = fit_mle(&ingested.data, settings.m, &settings.spec, &settings.em)?;
        let standard_errors = if settings.se { Some(sandwich_se(&ingested.data, &fit, &settings.spec)?) } else { None };
        Ok(FitOutput { fit, standard_errors })
    })??;
    let env = Envelope {
        version: VERSION,
        command: "fit",
        seed: ctx.seed,
        config: &settings,
        data: Some((&ingested).into()),
        result: &output,
    };
    write_json(&env, ctx.out.as_deref())
}

#[derive(Serialize)]
struct SelectSettings {
    data: DataSettings,
    spec: ModelSpec,
    sequential: SequentialConfig,
    em: EmConfig,
}

pub fn parse_crit_source(s: &str) -> Result<CritSource> {
    match s {
        "bootstrap" => Ok(CritSource::Bootstrap),
        "asymptotic" | "asymptotic_sim" => Ok(CritSource::AsymptoticSim),
        _ => Err(usage(format!("unknown critical-value source {s:?}; expected bootstrap or asymptotic"))),
    }
}

fn cmd_select(a: SelectArgs, ctx: RunContext) -> Result<()> {
    let sec = ctx.file.select.clone().unwrap_or_default();
    let d = SequentialConfig::default();
    let data_settings = resolve_data(&a.data, &ctx.file)?;
    let ingested = load_data(&data_settings)?;
    let sequential = SequentialConfig {
        m_bar: a.m_max.or(sec.m_max).unwrap_or(d.m_bar),
        levels: a.q.clone().or(sec.q.clone()).unwrap_or(d.levels),
        b: a.b.or(sec.b).unwrap_or(d.b),
        crit_source: parse_crit_source(a.crit_source.as_deref().or(sec.crit_source.as_deref()).unwrap_or("bootstrap"))?,
        asymptotic_draws: a.asymptotic_draws.or(sec.asymptotic_draws).unwrap_or(d.asymptotic_draws),
        early_stop: a.early_stop || sec.early_stop.unwrap_or(d.early_stop),
        seed: ctx.seed,
    };
    let settings = SelectSettings {
        spec: resolve_spec(&a.model, &ctx.file, ingested.data.q_x())?,
        em: resolve_em(&a.model.em, &ctx.file, ctx.seed)?,
        sequential,
        data: data_settings,
    };
    let result = with_threads(ctx.threads, || {
        sequential_select_levels(&ingested.data, &settings.spec, &settings.sequential, &settings.em)
    })??;
    let csv_path = a.csv.clone().or_else(|| ctx.file.output.as_ref().and_then(|o| o.csv.clone()));
    if let Some(p) = &csv_path {
        write_selection_csv(&result, p)?;
    }
    let env = Envelope {
        version: VERSION,
        command: "select",
        seed: ctx.seed,
        config: &settings,
        data: Some((&ingested).into()),
        result: &result,
    };
    write_json(&env, ctx.out.as_deref())
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Per-M table: `m,loglik,k,aic,bic,lrt_stat,p_value,critical_value`.
pub fn write_selection_csv(result: &SelectionResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["m", "loglik", "k", "aic", "bic", "lrt_stat", "p_value", "critical_value"])?;
    for c in &result.per_m {
        w.write_record([
            c.m.to_string(),
            c.loglik.to_string(),
            c.k.to_string(),
            c.aic.to_string(),
            c.bic.to_string(),
            opt(c.lrt_stat),
            opt(c.p_value),
            opt(c.critical_value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RankSettings {
    data: DataSettings,
    r: Option<usize>,
    r_max: Option<usize>,
    level: f64,
    b: usize,
    options: RankOptions,
}

pub fn parse_construction(s: &str) -> Result<Construction> {
    match s {
        "square" => Ok(Construction::Square),
        "khatri_rao" | "khatri-rao" => Ok(Construction::KhatriRao),
        _ => Err(usage(format!("unknown construction {s:?}; expected square or khatri_rao"))),
    }
}

fn cmd_ranktest(a: RankArgs, ctx: RunContext) -> Result<()> {
    let sec = ctx.file.rank.clone().unwrap_or_default();
    let data_settings = resolve_data(&a.data, &ctx.file)?;
    let ingested = load_data(&data_settings)?;
    let r = a.r.or(if a.r_max.is_some() { None } else { sec.r });
    let r_max = if r.is_some() { None } else { Some(a.r_max.or(sec.r_max).unwrap_or(4)) };
    let settings = RankSettings {
        data: data_settings,
        r,
        r_max,
        level: a.level.or(sec.level).unwrap_or(0.05),
        b: a.b.or(sec.b).unwrap_or(199),
        options: RankOptions {
            construction: parse_construction(a.construction.as_deref().or(sec.construction.as_deref()).unwrap_or("square"))?,
            equal_weights: false,
        },
    };
    if !(settings.level > 0.0 && settings.level < 1.0) {
        return Err(usage(format!("level {} outside (0, 1)", settings.level)));
    }
    let data = &ingested.data;
    let result: serde_json::Value = with_threads(ctx.threads, || -> Result<serde_json::Value> {
        Ok(match (settings.r, settings.r_max) {
            (Some(r), _) => serde_json::to_value(bayesian_bootstrap_with(data, r, settings.b, ctx.seed, settings.options)?)?,
            (None, Some(rm)) => {
                serde_json::to_value(rank_sequential(data, rm, settings.level, settings.b, ctx.seed, settings.options)?)?
            }
            (None, None) => unreachable!("one of r and r_max is set"),
        })
    })??;
    let env = Envelope {
        version: VERSION,
        command: "ranktest",
        seed: ctx.seed,
        config: &settings,
        data: Some((&ingested).into()),
        result: &result,
    };
    write_json(&env, ctx.out.as_deref())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum ExperimentChoice {
    SizePower,
    Selection,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SimulateSettings {
    SizePower { design: Design, config: SizePowerConfig },
    Selection { design: Design, reps: usize, methods: SelectionMethods },
}

fn parse_family(s: &str) -> Result<FitFamily> {
    match s {
        "normal" => Ok(FitFamily::Normal),
        "mixture" => Ok(FitFamily::Mixture),
        _ => Err(usage(format!("unknown fitting family {s:?}; expected normal or mixture"))),
    }
}

/// Load a custom design from a JSON data-generating process.
pub fn load_dgp(path: &Path) -> Result<Design> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError(format!("cannot read {}: {e}", path.display())))?;
    let dgp: DgpSpec = serde_json::from_str(&text).map_err(|e| DataError(format!("invalid DGP in {}: {e}", path.display())))?;
    dgp.validate().map_err(|e| DataError(format!("invalid DGP in {}: {e}", path.display())))?;
    let label = path.file_stem().map_or("custom".into(), |s| s.to_string_lossy().into_owned());
    Ok(Design::Custom { label, dgp })
}

fn resolve_simulate(a: &SimulateArgs, ctx: &RunContext) -> Result<SimulateSettings> {
    let sec = ctx.file.simulate.clone().unwrap_or_default();
    let design = match (&a.design, &a.dgp) {
        (Some(name), _) => name.parse::<Design>().map_err(|e| usage(e.to_string()))?,
        (None, Some(p)) => load_dgp(p)?,
        (None, None) => match (&sec.design, &sec.dgp) {
            (Some(name), _) => name.parse::<Design>().map_err(|e| usage(e.to_string()))?,
            (None, Some(p)) => load_dgp(p)?,
            (None, None) => return Err(usage("--design or --dgp is required")),
        },
    };
    let implied = match design {
        Design::Table1 | Design::Table2 => Some(ExperimentChoice::SizePower),
        Design::Custom { .. } => None,
        _ => Some(ExperimentChoice::Selection),
    };
    let kind = match a.kind.as_deref().or(sec.kind.as_deref()) {
        Some("size_power") | Some("size-power") => ExperimentChoice::SizePower,
        Some("selection") => ExperimentChoice::Selection,
        Some(other) => return Err(usage(format!("unknown experiment kind {other:?}; expected size_power or selection"))),
        None => implied.ok_or_else(|| usage("--kind is required for a custom design"))?,
    };
    let em = resolve_em(&a.em, &ctx.file, 0)?;
    let reps = a.reps.or(sec.reps).unwrap_or(100);
    let n = a.n.or(sec.n);
    Ok(match kind {
        ExperimentChoice::SizePower => {
            let d = SizePowerConfig::default();
            SimulateSettings::SizePower {
                design,
                config: SizePowerConfig {
                    reps,
                    b: a.b.or(sec.b).unwrap_or(d.b),
                    level: a.q.or(sec.q).unwrap_or(d.level),
                    seed: ctx.seed,
                    null_m: a.null_m.or(sec.null_m).unwrap_or(d.null_m),
                    n,
                    rank_b: a.rank_b.or(sec.rank_b).unwrap_or(d.rank_b),
                    early_stop: d.early_stop,
                    em,
                    rank: d.rank,
                },
            }
        }
        ExperimentChoice::Selection => {
            let d = SelectionMethods::default();
            let families = match a.families.clone().or(sec.families.clone()) {
                Some(v) => v.iter().map(|s| parse_family(s)).collect::<Result<Vec<_>>>()?,
                None => d.families.clone(),
            };
            SimulateSettings::Selection {
                design,
                reps,
                methods: SelectionMethods {
                    families,
                    m_bar: a.m_bar.or(sec.m_bar).unwrap_or(d.m_bar),
                    lrt: !a.no_lrt && sec.lrt.unwrap_or(d.lrt),
                    b: a.b.or(sec.b).unwrap_or(d.b),
                    rank: !a.no_rank && sec.rank.unwrap_or(d.rank),
                    rank_b: a.rank_b.or(sec.rank_b).unwrap_or(d.rank_b),
                    n,
                    em,
                    ..d
                },
            }
        }
    })
}

fn write_plot_file(path: &Path, points: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["x", "y"])?;
    for (x, y) in points {
        w.write_record([x, y])?;
    }
    w.flush()?;
    Ok(())
}

/// Report rows as CSV: `design,method,m,count,percent`.
pub fn write_report_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["design", "method", "m", "count", "percent"])?;
    for r in &report.rows {
        w.write_record([report.design.clone(), r.method.clone(), r.m.to_string(), r.count.to_string(), r.percent.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Plot-ready `x,y` files: one bar chart per method, plus histograms of
/// the likelihood-ratio statistics and the first bootstrap distribution.
pub fn write_plot_data(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for method in report.methods() {
        let file = dir.join(format!("frequency_{}.csv", method.replace('@', "_")));
        let bars = report.rows.iter().filter(|r| r.method == method).map(|r| (r.m.to_string(), r.percent.to_string()));
        write_plot_file(&file, bars)?;
    }
    let hist = |v: &[f64]| histogram(v, HISTOGRAM_BINS).into_iter().map(|(x, c)| (x.to_string(), c.to_string())).collect::<Vec<_>>();
    if !report.lr_statistics.is_empty() {
        write_plot_file(&dir.join("lr_histogram.csv"), hist(&report.lr_statistics))?;
    }
    if !report.bootstrap_statistics.is_empty() {
        write_plot_file(&dir.join("bootstrap_histogram.csv"), hist(&report.bootstrap_statistics))?;
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs, ctx: RunContext) -> Result<()> {
    let settings = resolve_simulate(&a, &ctx)?;
    let report = with_threads(ctx.threads, || match &settings {
        SimulateSettings::SizePower { design, config } => run_size_power(design, config),
        SimulateSettings::Selection { design, reps, methods } => {
            run_selection_frequency_experiment(design, *reps, methods, ctx.seed)
        }
    })??;
    eprintln!("{} replications in {:.1}s", report.replications, report.runtime_secs);
    let out = ctx.file.output.clone().unwrap_or_default();
    if let Some(p) = a.csv.clone().or(out.csv) {
        write_report_csv(&report, &p)?;
    }
    if let Some(dir) = a.plot_dir.clone().or(out.plot_dir) {
        write_plot_data(&report, &dir)?;
    }
    let env = Envelope { version: VERSION, command: "simulate", seed: ctx.seed, config: &settings, data: None, result: &report };
    write_json(&env, ctx.out.as_deref())
}
