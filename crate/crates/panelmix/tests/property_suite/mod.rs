//! Randomized and Monte Carlo checks of the core invariants. Every check
//! panics with a description when it fails.

use std::cell::Cell;

use nalgebra::DMatrix;
use panelmix::asymptotic::{
    cone_dim, cone_project, hermite, information_matrix, score_vector, second_derivative_ratios, v_map, vech_len,
};
use panelmix::estimation::{
    e_step, fit_sequence, from_free_vec, jitter_start, one_component_fit, quantile_start, run_em, to_free_vec,
    EmConfig, FitResult,
};
use panelmix::model::mixture_log_density;
use panelmix::rank::{ave_max_rk, rk_statistic, Construction};
use panelmix::rng::{rng_for, Rng};
use panelmix::selection::{bootstrap_test, likelihood_ratio};
use panelmix::sim::{simulate_panel, CovariateLaw, DgpSpec};
use panelmix::{ComponentParams, MixtureParams, ModelSpec, PanelDataset};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

/// Stream tag for the test-side parameter draws, apart from the library's.
const TEST_STREAM: u64 = 1000;

/// Every check in the suite with its name.
pub const CHECKS: &[(&str, fn())] = &[
    ("em_monotonicity", em_monotonicity),
    ("posterior_normalization", posterior_normalization),
    ("density_permutation_invariance", density_permutation_invariance),
    ("score_matches_finite_differences", score_matches_finite_differences),
    ("information_is_psd", information_is_psd),
    ("hermite_orthogonality", hermite_orthogonality),
    ("rk_vanishes_at_exact_rank", rk_vanishes_at_exact_rank),
    ("rk_mean_is_chi2_1", rk_mean_is_chi2_1),
    ("bootstrap_pvalues_are_uniform", bootstrap_pvalues_are_uniform),
    ("v_map_symmetry_and_dimension", v_map_symmetry_and_dimension),
    ("cone_projection_matches_grid", cone_projection_matches_grid),
];

pub fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, max_shrink_iters: 64, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn test_rng(seed: u64) -> Rng {
    rng_for(seed, TEST_STREAM, 0)
}

/// Model families exercised by the randomized checks.
pub fn family_spec(f: usize) -> ModelSpec {
    match f {
        0 => ModelSpec::normal(),
        1 => ModelSpec::mixture(2),
        2 => ModelSpec::normal().with_ar1(),
        3 => ModelSpec::normal().with_covariates(1),
        _ => ModelSpec::mixture(2).with_ar1().with_covariates(1),
    }
}

pub const N_FAMILIES: usize = 5;

/// Random valid parameters with components spread about 1.5 apart.
pub fn random_params(spec: &ModelSpec, m: usize, seed: u64) -> MixtureParams {
    let mut rng = test_rng(seed);
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let alpha = raw.iter().map(|a| a / total).collect();
    let k = spec.k();
    let q = spec.q_x;
    let components = (0..m)
        .map(|j| {
            let centre = 1.5 * j as f64 - 0.75 * (m - 1) as f64 + rng.random_range(-0.3..0.3);
            let sigma2 = rng.random_range(0.2..1.0);
            let beta: Vec<f64> = (0..q).map(|_| rng.random_range(-0.5..0.5)).collect();
            let mut c = if k == 1 {
                ComponentParams::normal(centre, sigma2, beta)
            } else {
                let t0 = rng.random_range(0.3..0.7);
                let d = rng.random_range(0.2..0.8);
                ComponentParams::mixture(vec![t0, 1.0 - t0], vec![centre - d * (1.0 - t0), centre + d * t0], sigma2, beta)
            };
            if spec.is_dynamic() {
                let rho = rng.random_range(0.0..0.7);
                let mu1 = c.mu.iter().map(|v| v + rng.random_range(-0.2..0.2)).collect();
                let sigma2_1 = rng.random_range(0.3..1.2);
                let beta1 = (0..q).map(|_| rng.random_range(-0.5..0.5)).collect();
                c = c.with_ar1(rho, mu1, sigma2_1, beta1);
            }
            c
        })
        .collect();
    MixtureParams::new(alpha, components)
}

pub fn panel(spec: &ModelSpec, params: &MixtureParams, n: usize, t: usize, seed: u64) -> PanelDataset {
    let mut dgp = DgpSpec::new(params.clone(), *spec, n, t);
    if spec.q_x > 0 {
        dgp = dgp.with_covariates(CovariateLaw::StandardNormal);
    }
    simulate_panel(&dgp, seed).expect("valid DGP")
}

/// A fit record at given parameters, for score evaluation.
pub fn fit_at(data: &PanelDataset, params: &MixtureParams, spec: &ModelSpec) -> FitResult {
    let loglik = panelmix::model::log_likelihood(data, params, spec).expect("valid parameters");
    FitResult {
        params: params.clone(),
        loglik,
        n_iter: 0,
        converged: true,
        restart_logliks: vec![loglik],
        sigma0_hat: 1.0,
    }
}

fn config_strategy() -> impl Strategy<Value = (usize, usize, usize, usize, u64)> {
    (0..N_FAMILIES, 1..=3usize, 40..150usize, 2..=4usize, any::<u64>())
}

/// Log-likelihood never decreases across an EM step unless the constraint
/// projection moved the M-step output.
pub fn em_monotonicity() {
    let ran = Cell::new(0usize);
    runner(50)
        .run(&config_strategy(), |(f, m, n, t, seed)| {
            let spec = family_spec(f);
            let data = panel(&spec, &random_params(&spec, m, seed), n, t, seed);
            let one = one_component_fit(&data, &spec).unwrap();
            let mut rng = rng_for(seed, TEST_STREAM, 1);
            let start = jitter_start(&quantile_start(&data, m, &spec, &one), one.sigma(), &mut rng);
            let cfg = EmConfig { max_iter: 300, ..EmConfig::default() };
            let run = match run_em(&data, &spec, &start, &cfg, one.sigma()) {
                Ok(r) => r,
                Err(e) if e.is_numerical() => return Ok(()),
                Err(e) => panic!("family {f}, M={m}: {e}"),
            };
            for (i, w) in run.trace.windows(2).enumerate() {
                if run.projected.get(i).copied().unwrap_or(false) {
                    continue;
                }
                prop_assert!(w[1] >= w[0] - 1e-10, "family {f}, M={m}, step {i}: {} -> {}", w[0], w[1]);
            }
            ran.set(ran.get() + 1);
            Ok(())
        })
        .unwrap_or_else(|e| panic!("{e}"));
    assert!(ran.get() >= 40, "only {} of 50 EM runs completed", ran.get());
}

/// Unit and inner-cell responsibilities lie in [0, 1] and sum to one.
pub fn posterior_normalization() {
    runner(50)
        .run(&config_strategy(), |(f, m, n, t, seed)| {
            let spec = family_spec(f);
            let data = panel(&spec, &random_params(&spec, m, seed), n, t, seed);
            // Evaluate away from the generating parameters too.
            let params = random_params(&spec, m, seed.wrapping_add(1));
            let post = e_step(&data, &params, &spec).unwrap();
            for i in 0..data.n() {
                let row: Vec<f64> = (0..m).map(|j| post.pi(i, j)).collect();
                prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12, "unit {i}: {row:?}");
                for j in 0..m {
                    for s in 0..data.t() {
                        let cells: Vec<f64> = (0..spec.k()).map(|c| post.gamma(i, j, s, c)).collect();
                        prop_assert!(cells.iter().all(|p| (0.0..=1.0).contains(p)));
                        prop_assert!((cells.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    }
                }
            }
            Ok(())
        })
        .unwrap_or_else(|e| panic!("{e}"));
}

/// The mixture density does not depend on the order of its components.
pub fn density_permutation_invariance() {
    runner(50)
        .run(&config_strategy(), |(f, m, n, t, seed)| {
            let spec = family_spec(f);
            let params = random_params(&spec, m, seed);
            let data = panel(&spec, &params, n.min(60), t, seed);
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut rng_for(seed, TEST_STREAM, 2));
            let permuted = MixtureParams::new(
                order.iter().map(|&j| params.alpha[j]).collect(),
                order.iter().map(|&j| params.components[j].clone()).collect(),
            );
            for i in 0..data.n() {
                let u = data.unit(i);
                let a = mixture_log_density(&u, &params, &spec).unwrap();
                let b = mixture_log_density(&u, &permuted, &spec).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "unit {i}: {a} vs {b}");
            }
            Ok(())
        })
        .unwrap_or_else(|e| panic!("{e}"));
}

fn component_log_density(u: &panelmix::model::Unit<'_>, c: &ComponentParams, spec: &ModelSpec) -> f64 {
    panelmix::model::component_log_density(u, c, spec).unwrap()
}

/// First-order scores equal central differences of the unit log density, and
/// the second-derivative ratios equal second differences of the component
/// density scaled by the posterior weight.
pub fn score_matches_finite_differences() {
    runner(30)
        .run(&(0..N_FAMILIES, 1..=2usize, any::<u64>()), |(f, m, seed)| {
            let spec = family_spec(f);
            let params = random_params(&spec, m, seed);
            let data = panel(&spec, &params, 12, 3, seed);
            let fit = fit_at(&data, &params, &spec);
            let scores = score_vector(&data, &fit, &spec, None).unwrap();
            let ratios = second_derivative_ratios(&data, &fit, &spec, None).unwrap();
            let v = to_free_vec(&params, &spec);
            prop_assert_eq!(scores.d_eta(), v.len());
            let h1 = 1e-6;
            let h2 = 1e-4;
            let mut worst = 0.0f64;
            for i in 0..data.n() {
                let u = data.unit(i);
                for c in 0..v.len() {
                    let mut up = v.clone();
                    up[c] += h1;
                    let mut dn = v.clone();
                    dn[c] -= h1;
                    let fu = mixture_log_density(&u, &from_free_vec(&up, m, &spec), &spec).unwrap();
                    let fd = mixture_log_density(&u, &from_free_vec(&dn, m, &spec), &spec).unwrap();
                    worst = worst.max(((fu - fd) / (2.0 * h1) - scores.s_eta[(i, c)]).abs());
                }
                let g = mixture_log_density(&u, &params, &spec).unwrap();
                for (hidx, comp) in params.components.iter().enumerate() {
                    let theta = to_free_vec(&MixtureParams::single(comp.clone()), &spec);
                    let q = theta.len();
                    let base = component_log_density(&u, comp, &spec);
                    let w = (params.alpha[hidx].ln() + base - g).exp();
                    let rel = |shift: &[(usize, f64)]| {
                        let mut th = theta.clone();
                        for &(a, d) in shift {
                            th[a] += d;
                        }
                        let c = from_free_vec(&th, 1, &spec).components.remove(0);
                        (component_log_density(&u, &c, &spec) - base).exp()
                    };
                    let mut idx = 0;
                    for a in 0..q {
                        for b in 0..=a {
                            let stencil = |h: f64| {
                                if a == b {
                                    (rel(&[(a, h)]) - 2.0 + rel(&[(a, -h)])) / (h * h)
                                } else {
                                    (rel(&[(a, h), (b, h)]) - rel(&[(a, h), (b, -h)]) - rel(&[(a, -h), (b, h)])
                                        + rel(&[(a, -h), (b, -h)]))
                                        / (4.0 * h * h)
                                }
                            };
                            // Richardson extrapolation cancels the O(h^2) term.
                            let second = (4.0 * stencil(h2) - stencil(2.0 * h2)) / 3.0;
                            worst = worst.max((w * second - ratios[hidx][(i, idx)]).abs());
                            idx += 1;
                        }
                    }
                    prop_assert_eq!(idx, vech_len(q));
                }
            }
            prop_assert!(worst < 1e-5, "family {f}, M={m}: max abs difference {worst:e}");
            Ok(())
        })
        .unwrap_or_else(|e| panic!("{e}"));
}

fn min_eigen(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

fn max_eigen(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues().max()
}

/// The joint information and every residual block are PSD, and each residual
/// block is below the raw λ block in Loewner order.
pub fn information_is_psd() {
    runner(30)
        .run(&(0..N_FAMILIES, 1..=2usize, 150..300usize, any::<u64>()), |(f, m, n, seed)| {
            let spec = family_spec(f);
            let params = random_params(&spec, m, seed);
            let data = panel(&spec, &params, n, 3, seed);
            let info = information_matrix(&score_vector(&data, &fit_at(&data, &params, &spec), &spec, None).unwrap())
                .unwrap();
            let scale = max_eigen(&info.full).max(1.0);
            prop_assert!(min_eigen(&info.full) >= -1e-10 * scale, "joint: {}", min_eigen(&info.full));
            let d = info.d_lambda;
            for idx in 0..info.n_splits() {
                let schur = info.schur_block(idx);
                prop_assert!(min_eigen(&schur) >= -1e-10 * scale, "split {idx}: {}", min_eigen(&schur));
                let raw = info.i_lambda.view((idx * d, idx * d), (d, d)).into_owned();
                prop_assert!(min_eigen(&(raw - &schur)) >= -1e-9 * scale);
            }
            Ok(())
        })
        .unwrap_or_else(|e| panic!("{e}"));
}

/// `E[H^a(Z) H^b(Z)] = a! 1{a=b}` within three Monte Carlo standard errors.
pub fn hermite_orthogonality() {
    const DRAWS: usize = 1_000_000;
    let mut rng = test_rng(20_240_601);
    let mut sum = [[0.0f64; 4]; 4];
    let mut sum_sq = [[0.0f64; 4]; 4];
    for _ in 0..DRAWS {
        let z: f64 = rng.sample(StandardNormal);
        let h: Vec<f64> = (1..=4).map(|b| hermite(b, z).unwrap()).collect();
        for a in 0..4 {
            for b in 0..=a {
                let p = h[a] * h[b];
                sum[a][b] += p;
                sum_sq[a][b] += p * p;
            }
        }
    }
    let factorial = [1.0, 2.0, 6.0, 24.0];
    for a in 0..4 {
        for b in 0..=a {
            let mean = sum[a][b] / DRAWS as f64;
            let var = sum_sq[a][b] / DRAWS as f64 - mean * mean;
            let se = (var / DRAWS as f64).sqrt();
            let want = if a == b { factorial[a] } else { 0.0 };
            assert!((mean - want).abs() < 3.0 * se, "H{} H{}: mean {mean}, expected {want}, se {se}", a + 1, b + 1);
        }
    }
}

fn random_spd(d: usize, rng: &mut Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

/// Matrices of rank exactly `r` give a zero statistic whatever the covariance.
pub fn rk_vanishes_at_exact_rank() {
    runner(60)
        .run(&(1..=3usize, prop::bool::ANY, any::<u64>()), |(r, wide, seed)| {
            let mut rng = test_rng(seed);
            let rows = r + 1;
            let cols = if wide { (r + 1) * (r + 1) } else { r + 1 };
            let a = DMatrix::from_fn(rows, r, |_, _| rng.random_range(0.1..1.0));
            let b = DMatrix::from_fn(cols, r, |_, _| rng.random_range(0.1..1.0));
            let p = &a * b.transpose();
            let p = &p / p.sum();
            let sigma = random_spd(rows * cols, &mut rng);
            let (rk, _) = rk_statistic(&p, &sigma, r, 1000).unwrap();
            prop_assert!(rk.abs() < 1e-8, "r={r}, {rows}x{cols}: rk = {rk:e}");
            Ok(())
        })
        .unwrap_or_else(|e| panic!("{e}"));
}

/// With independent periods the 2x2 statistic for `rank <= 1` is
/// asymptotically chi-square with one degree of freedom.
pub fn rk_mean_is_chi2_1() {
    const REPS: usize = 2000;
    let spec = ModelSpec::normal();
    let dgp = DgpSpec::new(MixtureParams::single(ComponentParams::normal(0.0, 1.0, vec![])), spec, 500, 3);
    let stats: Vec<f64> = (0..REPS)
        .map(|rep| {
            let data = simulate_panel(&dgp, 77_000 + rep as u64).unwrap();
            ave_max_rk(&data, 1, Construction::Square).unwrap().per_k[0].rk
        })
        .collect();
    let mean = stats.iter().sum::<f64>() / REPS as f64;
    let var = stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (REPS - 1) as f64;
    let se = (var / REPS as f64).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * se, "mean rk {mean}, se {se}");
}

/// Two-sided Kolmogorov-Smirnov distance of a sample from U(0, 1).
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the KS distance, `1.6276 / sqrt(n)`.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// Under a correctly specified one-component null, 200 bootstrap p-values
/// pass a 1% KS test of uniformity.
pub fn bootstrap_pvalues_are_uniform() {
    const DATASETS: usize = 200;
    const B: usize = 49;
    let spec = ModelSpec::normal();
    let dgp = DgpSpec::new(MixtureParams::single(ComponentParams::normal(0.0, 1.0, vec![])), spec, 100, 3);
    // Overfitted fits under the null converge slowly.
    let em = EmConfig { n_restarts: 3, max_iter: 20_000, ..EmConfig::default() };
    let pvalues: Vec<f64> = (0..DATASETS)
        .map(|i| {
            let data = simulate_panel(&dgp, 31_000 + i as u64).unwrap();
            let em = EmConfig { seed: i as u64, ..em };
            let fits = fit_sequence(&data, 2, &spec, &em).unwrap();
            let (stat, _) = likelihood_ratio(&data, &spec, &em, &fits[0], &fits[1]).unwrap();
            let r = bootstrap_test(&data, &fits[0], stat, &spec, B, &em, 500 + i as u64, None).unwrap();
            assert!(r.p > 0.0 && r.p <= 1.0);
            r.p
        })
        .collect();
    let ks = ks_uniform(&pvalues);
    let crit = ks_critical_1pct(DATASETS);
    assert!(ks < crit, "KS distance {ks} exceeds {crit}");
}

/// `v_map` has `q(q+1)/2` entries, is even in `λ`, homogeneous of degree two,
/// and lists the lower triangle of `λλ'`.
pub fn v_map_symmetry_and_dimension() {
    runner(200)
        .run(&(1..=6usize).prop_flat_map(|q| prop::collection::vec(-5.0..5.0f64, q)), |lambda| {
            let q = lambda.len();
            let v = v_map(&lambda);
            prop_assert_eq!(v.len(), vech_len(q));
            prop_assert_eq!(cone_dim(v.len()).unwrap(), q);
            let neg: Vec<f64> = lambda.iter().map(|x| -x).collect();
            prop_assert_eq!(&v_map(&neg), &v);
            let scaled: Vec<f64> = lambda.iter().map(|x| 2.5 * x).collect();
            for (a, b) in v_map(&scaled).iter().zip(&v) {
                prop_assert!((a - 6.25 * b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
            let outer = DMatrix::from_column_slice(q, 1, &lambda) * DMatrix::from_row_slice(1, q, &lambda);
            let mut idx = 0;
            for i in 0..q {
                for j in 0..=i {
                    prop_assert_eq!(v[idx], outer[(i, j)]);
                    prop_assert_eq!(outer[(i, j)], outer[(j, i)]);
                    idx += 1;
                }
            }
            Ok(())
        })
        .unwrap_or_else(|e| panic!("{e}"));
}

fn quad(info: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    (0..n).map(|a| (0..n).map(|b| x[a] * info[(a, b)] * x[b]).sum::<f64>()).sum()
}

/// Exhaustive minimum of the cone residual for `q = 2`. Along each direction
/// `u(φ) = (cos²φ, cosφ sinφ, sin²φ)` the residual is quadratic in the scale
/// `t >= 0`, so only `φ` needs a grid.
pub fn cone_grid_oracle(g: &[f64], info: &DMatrix<f64>, steps: usize) -> (f64, f64) {
    let mut best = (quad(info, g), 0.0);
    for s in 0..steps {
        let phi = std::f64::consts::PI * s as f64 / steps as f64;
        let (sn, cs) = phi.sin_cos();
        let u = [cs * cs, cs * sn, sn * sn];
        let uiu = quad(info, &u);
        let uig: f64 = (0..3).map(|a| (0..3).map(|b| u[a] * info[(a, b)] * g[b]).sum::<f64>()).sum();
        let t = (uig / uiu).max(0.0);
        let d: Vec<f64> = (0..3).map(|a| t * u[a] - g[a]).collect();
        let res = quad(info, &d);
        if res < best.0 {
            best = (res, t * t * uiu);
        }
    }
    best
}

/// The quasi-Newton projection matches a fine grid search for `q = 2` to
/// 1e-4, and for `q = 3` no random probe on the cone does better.
pub fn cone_projection_matches_grid() {
    runner(60)
        .run(&any::<u64>(), |seed| {
            let mut rng = test_rng(seed);
            let info = random_spd(3, &mut rng);
            let g: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
            let proj = cone_project(&g, &info).unwrap();
            let (res, stat) = cone_grid_oracle(&g, &info, 200_000);
            prop_assert!((proj.residual - res).abs() < 1e-4, "residual {} vs grid {res}", proj.residual);
            prop_assert!((proj.stat - stat).abs() < 1e-4, "stat {} vs grid {stat}", proj.stat);

            let info6 = random_spd(6, &mut rng);
            let g6: Vec<f64> = (0..6).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
            let proj6 = cone_project(&g6, &info6).unwrap();
            for _ in 0..1000 {
                let lambda: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal) * 1.5).collect();
                let d: Vec<f64> = v_map(&lambda).iter().zip(&g6).map(|(v, g)| v - g).collect();
                prop_assert!(proj6.residual <= quad(&info6, &d) + 1e-9);
            }
            Ok(())
        })
        .unwrap_or_else(|e| panic!("{e}"));
}
