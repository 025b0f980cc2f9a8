use panelmix::asymptotic::{information_matrix, score_vector};
use panelmix::estimation::{fit_mle, fit_sequence, EmConfig, FitResult};
use panelmix::model::{canonicalize, enforce_constraints, log_likelihood, mixture_log_density, Unit};
use panelmix::rank::{ave_max_rk, build_partition, estimate_pk, Construction};
use panelmix::rng::rng_for;
use panelmix::selection::{information_criteria, sequential_select_levels, CritSource, SequentialConfig};
use panelmix::sim::{simulate_panel, simulate_panel_with_labels, Design, DgpSpec};
use panelmix::{ComponentParams, ConstraintSet, MixtureParams, ModelSpec, PanelDataset};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;

fn normal_mixture(alpha: &[f64], mu: &[f64], sigma2: &[f64]) -> MixtureParams {
    MixtureParams::new(
        alpha.to_vec(),
        mu.iter().zip(sigma2).map(|(&m, &s)| ComponentParams::normal(m, s, vec![])).collect(),
    )
}

fn fit_record(params: MixtureParams, loglik: f64) -> FitResult {
    FitResult { params, loglik, n_iter: 1, converged: true, restart_logliks: vec![loglik], sigma0_hat: 1.0 }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn canonicalize_is_idempotent(
        mu in prop::collection::vec(-3.0..3.0f64, 1..6),
        seed in any::<u64>(),
    ) {
        let mut rng = rng_for(seed, 1000, 0);
        let m = mu.len();
        let comps: Vec<ComponentParams> = mu
            .iter()
            .map(|&c| {
                let t0 = rng.random_range(0.1..0.9);
                let d = rng.random_range(-1.0..1.0);
                ComponentParams::mixture(vec![t0, 1.0 - t0], vec![c + d, c - d], rng.random_range(0.1..2.0), vec![])
            })
            .collect();
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng);
        let p = MixtureParams::new(
            order.iter().map(|_| 1.0 / m as f64).collect(),
            order.iter().map(|&j| comps[j].clone()).collect(),
        );
        let once = canonicalize(&p);
        prop_assert_eq!(canonicalize(&once), once.clone());
        for w in once.components.windows(2) {
            prop_assert!(w[0].location() <= w[1].location());
        }
        for c in &once.components {
            prop_assert!(c.mu[0] <= c.mu[1]);
        }
    }

    #[test]
    fn enforced_parameters_satisfy_the_bounds(
        raw_alpha in prop::collection::vec(0.0001..1.0f64, 1..8),
        sigma2 in prop::collection::vec(1e-6..4.0f64, 8),
        tau0 in 0.0001..0.9999f64,
        sigma0 in 0.1..3.0f64,
    ) {
        let m = raw_alpha.len();
        let total: f64 = raw_alpha.iter().sum();
        let comps = (0..m)
            .map(|j| ComponentParams::mixture(vec![tau0, 1.0 - tau0], vec![j as f64, j as f64 + 0.5], sigma2[j], vec![]))
            .collect();
        let p = MixtureParams::new(raw_alpha.iter().map(|a| a / total).collect(), comps);
        let cs = ConstraintSet::default();
        let out = enforce_constraints(&p, &cs, sigma0).unwrap();
        prop_assert!((out.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, c) in out.alpha.iter().zip(&out.components) {
            prop_assert!(*a >= cs.c1 * (1.0 - 1e-12));
            prop_assert!(c.sigma() >= cs.sigma_floor_mult * sigma0 * (1.0 - 1e-12));
            prop_assert!(c.tau.iter().all(|t| *t >= cs.tau_floor * (1.0 - 1e-12)));
            prop_assert!((c.tau.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn aic_never_chooses_fewer_components_than_bic(
        gains in prop::collection::vec(-5.0..40.0f64, 1..7),
        n in 8usize..5000,
    ) {
        let spec = ModelSpec::normal();
        let mut ll = -1000.0;
        let fits: Vec<FitResult> = (0..=gains.len())
            .map(|j| {
                if j > 0 {
                    ll += gains[j - 1];
                }
                let m = j + 1;
                let p = normal_mixture(&vec![1.0 / m as f64; m], &(0..m).map(|i| i as f64).collect::<Vec<_>>(), &vec![1.0; m]);
                fit_record(p, ll)
            })
            .collect();
        let r = information_criteria(&fits, n, &spec).unwrap();
        prop_assert!(r.chosen["aic"] >= r.chosen["bic"]);
    }

    #[test]
    fn weighted_cell_shares_sum_to_one(seed in any::<u64>(), r in 1usize..=3, khatri_rao in any::<bool>()) {
        let p = normal_mixture(&[0.5, 0.5], &[-1.0, 1.0], &[0.5, 0.5]);
        let data = simulate_panel(&DgpSpec::new(p, ModelSpec::normal(), 200, 3), seed).unwrap();
        let mut rng = rng_for(seed, 1000, 1);
        let w: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
        let c = if khatri_rao { Construction::KhatriRao } else { Construction::Square };
        for k in 1..=3 {
            for weights in [None, Some(w.as_slice())] {
                let p_hat = estimate_pk(&build_partition(&data, k, r, weights, c).unwrap(), weights).unwrap();
                prop_assert!((p_hat.sum() - 1.0).abs() < 1e-12);
                prop_assert!(p_hat.iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn rank_statistics_ignore_a_common_shift(seed in any::<u64>(), shift in -50.0..50.0f64) {
        let p = normal_mixture(&[0.4, 0.6], &[-1.0, 1.0], &[0.5, 0.5]);
        let data = simulate_panel(&DgpSpec::new(p, ModelSpec::normal(), 300, 3), seed).unwrap();
        let moved = PanelDataset::new(300, 3, data.y().iter().map(|v| v + shift).collect(), None).unwrap();
        let a = ave_max_rk(&data, 1, Construction::Square).unwrap();
        let b = ave_max_rk(&moved, 1, Construction::Square).unwrap();
        for (x, y) in a.per_k.iter().zip(&b.per_k) {
            prop_assert_eq!(&x.p_hat, &y.p_hat);
            prop_assert!((x.rk - y.rk).abs() <= 1e-9 * (1.0 + x.rk));
        }
        prop_assert!(a.max_rk >= a.ave_rk && a.ave_rk >= 0.0);
    }
}

#[test]
fn single_period_density_integrates_to_one() {
    let specs = [
        (ModelSpec::normal(), normal_mixture(&[0.3, 0.7], &[-2.0, 1.5], &[0.25, 1.2])),
        (
            ModelSpec::mixture(2),
            MixtureParams::new(
                vec![0.6, 0.4],
                vec![
                    ComponentParams::mixture(vec![0.2, 0.8], vec![-1.0, 0.3], 0.4, vec![]),
                    ComponentParams::mixture(vec![0.5, 0.5], vec![2.0, 3.0], 0.1, vec![]),
                ],
            ),
        ),
    ];
    for (spec, params) in specs {
        let sd_max = params.components.iter().map(|c| c.sigma()).fold(0.0, f64::max);
        let lo = params.components.iter().flat_map(|c| c.mu.clone()).fold(f64::INFINITY, f64::min) - 10.0 * sd_max;
        let hi = params.components.iter().flat_map(|c| c.mu.clone()).fold(f64::NEG_INFINITY, f64::max) + 10.0 * sd_max;
        let steps = 200_000;
        let h = (hi - lo) / steps as f64;
        let mut total = 0.0;
        for s in 0..=steps {
            let y = [lo + s as f64 * h];
            let f = mixture_log_density(&Unit::new(&y, &[], 0).unwrap(), &params, &spec).unwrap().exp();
            total += if s == 0 || s == steps { 0.5 * f } else { f };
        }
        total *= h;
        assert!((total - 1.0).abs() < 1e-6, "integral {total}");
    }
}

#[test]
fn fit_records_match_their_parameters_and_repeat() {
    let p = normal_mixture(&[0.5, 0.5], &[-1.0, 1.0], &[0.64, 1.44]);
    let spec = ModelSpec::normal();
    let data = simulate_panel(&DgpSpec::new(p, spec, 300, 3), 8).unwrap();
    let em = EmConfig { seed: 3, ..EmConfig::default() };
    let a = fit_mle(&data, 2, &spec, &em).unwrap();
    let b = fit_mle(&data, 2, &spec, &em).unwrap();
    assert_eq!(a.restart_logliks, b.restart_logliks);
    assert!((a.loglik - log_likelihood(&data, &a.params, &spec).unwrap()).abs() < 1e-9);
    assert_eq!(enforce_constraints(&a.params, &em.constraints, a.sigma0_hat).unwrap(), a.params);
}

#[test]
fn sequential_choice_is_monotone_in_the_level() {
    let spec = ModelSpec::normal();
    let em = EmConfig { n_restarts: 3, ..EmConfig::default() };
    for (seed, mu) in [(1u64, 0.6), (2, 0.9), (3, 1.2)] {
        let p = normal_mixture(&[0.5, 0.5], &[-mu, mu], &[1.0, 1.0]);
        let data = simulate_panel(&DgpSpec::new(p, spec, 150, 3), seed).unwrap();
        let cfg = SequentialConfig {
            m_bar: 3,
            levels: vec![0.01, 0.05, 0.10],
            b: 19,
            crit_source: CritSource::Bootstrap,
            seed,
            ..SequentialConfig::default()
        };
        let r = sequential_select_levels(&data, &spec, &cfg, &em).unwrap();
        let at = |q: &str| r.chosen[&format!("lrt@{q}")];
        assert!(at("0.01") <= at("0.05") && at("0.05") <= at("0.1"), "{:?}", r.chosen);
        for row in r.per_m.iter().filter_map(|c| c.p_value) {
            assert!(row > 0.0 && row <= 1.0);
        }
    }
}

fn sized(design: Design, n: usize) -> DgpSpec {
    DgpSpec { n, ..design.dgp() }
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn simulated_moments_match_the_design() {
    let data = simulate_panel(&sized(Design::Table1, 100_000), 5).unwrap();
    let (mean, var) = moments(data.y());
    let n = data.y().len() as f64;
    // Pooled outcome: mean 0, variance E[sigma^2] + Var(mu) = 1.04 + 1.
    let var_want = 2.04;
    assert!(mean.abs() < 4.0 * (var_want / n).sqrt() * 3f64.sqrt(), "mean {mean}");
    let fourth = data.y().iter().map(|y| (y - mean).powi(4)).sum::<f64>() / n;
    let var_se = ((fourth - var * var) / n).sqrt() * 3f64.sqrt();
    assert!((var - var_want).abs() < 4.0 * var_se, "variance {var}");

    // An inner mixture with equal cell means is a plain normal.
    let collapsed = MixtureParams::single(ComponentParams::mixture(vec![0.3, 0.7], vec![0.5, 0.5], 2.0, vec![]));
    let y = simulate_panel(&DgpSpec::new(collapsed, ModelSpec::mixture(2), 50_000, 2), 6).unwrap();
    let (m2, v2) = moments(y.y());
    assert!((m2 - 0.5).abs() < 4.0 * (2.0 / 100_000f64).sqrt(), "mean {m2}");
    assert!((v2 - 2.0).abs() < 4.0 * 2.0 * (2.0 / 100_000f64).sqrt(), "variance {v2}");

    // rho = 0: consecutive outcomes of one component are uncorrelated.
    let c = ComponentParams::normal(1.0, 1.0, vec![]).with_ar1(0.0, vec![1.0], 1.0, vec![]);
    let d = simulate_panel(&DgpSpec::new(MixtureParams::single(c), ModelSpec::normal().with_ar1(), 50_000, 2), 7).unwrap();
    let (a, b): (Vec<f64>, Vec<f64>) = (0..d.n()).map(|i| (d.y_unit(i)[0], d.y_unit(i)[1])).unzip();
    let (ma, va) = moments(&a);
    let (mb, vb) = moments(&b);
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
    let corr = cov / (va * vb).sqrt();
    assert!(corr.abs() < 4.0 / (a.len() as f64).sqrt(), "lag correlation {corr}");
}

#[test]
fn labels_follow_the_mixing_proportions() {
    let (_, labels) = simulate_panel_with_labels(&sized(Design::Table2, 30_000), 9).unwrap();
    for j in 0..3 {
        let share = labels.iter().filter(|&&l| l == j).count() as f64 / 30_000.0;
        assert!((share - 1.0 / 3.0).abs() < 4.0 * (2.0 / 9.0 / 30_000f64).sqrt(), "component {j}: {share}");
    }
}

#[test]
fn scores_are_centred_and_nondegenerate_at_the_truth() {
    let spec = ModelSpec::normal();
    let truth = MixtureParams::single(ComponentParams::normal(0.3, 1.7, vec![]));
    let data = simulate_panel(&DgpSpec::new(truth.clone(), spec, 100_000, 3), 10).unwrap();
    let ll = log_likelihood(&data, &truth, &spec).unwrap();
    let scores = score_vector(&data, &fit_record(truth, ll), &spec, None).unwrap();
    let n = data.n() as f64;
    let columns = scores.s_eta.column_iter().chain(scores.s_lambda[0].column_iter());
    for (c, col) in columns.enumerate() {
        let v: Vec<f64> = col.iter().copied().collect();
        let (mean, var) = moments(&v);
        assert!(mean.abs() < 4.0 * (var / n).sqrt(), "score column {c}: mean {mean}");
    }
    let info = information_matrix(&scores).unwrap();
    let d = info.full.diagonal().map(|v| 1.0 / v.sqrt());
    let standardized = info.full.component_mul(&(&d * d.transpose()));
    let min = standardized.symmetric_eigenvalues().min();
    assert!(min > 1e-4, "smallest standardized eigenvalue {min}");
}

/// Parameters compared in the round trip, on the scale the designs are
/// stated in: mixing weights, then per component the inner weights and
/// means, standard deviation, and dynamic block.
fn flat(p: &MixtureParams) -> Vec<f64> {
    let mut v = p.alpha.clone();
    for c in &p.components {
        if c.tau.len() > 1 {
            v.extend(&c.tau);
        }
        v.extend(&c.mu);
        v.push(c.sigma());
        if let Some(b) = &c.ar1 {
            v.push(b.rho);
            v.extend(&b.mu1);
            v.push(b.sigma2_1.sqrt());
        }
    }
    v
}

/// Identified summaries of a component with inner mixture errors: weight,
/// error mean and total error standard deviation.
fn mixture_moments(p: &MixtureParams) -> Vec<f64> {
    let mut v = p.alpha.clone();
    for c in &p.components {
        let mean: f64 = c.tau.iter().zip(&c.mu).map(|(t, m)| t * m).sum();
        let spread: f64 = c.tau.iter().zip(&c.mu).map(|(t, m)| t * (m - mean).powi(2)).sum();
        v.push(mean);
        v.push((c.sigma2 + spread).sqrt());
    }
    v
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn round_trip(design: Design, summary: fn(&MixtureParams) -> Vec<f64>) {
    let dgp = sized(design.clone(), 5000);
    let data = simulate_panel(&dgp, 2024).unwrap();
    let em = EmConfig { n_restarts: 4, seed: 1, ..EmConfig::default() };
    let fit = fit_sequence(&data, dgp.params.m(), &dgp.spec, &em).unwrap().pop().unwrap();
    let truth = canonicalize(&dgp.params);
    let err = max_abs_diff(&summary(&fit.params), &summary(&truth));
    assert!(err < 0.05, "{design}: max abs error {err}\nfit {:?}\ntruth {:?}", fit.params, truth);
}

#[test]
fn round_trip_table1() {
    round_trip(Design::Table1, flat);
}

#[test]
fn round_trip_table2() {
    round_trip(Design::Table2, flat);
}

#[test]
fn round_trip_normal_errors() {
    round_trip(Design::TableA1Normal, flat);
}

#[test]
fn round_trip_mixture_errors() {
    round_trip(Design::TableA2Mixture, mixture_moments);
}

#[test]
fn round_trip_ar1() {
    round_trip(Design::TableA3Ar1, flat);
}
