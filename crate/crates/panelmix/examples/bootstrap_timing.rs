//! Times one bootstrap LR test on the two-component design and the
//! bootstrap critical value of the one-component null at n = 2000.

use std::time::Instant;

use panelmix::estimation::{fit_sequence, EmConfig};
use panelmix::selection::{likelihood_ratio, parametric_bootstrap_pvalue};
use panelmix::sim::{simulate_panel, DgpSpec};
use panelmix::{ComponentParams, MixtureParams, ModelSpec};

fn main() {
    let spec = ModelSpec::normal();
    let em = EmConfig::default();
    let two = MixtureParams::new(
        vec![0.5, 0.5],
        vec![ComponentParams::normal(-1.0, 0.64, vec![]), ComponentParams::normal(1.0, 1.44, vec![])],
    );
    let reps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    for rep in 0..reps {
        let data = simulate_panel(&DgpSpec::new(two.clone(), spec, 400, 3), rep).unwrap();
        let t0 = Instant::now();
        let fits = fit_sequence(&data, 3, &spec, &em).unwrap();
        let (lr, _) = likelihood_ratio(&data, &spec, &em, &fits[1], &fits[2]).unwrap();
        let t1 = Instant::now();
        let r = panelmix::selection::bootstrap_test(&data, &fits[1], lr, &spec, 99, &em, rep, None).unwrap();
        println!(
            "rep {rep}: LR {lr:.3} p {:.3} crit {:.3} failures {} fit {:.2}s boot {:.2}s",
            r.p,
            r.crit_05,
            r.failures,
            (t1 - t0).as_secs_f64(),
            t1.elapsed().as_secs_f64()
        );
    }

    let one = MixtureParams::single(ComponentParams::normal(0.0, 1.0, vec![]));
    let data = simulate_panel(&DgpSpec::new(one, spec, 2000, 3), 11).unwrap();
    let t0 = Instant::now();
    let fit = fit_sequence(&data, 1, &spec, &em).unwrap().remove(0);
    let r = parametric_bootstrap_pvalue(&data, &fit, &spec, 999, &em, 5).unwrap();
    println!("M=1 n=2000 B=999: crit {:.3} failures {} in {:.1}s", r.crit_05, r.failures, t0.elapsed().as_secs_f64());
}
