//! Times EM fits on a two-component design.

use std::time::Instant;

use panelmix::estimation::{fit_mle_nested, EmConfig};
use panelmix::sim::{simulate_panel, DgpSpec};
use panelmix::{ComponentParams, MixtureParams, ModelSpec};

fn main() {
    let spec = ModelSpec::normal();
    let truth = MixtureParams::new(
        vec![0.5, 0.5],
        vec![ComponentParams::normal(-1.0, 0.64, vec![]), ComponentParams::normal(1.0, 1.44, vec![])],
    );
    let dgp = DgpSpec::new(truth, spec, 400, 3);
    for n_restarts in [3, 10] {
        let cfg = EmConfig { n_restarts, ..EmConfig::default() };
        let start = Instant::now();
        let mut iters = [0usize; 3];
        for seed in 0..20 {
            let data = simulate_panel(&dgp, seed).unwrap();
            let f1 = fit_mle_nested(&data, 1, &spec, &cfg, None).unwrap();
            let f2 = fit_mle_nested(&data, 2, &spec, &cfg, Some(&f1)).unwrap();
            let f3 = fit_mle_nested(&data, 3, &spec, &cfg, Some(&f2)).unwrap();
            iters[0] += f1.n_iter;
            iters[1] += f2.n_iter;
            iters[2] += f3.n_iter;
        }
        println!("restarts={n_restarts}: {:.3}s per dataset, best-run iterations {:?}", start.elapsed().as_secs_f64() / 20.0, iters.map(|v| v / 20));
    }
}
