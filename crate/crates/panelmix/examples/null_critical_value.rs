//! Simulated asymptotic 5% critical value for testing one against two components.

use std::time::Instant;

use panelmix::asymptotic::{information_matrix, score_vector, simulate_critical_value};
use panelmix::estimation::{fit_mle, EmConfig};
use panelmix::sim::{simulate_panel, DgpSpec};
use panelmix::{ComponentParams, MixtureParams, ModelSpec};

fn main() {
    let spec = ModelSpec::normal();
    let truth = MixtureParams::single(ComponentParams::normal(0.0, 1.0, vec![]));
    let data = simulate_panel(&DgpSpec::new(truth, spec, 2000, 3), 1).unwrap();
    let fit = fit_mle(&data, 1, &spec, &EmConfig::default()).unwrap();
    let scores = score_vector(&data, &fit, &spec, None).unwrap();
    let info = information_matrix(&scores).unwrap();
    println!("schur = {:.4}", info.schur);
    for draws in [10_000, 200_000] {
        let start = Instant::now();
        let c = simulate_critical_value(&info, 0.05, draws, 3).unwrap();
        println!("draws={draws}: c={c:.4} ({:.1}s)", start.elapsed().as_secs_f64());
    }
}
