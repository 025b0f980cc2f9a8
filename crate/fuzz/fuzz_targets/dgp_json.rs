#![no_main]

use libfuzzer_sys::fuzz_target;
use panelmix::sim::{simulate_panel, DgpSpec};

fuzz_target!(|data: &[u8]| {
    let Ok(dgp) = serde_json::from_slice::<DgpSpec>(data) else { return };
    if dgp.validate().is_err() || dgp.n.saturating_mul(dgp.t) > 4096 {
        return;
    }
    let panel = simulate_panel(&dgp, 0).expect("a valid DGP simulates");
    assert_eq!((panel.n(), panel.t()), (dgp.n, dgp.t));
});
