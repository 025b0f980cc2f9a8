#![no_main]

use libfuzzer_sys::fuzz_target;
use panelmix_cli::ingest::{ingest_reader, CsvSchema};

fuzz_target!(|data: &[u8]| {
    let plain = CsvSchema::default();
    if let Ok(r) = ingest_reader(data, &plain) {
        assert_eq!(r.data.y().len(), r.data.n() * r.data.t());
    }
    let with_x = CsvSchema { x_cols: vec!["x".into(), "g".into()], categorical: vec!["g".into()], ..CsvSchema::default() };
    if let Ok(r) = ingest_reader(data, &with_x) {
        assert_eq!(r.x_names.len(), r.data.q_x());
    }
});
