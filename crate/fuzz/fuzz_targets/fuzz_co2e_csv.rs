#![no_main]

use graincast::scenario::load_co2e_pathways_from_reader;
use libfuzzer_sys::fuzz_target;
use std::path::Path;

fuzz_target!(|data: &[u8]| {
    if let Ok(pathways) = load_co2e_pathways_from_reader(data, Path::new("fuzz.csv")) {
        // Pathways come back sorted by year with positive, finite
        // concentrations.
        assert!(!pathways.is_empty());
        for series in pathways.values() {
            assert!(series.windows(2).all(|w| w[0].0 < w[1].0));
            assert!(series.iter().all(|&(_, ppm)| ppm.is_finite() && ppm > 0.0));
        }
    }
});
