#![no_main]

use graincast::panel::{derive_climate_regressors, load_climate_panel_from_reader, CsvSchema};
use libfuzzer_sys::fuzz_target;
use std::path::Path;

fuzz_target!(|data: &[u8]| {
    let schema = CsvSchema::climate_default();
    if let Ok(raw) = load_climate_panel_from_reader(data, Path::new("fuzz.csv"), &schema) {
        // Any panel that parses must also survive regressor derivation.
        if let Ok(panel) = derive_climate_regressors(&raw) {
            assert_eq!(panel.countries.len(), raw.countries.len());
        }
    }
});
