#![no_main]

use graincast::panel::{load_yield_panel_from_reader, CsvSchema};
use libfuzzer_sys::fuzz_target;
use std::path::Path;

fuzz_target!(|data: &[u8]| {
    let schema = CsvSchema::yield_default();
    if let Ok((panel, _non_positive)) =
        load_yield_panel_from_reader(data, Path::new("fuzz.csv"), &schema)
    {
        // A panel that parses must be internally consistent.
        assert_eq!(panel.countries.len(), panel.log_returns.rows());
        assert!(!panel.years.is_empty());
        assert_eq!(panel.years.len(), panel.levels.cols());
    }
});
