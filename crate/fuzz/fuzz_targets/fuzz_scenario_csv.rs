#![no_main]

use graincast::scenario::load_scenario_trajectories_from_reader;
use libfuzzer_sys::fuzz_target;
use std::path::Path;

fuzz_target!(|data: &[u8]| {
    if let Ok(scenarios) = load_scenario_trajectories_from_reader(data, Path::new("fuzz.csv")) {
        // A parsed trajectory set is non-empty and every group carries at
        // least one climate model with a shape-consistent panel.
        assert!(!scenarios.is_empty());
        for (scenario_id, models) in &scenarios {
            assert!(!scenario_id.is_empty());
            assert!(!models.is_empty());
            for (model_id, panel) in models {
                assert!(!model_id.is_empty());
                assert_eq!(panel.countries.len(), panel.mean_temp.rows());
                assert_eq!(panel.years.len(), panel.mean_temp.cols());
                assert_eq!(panel.delta_t.cols() + 1, panel.mean_temp.cols());
            }
        }
    }
});
