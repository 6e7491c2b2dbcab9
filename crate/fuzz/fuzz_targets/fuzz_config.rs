#![no_main]

use graincast::config::{apply_override, parse_ini, ConfigMap, RunConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(map) = parse_ini(text) else {
        return;
    };
    let Ok(config) = RunConfig::from_map(map) else {
        return;
    };
    // The canonical rendering is one `section.key=value` override per line;
    // replaying it must rebuild an equivalent configuration (fixed point).
    let canonical = config.canonical();
    let mut replayed = ConfigMap::new();
    for line in canonical.lines() {
        apply_override(&mut replayed, line).expect("canonical line must be a valid override");
    }
    let rebuilt = RunConfig::from_map(replayed).expect("canonical form must validate");
    assert_eq!(
        config.digest(),
        rebuilt.digest(),
        "canonicalization must be a fixed point"
    );
});
