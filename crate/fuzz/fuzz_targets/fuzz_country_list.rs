#![no_main]

use graincast::panel::parse_country_list;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let countries = parse_country_list(&text);
    // Every parsed id is non-empty with no surrounding whitespace, and
    // parsing is idempotent: re-parsing the joined list reproduces it.
    assert!(countries
        .iter()
        .all(|c| !c.is_empty() && c.trim() == c && !c.contains('\n')));
    let rejoined = countries.join("\n");
    assert_eq!(parse_country_list(&rejoined), countries);
});
