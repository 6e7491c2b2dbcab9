//! Shared CSV and text-output helpers.
//!
//! All float output goes through `fmt_f64`, which renders 17 significant
//! digits so that writing and re-reading a value reproduces it bit-exactly.
//! Output is byte-deterministic: no timestamps, no locale dependence.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// 17 significant digits: one leading digit plus 16 fractional digits in
/// scientific notation. Round-trips every finite f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        // Missing cells render as an empty field.
        String::new()
    } else {
        format!("{:.16e}", x)
    }
}

/// Parse a float field; empty means missing (NaN).
pub fn parse_f64_opt(field: &str) -> std::result::Result<f64, std::num::ParseFloatError> {
    let t = field.trim();
    if t.is_empty() {
        Ok(f64::NAN)
    } else {
        t.parse::<f64>()
    }
}

/// Write file contents atomically enough for our purposes, mapping errors.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Build a CSV reader (headers enabled, strict field counts) over any byte
/// source.
pub fn csv_from_reader<R: std::io::Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader)
}

/// Open a CSV reader with headers enabled.
pub fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv_from_reader(file))
}

/// Column index of `name` in a CSV header, or a MalformedFile error.
pub fn header_index(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MalformedFile {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("missing column `{}`", name),
        })
}

/// Quote a field for CSV output when it contains a delimiter, quote, or
/// newline.
pub fn escape_csv(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_exact() {
        for &x in &[
            0.0,
            -0.0,
            1.0,
            std::f64::consts::PI,
            1.0 / 3.0,
            -2.2250738585072014e-308,
            1.7976931348623157e308,
            0.09531017980432486,
        ] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "round trip failed for {s}");
        }
    }

    #[test]
    fn missing_renders_empty_and_parses_back() {
        assert_eq!(fmt_f64(f64::NAN), "");
        assert!(parse_f64_opt("").unwrap().is_nan());
        assert!(parse_f64_opt("  ").unwrap().is_nan());
        assert_eq!(parse_f64_opt("1.5").unwrap(), 1.5);
    }
}
