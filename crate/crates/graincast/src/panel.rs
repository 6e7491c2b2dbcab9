//! Yield and climate panel ingestion, derived regressors, the volatility
//! outlier screen, and panel alignment.
//!
//! Conventions:
//! - Log-returns use the natural log: r[i][t] = ln(level[i][t+1] / level[i][t]).
//!   Column t of `log_returns` therefore belongs to calendar year `years[t+1]`.
//! - Temperature differences follow the same indexing: delta_t[i][t] =
//!   mean_temp[i][t+1] - mean_temp[i][t].
//! - The model's time index t starts at 1 on the first log-return year.
//!   Alignment consumes two log-return years as lags, so the first usable
//!   estimation index is t = 3.

use std::collections::BTreeMap;
use std::path::Path;

use crate::csvio::{self, fmt_f64, parse_f64_opt};
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Column names for the yield/climate CSV formats.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub country: String,
    pub year: String,
    pub value: String,
}

impl CsvSchema {
    pub fn yield_default() -> Self {
        CsvSchema {
            country: "country".into(),
            year: "year".into(),
            value: "value".into(),
        }
    }

    pub fn climate_default() -> Self {
        CsvSchema {
            country: "country".into(),
            year: "year".into(),
            value: "mean_temp".into(),
        }
    }
}

/// Per-country annual yield (or production) levels with derived log-returns.
#[derive(Debug, Clone)]
pub struct YieldPanel {
    pub countries: Vec<String>,
    /// Strictly increasing, consecutive calendar years.
    pub years: Vec<i32>,
    /// K x T_raw levels; missing cells are NaN.
    pub levels: Mat,
    /// K x (T_raw - 1); column t belongs to years[t + 1].
    pub log_returns: Mat,
    /// Aligned with `log_returns`: true where the return is missing.
    pub missing_mask: Vec<Vec<bool>>,
}

impl YieldPanel {
    /// Build a panel from levels, deriving log-returns. A return is missing
    /// iff either contributing level is missing or non-positive.
    pub fn new(countries: Vec<String>, years: Vec<i32>, levels: Mat) -> Result<Self> {
        if countries.len() != levels.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} countries vs {} level rows",
                countries.len(),
                levels.rows()
            )));
        }
        if years.len() != levels.cols() {
            return Err(Error::DimensionMismatch(format!(
                "{} years vs {} level columns",
                years.len(),
                levels.cols()
            )));
        }
        check_consecutive(&years)?;
        let k = countries.len();
        let t_ret = years.len().saturating_sub(1);
        let mut log_returns = Mat::missing(k, t_ret);
        let mut missing_mask = vec![vec![true; t_ret]; k];
        for i in 0..k {
            for t in 0..t_ret {
                let prev = levels.get(i, t);
                let next = levels.get(i, t + 1);
                if let (Some(p), Some(n)) = (prev, next) {
                    if p > 0.0 && n > 0.0 {
                        log_returns.set(i, t, (n / p).ln());
                        missing_mask[i][t] = false;
                    }
                }
            }
        }
        Ok(YieldPanel {
            countries,
            years,
            levels,
            log_returns,
            missing_mask,
        })
    }

    pub fn k(&self) -> usize {
        self.countries.len()
    }

    /// Last non-missing level per country (used as the production
    /// compounding base for projections).
    pub fn last_levels(&self) -> Vec<Option<(i32, f64)>> {
        (0..self.k())
            .map(|i| {
                (0..self.years.len())
                    .rev()
                    .find_map(|t| self.levels.get(i, t).map(|v| (self.years[t], v)))
            })
            .collect()
    }

    /// Restrict to a subset of countries, preserving this panel's order.
    pub fn subset(&self, keep: &[String]) -> Result<YieldPanel> {
        let idx: Vec<usize> = self
            .countries
            .iter()
            .enumerate()
            .filter(|(_, c)| keep.contains(c))
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            return Err(Error::EmptyIntersection(
                "country subset has no overlap with panel".into(),
            ));
        }
        let countries = idx.iter().map(|&i| self.countries[i].clone()).collect();
        YieldPanel::new(countries, self.years.clone(), self.levels.select_rows(&idx))
    }
}

fn check_consecutive(years: &[i32]) -> Result<()> {
    for w in years.windows(2) {
        if w[1] != w[0] + 1 {
            return Err(Error::DimensionMismatch(format!(
                "years must be consecutive, found {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Growing-season mean temperatures before regressor derivation.
#[derive(Debug, Clone)]
pub struct RawClimatePanel {
    pub countries: Vec<String>,
    pub years: Vec<i32>,
    pub mean_temp: Mat,
}

/// Climate panel with year-over-year differences derived.
#[derive(Debug, Clone)]
pub struct ClimatePanel {
    pub countries: Vec<String>,
    pub years: Vec<i32>,
    pub mean_temp: Mat,
    /// K x (T_raw - 1); column t belongs to years[t + 1].
    pub delta_t: Mat,
    pub delta_t_sq: Mat,
}

/// Populate delta_t and delta_t_sq from a raw temperature panel.
pub fn derive_climate_regressors(raw: &RawClimatePanel) -> Result<ClimatePanel> {
    if raw.years.len() < 2 {
        return Err(Error::InsufficientYears(format!(
            "climate panel has {} year(s)",
            raw.years.len()
        )));
    }
    check_consecutive(&raw.years)?;
    if raw.countries.len() != raw.mean_temp.rows() || raw.years.len() != raw.mean_temp.cols() {
        return Err(Error::DimensionMismatch(
            "climate panel shape does not match countries/years".into(),
        ));
    }
    let k = raw.countries.len();
    let t_d = raw.years.len() - 1;
    let mut delta_t = Mat::missing(k, t_d);
    let mut delta_t_sq = Mat::missing(k, t_d);
    for i in 0..k {
        for t in 0..t_d {
            if let (Some(a), Some(b)) = (raw.mean_temp.get(i, t), raw.mean_temp.get(i, t + 1)) {
                let d = b - a;
                delta_t.set(i, t, d);
                delta_t_sq.set(i, t, d * d);
            }
        }
    }
    Ok(ClimatePanel {
        countries: raw.countries.clone(),
        years: raw.years.clone(),
        mean_temp: raw.mean_temp.clone(),
        delta_t,
        delta_t_sq,
    })
}

/// Sample standard deviation (n - 1 denominator) of the non-missing
/// log-returns of one country; None when fewer than two values exist.
pub fn return_sd(panel: &YieldPanel, i: usize) -> Option<f64> {
    let vals = panel.log_returns.row_present(i);
    if vals.len() < 2 {
        return None;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let ss = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    Some((ss / (n - 1.0)).sqrt())
}

/// Remove countries whose log-return sample standard deviation exceeds
/// `threshold`. Countries with fewer than two observed returns are retained
/// (their volatility cannot be assessed). Survivor order is preserved.
pub fn volatility_filter(panel: &YieldPanel, threshold: f64) -> Result<(YieldPanel, Vec<String>)> {
    assert!(threshold > 0.0, "volatility threshold must be positive");
    let mut keep = Vec::new();
    let mut removed = Vec::new();
    for i in 0..panel.k() {
        match return_sd(panel, i) {
            Some(sd) if sd > threshold => removed.push(panel.countries[i].clone()),
            _ => keep.push(i),
        }
    }
    if keep.is_empty() {
        return Err(Error::AllCountriesRemoved);
    }
    let countries: Vec<String> = keep.iter().map(|&i| panel.countries[i].clone()).collect();
    let filtered = YieldPanel::new(
        countries,
        panel.years.clone(),
        panel.levels.select_rows(&keep),
    )?;
    Ok((filtered, removed))
}

/// Model-ready dataset: log-returns with two lags and climate regressors,
/// restricted to the country/year intersection of the inputs.
#[derive(Debug, Clone)]
pub struct AlignedDataset {
    pub countries: Vec<String>,
    /// Calendar years of the usable estimation columns (metadata only).
    pub years_effective: Vec<i32>,
    /// Model time index t for each column; t = 1 is the first log-return
    /// year of the aligned range, so the first usable column has t = 3.
    pub time_index: Vec<u32>,
    pub y: Mat,
    pub y_lag1: Mat,
    pub y_lag2: Mat,
    pub dt: Mat,
    pub dt2: Mat,
}

impl AlignedDataset {
    pub fn k(&self) -> usize {
        self.countries.len()
    }

    pub fn t_len(&self) -> usize {
        self.years_effective.len()
    }

    /// Raw cell accessors for the likelihood hot loop; missing cells read
    /// as NaN, so callers must gate on `cell_complete`.
    pub fn raw_y(&self, i: usize, t: usize) -> f64 {
        self.y.raw(i, t)
    }

    pub fn raw_lag1(&self, i: usize, t: usize) -> f64 {
        self.y_lag1.raw(i, t)
    }

    pub fn raw_lag2(&self, i: usize, t: usize) -> f64 {
        self.y_lag2.raw(i, t)
    }

    pub fn raw_dt(&self, i: usize, t: usize) -> f64 {
        self.dt.raw(i, t)
    }

    pub fn raw_dt2(&self, i: usize, t: usize) -> f64 {
        self.dt2.raw(i, t)
    }

    /// True when every term needed by the likelihood at (i, t) is present.
    pub fn cell_complete(&self, i: usize, t: usize) -> bool {
        !self.y.is_missing(i, t)
            && !self.y_lag1.is_missing(i, t)
            && !self.y_lag2.is_missing(i, t)
            && !self.dt.is_missing(i, t)
            && !self.dt2.is_missing(i, t)
    }

    /// Number of complete cells (likelihood terms).
    pub fn n_observations(&self) -> usize {
        (0..self.k())
            .map(|i| {
                (0..self.t_len())
                    .filter(|&t| self.cell_complete(i, t))
                    .count()
            })
            .sum()
    }

    /// Column index of a calendar year within the usable range.
    pub fn col_of_year(&self, year: i32) -> Option<usize> {
        self.years_effective.iter().position(|&y| y == year)
    }

    /// Restrict to the first `n_cols` usable columns (an expanding fit
    /// window for rolling evaluation).
    pub fn truncate_cols(&self, n_cols: usize) -> Result<AlignedDataset> {
        if n_cols == 0 || n_cols > self.t_len() {
            return Err(Error::DimensionMismatch(format!(
                "cannot truncate {}-column dataset to {n_cols} columns",
                self.t_len()
            )));
        }
        let idx: Vec<usize> = (0..n_cols).collect();
        Ok(AlignedDataset {
            countries: self.countries.clone(),
            years_effective: self.years_effective[..n_cols].to_vec(),
            time_index: self.time_index[..n_cols].to_vec(),
            y: self.y.select_cols(&idx),
            y_lag1: self.y_lag1.select_cols(&idx),
            y_lag2: self.y_lag2.select_cols(&idx),
            dt: self.dt.select_cols(&idx),
            dt2: self.dt2.select_cols(&idx),
        })
    }

    /// Append one forecast column for the year after the last usable year:
    /// the response is missing, lags roll forward from the final observed
    /// returns, and the climate regressors for the target year are looked up
    /// in `climate` (erroring when that year is absent).
    pub fn extend_for_forecast(&self, climate: &ClimatePanel) -> Result<AlignedDataset> {
        let k = self.k();
        let t_len = self.t_len();
        let target_year = *self.years_effective.last().expect("non-empty dataset") + 1;
        // delta_t column t belongs to climate.years[t + 1].
        let climate_col = climate
            .years
            .iter()
            .position(|&y| y == target_year)
            .and_then(|p| p.checked_sub(1))
            .ok_or(Error::MissingClimateForTarget(target_year))?;

        let grow = |m: &Mat| {
            let mut out = Mat::missing(k, t_len + 1);
            for i in 0..k {
                for t in 0..t_len {
                    if let Some(v) = m.get(i, t) {
                        out.set(i, t, v);
                    }
                }
            }
            out
        };
        let y = grow(&self.y); // target-year response stays missing
        let mut y_lag1 = grow(&self.y_lag1);
        let mut y_lag2 = grow(&self.y_lag2);
        let mut dt = grow(&self.dt);
        let mut dt2 = grow(&self.dt2);
        for i in 0..k {
            let country = &self.countries[i];
            if let Some(v) = self.y.get(i, t_len - 1) {
                y_lag1.set(i, t_len, v);
            }
            if let Some(v) = self.y_lag1.get(i, t_len - 1) {
                y_lag2.set(i, t_len, v);
            }
            if let Some(row) = climate.countries.iter().position(|c| c == country) {
                if let Some(v) = climate.delta_t.get(row, climate_col) {
                    dt.set(i, t_len, v);
                    dt2.set(i, t_len, v * v);
                }
            }
        }
        let mut years = self.years_effective.clone();
        years.push(target_year);
        let mut time_index = self.time_index.clone();
        time_index.push(self.time_index[t_len - 1] + 1);
        Ok(AlignedDataset {
            countries: self.countries.clone(),
            years_effective: years,
            time_index,
            y,
            y_lag1,
            y_lag2,
            dt,
            dt2,
        })
    }

    /// Restrict to a subset of countries, preserving this dataset's order.
    pub fn subset(&self, keep: &[String]) -> Result<AlignedDataset> {
        let idx: Vec<usize> = self
            .countries
            .iter()
            .enumerate()
            .filter(|(_, c)| keep.contains(c))
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            return Err(Error::EmptyIntersection(
                "country subset has no overlap with dataset".into(),
            ));
        }
        Ok(AlignedDataset {
            countries: idx.iter().map(|&i| self.countries[i].clone()).collect(),
            years_effective: self.years_effective.clone(),
            time_index: self.time_index.clone(),
            y: self.y.select_rows(&idx),
            y_lag1: self.y_lag1.select_rows(&idx),
            y_lag2: self.y_lag2.select_rows(&idx),
            dt: self.dt.select_rows(&idx),
            dt2: self.dt2.select_rows(&idx),
        })
    }
}

/// Intersect countries and years of the two panels and consume two leading
/// log-return years as lags.
pub fn align(yield_panel: &YieldPanel, climate: &ClimatePanel) -> Result<AlignedDataset> {
    // Countries: yield-panel order, restricted to those present in both.
    let countries: Vec<String> = yield_panel
        .countries
        .iter()
        .filter(|c| climate.countries.contains(c))
        .cloned()
        .collect();
    if countries.is_empty() {
        return Err(Error::EmptyIntersection("no common countries".into()));
    }
    let y_rows: Vec<usize> = countries
        .iter()
        .map(|c| yield_panel.countries.iter().position(|x| x == c).unwrap())
        .collect();
    let c_rows: Vec<usize> = countries
        .iter()
        .map(|c| climate.countries.iter().position(|x| x == c).unwrap())
        .collect();

    // Years: both panels hold consecutive ranges, so the intersection is
    // the overlap of the two ranges.
    let lo = (*yield_panel.years.first().unwrap()).max(*climate.years.first().unwrap());
    let hi = (*yield_panel.years.last().unwrap()).min(*climate.years.last().unwrap());
    // Need at least 4 years: 3 log-return years to burn two lags + 1 usable.
    if hi - lo + 1 < 4 {
        return Err(Error::EmptyIntersection(format!(
            "common year range {}..{} too short",
            lo, hi
        )));
    }

    // Column t of a difference matrix belongs to calendar year `years[t+1]`
    // in its own panel frame. Restrict both to years lo+1 ..= hi.
    let y_cols: Vec<usize> = (lo + 1..=hi)
        .map(|yr| (yr - 1 - yield_panel.years[0]) as usize)
        .collect();
    let c_cols: Vec<usize> = (lo + 1..=hi)
        .map(|yr| (yr - 1 - climate.years[0]) as usize)
        .collect();

    let r = yield_panel
        .log_returns
        .select_rows(&y_rows)
        .select_cols(&y_cols);
    let dt_full = climate.delta_t.select_rows(&c_rows).select_cols(&c_cols);
    let dt2_full = climate.delta_t_sq.select_rows(&c_rows).select_cols(&c_cols);

    // Log-return years are lo+1 ..= hi with time index 1 ..= hi-lo.
    // Two leading years are consumed as lags.
    let n_ret = (hi - lo) as usize;
    let eff: Vec<usize> = (2..n_ret).collect();
    let lag1: Vec<usize> = (1..n_ret - 1).collect();
    let lag2: Vec<usize> = (0..n_ret - 2).collect();

    Ok(AlignedDataset {
        countries,
        years_effective: (lo + 3..=hi).collect(),
        time_index: (3..=n_ret as u32).collect(),
        y: r.select_cols(&eff),
        y_lag1: r.select_cols(&lag1),
        y_lag2: r.select_cols(&lag2),
        dt: dt_full.select_cols(&eff),
        dt2: dt2_full.select_cols(&eff),
    })
}

/// Load a yield panel from CSV. Returns the panel and the number of
/// non-positive levels that were recorded as missing.
pub fn load_yield_panel(path: &Path, schema: &CsvSchema) -> Result<(YieldPanel, usize)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_yield_panel_from_reader(file, path, schema)
}

/// Parse a yield panel from any byte source; `label` stands in for the file
/// path in error messages.
pub fn load_yield_panel_from_reader<R: std::io::Read>(
    reader: R,
    label: &Path,
    schema: &CsvSchema,
) -> Result<(YieldPanel, usize)> {
    let rows = read_country_year_value(reader, label, schema)?;
    build_yield_panel(label, rows)
}

fn build_yield_panel(path: &Path, rows: Vec<(String, i32, f64)>) -> Result<(YieldPanel, usize)> {
    if rows.is_empty() {
        return Err(Error::MalformedFile {
            path: path.to_path_buf(),
            line: 1,
            msg: "no data rows".into(),
        });
    }
    // Sort rows by country then year; BTreeMap gives the sorted country set.
    let mut by_country: BTreeMap<String, BTreeMap<i32, f64>> = BTreeMap::new();
    for (country, year, value) in rows {
        let entry = by_country.entry(country.clone()).or_default();
        if entry.insert(year, value).is_some() {
            return Err(Error::DuplicateKey {
                path: path.to_path_buf(),
                country,
                year,
            });
        }
    }
    let y_min = *by_country.values().flat_map(|m| m.keys()).min().unwrap();
    let y_max = *by_country.values().flat_map(|m| m.keys()).max().unwrap();
    let years: Vec<i32> = (y_min..=y_max).collect();
    let countries: Vec<String> = by_country.keys().cloned().collect();
    let mut levels = Mat::missing(countries.len(), years.len());
    let mut non_positive = 0usize;
    for (i, c) in countries.iter().enumerate() {
        for (t, yr) in years.iter().enumerate() {
            if let Some(&v) = by_country[c].get(yr) {
                if v.is_nan() {
                    // explicit missing field
                } else if v <= 0.0 {
                    non_positive += 1;
                } else {
                    levels.set(i, t, v);
                }
            }
        }
    }
    let panel = YieldPanel::new(countries, years, levels)?;
    Ok((panel, non_positive))
}

/// Load growing-season mean temperatures from CSV (no regressors derived).
pub fn load_climate_panel(path: &Path, schema: &CsvSchema) -> Result<RawClimatePanel> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_climate_panel_from_reader(file, path, schema)
}

/// Parse a climate panel from any byte source; `label` stands in for the
/// file path in error messages.
pub fn load_climate_panel_from_reader<R: std::io::Read>(
    reader: R,
    path: &Path,
    schema: &CsvSchema,
) -> Result<RawClimatePanel> {
    let rows = read_country_year_value(reader, path, schema)?;
    if rows.is_empty() {
        return Err(Error::MalformedFile {
            path: path.to_path_buf(),
            line: 1,
            msg: "no data rows".into(),
        });
    }
    let mut by_country: BTreeMap<String, BTreeMap<i32, f64>> = BTreeMap::new();
    for (country, year, value) in rows {
        let entry = by_country.entry(country.clone()).or_default();
        if entry.insert(year, value).is_some() {
            return Err(Error::DuplicateKey {
                path: path.to_path_buf(),
                country,
                year,
            });
        }
    }
    let y_min = *by_country.values().flat_map(|m| m.keys()).min().unwrap();
    let y_max = *by_country.values().flat_map(|m| m.keys()).max().unwrap();
    let years: Vec<i32> = (y_min..=y_max).collect();
    let countries: Vec<String> = by_country.keys().cloned().collect();
    let mut mean_temp = Mat::missing(countries.len(), years.len());
    for (i, c) in countries.iter().enumerate() {
        for (t, yr) in years.iter().enumerate() {
            if let Some(&v) = by_country[c].get(yr) {
                if !v.is_nan() {
                    mean_temp.set(i, t, v);
                }
            }
        }
    }
    Ok(RawClimatePanel {
        countries,
        years,
        mean_temp,
    })
}

fn read_country_year_value<R: std::io::Read>(
    source: R,
    path: &Path,
    schema: &CsvSchema,
) -> Result<Vec<(String, i32, f64)>> {
    let mut reader = csvio::csv_from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| malformed(path, 1, e.to_string()))?
        .clone();
    let ci = csvio::header_index(&headers, &schema.country, path)?;
    let yi = csvio::header_index(&headers, &schema.year, path)?;
    let vi = csvio::header_index(&headers, &schema.value, path)?;
    let mut rows = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let line = row_no as u64 + 2;
        let record = record.map_err(|e| malformed(path, line, e.to_string()))?;
        let country = record
            .get(ci)
            .ok_or_else(|| malformed(path, line, "missing country field".into()))?
            .trim()
            .to_string();
        if country.is_empty() {
            return Err(malformed(path, line, "empty country id".into()));
        }
        let year: i32 = record
            .get(yi)
            .ok_or_else(|| malformed(path, line, "missing year field".into()))?
            .trim()
            .parse()
            .map_err(|e| malformed(path, line, format!("bad year: {e}")))?;
        let value = parse_f64_opt(
            record
                .get(vi)
                .ok_or_else(|| malformed(path, line, "missing value field".into()))?,
        )
        .map_err(|e| malformed(path, line, format!("bad value: {e}")))?;
        if value.is_infinite() {
            return Err(malformed(path, line, "non-finite value".into()));
        }
        rows.push((country, year, value));
    }
    Ok(rows)
}

fn malformed(path: &Path, line: u64, msg: String) -> Error {
    Error::MalformedFile {
        path: path.to_path_buf(),
        line,
        msg,
    }
}

/// Write a yield panel as `country,year,value` rows (one row per cell,
/// missing value rendered as an empty field), sorted by country then year.
pub fn write_yield_panel(panel: &YieldPanel, path: &Path) -> Result<()> {
    let mut order: Vec<usize> = (0..panel.k()).collect();
    order.sort_by(|&a, &b| panel.countries[a].cmp(&panel.countries[b]));
    let mut out = String::from("country,year,value\n");
    for &i in &order {
        for (t, yr) in panel.years.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{}\n",
                csvio::escape_csv(&panel.countries[i]),
                yr,
                fmt_f64(panel.levels.raw(i, t))
            ));
        }
    }
    csvio::write_file(path, &out)
}

/// One country id per line; blank lines ignored.
pub fn load_country_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_country_list(&text))
}

/// Parse a country list from text: one id per line, surrounding whitespace
/// trimmed, blank lines dropped.
pub fn parse_country_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}
