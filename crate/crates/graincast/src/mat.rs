//! Row-major matrix with missing-value semantics.
//!
//! Missing cells are stored as NaN; `get` returns `None` for them. All panel
//! and dataset types build on this. Equality for tests must go through
//! `bits_eq`, never `==` on floats, because NaN != NaN.

#[derive(Debug, Clone)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// All cells missing.
    pub fn missing(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, f64::NAN)
    }

    pub fn from_rows(rows_data: &[Vec<f64>]) -> Self {
        let rows = rows_data.len();
        let cols = rows_data.first().map_or(0, |r| r.len());
        assert!(
            rows_data.iter().all(|r| r.len() == cols),
            "ragged rows in Mat::from_rows"
        );
        Mat {
            rows,
            cols,
            data: rows_data.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Value at (r, c), or None when the cell is missing.
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        let v = self.raw(r, c);
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    /// Raw cell value; missing cells read as NaN.
    pub fn raw(&self, r: usize, c: usize) -> f64 {
        assert!(r < self.rows && c < self.cols, "Mat index out of bounds");
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        assert!(r < self.rows && c < self.cols, "Mat index out of bounds");
        self.data[r * self.cols + c] = v;
    }

    pub fn set_missing(&mut self, r: usize, c: usize) {
        self.set(r, c, f64::NAN);
    }

    pub fn is_missing(&self, r: usize, c: usize) -> bool {
        self.raw(r, c).is_nan()
    }

    /// Non-missing values of one row.
    pub fn row_present(&self, r: usize) -> Vec<f64> {
        (0..self.cols).filter_map(|c| self.get(r, c)).collect()
    }

    /// Keep only the given rows, in the given order.
    pub fn select_rows(&self, keep: &[usize]) -> Mat {
        let mut out = Mat::missing(keep.len(), self.cols);
        for (new_r, &old_r) in keep.iter().enumerate() {
            for c in 0..self.cols {
                out.set(new_r, c, self.raw(old_r, c));
            }
        }
        out
    }

    /// Keep only the given columns, in the given order.
    pub fn select_cols(&self, keep: &[usize]) -> Mat {
        let mut out = Mat::missing(self.rows, keep.len());
        for r in 0..self.rows {
            for (new_c, &old_c) in keep.iter().enumerate() {
                out.set(r, new_c, self.raw(r, old_c));
            }
        }
        out
    }

    /// Bitwise equality, treating NaN cells as equal to each other.
    pub fn bits_eq(&self, other: &Mat) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()))
    }
}
