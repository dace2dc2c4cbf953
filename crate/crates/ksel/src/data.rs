//! Observation tables.
//!
//! Outcomes are stored only through `SY = S·Y`; an outcome attached to an
//! unselected row is discarded on construction and never read again.

use faer::{Mat, MatRef};

use crate::error::{input, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    s: Vec<f64>,
    sy: Vec<f64>,
    d: Vec<f64>,
    x: Mat<f64>,
    m: Option<Mat<f64>>,
    v: Option<Mat<f64>>,
}

/// Unlabelled draw from the alternative population.
#[derive(Clone, Debug)]
pub struct ShiftedSample {
    pub d: Option<Vec<f64>>,
    pub x: Mat<f64>,
    pub m: Option<Mat<f64>>,
}

impl ShiftedSample {
    pub fn covariates(x: Mat<f64>) -> Self {
        Self { d: None, x, m: None }
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_rows(name: &str, m: &Mat<f64>, n: usize) -> Result<()> {
    if m.nrows() != n {
        return input(format!("column block {name} has {} rows, expected {n}", m.nrows()));
    }
    if m.ncols() == 0 {
        return input(format!("column block {name} has no columns"));
    }
    Ok(())
}

impl Dataset {
    /// `y[i]` is ignored whenever `s[i] == 0`; pass `f64::NAN` or anything else there.
    pub fn new(s: Vec<f64>, y: &[f64], d: Vec<f64>, x: Mat<f64>) -> Result<Self> {
        let n = s.len();
        if n == 0 {
            return input("empty dataset");
        }
        if y.len() != n || d.len() != n {
            return input(format!("length mismatch: s={n}, y={}, d={}", y.len(), d.len()));
        }
        check_rows("x", &x, n)?;
        for (i, &si) in s.iter().enumerate() {
            if si != 0.0 && si != 1.0 {
                return input(format!("row {i}: selection indicator must be 0 or 1, got {si}"));
            }
        }
        let sy = s
            .iter()
            .zip(y)
            .map(|(&si, &yi)| if si == 1.0 { yi } else { 0.0 })
            .collect();
        Ok(Self { s, sy, d, x, m: None, v: None })
    }

    pub fn with_m(mut self, m: Mat<f64>) -> Result<Self> {
        check_rows("m", &m, self.n())?;
        self.m = Some(m);
        Ok(self)
    }

    pub fn with_v(mut self, v: Mat<f64>) -> Result<Self> {
        check_rows("v", &v, self.n())?;
        self.v = Some(v);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn sy(&self) -> &[f64] {
        &self.sy
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn x(&self) -> MatRef<'_, f64> {
        self.x.as_ref()
    }

    pub fn m(&self) -> Option<MatRef<'_, f64>> {
        self.m.as_ref().map(|m| m.as_ref())
    }

    pub fn v(&self) -> Option<MatRef<'_, f64>> {
        self.v.as_ref().map(|v| v.as_ref())
    }

    pub fn n_selected(&self) -> usize {
        self.s.iter().filter(|&&s| s == 1.0).count()
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let pick = |m: &Mat<f64>| Mat::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)]);
        Self {
            s: idx.iter().map(|&i| self.s[i]).collect(),
            sy: idx.iter().map(|&i| self.sy[i]).collect(),
            d: idx.iter().map(|&i| self.d[i]).collect(),
            x: pick(&self.x),
            m: self.m.as_ref().map(pick),
            v: self.v.as_ref().map(pick),
        }
    }

    #[cfg(test)]
    pub(crate) fn poison_rows(&mut self, rows: &[usize]) {
        for &i in rows {
            self.s[i] = f64::NAN;
            self.sy[i] = f64::NAN;
            self.d[i] = f64::NAN;
            for j in 0..self.x.ncols() {
                self.x[(i, j)] = f64::NAN;
            }
            if let Some(m) = self.m.as_mut() {
                for j in 0..m.ncols() {
                    m[(i, j)] = f64::NAN;
                }
            }
            if let Some(v) = self.v.as_mut() {
                for j in 0..v.ncols() {
                    v[(i, j)] = f64::NAN;
                }
            }
        }
    }
}

/// Column-vector matrix from a slice.
pub fn column(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}
