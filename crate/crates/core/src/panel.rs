//! Panel outcome matrices, simultaneous-adoption treatment masks and the
//! preprocessing steps applied before estimation.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::math::{ln, population_variance};

/// Pre-period variance below this marks a unit as uninformative.
pub const ZERO_VARIANCE_TOL: f64 = 1e-12;

/// An N×T outcome matrix. Cells may be NaN until [`impute_locf_nocb`] runs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PanelMatrix {
    values: Matrix,
    unit_ids: Vec<String>,
    time_labels: Vec<String>,
}

impl PanelMatrix {
    /// Validates shape, id uniqueness and label ordering.
    ///
    /// Labels that all parse as numbers must be strictly increasing numerically; otherwise
    /// they must be distinct and their given order is taken as the time order.
    pub fn new(values: Matrix, unit_ids: Vec<String>, time_labels: Vec<String>) -> Result<Self> {
        let (n, t) = values.shape();
        if n < 2 || t < 2 {
            return Err(invalid!(InvalidPanel, "need at least 2 units and 2 periods, got {n}x{t}"));
        }
        if unit_ids.len() != n || time_labels.len() != t {
            return Err(invalid!(
                InvalidPanel,
                "{} unit ids and {} time labels for a {n}x{t} matrix",
                unit_ids.len(),
                time_labels.len()
            ));
        }
        let mut seen = BTreeSet::new();
        for id in &unit_ids {
            if !seen.insert(id.as_str()) {
                return Err(invalid!(InvalidPanel, "duplicate unit id `{id}`"));
            }
        }
        check_time_order(&time_labels)?;
        Ok(Self { values, unit_ids, time_labels })
    }

    /// Convenience constructor with generated ids `u0..` and labels `0..`.
    pub fn from_matrix(values: Matrix) -> Result<Self> {
        let ids = (0..values.rows()).map(|i| alloc::format!("u{i}")).collect();
        let labels = (0..values.cols()).map(|t| t.to_string()).collect();
        Self::new(values, ids, labels)
    }

    #[inline]
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    #[inline]
    pub fn n_units(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn n_periods(&self) -> usize {
        self.values.cols()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    pub fn unit_index(&self, id: &str) -> Option<usize> {
        self.unit_ids.iter().position(|u| u == id)
    }

    pub fn is_complete(&self) -> bool {
        self.values.is_finite()
    }

    pub fn require_complete(&self) -> Result<()> {
        if self.is_complete() {
            Ok(())
        } else {
            Err(Error::IncompletePanel)
        }
    }

    /// Same labels, new values.
    pub fn with_values(&self, values: Matrix) -> Result<Self> {
        if values.shape() != self.values.shape() {
            return Err(Error::ShapeMismatch { expected: self.values.shape(), found: values.shape() });
        }
        Ok(Self { values, unit_ids: self.unit_ids.clone(), time_labels: self.time_labels.clone() })
    }

    /// Rows `idx` in the given order.
    pub fn select_units(&self, idx: &[usize]) -> Result<Self> {
        let ids = idx.iter().map(|&i| self.unit_ids[i].clone()).collect();
        Self::new(self.values.select_rows(idx), ids, self.time_labels.clone())
    }

    /// The first `t` periods.
    pub fn leading_periods(&self, t: usize) -> Result<Self> {
        Self::new(self.values.column_range(0, t), self.unit_ids.clone(), self.time_labels[..t].to_vec())
    }

    /// Removes the named units (e.g. the actual treated unit before a placebo study).
    pub fn drop_units(&self, ids: &[String]) -> Result<Self> {
        for id in ids {
            if self.unit_index(id).is_none() {
                return Err(invalid!(InvalidPanel, "unknown unit `{id}`"));
            }
        }
        let keep: Vec<usize> = (0..self.n_units()).filter(|&i| !ids.contains(&self.unit_ids[i])).collect();
        if keep.len() < 2 {
            return Err(Error::DegeneratePanel);
        }
        self.select_units(&keep)
    }
}

fn check_time_order(labels: &[String]) -> Result<()> {
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.trim().parse::<f64>().ok()).collect();
    match numeric {
        Some(vals) => {
            if let Some(w) = vals.windows(2).position(|w| !(w[0] < w[1])) {
                return Err(invalid!(
                    InvalidPanel,
                    "time labels not strictly increasing at `{}` -> `{}`",
                    labels[w],
                    labels[w + 1]
                ));
            }
        }
        None => {
            let mut seen = BTreeSet::new();
            for l in labels {
                if !seen.insert(l.as_str()) {
                    return Err(invalid!(InvalidPanel, "duplicate time label `{l}`"));
                }
            }
        }
    }
    Ok(())
}

/// Treated units adopt at `t0` and stay treated (`W_it = 1` iff treated and `t >= t0`).
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TreatmentMask {
    treated: Vec<bool>,
    t0: usize,
    n_periods: usize,
}

impl TreatmentMask {
    pub fn new(treated: Vec<bool>, t0: usize, n_periods: usize) -> Result<Self> {
        if t0 < 1 || t0 >= n_periods {
            return Err(invalid!(InvalidMask, "t0 = {t0} must lie in [1, {}]", n_periods.saturating_sub(1)));
        }
        let g = treated.iter().filter(|&&w| w).count();
        if g == 0 || g == treated.len() {
            return Err(invalid!(InvalidMask, "need at least one treated and one control unit ({g} of {} treated)", treated.len()));
        }
        Ok(Self { treated, t0, n_periods })
    }

    /// Mask from treated unit ids.
    pub fn from_ids(panel: &PanelMatrix, treated_ids: &[String], t0: usize) -> Result<Self> {
        let mut treated = alloc::vec![false; panel.n_units()];
        for id in treated_ids {
            let i = panel.unit_index(id).ok_or_else(|| invalid!(InvalidMask, "unknown treated unit `{id}`"))?;
            treated[i] = true;
        }
        Self::new(treated, t0, panel.n_periods())
    }

    pub fn validate_for(&self, panel: &PanelMatrix) -> Result<()> {
        if self.treated.len() != panel.n_units() || self.n_periods != panel.n_periods() {
            return Err(invalid!(
                InvalidMask,
                "mask is {}x{} but panel is {}x{}",
                self.treated.len(),
                self.n_periods,
                panel.n_units(),
                panel.n_periods()
            ));
        }
        Ok(())
    }

    pub fn treated(&self) -> &[bool] {
        &self.treated
    }

    #[inline]
    pub fn t0(&self) -> usize {
        self.t0
    }

    #[inline]
    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    /// Number of post-treatment periods `T - t0`.
    #[inline]
    pub fn t_star(&self) -> usize {
        self.n_periods - self.t0
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.treated.len()).filter(|&i| self.treated[i]).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.treated.len()).filter(|&i| !self.treated[i]).collect()
    }

    /// `W_it`.
    #[inline]
    pub fn w(&self, i: usize, t: usize) -> bool {
        self.treated[i] && t >= self.t0
    }

    /// Whether `(i, t)` lies in the observed set (untreated potential outcome visible).
    #[inline]
    pub fn is_observed(&self, i: usize, t: usize) -> bool {
        !self.w(i, t)
    }

    pub fn expanded(&self) -> Matrix {
        Matrix::from_fn(self.treated.len(), self.n_periods, |i, t| if self.w(i, t) { 1.0 } else { 0.0 })
    }
}

/// Control/treated × pre/post blocks of a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitView {
    pub x_train: Matrix,
    pub y_train: Matrix,
    pub x_test: Matrix,
    pub y_test: Matrix,
    pub control_rows: Vec<usize>,
    pub treated_rows: Vec<usize>,
}

impl SplitView {
    pub fn n_controls(&self) -> usize {
        self.x_train.rows()
    }

    pub fn n_treated(&self) -> usize {
        self.x_test.rows()
    }

    pub fn t0(&self) -> usize {
        self.x_train.cols()
    }

    pub fn t_star(&self) -> usize {
        self.y_train.cols()
    }
}

pub fn split(panel: &PanelMatrix, mask: &TreatmentMask) -> Result<SplitView> {
    mask.validate_for(panel)?;
    let controls = mask.control_indices();
    let treated = mask.treated_indices();
    let (t, t0) = (panel.n_periods(), mask.t0());
    let c = panel.values().select_rows(&controls);
    let g = panel.values().select_rows(&treated);
    Ok(SplitView {
        x_train: c.column_range(0, t0),
        y_train: c.column_range(t0, t),
        x_test: g.column_range(0, t0),
        y_test: g.column_range(t0, t),
        control_rows: controls,
        treated_rows: treated,
    })
}

/// Fills gaps by last-observation-carried-forward within `[0, boundary)` and
/// `[boundary, T)` separately, then next-observation-carried-backward over the whole
/// row. Any trailing gap left (a segment with no observations after the last one) is
/// closed by a final forward pass.
pub fn impute_locf_nocb(panel: &PanelMatrix, boundary: usize) -> Result<PanelMatrix> {
    let t = panel.n_periods();
    if boundary > t {
        return Err(invalid!(InvalidArgument, "boundary {boundary} beyond {t} periods"));
    }
    let mut values = panel.values().clone();
    for i in 0..values.rows() {
        let row = values.row_mut(i);
        if row.iter().all(|x| x.is_nan()) {
            return Err(Error::AllMissingUnit(panel.unit_ids()[i].clone()));
        }
        let (pre, post) = row.split_at_mut(boundary);
        fill_forward(pre);
        fill_forward(post);
        fill_backward(row);
        fill_forward(row);
    }
    panel.with_values(values)
}

fn fill_forward(xs: &mut [f64]) {
    let mut last = f64::NAN;
    for x in xs.iter_mut() {
        if x.is_nan() {
            *x = last;
        } else {
            last = *x;
        }
    }
}

fn fill_backward(xs: &mut [f64]) {
    let mut next = f64::NAN;
    for x in xs.iter_mut().rev() {
        if x.is_nan() {
            *x = next;
        } else {
            next = *x;
        }
    }
}

/// Elementwise natural log; every value must be strictly positive.
pub fn log_transform(panel: &PanelMatrix) -> Result<PanelMatrix> {
    let v = panel.values();
    for i in 0..v.rows() {
        for (j, &x) in v.row(i).iter().enumerate() {
            if !(x > 0.0) {
                return Err(Error::NonPositiveValue { row: i, col: j, value: x });
            }
        }
    }
    panel.with_values(v.map(ln))
}

/// Drops units whose pre-period (`t < t0`) variance is below [`ZERO_VARIANCE_TOL`].
///
/// Uses the population variance, so a single pre-period always counts as zero variance.
pub fn drop_zero_variance_pre(panel: &PanelMatrix, mask: &TreatmentMask) -> Result<(PanelMatrix, Vec<String>)> {
    mask.validate_for(panel)?;
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for i in 0..panel.n_units() {
        let pre = &panel.values().row(i)[..mask.t0()];
        if population_variance(pre) < ZERO_VARIANCE_TOL {
            dropped.push(panel.unit_ids()[i].clone());
        } else {
            keep.push(i);
        }
    }
    if keep.len() < 2 {
        return Err(Error::DegeneratePanel);
    }
    Ok((panel.select_units(&keep)?, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn panel(rows: &[&[f64]]) -> PanelMatrix {
        PanelMatrix::from_matrix(Matrix::from_rows(rows)).unwrap()
    }

    #[test]
    fn rejects_small_or_duplicate() {
        assert!(PanelMatrix::from_matrix(Matrix::from_rows(&[[1.0, 2.0]])).is_err());
        let dup = PanelMatrix::new(
            Matrix::zeros(2, 2),
            vec!["a".into(), "a".into()],
            vec!["1".into(), "2".into()],
        );
        assert!(matches!(dup, Err(Error::InvalidPanel(_))));
        let unordered = PanelMatrix::new(
            Matrix::zeros(2, 2),
            vec!["a".into(), "b".into()],
            vec!["2001".into(), "2000".into()],
        );
        assert!(unordered.is_err());
    }

    #[test]
    fn mask_invariants() {
        assert!(TreatmentMask::new(vec![true, false], 0, 3).is_err());
        assert!(TreatmentMask::new(vec![true, false], 3, 3).is_err());
        assert!(TreatmentMask::new(vec![true, true], 1, 3).is_err());
        let m = TreatmentMask::new(vec![false, true], 1, 3).unwrap();
        assert!(!m.w(1, 0) && m.w(1, 1) && m.w(1, 2) && !m.w(0, 2));
        assert_eq!(m.t_star(), 2);
        let w = m.expanded();
        assert_eq!(w.row(1), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn locf_forward_fill() {
        let nan = f64::NAN;
        let p = panel(&[&[1.0, nan, nan], &[1.0, 2.0, 3.0]]);
        let out = impute_locf_nocb(&p, 3).unwrap();
        assert_eq!(out.values().row(0), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn nocb_then_locf() {
        let nan = f64::NAN;
        let p = panel(&[&[nan, 2.0, nan], &[1.0, 2.0, 3.0]]);
        for boundary in 0..=3 {
            let out = impute_locf_nocb(&p, boundary).unwrap();
            assert_eq!(out.values().row(0), &[2.0, 2.0, 2.0], "boundary {boundary}");
        }
    }

    #[test]
    fn segments_are_filled_separately() {
        let nan = f64::NAN;
        // Post segment starts with a gap: it is back-filled from the post value, not carried from pre.
        let p = panel(&[&[1.0, nan, nan, 5.0], &[1.0, 2.0, 3.0, 4.0]]);
        let out = impute_locf_nocb(&p, 2).unwrap();
        assert_eq!(out.values().row(0), &[1.0, 1.0, 5.0, 5.0]);
    }

    #[test]
    fn all_missing_unit_is_an_error() {
        let nan = f64::NAN;
        let p = panel(&[&[nan, nan], &[1.0, 2.0]]);
        assert_eq!(impute_locf_nocb(&p, 1), Err(Error::AllMissingUnit("u0".into())));
    }

    #[test]
    fn log_transform_values_and_errors() {
        let e = core::f64::consts::E;
        let p = panel(&[&[1.0, e], &[e * e, e * e * e]]);
        let out = log_transform(&p).unwrap();
        assert!((out.values()[(0, 0)]).abs() < 1e-15);
        assert!((out.values()[(0, 1)] - 1.0).abs() < 1e-15);
        assert!((out.values()[(1, 0)] - 2.0).abs() < 1e-15);
        assert!((out.values()[(1, 1)] - 3.0).abs() < 1e-15);
        let bad = panel(&[&[1.0, 0.0], &[1.0, 1.0]]);
        assert_eq!(log_transform(&bad), Err(Error::NonPositiveValue { row: 0, col: 1, value: 0.0 }));
    }

    #[test]
    fn zero_variance_units_are_dropped() {
        let p = panel(&[&[5.0, 5.0, 5.0, 9.0], &[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 3.0, 4.0]]);
        let mask = TreatmentMask::new(vec![false, false, true], 3, 4).unwrap();
        let (kept, dropped) = drop_zero_variance_pre(&p, &mask).unwrap();
        assert_eq!(dropped, vec![String::from("u0")]);
        assert_eq!(kept.unit_ids(), &["u1".to_string(), "u2".to_string()]);

        let flat = panel(&[&[5.0, 5.0, 1.0], &[2.0, 2.0, 3.0]]);
        let mask = TreatmentMask::new(vec![false, true], 2, 3).unwrap();
        assert_eq!(drop_zero_variance_pre(&flat, &mask), Err(Error::DegeneratePanel));
    }

    #[test]
    fn split_shapes_and_reassembly() {
        let p = panel(&[&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0], &[9.0, 10.0, 11.0, 12.0]]);
        let mask = TreatmentMask::new(vec![false, true, false], 2, 4).unwrap();
        let s = split(&p, &mask).unwrap();
        assert_eq!(s.x_train.shape(), (2, 2));
        assert_eq!(s.y_train.shape(), (2, 2));
        assert_eq!(s.x_test.shape(), (1, 2));
        assert_eq!(s.y_test.shape(), (1, 2));
        for (k, &i) in s.control_rows.iter().enumerate() {
            let mut row = s.x_train.row(k).to_vec();
            row.extend_from_slice(s.y_train.row(k));
            assert_eq!(row.as_slice(), p.values().row(i));
        }
        let mut row = s.x_test.row(0).to_vec();
        row.extend_from_slice(s.y_test.row(0));
        assert_eq!(row.as_slice(), p.values().row(1));

        let p3 = panel(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let m1 = TreatmentMask::new(vec![true, false], 1, 3).unwrap();
        assert_eq!(split(&p3, &m1).unwrap().x_train.cols(), 1);
    }
}
