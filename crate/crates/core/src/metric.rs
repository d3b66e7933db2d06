//! Squared Mahalanobis metric and the margin / diameter diagnostics built on it.
//!
//! `rho_M(x, y) = (x - y)^T M (x - y)` is the quantity the solver learns. It is
//! not a metric: it violates the triangle inequality. Results that need a true
//! metric (the diameter/margin decomposition, Lipschitz envelopes) use
//! [`DistanceForm::Root`], i.e. `sqrt(rho_M)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::json::ext_float;
use crate::linalg;

/// Relative symmetry tolerance: `|m_ij - m_ji| <= SYM_TOL * (1 + |m_ij|)`.
pub const SYM_TOL: f64 = 1e-10;
/// PSD tolerance: `lambda_min >= -PSD_TOL * (||M||_2 + 1)`.
pub const PSD_TOL: f64 = 1e-8;
/// Squared distances in `[-NEG_CLAMP, 0)` are round-off and clamp to 0.
pub const NEG_CLAMP: f64 = 1e-10;

/// Symmetric PSD `p x p` matrix, stored row-major. Serializes as a
/// [`MetricDocument`] with empty `meta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MetricDocument", into = "MetricDocument")]
pub struct MetricMatrix {
    p: usize,
    m: Vec<f64>,
}

impl MetricMatrix {
    pub fn identity(p: usize) -> Self {
        let mut m = vec![0.0; p * p];
        for i in 0..p {
            m[i * p + i] = 1.0;
        }
        Self { p, m }
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let p = diag.len();
        let mut m = vec![0.0; p * p];
        for (i, d) in diag.iter().enumerate() {
            m[i * p + i] = *d;
        }
        Self::from_row_major(p, m)
    }

    /// Validates symmetry and positive semidefiniteness.
    pub fn from_row_major(p: usize, m: Vec<f64>) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidParameter("metric dimension must be positive".into()));
        }
        if m.len() != p * p {
            return Err(Error::DimensionMismatch {
                expected: p * p,
                found: m.len(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPsd("non-finite entry".into()));
        }
        for i in 0..p {
            for j in i + 1..p {
                let (a, b) = (m[i * p + j], m[j * p + i]);
                if (a - b).abs() > SYM_TOL * (1.0 + a.abs()) {
                    return Err(Error::NotPsd(format!("asymmetric at ({i},{j}): {a} vs {b}")));
                }
            }
        }
        let eig = linalg::symmetric_eigen(&linalg::symmetrize(&m, p), p)?;
        let spectral = eig.values.iter().fold(0.0f64, |acc, l| acc.max(l.abs()));
        let min = eig.min_value();
        if min < -PSD_TOL * (spectral + 1.0) {
            return Err(Error::NotPsd(format!("smallest eigenvalue {min:e}")));
        }
        Ok(Self { p, m })
    }

    /// Wraps the output of [`linalg::psd_project`], which is exactly symmetric
    /// and PSD by construction.
    pub(crate) fn from_projection(p: usize, m: Vec<f64>) -> Self {
        debug_assert_eq!(m.len(), p * p);
        Self { p, m }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Row-major entries. For a symmetric matrix this is also the
    /// column-stacked vectorization.
    pub fn as_slice(&self) -> &[f64] {
        &self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i * self.p + j]
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        linalg::min_eigenvalue(&self.m, self.p)
    }

    /// `(x - y)^T M (x - y)` with no dimension checks; negative round-off is
    /// clamped to zero.
    #[inline]
    pub fn distance_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let p = self.p;
        let mut acc = 0.0;
        for i in 0..p {
            let di = x[i] - y[i];
            if di == 0.0 {
                continue;
            }
            let row = &self.m[i * p..(i + 1) * p];
            let mut inner = 0.0;
            for j in 0..p {
                inner += row[j] * (x[j] - y[j]);
            }
            acc += di * inner;
        }
        acc.max(0.0)
    }

    /// Distance in the requested form, with dimension and PSD checks.
    pub fn distance(&self, x: &[f64], y: &[f64], form: DistanceForm) -> Result<f64> {
        let d = mahalanobis_distance(self, x, y)?;
        Ok(form.apply(d))
    }

    pub fn to_document(&self, meta: BTreeMap<String, serde_json::Value>) -> MetricDocument {
        MetricDocument {
            p: self.p,
            m: self.m.clone(),
            meta,
        }
    }

    pub fn from_document(doc: &MetricDocument) -> Result<Self> {
        Self::from_row_major(doc.p, doc.m.clone())
    }
}

impl TryFrom<MetricDocument> for MetricMatrix {
    type Error = Error;

    fn try_from(doc: MetricDocument) -> Result<Self> {
        Self::from_row_major(doc.p, doc.m)
    }
}

impl From<MetricMatrix> for MetricDocument {
    fn from(m: MetricMatrix) -> Self {
        m.to_document(BTreeMap::new())
    }
}

/// `(x - y)^T M (x - y)`. Values in `[-1e-10, 0)` are clamped to 0; anything
/// more negative means `M` is indefinite and raises `NotPsd`.
pub fn mahalanobis_distance(metric: &MetricMatrix, x: &[f64], y: &[f64]) -> Result<f64> {
    let p = metric.p;
    if x.len() != p || y.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: if x.len() != p { x.len() } else { y.len() },
        });
    }
    let mut acc = 0.0;
    for i in 0..p {
        let di = x[i] - y[i];
        for j in 0..p {
            acc += di * metric.m[i * p + j] * (x[j] - y[j]);
        }
    }
    if acc < -NEG_CLAMP {
        return Err(Error::NotPsd(format!("negative squared distance {acc:e}")));
    }
    Ok(acc.max(0.0))
}

/// `c * M`, so that `rho_{cM} = c * rho_M`.
pub fn scale_metric(metric: &MetricMatrix, c: f64) -> Result<MetricMatrix> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!("scale must be finite and >= 0, got {c}")));
    }
    Ok(MetricMatrix {
        p: metric.p,
        m: metric.m.iter().map(|v| v * c).collect(),
    })
}

/// JSON form of a metric: `{"p": .., "m": [row-major], "meta": {..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDocument {
    pub p: usize,
    pub m: Vec<f64>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

/// Whether diagnostics use `rho_M` itself or its square root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceForm {
    /// `(x - y)^T M (x - y)`.
    #[default]
    Squared,
    /// `sqrt((x - y)^T M (x - y))`, a (pseudo)metric.
    Root,
}

impl DistanceForm {
    #[inline]
    pub fn apply(self, squared: f64) -> f64 {
        match self {
            DistanceForm::Squared => squared,
            DistanceForm::Root => squared.sqrt(),
        }
    }
}

/// `2 / min cross-class distance`: the smallest Lipschitz constant that lets
/// a function take the value `t_i` at every training point. Infinite when two
/// differently labeled points coincide under the metric.
pub fn lipschitz_l0(data: &LabeledDataset, metric: &MetricMatrix) -> Result<f64> {
    lipschitz_l0_with(data, metric, DistanceForm::Squared)
}

pub fn lipschitz_l0_with(data: &LabeledDataset, metric: &MetricMatrix, form: DistanceForm) -> Result<f64> {
    check_dims(data, metric)?;
    data.require_both_classes()?;
    let mut min = f64::INFINITY;
    for i in 0..data.n() {
        for j in i + 1..data.n() {
            if data.label(i) != data.label(j) {
                min = min.min(form.apply(metric.distance_unchecked(data.row(i), data.row(j))));
            }
        }
    }
    Ok(if min > 0.0 { 2.0 / min } else { f64::INFINITY })
}

fn check_dims(data: &LabeledDataset, metric: &MetricMatrix) -> Result<()> {
    if data.p() != metric.p() {
        return Err(Error::DimensionMismatch {
            expected: metric.p(),
            found: data.p(),
        });
    }
    Ok(())
}

/// Margin, diameters and margin ratios of a labeled sample under a metric.
///
/// Index pairs refer to rows of the dataset the report was computed on (for
/// local reports, rows of the full dataset). Single-point classes have
/// diameter 0 and no maximizing pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub form: DistanceForm,
    pub n: usize,
    pub margin: f64,
    pub diam_all: f64,
    pub diam_pos: f64,
    pub diam_neg: f64,
    #[serde(with = "ext_float")]
    pub ratio_diam: f64,
    #[serde(with = "ext_float")]
    pub ratio_intra: f64,
    #[serde(with = "ext_float")]
    pub l0: f64,
    pub argmin_pair: (usize, usize),
    pub argmax_all: Option<(usize, usize)>,
    pub argmax_pos: Option<(usize, usize)>,
    pub argmax_neg: Option<(usize, usize)>,
}

impl MarginReport {
    /// `1 / ratio_diam`, i.e. `diam_all / margin`.
    pub fn inverse_ratio_diam(&self) -> f64 {
        self.diam_all / self.margin
    }

    /// `1 / ratio_intra`, i.e. `(diam_pos + diam_neg) / margin`.
    pub fn inverse_ratio_intra(&self) -> f64 {
        (self.diam_pos + self.diam_neg) / self.margin
    }
}

#[derive(Default)]
struct Extremum {
    value: Option<f64>,
    pair: Option<(usize, usize)>,
}

impl Extremum {
    // Strict comparison keeps the lexicographically first pair on ties,
    // since pairs are visited in (i, j) order.
    fn offer_max(&mut self, v: f64, pair: (usize, usize)) {
        if self.value.is_none_or(|cur| v > cur) {
            self.value = Some(v);
            self.pair = Some(pair);
        }
    }

    fn offer_min(&mut self, v: f64, pair: (usize, usize)) {
        if self.value.is_none_or(|cur| v < cur) {
            self.value = Some(v);
            self.pair = Some(pair);
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

fn report_over(data: &LabeledDataset, idx: &[usize], metric: &MetricMatrix, form: DistanceForm) -> Result<MarginReport> {
    check_dims(data, metric)?;
    let has_pos = idx.iter().any(|&i| data.label(i) == 1);
    let has_neg = idx.iter().any(|&i| data.label(i) == -1);
    if !has_pos {
        return Err(Error::SingleClass(-1));
    }
    if !has_neg {
        return Err(Error::SingleClass(1));
    }

    let mut margin = Extremum::default();
    let mut all = Extremum::default();
    let mut pos = Extremum::default();
    let mut neg = Extremum::default();
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let d = form.apply(metric.distance_unchecked(data.row(i), data.row(j)));
            let pair = (i.min(j), i.max(j));
            all.offer_max(d, pair);
            match (data.label(i), data.label(j)) {
                (1, 1) => pos.offer_max(d, pair),
                (-1, -1) => neg.offer_max(d, pair),
                _ => margin.offer_min(d, pair),
            }
        }
    }

    let m = margin.value.expect("both classes present");
    let diam_all = all.value.unwrap_or(0.0);
    let diam_pos = pos.value.unwrap_or(0.0);
    let diam_neg = neg.value.unwrap_or(0.0);
    Ok(MarginReport {
        form,
        n: idx.len(),
        margin: m,
        diam_all,
        diam_pos,
        diam_neg,
        ratio_diam: ratio(m, diam_all),
        ratio_intra: ratio(m, diam_pos + diam_neg),
        l0: if m > 0.0 { 2.0 / m } else { f64::INFINITY },
        argmin_pair: margin.pair.expect("both classes present"),
        argmax_all: all.pair,
        argmax_pos: pos.pair,
        argmax_neg: neg.pair,
    })
}

/// Margin report under the squared form.
pub fn margin_report(data: &LabeledDataset, metric: &MetricMatrix) -> Result<MarginReport> {
    margin_report_with(data, metric, DistanceForm::Squared)
}

pub fn margin_report_with(data: &LabeledDataset, metric: &MetricMatrix, form: DistanceForm) -> Result<MarginReport> {
    let idx: Vec<usize> = (0..data.n()).collect();
    report_over(data, &idx, metric, form)
}

/// Margin report restricted to the rows in `subset`.
pub fn local_margin_report(
    data: &LabeledDataset,
    subset: &[usize],
    metric: &MetricMatrix,
    form: DistanceForm,
) -> Result<MarginReport> {
    let mut sorted = subset.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidParameter("subset contains duplicate indices".into()));
    }
    if let Some(&bad) = sorted.iter().find(|&&i| i >= data.n()) {
        return Err(Error::InvalidParameter(format!("subset index {bad} out of range (n = {})", data.n())));
    }
    report_over(data, &sorted, metric, form)
}
