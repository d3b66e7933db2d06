//! Nearest-neighbor and Lipschitz-extension classifiers under a learned metric.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, Standardizer};
use crate::error::{Error, Result};
use crate::metric::{self, DistanceForm, MetricDocument, MetricMatrix};

/// Blend of the upper envelope `min_i (a_i + L d(x, x_i))` and the lower
/// envelope `max_i (a_i - L d(x, x_i))`:
/// `U_alpha = alpha * upper + (1 - alpha) * lower`.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzModel {
    anchors: Vec<f64>,
    n: usize,
    p: usize,
    values: Vec<f64>,
    lip_constant: f64,
    alpha: f64,
    metric: MetricMatrix,
    form: DistanceForm,
}

/// Signed prediction. `tie` is set when the extension value is exactly 0;
/// the label is then +1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: i8,
    pub value: f64,
    pub tie: bool,
}

impl LipschitzModel {
    pub fn new(
        anchors: &LabeledDataset,
        values: Vec<f64>,
        lip_constant: f64,
        alpha: f64,
        metric: MetricMatrix,
        form: DistanceForm,
    ) -> Result<Self> {
        if anchors.p() != metric.p() {
            return Err(Error::DimensionMismatch {
                expected: metric.p(),
                found: anchors.p(),
            });
        }
        if values.len() != anchors.n() {
            return Err(Error::DimensionMismatch {
                expected: anchors.n(),
                found: values.len(),
            });
        }
        if !(lip_constant.is_finite() && lip_constant > 0.0) {
            return Err(Error::InvalidParameter(format!("Lipschitz constant must be finite and positive, got {lip_constant}")));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("anchor values must be finite".into()));
        }
        Ok(Self {
            anchors: anchors.features().to_vec(),
            n: anchors.n(),
            p: anchors.p(),
            values,
            lip_constant,
            alpha,
            metric,
            form,
        })
    }

    /// `a_i = t_i`, `L = L0` of the training set in the given form, `alpha = 1/2`.
    pub fn interpolating(train: &LabeledDataset, metric: MetricMatrix, form: DistanceForm) -> Result<Self> {
        let l0 = metric::lipschitz_l0_with(train, &metric, form)?;
        if !l0.is_finite() {
            return Err(Error::InvalidParameter(
                "L0 is infinite: two differently labeled points coincide under the metric".into(),
            ));
        }
        let values = train.labels().iter().map(|&t| f64::from(t)).collect();
        Self::new(train, values, l0, 0.5, metric, form)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        self.alpha = alpha;
        Ok(self)
    }

    pub fn with_lip_constant(mut self, lip_constant: f64) -> Result<Self> {
        if !(lip_constant.is_finite() && lip_constant > 0.0) {
            return Err(Error::InvalidParameter(format!("Lipschitz constant must be finite and positive, got {lip_constant}")));
        }
        self.lip_constant = lip_constant;
        Ok(self)
    }

    pub fn n_anchors(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn anchor(&self, i: usize) -> &[f64] {
        &self.anchors[i * self.p..(i + 1) * self.p]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lip_constant(&self) -> f64 {
        self.lip_constant
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn metric(&self) -> &MetricMatrix {
        &self.metric
    }

    pub fn form(&self) -> DistanceForm {
        self.form
    }

    fn check_query(&self, x: &[f64]) -> Result<()> {
        if self.n == 0 {
            return Err(Error::EmptyAnchors);
        }
        if x.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `(upper, lower)` envelopes at `x`.
    pub fn envelopes(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_query(x)?;
        let mut upper = f64::INFINITY;
        let mut lower = f64::NEG_INFINITY;
        for i in 0..self.n {
            let d = self.form.apply(self.metric.distance_unchecked(x, self.anchor(i)));
            let a = self.values[i];
            upper = upper.min(a + self.lip_constant * d);
            lower = lower.max(a - self.lip_constant * d);
        }
        Ok((upper, lower))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let value = lipschitz_extension_value(self, x)?;
        Ok(Prediction {
            label: if value >= 0.0 { 1 } else { -1 },
            value,
            tie: value == 0.0,
        })
    }

    /// Predictions for every row of `queries`, in row order.
    pub fn predict_batch(&self, queries: &LabeledDataset) -> Result<Vec<Prediction>> {
        (0..queries.n()).into_par_iter().map(|i| self.predict(queries.row(i))).collect()
    }

    pub fn to_document(&self, standardizer: Option<Standardizer>) -> ModelDocument {
        ModelDocument {
            metric: self.metric.to_document(Default::default()),
            form: self.form,
            lip_constant: self.lip_constant,
            alpha: self.alpha,
            anchors: (0..self.n).map(|i| self.anchor(i).to_vec()).collect(),
            anchor_values: self.values.clone(),
            standardizer,
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let metric = MetricMatrix::from_document(&doc.metric)?;
        if doc.anchors.is_empty() {
            return Err(Error::EmptyAnchors);
        }
        // Labels are not part of the model; any valid placeholder will do.
        let placeholder = vec![1; doc.anchors.len()];
        let anchors = LabeledDataset::from_rows(doc.anchors.clone(), placeholder)?;
        if let Some(s) = &doc.standardizer {
            if s.mean.len() != metric.p() || s.sd.len() != metric.p() {
                return Err(Error::DimensionMismatch {
                    expected: metric.p(),
                    found: s.mean.len(),
                });
            }
        }
        Self::new(&anchors, doc.anchor_values.clone(), doc.lip_constant, doc.alpha, metric, doc.form)
    }
}

/// On-disk model: metric document, anchors and their values, `L`, `alpha`,
/// and the feature standardization fitted on the training data (if any).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub metric: MetricDocument,
    pub form: DistanceForm,
    pub lip_constant: f64,
    pub alpha: f64,
    pub anchors: Vec<Vec<f64>>,
    pub anchor_values: Vec<f64>,
    pub standardizer: Option<Standardizer>,
}

/// `alpha * min_i(a_i + L d(x, x_i)) + (1 - alpha) * max_i(a_i - L d(x, x_i))`.
pub fn lipschitz_extension_value(model: &LipschitzModel, x: &[f64]) -> Result<f64> {
    let (upper, lower) = model.envelopes(x)?;
    Ok(model.alpha * upper + (1.0 - model.alpha) * lower)
}

/// Sign of the extension value, 0 resolved to +1.
pub fn predict_lipschitz(model: &LipschitzModel, x: &[f64]) -> Result<i8> {
    Ok(model.predict(x)?.label)
}

/// Index and squared distance of the nearest training point; ties go to the
/// lowest index.
pub fn nearest_neighbor(data: &LabeledDataset, metric: &MetricMatrix, x: &[f64]) -> Result<(usize, f64)> {
    if data.p() != metric.p() || x.len() != metric.p() {
        return Err(Error::DimensionMismatch {
            expected: metric.p(),
            found: if x.len() != metric.p() { x.len() } else { data.p() },
        });
    }
    let mut best = (0, f64::INFINITY);
    for (i, row) in data.rows().enumerate() {
        let d = metric.distance_unchecked(x, row);
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

pub fn predict_nn(data: &LabeledDataset, metric: &MetricMatrix, x: &[f64]) -> Result<i8> {
    let (i, _) = nearest_neighbor(data, metric, x)?;
    Ok(data.label(i))
}

/// 1-NN predictions for every row of `queries`, in row order.
pub fn predict_nn_batch(train: &LabeledDataset, metric: &MetricMatrix, queries: &LabeledDataset) -> Result<Vec<i8>> {
    (0..queries.n()).into_par_iter().map(|i| predict_nn(train, metric, queries.row(i))).collect()
}

fn error_rate(predicted: &[i8], truth: &[i8]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let wrong = predicted.iter().zip(truth).filter(|(a, b)| a != b).count();
    wrong as f64 / truth.len() as f64
}

/// Fraction of `eval` misclassified by the Lipschitz extension.
pub fn empirical_risk(model: &LipschitzModel, eval: &LabeledDataset) -> Result<f64> {
    let predicted: Vec<i8> = model.predict_batch(eval)?.iter().map(|p| p.label).collect();
    Ok(error_rate(&predicted, eval.labels()))
}

/// Fraction of `eval` misclassified by 1-NN over `train`.
pub fn nn_error_rate(train: &LabeledDataset, metric: &MetricMatrix, eval: &LabeledDataset) -> Result<f64> {
    let predicted = predict_nn_batch(train, metric, eval)?;
    Ok(error_rate(&predicted, eval.labels()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize) -> LabeledDataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let mut labels: Vec<i8> = (0..n).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
        labels[0] = 1;
        labels[1] = -1;
        LabeledDataset::from_rows(rows, labels).unwrap()
    }

    fn random_metric(rng: &mut ChaCha8Rng, p: usize) -> MetricMatrix {
        let b: Vec<f64> = (0..p * p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut m = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                m[i * p + j] = (0..p).map(|k| b[i * p + k] * b[j * p + k]).sum::<f64>() + if i == j { 0.1 } else { 0.0 };
            }
        }
        MetricMatrix::from_row_major(p, m).unwrap()
    }

    #[test]
    fn single_anchor_blend() {
        let anchor = LabeledDataset::from_rows(vec![vec![0.0, 0.0]], vec![1]).unwrap();
        let x = [2.0, 0.0];
        for alpha in [0.0, 0.25, 0.5, 1.0] {
            let model = LipschitzModel::new(&anchor, vec![1.0], 1.0, alpha, MetricMatrix::identity(2), DistanceForm::Squared).unwrap();
            let v = lipschitz_extension_value(&model, &x).unwrap();
            assert_eq!(v, alpha * 5.0 + (1.0 - alpha) * -3.0);
        }
        let half = LipschitzModel::new(&anchor, vec![1.0], 1.0, 0.5, MetricMatrix::identity(2), DistanceForm::Squared).unwrap();
        let (u, l) = half.envelopes(&x).unwrap();
        assert_eq!(lipschitz_extension_value(&half, &x).unwrap(), 1.0);
        assert_eq!(lipschitz_extension_value(&half, &x).unwrap(), (u + l) / 2.0);
    }

    #[test]
    fn anchors_are_interpolated() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = random_dataset(&mut rng, 15, 3);
        let model = LipschitzModel::interpolating(&data, random_metric(&mut rng, 3), DistanceForm::Squared).unwrap();
        for k in 0..data.n() {
            let v = lipschitz_extension_value(&model, data.row(k)).unwrap();
            assert!((v - f64::from(data.label(k))).abs() < 1e-9);
            assert_eq!(predict_lipschitz(&model, data.row(k)).unwrap(), data.label(k));
        }
        assert_eq!(empirical_risk(&model, &data).unwrap(), 0.0);
    }

    #[test]
    fn equidistant_query_ties_to_positive() {
        let data = LabeledDataset::from_rows(vec![vec![-1.0], vec![1.0]], vec![-1, 1]).unwrap();
        let model = LipschitzModel::interpolating(&data, MetricMatrix::identity(1), DistanceForm::Squared).unwrap();
        let p = model.predict(&[0.0]).unwrap();
        assert_eq!(p, Prediction { label: 1, value: 0.0, tie: true });
    }

    #[test]
    fn nn_examples() {
        let data = LabeledDataset::from_rows(vec![vec![0.0, 0.0], vec![3.0, 0.0], vec![0.0, 3.0]], vec![1, -1, -1]).unwrap();
        let id = MetricMatrix::identity(2);
        assert_eq!(predict_nn(&data, &id, &[3.0, 0.0]).unwrap(), -1);
        assert_eq!(predict_nn(&data, &id, &[0.4, 0.2]).unwrap(), 1);
        // Equidistant to rows 1 and 2: lowest index wins.
        assert_eq!(nearest_neighbor(&data, &id, &[3.0, 3.0]).unwrap().0, 1);
        // Squared Euclidean and Euclidean agree on the argmin.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let q = [rng.random_range(-1.0..4.0), rng.random_range(-1.0..4.0)];
            let euclid = data
                .rows()
                .enumerate()
                .map(|(i, r)| (i, ((r[0] - q[0]).powi(2) + (r[1] - q[1]).powi(2)).sqrt()))
                .fold((0, f64::INFINITY), |b, (i, d)| if d < b.1 { (i, d) } else { b });
            assert_eq!(nearest_neighbor(&data, &id, &q).unwrap().0, euclid.0);
        }
    }

    #[test]
    fn risk_complements_under_label_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let train = random_dataset(&mut rng, 12, 2);
        let eval = random_dataset(&mut rng, 30, 2);
        let flipped = LabeledDataset::from_flat(eval.features().to_vec(), eval.n(), eval.p(), eval.labels().iter().map(|t| -t).collect()).unwrap();
        let model = LipschitzModel::interpolating(&train, MetricMatrix::identity(2), DistanceForm::Squared).unwrap();
        let r = empirical_risk(&model, &eval).unwrap();
        assert!((empirical_risk(&model, &flipped).unwrap() - (1.0 - r)).abs() < 1e-15);
        let id = MetricMatrix::identity(2);
        let nr = nn_error_rate(&train, &id, &eval).unwrap();
        assert!((nn_error_rate(&train, &id, &flipped).unwrap() - (1.0 - nr)).abs() < 1e-15);
    }

    #[test]
    fn squared_form_envelopes_can_cross() {
        // Cross pair at squared distance 1, so L0 = 2. At the midpoint:
        // upper = min(1 + 0.5, -1 + 0.5) = -0.5, lower = max(1 - 0.5, -1 - 0.5) = 0.5.
        let data = LabeledDataset::from_rows(vec![vec![0.0], vec![1.0]], vec![1, -1]).unwrap();
        let model = LipschitzModel::interpolating(&data, MetricMatrix::identity(1), DistanceForm::Squared).unwrap();
        let (u, l) = model.envelopes(&[0.5]).unwrap();
        assert_eq!((u, l), (-0.5, 0.5));
        let root = LipschitzModel::interpolating(&data, MetricMatrix::identity(1), DistanceForm::Root).unwrap();
        let (u, l) = root.envelopes(&[0.5]).unwrap();
        assert!(l <= u);
    }

    #[test]
    fn infinite_l0_is_rejected() {
        let data = LabeledDataset::from_rows(vec![vec![1.0], vec![1.0]], vec![1, -1]).unwrap();
        assert!(LipschitzModel::interpolating(&data, MetricMatrix::identity(1), DistanceForm::Squared).is_err());
    }

    #[test]
    fn model_document_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data = random_dataset(&mut rng, 8, 2);
        let model = LipschitzModel::interpolating(&data, random_metric(&mut rng, 2), DistanceForm::Root).unwrap();
        let doc = model.to_document(Some(Standardizer::identity(2)));
        let text = crate::json::to_string(&doc).unwrap();
        let back: ModelDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(LipschitzModel::from_document(&back).unwrap(), model);
    }

    proptest::proptest! {
        #[test]
        fn half_extension_agrees_with_nn(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rng.random_range(1..4);
            let n = rng.random_range(2..20);
            let data = random_dataset(&mut rng, n, p);
            let metric = random_metric(&mut rng, p);
            let model = LipschitzModel::interpolating(&data, metric.clone(), DistanceForm::Squared).unwrap();
            for _ in 0..20 {
                let q: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
                let pred = model.predict(&q).unwrap();
                if !pred.tie {
                    proptest::prop_assert_eq!(pred.label, predict_nn(&data, &metric, &q).unwrap());
                }
            }
        }

        #[test]
        fn root_form_envelopes_are_ordered_and_lipschitz(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rng.random_range(1..4);
            let data = random_dataset(&mut rng, 12, p);
            let metric = random_metric(&mut rng, p);
            let model = LipschitzModel::interpolating(&data, metric.clone(), DistanceForm::Root).unwrap();
            let l = model.lip_constant();
            for _ in 0..10 {
                let x: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
                let y: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
                let (ux, lx) = model.envelopes(&x).unwrap();
                let (uy, ly) = model.envelopes(&y).unwrap();
                proptest::prop_assert!(lx <= ux + 1e-9);
                let dxy = metric.distance(&x, &y, DistanceForm::Root).unwrap();
                proptest::prop_assert!((ux - uy).abs() <= l * dxy + 1e-9);
                proptest::prop_assert!((lx - ly).abs() <= l * dxy + 1e-9);
                let lo = lipschitz_extension_value(&model.clone().with_alpha(0.2).unwrap(), &x).unwrap();
                let hi = lipschitz_extension_value(&model.clone().with_alpha(0.8).unwrap(), &x).unwrap();
                proptest::prop_assert!(lo <= hi + 1e-9);
            }
        }
    }
}
