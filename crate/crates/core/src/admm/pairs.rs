//! Pair systems: the linear maps `m -> (x_i - x_j)^T M (x_i - x_j)` over the
//! cross-class pairs (`A1`) and the diameter pairs (`A2`).
//!
//! A row of `A1`/`A2` is the vectorized outer product `d d^T` with
//! `d = x_i - x_j`. Only the difference vectors are stored; products with the
//! matrices are computed from them, and [`PairBlock::row`] materializes a
//! row on demand.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};

/// Which pairs enter the diameter term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// All unordered pairs: penalizes the diameter of the whole sample.
    #[default]
    LipD,
    /// Same-label pairs only: penalizes the sum of class diameters.
    LipI,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lipd" => Ok(Variant::LipD),
            "lipi" => Ok(Variant::LipI),
            other => Err(Error::InvalidParameter(format!("unknown variant {other:?} (expected lipd or lipi)"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::LipD => "LipD",
            Variant::LipI => "LipI",
        })
    }
}

/// One block of pair rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBlock {
    p: usize,
    diffs: Vec<f64>,
    pairs: Vec<(usize, usize)>,
}

impl PairBlock {
    fn new(p: usize) -> Self {
        Self {
            p,
            diffs: Vec::new(),
            pairs: Vec::new(),
        }
    }

    fn push(&mut self, data: &LabeledDataset, i: usize, j: usize) {
        self.diffs.extend(data.row(i).iter().zip(data.row(j)).map(|(a, b)| a - b));
        self.pairs.push((i, j));
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Row index -> `(i, j)` with `i < j`.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn diff(&self, k: usize) -> &[f64] {
        &self.diffs[k * self.p..(k + 1) * self.p]
    }

    /// Row `k` as a `p^2` vector: `vec(d d^T)`.
    pub fn row(&self, k: usize) -> Vec<f64> {
        let d = self.diff(k);
        let mut out = Vec::with_capacity(self.p * self.p);
        for a in d {
            out.extend(d.iter().map(|b| a * b));
        }
        out
    }

    /// `A m`: one quadratic form `d^T M d` per row.
    pub fn mul(&self, m: &[f64]) -> Vec<f64> {
        let p = self.p;
        debug_assert_eq!(m.len(), p * p);
        (0..self.len())
            .map(|k| {
                let d = self.diff(k);
                let mut acc = 0.0;
                for i in 0..p {
                    let row = &m[i * p..(i + 1) * p];
                    let mut inner = 0.0;
                    for j in 0..p {
                        inner += row[j] * d[j];
                    }
                    acc += d[i] * inner;
                }
                acc
            })
            .collect()
    }

    /// `A^T y = sum_k y_k vec(d_k d_k^T)`.
    pub fn t_mul(&self, y: &[f64]) -> Vec<f64> {
        let p = self.p;
        debug_assert_eq!(y.len(), self.len());
        let mut out = vec![0.0; p * p];
        for (k, &yk) in y.iter().enumerate() {
            if yk == 0.0 {
                continue;
            }
            let d = self.diff(k);
            for i in 0..p {
                let s = yk * d[i];
                for j in 0..p {
                    out[i * p + j] += s * d[j];
                }
            }
        }
        out
    }

    /// `A^T A + I` as a dense `p^2 x p^2` matrix.
    pub fn normal_matrix(&self) -> DMatrix<f64> {
        let dim = self.p * self.p;
        let mut g = DMatrix::<f64>::identity(dim, dim);
        for k in 0..self.len() {
            let r = self.row(k);
            for a in 0..dim {
                if r[a] == 0.0 {
                    continue;
                }
                for b in a..dim {
                    g[(a, b)] += r[a] * r[b];
                }
            }
        }
        g.fill_lower_triangle_with_upper_triangle();
        g
    }
}

/// Cross-class block `A1` and diameter block `A2` for one training set.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSystem {
    pub variant: Variant,
    pub p: usize,
    pub a1: PairBlock,
    pub a2: PairBlock,
    /// Larger class size over smaller class size.
    pub imbalance_ratio: f64,
}

impl PairSystem {
    pub fn dim(&self) -> usize {
        self.p * self.p
    }

    pub fn n1(&self) -> usize {
        self.a1.len()
    }

    pub fn n2(&self) -> usize {
        self.a2.len()
    }
}

/// Enumerates unordered pairs `i < j`: cross-class pairs into `A1`; all pairs
/// (LipD) or same-label pairs (LipI) into `A2`.
pub fn assemble_pairs(data: &LabeledDataset, variant: Variant) -> Result<PairSystem> {
    data.require_both_classes()?;
    let (pos, neg) = data.class_counts();
    if variant == Variant::LipI && pos < 2 && neg < 2 {
        return Err(Error::NoSameLabelPairs);
    }
    let p = data.p();
    let mut a1 = PairBlock::new(p);
    let mut a2 = PairBlock::new(p);
    for i in 0..data.n() {
        for j in i + 1..data.n() {
            let same = data.label(i) == data.label(j);
            if !same {
                a1.push(data, i, j);
            }
            if variant == Variant::LipD || same {
                a2.push(data, i, j);
            }
        }
    }
    Ok(PairSystem {
        variant,
        p,
        a1,
        a2,
        imbalance_ratio: pos.max(neg) as f64 / pos.min(neg) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{mahalanobis_distance, MetricMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_by_two() -> LabeledDataset {
        LabeledDataset::from_rows(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], vec![1, 1, -1, -1]).unwrap()
    }

    #[test]
    fn pair_counts() {
        let d = two_by_two();
        let sd = assemble_pairs(&d, Variant::LipD).unwrap();
        assert_eq!((sd.n1(), sd.n2()), (4, 6));
        let si = assemble_pairs(&d, Variant::LipI).unwrap();
        assert_eq!((si.n1(), si.n2()), (4, 2));
        assert_eq!(si.a2.pairs(), &[(0, 1), (2, 3)]);
        // Variants differ only in the diameter block.
        assert_eq!(sd.a1, si.a1);
    }

    #[test]
    fn one_dimensional_row() {
        let d = LabeledDataset::from_rows(vec![vec![0.0], vec![1.0]], vec![1, -1]).unwrap();
        let s = assemble_pairs(&d, Variant::LipD).unwrap();
        assert_eq!(s.a1.row(0), vec![1.0]);
        assert!(matches!(assemble_pairs(&d, Variant::LipI), Err(Error::NoSameLabelPairs)));
        let single = LabeledDataset::from_rows(vec![vec![0.0], vec![1.0]], vec![1, 1]).unwrap();
        assert!(matches!(assemble_pairs(&single, Variant::LipD), Err(Error::SingleClass(_))));
    }

    #[test]
    fn rows_reproduce_distances_and_are_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = 3;
        let rows: Vec<Vec<f64>> = (0..9).map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let labels = vec![1, -1, 1, -1, 1, 1, -1, -1, 1];
        let data = LabeledDataset::from_rows(rows, labels).unwrap();
        let sys = assemble_pairs(&data, Variant::LipD).unwrap();
        let b: Vec<f64> = (0..p * p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut m = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                m[i * p + j] = (0..p).map(|k| b[i * p + k] * b[j * p + k]).sum();
            }
        }
        let metric = MetricMatrix::from_row_major(p, m.clone()).unwrap();
        let am = sys.a2.mul(&m);
        for (k, &(i, j)) in sys.a2.pairs().iter().enumerate() {
            assert_eq!(data.label(i) != data.label(j), sys.a1.pairs().contains(&(i, j)));
            let row = sys.a2.row(k);
            let dot: f64 = row.iter().zip(&m).map(|(a, b)| a * b).sum();
            let direct = mahalanobis_distance(&metric, data.row(i), data.row(j)).unwrap();
            assert!((dot - direct).abs() < 1e-12 * (1.0 + direct));
            assert!((am[k] - direct).abs() < 1e-12 * (1.0 + direct));
            // Symmetric and rank one: r_ab * r_cd == r_ad * r_cb.
            for a in 0..p {
                for c in 0..p {
                    assert_eq!(row[a * p + c], row[c * p + a]);
                    let lhs = row[a * p + a] * row[c * p + c];
                    let rhs = row[a * p + c] * row[c * p + a];
                    assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
                }
            }
        }
    }

    #[test]
    fn transpose_and_normal_matrix_match_dense_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = 2;
        let rows: Vec<Vec<f64>> = (0..7).map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let data = LabeledDataset::from_rows(rows, vec![1, -1, 1, -1, 1, -1, 1]).unwrap();
        let sys = assemble_pairs(&data, Variant::LipI).unwrap();
        let dim = p * p;
        let dense = DMatrix::from_fn(sys.n2(), dim, |k, a| sys.a2.row(k)[a]);
        let y: Vec<f64> = (0..sys.n2()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let expect = dense.transpose() * nalgebra::DVector::from_column_slice(&y);
        let got = sys.a2.t_mul(&y);
        for a in 0..dim {
            assert!((got[a] - expect[a]).abs() < 1e-12);
        }
        let gram = dense.transpose() * &dense + DMatrix::identity(dim, dim);
        assert!((sys.a2.normal_matrix() - gram).amax() < 1e-10);
    }
}
