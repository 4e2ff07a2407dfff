//! Eigengrasp bases and conversions between amplitudes and joint angles.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of eigengrasps used throughout.
pub const DEFAULT_K: usize = 9;

/// `K` basis rows over a padded articulation space of width `D_max`.
///
/// Columns `0..d` hold the hand's revolute joints in order; the rest are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigengraspSet {
    #[serde(rename = "K")]
    pub k: usize,
    pub d: usize,
    #[serde(rename = "E")]
    pub e: Vec<Vec<f64>>,
}

impl EigengraspSet {
    pub fn d_max(&self) -> usize {
        self.e.first().map_or(self.d, Vec::len)
    }

    /// `K × d` block of real joint columns.
    pub fn unmasked(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k, self.d, |i, j| self.e[i][j])
    }

    /// True at the columns that correspond to real joints.
    pub fn column_mask(&self) -> Vec<bool> {
        (0..self.d_max()).map(|j| j < self.d).collect()
    }

    /// Builds a set from a `K × d` block, zero-padding to `d_max` columns.
    pub fn from_unmasked(block: &DMatrix<f64>, d_max: usize) -> Result<Self> {
        if block.ncols() > d_max {
            return Err(Error::CapacityExceeded {
                what: "eigengrasp width",
                got: block.ncols(),
                max: d_max,
            });
        }
        let e = (0..block.nrows())
            .map(|i| {
                let mut row = vec![0.0; d_max];
                for j in 0..block.ncols() {
                    row[j] = block[(i, j)];
                }
                row
            })
            .collect();
        Ok(Self {
            k: block.nrows(),
            d: block.ncols(),
            e,
        })
    }
}

/// Uncentered PCA: top right singular vectors of `q` (n × d), sign-fixed and
/// zero-padded past the rank.
pub fn pca_eigengrasps(q: &DMatrix<f64>, k: usize, d_max: usize) -> Result<EigengraspSet> {
    if q.nrows() == 0 {
        return Err(Error::EmptyData("articulation matrix has no rows"));
    }
    if q.ncols() == 0 || k == 0 {
        return Err(Error::EmptyData("articulation matrix has no columns or K = 0"));
    }
    let (n, d) = q.shape();
    let svd = q.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let s_max = order.first().map_or(0.0, |&i| s[i]);
    let tol = s_max * n.max(d) as f64 * f64::EPSILON;
    let mut block = DMatrix::zeros(k, d);
    for (row, &i) in order.iter().take(k).enumerate() {
        if !(s[i] > tol) {
            break;
        }
        let mut v = v_t.row(i).transpose();
        let lead = v.iamax();
        if v[lead] < 0.0 {
            v = -v;
        }
        block.set_row(row, &v.transpose());
    }
    EigengraspSet::from_unmasked(&block, d_max)
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

/// `q = Σ a_i e_i` over the real joint columns.
pub fn decode_articulation(a: &[f64], e: &EigengraspSet) -> Result<Vec<f64>> {
    check_len("amplitude length", e.k, a.len())?;
    let mut q = vec![0.0; e.d];
    for (ai, row) in a.iter().zip(&e.e) {
        for (qj, ej) in q.iter_mut().zip(row) {
            *qj += ai * ej;
        }
    }
    Ok(q)
}

/// Least-squares amplitudes (minimum norm when the basis is rank deficient).
pub fn encode_amplitudes(q: &[f64], e: &EigengraspSet) -> Result<Vec<f64>> {
    check_len("articulation length", e.d, q.len())?;
    let et = e.unmasked().transpose();
    let pinv = et
        .pseudo_inverse(1e-12)
        .map_err(|m| Error::DegenerateInput(m.to_string()))?;
    Ok((pinv * DVector::from_column_slice(q)).iter().copied().collect())
}

/// Share of the uncentered second moment of `q` captured by each basis row.
pub fn variance_explained(q: &DMatrix<f64>, e: &EigengraspSet) -> Result<Vec<f64>> {
    if q.nrows() == 0 {
        return Err(Error::EmptyData("articulation matrix has no rows"));
    }
    check_len("articulation width", e.d, q.ncols())?;
    let total = q.norm_squared();
    let proj = q * e.unmasked().transpose();
    Ok((0..e.k)
        .map(|i| if total > 0.0 { proj.column(i).norm_squared() / total } else { 0.0 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_data() {
        let v = [0.0, -0.6, 0.8];
        let q = DMatrix::from_fn(5, 3, |_, j| v[j]);
        let e = pca_eigengrasps(&q, 2, 4).unwrap();
        assert_eq!(e.k, 2);
        assert_eq!(e.e[1], vec![0.0; 4]);
        assert!((e.e[0][1] + 0.6).abs() < 1e-12 && (e.e[0][2] - 0.8).abs() < 1e-12);
        assert_eq!(e.e[0][3], 0.0);
        let ve = variance_explained(&q, &e).unwrap();
        assert!((ve[0] - 1.0).abs() < 1e-12 && ve[1] == 0.0);
    }

    #[test]
    fn empty_data() {
        assert!(matches!(pca_eigengrasps(&DMatrix::zeros(0, 3), 2, 4), Err(Error::EmptyData(_))));
    }

    #[test]
    fn zero_amplitudes_decode_to_zero() {
        let e = EigengraspSet::from_unmasked(&DMatrix::identity(2, 3), 5).unwrap();
        assert_eq!(decode_articulation(&[0.0, 0.0], &e).unwrap(), vec![0.0; 3]);
        assert_eq!(decode_articulation(&[1.0, 0.0], &e).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(matches!(decode_articulation(&[1.0], &e), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn encode_basis_vector_and_orthogonal_complement() {
        let e = EigengraspSet::from_unmasked(&DMatrix::identity(2, 3), 3).unwrap();
        let a = encode_amplitudes(&[1.0, 0.0, 0.0], &e).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-15 && a[1].abs() < 1e-15);
        assert!(encode_amplitudes(&[0.0, 0.0, 2.0], &e).unwrap().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn zero_rows_get_zero_coefficients() {
        let mut block = DMatrix::zeros(3, 2);
        block[(0, 0)] = 1.0;
        let e = EigengraspSet::from_unmasked(&block, 2).unwrap();
        assert_eq!(encode_amplitudes(&[0.5, 0.25], &e).unwrap(), vec![0.5, 0.0, 0.0]);
    }

    #[test]
    fn json_field_names() {
        let e = EigengraspSet::from_unmasked(&DMatrix::identity(1, 1), 2).unwrap();
        assert_eq!(serde_json::to_string(&e).unwrap(), r#"{"K":1,"d":1,"E":[[1.0,0.0]]}"#);
    }
}
