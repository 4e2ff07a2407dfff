//! Eigengrasp and kinematics-aware articulation losses.

use xgrasp_autodiff::{Array, Graph, Var};

use crate::error::{Error, Result};

/// `(1/K) Σ_i ‖e_i − e*_i‖²`.
pub fn loss_eig(g: &mut Graph, e_pred: Var, e_star: &Array) -> Result<Var> {
    let k = e_star.rows();
    let t = g.constant(e_star.clone());
    let s = g.sq_err(e_pred, t)?;
    Ok(g.scale(s, 1.0 / k.max(1) as f64))
}

/// `(1/d) Σ_j w_j (q_j − q*_j)²`.
pub fn loss_kal(g: &mut Graph, q_pred: Var, q_star: &[f64], w: &[f64]) -> Result<Var> {
    if w.len() != q_star.len() {
        return Err(Error::DimensionMismatch {
            what: "KAL weights",
            expected: q_star.len(),
            got: w.len(),
        });
    }
    let t = g.constant(Array::row_vector(q_star.to_vec()));
    let s = g.weighted_sq_err(q_pred, t, w)?;
    Ok(g.scale(s, 1.0 / q_star.len().max(1) as f64))
}

/// Unweighted sum of the two terms.
pub fn total_loss(g: &mut Graph, l_eig: Var, l_kal: Var) -> Result<Var> {
    Ok(g.add(l_eig, l_kal)?)
}

/// Plain-number form of the eigengrasp loss.
pub fn loss_eig_value(e_pred: &[Vec<f64>], e_star: &[Vec<f64>]) -> Result<f64> {
    if e_pred.len() != e_star.len() {
        return Err(Error::DimensionMismatch {
            what: "eigengrasp rows",
            expected: e_star.len(),
            got: e_pred.len(),
        });
    }
    let mut s = 0.0;
    for (a, b) in e_pred.iter().zip(e_star) {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                what: "eigengrasp width",
                expected: b.len(),
                got: a.len(),
            });
        }
        s += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok(s * (1.0 / e_star.len().max(1) as f64))
}

/// Plain-number form of the KAL loss.
pub fn loss_kal_value(q_pred: &[f64], q_star: &[f64], w: &[f64]) -> Result<f64> {
    if q_pred.len() != q_star.len() || w.len() != q_star.len() {
        return Err(Error::DimensionMismatch {
            what: "articulation length",
            expected: q_star.len(),
            got: if q_pred.len() != q_star.len() { q_pred.len() } else { w.len() },
        });
    }
    let s: f64 = q_pred
        .iter()
        .zip(q_star)
        .zip(w)
        .map(|((x, y), w)| w * (x - y) * (x - y))
        .sum();
    Ok(s * (1.0 / q_star.len().max(1) as f64))
}

/// Plain mean squared error with the same reduction order as [`loss_kal_value`].
pub fn mse_value(q_pred: &[f64], q_star: &[f64]) -> f64 {
    let s: f64 = q_pred.iter().zip(q_star).map(|(x, y)| (x - y) * (x - y)).sum();
    s * (1.0 / q_star.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kal_by_hand() {
        let v = loss_kal_value(&[0.1, 0.2], &[0.0, 0.0], &[1.2, 0.8]).unwrap();
        assert!((v - 0.022).abs() < 1e-15);
        assert_eq!(loss_kal_value(&[0.3, 0.4], &[0.3, 0.4], &[1.2, 0.8]).unwrap(), 0.0);
    }

    #[test]
    fn eig_single_unit_row() {
        let a = vec![vec![0.0; 3]; 9];
        let mut b = a.clone();
        b[4][1] = 1.0;
        assert_eq!(loss_eig_value(&a, &b).unwrap(), 1.0 / 9.0);
        assert_eq!(loss_eig_value(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn graph_and_value_forms_agree() {
        let mut g = Graph::new();
        let q = g.constant(Array::row_vector(vec![0.5, -0.25, 1.0]));
        let l = loss_kal(&mut g, q, &[0.0, 0.25, 0.5], &[0.5, 1.0, 1.5]).unwrap();
        let v = loss_kal_value(&[0.5, -0.25, 1.0], &[0.0, 0.25, 0.5], &[0.5, 1.0, 1.5]).unwrap();
        assert_eq!(g.value(l).data()[0], v);
        let e = g.constant(Array::from_rows(&[[1.0, 0.0], [0.5, 0.5]]).unwrap());
        let star = Array::from_rows(&[[0.0, 0.0], [0.5, -0.5]]).unwrap();
        let le = loss_eig(&mut g, e, &star).unwrap();
        assert_eq!(g.value(le).data()[0], 1.0);
        let t = total_loss(&mut g, le, l).unwrap();
        assert_eq!(g.value(t).data()[0], 1.0 + v);
    }

    #[test]
    fn total_of_given_parts() {
        let mut g = Graph::new();
        let a = g.constant(Array::scalar(0.5));
        let b = g.constant(Array::scalar(0.25));
        let t = total_loss(&mut g, a, b).unwrap();
        assert_eq!(g.value(t).data()[0], 0.75);
    }
}
