use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Orthogonal change of coordinates splitting off the consensus space.
///
/// The last two columns are the normalized all-active and all-reactive
/// patterns `v_p = [1,0,1,0,...]`, `v_q = [0,1,0,1,...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusBasis {
    pub t: DMatrix<f64>,
    pub n_i: usize,
}

impl ConsensusBasis {
    /// First `2n_I − 2` columns, transposed: maps a stacked vector to its
    /// coordinates orthogonal to the consensus space.
    pub fn projector(&self) -> DMatrix<f64> {
        self.t.columns(0, 2 * self.n_i - 2).transpose()
    }

    /// `P A Pᵀ` for the projector `P`.
    pub fn reduce(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.projector();
        &p * a * p.transpose()
    }
}

pub fn consensus_patterns(n_i: usize) -> (DVector<f64>, DVector<f64>) {
    let vp = DVector::from_fn(2 * n_i, |r, _| if r % 2 == 0 { 1.0 } else { 0.0 });
    let vq = DVector::from_fn(2 * n_i, |r, _| if r % 2 == 1 { 1.0 } else { 0.0 });
    (vp, vq)
}

/// Gram–Schmidt of the standard basis against the consensus patterns.
pub fn build_basis(n_i: usize) -> Result<ConsensusBasis> {
    if n_i < 2 {
        return Err(Error::Validation("consensus basis needs at least two inverters".into()));
    }
    let dim = 2 * n_i;
    let (vp, vq) = consensus_patterns(n_i);
    let mut kept: Vec<DVector<f64>> = vec![vp.normalize(), vq.normalize()];
    let mut free = Vec::with_capacity(dim - 2);
    for k in 0..dim {
        let mut v = DVector::zeros(dim);
        v[k] = 1.0;
        for _ in 0..2 {
            for u in &kept {
                let c = u.dot(&v);
                v.axpy(-c, u, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            v /= norm;
            kept.push(v.clone());
            free.push(v);
        }
        if free.len() == dim - 2 {
            break;
        }
    }
    let mut t = DMatrix::zeros(dim, dim);
    for (c, v) in free.iter().enumerate() {
        t.set_column(c, v);
    }
    t.set_column(dim - 2, &kept[0]);
    t.set_column(dim - 1, &kept[1]);
    Ok(ConsensusBasis { t, n_i })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::kron_i2;
    use crate::netmodel::laplacian;
    use proptest::prelude::*;

    #[test]
    fn two_inverters() {
        let b = build_basis(2).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_eq!(b.t.column(2).iter().copied().collect::<Vec<_>>(), vec![s, 0.0, s, 0.0]);
        assert_eq!(b.t.column(3).iter().copied().collect::<Vec<_>>(), vec![0.0, s, 0.0, s]);
    }

    #[test]
    fn one_inverter_is_rejected() {
        assert!(build_basis(1).is_err());
    }

    proptest! {
        #[test]
        fn orthogonal_and_kills_laplacian(n in 2usize..9) {
            let b = build_basis(n).unwrap();
            let dim = 2 * n;
            prop_assert!((b.t.transpose() * &b.t - DMatrix::identity(dim, dim)).amax() < 1e-12);
            let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
            let l = laplacian(&edges, &(0..n).collect::<Vec<_>>());
            let lt = kron_i2(&l.matrix) * &b.t;
            prop_assert!(lt.column(dim - 1).amax() < 1e-12);
            prop_assert!(lt.column(dim - 2).amax() < 1e-12);
            for c in 0..dim - 2 {
                prop_assert!(lt.column(c).amax() > 1e-6);
            }
            let l1 = b.reduce(&kron_i2(&l.matrix));
            prop_assert!(crate::linalg::lambda_min(&l1) > 1e-9);
        }
    }
}
