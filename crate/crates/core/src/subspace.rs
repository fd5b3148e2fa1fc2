//! Low-rank subspaces built from gradient-ratio vectors, with projection and
//! span-membership queries.
//!
//! Construction runs modified Gram–Schmidt with a second orthogonalization
//! pass, so the basis depends only on the input order. A candidate vector is
//! dropped as dependent when its residual after both passes is at most
//! `drop_tolerance` times its own norm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, DenseMatrix};

pub const DEFAULT_DROP_TOLERANCE: f64 = 1e-8;

/// Immutable orthonormal basis of a subspace of `R^ambient_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subspace {
    ambient_dim: usize,
    basis: DenseMatrix,
    drop_tolerance: f64,
}

impl Subspace {
    /// The zero subspace of `R^ambient_dim`.
    pub fn empty(ambient_dim: usize) -> Self {
        Subspace {
            ambient_dim,
            basis: DenseMatrix::zeros(0, ambient_dim),
            drop_tolerance: DEFAULT_DROP_TOLERANCE,
        }
    }

    /// Orthonormalizes `spanning` in order. An empty iterator yields the
    /// rank-0 subspace.
    pub fn orthonormalize<'a, I>(
        ambient_dim: usize,
        spanning: I,
        drop_tolerance: f64,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        if !(drop_tolerance > 0.0) || !drop_tolerance.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "drop_tolerance must be positive, got {drop_tolerance}"
            )));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for v in spanning {
            if v.len() != ambient_dim {
                return Err(Error::DimensionMismatch {
                    expected: ambient_dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("spanning vector"));
            }
            if rows.len() == ambient_dim {
                continue;
            }
            let original = norm(v);
            if original == 0.0 {
                continue;
            }
            let mut w = v.to_vec();
            for _pass in 0..2 {
                for b in &rows {
                    let c = dot(&w, b);
                    axpy(-c, b, &mut w);
                }
            }
            let rest = norm(&w);
            if rest <= drop_tolerance * original {
                continue;
            }
            w.iter_mut().for_each(|x| *x /= rest);
            rows.push(w);
        }
        let rank = rows.len();
        let data = rows.into_iter().flatten().collect();
        Ok(Subspace {
            ambient_dim,
            basis: DenseMatrix::from_vec(rank, ambient_dim, data)?,
            drop_tolerance,
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn rank(&self) -> usize {
        self.basis.rows()
    }

    pub fn drop_tolerance(&self) -> f64 {
        self.drop_tolerance
    }

    /// Orthonormal basis, one vector per row.
    pub fn basis(&self) -> &DenseMatrix {
        &self.basis
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.ambient_dim {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim,
                found: v.len(),
            });
        }
        Ok(())
    }

    /// Orthogonal projection `Σ ⟨v, b_i⟩ b_i`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v)?;
        let mut out = vec![0.0; self.ambient_dim];
        for b in self.basis.row_iter() {
            axpy(dot(v, b), b, &mut out);
        }
        Ok(out)
    }

    /// `v − P(v)`, computed directly so near-members keep relative accuracy.
    pub fn residual(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v)?;
        let mut r = v.to_vec();
        for b in self.basis.row_iter() {
            let c = dot(v, b);
            axpy(-c, b, &mut r);
        }
        Ok(r)
    }

    /// `‖v − P(v)‖ / ‖v‖`, in `[0, 1]`.
    pub fn residual_ratio(&self, v: &[f64]) -> Result<f64> {
        self.check_dim(v)?;
        let n = norm(v);
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        if !n.is_finite() {
            return Err(Error::NonFinite("query vector"));
        }
        let r = self.residual(v)?;
        Ok((norm(&r) / n).min(1.0))
    }

    /// Membership predicate on the relative residual.
    pub fn in_span(&self, v: &[f64], epsilon: f64) -> Result<bool> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(self.residual_ratio(v)? < epsilon)
    }

    /// `1 − residual_ratio`; 1 means exact membership.
    pub fn span_similarity(&self, v: &[f64]) -> Result<f64> {
        Ok(1.0 - self.residual_ratio(v)?)
    }
}
