//! Tensor product representations: orthonormal roles, outer-product binding
//! and role-based unbinding, plus the Hadamard binding used by the decoder gate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TprError {
    #[error("cannot build {n} orthonormal roles in dimension {dim}")]
    InfeasibleOrthogonality { n: usize, dim: usize },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// `n` orthonormal role vectors of dimension `d_m`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct RoleSet {
    roles: Tensor,
}

impl RoleSet {
    /// Wraps arbitrary rows as roles. Orthonormality is not checked, which is
    /// what the cross-talk tests rely on.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TprError> {
        Ok(Self {
            roles: Tensor::from_rows(rows)?,
        })
    }

    pub fn count(&self) -> usize {
        self.roles.rows()
    }

    pub fn dim(&self) -> usize {
        self.roles.cols()
    }

    pub fn role(&self, i: usize) -> &[f64] {
        self.roles.row_slice(i)
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.roles
    }

    /// Max deviation of the Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.count();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(self.role(i), self.role(j)) - target).abs());
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FillerSet {
    fillers: Tensor,
}

impl FillerSet {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TprError> {
        if rows.is_empty() {
            return Err(TprError::Dimension("filler set must be nonempty".into()));
        }
        let fillers = Tensor::from_rows(rows)?;
        if !fillers.is_finite() {
            return Err(TprError::Dimension("fillers must be finite".into()));
        }
        Ok(Self { fillers })
    }

    pub fn count(&self) -> usize {
        self.fillers.rows()
    }

    pub fn dim(&self) -> usize {
        self.fillers.cols()
    }

    pub fn filler(&self, i: usize) -> &[f64] {
        self.fillers.row_slice(i)
    }
}

/// `s = Σ_i f_i r_iᵀ`, shape `d_n × d_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRepresentation {
    pub s: Tensor,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Seeded Gaussian rows, orthonormalized by modified Gram-Schmidt with one
/// re-orthogonalization pass.
pub fn generate_roles(n: usize, d_m: usize, seed: u64) -> Result<RoleSet, TprError> {
    if n == 0 || n > d_m {
        return Err(TprError::InfeasibleOrthogonality { n, dim: d_m });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..d_m).map(|_| StandardNormal.sample(&mut rng)).collect();
        for _ in 0..2 {
            for r in &rows {
                let p = dot(&v, r);
                for (x, y) in v.iter_mut().zip(r) {
                    *x -= p * y;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        // A near-dependent draw is discarded and redrawn.
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        rows.push(v);
    }
    RoleSet::from_rows(&rows)
}

pub fn bind(fillers: &FillerSet, roles: &RoleSet) -> Result<BoundRepresentation, TprError> {
    if fillers.count() != roles.count() {
        return Err(TprError::Dimension(format!(
            "{} fillers but {} roles",
            fillers.count(),
            roles.count()
        )));
    }
    let (dn, dm) = (fillers.dim(), roles.dim());
    let mut s = vec![0.0; dn * dm];
    for i in 0..fillers.count() {
        let f = fillers.filler(i);
        let r = roles.role(i);
        for (a, &fa) in f.iter().enumerate() {
            for (b, &rb) in r.iter().enumerate() {
                s[a * dm + b] += fa * rb;
            }
        }
    }
    Ok(BoundRepresentation {
        s: Tensor::new(vec![dn, dm], s)?,
    })
}

/// `s · r`; recovers `f_j` exactly when `r = r_j` and the roles are orthonormal.
pub fn unbind(bound: &BoundRepresentation, role: &[f64]) -> Result<Vec<f64>, TprError> {
    let s = &bound.s;
    if role.len() != s.cols() {
        return Err(TprError::Dimension(format!(
            "role has dim {}, representation has {} columns",
            role.len(),
            s.cols()
        )));
    }
    Ok((0..s.rows()).map(|a| dot(s.row_slice(a), role)).collect())
}

/// Elementwise binding of a context vector with a role vector.
pub fn hadamard_bind(context: &Tensor, role: &Tensor) -> Result<Tensor, TprError> {
    if context.shape() != role.shape() {
        return Err(TprError::Dimension(format!(
            "context {:?} vs role {:?}",
            context.shape(),
            role.shape()
        )));
    }
    Ok(crate::tensor::elementwise(
        crate::tensor::Elementwise::Mul,
        context,
        Some(role),
    )?)
}
