//! Roles, fillers and explicit tensor product representations.
//!
//! A TPR of an object whose role `i` is bound to filler `m(i)` is
//! `Σ_i ξ_F(f_m(i)) ⊗ ξ_R(r_i)`, a point in a `d_f * d_r` dimensional space.
//! Fillers are recovered exactly by unbinding with the columns `u_i` of a
//! left inverse of the role matrix, `u_iᵀ ξ_R(r_j) = δ_ij`.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::linalg::{left_inverse, semi_orthogonal, DenseMatrix, DenseVector};
use crate::rng::SeededRng;

/// Tolerance on `u_iᵀ ξ_R(r_j) = δ_ij` accepted at construction.
pub const DELTA_TOLERANCE: f64 = 1e-8;
/// Two codebook columns closer than this (max-abs) count as duplicates.
pub const DUPLICATE_FILLER_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum RoleMode {
    /// Orthonormal role columns; unbinding vectors are the roles themselves.
    SemiOrthogonal,
    /// `M_ξR = I`; the TPR degenerates to concatenation of fillers.
    Identity,
    /// Any full-column-rank role matrix; unbinders come from a left inverse.
    General,
}

/// Frozen role embeddings together with their unbinding vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct RoleSpace {
    embeddings: DenseMatrix,
    unbinders: DenseMatrix,
    mode: RoleMode,
}

impl RoleSpace {
    pub fn semi_orthogonal(d_r: usize, n_r: usize, rng: &mut SeededRng) -> Result<Self> {
        let embeddings = semi_orthogonal(d_r, n_r, rng)?;
        Ok(Self {
            unbinders: embeddings.clone(),
            embeddings,
            mode: RoleMode::SemiOrthogonal,
        })
    }

    pub fn identity(n_r: usize) -> Result<Self> {
        if n_r == 0 {
            return Err(invalid("identity role space needs n_r >= 1"));
        }
        let embeddings = DenseMatrix::identity(n_r);
        Ok(Self {
            unbinders: embeddings.clone(),
            embeddings,
            mode: RoleMode::Identity,
        })
    }

    /// Arbitrary linearly independent roles (columns of `embeddings`).
    pub fn general(embeddings: DenseMatrix) -> Result<Self> {
        let unbinders = left_inverse(&embeddings)?.transpose();
        let space = Self {
            embeddings,
            unbinders,
            mode: RoleMode::General,
        };
        space.check_delta()?;
        Ok(space)
    }

    /// Rebuild from stored parts, re-validating the mode's invariants.
    pub fn from_parts(
        mode: RoleMode,
        embeddings: DenseMatrix,
        unbinders: DenseMatrix,
    ) -> Result<Self> {
        if embeddings.shape() != unbinders.shape() {
            return Err(invalid("role embeddings and unbinders differ in shape"));
        }
        match mode {
            RoleMode::Identity => {
                if embeddings != DenseMatrix::identity(embeddings.rows()) {
                    return Err(invalid("identity role space must hold I"));
                }
            }
            RoleMode::SemiOrthogonal => {
                if embeddings.max_abs_diff(&unbinders) > 1e-10 {
                    return Err(invalid("semi-orthogonal unbinders must equal embeddings"));
                }
            }
            RoleMode::General => {}
        }
        let space = Self {
            embeddings,
            unbinders,
            mode,
        };
        space.check_delta()?;
        Ok(space)
    }

    fn check_delta(&self) -> Result<()> {
        let gram = self.unbinders.transpose().matmul(&self.embeddings)?;
        if gram.max_abs_diff(&DenseMatrix::identity(self.n_r())) > DELTA_TOLERANCE {
            return Err(invalid("unbinding vectors do not satisfy u_i·r_j = δ_ij"));
        }
        Ok(())
    }

    pub fn d_r(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn n_r(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn mode(&self) -> RoleMode {
        self.mode
    }

    /// `M_ξR`, column `i` is `ξ_R(r_i)`.
    pub fn embeddings(&self) -> &DenseMatrix {
        &self.embeddings
    }

    /// Column `i` is the unbinding vector `u_i`.
    pub fn unbinders(&self) -> &DenseMatrix {
        &self.unbinders
    }

    pub fn role(&self, i: usize) -> DenseVector {
        self.embeddings.column(i)
    }

    pub fn unbinder(&self, i: usize) -> DenseVector {
        self.unbinders.column(i)
    }
}

/// The filler embedding matrix `M_ξF` (column `j` is `ξ_F(f_j)`).
#[derive(Clone, Debug, PartialEq)]
pub struct FillerCodebook {
    embeddings: DenseMatrix,
}

impl FillerCodebook {
    pub fn new(embeddings: DenseMatrix) -> Result<Self> {
        let n_f = embeddings.cols();
        let cols: Vec<DenseVector> = (0..n_f).map(|j| embeddings.column(j)).collect();
        for a in 0..n_f {
            for b in a + 1..n_f {
                if cols[a].sub(&cols[b]).norm_inf() <= DUPLICATE_FILLER_TOLERANCE {
                    return Err(invalid("duplicate filler embeddings"));
                }
            }
        }
        Ok(Self { embeddings })
    }

    pub fn from_fillers(fillers: &[DenseVector]) -> Result<Self> {
        Self::new(DenseMatrix::from_columns(fillers)?)
    }

    /// Gaussian initialization with standard deviation `scale`.
    pub fn random(d_f: usize, n_f: usize, scale: f64, rng: &mut SeededRng) -> Result<Self> {
        let data = (0..d_f * n_f).map(|_| scale * rng.normal()).collect();
        Self::new(DenseMatrix::new(d_f, n_f, data)?)
    }

    pub fn d_f(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn n_f(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embeddings(&self) -> &DenseMatrix {
        &self.embeddings
    }

    pub fn filler(&self, j: usize) -> DenseVector {
        self.embeddings.column(j)
    }

    /// Index of the nearest filler in Euclidean distance; ties go to the
    /// lowest index.
    pub fn nearest(&self, v: &DenseVector) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for j in 0..self.n_f() {
            let d: f64 = (0..self.d_f())
                .map(|a| {
                    let e = v[a] - self.embeddings[(a, j)];
                    e * e
                })
                .sum();
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    }
}

/// Matching function `m`: role `i` (0-based) is bound to filler `m[i]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct BindingSet(Vec<usize>);

impl BindingSet {
    pub fn new(matching: Vec<usize>) -> Self {
        Self(matching)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn filler_of(&self, role: usize) -> usize {
        self.0[role]
    }

    pub fn validate(&self, n_r: usize, n_f: usize) -> Result<()> {
        if self.0.len() != n_r {
            return Err(invalid("binding set length differs from number of roles"));
        }
        if self.0.iter().any(|&j| j >= n_f) {
            return Err(invalid("filler index out of range"));
        }
        Ok(())
    }

    /// Copy with role `i` rebound to `filler`.
    pub fn with(&self, i: usize, filler: usize) -> BindingSet {
        let mut m = self.0.clone();
        m[i] = filler;
        BindingSet(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplicitTpr {
    pub vector: DenseVector,
    pub matching: BindingSet,
}

/// `Σ_i ξ_F(f_m(i)) ⊗ ξ_R(r_i)`, accumulated in role order.
pub fn compose(roles: &RoleSpace, fillers: &FillerCodebook, m: &BindingSet) -> Result<ExplicitTpr> {
    m.validate(roles.n_r(), fillers.n_f())?;
    let (d_f, d_r) = (fillers.d_f(), roles.d_r());
    let mut out = DenseVector::zeros(d_f * d_r);
    let psi = out.as_mut_slice();
    for (i, &j) in m.as_slice().iter().enumerate() {
        for c in 0..d_r {
            let r = roles.embeddings()[(c, i)];
            for a in 0..d_f {
                psi[c * d_f + a] += fillers.embeddings()[(a, j)] * r;
            }
        }
    }
    Ok(ExplicitTpr {
        vector: out,
        matching: m.clone(),
    })
}

/// Soft filler for role `i`: `Ψ u_i` where `Ψ` is `z` reshaped to `d_f x d_r`.
pub fn unbind(roles: &RoleSpace, z: &DenseVector, i: usize) -> Result<DenseVector> {
    if i >= roles.n_r() {
        return Err(invalid("role index out of range"));
    }
    let d_r = roles.d_r();
    if z.is_empty() || !z.len().is_multiple_of(d_r) {
        return Err(invalid("representation length is not a multiple of d_r"));
    }
    let d_f = z.len() / d_r;
    let mut f = DenseVector::zeros(d_f);
    for c in 0..d_r {
        let u = roles.unbinders()[(c, i)];
        for a in 0..d_f {
            f[a] += z[c * d_f + a] * u;
        }
    }
    Ok(f)
}

/// Swap the fillers bound to role `i` between two binding sets and compose
/// both results: `(ψ_s(x), ψ_s(x'))`.
pub fn swap_tprs(
    roles: &RoleSpace,
    fillers: &FillerCodebook,
    m: &BindingSet,
    m_prime: &BindingSet,
    i: usize,
) -> Result<(ExplicitTpr, ExplicitTpr)> {
    if i >= roles.n_r() {
        return Err(invalid("role index out of range"));
    }
    m.validate(roles.n_r(), fillers.n_f())?;
    m_prime.validate(roles.n_r(), fillers.n_f())?;
    let swapped = m.with(i, m_prime.filler_of(i));
    let swapped_prime = m_prime.with(i, m.filler_of(i));
    Ok((
        compose(roles, fillers, &swapped)?,
        compose(roles, fillers, &swapped_prime)?,
    ))
}

/// With identity roles a TPR is the concatenation of its fillers; returns
/// those `n_r` contiguous blocks.
pub fn is_degenerate_concat(roles: &RoleSpace, t: &ExplicitTpr) -> (bool, Option<Vec<DenseVector>>) {
    if roles.mode() != RoleMode::Identity {
        return (false, None);
    }
    let n_r = roles.n_r();
    let d_f = t.vector.len() / n_r;
    let blocks = t
        .vector
        .as_slice()
        .chunks(d_f)
        .map(|c| DenseVector::from_slice(c).expect("blocks are non-empty and finite"))
        .collect();
    (true, Some(blocks))
}
