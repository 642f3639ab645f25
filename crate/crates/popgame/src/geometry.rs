//! Population structure, simplex-product geometry, and tangent-space tools.
//!
//! The social state lives on a product of scaled simplices, one per
//! population. Everything downstream (dynamics, storage functions, matrix
//! conditions) quantifies either over that product or over its tangent
//! space, so the projection and the orthonormal tangent basis built here are
//! shared by all other modules.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::linalg::{self, lambda_max};

pub const MASS_TOL: f64 = 1e-9;
pub const NONNEG_TOL: f64 = 1e-12;
pub const TANGENT_SUM_TOL: f64 = 1e-10;

/// Strategy counts and masses for a finite collection of populations.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationStructure {
    strategy_counts: Vec<usize>,
    masses: Vec<f64>,
}

impl PopulationStructure {
    pub fn new(strategy_counts: Vec<usize>, masses: Vec<f64>) -> Result<Self, Error> {
        if strategy_counts.is_empty() {
            return Err(Error::InvalidStructure("need at least one population".into()));
        }
        if strategy_counts.len() != masses.len() {
            return Err(Error::InvalidStructure(format!(
                "{} strategy counts but {} masses",
                strategy_counts.len(),
                masses.len()
            )));
        }
        if strategy_counts.iter().any(|&n| n == 0) {
            return Err(Error::InvalidStructure("every population needs a strategy".into()));
        }
        if masses.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidStructure("masses must be positive".into()));
        }
        Ok(Self { strategy_counts, masses })
    }

    /// Single population with `n` strategies and unit mass.
    pub fn single(n: usize) -> Self {
        Self::new(vec![n], vec![1.0]).unwrap()
    }

    pub fn num_populations(&self) -> usize {
        self.strategy_counts.len()
    }

    /// Total strategy count across populations.
    pub fn dim(&self) -> usize {
        self.strategy_counts.iter().sum()
    }

    pub fn strategy_counts(&self) -> &[usize] {
        &self.strategy_counts
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mass(&self, r: usize) -> f64 {
        self.masses[r]
    }

    /// Index range of population `r` within the concatenated vector.
    pub fn block(&self, r: usize) -> Range<usize> {
        let start: usize = self.strategy_counts[..r].iter().sum();
        start..start + self.strategy_counts[r]
    }

    pub fn blocks(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.num_populations()).map(|r| self.block(r))
    }

    /// Barycenter of the simplex product (mass spread uniformly).
    pub fn barycenter(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        for (r, range) in self.blocks().enumerate() {
            let share = self.masses[r] / self.strategy_counts[r] as f64;
            for i in range {
                v[i] = share;
            }
        }
        v
    }
}

/// A point on the simplex product: per-population masses per strategy.
#[derive(Debug, Clone)]
pub struct SocialState {
    pub values: DVector<f64>,
    pub structure: Arc<PopulationStructure>,
}

impl SocialState {
    pub fn new(values: DVector<f64>, structure: Arc<PopulationStructure>) -> Result<Self, Error> {
        if values.len() != structure.dim() {
            return Err(Error::DimensionMismatch {
                expected: structure.dim(),
                got: values.len(),
            });
        }
        if let Some(min) = values.iter().cloned().fold(None::<f64>, |a, v| {
            Some(a.map_or(v, |m| m.min(v)))
        }) {
            if min < -NONNEG_TOL {
                return Err(Error::InvalidState(format!("negative entry {min:.3e}")));
            }
        }
        for (r, range) in structure.blocks().enumerate() {
            let sum: f64 = values.rows(range.start, range.len()).iter().sum();
            if (sum - structure.mass(r)).abs() > MASS_TOL {
                return Err(Error::InvalidState(format!(
                    "population {r} mass {sum} != {}",
                    structure.mass(r)
                )));
            }
        }
        Ok(Self { values, structure })
    }
}

/// A direction in the tangent space: per-population blocks sum to zero.
#[derive(Debug, Clone)]
pub struct TangentVector {
    pub values: DVector<f64>,
    pub structure: Arc<PopulationStructure>,
}

impl TangentVector {
    pub fn new(values: DVector<f64>, structure: Arc<PopulationStructure>) -> Result<Self, Error> {
        if values.len() != structure.dim() {
            return Err(Error::DimensionMismatch {
                expected: structure.dim(),
                got: values.len(),
            });
        }
        for range in structure.blocks() {
            let sum: f64 = values.rows(range.start, range.len()).iter().sum();
            if sum.abs() > TANGENT_SUM_TOL {
                return Err(Error::InvalidState(format!("block sum {sum:.3e} != 0")));
            }
        }
        Ok(Self { values, structure })
    }
}

/// Payoff entries are unconstrained reals of matching length.
#[derive(Debug, Clone)]
pub struct PayoffVector {
    pub values: DVector<f64>,
    pub structure: Arc<PopulationStructure>,
}

impl PayoffVector {
    pub fn new(values: DVector<f64>, structure: Arc<PopulationStructure>) -> Result<Self, Error> {
        if values.len() != structure.dim() {
            return Err(Error::DimensionMismatch {
                expected: structure.dim(),
                got: values.len(),
            });
        }
        Ok(Self { values, structure })
    }
}

/// Block-diagonal orthogonal projection onto the tangent space: block `r` is
/// `I - (1/n^r) * ones`.
pub fn tangent_projection(structure: &PopulationStructure) -> DMatrix<f64> {
    let n = structure.dim();
    let mut p = DMatrix::zeros(n, n);
    for range in structure.blocks() {
        let nr = range.len() as f64;
        for i in range.clone() {
            for j in range.clone() {
                p[(i, j)] = if i == j { 1.0 - 1.0 / nr } else { -1.0 / nr };
            }
        }
    }
    p
}

/// Orthonormal basis of the tangent space as columns of an `n x (n - rho)`
/// matrix (Helmert construction per block). Restricting a symmetric matrix
/// as `B^T M B` deflates the known per-population ones kernel, which is what
/// strict-margin eigenvalue checks need.
pub fn tangent_basis(structure: &PopulationStructure) -> DMatrix<f64> {
    let n = structure.dim();
    let cols = n - structure.num_populations();
    let mut b = DMatrix::zeros(n, cols);
    let mut col = 0;
    for range in structure.blocks() {
        let nr = range.len();
        for k in 1..nr {
            // Helmert vector: k ones, then -k, normalized.
            let norm = ((k * k + k) as f64).sqrt();
            for (local, i) in range.clone().enumerate() {
                if local < k {
                    b[(i, col)] = 1.0 / norm;
                } else if local == k {
                    b[(i, col)] = -(k as f64) / norm;
                }
            }
            col += 1;
        }
    }
    b
}

/// Symmetric `2n x 2n` supply-rate matrix with `n x n` block views.
#[derive(Debug, Clone)]
pub struct SupplyRate {
    matrix: DMatrix<f64>,
    n: usize,
}

pub const SYMMETRY_TOL: f64 = 1e-12;

impl SupplyRate {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self, Error> {
        let dim = matrix.nrows();
        if dim != matrix.ncols() || dim % 2 != 0 {
            return Err(Error::DimensionMismatch {
                expected: matrix.ncols(),
                got: dim,
            });
        }
        let dev = (&matrix - matrix.transpose()).amax();
        if dev > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { deviation: dev });
        }
        Ok(Self { n: dim / 2, matrix })
    }

    pub fn from_blocks(
        pi11: DMatrix<f64>,
        pi12: DMatrix<f64>,
        pi22: DMatrix<f64>,
    ) -> Result<Self, Error> {
        let n = pi11.nrows();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&pi11);
        m.view_mut((0, n), (n, n)).copy_from(&pi12);
        m.view_mut((n, 0), (n, n)).copy_from(&pi12.transpose());
        m.view_mut((n, n), (n, n)).copy_from(&pi22);
        Self::new(m)
    }

    /// The delta-passive supply rate: `Pi11 = Pi22 = 0`, `Pi12 = I/2`.
    pub fn delta_passive(n: usize) -> Self {
        Self::from_blocks(
            DMatrix::zeros(n, n),
            DMatrix::identity(n, n) * 0.5,
            DMatrix::zeros(n, n),
        )
        .unwrap()
    }

    /// Composite supply rate for per-population delta-passive storage scaled
    /// by positive weights: `Pi12 = Pi21 = W/2` with
    /// `W = blockdiag(w^r I_{n^r})`.
    pub fn weighted(structure: &PopulationStructure, weights: &[f64]) -> Result<Self, Error> {
        let w = weight_matrix(structure, weights)?;
        let n = structure.dim();
        Self::from_blocks(DMatrix::zeros(n, n), w * 0.5, DMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn pi11(&self) -> DMatrix<f64> {
        self.matrix.view((0, 0), (self.n, self.n)).into_owned()
    }

    pub fn pi12(&self) -> DMatrix<f64> {
        self.matrix.view((0, self.n), (self.n, self.n)).into_owned()
    }

    pub fn pi21(&self) -> DMatrix<f64> {
        self.matrix.view((self.n, 0), (self.n, self.n)).into_owned()
    }

    pub fn pi22(&self) -> DMatrix<f64> {
        self.matrix
            .view((self.n, self.n), (self.n, self.n))
            .into_owned()
    }

    /// Quadratic form `[u; v]^T Pi [u; v]`.
    pub fn quad(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let mut uv = DVector::zeros(2 * self.n);
        uv.rows_mut(0, self.n).copy_from(u);
        uv.rows_mut(self.n, self.n).copy_from(v);
        (uv.transpose() * &self.matrix * uv)[(0, 0)]
    }
}

/// `W = blockdiag(w^r I_{n^r})` for positive per-population weights.
pub fn weight_matrix(
    structure: &PopulationStructure,
    weights: &[f64],
) -> Result<DMatrix<f64>, Error> {
    if weights.len() != structure.num_populations() {
        return Err(Error::DimensionMismatch {
            expected: structure.num_populations(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidParameter("weights must be positive".into()));
    }
    let n = structure.dim();
    let mut w = DMatrix::zeros(n, n);
    for (r, range) in structure.blocks().enumerate() {
        for i in range {
            w[(i, i)] = weights[r];
        }
    }
    Ok(w)
}

/// Result of a tangent-restricted negative-semidefiniteness check.
#[derive(Debug, Clone)]
pub struct TangentCheck {
    /// Largest eigenvalue of the matrix restricted to the tangent space
    /// (the per-population ones kernel is deflated).
    pub lambda_max: f64,
    pub pass: bool,
}

pub const NSD_SLACK: f64 = 1e-12;

/// Checks `zeta^T M zeta <= -margin` for all tangent `zeta` by restricting
/// the symmetrized matrix to an orthonormal tangent basis. `margin = 0`
/// gives the plain semidefinite test.
pub fn is_nsd_on_tangent(
    matrix: &DMatrix<f64>,
    structure: &PopulationStructure,
    margin: f64,
) -> Result<TangentCheck, Error> {
    let n = structure.dim();
    if matrix.nrows() != n || matrix.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: matrix.nrows(),
        });
    }
    let sym = linalg::symmetrize(matrix);
    let basis = tangent_basis(structure);
    let restricted = basis.transpose() * sym * basis;
    let lmax = lambda_max(&restricted)?;
    // trivial tangent space: condition holds vacuously
    let lmax = if restricted.nrows() == 0 { 0.0 } else { lmax };
    Ok(TangentCheck {
        lambda_max: lmax,
        pass: lmax <= -margin + NSD_SLACK,
    })
}
