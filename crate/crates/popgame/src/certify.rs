//! Stability certification: pointwise, convex-hull, conic-hull, and
//! box/S-procedure matrix conditions, plus a max-eigenvalue feasibility
//! solver for the population weights and S-procedure multipliers.
//!
//! All `<= 0 on TX` conditions are evaluated on the tangent space directly:
//! matrices are restricted through an orthonormal tangent basis, which
//! deflates the per-population ones kernel so strict margins are meaningful.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::games::{BoxFactor, Game, JacobianEnvelope};
use crate::geometry::{
    tangent_basis, PopulationStructure, SupplyRate,
};
use crate::linalg::{lambda_max, symmetrize, top_eigenspace};
use crate::sampling;

/// Semidefinite slack for conditions whose spectrum legitimately touches
/// zero (cone generators scale, so strict margins do not apply).
pub const SEMIDEFINITE_SLACK: f64 = 1e-10;

/// Default strict margin for box/S-procedure certificates.
pub const DEFAULT_MARGIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Certified,
    Refuted,
    Inconclusive,
}

/// A concrete direction (and optionally a state or envelope member) whose
/// quadratic form is positive, disproving the checked condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Witness {
    pub zeta: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub member: Option<usize>,
    pub value: f64,
}

/// Outcome of a certification run. Certificates are self-verifying: the
/// verdict is recomputed from the stored multipliers by direct eigenvalue
/// checks before being issued.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub verdict: Verdict,
    pub weights: Vec<f64>,
    pub omegas: Vec<f64>,
    pub lambda_max: f64,
    pub margin: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

impl Certificate {
    fn refuted(witness: Witness, margin: f64, seed: u64) -> Self {
        Self {
            verdict: Verdict::Refuted,
            weights: vec![],
            omegas: vec![],
            lambda_max: witness.value,
            margin,
            seed,
            witness: Some(witness),
        }
    }
}

/// Supply-rate choice for a certification request: a fixed matrix, or the
/// weighted delta-passive template with the population weights unknown.
#[derive(Debug, Clone)]
pub enum SupplyTemplate {
    Fixed(SupplyRate),
    WeightedDeltaPassive,
}

#[derive(Debug, Clone)]
pub struct SolverBudget {
    pub restarts: usize,
    pub iterations: usize,
    pub theta_min: f64,
    pub theta_max: f64,
    pub seed: u64,
}

impl Default for SolverBudget {
    fn default() -> Self {
        Self {
            restarts: 5,
            iterations: 2000,
            theta_min: 1e-9,
            theta_max: 1e3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CertificateRequest {
    pub template: SupplyTemplate,
    pub margin: f64,
    pub budget: SolverBudget,
}

impl CertificateRequest {
    pub fn fixed(supply: SupplyRate) -> Self {
        Self {
            template: SupplyTemplate::Fixed(supply),
            margin: DEFAULT_MARGIN,
            budget: SolverBudget::default(),
        }
    }

    pub fn weighted() -> Self {
        Self {
            template: SupplyTemplate::WeightedDeltaPassive,
            margin: DEFAULT_MARGIN,
            budget: SolverBudget::default(),
        }
    }
}

/// `sym([J; I]^T Pi [J; I])` — the matrix whose tangent restriction must be
/// negative semidefinite pointwise.
pub fn condition_matrix(jac: &DMatrix<f64>, supply: &SupplyRate) -> DMatrix<f64> {
    let m = jac.transpose() * supply.pi11() * jac
        + jac.transpose() * supply.pi12()
        + supply.pi21() * jac
        + supply.pi22();
    symmetrize(&m)
}

fn require_zero_pi11(supply: &SupplyRate) -> Result<(), Error> {
    if supply.pi11().amax() != 0.0 {
        return Err(Error::InvalidParameter(
            "envelope conditions require Pi11 = 0".into(),
        ));
    }
    Ok(())
}

/// Sampled pointwise check of the incremental condition. Not a proof: it
/// can only refute (by producing a witness) or fail to refute.
#[derive(Debug, Clone)]
pub struct PointwiseReport {
    pub samples: usize,
    pub worst_lambda: f64,
    pub witness: Option<Witness>,
}

impl PointwiseReport {
    pub fn passed(&self) -> bool {
        self.worst_lambda <= DISSIP_POINTWISE_SLACK
    }
}

pub const DISSIP_POINTWISE_SLACK: f64 = 1e-8;

pub fn check_pointwise(
    game: &dyn Game,
    supply: &SupplyRate,
    samples: usize,
    seed: u64,
) -> Result<PointwiseReport, Error> {
    let structure = game.structure();
    let basis = tangent_basis(structure);
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for k in 0..samples {
        let mut rng = sampling::sample_rng(seed, k as u64);
        let x = sampling::sample_simplex(structure, &mut rng);
        let m = condition_matrix(&game.jacobian(&x)?, supply);
        let restricted = basis.transpose() * &m * &basis;
        if restricted.nrows() == 0 {
            worst = worst.max(0.0);
            continue;
        }
        let (vals, vecs) = crate::linalg::sym_eig(&restricted)?;
        let lmax = vals[vals.len() - 1];
        if lmax > worst {
            worst = lmax;
            let zeta = &basis * vecs.column(vals.len() - 1);
            witness = Some(Witness {
                zeta: zeta.iter().cloned().collect(),
                state: Some(x.iter().cloned().collect()),
                member: None,
                value: lmax,
            });
        }
    }
    if worst <= DISSIP_POINTWISE_SLACK {
        witness = None;
    }
    Ok(PointwiseReport {
        samples,
        worst_lambda: worst,
        witness,
    })
}

fn restricted_eig_witness(
    m: &DMatrix<f64>,
    basis: &DMatrix<f64>,
) -> Result<(f64, DVector<f64>), Error> {
    let restricted = basis.transpose() * symmetrize(m) * basis;
    if restricted.nrows() == 0 {
        return Ok((0.0, DVector::zeros(basis.nrows())));
    }
    let (vals, vecs) = crate::linalg::sym_eig(&restricted)?;
    let lmax = vals[vals.len() - 1];
    Ok((lmax, basis * vecs.column(vals.len() - 1)))
}

/// Convex-hull test: every vertex condition matrix must be NSD on the
/// tangent space (strictly below `-margin` when a margin is requested).
pub fn check_convhull(
    supply: &SupplyRate,
    vertices: &[DMatrix<f64>],
    structure: &PopulationStructure,
    margin: f64,
) -> Result<Certificate, Error> {
    require_zero_pi11(supply)?;
    let basis = tangent_basis(structure);
    let mut worst = f64::NEG_INFINITY;
    for (i, a) in vertices.iter().enumerate() {
        let m = condition_matrix(a, supply);
        let (lmax, zeta) = restricted_eig_witness(&m, &basis)?;
        worst = worst.max(lmax);
        if lmax > -margin + SEMIDEFINITE_SLACK {
            return Ok(Certificate::refuted(
                Witness {
                    zeta: zeta.iter().cloned().collect(),
                    state: None,
                    member: Some(i),
                    value: lmax,
                },
                margin,
                0,
            ));
        }
    }
    Ok(Certificate {
        verdict: Verdict::Certified,
        weights: vec![],
        omegas: vec![],
        lambda_max: worst,
        margin,
        seed: 0,
        witness: None,
    })
}

/// Conic-hull test: `P Pi22 P <= 0` and
/// `P (Pi12^T B_i + B_i^T Pi12) P <= 0` per generator, with semidefinite
/// tolerance (generators scale, so strict margins are meaningless here).
pub fn check_cone(
    supply: &SupplyRate,
    generators: &[DMatrix<f64>],
    structure: &PopulationStructure,
) -> Result<Certificate, Error> {
    require_zero_pi11(supply)?;
    let basis = tangent_basis(structure);
    let (lmax22, zeta22) = restricted_eig_witness(&supply.pi22(), &basis)?;
    let mut worst = lmax22;
    if lmax22 > SEMIDEFINITE_SLACK {
        return Ok(Certificate::refuted(
            Witness {
                zeta: zeta22.iter().cloned().collect(),
                state: None,
                member: None,
                value: lmax22,
            },
            0.0,
            0,
        ));
    }
    let pi12 = supply.pi12();
    for (i, b) in generators.iter().enumerate() {
        let m = pi12.transpose() * b + b.transpose() * &pi12;
        let (lmax, zeta) = restricted_eig_witness(&m, &basis)?;
        worst = worst.max(lmax);
        if lmax > SEMIDEFINITE_SLACK {
            return Ok(Certificate::refuted(
                Witness {
                    zeta: zeta.iter().cloned().collect(),
                    state: None,
                    member: Some(i),
                    value: lmax,
                },
                0.0,
                0,
            ));
        }
    }
    Ok(Certificate {
        verdict: Verdict::Certified,
        weights: vec![],
        omegas: vec![],
        lambda_max: worst,
        margin: 0.0,
        seed: 0,
        witness: None,
    })
}

fn check_box_factors(factors: &[BoxFactor], n: usize) -> Result<usize, Error> {
    let mut total = 0;
    for f in factors {
        if f.left.nrows() != n || f.right.nrows() != n || f.left.ncols() != f.right.ncols() {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: f.left.nrows(),
            });
        }
        total += f.rank();
    }
    Ok(total)
}

/// Assembles the S-procedure block matrix of size `n + sum(rank_i)`:
///
/// ```text
/// [ P (Pi12^T G0 + G0^T Pi12 + Pi22) P    P (Pi12^T C + D Omega) ]
/// [ (C^T Pi12 + Omega D^T) P              -2 Omega               ]
/// ```
pub fn assemble_scheck(
    supply: &SupplyRate,
    base: &DMatrix<f64>,
    factors: &[BoxFactor],
    structure: &PopulationStructure,
    omega: &[f64],
) -> Result<DMatrix<f64>, Error> {
    let n = structure.dim();
    if base.nrows() != n || base.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: base.nrows() });
    }
    if omega.len() != factors.len() {
        return Err(Error::DimensionMismatch {
            expected: factors.len(),
            got: omega.len(),
        });
    }
    let total_rank = check_box_factors(factors, n)?;
    let p = crate::geometry::tangent_projection(structure);
    let pi12 = supply.pi12();
    let m11 =
        &p * symmetrize(&(pi12.transpose() * base + base.transpose() * &pi12 + supply.pi22())) * &p;
    let mut m = DMatrix::zeros(n + total_rank, n + total_rank);
    m.view_mut((0, 0), (n, n)).copy_from(&m11);
    let mut col = n;
    for (i, f) in factors.iter().enumerate() {
        let rank = f.rank();
        let block = &p * (pi12.transpose() * &f.left + &f.right * omega[i]);
        m.view_mut((0, col), (n, rank)).copy_from(&block);
        m.view_mut((col, 0), (rank, n)).copy_from(&block.transpose());
        for j in 0..rank {
            m[(col + j, col + j)] = -2.0 * omega[i];
        }
        col += rank;
    }
    Ok(m)
}

/// The S-procedure matrix restricted to `TX x R^{sum(rank)}`, deflating the
/// ones kernel of `P` so strict margins apply.
pub fn scheck_deflated(
    supply: &SupplyRate,
    base: &DMatrix<f64>,
    factors: &[BoxFactor],
    structure: &PopulationStructure,
    omega: &[f64],
) -> Result<DMatrix<f64>, Error> {
    let full = assemble_scheck(supply, base, factors, structure, omega)?;
    let n = structure.dim();
    let total_rank = full.nrows() - n;
    let tb = tangent_basis(structure);
    let mut ext = DMatrix::zeros(n + total_rank, tb.ncols() + total_rank);
    ext.view_mut((0, 0), (n, tb.ncols())).copy_from(&tb);
    for j in 0..total_rank {
        ext[(n + j, tb.ncols() + j)] = 1.0;
    }
    Ok(ext.transpose() * full * ext)
}

/// Affine matrix pencil `M(theta) = base + sum theta_i terms[i]`.
#[derive(Debug, Clone)]
pub struct MatrixPencil {
    pub base: DMatrix<f64>,
    pub terms: Vec<DMatrix<f64>>,
}

impl MatrixPencil {
    /// Builds the pencil from any exactly-affine assembly function by
    /// superposition.
    pub fn from_affine<F>(dim: usize, assemble: F) -> Result<Self, Error>
    where
        F: Fn(&[f64]) -> Result<DMatrix<f64>, Error>,
    {
        let zero = vec![0.0; dim];
        let base = assemble(&zero)?;
        let mut terms = Vec::with_capacity(dim);
        for i in 0..dim {
            let mut unit = zero.clone();
            unit[i] = 1.0;
            terms.push(assemble(&unit)? - &base);
        }
        Ok(Self { base, terms })
    }

    pub fn eval(&self, theta: &[f64]) -> DMatrix<f64> {
        let mut m = self.base.clone();
        for (t, term) in theta.iter().zip(&self.terms) {
            m += term * *t;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }
}

/// Minimizes `lambda_max(M(theta))` over `theta_i in [theta_min, theta_max]`
/// by projected subgradient with Polyak steps and random restarts; for three
/// or fewer unknowns a logarithmic grid refines the answer. Deterministic
/// given the budget seed.
pub fn feasibility_solve(
    pencil: &MatrixPencil,
    budget: &SolverBudget,
) -> Result<(Vec<f64>, f64), Error> {
    let d = pencil.dim();
    if d == 0 {
        return Ok((vec![], lambda_max(&pencil.base)?));
    }
    let clamp = |v: f64| v.max(budget.theta_min).min(budget.theta_max);
    let objective = |theta: &[f64]| -> Result<f64, Error> { lambda_max(&pencil.eval(theta)) };

    let mut best_theta = vec![1.0_f64.max(budget.theta_min).min(budget.theta_max); d];
    let mut best = objective(&best_theta)?;

    for restart in 0..budget.restarts {
        let mut rng = sampling::sample_rng(budget.seed, 0xC0FFEE ^ restart as u64);
        let mut theta: Vec<f64> = (0..d)
            .map(|_| {
                use rand::Rng;
                let exp: f64 = rng.gen_range(-2.0..2.0);
                clamp(10f64.powf(exp))
            })
            .collect();
        for _ in 0..budget.iterations {
            let m = pencil.eval(&theta);
            let f = lambda_max(&m)?;
            if f < best {
                best = f;
                best_theta = theta.clone();
            }
            // subgradient: average v^T M_i v over the top eigenspace
            let space = top_eigenspace(&m, 1e-9)?;
            let cols = space.ncols() as f64;
            let grad: Vec<f64> = pencil
                .terms
                .iter()
                .map(|mi| {
                    (0..space.ncols())
                        .map(|c| {
                            let v = space.column(c);
                            (v.transpose() * mi * v)[(0, 0)]
                        })
                        .sum::<f64>()
                        / cols
                })
                .collect();
            let norm2: f64 = grad.iter().map(|g| g * g).sum();
            if norm2 < 1e-24 {
                break;
            }
            let target = best - 1e-3;
            let step = (f - target) / norm2;
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t = clamp(*t - step * g);
            }
        }
    }

    // grid refinement for small pencils
    if d <= 3 {
        let points: Vec<f64> = (0..61)
            .map(|k| clamp(10f64.powf(-3.0 + k as f64 * 0.1)))
            .collect();
        let mut idx = vec![0usize; d];
        loop {
            let theta: Vec<f64> = idx.iter().map(|&i| points[i]).collect();
            let f = objective(&theta)?;
            if f < best {
                best = f;
                best_theta = theta;
            }
            let mut carry = 0;
            loop {
                idx[carry] += 1;
                if idx[carry] < points.len() {
                    break;
                }
                idx[carry] = 0;
                carry += 1;
                if carry == d {
                    break;
                }
            }
            if carry == d {
                break;
            }
        }
    }
    Ok((best_theta, best))
}

/// Evaluates every condition matrix of an envelope at explicit multipliers.
/// This is the re-verification path: it goes through the plain eigenvalue
/// checks and ignores any solver state.
pub fn evaluate_multipliers(
    envelope: &JacobianEnvelope,
    structure: &PopulationStructure,
    supply: &SupplyRate,
    omegas: &[f64],
) -> Result<f64, Error> {
    let basis = tangent_basis(structure);
    let mut worst = f64::NEG_INFINITY;
    match envelope {
        JacobianEnvelope::ConvHull(vertices) => {
            for a in vertices {
                let (l, _) = restricted_eig_witness(&condition_matrix(a, supply), &basis)?;
                worst = worst.max(l);
            }
        }
        JacobianEnvelope::Cone(generators) => {
            let (l22, _) = restricted_eig_witness(&supply.pi22(), &basis)?;
            worst = worst.max(l22);
            let pi12 = supply.pi12();
            for b in generators {
                let m = pi12.transpose() * b + b.transpose() * &pi12;
                let (l, _) = restricted_eig_witness(&m, &basis)?;
                worst = worst.max(l);
            }
        }
        JacobianEnvelope::Box { base, factors } => {
            let m = scheck_deflated(supply, base, factors, structure, omegas)?;
            worst = worst.max(lambda_max(&m)?);
        }
        JacobianEnvelope::Sum { vertices, generators } => {
            let hull = evaluate_multipliers(
                &JacobianEnvelope::ConvHull(vertices.clone()),
                structure,
                supply,
                &[],
            )?;
            let cone = evaluate_multipliers(
                &JacobianEnvelope::Cone(generators.clone()),
                structure,
                supply,
                &[],
            )?;
            worst = hull.max(cone);
        }
    }
    Ok(worst)
}

fn box_dims(envelope: &JacobianEnvelope) -> usize {
    match envelope {
        JacobianEnvelope::Box { factors, .. } => factors.len(),
        _ => 0,
    }
}

/// Pass/fail threshold for an envelope given its margin semantics: cone and
/// sum envelopes are judged at semidefinite tolerance, hull and box at the
/// strict margin.
fn threshold(envelope: &JacobianEnvelope, margin: f64) -> f64 {
    match envelope {
        JacobianEnvelope::Cone(_) | JacobianEnvelope::Sum { .. } => SEMIDEFINITE_SLACK,
        JacobianEnvelope::ConvHull(_) | JacobianEnvelope::Box { .. } => {
            -margin + SEMIDEFINITE_SLACK
        }
    }
}

/// Searches for population weights (and S-procedure multipliers for box
/// envelopes) certifying the envelope against the weighted delta-passive
/// supply rate. On success the weights are normalized to max 1 and the
/// certificate is re-verified directly.
pub fn certify_weighted_contraction(
    envelope: &JacobianEnvelope,
    structure: &PopulationStructure,
    margin: f64,
    budget: &SolverBudget,
) -> Result<Certificate, Error> {
    let rho = structure.num_populations();
    let d_box = box_dims(envelope);
    let dim = rho + d_box;
    let weight_floor = budget.theta_min.max(1e-6);

    let pencil = MatrixPencil::from_affine(dim, |theta| {
        // weights occupy the first rho slots; keep the assembly affine by
        // evaluating at raw theta (weight positivity is enforced by bounds)
        let weights = &theta[..rho];
        let omegas = &theta[rho..];
        assemble_weighted_conditions(envelope, structure, weights, omegas)
    })?;

    let mut solver_budget = budget.clone();
    solver_budget.theta_min = weight_floor;
    let (theta, _) = feasibility_solve(&pencil, &solver_budget)?;

    // normalize so the largest weight is 1 (the pencil is homogeneous)
    let mut theta = theta;
    let wmax = theta[..rho].iter().cloned().fold(0.0_f64, f64::max);
    if wmax > 0.0 {
        for t in theta.iter_mut() {
            *t /= wmax;
        }
    }
    let weights: Vec<f64> = theta[..rho].to_vec();
    let omegas: Vec<f64> = theta[rho..].to_vec();

    // independent re-verification at the normalized multipliers
    let supply = SupplyRate::weighted(structure, &weights)?;
    let achieved = evaluate_multipliers(envelope, structure, &supply, &omegas)?;
    let ok = achieved <= threshold(envelope, margin)
        && weights.iter().all(|&w| w > 0.0)
        && omegas.iter().all(|&o| o > 0.0);
    Ok(Certificate {
        verdict: if ok { Verdict::Certified } else { Verdict::Inconclusive },
        weights,
        omegas,
        lambda_max: achieved,
        margin,
        seed: budget.seed,
        witness: None,
    })
}

/// Block-diagonal stack of every envelope condition matrix (restricted to
/// the tangent space) as an affine function of `(weights, omegas)`.
fn assemble_weighted_conditions(
    envelope: &JacobianEnvelope,
    structure: &PopulationStructure,
    weights: &[f64],
    omegas: &[f64],
) -> Result<DMatrix<f64>, Error> {
    // raw weights may be zero during pencil construction; bypass the
    // positivity check by assembling W directly
    let n = structure.dim();
    let mut w = DMatrix::zeros(n, n);
    for (r, range) in structure.blocks().enumerate() {
        for i in range {
            w[(i, i)] = weights[r];
        }
    }
    let supply = SupplyRate::from_blocks(DMatrix::zeros(n, n), &w * 0.5, DMatrix::zeros(n, n))?;
    let basis = tangent_basis(structure);
    let mut blocks: Vec<DMatrix<f64>> = Vec::new();
    match envelope {
        JacobianEnvelope::ConvHull(vertices) => {
            for a in vertices {
                let m = condition_matrix(a, &supply);
                blocks.push(basis.transpose() * m * &basis);
            }
        }
        JacobianEnvelope::Cone(generators) => {
            let pi12 = supply.pi12();
            for b in generators {
                let m = symmetrize(&(pi12.transpose() * b + b.transpose() * &pi12));
                blocks.push(basis.transpose() * m * &basis);
            }
        }
        JacobianEnvelope::Box { base, factors } => {
            blocks.push(scheck_deflated(&supply, base, factors, structure, omegas)?);
        }
        JacobianEnvelope::Sum { vertices, generators } => {
            let pi12 = supply.pi12();
            for a in vertices {
                let m = condition_matrix(a, &supply);
                blocks.push(basis.transpose() * m * &basis);
            }
            for b in generators {
                let m = symmetrize(&(pi12.transpose() * b + b.transpose() * &pi12));
                blocks.push(basis.transpose() * m * &basis);
            }
        }
    }
    Ok(block_diag(&blocks))
}

fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let size: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut m = DMatrix::zeros(size, size);
    let mut at = 0;
    for b in blocks {
        m.view_mut((at, at), (b.nrows(), b.ncols())).copy_from(b);
        at += b.nrows();
    }
    m
}

/// Certification with a fixed supply rate. Envelope checks are sufficient
/// conditions; when they fail, a pointwise sampling pass either produces a
/// genuine refutation witness or the outcome stays inconclusive.
pub fn certify_fixed(
    game: &dyn Game,
    supply: &SupplyRate,
    margin: f64,
    budget: &SolverBudget,
) -> Result<Certificate, Error> {
    let structure = game.structure();
    let envelope = game
        .envelope()
        .ok_or_else(|| Error::InvalidParameter("game exposes no Jacobian envelope".into()))?;
    let cert = match &envelope {
        JacobianEnvelope::ConvHull(vertices) => {
            check_convhull(supply, vertices, structure, margin)?
        }
        JacobianEnvelope::Cone(generators) => check_cone(supply, generators, structure)?,
        JacobianEnvelope::Box { base, factors } => {
            let pencil = MatrixPencil::from_affine(factors.len(), |omega| {
                scheck_deflated(supply, base, factors, structure, omega)
            })?;
            let (omega, _) = feasibility_solve(&pencil, budget)?;
            let achieved = scheck_deflated(supply, base, factors, structure, &omega)
                .and_then(|m| lambda_max(&m))?;
            Certificate {
                verdict: if achieved <= -margin + SEMIDEFINITE_SLACK
                    && omega.iter().all(|&o| o > 0.0)
                {
                    Verdict::Certified
                } else {
                    Verdict::Inconclusive
                },
                weights: vec![],
                omegas: omega,
                lambda_max: achieved,
                margin,
                seed: budget.seed,
                witness: None,
            }
        }
        JacobianEnvelope::Sum { vertices, generators } => {
            let hull = check_convhull(supply, vertices, structure, margin)?;
            let cone = check_cone(supply, generators, structure)?;
            if hull.verdict == Verdict::Certified && cone.verdict == Verdict::Certified {
                Certificate {
                    verdict: Verdict::Certified,
                    weights: vec![],
                    omegas: vec![],
                    lambda_max: hull.lambda_max.max(cone.lambda_max),
                    margin,
                    seed: budget.seed,
                    witness: None,
                }
            } else if hull.verdict != Verdict::Certified {
                hull
            } else {
                cone
            }
        }
    };
    if cert.verdict == Verdict::Certified {
        return Ok(cert);
    }
    // envelope conditions are only sufficient; look for a hard witness
    let pointwise = check_pointwise(game, supply, 2000, budget.seed)?;
    if let Some(witness) = pointwise.witness {
        return Ok(Certificate::refuted(witness, margin, budget.seed));
    }
    Ok(Certificate {
        verdict: Verdict::Inconclusive,
        lambda_max: cert.lambda_max,
        ..cert
    })
}

/// Sampled soundness check of an issued box certificate: random box points
/// and tangent directions must satisfy the pointwise condition. Violations
/// signal an implementation error, not a property of the game.
#[derive(Debug, Clone)]
pub struct SoundnessReport {
    pub samples: usize,
    pub violations: usize,
    pub worst_value: f64,
}

impl SoundnessReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

pub fn sproc_soundness_check(
    certificate: &Certificate,
    base: &DMatrix<f64>,
    factors: &[BoxFactor],
    structure: &PopulationStructure,
    supply: &SupplyRate,
    samples: usize,
    seed: u64,
) -> Result<SoundnessReport, Error> {
    if certificate.verdict != Verdict::Certified {
        return Err(Error::InvalidParameter(
            "soundness check applies to certified verdicts only".into(),
        ));
    }
    let mut report = SoundnessReport {
        samples,
        violations: 0,
        worst_value: f64::NEG_INFINITY,
    };
    for k in 0..samples {
        let mut rng = sampling::sample_rng(seed, k as u64);
        use rand::Rng;
        let gamma: Vec<f64> = (0..factors.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let zeta = sampling::sample_tangent(structure, 1.0, &mut rng);
        let mut jac = base.clone();
        for (g, f) in gamma.iter().zip(factors) {
            jac += f.product() * *g;
        }
        let m = condition_matrix(&jac, supply);
        let value = (zeta.transpose() * m * &zeta)[(0, 0)];
        report.worst_value = report.worst_value.max(value);
        if value > 1e-8 {
            report.violations += 1;
        }
    }
    Ok(report)
}

/// Corner matrices of a box envelope (for cross-checking the S-procedure
/// against vertex enumeration).
pub fn box_corners(base: &DMatrix<f64>, factors: &[BoxFactor]) -> Vec<DMatrix<f64>> {
    let d = factors.len();
    (0..(1usize << d))
        .map(|mask| {
            let mut m = base.clone();
            for (i, f) in factors.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    m += f.product();
                }
            }
            m
        })
        .collect()
}
