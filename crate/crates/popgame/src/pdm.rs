//! Dynamic payoff mechanisms: the general interface, the smoothing payoff
//! dynamics for the mixed-autonomy game, and the storage pair `(Q, varsigma)`
//! built from the Legendre transform of the link-cost potential.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::Error;
use crate::games::{Game, MixedAutonomyGame};
use crate::geometry::{PopulationStructure, SupplyRate};
use crate::sampling;

/// Dynamical payoff mechanism `qdot = f(q, x)`, `p = h(q, x)` that recovers
/// a memoryless map at steady state.
pub trait Pdm: Send + Sync {
    fn structure(&self) -> &Arc<PopulationStructure>;
    fn state_dim(&self) -> usize;
    /// `f(q, x)`.
    fn rate(&self, q: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>, Error>;
    /// `h(q, x)`.
    fn output(&self, q: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>, Error>;
    /// The memoryless payoff recovered at rest points.
    fn steady_state_payoff(&self, x: &DVector<f64>) -> Result<DVector<f64>, Error>;
    /// Whether `q` lies in the forward-invariant domain of the dynamics.
    fn admissible(&self, _q: &DVector<f64>) -> bool {
        true
    }
}

type StateMapFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type PayoffMapFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// PDM assembled from user-supplied callables.
#[derive(Clone)]
pub struct GenericPdm {
    structure: Arc<PopulationStructure>,
    state_dim: usize,
    rate_fn: StateMapFn,
    output_fn: StateMapFn,
    steady_fn: PayoffMapFn,
}

impl GenericPdm {
    pub fn new(
        structure: Arc<PopulationStructure>,
        state_dim: usize,
        rate_fn: StateMapFn,
        output_fn: StateMapFn,
        steady_fn: PayoffMapFn,
    ) -> Self {
        Self {
            structure,
            state_dim,
            rate_fn,
            output_fn,
            steady_fn,
        }
    }

    /// Steady-state consistency: wherever `f` vanishes, the output must
    /// match the recovered memoryless payoff.
    pub fn check_steady_state_io(
        &self,
        q: &DVector<f64>,
        x: &DVector<f64>,
    ) -> Result<bool, Error> {
        let f = self.rate(q, x)?;
        if f.norm() >= 1e-10 {
            return Ok(true); // not a rest point, nothing to check
        }
        let h = self.output(q, x)?;
        let steady = self.steady_state_payoff(x)?;
        Ok((h - steady).norm() <= 1e-8)
    }
}

impl Pdm for GenericPdm {
    fn structure(&self) -> &Arc<PopulationStructure> {
        &self.structure
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn rate(&self, q: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        Ok((self.rate_fn)(q, x))
    }

    fn output(&self, q: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        Ok((self.output_fn)(q, x))
    }

    fn steady_state_payoff(&self, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        Ok((self.steady_fn)(x))
    }
}

/// First-order smoothing payoff dynamics for the mixed-autonomy game:
///
/// ```text
/// tau qdot = -q + Phi(z),   p = -[R; R] q,   z = [mu R^T  R^T] x
/// ```
///
/// The per-link state `q_l` lives on `[Phi_l(0), inf)`, which is forward
/// invariant for strictly increasing surjective delays.
#[derive(Clone)]
pub struct SmoothingPdm {
    game: MixedAutonomyGame,
    tau: f64,
}

pub const ADMISSIBILITY_TOL: f64 = 1e-9;

impl SmoothingPdm {
    pub fn new(game: MixedAutonomyGame, tau: f64) -> Result<Self, Error> {
        if !(tau > 0.0) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        Ok(Self { game, tau })
    }

    pub fn game(&self) -> &MixedAutonomyGame {
        &self.game
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Lower bounds `alpha_l = Phi_l(0)` of the admissible domain.
    pub fn domain_floor(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.game.num_links(),
            self.game.delays().iter().map(|d| d.min_delay()),
        )
    }

    fn check_admissible(&self, q: &DVector<f64>) -> Result<(), Error> {
        if q.len() != self.game.num_links() {
            return Err(Error::DimensionMismatch {
                expected: self.game.num_links(),
                got: q.len(),
            });
        }
        let floor = self.domain_floor();
        for l in 0..q.len() {
            if q[l] < floor[l] - ADMISSIBILITY_TOL {
                return Err(Error::InadmissibleState(format!(
                    "q[{l}] = {} below floor {}",
                    q[l], floor[l]
                )));
            }
        }
        Ok(())
    }

    /// Link delays `Phi(z)` at the flows induced by `x`.
    pub fn delays_at(&self, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        let z = self.game.link_flows(x)?;
        Ok(DVector::from_iterator(
            z.len(),
            z.iter().zip(self.game.delays()).map(|(&zl, d)| d.value(zl)),
        ))
    }

    /// Consistent initial state `q(0) = Phi(z(x))`.
    pub fn consistent_state(&self, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        self.delays_at(x)
    }

    /// Legendre transform of the link-cost potential at `q`: the conjugate
    /// value and the per-link minimizer `zbar` solving `Phi_l(zbar_l) = q_l`.
    pub fn legendre_transform(&self, q: &DVector<f64>) -> Result<(f64, DVector<f64>), Error> {
        self.check_admissible(q)?;
        let l = q.len();
        let mut zbar = DVector::zeros(l);
        let mut value = 0.0;
        for (i, d) in self.game.delays().iter().enumerate() {
            let z = d.invert(q[i])?;
            zbar[i] = z.max(0.0);
            value += d.potential(zbar[i]) - q[i] * zbar[i];
        }
        Ok((value, zbar))
    }

    /// Storage `Q = (phi(z) - q^T z - phi*(q)) / tau`.
    pub fn storage(&self, q: &DVector<f64>, x: &DVector<f64>) -> Result<f64, Error> {
        let (conjugate, _) = self.legendre_transform(q)?;
        let z = self.game.link_flows(x)?;
        let potential: f64 = z
            .iter()
            .zip(self.game.delays())
            .map(|(&zl, d)| d.potential(zl))
            .sum();
        Ok((potential - q.dot(&z) - conjugate) / self.tau)
    }

    /// Dissipation rate `varsigma = (z - zbar)^T (Phi(z) - Phi(zbar)) / tau^2`.
    pub fn varsigma(&self, q: &DVector<f64>, x: &DVector<f64>) -> Result<f64, Error> {
        let (_, zbar) = self.legendre_transform(q)?;
        let z = self.game.link_flows(x)?;
        let mut acc = 0.0;
        for (l, d) in self.game.delays().iter().enumerate() {
            acc += (z[l] - zbar[l]) * (d.value(z[l]) - d.value(zbar[l]));
        }
        Ok(acc / (self.tau * self.tau))
    }

    /// Analytic storage gradient in `q`: `(zbar - z) / tau`.
    pub fn storage_grad_q(
        &self,
        q: &DVector<f64>,
        x: &DVector<f64>,
    ) -> Result<DVector<f64>, Error> {
        let (_, zbar) = self.legendre_transform(q)?;
        let z = self.game.link_flows(x)?;
        Ok((zbar - z) / self.tau)
    }

    /// The coupling `[mu R^T  R^T]` applied to a social-state direction.
    pub fn flow_direction(&self, zeta: &DVector<f64>) -> Result<DVector<f64>, Error> {
        self.game.link_flows(zeta)
    }

    /// Samples the PDM dissipativity inequality and the proof identity
    /// `dQ/dx . zeta + psi^T Pi psi = 0` against the weighted supply rate.
    pub fn verify_dissipativity(
        &self,
        supply: &SupplyRate,
        samples: usize,
        seed: u64,
    ) -> Result<PdmDissipativityReport, Error> {
        let structure = self.game.structure().clone();
        let n = structure.dim();
        if supply.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: supply.dim() });
        }
        let floor = self.domain_floor();
        let mut report = PdmDissipativityReport::default();
        report.samples = samples;
        for k in 0..samples {
            let mut rng = sampling::sample_rng(seed, k as u64);
            let x = sampling::sample_simplex(&structure, &mut rng);
            let zeta = sampling::sample_tangent(&structure, 1.0, &mut rng);
            // admissible q: the delay at a random nonnegative flow
            let q = DVector::from_iterator(
                floor.len(),
                self.game.delays().iter().map(|d| {
                    let flow = sampling::standard_normal(&mut rng).abs();
                    d.value(flow)
                }),
            );
            let f = self.rate_raw(&q, &x)?;
            let grad_q = self.storage_grad_q(&q, &x)?;
            let dq_dx_zeta = f.dot(&self.flow_direction(&zeta)?);
            let varsigma = self.varsigma(&q, &x)?;

            // psi = [dh/dq f + dh/dx zeta; zeta] with h = -[R; R] q
            let u = -self.game.stack_routes(&f);
            let psi_quad = supply.quad(&u, &zeta);

            let lhs = grad_q.dot(&f) + dq_dx_zeta;
            let rhs = -varsigma - psi_quad;
            report.record_slack(rhs - lhs);
            report.record_identity((dq_dx_zeta + psi_quad).abs());

            // independent route: finite-difference dQ/dq
            let mut fd_grad = DVector::zeros(q.len());
            let base = self.storage(&q, &x)?;
            let h = 1e-6 * base.abs().max(1.0);
            for l in 0..q.len() {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[l] += h;
                qm[l] = (qm[l] - h).max(floor[l]);
                let denom = qp[l] - qm[l];
                fd_grad[l] = (self.storage(&qp, &x)? - self.storage(&qm, &x)?) / denom;
            }
            let lhs_fd = fd_grad.dot(&f) + dq_dx_zeta;
            report.record_fd_slack(rhs - lhs_fd);
        }
        Ok(report)
    }

    // rate without the admissibility clamp repeated (already validated)
    fn rate_raw(&self, q: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        let delays = self.delays_at(x)?;
        Ok((delays - q) / self.tau)
    }
}

impl Pdm for SmoothingPdm {
    fn structure(&self) -> &Arc<PopulationStructure> {
        self.game.structure()
    }

    fn state_dim(&self) -> usize {
        self.game.num_links()
    }

    fn rate(&self, q: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        self.check_admissible(q)?;
        self.rate_raw(q, x)
    }

    fn output(&self, q: &DVector<f64>, _x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        if q.len() != self.game.num_links() {
            return Err(Error::DimensionMismatch {
                expected: self.game.num_links(),
                got: q.len(),
            });
        }
        Ok(-self.game.stack_routes(q))
    }

    fn steady_state_payoff(&self, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        self.game.payoff(x)
    }

    fn admissible(&self, q: &DVector<f64>) -> bool {
        self.check_admissible(q).is_ok()
    }
}

/// Sampled verification report of the PDM supply-rate inequality.
#[derive(Debug, Clone)]
pub struct PdmDissipativityReport {
    pub samples: usize,
    pub violations: usize,
    /// Worst slack of the inequality with the analytic storage gradient.
    pub worst_slack: f64,
    /// Worst slack with the finite-difference storage gradient.
    pub worst_fd_slack: f64,
    /// Largest deviation of the proof identity `dQ/dx . zeta = -psi^T Pi psi`.
    pub worst_identity_error: f64,
}

pub const PDM_SLACK: f64 = 1e-8;
pub const PDM_FD_SLACK: f64 = 1e-6;

impl Default for PdmDissipativityReport {
    fn default() -> Self {
        Self {
            samples: 0,
            violations: 0,
            worst_slack: f64::INFINITY,
            worst_fd_slack: f64::INFINITY,
            worst_identity_error: 0.0,
        }
    }
}

impl PdmDissipativityReport {
    fn record_slack(&mut self, slack: f64) {
        self.worst_slack = self.worst_slack.min(slack);
        if slack < -PDM_SLACK {
            self.violations += 1;
        }
    }

    fn record_fd_slack(&mut self, slack: f64) {
        self.worst_fd_slack = self.worst_fd_slack.min(slack);
        if slack < -PDM_FD_SLACK {
            self.violations += 1;
        }
    }

    fn record_identity(&mut self, err: f64) {
        self.worst_identity_error = self.worst_identity_error.max(err);
        if err > 1e-8 {
            self.violations += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use crate::games::DelayFn;

    fn single_link_pdm(tau: f64) -> SmoothingPdm {
        // one link, one route per class; masses chosen so z = 1 at
        // x = (1, 0.5): z = 0.5 * 1 + 0.5 = 1.
        let game = MixedAutonomyGame::new(
            DMatrix::from_element(1, 1, 1.0),
            vec![DelayFn::Affine { a: 1.0, alpha: 1.0 }],
            0.5,
            vec![crate::games::OdPair {
                routes: 1,
                mass_aut: 1.0,
                mass_reg: 0.5,
            }],
        )
        .unwrap();
        SmoothingPdm::new(game, tau).unwrap()
    }

    fn two_link_pdm(tau: f64) -> SmoothingPdm {
        let game = MixedAutonomyGame::parallel_links(
            vec![
                DelayFn::Affine { a: 1.0, alpha: 1.0 },
                DelayFn::Affine { a: 1.0, alpha: 1.0 },
            ],
            0.5,
            1.0,
            1.0,
        )
        .unwrap();
        SmoothingPdm::new(game, tau).unwrap()
    }

    #[test]
    fn rate_hand_case_and_scaling() {
        let pdm = single_link_pdm(2.0);
        let x = DVector::from_vec(vec![1.0, 0.5]);
        let q = DVector::from_vec(vec![3.0]);
        let f = pdm.rate(&q, &x).unwrap();
        assert!((f[0] + 0.5).abs() < 1e-15);
        // doubling tau halves the rate
        let pdm4 = single_link_pdm(4.0);
        let f4 = pdm4.rate(&q, &x).unwrap();
        assert!((f4[0] + 0.25).abs() < 1e-15);
        // rest point
        let q = pdm.consistent_state(&x).unwrap();
        assert!(pdm.rate(&q, &x).unwrap().amax() < 1e-15);
        // inadmissible
        assert!(pdm.rate(&DVector::from_vec(vec![0.5]), &x).is_err());
    }

    #[test]
    fn output_hand_cases() {
        let pdm = two_link_pdm(1.0);
        let q = DVector::zeros(2);
        let x = pdm.structure().barycenter();
        assert!(pdm.output(&q, &x).unwrap().amax() < 1e-15);
        let q = DVector::from_vec(vec![1.0, 2.0]);
        let p = pdm.output(&q, &x).unwrap();
        let expected = DVector::from_vec(vec![-1.0, -2.0, -1.0, -2.0]);
        assert!((p - expected).amax() < 1e-15);
        // ssIO at a rest point
        let q = pdm.consistent_state(&x).unwrap();
        assert!(pdm.rate(&q, &x).unwrap().amax() < 1e-14);
        let h = pdm.output(&q, &x).unwrap();
        let steady = pdm.steady_state_payoff(&x).unwrap();
        assert!((h - steady).amax() <= 1e-8);
    }

    #[test]
    fn legendre_affine_closed_form() {
        let pdm = single_link_pdm(1.0);
        // Phi(z) = z + 1: zbar = q - 1, phi*(q) = -(q - 1)^2 / 2
        let (val, zbar) = pdm.legendre_transform(&DVector::from_vec(vec![3.0])).unwrap();
        assert!((zbar[0] - 2.0).abs() < 1e-12);
        assert!((val + 2.0).abs() < 1e-12);
        // boundary
        let (val, zbar) = pdm.legendre_transform(&DVector::from_vec(vec![1.0])).unwrap();
        assert!(zbar[0].abs() < 1e-12 && val.abs() < 1e-12);
        // below the floor
        assert!(pdm.legendre_transform(&DVector::from_vec(vec![0.5])).is_err());
    }

    #[test]
    fn legendre_bpr_inverse_residual() {
        let game = MixedAutonomyGame::new(
            DMatrix::from_element(1, 1, 1.0),
            vec![DelayFn::Bpr { alpha: 1.0, beta: 0.15, kappa: 1.0 }],
            0.5,
            vec![crate::games::OdPair { routes: 1, mass_aut: 1.0, mass_reg: 0.5 }],
        )
        .unwrap();
        let pdm = SmoothingPdm::new(game, 1.0).unwrap();
        for qv in [1.0, 1.2, 3.7, 10.0] {
            let q = DVector::from_vec(vec![qv]);
            let (_, zbar) = pdm.legendre_transform(&q).unwrap();
            let residual = (pdm.game().delays()[0].value(zbar[0]) - qv).abs();
            assert!(residual <= 1e-10, "residual {residual}");
        }
    }

    #[test]
    fn storage_hand_case_and_tau_scaling() {
        let pdm = single_link_pdm(1.0);
        let x = DVector::from_vec(vec![1.0, 0.5]); // z = 1
        let q = DVector::from_vec(vec![3.0]);
        // phi(1) = 1.5, q z = 3, phi*(3) = -2 -> Q = 0.5
        let storage = pdm.storage(&q, &x).unwrap();
        assert!((storage - 0.5).abs() < 1e-12);
        let pdm2 = single_link_pdm(2.0);
        assert!((pdm2.storage(&q, &x).unwrap() - 0.25).abs() < 1e-12);
        // rest point: Q = 0
        let q0 = pdm.consistent_state(&x).unwrap();
        assert!(pdm.storage(&q0, &x).unwrap().abs() < 1e-12);
    }

    #[test]
    fn varsigma_hand_case() {
        let pdm = single_link_pdm(1.0);
        let x = DVector::from_vec(vec![1.0, 0.5]); // z = 1
        let q = DVector::from_vec(vec![3.0]); // zbar = 2
        let v = pdm.varsigma(&q, &x).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        // vanishes at z = zbar
        let q0 = pdm.consistent_state(&x).unwrap();
        assert!(pdm.varsigma(&q0, &x).unwrap().abs() < 1e-12);
    }

    #[test]
    fn storage_positivity_and_vanishing_equivalences() {
        let pdm = two_link_pdm(1.0);
        let structure = pdm.structure().clone();
        let mut rng = sampling::sample_rng(13, 0);
        for _ in 0..2000 {
            let x = sampling::sample_simplex(&structure, &mut rng);
            let q = DVector::from_iterator(
                2,
                pdm.game()
                    .delays()
                    .iter()
                    .map(|d| d.value(sampling::standard_normal(&mut rng).abs())),
            );
            let storage = pdm.storage(&q, &x).unwrap();
            let varsigma = pdm.varsigma(&q, &x).unwrap();
            let f_norm = pdm.rate(&q, &x).unwrap().norm();
            assert!(storage >= -1e-12 && varsigma >= -1e-12);
            assert_eq!(storage <= 1e-10, f_norm <= 1e-8);
            assert_eq!(varsigma <= 1e-10, f_norm <= 1e-8);
        }
    }

    #[test]
    fn fenchel_inequality_sampled() {
        let pdm = two_link_pdm(1.0);
        let mut rng = sampling::sample_rng(14, 0);
        for _ in 0..500 {
            let z = DVector::from_fn(2, |_, _| sampling::standard_normal(&mut rng).abs() * 2.0);
            let q = DVector::from_iterator(
                2,
                pdm.game()
                    .delays()
                    .iter()
                    .map(|d| d.value(sampling::standard_normal(&mut rng).abs() * 2.0)),
            );
            let (conjugate, _) = pdm.legendre_transform(&q).unwrap();
            let lhs: f64 = z
                .iter()
                .zip(pdm.game().delays())
                .map(|(&zl, d)| d.potential(zl))
                .sum::<f64>()
                - q.dot(&z);
            assert!(lhs >= conjugate - 1e-10);
        }
    }

    #[test]
    fn storage_grad_q_matches_finite_differences() {
        let pdm = two_link_pdm(1.3);
        let structure = pdm.structure().clone();
        let mut rng = sampling::sample_rng(15, 0);
        for _ in 0..50 {
            let x = sampling::sample_simplex(&structure, &mut rng);
            let q = DVector::from_iterator(
                2,
                pdm.game()
                    .delays()
                    .iter()
                    .map(|d| d.value(0.3 + sampling::standard_normal(&mut rng).abs())),
            );
            let grad = pdm.storage_grad_q(&q, &x).unwrap();
            let h = 1e-6;
            for l in 0..2 {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[l] += h;
                qm[l] -= h;
                let fd = (pdm.storage(&qp, &x).unwrap() - pdm.storage(&qm, &x).unwrap())
                    / (2.0 * h);
                assert!((fd - grad[l]).abs() <= 1e-6, "fd {fd} vs {}", grad[l]);
            }
        }
    }

    #[test]
    fn pdm_dissipativity_sampled() {
        let pdm = two_link_pdm(1.0);
        let supply = SupplyRate::weighted(
            pdm.structure(),
            &pdm.game().canonical_weights(),
        )
        .unwrap();
        let report = pdm.verify_dissipativity(&supply, 500, 21).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.worst_identity_error <= 1e-9);
        assert!(report.worst_fd_slack >= -1e-6);
    }

    #[test]
    fn generic_pdm_steady_state_io() {
        let structure = Arc::new(PopulationStructure::single(2));
        let s2 = structure.clone();
        let pdm = GenericPdm::new(
            structure,
            2,
            Arc::new(|q: &DVector<f64>, x: &DVector<f64>| -(q.clone() + x.clone())),
            Arc::new(|q: &DVector<f64>, _: &DVector<f64>| q.clone()),
            Arc::new(|x: &DVector<f64>| -x.clone()),
        );
        let x = s2.barycenter();
        let q = -x.clone();
        assert!(pdm.rate(&q, &x).unwrap().norm() < 1e-12);
        assert!(pdm.check_steady_state_io(&q, &x).unwrap());
    }
}
