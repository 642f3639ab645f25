//! Fixed-step integration of the evolutionary dynamics, in feedback with a
//! memoryless game or a payoff dynamics model, plus Lyapunov monitoring and
//! rest-point detection.

use nalgebra::DVector;

use crate::edm::{nash_gap, IpcProtocol};
use crate::error::Error;
use crate::games::Game;
use crate::geometry::{PopulationStructure, SocialState};
use crate::pdm::{Pdm, SmoothingPdm};

pub const DEFAULT_STEP: f64 = 1e-2;
pub const DEFAULT_HORIZON: f64 = 200.0;

/// Entries this far below zero trigger step rejection.
const NEG_ENTRY_TOL: f64 = -1e-12;
/// Per-population mass drift beyond this is renormalized away.
const MASS_DRIFT_TOL: f64 = 1e-11;
const MAX_HALVINGS: u32 = 40;

/// A recorded closed-loop run. `pdm_states` is present only for runs with a
/// payoff dynamics model.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub pdm_states: Option<Vec<DVector<f64>>>,
    pub payoffs: Vec<DVector<f64>>,
    pub lyapunov: Vec<f64>,
    pub nash_gaps: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is nonempty")
    }

    pub fn final_pdm_state(&self) -> Option<&DVector<f64>> {
        self.pdm_states.as_ref().and_then(|q| q.last())
    }

    pub fn final_payoff(&self) -> &DVector<f64> {
        self.payoffs.last().expect("trajectory is nonempty")
    }

    pub fn final_nash_gap(&self) -> f64 {
        *self.nash_gaps.last().expect("trajectory is nonempty")
    }

    /// Checks the stored invariants: strictly increasing times and simplex
    /// membership of every state.
    pub fn validate(&self, structure: &PopulationStructure) -> Result<(), Error> {
        for w in self.times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidState(
                    "trajectory times must be strictly increasing".into(),
                ));
            }
        }
        for x in &self.states {
            SocialState::new(x.clone(), structure.clone().into())?;
        }
        Ok(())
    }
}

fn check_finite(v: &DVector<f64>) -> Result<(), Error> {
    if v.iter().all(|e| e.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// One classical fourth-order Runge-Kutta step.
fn rk4_step<F>(f: &F, y: &DVector<f64>, h: f64) -> Result<DVector<f64>, Error>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, Error>,
{
    let k1 = f(y)?;
    let k2 = f(&(y + &k1 * (h / 2.0)))?;
    let k3 = f(&(y + &k2 * (h / 2.0)))?;
    let k4 = f(&(y + &k3 * h))?;
    let out = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    check_finite(&out)?;
    Ok(out)
}

/// Uniform mass correction per population when it keeps all entries
/// nonnegative, clip-and-rescale otherwise.
fn renormalize(structure: &PopulationStructure, x: &mut DVector<f64>) {
    for i in 0..x.len() {
        if x[i] < 0.0 {
            x[i] = 0.0;
        }
    }
    for (r, range) in structure.blocks().enumerate() {
        let mass = structure.mass(r);
        let sum: f64 = x.rows(range.start, range.len()).iter().sum();
        if (sum - mass).abs() <= MASS_DRIFT_TOL {
            continue;
        }
        let correction = (mass - sum) / range.len() as f64;
        let uniform_ok = range.clone().all(|i| x[i] + correction >= 0.0);
        if uniform_ok {
            for i in range {
                x[i] += correction;
            }
        } else if sum > 0.0 {
            let scale = mass / sum;
            for i in range {
                x[i] *= scale;
            }
        }
    }
}

/// Advances by `h`, rejecting and halving whenever the candidate leaves the
/// admissible region according to `ok`.
fn advance<F, A>(rhs: &F, ok: &A, y: &mut DVector<f64>, h: f64) -> Result<(), Error>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, Error>,
    A: Fn(&DVector<f64>) -> bool,
{
    let mut remaining = h;
    while remaining > 1e-15 {
        let mut sub = remaining;
        let mut halvings = 0;
        loop {
            let candidate = rk4_step(rhs, y, sub)?;
            if ok(&candidate) {
                *y = candidate;
                break;
            }
            sub /= 2.0;
            halvings += 1;
            if halvings > MAX_HALVINGS {
                return Err(Error::IntegrationAborted(
                    "step rejection did not resolve after 40 halvings".into(),
                ));
            }
        }
        remaining -= sub;
    }
    Ok(())
}

fn validate_start(structure: &PopulationStructure, x0: &DVector<f64>) -> Result<(), Error> {
    SocialState::new(x0.clone(), structure.clone().into())?;
    Ok(())
}

/// Integrates the memoryless feedback loop `xdot = nu(x, F(x))`, recording
/// `V(x) = S(x, F(x))` (weighted per population when weights are supplied)
/// and the Nash gap at every step.
pub fn integrate_memoryless(
    game: &dyn Game,
    protocol: &IpcProtocol,
    x0: &DVector<f64>,
    horizon: f64,
    step: f64,
    weights: Option<&[f64]>,
) -> Result<Trajectory, Error> {
    let structure = game.structure().clone();
    validate_start(&structure, x0)?;
    if !(step > 0.0) || !horizon.is_finite() || horizon < 0.0 {
        return Err(Error::InvalidParameter(
            "step must be positive and horizon nonnegative".into(),
        ));
    }

    let rhs = |x: &DVector<f64>| -> Result<DVector<f64>, Error> {
        protocol.velocity(x, &game.payoff(x)?)
    };
    let ok = |x: &DVector<f64>| x.iter().all(|&e| e >= NEG_ENTRY_TOL && e.is_finite());

    let mut traj = Trajectory {
        times: vec![],
        states: vec![],
        pdm_states: None,
        payoffs: vec![],
        lyapunov: vec![],
        nash_gaps: vec![],
    };
    let record = |t: f64, x: &DVector<f64>, traj: &mut Trajectory| -> Result<(), Error> {
        let p = game.payoff(x)?;
        let v = match weights {
            Some(w) => protocol.weighted_storage(x, &p, w)?,
            None => protocol.storage(x, &p)?,
        };
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.nash_gaps.push(nash_gap(&structure, x, &p)?);
        traj.payoffs.push(p);
        traj.lyapunov.push(v);
        Ok(())
    };

    let mut x = x0.clone();
    let mut t = 0.0;
    record(t, &x, &mut traj)?;
    let steps = (horizon / step).round() as usize;
    for k in 0..steps {
        let h = step.min(horizon - t);
        advance(&rhs, &ok, &mut x, h)?;
        renormalize(&structure, &mut x);
        t = (k + 1) as f64 * step;
        record(t.min(horizon), &x, &mut traj)?;
    }
    Ok(traj)
}

/// Integrates the joint loop `xdot = nu(x, h(q, x))`, `qdot = f(q, x)`,
/// recording the combined Lyapunov function `V = S(x, h(q, x)) + Q(q, x)`.
pub fn integrate_closed_loop(
    pdm: &SmoothingPdm,
    protocol: &IpcProtocol,
    x0: &DVector<f64>,
    q0: &DVector<f64>,
    horizon: f64,
    step: f64,
    weights: Option<&[f64]>,
) -> Result<Trajectory, Error> {
    let structure = pdm.structure().clone();
    validate_start(&structure, x0)?;
    if !pdm.admissible(q0) {
        return Err(Error::InadmissibleState(
            "q0 lies outside the forward-invariant domain".into(),
        ));
    }
    if !(step > 0.0) || !horizon.is_finite() || horizon < 0.0 {
        return Err(Error::InvalidParameter(
            "step must be positive and horizon nonnegative".into(),
        ));
    }
    let n = structure.dim();
    let l = pdm.state_dim();
    if x0.len() != n || q0.len() != l {
        return Err(Error::DimensionMismatch {
            expected: n + l,
            got: x0.len() + q0.len(),
        });
    }

    let rhs = |y: &DVector<f64>| -> Result<DVector<f64>, Error> {
        let x = DVector::from(y.rows(0, n).clone_owned());
        let q = DVector::from(y.rows(n, l).clone_owned());
        let p = pdm.output(&q, &x)?;
        let xdot = protocol.velocity(&x, &p)?;
        let qdot = pdm.rate(&q, &x)?;
        let mut out = DVector::zeros(n + l);
        out.rows_mut(0, n).copy_from(&xdot);
        out.rows_mut(n, l).copy_from(&qdot);
        Ok(out)
    };
    let ok = |y: &DVector<f64>| -> bool {
        if !y.iter().all(|e| e.is_finite()) {
            return false;
        }
        if y.rows(0, n).iter().any(|&e| e < NEG_ENTRY_TOL) {
            return false;
        }
        pdm.admissible(&DVector::from(y.rows(n, l).clone_owned()))
    };

    let mut traj = Trajectory {
        times: vec![],
        states: vec![],
        pdm_states: Some(vec![]),
        payoffs: vec![],
        lyapunov: vec![],
        nash_gaps: vec![],
    };
    let record = |t: f64, y: &DVector<f64>, traj: &mut Trajectory| -> Result<(), Error> {
        let x = DVector::from(y.rows(0, n).clone_owned());
        let q = DVector::from(y.rows(n, l).clone_owned());
        let p = pdm.output(&q, &x)?;
        let s = match weights {
            Some(w) => protocol.weighted_storage(&x, &p, w)?,
            None => protocol.storage(&x, &p)?,
        };
        let v = s + pdm.storage(&q, &x)?;
        traj.times.push(t);
        traj.nash_gaps.push(nash_gap(&structure, &x, &p)?);
        traj.states.push(x);
        traj.pdm_states.as_mut().unwrap().push(q);
        traj.payoffs.push(p);
        traj.lyapunov.push(v);
        Ok(())
    };

    let mut y = DVector::zeros(n + l);
    y.rows_mut(0, n).copy_from(x0);
    y.rows_mut(n, l).copy_from(q0);
    let mut t = 0.0;
    record(t, &y, &mut traj)?;
    let steps = (horizon / step).round() as usize;
    for k in 0..steps {
        let h = step.min(horizon - t);
        advance(&rhs, &ok, &mut y, h)?;
        {
            let mut x = DVector::from(y.rows(0, n).clone_owned());
            renormalize(&structure, &mut x);
            y.rows_mut(0, n).copy_from(&x);
        }
        t = (k + 1) as f64 * step;
        record(t.min(horizon), &y, &mut traj)?;
    }
    Ok(traj)
}

pub const DEFAULT_MONITOR_TOL: f64 = 1e-7;

/// Lyapunov monitoring report: counts of relative increases of the stored
/// `V` sequence beyond tolerance.
#[derive(Debug, Clone)]
pub struct MonitorReport {
    pub flags: usize,
    pub max_relative_increase: f64,
}

impl MonitorReport {
    pub fn passed(&self) -> bool {
        self.flags == 0
    }
}

/// Flags every increase `V(t_{k+1}) - V(t_k) > tol * max(1, V(t_k))`.
pub fn lyapunov_monitor(trajectory: &Trajectory, tolerance: f64) -> MonitorReport {
    let mut flags = 0;
    let mut max_rel = f64::NEG_INFINITY;
    for w in trajectory.lyapunov.windows(2) {
        let scale = w[0].abs().max(1.0);
        let rel = (w[1] - w[0]) / scale;
        max_rel = max_rel.max(rel);
        if rel > tolerance {
            flags += 1;
        }
    }
    MonitorReport {
        flags,
        max_relative_increase: max_rel,
    }
}

/// Analytic-derivative spot check for memoryless runs:
/// `dV/dt = dS/dx . nu + dS/dp . (J nu) <= -sigma + 1e-6` at sampled
/// trajectory points. Returns `(points checked, flags)`.
pub fn derivative_check_memoryless(
    game: &dyn Game,
    protocol: &IpcProtocol,
    trajectory: &Trajectory,
    weights: Option<&[f64]>,
    stride: usize,
) -> Result<(usize, usize), Error> {
    let structure = game.structure();
    let rho = structure.num_populations();
    let w = match weights {
        Some(w) => w.to_vec(),
        None => vec![1.0; rho],
    };
    let mut wvec = DVector::zeros(structure.dim());
    for (r, range) in structure.blocks().enumerate() {
        for i in range {
            wvec[i] = w[r];
        }
    }
    let mut checked = 0;
    let mut flags = 0;
    for x in trajectory.states.iter().step_by(stride.max(1)) {
        let p = game.payoff(x)?;
        let nu = protocol.velocity(x, &p)?;
        let (grad_x, grad_p) = protocol.storage_gradients(x, &p)?;
        let pdot = game.jacobian(x)? * &nu;
        let mut dvdt = 0.0;
        for i in 0..x.len() {
            dvdt += wvec[i] * (grad_x[i] * nu[i] + grad_p[i] * pdot[i]);
        }
        let sigma = protocol.weighted_sigma(x, &p, &w)?;
        checked += 1;
        if dvdt > -sigma + 1e-6 {
            flags += 1;
        }
    }
    Ok((checked, flags))
}

/// Analytic-derivative spot check for closed-loop runs:
/// `dV/dt <= -(sigma + varsigma) + 1e-6`, with every term computed from its
/// own analytic expression.
pub fn derivative_check_closed_loop(
    pdm: &SmoothingPdm,
    protocol: &IpcProtocol,
    trajectory: &Trajectory,
    weights: Option<&[f64]>,
    stride: usize,
) -> Result<(usize, usize), Error> {
    let structure = pdm.structure();
    let rho = structure.num_populations();
    let w = match weights {
        Some(w) => w.to_vec(),
        None => vec![1.0; rho],
    };
    let mut wvec = DVector::zeros(structure.dim());
    for (r, range) in structure.blocks().enumerate() {
        for i in range {
            wvec[i] = w[r];
        }
    }
    let qs = trajectory
        .pdm_states
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("trajectory has no PDM states".into()))?;
    let mut checked = 0;
    let mut flags = 0;
    for (x, q) in trajectory.states.iter().zip(qs).step_by(stride.max(1)) {
        let p = pdm.output(q, x)?;
        let nu = protocol.velocity(x, &p)?;
        let f = pdm.rate(q, x)?;
        let pdot = pdm.output(&f, x)?; // h is linear in q
        let (grad_x, _) = protocol.storage_gradients(x, &p)?;
        let mut dvdt = 0.0;
        for i in 0..x.len() {
            dvdt += wvec[i] * (grad_x[i] * nu[i] + nu[i] * pdot[i]);
        }
        // dQ/dx . nu = f^T (M nu), dQ/dq . f
        let mnu = pdm.flow_direction(&nu)?;
        dvdt += f.dot(&mnu);
        dvdt += pdm.storage_grad_q(q, x)?.dot(&f);
        let bound = -(protocol.weighted_sigma(x, &p, &w)? + pdm.varsigma(q, x)?);
        checked += 1;
        if dvdt > bound + 1e-6 {
            flags += 1;
        }
    }
    Ok((checked, flags))
}

/// Returns the final state when the dynamics have settled: `|nu| <= tol`
/// and `nash_gap(x*, F(x*)) <= 10 tol`.
pub fn detect_rest_point_memoryless(
    trajectory: &Trajectory,
    game: &dyn Game,
    protocol: &IpcProtocol,
    tol: f64,
) -> Result<Option<DVector<f64>>, Error> {
    if trajectory.is_empty() {
        return Ok(None);
    }
    let x = trajectory.final_state();
    let p = game.payoff(x)?;
    let nu = protocol.velocity(x, &p)?;
    if nu.norm() > tol {
        return Ok(None);
    }
    if nash_gap(game.structure(), x, &p)? > 10.0 * tol {
        return Ok(None);
    }
    Ok(Some(x.clone()))
}

/// Closed-loop variant: additionally requires `|f| <= tol`, and checks the
/// Nash gap against the recovered steady-state payoff.
pub fn detect_rest_point_closed_loop(
    trajectory: &Trajectory,
    pdm: &SmoothingPdm,
    protocol: &IpcProtocol,
    tol: f64,
) -> Result<Option<(DVector<f64>, DVector<f64>)>, Error> {
    if trajectory.is_empty() {
        return Ok(None);
    }
    let x = trajectory.final_state();
    let q = trajectory
        .final_pdm_state()
        .ok_or_else(|| Error::InvalidParameter("trajectory has no PDM states".into()))?;
    let p = pdm.output(q, x)?;
    let nu = protocol.velocity(x, &p)?;
    let f = pdm.rate(q, x)?;
    if nu.norm() > tol || f.norm() > tol {
        return Ok(None);
    }
    let steady = pdm.steady_state_payoff(x)?;
    if nash_gap(pdm.structure(), x, &steady)? > 10.0 * tol {
        return Ok(None);
    }
    Ok(Some((x.clone(), q.clone())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{DelayFn, MixedAutonomyGame};
    use crate::sampling;

    fn two_link_game() -> MixedAutonomyGame {
        MixedAutonomyGame::parallel_links(
            vec![
                DelayFn::Affine { a: 1.0, alpha: 1.0 },
                DelayFn::Affine { a: 1.0, alpha: 1.0 },
            ],
            0.5,
            1.0,
            1.0,
        )
        .unwrap()
    }

    fn symmetric_equilibrium() -> DVector<f64> {
        DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5])
    }

    #[test]
    fn stationary_at_equilibrium() {
        let game = two_link_game();
        let protocol = IpcProtocol::smith(game.structure().clone());
        let x0 = symmetric_equilibrium();
        let traj =
            integrate_memoryless(&game, &protocol, &x0, 5.0, DEFAULT_STEP, None).unwrap();
        let p = game.payoff(traj.final_state()).unwrap();
        let nu = protocol.velocity(traj.final_state(), &p).unwrap();
        assert!(nu.norm() < 1e-8);
        assert!((traj.final_state() - &x0).amax() < 1e-10);
    }

    #[test]
    fn two_link_converges_and_monitor_is_clean() {
        let game = two_link_game();
        let protocol = IpcProtocol::smith(game.structure().clone());
        let weights = game.canonical_weights();
        let mut rng = sampling::sample_rng(7, 0);
        let x0 = sampling::sample_simplex(game.structure(), &mut rng);
        let traj = integrate_memoryless(&game, &protocol, &x0, 200.0, DEFAULT_STEP, Some(&weights))
            .unwrap();
        assert!(traj.final_nash_gap() < 1e-6, "gap {}", traj.final_nash_gap());
        let report = lyapunov_monitor(&traj, DEFAULT_MONITOR_TOL);
        assert!(report.passed(), "{report:?}");
        traj.validate(game.structure()).unwrap();
        let (checked, flags) =
            derivative_check_memoryless(&game, &protocol, &traj, Some(&weights), 100).unwrap();
        assert!(checked > 0);
        assert_eq!(flags, 0);
        let rest = detect_rest_point_memoryless(&traj, &game, &protocol, 1e-6).unwrap();
        assert!(rest.is_some());
    }

    #[test]
    fn simplex_invariants_hold_over_horizon() {
        let game = two_link_game();
        let protocol = IpcProtocol::smith(game.structure().clone());
        // boundary start exercises rejection and renormalization
        let x0 = DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0]);
        let traj =
            integrate_memoryless(&game, &protocol, &x0, 50.0, DEFAULT_STEP, None).unwrap();
        for x in &traj.states {
            assert!(x.min() >= -1e-10);
        }
        for (r, range) in game.structure().blocks().enumerate() {
            let mass = game.structure().mass(r);
            for x in &traj.states {
                let sum: f64 = x.rows(range.start, range.len()).iter().sum();
                assert!((sum - mass).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn richardson_ratio_on_smooth_segment() {
        let game = two_link_game();
        let protocol = IpcProtocol::smith(game.structure().clone());
        let x0 = DVector::from_vec(vec![0.8, 0.2, 0.3, 0.7]);
        let run = |h: f64| {
            integrate_memoryless(&game, &protocol, &x0, 1.0, h, None)
                .unwrap()
                .final_state()
                .clone()
        };
        let e1 = (run(0.02) - run(0.01)).norm();
        let e2 = (run(0.01) - run(0.005)).norm();
        let ratio = e1 / e2;
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn zero_horizon_records_initial_row_only() {
        let game = two_link_game();
        let protocol = IpcProtocol::smith(game.structure().clone());
        let traj = integrate_memoryless(
            &game,
            &protocol,
            &symmetric_equilibrium(),
            0.0,
            DEFAULT_STEP,
            None,
        )
        .unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.times[0], 0.0);
    }

    #[test]
    fn closed_loop_stationary_with_consistent_start() {
        let game = two_link_game();
        let protocol = IpcProtocol::smith(game.structure().clone());
        let x0 = symmetric_equilibrium();
        let pdm = SmoothingPdm::new(game, 1.0).unwrap();
        let q0 = pdm.consistent_state(&x0).unwrap();
        let traj =
            integrate_closed_loop(&pdm, &protocol, &x0, &q0, 5.0, DEFAULT_STEP, None).unwrap();
        assert!((traj.final_state() - &x0).amax() < 1e-10);
        assert!((traj.final_pdm_state().unwrap() - &q0).amax() < 1e-10);
    }

    #[test]
    fn closed_loop_converges_from_perturbed_start() {
        let game = two_link_game();
        let weights = game.canonical_weights();
        let protocol = IpcProtocol::smith(game.structure().clone());
        let x0 = DVector::from_vec(vec![0.9, 0.1, 0.2, 0.8]);
        let pdm = SmoothingPdm::new(game, 1.0).unwrap();
        // perturbed delay estimate: q0 = Phi(z) + 1
        let q0 = pdm.consistent_state(&x0).unwrap().add_scalar(1.0);
        let traj =
            integrate_closed_loop(&pdm, &protocol, &x0, &q0, 500.0, DEFAULT_STEP, Some(&weights))
                .unwrap();
        assert!(traj.lyapunov[0] > 0.0);
        let rest = detect_rest_point_closed_loop(&traj, &pdm, &protocol, 1e-6).unwrap();
        assert!(rest.is_some(), "gap {}", traj.final_nash_gap());
        let report = lyapunov_monitor(&traj, DEFAULT_MONITOR_TOL);
        assert!(report.passed(), "{report:?}");
        let (checked, flags) =
            derivative_check_closed_loop(&pdm, &protocol, &traj, Some(&weights), 200).unwrap();
        assert!(checked > 0);
        assert_eq!(flags, 0);
    }

    #[test]
    fn closed_loop_rejects_inadmissible_start() {
        let game = two_link_game();
        let protocol = IpcProtocol::smith(game.structure().clone());
        let x0 = symmetric_equilibrium();
        let pdm = SmoothingPdm::new(game, 1.0).unwrap();
        let q0 = DVector::from_vec(vec![0.0, 0.0]); // below the Phi(0) floor
        assert!(
            integrate_closed_loop(&pdm, &protocol, &x0, &q0, 1.0, DEFAULT_STEP, None).is_err()
        );
    }

    #[test]
    fn small_tau_tracks_memoryless() {
        let game = two_link_game();
        let protocol = IpcProtocol::smith(game.structure().clone());
        let x0 = DVector::from_vec(vec![0.8, 0.2, 0.3, 0.7]);
        let horizon = 10.0;
        let step = 2.5e-4;
        let mem = integrate_memoryless(&game, &protocol, &x0, horizon, step, None).unwrap();
        let pdm = SmoothingPdm::new(game, 1e-3).unwrap();
        let q0 = pdm.consistent_state(&x0).unwrap();
        let closed =
            integrate_closed_loop(&pdm, &protocol, &x0, &q0, horizon, step, None).unwrap();
        let mut sup: f64 = 0.0;
        for (a, b) in mem.states.iter().zip(&closed.states) {
            sup = sup.max((a - b).amax());
        }
        assert!(sup <= 1e-2, "sup-norm deviation {sup}");
    }

    #[test]
    fn unconverged_short_run_yields_no_rest_point() {
        let game = two_link_game();
        let protocol = IpcProtocol::smith(game.structure().clone());
        let x0 = DVector::from_vec(vec![0.9, 0.1, 0.2, 0.8]);
        let traj = integrate_memoryless(&game, &protocol, &x0, 1.0, DEFAULT_STEP, None).unwrap();
        let rest = detect_rest_point_memoryless(&traj, &game, &protocol, 1e-8).unwrap();
        assert!(rest.is_none());
    }

    #[test]
    fn rest_point_satisfies_nash_inequality() {
        let game = two_link_game();
        let protocol = IpcProtocol::smith(game.structure().clone());
        let mut rng = sampling::sample_rng(11, 0);
        let x0 = sampling::sample_simplex(game.structure(), &mut rng);
        let traj =
            integrate_memoryless(&game, &protocol, &x0, 200.0, DEFAULT_STEP, None).unwrap();
        let rest = detect_rest_point_memoryless(&traj, &game, &protocol, 1e-6)
            .unwrap()
            .expect("converged");
        let p = game.payoff(&rest).unwrap();
        for k in 0..100 {
            let mut vrng = sampling::sample_rng(12, k);
            let v = sampling::sample_simplex(game.structure(), &mut vrng);
            assert!(v.dot(&p) <= rest.dot(&p) + 1e-6);
        }
    }

    #[test]
    fn monitor_flags_an_artificial_increase() {
        let traj = Trajectory {
            times: vec![0.0, 1.0, 2.0],
            states: vec![],
            pdm_states: None,
            payoffs: vec![],
            lyapunov: vec![1.0, 0.5, 0.5001],
            nash_gaps: vec![],
        };
        let report = lyapunov_monitor(&traj, 1e-7);
        assert_eq!(report.flags, 1);
        assert!(report.max_relative_increase > 0.0);
    }
}
