//! Scenario files: JSON schema, construction of the configured game, EDM,
//! and PDM, and the `simulate` / `certify` / `verify` drivers shared by the
//! command-line interface and the integration tests.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::certify::{
    certify_fixed, certify_weighted_contraction, sproc_soundness_check, Certificate,
    CertificateRequest, SolverBudget, SupplyTemplate, Verdict,
};
use crate::edm::{IpcProtocol, SwitchRate};
use crate::error::Error;
use crate::games::{DelayFn, Game, MixedAutonomyGame, OdPair, RoadSplitGame};
use crate::geometry::SupplyRate;
use crate::pdm::SmoothingPdm;
use crate::sampling;
use crate::sim::{
    detect_rest_point_closed_loop, detect_rest_point_memoryless, integrate_closed_loop,
    integrate_memoryless, lyapunov_monitor, Trajectory, DEFAULT_MONITOR_TOL,
};

pub const DEFAULT_GAP_TOL: f64 = 1e-6;
pub const DEFAULT_CSV_STRIDE: usize = 10;
pub const VERIFY_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub game: GameSpec,
    #[serde(default)]
    pub edm: EdmSpec,
    #[serde(default)]
    pub pdm: Option<PdmSpec>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub q0: Option<Q0Spec>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default)]
    pub gap_tol: Option<f64>,
    #[serde(default)]
    pub certify: Option<CertifySpec>,
    /// Test hook: flips the sign of the dissipation rate inside `verify`
    /// so the mutation is caught by the nonnegativity check.
    #[serde(default)]
    pub corrupt_sigma: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GameSpec {
    MixedAutonomy {
        mu: f64,
        delays: Vec<DelaySpec>,
        #[serde(default)]
        routing: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        od: Option<Vec<OdSpec>>,
        #[serde(default = "default_mass")]
        mass_aut: f64,
        #[serde(default = "default_mass")]
        mass_reg: f64,
    },
    RoadSplit {
        traversal: [f64; 2],
        crossing: [f64; 2],
        detour: [f64; 2],
        masses: [f64; 2],
    },
}

fn default_mass() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelaySpec {
    Affine { a: f64, alpha: f64 },
    Bpr { alpha: f64, beta: f64, kappa: f64 },
}

impl DelaySpec {
    fn build(&self) -> DelayFn {
        match *self {
            DelaySpec::Affine { a, alpha } => DelayFn::Affine { a, alpha },
            DelaySpec::Bpr { alpha, beta, kappa } => DelayFn::Bpr { alpha, beta, kappa },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdSpec {
    pub routes: usize,
    pub mass_aut: f64,
    pub mass_reg: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EdmSpec {
    Smith,
    Ipc {
        phi: PhiSpec,
        #[serde(default)]
        exponent: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiSpec {
    Smith,
    Power,
}

impl Default for EdmSpec {
    fn default() -> Self {
        EdmSpec::Smith
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PdmSpec {
    Smoothing { tau: f64 },
}

/// Initial PDM state: explicit values, the consistent state `Phi(z(x0))`,
/// or the consistent state shifted by a constant.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", untagged)]
pub enum Q0Spec {
    Values(Vec<f64>),
    Named(Q0Named),
    Perturbed { perturb: f64 },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Q0Named {
    Consistent,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySpec {
    /// Forced per-population weights; omitting them lets the solver search.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub margin: Option<f64>,
    #[serde(default)]
    pub restarts: Option<usize>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub theta_min: Option<f64>,
    #[serde(default)]
    pub theta_max: Option<f64>,
}

/// The game configured by a scenario, with its concrete type retained so
/// game-specific paths (PDM construction, canonical weights) stay available.
pub enum BuiltGame {
    MixedAutonomy(MixedAutonomyGame),
    RoadSplit(RoadSplitGame),
}

impl BuiltGame {
    pub fn as_game(&self) -> &dyn Game {
        match self {
            BuiltGame::MixedAutonomy(g) => g,
            BuiltGame::RoadSplit(g) => g,
        }
    }

    /// Weights used for the recorded Lyapunov function.
    pub fn storage_weights(&self) -> Option<Vec<f64>> {
        match self {
            BuiltGame::MixedAutonomy(g) => Some(g.canonical_weights()),
            BuiltGame::RoadSplit(_) => None,
        }
    }
}

impl Scenario {
    pub fn from_path(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        let scenario: Scenario =
            serde_json::from_str(&text).map_err(|e| Error::Scenario(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), Error> {
        // construction performs the cross-dimension checks
        let built = self.build_game()?;
        if let Some(x0) = &self.x0 {
            if x0.len() != built.as_game().structure().dim() {
                return Err(Error::Scenario(format!(
                    "x0 has length {}, game state has dimension {}",
                    x0.len(),
                    built.as_game().structure().dim()
                )));
            }
        }
        if self.pdm.is_some() && !matches!(self.game, GameSpec::MixedAutonomy { .. }) {
            return Err(Error::Scenario(
                "smoothing dynamics require a mixed-autonomy game".into(),
            ));
        }
        if let Some(step) = self.step {
            if !(step > 0.0) {
                return Err(Error::Scenario("step must be positive".into()));
            }
        }
        if let Some(horizon) = self.horizon {
            if !(horizon >= 0.0) {
                return Err(Error::Scenario("horizon must be nonnegative".into()));
            }
        }
        Ok(())
    }

    pub fn build_game(&self) -> Result<BuiltGame, Error> {
        match &self.game {
            GameSpec::MixedAutonomy {
                mu,
                delays,
                routing,
                od,
                mass_aut,
                mass_reg,
            } => {
                let delays: Vec<DelayFn> = delays.iter().map(DelaySpec::build).collect();
                let game = match (routing, od) {
                    (Some(rows), Some(od)) => {
                        let n = rows.len();
                        let l = rows.first().map(|r| r.len()).unwrap_or(0);
                        if rows.iter().any(|r| r.len() != l) {
                            return Err(Error::Scenario("ragged routing matrix".into()));
                        }
                        let mut m = nalgebra::DMatrix::zeros(n, l);
                        for (i, row) in rows.iter().enumerate() {
                            for (j, &v) in row.iter().enumerate() {
                                m[(i, j)] = v;
                            }
                        }
                        let od: Vec<OdPair> = od
                            .iter()
                            .map(|o| OdPair {
                                routes: o.routes,
                                mass_aut: o.mass_aut,
                                mass_reg: o.mass_reg,
                            })
                            .collect();
                        MixedAutonomyGame::new(m, delays, *mu, od)
                    }
                    (None, None) => {
                        MixedAutonomyGame::parallel_links(delays, *mu, *mass_aut, *mass_reg)
                    }
                    _ => {
                        return Err(Error::Scenario(
                            "routing and od must be given together".into(),
                        ))
                    }
                }
                .map_err(|e| Error::Scenario(e.to_string()))?;
                Ok(BuiltGame::MixedAutonomy(game))
            }
            GameSpec::RoadSplit {
                traversal,
                crossing,
                detour,
                masses,
            } => Ok(BuiltGame::RoadSplit(
                RoadSplitGame::new(*traversal, *crossing, *detour, *masses)
                    .map_err(|e| Error::Scenario(e.to_string()))?,
            )),
        }
    }

    pub fn build_protocol(&self, built: &BuiltGame) -> Result<IpcProtocol, Error> {
        let structure = built.as_game().structure().clone();
        match &self.edm {
            EdmSpec::Smith => Ok(IpcProtocol::smith(structure)),
            EdmSpec::Ipc { phi, exponent } => {
                let rate = match phi {
                    PhiSpec::Smith => SwitchRate::Smith,
                    PhiSpec::Power => SwitchRate::Power {
                        exponent: exponent.ok_or_else(|| {
                            Error::Scenario("power rate requires an exponent".into())
                        })?,
                    },
                };
                Ok(IpcProtocol::uniform(structure, rate))
            }
        }
    }

    pub fn build_pdm(&self, built: &BuiltGame) -> Result<Option<SmoothingPdm>, Error> {
        match (&self.pdm, built) {
            (Some(PdmSpec::Smoothing { tau }), BuiltGame::MixedAutonomy(g)) => Ok(Some(
                SmoothingPdm::new(g.clone(), *tau).map_err(|e| Error::Scenario(e.to_string()))?,
            )),
            (Some(_), _) => Err(Error::Scenario(
                "smoothing dynamics require a mixed-autonomy game".into(),
            )),
            (None, _) => Ok(None),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn initial_state(&self, built: &BuiltGame, seed: u64) -> DVector<f64> {
        match &self.x0 {
            Some(x0) => DVector::from_vec(x0.clone()),
            None => {
                let mut rng = sampling::sample_rng(seed, 0);
                sampling::sample_simplex(built.as_game().structure(), &mut rng)
            }
        }
    }

    fn initial_pdm_state(
        &self,
        pdm: &SmoothingPdm,
        x0: &DVector<f64>,
    ) -> Result<DVector<f64>, Error> {
        match &self.q0 {
            Some(Q0Spec::Values(values)) => Ok(DVector::from_vec(values.clone())),
            Some(Q0Spec::Perturbed { perturb }) => {
                Ok(pdm.consistent_state(x0)?.add_scalar(*perturb))
            }
            Some(Q0Spec::Named(Q0Named::Consistent)) | None => pdm.consistent_state(x0),
        }
    }

    fn budget(&self, seed: u64) -> SolverBudget {
        let mut budget = SolverBudget {
            seed,
            ..SolverBudget::default()
        };
        if let Some(spec) = &self.certify {
            if let Some(r) = spec.restarts {
                budget.restarts = r;
            }
            if let Some(i) = spec.iterations {
                budget.iterations = i;
            }
            if let Some(t) = spec.theta_min {
                budget.theta_min = t;
            }
            if let Some(t) = spec.theta_max {
                budget.theta_max = t;
            }
        }
        budget
    }

    fn certificate_request(&self, built: &BuiltGame, seed: u64) -> Result<CertificateRequest, Error> {
        let margin = self
            .certify
            .as_ref()
            .and_then(|c| c.margin)
            .unwrap_or(crate::certify::DEFAULT_MARGIN);
        let template = match self.certify.as_ref().and_then(|c| c.weights.as_ref()) {
            Some(weights) => SupplyTemplate::Fixed(
                SupplyRate::weighted(built.as_game().structure(), weights)
                    .map_err(|e| Error::Scenario(e.to_string()))?,
            ),
            None => match built {
                BuiltGame::MixedAutonomy(_) => SupplyTemplate::WeightedDeltaPassive,
                // the road-split certificate is stated for Pi12 = I/2
                BuiltGame::RoadSplit(_) => SupplyTemplate::Fixed(SupplyRate::delta_passive(
                    built.as_game().structure().dim(),
                )),
            },
        };
        Ok(CertificateRequest {
            template,
            margin,
            budget: self.budget(seed),
        })
    }
}

/// Runtime overrides coming from the command line.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub step: Option<f64>,
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub converged: bool,
    pub final_nash_gap: f64,
    pub lyapunov_violations: usize,
}

pub struct SimOutcome {
    pub trajectory: Trajectory,
    pub summary: Summary,
}

pub fn run_simulate(scenario: &Scenario, overrides: Overrides) -> Result<SimOutcome, Error> {
    let built = scenario.build_game()?;
    let protocol = scenario.build_protocol(&built)?;
    let seed = overrides.seed.unwrap_or_else(|| scenario.seed());
    let step = overrides.step.or(scenario.step).unwrap_or(crate::sim::DEFAULT_STEP);
    let horizon = overrides
        .horizon
        .or(scenario.horizon)
        .unwrap_or(crate::sim::DEFAULT_HORIZON);
    let gap_tol = scenario.gap_tol.unwrap_or(DEFAULT_GAP_TOL);
    let x0 = scenario.initial_state(&built, seed);
    let weights = built.storage_weights();
    let wref = weights.as_deref();

    let pdm = scenario.build_pdm(&built)?;
    let (trajectory, converged) = match &pdm {
        Some(pdm) => {
            let q0 = scenario.initial_pdm_state(pdm, &x0)?;
            let traj = integrate_closed_loop(pdm, &protocol, &x0, &q0, horizon, step, wref)?;
            let rest = detect_rest_point_closed_loop(&traj, pdm, &protocol, gap_tol)?;
            (traj, rest.is_some())
        }
        None => {
            let traj = integrate_memoryless(
                built.as_game(),
                &protocol,
                &x0,
                horizon,
                step,
                wref,
            )?;
            let rest =
                detect_rest_point_memoryless(&traj, built.as_game(), &protocol, gap_tol)?;
            (traj, rest.is_some())
        }
    };
    let monitor = lyapunov_monitor(&trajectory, DEFAULT_MONITOR_TOL);
    let summary = Summary {
        converged,
        final_nash_gap: trajectory.final_nash_gap(),
        lyapunov_violations: monitor.flags,
    };
    Ok(SimOutcome {
        trajectory,
        summary,
    })
}

pub fn run_certify(scenario: &Scenario, overrides: Overrides) -> Result<Certificate, Error> {
    let built = scenario.build_game()?;
    let game = built.as_game();
    if game.envelope().is_none() {
        return Err(Error::Scenario("game exposes no Jacobian envelope".into()));
    }
    let seed = overrides.seed.unwrap_or_else(|| scenario.seed());
    let request = scenario.certificate_request(&built, seed)?;
    match &request.template {
        SupplyTemplate::Fixed(supply) => {
            certify_fixed(game, supply, request.margin, &request.budget)
        }
        SupplyTemplate::WeightedDeltaPassive => {
            let envelope = game.envelope().expect("checked above");
            let mut cert = certify_weighted_contraction(
                &envelope,
                game.structure(),
                request.margin,
                &request.budget,
            )?;
            if cert.verdict != Verdict::Certified {
                // a failed search is not a proof; look for a hard witness
                // against the best weights found
                let supply = SupplyRate::weighted(game.structure(), &cert.weights)?;
                let report = crate::certify::check_pointwise(game, &supply, 2000, seed)?;
                if let Some(w) = report.witness {
                    cert.verdict = Verdict::Refuted;
                    cert.witness = Some(w);
                }
            }
            Ok(cert)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub edm_samples: usize,
    pub edm_violations: usize,
    pub edm_worst_slack: f64,
    pub sigma_sign_violations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pdm_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pdm_violations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub soundness_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub soundness_violations: Option<usize>,
    pub total_violations: usize,
}

pub fn run_verify(scenario: &Scenario, overrides: Overrides) -> Result<VerifyReport, Error> {
    let built = scenario.build_game()?;
    let game = built.as_game();
    let protocol = scenario.build_protocol(&built)?;
    let seed = overrides.seed.unwrap_or_else(|| scenario.seed());
    let supply = SupplyRate::delta_passive(game.structure().dim());

    let edm_report = protocol.verify_delta_dissipativity(&supply, VERIFY_SAMPLES, seed)?;

    // dissipation-rate nonnegativity on random (x, p); the corrupt_sigma
    // hook flips the sign so mutations of this check are detectable
    let mut sigma_sign_violations = 0;
    for k in 0..1000u64 {
        let mut rng = sampling::sample_rng(seed ^ 0x5151, k);
        let x = sampling::sample_simplex(game.structure(), &mut rng);
        let p = sampling::sample_normal_vector(game.structure().dim(), 3.0, &mut rng);
        let mut sigma = protocol.sigma(&x, &p)?;
        if scenario.corrupt_sigma {
            sigma = -sigma;
        }
        if sigma < -1e-8 {
            sigma_sign_violations += 1;
        }
    }

    let mut report = VerifyReport {
        edm_samples: edm_report.samples,
        edm_violations: edm_report.violations,
        edm_worst_slack: edm_report.worst_slack,
        sigma_sign_violations,
        pdm_samples: None,
        pdm_violations: None,
        soundness_samples: None,
        soundness_violations: None,
        total_violations: edm_report.violations + sigma_sign_violations,
    };

    if let Some(pdm) = scenario.build_pdm(&built)? {
        let weights = pdm.game().canonical_weights();
        let weighted = SupplyRate::weighted(game.structure(), &weights)?;
        let pdm_report = pdm.verify_dissipativity(&weighted, VERIFY_SAMPLES, seed)?;
        report.pdm_samples = Some(pdm_report.samples);
        report.pdm_violations = Some(pdm_report.violations);
        report.total_violations += pdm_report.violations;
    }

    if let (BuiltGame::RoadSplit(rs), Some(_)) = (&built, &scenario.certify) {
        let cert = run_certify(scenario, overrides)?;
        if cert.verdict == Verdict::Certified {
            let (base, factors) = rs.box_envelope();
            let sr = sproc_soundness_check(
                &cert,
                &base,
                &factors,
                game.structure(),
                &supply,
                VERIFY_SAMPLES,
                seed,
            )?;
            report.soundness_samples = Some(sr.samples);
            report.soundness_violations = Some(sr.violations);
            report.total_violations += sr.violations;
        }
    }

    Ok(report)
}

/// `{:.16e}` gives 17 significant digits, enough to round-trip any f64.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

struct SigDigitFormatter;

impl serde_json::ser::Formatter for SigDigitFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: std::io::Write + ?Sized,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serializes with every float at 17 significant digits.
pub fn to_json<T: Serialize>(value: &T) -> Result<String, Error> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigitFormatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("serializer emits UTF-8"))
}

/// Writes the trajectory CSV: header
/// `t,x_1..x_n[,q_1..q_L],p_1..p_n,V,nash_gap`, one row every `stride`
/// steps plus the final sample.
pub fn write_trajectory_csv(
    trajectory: &Trajectory,
    stride: usize,
    mut out: impl Write,
) -> Result<(), Error> {
    let n = trajectory
        .states
        .first()
        .map(|x| x.len())
        .unwrap_or(0);
    let l = trajectory
        .pdm_states
        .as_ref()
        .and_then(|q| q.first())
        .map(|q| q.len())
        .unwrap_or(0);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=l).map(|i| format!("q_{i}")));
    header.extend((1..=n).map(|i| format!("p_{i}")));
    header.push("V".into());
    header.push("nash_gap".into());
    writeln!(out, "{}", header.join(","))?;

    let stride = stride.max(1);
    let last = trajectory.len().saturating_sub(1);
    for k in 0..trajectory.len() {
        if k % stride != 0 && k != last {
            continue;
        }
        let mut row = vec![fmt_float(trajectory.times[k])];
        row.extend(trajectory.states[k].iter().map(|&v| fmt_float(v)));
        if let Some(qs) = &trajectory.pdm_states {
            row.extend(qs[k].iter().map(|&v| fmt_float(v)));
        }
        row.extend(trajectory.payoffs[k].iter().map(|&v| fmt_float(v)));
        row.push(fmt_float(trajectory.lyapunov[k]));
        row.push(fmt_float(trajectory.nash_gaps[k]));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
