//! Evolutionary dynamics models of the impartial pairwise comparison class,
//! their storage functions, and Nash-gap diagnostics.
//!
//! An IPC protocol assigns each strategy `j` a switch rate `phi_j` that is
//! zero on nonpositive payoff differences and positive on positive ones. The
//! induced vector field
//!
//! ```text
//! nu_i = sum_j x_j phi_i(p_i - p_j) - x_i phi_j(p_j - p_i)
//! ```
//!
//! is tangent to the simplex product and Nash stationary. The storage pair
//! `(S, sigma)` built from the rate antiderivatives satisfies the
//! delta-dissipativity inequality with the delta-passive supply rate, with
//! equality: `dS/dp = nu` and `dS/dx . nu = -sigma` hold identically.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::Error;
use crate::geometry::{PopulationStructure, SupplyRate, TangentVector};
use crate::sampling;

/// Adaptive-Simpson absolute tolerance for antiderivatives supplied only as
/// a rate function.
const QUADRATURE_TOL: f64 = 1e-10;

type RateFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Switch-rate function of one payoff difference, with its antiderivative.
#[derive(Clone)]
pub enum SwitchRate {
    /// `phi(s) = [s]_+` (the Smith protocol).
    Smith,
    /// `phi(s) = [s]_+^k`, `k >= 1`.
    Power { exponent: f64 },
    /// User-supplied rate; the antiderivative falls back to adaptive Simpson
    /// quadrature when not given in closed form.
    Custom {
        phi: RateFn,
        antiderivative: Option<RateFn>,
    },
}

impl std::fmt::Debug for SwitchRate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SwitchRate::Smith => write!(f, "Smith"),
            SwitchRate::Power { exponent } => write!(f, "Power({exponent})"),
            SwitchRate::Custom { .. } => write!(f, "Custom"),
        }
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let simpson = |a: f64, b: f64| {
        let m = 0.5 * (a + b);
        (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
    };
    let whole = simpson(a, b);
    let left = simpson(a, m);
    let right = simpson(m, b);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        left + right + (left + right - whole) / 15.0
    } else {
        adaptive_simpson(f, a, m, tol / 2.0, depth - 1)
            + adaptive_simpson(f, m, b, tol / 2.0, depth - 1)
    }
}

impl SwitchRate {
    pub fn phi(&self, s: f64) -> f64 {
        match self {
            SwitchRate::Smith => s.max(0.0),
            SwitchRate::Power { exponent } => s.max(0.0).powf(*exponent),
            SwitchRate::Custom { phi, .. } => {
                if s > 0.0 {
                    phi(s)
                } else {
                    0.0
                }
            }
        }
    }

    /// `Phi(t) = int_0^t phi(s) ds`; zero for `t <= 0` since the rate
    /// vanishes on nonpositive arguments.
    pub fn phi_integral(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            SwitchRate::Smith => 0.5 * t * t,
            SwitchRate::Power { exponent } => t.powf(exponent + 1.0) / (exponent + 1.0),
            SwitchRate::Custom {
                phi,
                antiderivative,
            } => match antiderivative {
                Some(g) => g(t),
                None => adaptive_simpson(&**phi, 0.0, t, QUADRATURE_TOL, 40),
            },
        }
    }
}

/// Impartial pairwise comparison protocol: one switch rate per population
/// per strategy.
#[derive(Debug, Clone)]
pub struct IpcProtocol {
    structure: Arc<PopulationStructure>,
    rates: Vec<Vec<SwitchRate>>,
}

impl IpcProtocol {
    pub fn new(
        structure: Arc<PopulationStructure>,
        rates: Vec<Vec<SwitchRate>>,
    ) -> Result<Self, Error> {
        if rates.len() != structure.num_populations() {
            return Err(Error::DimensionMismatch {
                expected: structure.num_populations(),
                got: rates.len(),
            });
        }
        for (r, pop) in rates.iter().enumerate() {
            if pop.len() != structure.strategy_counts()[r] {
                return Err(Error::DimensionMismatch {
                    expected: structure.strategy_counts()[r],
                    got: pop.len(),
                });
            }
        }
        Ok(Self { structure, rates })
    }

    /// Same rate for every population and strategy.
    pub fn uniform(structure: Arc<PopulationStructure>, rate: SwitchRate) -> Self {
        let rates = structure
            .strategy_counts()
            .iter()
            .map(|&n| vec![rate.clone(); n])
            .collect();
        Self {
            structure,
            rates,
        }
    }

    pub fn smith(structure: Arc<PopulationStructure>) -> Self {
        Self::uniform(structure, SwitchRate::Smith)
    }

    pub fn structure(&self) -> &Arc<PopulationStructure> {
        &self.structure
    }

    fn check_dims(&self, x: &DVector<f64>, p: &DVector<f64>) -> Result<(), Error> {
        let n = self.structure.dim();
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() });
        }
        if p.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: p.len() });
        }
        Ok(())
    }

    /// The IPC vector field `nu(x, p)`.
    pub fn velocity(&self, x: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>, Error> {
        self.check_dims(x, p)?;
        let mut nu = DVector::zeros(self.structure.dim());
        for (r, range) in self.structure.blocks().enumerate() {
            let rates = &self.rates[r];
            for (li, i) in range.clone().enumerate() {
                let mut inflow = 0.0;
                let mut outflow = 0.0;
                for (lj, j) in range.clone().enumerate() {
                    inflow += x[j] * rates[li].phi(p[i] - p[j]);
                    outflow += x[i] * rates[lj].phi(p[j] - p[i]);
                }
                nu[i] = inflow - outflow;
            }
        }
        Ok(nu)
    }

    /// Velocity wrapped as a checked tangent vector.
    pub fn velocity_tangent(
        &self,
        x: &DVector<f64>,
        p: &DVector<f64>,
    ) -> Result<TangentVector, Error> {
        let nu = self.velocity(x, p)?;
        TangentVector::new(nu, self.structure.clone())
    }

    /// Storage function `S = sum_r sum_ij x_i Phi_j(p_j - p_i)`.
    pub fn storage(&self, x: &DVector<f64>, p: &DVector<f64>) -> Result<f64, Error> {
        self.check_dims(x, p)?;
        let mut s = 0.0;
        for (r, range) in self.structure.blocks().enumerate() {
            let rates = &self.rates[r];
            for i in range.clone() {
                for (lj, j) in range.clone().enumerate() {
                    s += x[i] * rates[lj].phi_integral(p[j] - p[i]);
                }
            }
        }
        Ok(s)
    }

    /// Dissipation rate `sigma = -sum_i nu_i sum_j Phi_j(p_j - p_i)`.
    pub fn sigma(&self, x: &DVector<f64>, p: &DVector<f64>) -> Result<f64, Error> {
        let nu = self.velocity(x, p)?;
        let mut sig = 0.0;
        for (r, range) in self.structure.blocks().enumerate() {
            let rates = &self.rates[r];
            for i in range.clone() {
                let mut inner = 0.0;
                for (lj, j) in range.clone().enumerate() {
                    inner += rates[lj].phi_integral(p[j] - p[i]);
                }
                sig -= nu[i] * inner;
            }
        }
        Ok(sig)
    }

    /// Per-population weighted storage `sum_r w_r S_r`, the storage paired
    /// with the weighted supply rate.
    pub fn weighted_storage(
        &self,
        x: &DVector<f64>,
        p: &DVector<f64>,
        weights: &[f64],
    ) -> Result<f64, Error> {
        self.check_dims(x, p)?;
        if weights.len() != self.structure.num_populations() {
            return Err(Error::DimensionMismatch {
                expected: self.structure.num_populations(),
                got: weights.len(),
            });
        }
        let mut s = 0.0;
        for (r, range) in self.structure.blocks().enumerate() {
            let rates = &self.rates[r];
            for i in range.clone() {
                for (lj, j) in range.clone().enumerate() {
                    s += weights[r] * x[i] * rates[lj].phi_integral(p[j] - p[i]);
                }
            }
        }
        Ok(s)
    }

    /// Per-population weighted dissipation rate `sum_r w_r sigma_r`.
    pub fn weighted_sigma(
        &self,
        x: &DVector<f64>,
        p: &DVector<f64>,
        weights: &[f64],
    ) -> Result<f64, Error> {
        let nu = self.velocity(x, p)?;
        if weights.len() != self.structure.num_populations() {
            return Err(Error::DimensionMismatch {
                expected: self.structure.num_populations(),
                got: weights.len(),
            });
        }
        let mut sig = 0.0;
        for (r, range) in self.structure.blocks().enumerate() {
            let rates = &self.rates[r];
            for i in range.clone() {
                let mut inner = 0.0;
                for (lj, j) in range.clone().enumerate() {
                    inner += rates[lj].phi_integral(p[j] - p[i]);
                }
                sig -= weights[r] * nu[i] * inner;
            }
        }
        Ok(sig)
    }

    /// Analytic gradients of the storage function. For the IPC storage,
    /// `dS/dx_i = sum_j Phi_j(p_j - p_i)` and `dS/dp = nu(x, p)`.
    pub fn storage_gradients(
        &self,
        x: &DVector<f64>,
        p: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>), Error> {
        self.check_dims(x, p)?;
        let n = self.structure.dim();
        let mut grad_x = DVector::zeros(n);
        for (r, range) in self.structure.blocks().enumerate() {
            let rates = &self.rates[r];
            for i in range.clone() {
                let mut acc = 0.0;
                for (lj, j) in range.clone().enumerate() {
                    acc += rates[lj].phi_integral(p[j] - p[i]);
                }
                grad_x[i] = acc;
            }
        }
        let grad_p = self.velocity(x, p)?;
        Ok((grad_x, grad_p))
    }

    /// Samples the delta-dissipativity inequality and reports the worst
    /// violation margin.
    pub fn verify_delta_dissipativity(
        &self,
        supply: &SupplyRate,
        samples: usize,
        seed: u64,
    ) -> Result<DissipativityReport, Error> {
        let n = self.structure.dim();
        if supply.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: supply.dim() });
        }
        let mut report = DissipativityReport::new(samples);
        for k in 0..samples {
            let mut rng = sampling::sample_rng(seed, k as u64);
            let x = sampling::sample_simplex(&self.structure, &mut rng);
            let p = sampling::sample_normal_vector(n, PAYOFF_MAGNITUDE, &mut rng);
            let u = sampling::sample_normal_vector(n, PAYOFF_MAGNITUDE, &mut rng);
            let nu = self.velocity(&x, &p)?;
            let (grad_x, grad_p) = self.storage_gradients(&x, &p)?;
            let lhs = grad_x.dot(&nu) + grad_p.dot(&u);
            let rhs = -self.sigma(&x, &p)? + supply.quad(&u, &nu);
            report.record(rhs - lhs);
        }
        Ok(report)
    }
}

/// Default magnitude for sampled payoffs and inputs.
pub const PAYOFF_MAGNITUDE: f64 = 3.0;

/// Slack below which a sampled inequality counts as violated.
pub const DISSIPATIVITY_SLACK: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct DissipativityReport {
    pub samples: usize,
    pub violations: usize,
    /// Minimum of `rhs - lhs` across samples; negative values beyond the
    /// slack are violations.
    pub worst_slack: f64,
}

impl DissipativityReport {
    pub(crate) fn new(samples: usize) -> Self {
        Self {
            samples,
            violations: 0,
            worst_slack: f64::INFINITY,
        }
    }

    pub(crate) fn record(&mut self, slack: f64) {
        self.worst_slack = self.worst_slack.min(slack);
        if slack < -DISSIPATIVITY_SLACK {
            self.violations += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Distance-to-best-response surrogate
/// `sum_r (m^r max_i p_i^r - sum_i x_i^r p_i^r)`; zero exactly at states
/// satisfying the Nash inequality.
pub fn nash_gap(
    structure: &PopulationStructure,
    x: &DVector<f64>,
    p: &DVector<f64>,
) -> Result<f64, Error> {
    let n = structure.dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.len() });
    }
    if p.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: p.len() });
    }
    let mut gap = 0.0;
    for (r, range) in structure.blocks().enumerate() {
        let best = range.clone().map(|i| p[i]).fold(f64::NEG_INFINITY, f64::max);
        let value: f64 = range.map(|i| x[i] * p[i]).sum();
        gap += structure.mass(r) * best - value;
    }
    Ok(gap.max(0.0))
}
