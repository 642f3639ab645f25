//! Memoryless payoff mechanisms: the mixed-autonomy congestion game, the
//! road-split bypass game, and a generic user-supplied map. Each exposes the
//! payoff, its Jacobian, and (where available) a constant-matrix envelope
//! containing the Jacobian for certification.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::geometry::PopulationStructure;

/// Link delay as a function of effective link flow, with derivative,
/// potential (antiderivative), and inverse.
#[derive(Debug, Clone, PartialEq)]
pub enum DelayFn {
    /// `Phi(z) = a z + alpha`, `a > 0`.
    Affine { a: f64, alpha: f64 },
    /// BPR-style `Phi(z) = alpha (1 + beta (z / kappa)^4)`.
    Bpr { alpha: f64, beta: f64, kappa: f64 },
}

impl DelayFn {
    pub fn value(&self, z: f64) -> f64 {
        match self {
            DelayFn::Affine { a, alpha } => a * z + alpha,
            DelayFn::Bpr { alpha, beta, kappa } => alpha * (1.0 + beta * (z / kappa).powi(4)),
        }
    }

    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            DelayFn::Affine { a, .. } => *a,
            DelayFn::Bpr { alpha, beta, kappa } => 4.0 * alpha * beta * z.powi(3) / kappa.powi(4),
        }
    }

    /// Antiderivative of the delay (the link-cost potential), normalized to
    /// vanish at zero flow.
    pub fn potential(&self, z: f64) -> f64 {
        match self {
            DelayFn::Affine { a, alpha } => 0.5 * a * z * z + alpha * z,
            DelayFn::Bpr { alpha, beta, kappa } => {
                alpha * z + alpha * beta * z.powi(5) / (5.0 * kappa.powi(4))
            }
        }
    }

    /// Lower end of the delay codomain: `Phi(0)`.
    pub fn min_delay(&self) -> f64 {
        self.value(0.0)
    }

    /// Closed-form inverse of the delay on `[min_delay, inf)`.
    pub fn invert(&self, q: f64) -> Result<f64, Error> {
        let lo = self.min_delay();
        if q < lo - 1e-12 {
            return Err(Error::InadmissibleState(format!(
                "delay value {q} below minimum {lo}"
            )));
        }
        let q = q.max(lo);
        Ok(match self {
            DelayFn::Affine { a, alpha } => (q - alpha) / a,
            DelayFn::Bpr { alpha, beta, kappa } => kappa * ((q / alpha - 1.0) / beta).powf(0.25),
        })
    }

    /// Bracketed bisection inverse; reference oracle for `invert`.
    pub fn invert_bisect(&self, q: f64) -> Result<f64, Error> {
        let lo = self.min_delay();
        if q < lo - 1e-12 {
            return Err(Error::InadmissibleState(format!(
                "delay value {q} below minimum {lo}"
            )));
        }
        let mut hi = 1.0;
        while self.value(hi) < q {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::InvalidParameter("delay inverse bracket blew up".into()));
            }
        }
        let mut a = 0.0;
        let mut b = hi;
        while b - a > 1e-12 {
            let mid = 0.5 * (a + b);
            if self.value(mid) < q {
                a = mid;
            } else {
                b = mid;
            }
        }
        Ok(0.5 * (a + b))
    }

    fn validate(&self) -> Result<(), Error> {
        let ok = match self {
            DelayFn::Affine { a, .. } => *a > 0.0,
            DelayFn::Bpr { alpha, beta, kappa } => *alpha > 0.0 && *beta > 0.0 && *kappa > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("delay parameters must be positive".into()))
        }
    }
}

/// Constant-matrix description of the set containing the payoff Jacobian.
#[derive(Debug, Clone)]
pub enum JacobianEnvelope {
    /// `J(x) in conv{A_1, ..., A_k}`.
    ConvHull(Vec<DMatrix<f64>>),
    /// `J(x) in cone{B_1, ..., B_s}`.
    Cone(Vec<DMatrix<f64>>),
    /// `J(x) = G_0 + sum gamma_i C_i D_i^T`, `gamma_i in [0, 1]`.
    Box {
        base: DMatrix<f64>,
        factors: Vec<BoxFactor>,
    },
    /// `J(x) in conv{A_i} + cone{B_j}`.
    Sum {
        vertices: Vec<DMatrix<f64>>,
        generators: Vec<DMatrix<f64>>,
    },
}

/// Rank factorization `G_i = left * right^T` with `left, right` of shape
/// `n x rank`.
#[derive(Debug, Clone)]
pub struct BoxFactor {
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
}

impl BoxFactor {
    pub fn rank(&self) -> usize {
        self.left.ncols()
    }

    pub fn product(&self) -> DMatrix<f64> {
        &self.left * self.right.transpose()
    }
}

/// Uniform interface consumed by the certifier and the simulator.
pub trait Game: Send + Sync {
    fn structure(&self) -> &Arc<PopulationStructure>;
    fn payoff(&self, x: &DVector<f64>) -> Result<DVector<f64>, Error>;
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, Error>;
    fn envelope(&self) -> Option<JacobianEnvelope> {
        None
    }
}

/// Central finite-difference Jacobian of a payoff map.
pub fn fd_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>, Error>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, Error>,
{
    let n = x.len();
    let f0 = f(x)?;
    let m = f0.len();
    let mut jac = DMatrix::zeros(m, n);
    for k in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        let col = (f(&xp)? - f(&xm)?) / (2.0 * h);
        jac.set_column(k, &col);
    }
    Ok(jac)
}

/// One origin-destination pair of the mixed-autonomy game: a route count and
/// the masses of its autonomous and regular populations.
#[derive(Debug, Clone, PartialEq)]
pub struct OdPair {
    pub routes: usize,
    pub mass_aut: f64,
    pub mass_reg: f64,
}

/// Congestion game with autonomous and regular vehicles. The social state is
/// `[x_aut; x_reg]` over `2 gamma` populations; autonomous flow contributes
/// to link congestion scaled by the headway factor `mu in (0, 1)`.
#[derive(Clone)]
pub struct MixedAutonomyGame {
    routing: DMatrix<f64>, // N x L, 0/1 entries
    delays: Vec<DelayFn>,
    mu: f64,
    structure: Arc<PopulationStructure>,
}

impl MixedAutonomyGame {
    pub fn new(
        routing: DMatrix<f64>,
        delays: Vec<DelayFn>,
        mu: f64,
        od: Vec<OdPair>,
    ) -> Result<Self, Error> {
        let (n_routes, n_links) = routing.shape();
        if delays.len() != n_links {
            return Err(Error::DimensionMismatch {
                expected: n_links,
                got: delays.len(),
            });
        }
        for d in &delays {
            d.validate()?;
        }
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::InvalidParameter(format!("mu must be in (0,1), got {mu}")));
        }
        if routing.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidParameter("routing entries must be 0/1".into()));
        }
        for i in 0..n_routes {
            if routing.row(i).iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidParameter(format!("route {i} uses no link")));
            }
        }
        let total_routes: usize = od.iter().map(|o| o.routes).sum();
        if total_routes != n_routes {
            return Err(Error::DimensionMismatch {
                expected: n_routes,
                got: total_routes,
            });
        }
        let mut counts: Vec<usize> = od.iter().map(|o| o.routes).collect();
        counts.extend(od.iter().map(|o| o.routes));
        let mut masses: Vec<f64> = od.iter().map(|o| o.mass_aut).collect();
        masses.extend(od.iter().map(|o| o.mass_reg));
        let structure = Arc::new(PopulationStructure::new(counts, masses)?);
        Ok(Self {
            routing,
            delays,
            mu,
            structure,
        })
    }

    /// Single OD pair with parallel links (`R = I`).
    pub fn parallel_links(
        delays: Vec<DelayFn>,
        mu: f64,
        mass_aut: f64,
        mass_reg: f64,
    ) -> Result<Self, Error> {
        let l = delays.len();
        Self::new(
            DMatrix::identity(l, l),
            delays,
            mu,
            vec![OdPair {
                routes: l,
                mass_aut,
                mass_reg,
            }],
        )
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn num_links(&self) -> usize {
        self.routing.ncols()
    }

    pub fn num_routes(&self) -> usize {
        self.routing.nrows()
    }

    pub fn routing(&self) -> &DMatrix<f64> {
        &self.routing
    }

    pub fn delays(&self) -> &[DelayFn] {
        &self.delays
    }

    /// Effective link flows `z = mu R^T x_aut + R^T x_reg`.
    pub fn link_flows(&self, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        let n_routes = self.num_routes();
        if x.len() != 2 * n_routes {
            return Err(Error::DimensionMismatch {
                expected: 2 * n_routes,
                got: x.len(),
            });
        }
        let x_aut = x.rows(0, n_routes);
        let x_reg = x.rows(n_routes, n_routes);
        Ok(self.routing.transpose() * (self.mu * x_aut + x_reg))
    }

    /// Maps per-link values to the duplicated route space: `[R; R] v`.
    pub fn stack_routes(&self, per_link: &DVector<f64>) -> DVector<f64> {
        let rv = &self.routing * per_link;
        let n_routes = self.num_routes();
        let mut out = DVector::zeros(2 * n_routes);
        out.rows_mut(0, n_routes).copy_from(&rv);
        out.rows_mut(n_routes, n_routes).copy_from(&rv);
        out
    }

    /// Per-population weights realizing `W = diag(mu I, I)`.
    pub fn canonical_weights(&self) -> Vec<f64> {
        let gamma = self.structure.num_populations() / 2;
        let mut w = vec![self.mu; gamma];
        w.extend(std::iter::repeat(1.0).take(gamma));
        w
    }

    /// Cone generators `B_l = -[R_l; R_l][mu R_l^T  R_l^T]` so that
    /// `J(x) = sum_l Phi_l'(z_l) B_l` with nonnegative coefficients.
    pub fn cone_generators(&self) -> Vec<DMatrix<f64>> {
        let n = self.structure.dim();
        let n_routes = self.num_routes();
        (0..self.num_links())
            .map(|l| {
                let col = self.routing.column(l);
                let mut left = DVector::zeros(n);
                let mut right = DVector::zeros(n);
                for i in 0..n_routes {
                    left[i] = col[i];
                    left[i + n_routes] = col[i];
                    right[i] = self.mu * col[i];
                    right[i + n_routes] = col[i];
                }
                -left * right.transpose()
            })
            .collect()
    }
}

impl Game for MixedAutonomyGame {
    fn structure(&self) -> &Arc<PopulationStructure> {
        &self.structure
    }

    fn payoff(&self, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        let z = self.link_flows(x)?;
        let delays = DVector::from_iterator(
            z.len(),
            z.iter().zip(&self.delays).map(|(&zl, d)| d.value(zl)),
        );
        Ok(-self.stack_routes(&delays))
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, Error> {
        let z = self.link_flows(x)?;
        let generators = self.cone_generators();
        let mut jac = DMatrix::zeros(self.structure.dim(), self.structure.dim());
        for (l, b) in generators.iter().enumerate() {
            jac += b * self.delays[l].derivative(z[l]);
        }
        Ok(jac)
    }

    fn envelope(&self) -> Option<JacobianEnvelope> {
        Some(JacobianEnvelope::Cone(self.cone_generators()))
    }
}

/// Bypassing near a road split: two populations (one per branch), each with
/// steadfast and bypassing strategies. State order is
/// `(x_s^1, x_b^1, x_s^2, x_b^2)`, masses normalized to `m^1 + m^2 = 1`.
#[derive(Debug, Clone)]
pub struct RoadSplitGame {
    traversal: [f64; 2],
    crossing: [f64; 2],
    detour: [f64; 2],
    structure: Arc<PopulationStructure>,
}

impl RoadSplitGame {
    pub fn new(
        traversal: [f64; 2],
        crossing: [f64; 2],
        detour: [f64; 2],
        masses: [f64; 2],
    ) -> Result<Self, Error> {
        if traversal.iter().any(|&c| c <= 0.0) || crossing.iter().any(|&c| c < 0.0) {
            return Err(Error::InvalidParameter("costs must be positive".into()));
        }
        if detour.iter().any(|&t| t <= 1.0) {
            return Err(Error::InvalidParameter("detour factors must exceed 1".into()));
        }
        if (masses[0] + masses[1] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("masses must sum to 1".into()));
        }
        let structure = Arc::new(PopulationStructure::new(vec![2, 2], masses.to_vec())?);
        Ok(Self {
            traversal,
            crossing,
            detour,
            structure,
        })
    }

    /// The paper-calibrated instance: unit costs, detour factor 2.7, equal
    /// masses.
    pub fn calibrated() -> Self {
        Self::new([1.0, 1.0], [1.0, 1.0], [2.7, 2.7], [0.5, 0.5]).unwrap()
    }

    /// Box decomposition of the Jacobian: `J(x) = G_0 + sum x_i C_i D_i^T`
    /// with the state coordinates as box coefficients.
    pub fn box_envelope(&self) -> (DMatrix<f64>, Vec<BoxFactor>) {
        let [c1t, c2t] = self.traversal;
        let [c1c, c2c] = self.crossing;
        let [th1, th2] = self.detour;
        let e = DMatrix::<f64>::identity(4, 4);
        let col = |i: usize| e.column(i).into_owned();
        let base = -DMatrix::from_row_slice(
            4,
            4,
            &[
                c1t, 0.0, 0.0, c1t,
                0.0, c2t * th1, c2t, 0.0,
                0.0, c2t, c2t, 0.0,
                c1t, 0.0, 0.0, c1t * th2,
            ],
        );
        let lane1 = col(0) + col(3); // e1 + e4
        let lane2 = col(1) + col(2); // e2 + e3
        let pack1 = |v: DVector<f64>| DMatrix::from_columns(&[v]);
        let pack2 = |a: DVector<f64>, b: DVector<f64>| DMatrix::from_columns(&[a, b]);
        let factors = vec![
            BoxFactor {
                left: pack1(-lane1.clone()),
                right: pack1(c1c * col(1)),
            },
            BoxFactor {
                left: pack2(-lane1.clone(), -lane2.clone()),
                right: pack2(c1c * &lane1, c2c * col(3)),
            },
            BoxFactor {
                left: pack1(-lane2.clone()),
                right: pack1(c2c * col(3)),
            },
            BoxFactor {
                left: pack2(-lane1.clone(), -lane2.clone()),
                right: pack2(c1c * col(1), c2c * &lane2),
            },
        ];
        (base, factors)
    }
}

impl Game for RoadSplitGame {
    fn structure(&self) -> &Arc<PopulationStructure> {
        &self.structure
    }

    fn payoff(&self, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        if x.len() != 4 {
            return Err(Error::DimensionMismatch { expected: 4, got: x.len() });
        }
        let (xs1, xb1, xs2, xb2) = (x[0], x[1], x[2], x[3]);
        let [c1t, c2t] = self.traversal;
        let [c1c, c2c] = self.crossing;
        let [th1, th2] = self.detour;
        let lane1 = xs1 + xb2;
        let lane2 = xs2 + xb1;
        Ok(-DVector::from_vec(vec![
            c1t * lane1 + c1c * xb1 * lane1,
            c2t * (xs2 + th1 * xb1) + c2c * xb2 * lane2,
            c2t * lane2 + c2c * xb2 * lane2,
            c1t * (xs1 + th2 * xb2) + c1c * xb1 * lane1,
        ]))
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, Error> {
        if x.len() != 4 {
            return Err(Error::DimensionMismatch { expected: 4, got: x.len() });
        }
        let (base, factors) = self.box_envelope();
        let mut jac = base;
        for (i, f) in factors.iter().enumerate() {
            jac += f.product() * x[i];
        }
        Ok(jac)
    }

    fn envelope(&self) -> Option<JacobianEnvelope> {
        let (base, factors) = self.box_envelope();
        Some(JacobianEnvelope::Box { base, factors })
    }
}

type PayoffFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacobianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// User-supplied payoff map with an optional analytic Jacobian; falls back
/// to central finite differences.
#[derive(Clone)]
pub struct GenericGame {
    structure: Arc<PopulationStructure>,
    payoff_fn: PayoffFn,
    jacobian_fn: Option<JacobianFn>,
    envelope: Option<JacobianEnvelope>,
}

pub const FD_STEP: f64 = 1e-6;

impl GenericGame {
    pub fn new(structure: Arc<PopulationStructure>, payoff_fn: PayoffFn) -> Self {
        Self {
            structure,
            payoff_fn,
            jacobian_fn: None,
            envelope: None,
        }
    }

    pub fn with_jacobian(mut self, jacobian_fn: JacobianFn) -> Self {
        self.jacobian_fn = Some(jacobian_fn);
        self
    }

    pub fn with_envelope(mut self, envelope: JacobianEnvelope) -> Self {
        self.envelope = Some(envelope);
        self
    }

    /// Relative mismatch between the analytic Jacobian and finite
    /// differences at `x`; above 1e-3 the supplied Jacobian is suspect.
    pub fn jacobian_consistency(&self, x: &DVector<f64>) -> Result<f64, Error> {
        let analytic = self.jacobian(x)?;
        let fd = fd_jacobian(|y| self.payoff(y), x, FD_STEP)?;
        let scale = analytic.amax().max(1.0);
        Ok((analytic - fd).amax() / scale)
    }
}

impl Game for GenericGame {
    fn structure(&self) -> &Arc<PopulationStructure> {
        &self.structure
    }

    fn payoff(&self, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        if x.len() != self.structure.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.structure.dim(),
                got: x.len(),
            });
        }
        Ok((self.payoff_fn)(x))
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, Error> {
        match &self.jacobian_fn {
            Some(j) => Ok(j(x)),
            None => fd_jacobian(|y| self.payoff(y), x, FD_STEP),
        }
    }

    fn envelope(&self) -> Option<JacobianEnvelope> {
        self.envelope.clone()
    }
}
