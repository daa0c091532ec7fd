//! Linear process model, the Lyapunov and Riccati covariance operators, the
//! steady-state local error covariance and the sensor/remote estimator
//! recursions.
//!
//! The remote covariance only ever takes values in `{P̄, h(P̄), h²(P̄), …}`,
//! so [`SteadyState`] memoizes the powers `h^i(P̄)` and their traces.

use std::sync::RwLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default relative entrywise step tolerance for [`steady_state_cov`].
pub const STEADY_STATE_TOL: f64 = 1e-10;
/// Default iteration cap for [`steady_state_cov`].
pub const STEADY_STATE_MAX_ITER: usize = 1_000_000;

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;
const RANK_RTOL: f64 = 1e-8;

/// Discrete-time LTI process `x' = Ax + w`, `y = Cx + v` together with the
/// low-power packet arrival rate of the sensor link.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    pi0: DMatrix<f64>,
    lambda: f64,
}

impl SystemModel {
    /// Validates dimensions, noise covariances, observability of `(A, C)`,
    /// controllability of `(A, Q^{1/2})` and `0 < lambda < 1`.
    pub fn new(
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        pi0: DMatrix<f64>,
        lambda: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::InvalidModel("A must be a non-empty square matrix".into()));
        }
        let m = c.nrows();
        check_shape("C", &c, m, n)?;
        if m == 0 {
            return Err(Error::InvalidModel("C must have at least one row".into()));
        }
        check_shape("Q", &q, n, n)?;
        check_shape("R", &r, m, m)?;
        check_shape("Pi0", &pi0, n, n)?;
        for (name, mat) in [("A", &a), ("C", &c), ("Q", &q), ("R", &r), ("Pi0", &pi0)] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("{name} has non-finite entries")));
            }
        }
        check_psd("Q", &q)?;
        check_psd("Pi0", &pi0)?;
        check_symmetric("R", &r)?;
        if r.clone().cholesky().is_none() {
            return Err(Error::InvalidModel("R must be positive definite".into()));
        }
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidModel(format!(
                "arrival rate lambda must lie in (0, 1), got {lambda}"
            )));
        }

        let obs = observability_matrix(&a, &c);
        if numerical_rank(&obs) < n {
            return Err(Error::InvalidModel("(A, C) is not observable".into()));
        }
        let ctrb = controllability_matrix(&a, &psd_sqrt(&q));
        if numerical_rank(&ctrb) < n {
            return Err(Error::InvalidModel("(A, Q^1/2) is not controllable".into()));
        }

        Ok(Self {
            a,
            c,
            q,
            r,
            pi0,
            lambda,
        })
    }

    /// Scalar model with `Pi0 = Q`.
    pub fn scalar(a: f64, c: f64, q: f64, r: f64, lambda: f64) -> Result<Self> {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        Self::new(m(a), m(c), m(q), m(r), m(q), lambda)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn pi0(&self) -> &DMatrix<f64> {
        &self.pi0
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Copy of the model with a different low-power arrival rate.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidModel(format!(
                "arrival rate lambda must lie in (0, 1), got {lambda}"
            )));
        }
        Ok(Self { lambda, ..self.clone() })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Largest eigenvalue modulus of `A`.
    pub fn spectral_radius(&self) -> f64 {
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// `h(X) = AXA' + Q`.
    pub fn lyapunov_h(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_shape("X", x, self.state_dim(), self.state_dim())?;
        Ok(lyapunov(&self.a, &self.q, x))
    }

    /// `g̃(X) = X − XC'[CXC' + R]⁻¹CX`.
    pub fn riccati_gtilde(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_shape("X", x, self.state_dim(), self.state_dim())?;
        Ok(riccati(&self.c, &self.r, x))
    }
}

fn check_shape(name: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::DimensionMismatch {
            expected: format!("{name}: {rows}x{cols}"),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::InvalidModel(format!(
            "{name} is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    check_symmetric(name, m)?;
    let min_eig = symmetrize(m.clone())
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -PSD_TOL {
        return Err(Error::InvalidModel(format!(
            "{name} is not positive semi-definite (min eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

pub(crate) fn symmetrize(x: DMatrix<f64>) -> DMatrix<f64> {
    let xt = x.transpose();
    (x + xt) * 0.5
}

fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(a * x * a.transpose() + q)
}

fn riccati(c: &DMatrix<f64>, r: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let xct = x * c.transpose();
    let s = c * &xct + r;
    // S is positive definite because R is.
    let gain_t = s
        .cholesky()
        .expect("CXC' + R is positive definite")
        .solve(&xct.transpose());
    symmetrize(x - xct * gain_t)
}

/// Symmetric square root with negative eigenvalues clamped to zero, so that
/// singular PSD covariances are accepted.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m.clone()).symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = c.nrows();
    let mut obs = DMatrix::zeros(m * n, n);
    let mut block = c.clone();
    for i in 0..n {
        obs.view_mut((i * m, 0), (m, n)).copy_from(&block);
        block = &block * a;
    }
    obs
}

fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let k = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * k);
    let mut block = b.clone();
    for i in 0..n {
        ctrb.view_mut((0, i * k), (n, k)).copy_from(&block);
        block = a * &block;
    }
    ctrb
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_RTOL * smax).count()
}

/// Steady-state local error covariance `P̄` with a lazily extended cache of
/// `h^i(P̄)` and their traces.
///
/// The cache sits behind a lock so a `SteadyState` can be shared across
/// threads; entries are never modified once written.
#[derive(Debug)]
pub struct SteadyState {
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    pbar: DMatrix<f64>,
    iterations: usize,
    cache: RwLock<HPowers>,
}

#[derive(Debug, Clone)]
struct HPowers {
    mats: Vec<DMatrix<f64>>,
    traces: Vec<f64>,
}

impl Clone for SteadyState {
    fn clone(&self) -> Self {
        Self {
            a: self.a.clone(),
            q: self.q.clone(),
            pbar: self.pbar.clone(),
            iterations: self.iterations,
            cache: RwLock::new(self.cache.read().expect("h-power cache poisoned").clone()),
        }
    }
}

impl SteadyState {
    fn new(model: &SystemModel, pbar: DMatrix<f64>, iterations: usize) -> Self {
        let trace = pbar.trace();
        Self {
            a: model.a.clone(),
            q: model.q.clone(),
            cache: RwLock::new(HPowers {
                mats: vec![pbar.clone()],
                traces: vec![trace],
            }),
            pbar,
            iterations,
        }
    }

    pub fn pbar(&self) -> &DMatrix<f64> {
        &self.pbar
    }

    /// Fixed-point iterations used by the solver.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    fn ensure(&self, i: usize) {
        if self.cache.read().expect("h-power cache poisoned").mats.len() > i {
            return;
        }
        let mut cache = self.cache.write().expect("h-power cache poisoned");
        while cache.mats.len() <= i {
            let next = lyapunov(&self.a, &self.q, cache.mats.last().expect("cache holds P̄"));
            cache.traces.push(next.trace());
            cache.mats.push(next);
        }
    }

    /// `h^i(P̄)`, with `h^0(P̄) = P̄`.
    pub fn h_power(&self, i: usize) -> DMatrix<f64> {
        self.ensure(i);
        self.cache.read().expect("h-power cache poisoned").mats[i].clone()
    }

    /// `Tr(h^i(P̄))`.
    pub fn h_power_trace(&self, i: usize) -> f64 {
        self.ensure(i);
        self.cache.read().expect("h-power cache poisoned").traces[i]
    }

    /// `Tr(h^i(P̄))` for `i = 0..len`.
    pub fn h_power_traces(&self, len: usize) -> Vec<f64> {
        if len == 0 {
            return Vec::new();
        }
        self.ensure(len - 1);
        self.cache.read().expect("h-power cache poisoned").traces[..len].to_vec()
    }
}

/// Iterates `X ← g̃(h(X))` from `Pi0` until no entry moves by more than
/// `tol · max(1, max|X|)`.
pub fn steady_state_cov(model: &SystemModel, tol: f64, max_iter: usize) -> Result<SteadyState> {
    if !(tol > 0.0) {
        return Err(Error::InvalidModel(format!("tolerance must be positive, got {tol}")));
    }
    let mut x = symmetrize(model.pi0.clone());
    let mut last_step = f64::INFINITY;
    for iter in 1..=max_iter {
        let next = riccati(&model.c, &model.r, &lyapunov(&model.a, &model.q, &x));
        last_step = (&next - &x).amax();
        x = next;
        if !last_step.is_finite() {
            break;
        }
        if last_step < tol * x.amax().max(1.0) {
            return Ok(SteadyState::new(model, x, iter));
        }
    }
    Err(Error::DivergedSolver {
        iterations: max_iter,
        last_step,
    })
}

/// [`steady_state_cov`] with the default tolerance and iteration cap.
pub fn steady_state(model: &SystemModel) -> Result<SteadyState> {
    steady_state_cov(model, STEADY_STATE_TOL, STEADY_STATE_MAX_ITER)
}

/// One predict/update cycle of the sensor's Kalman filter.
///
/// The returned covariance equals `g̃(h(prior_cov))`.
pub fn kalman_sensor_step(
    model: &SystemModel,
    prior_estimate: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = model.state_dim();
    let m = model.output_dim();
    if prior_estimate.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("estimate of length {n}"),
            got: prior_estimate.len().to_string(),
        });
    }
    if y.len() != m {
        return Err(Error::DimensionMismatch {
            expected: format!("measurement of length {m}"),
            got: y.len().to_string(),
        });
    }
    let pred_cov = model.lyapunov_h(prior_cov)?;
    let pred = &model.a * prior_estimate;
    Ok(kalman_update(model, pred, &pred_cov, y))
}

fn kalman_update(
    model: &SystemModel,
    pred: DVector<f64>,
    pred_cov: &DMatrix<f64>,
    y: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let pct = pred_cov * model.c.transpose();
    let s = &model.c * &pct + &model.r;
    let chol = s.cholesky().expect("CPC' + R is positive definite");
    let innovation = y - &model.c * &pred;
    let estimate = &pred + &pct * chol.solve(&innovation);
    let cov = riccati(&model.c, &model.r, pred_cov);
    (estimate, cov)
}

/// Sensor filter running at steady state: the gain is fixed by `h(P̄)` and the
/// posterior covariance stays at `P̄`.
#[derive(Debug, Clone)]
pub(crate) struct SteadyKalman {
    gain: DMatrix<f64>,
}

impl SteadyKalman {
    pub(crate) fn new(model: &SystemModel, ss: &SteadyState) -> Self {
        let pred_cov = lyapunov(&model.a, &model.q, ss.pbar());
        let pct = &pred_cov * model.c.transpose();
        let s = &model.c * &pct + &model.r;
        let gain = s
            .cholesky()
            .expect("CPC' + R is positive definite")
            .solve(&pct.transpose())
            .transpose();
        Self { gain }
    }

    pub(crate) fn step(&self, model: &SystemModel, prev: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let pred = &model.a * prev;
        let innovation = y - &model.c * &pred;
        pred + &self.gain * innovation
    }
}

/// Remote estimator state: estimate, error covariance and holding time since
/// the last arrival.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub xhat: DVector<f64>,
    pub p: DMatrix<f64>,
    pub tau: usize,
}

impl EstimatorState {
    /// Estimator that has just received a packet carrying `xhat`.
    pub fn synced(xhat: DVector<f64>, ss: &SteadyState) -> Self {
        Self {
            xhat,
            p: ss.pbar().clone(),
            tau: 0,
        }
    }
}

/// Remote estimator recursion: adopt the sensor estimate on arrival,
/// otherwise propagate open loop.
pub fn remote_update(
    state: &EstimatorState,
    arrived: bool,
    sensor_estimate: &DVector<f64>,
    model: &SystemModel,
    ss: &SteadyState,
) -> EstimatorState {
    if arrived {
        EstimatorState {
            xhat: sensor_estimate.clone(),
            p: ss.pbar().clone(),
            tau: 0,
        }
    } else {
        EstimatorState {
            xhat: &model.a * &state.xhat,
            p: lyapunov(&model.a, &model.q, &state.p),
            tau: state.tau + 1,
        }
    }
}
