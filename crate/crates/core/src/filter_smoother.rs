//! Extended Kalman filtering and Rauch–Tung–Striebel smoothing over the
//! augmented `(U, X)` state, in dense-covariance and square-root form.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss_markov::{discretize, DiscreteTransition, GaussianDensity, LtiSde, SqrtGaussianDensity};
use crate::linalg::{
    all_finite, all_finite_vec, psd_sqrt, solve_lower_pinv, solve_lower_transpose_pinv, symmetrize, tria,
};
use crate::measurements::{ode_jacobian, ode_residual, DataModel, OdeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    Dense,
    #[default]
    SquareRoot,
}

/// A filtering or smoothing marginal in either representation.
#[derive(Debug, Clone, PartialEq)]
pub enum Marginal {
    Dense(GaussianDensity),
    Sqrt(SqrtGaussianDensity),
}

impl Marginal {
    pub fn mean(&self) -> &DVector<f64> {
        match self {
            Marginal::Dense(g) => &g.mean,
            Marginal::Sqrt(g) => &g.mean,
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        match self {
            Marginal::Dense(g) => g.cov.clone(),
            Marginal::Sqrt(g) => g.covariance(),
        }
    }

    pub fn to_dense(&self) -> GaussianDensity {
        match self {
            Marginal::Dense(g) => g.clone(),
            Marginal::Sqrt(g) => g.to_dense(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Index into the observation list.
    Data(usize),
    Ode,
}

/// One grid event: a data observation or an ODE pseudo-observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementEvent {
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub t: f64,
    pub predicted: Marginal,
    pub updated: Marginal,
    pub applied_events: Vec<EventKind>,
    /// Sum of data log-likelihood increments at this point (diagnostic only).
    pub loglik: f64,
    /// `‖h(m⁻)‖` of the ODE residual at the linearization point, if any.
    pub ode_residual_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PassStats {
    pub forward_passes: usize,
    pub backward_passes: usize,
    pub grid_points: usize,
    pub data_updates: usize,
    pub ode_updates: usize,
    pub dense_fallbacks: usize,
    pub distinct_steps: usize,
    /// Wall-clock timings; left out of serialized reports so that reruns
    /// are byte-identical.
    #[serde(skip)]
    pub forward_seconds: f64,
    #[serde(skip)]
    pub backward_seconds: f64,
    pub loglik: f64,
}

#[derive(Debug, Clone)]
pub struct PosteriorTrajectory {
    pub grid: Vec<f64>,
    pub filtered: Vec<FilterState>,
    pub smoothed: Vec<GaussianDensity>,
    /// Transition from point `j − 1` to `j`; `None` at `j = 0`.
    pub transitions: Vec<Option<Arc<DiscreteTransition>>>,
    pub mode: FilterMode,
    pub stats: PassStats,
}

impl PosteriorTrajectory {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn is_smoothed(&self) -> bool {
        self.smoothed.len() == self.grid.len()
    }
}

/// Time-stamped observations `y_n`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Observations {
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

/// Everything the filter needs besides the event times.
#[derive(Debug, Clone)]
pub struct InferenceModel {
    pub prior: LtiSde,
    pub data: Option<DataModel>,
    pub ode: Option<OdeModel>,
    pub mode: FilterMode,
}

fn check_dims(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::argument(format!(
            "{what} is {}x{}, expected {}x{}",
            got.0, got.1, want.0, want.1
        )));
    }
    Ok(())
}

/// `(Φ m, Φ P Φᵀ + Q)`.
pub fn predict(prior: &GaussianDensity, trans: &DiscreteTransition) -> Result<GaussianDensity> {
    let n = prior.dim();
    check_dims("transition", trans.transition.shape(), (n, n))?;
    check_dims("covariance", prior.cov.shape(), (n, n))?;
    let phi = &trans.transition;
    let cov = symmetrize(&(phi * &prior.cov * phi.transpose() + &trans.process_noise));
    Ok(GaussianDensity {
        mean: phi * &prior.mean,
        cov,
    })
}

fn gaussian_logpdf_from_chol(white: &DVector<f64>, log_diag_sum: f64, k: usize) -> f64 {
    -0.5 * (white.norm_squared() + 2.0 * log_diag_sum + k as f64 * (2.0 * PI).ln())
}

/// Conditions `pred` on the linear-Gaussian innovation `v` with Jacobian `h`
/// and noise `r`. Returns `None` when `S` is not numerically positive definite.
fn dense_condition(
    pred: &GaussianDensity,
    v: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    allow_jitter: bool,
) -> Option<(GaussianDensity, f64)> {
    let k = v.len();
    let ph = &pred.cov * h.transpose();
    let mut s = symmetrize(&(h * &ph + r));
    let chol = match s.clone().cholesky() {
        Some(c) => c,
        None if allow_jitter => {
            let jitter = 1e-12 * s.trace().abs().max(f64::MIN_POSITIVE) / k as f64;
            for i in 0..k {
                s[(i, i)] += jitter;
            }
            s.clone().cholesky()?
        }
        None => return None,
    };
    // K = P Hᵀ S⁻¹, via S Kᵀ = H P.
    let gain = chol.solve(&ph.transpose()).transpose();
    let mean = &pred.mean + &gain * v;
    let cov = symmetrize(&(&pred.cov - &gain * &s * gain.transpose()));
    let l = chol.l();
    let white = l.solve_lower_triangular(v)?;
    let log_diag: f64 = l.diagonal().iter().map(|d| d.ln()).sum();
    if !all_finite_vec(&mean) || !all_finite(&cov) {
        return None;
    }
    Some((GaussianDensity { mean, cov }, gaussian_logpdf_from_chol(&white, log_diag, k)))
}

/// Kalman update on `y = H x + ε`, `ε ~ N(0, R)`; also returns `log N(v; 0, S)`.
pub fn update_data(
    pred: &GaussianDensity,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    t: f64,
) -> Result<(GaussianDensity, f64)> {
    let n = pred.dim();
    let k = y.len();
    check_dims("observation matrix", h.shape(), (k, n))?;
    check_dims("observation noise", r.shape(), (k, k))?;
    let v = y - h * &pred.mean;
    dense_condition(pred, &v, h, r, true)
        .ok_or_else(|| Error::numerical(t, "innovation covariance of the data update is singular"))
}

/// EKF update on the pseudo-observation `0 = h(x) + ε`, `ε ~ N(0, λ² I)`,
/// linearized at the predicted mean. Returns the posterior and `‖h(m⁻)‖`.
pub fn update_ode<H, J>(pred: &GaussianDensity, h: H, dh: J, lambda2: f64, t: f64) -> Result<(GaussianDensity, f64)>
where
    H: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    J: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    if !(lambda2 >= 0.0) {
        return Err(Error::argument(format!("λ² must be >= 0, got {lambda2}")));
    }
    let resid = h(&pred.mean).map_err(|e| e.at_time(t))?;
    let jac = dh(&pred.mean).map_err(|e| e.at_time(t))?;
    check_dims("ODE Jacobian", jac.shape(), (resid.len(), pred.dim()))?;
    let k = resid.len();
    let r = DMatrix::identity(k, k) * lambda2;
    let v = -&resid;
    match dense_condition(pred, &v, &jac, &r, lambda2 > 0.0) {
        Some((post, _)) => Ok((post, resid.norm())),
        None => Err(Error::numerical(
            t,
            "innovation covariance of the ODE update is singular; use the square-root filter",
        )),
    }
}

/// Square-root prediction: `L⁻ = tria([Φ L, Q^{1/2}])`.
pub fn sqrt_predict(prior: &SqrtGaussianDensity, trans: &DiscreteTransition) -> Result<SqrtGaussianDensity> {
    let n = prior.mean.len();
    check_dims("transition", trans.transition.shape(), (n, n))?;
    check_dims("covariance factor", prior.cov_sqrt.shape(), (n, n))?;
    let q_s = trans.process_noise_sqrt()?;
    let mut stacked = DMatrix::zeros(n, 2 * n);
    stacked
        .view_mut((0, 0), (n, n))
        .copy_from(&(&trans.transition * &prior.cov_sqrt));
    stacked.view_mut((0, n), (n, n)).copy_from(q_s);
    Ok(SqrtGaussianDensity {
        mean: &trans.transition * &prior.mean,
        cov_sqrt: tria(&stacked),
    })
}

/// Square-root conditioning through one QR of the stacked array
/// `[[R^{1/2}, H L⁻], [0, L⁻]]`, whose triangular factor is
/// `[[S^{1/2}, 0], [K̄, L]]` with `K = K̄ S^{-1/2}`.
fn sqrt_condition(
    pred: &SqrtGaussianDensity,
    v: &DVector<f64>,
    h: &DMatrix<f64>,
    r_sqrt: &DMatrix<f64>,
) -> Result<(SqrtGaussianDensity, f64)> {
    let n = pred.mean.len();
    let k = v.len();
    let mut pre = DMatrix::zeros(k + n, k + n);
    pre.view_mut((0, 0), (k, k)).copy_from(r_sqrt);
    pre.view_mut((0, k), (k, n)).copy_from(&(h * &pred.cov_sqrt));
    pre.view_mut((k, k), (n, n)).copy_from(&pred.cov_sqrt);
    let post = tria(&pre);
    let s_sqrt = post.view((0, 0), (k, k)).into_owned();
    let kbar = post.view((k, 0), (n, k)).into_owned();
    let cov_sqrt = post.view((k, k), (n, n)).into_owned();
    let white = solve_lower_pinv(&s_sqrt, &DMatrix::from_column_slice(k, 1, v.as_slice()));
    let mean = &pred.mean + &kbar * &white.column(0);
    let scale = (0..k).fold(0.0_f64, |a, i| a.max(s_sqrt[(i, i)]));
    let informative: Vec<usize> = (0..k).filter(|&i| s_sqrt[(i, i)] > 1e-13 * scale).collect();
    let log_diag: f64 = informative.iter().map(|&i| s_sqrt[(i, i)].ln()).sum();
    let loglik = gaussian_logpdf_from_chol(&white.column(0).into_owned(), log_diag, informative.len());
    if !all_finite_vec(&mean) || !all_finite(&cov_sqrt) {
        return Err(Error::numerical(f64::NAN, "square-root update produced non-finite values"));
    }
    Ok((SqrtGaussianDensity { mean, cov_sqrt }, loglik))
}

pub fn sqrt_update_data(
    pred: &SqrtGaussianDensity,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    r_sqrt: &DMatrix<f64>,
    t: f64,
) -> Result<(SqrtGaussianDensity, f64)> {
    let n = pred.mean.len();
    let k = y.len();
    check_dims("observation matrix", h.shape(), (k, n))?;
    check_dims("observation noise factor", r_sqrt.shape(), (k, k))?;
    let v = y - h * &pred.mean;
    sqrt_condition(pred, &v, h, r_sqrt).map_err(|e| e.at_time(t))
}

pub fn sqrt_update_ode<H, J>(
    pred: &SqrtGaussianDensity,
    h: H,
    dh: J,
    lambda2: f64,
    t: f64,
) -> Result<(SqrtGaussianDensity, f64)>
where
    H: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    J: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    if !(lambda2 >= 0.0) {
        return Err(Error::argument(format!("λ² must be >= 0, got {lambda2}")));
    }
    let resid = h(&pred.mean).map_err(|e| e.at_time(t))?;
    let jac = dh(&pred.mean).map_err(|e| e.at_time(t))?;
    check_dims("ODE Jacobian", jac.shape(), (resid.len(), pred.mean.len()))?;
    let k = resid.len();
    let r_sqrt = DMatrix::identity(k, k) * lambda2.sqrt();
    let (post, _) = sqrt_condition(pred, &(-&resid), &jac, &r_sqrt).map_err(|e| e.at_time(t))?;
    Ok((post, resid.norm()))
}

/// Merge data and ODE times into one sorted grid with the events at each
/// point. Times within `1e-9·max(1, |t|)` are treated as the same point; data
/// is listed before the ODE event.
pub fn merge_events(ode_times: &[f64], data_times: &[f64]) -> Result<Vec<(f64, Vec<EventKind>)>> {
    let mut all: Vec<MeasurementEvent> = data_times
        .iter()
        .enumerate()
        .map(|(i, &t)| MeasurementEvent {
            t,
            kind: EventKind::Data(i),
        })
        .chain(ode_times.iter().map(|&t| MeasurementEvent { t, kind: EventKind::Ode }))
        .collect();
    if let Some(e) = all.iter().find(|e| !e.t.is_finite()) {
        return Err(Error::argument(format!("non-finite event time {}", e.t)));
    }
    all.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| rank(a.kind).cmp(&rank(b.kind))));
    let mut out: Vec<(f64, Vec<EventKind>)> = Vec::new();
    for e in all {
        match out.last_mut() {
            Some((t, kinds)) if (e.t - *t).abs() <= 1e-9 * t.abs().max(1.0) => {
                if e.kind == EventKind::Ode {
                    // Prefer the ODE grid's time stamp; it is the exact grid value.
                    *t = e.t;
                    if kinds.contains(&EventKind::Ode) {
                        continue;
                    }
                }
                kinds.push(e.kind);
                kinds.sort_by_key(|k| rank(*k));
            }
            _ => out.push((e.t, vec![e.kind])),
        }
    }
    Ok(out)
}

fn rank(k: EventKind) -> (u8, usize) {
    match k {
        EventKind::Data(i) => (0, i),
        EventKind::Ode => (1, 0),
    }
}

struct TransitionCache<'a> {
    prior: &'a LtiSde,
    cache: HashMap<u64, Arc<DiscreteTransition>>,
}

impl TransitionCache<'_> {
    fn get(&mut self, dt: f64) -> Result<Arc<DiscreteTransition>> {
        if let Some(tr) = self.cache.get(&dt.to_bits()) {
            return Ok(tr.clone());
        }
        let tr = Arc::new(discretize(self.prior, dt)?);
        self.cache.insert(dt.to_bits(), tr.clone());
        Ok(tr)
    }
}

/// Forward pass: at each grid point one prediction, then the data update,
/// then the ODE update.
pub fn filter_pass(
    model: &InferenceModel,
    ode_times: &[f64],
    observations: &Observations,
    initial: &GaussianDensity,
) -> Result<PosteriorTrajectory> {
    let start = Instant::now();
    let n = model.prior.state_dim();
    if initial.dim() != n {
        return Err(Error::argument(format!(
            "initial density has dimension {}, prior has {n}",
            initial.dim()
        )));
    }
    initial.validate()?;
    if observations.times.len() != observations.values.len() {
        return Err(Error::argument("observation times and values differ in length"));
    }
    if !observations.times.is_empty() && model.data.is_none() {
        return Err(Error::argument("observations given without a data model"));
    }
    if !ode_times.is_empty() && model.ode.is_none() {
        return Err(Error::argument("ODE times given without an ODE model"));
    }
    if let Some(dm) = &model.data {
        check_dims("observation matrix", (dm.h.nrows(), dm.h.ncols()), (dm.h.nrows(), n))?;
        if let Some(y) = observations.values.iter().find(|y| y.len() != dm.h.nrows()) {
            return Err(Error::argument(format!(
                "observation has length {}, data model expects {}",
                y.len(),
                dm.h.nrows()
            )));
        }
    }
    let events = merge_events(ode_times, &observations.times)?;
    if events.is_empty() {
        return Err(Error::argument("no grid points"));
    }
    let r_sqrt = match (&model.data, model.mode) {
        (Some(dm), FilterMode::SquareRoot) => Some(psd_sqrt(&dm.r)?),
        _ => None,
    };

    let mut cache = TransitionCache {
        prior: &model.prior,
        cache: HashMap::new(),
    };
    let mut stats = PassStats {
        forward_passes: 1,
        grid_points: events.len(),
        ..Default::default()
    };
    let mut grid = Vec::with_capacity(events.len());
    let mut filtered: Vec<FilterState> = Vec::with_capacity(events.len());
    let mut transitions = Vec::with_capacity(events.len());

    let mut current = match model.mode {
        FilterMode::Dense => Marginal::Dense(initial.clone()),
        FilterMode::SquareRoot => Marginal::Sqrt(SqrtGaussianDensity::from_dense(initial)?),
    };

    for (j, (t, kinds)) in events.iter().enumerate() {
        let t = *t;
        let (predicted, trans) = if j == 0 {
            (current.clone(), None)
        } else {
            let dt = t - grid[j - 1];
            let tr = cache.get(dt)?;
            let p = match &current {
                Marginal::Dense(g) => Marginal::Dense(predict(g, &tr)?),
                Marginal::Sqrt(g) => Marginal::Sqrt(sqrt_predict(g, &tr).map_err(|e| e.at_time(t))?),
            };
            (p, Some(tr))
        };
        let mut updated = predicted.clone();
        let mut loglik = 0.0;
        let mut residual_norm = None;
        for kind in kinds {
            match *kind {
                EventKind::Data(i) => {
                    let dm = model.data.as_ref().expect("checked above");
                    let y = &observations.values[i];
                    let (post, ll) = match &updated {
                        Marginal::Dense(g) => {
                            let (p, ll) = update_data(g, y, &dm.h, &dm.r, t)?;
                            (Marginal::Dense(p), ll)
                        }
                        Marginal::Sqrt(g) => {
                            let rs = r_sqrt.as_ref().expect("set for square-root mode");
                            let (p, ll) = sqrt_update_data(g, y, &dm.h, rs, t)?;
                            (Marginal::Sqrt(p), ll)
                        }
                    };
                    updated = post;
                    loglik += ll;
                    stats.data_updates += 1;
                }
                EventKind::Ode => {
                    let om = model.ode.as_ref().expect("checked above");
                    let h = |m: &DVector<f64>| ode_residual(om, m);
                    let dh = |m: &DVector<f64>| ode_jacobian(om, m);
                    let (post, norm) = match &updated {
                        Marginal::Dense(g) => match update_ode(g, h, dh, om.ode_noise, t) {
                            Ok((p, norm)) => (Marginal::Dense(p), norm),
                            Err(Error::Numerical { .. }) if om.ode_noise == 0.0 => {
                                // Dirac likelihood with a rank-deficient S: redo this
                                // update in square-root form.
                                stats.dense_fallbacks += 1;
                                let sq = SqrtGaussianDensity::from_dense(g).map_err(|e| e.at_time(t))?;
                                let (p, norm) = sqrt_update_ode(&sq, h, dh, om.ode_noise, t)?;
                                (Marginal::Dense(p.to_dense()), norm)
                            }
                            Err(e) => return Err(e),
                        },
                        Marginal::Sqrt(g) => {
                            let (p, norm) = sqrt_update_ode(g, h, dh, om.ode_noise, t)?;
                            (Marginal::Sqrt(p), norm)
                        }
                    };
                    updated = post;
                    residual_norm = Some(norm);
                    stats.ode_updates += 1;
                }
            }
        }
        stats.loglik += loglik;
        grid.push(t);
        transitions.push(trans);
        filtered.push(FilterState {
            t,
            predicted,
            updated: updated.clone(),
            applied_events: kinds.clone(),
            loglik,
            ode_residual_norm: residual_norm,
        });
        current = updated;
    }
    stats.distinct_steps = cache.cache.len();
    stats.forward_seconds = start.elapsed().as_secs_f64();
    Ok(PosteriorTrajectory {
        grid,
        filtered,
        smoothed: Vec::new(),
        transitions,
        mode: model.mode,
        stats,
    })
}

/// Backward Rauch–Tung–Striebel pass with gain `G_j = P_j Φᵀ (P⁻_{j+1})⁻¹`.
pub fn rts_smooth(traj: &mut PosteriorTrajectory) -> Result<()> {
    let start = Instant::now();
    let len = traj.filtered.len();
    if len == 0 {
        return Err(Error::argument("empty trajectory"));
    }
    let mut smoothed: Vec<Marginal> = Vec::with_capacity(len);
    smoothed.push(traj.filtered[len - 1].updated.clone());
    for j in (0..len - 1).rev() {
        let t = traj.grid[j];
        let tr = traj.transitions[j + 1].as_ref().expect("interior transition");
        let next = smoothed.last().expect("non-empty");
        let s = match (&traj.filtered[j].updated, &traj.filtered[j + 1].predicted, next) {
            (Marginal::Dense(f), Marginal::Dense(p), Marginal::Dense(s)) => Marginal::Dense(dense_rts_step(f, p, s, tr, t)?),
            (Marginal::Sqrt(f), Marginal::Sqrt(p), Marginal::Sqrt(s)) => Marginal::Sqrt(sqrt_rts_step(f, p, s, tr)?),
            _ => return Err(Error::argument("mixed marginal representations in trajectory")),
        };
        smoothed.push(s);
    }
    smoothed.reverse();
    traj.smoothed = smoothed.iter().map(Marginal::to_dense).collect();
    traj.stats.backward_passes += 1;
    traj.stats.backward_seconds = start.elapsed().as_secs_f64();
    Ok(())
}

fn dense_rts_step(
    filt: &GaussianDensity,
    pred: &GaussianDensity,
    next: &GaussianDensity,
    tr: &DiscreteTransition,
    t: f64,
) -> Result<GaussianDensity> {
    let chol = symmetrize(&pred.cov).cholesky().ok_or_else(|| {
        Error::numerical(t, "predicted covariance is singular in the smoother; use the square-root filter")
    })?;
    // P⁻ Gᵀ = Φ P
    let gain = chol.solve(&(&tr.transition * &filt.cov)).transpose();
    let mean = &filt.mean + &gain * (&next.mean - &pred.mean);
    let cov = symmetrize(&(&filt.cov + &gain * (&next.cov - &pred.cov) * gain.transpose()));
    Ok(GaussianDensity { mean, cov })
}

fn sqrt_rts_step(
    filt: &SqrtGaussianDensity,
    pred: &SqrtGaussianDensity,
    next: &SqrtGaussianDensity,
    tr: &DiscreteTransition,
) -> Result<SqrtGaussianDensity> {
    let n = filt.mean.len();
    let phi = &tr.transition;
    let p_f = &filt.cov_sqrt * filt.cov_sqrt.transpose();
    // Gᵀ = L⁻ᵀ L⁻¹ Φ P, with negligible pivots of L⁻ treated as null directions.
    let half = solve_lower_pinv(&pred.cov_sqrt, &(phi * &p_f));
    let gain = solve_lower_transpose_pinv(&pred.cov_sqrt, &half).transpose();
    let mean = &filt.mean + &gain * (&next.mean - &pred.mean);
    let q_s = tr.process_noise_sqrt()?;
    let mut stacked = DMatrix::zeros(n, 3 * n);
    let a = (DMatrix::identity(n, n) - &gain * phi) * &filt.cov_sqrt;
    stacked.view_mut((0, 0), (n, n)).copy_from(&a);
    stacked.view_mut((0, n), (n, n)).copy_from(&(&gain * q_s));
    stacked.view_mut((0, 2 * n), (n, n)).copy_from(&(&gain * &next.cov_sqrt));
    Ok(SqrtGaussianDensity {
        mean,
        cov_sqrt: tria(&stacked),
    })
}

/// Filter then smooth: a single forward and a single backward pass.
pub fn infer(
    model: &InferenceModel,
    ode_times: &[f64],
    observations: &Observations,
    initial: &GaussianDensity,
) -> Result<PosteriorTrajectory> {
    let mut traj = filter_pass(model, ode_times, observations, initial)?;
    rts_smooth(&mut traj)?;
    Ok(traj)
}
