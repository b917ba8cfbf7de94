//! Gauss–Markov priors as linear time-invariant SDEs
//!
//! `dX = F X dt + L dW`, with `W` a Wiener process whose channels carry
//! independent diffusion intensities. A prior discretizes exactly into a
//! linear-Gaussian transition `X(t + Δt) | X(t) ~ N(Φ(Δt) X(t), Q(Δt))`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, block_diag, max_abs, psd_sqrt, symmetrize};

/// Structural tag that lets `discretize` pick a closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorStructure {
    /// ν-times integrated Wiener process on ℝ^d, derivative-major ordering.
    IntegratedWiener { dim: usize, derivatives: usize },
    Matern32 { lengthscale: f64 },
    /// Independent sub-models stacked block-diagonally, in order.
    Augmented(Vec<LtiSde>),
    General,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LtiSde {
    drift: DMatrix<f64>,
    dispersion: DMatrix<f64>,
    diffusion: DVector<f64>,
    structure: PriorStructure,
}

impl LtiSde {
    /// A general LTI SDE. Diffusion intensities must be finite and ≥ 0; a zero
    /// channel is a noise-free degenerate prior.
    pub fn new(drift: DMatrix<f64>, dispersion: DMatrix<f64>, diffusion: DVector<f64>) -> Result<Self> {
        Self::with_structure(drift, dispersion, diffusion, PriorStructure::General)
    }

    fn with_structure(
        drift: DMatrix<f64>,
        dispersion: DMatrix<f64>,
        diffusion: DVector<f64>,
        structure: PriorStructure,
    ) -> Result<Self> {
        let n = drift.nrows();
        if drift.ncols() != n {
            return Err(Error::argument(format!(
                "drift must be square, got {}x{}",
                n,
                drift.ncols()
            )));
        }
        if dispersion.nrows() != n {
            return Err(Error::argument(format!(
                "dispersion must have {} rows, got {}",
                n,
                dispersion.nrows()
            )));
        }
        if diffusion.len() != dispersion.ncols() {
            return Err(Error::argument(format!(
                "expected {} diffusion intensities, got {}",
                dispersion.ncols(),
                diffusion.len()
            )));
        }
        if diffusion.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::argument("diffusion intensities must be finite and non-negative"));
        }
        if !linalg::all_finite(&drift) || !linalg::all_finite(&dispersion) {
            return Err(Error::argument("drift and dispersion must be finite"));
        }
        Ok(Self {
            drift,
            dispersion,
            diffusion,
            structure,
        })
    }

    pub fn drift(&self) -> &DMatrix<f64> {
        &self.drift
    }

    pub fn dispersion(&self) -> &DMatrix<f64> {
        &self.dispersion
    }

    pub fn diffusion(&self) -> &DVector<f64> {
        &self.diffusion
    }

    pub fn structure(&self) -> &PriorStructure {
        &self.structure
    }

    pub fn state_dim(&self) -> usize {
        self.drift.nrows()
    }

    pub fn wiener_dim(&self) -> usize {
        self.dispersion.ncols()
    }

    /// `L diag(σ²) Lᵀ`.
    pub fn noise_gram(&self) -> DMatrix<f64> {
        let scaled = &self.dispersion * DMatrix::from_diagonal(&self.diffusion);
        scaled * self.dispersion.transpose()
    }

    /// Stationary covariance `P∞` solving `F P∞ + P∞ Fᵀ + L σ² Lᵀ = 0`.
    ///
    /// Fails for priors without a stationary law (e.g. integrated Wiener).
    pub fn stationary_covariance(&self) -> Result<DMatrix<f64>> {
        if let PriorStructure::Augmented(blocks) = &self.structure {
            let covs = blocks
                .iter()
                .map(|b| b.stationary_covariance())
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&DMatrix<f64>> = covs.iter().collect();
            return Ok(block_diag(&refs));
        }
        let n = self.state_dim();
        if n == 0 {
            return Ok(DMatrix::zeros(0, 0));
        }
        let eye = DMatrix::<f64>::identity(n, n);
        // vec(F P + P Fᵀ) = (I ⊗ F + F ⊗ I) vec(P), column-major vec.
        let op = eye.kronecker(&self.drift) + self.drift.kronecker(&eye);
        let rhs = -DVector::from_column_slice(self.noise_gram().as_slice());
        let lu = op.lu();
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::argument("prior has no stationary distribution (singular Lyapunov operator)"))?;
        let p = DMatrix::from_column_slice(n, n, sol.as_slice());
        let p = symmetrize(&p);
        if (0..n).any(|i| p[(i, i)] < -1e-12 * max_abs(&p)) {
            return Err(Error::argument("prior is not stable; no stationary distribution"));
        }
        Ok(p)
    }
}

/// `ν`-times integrated Wiener process on ℝ^d, the same σ² on every channel.
pub fn iwp_prior(dim: usize, derivatives: usize, sigma2: f64) -> Result<LtiSde> {
    iwp_prior_per_channel(dim, derivatives, &vec![sigma2; dim])
}

pub fn iwp_prior_per_channel(dim: usize, derivatives: usize, sigma2: &[f64]) -> Result<LtiSde> {
    if dim == 0 || derivatives == 0 {
        return Err(Error::argument(format!(
            "integrated Wiener process needs dim >= 1 and derivatives >= 1 (got {dim}, {derivatives})"
        )));
    }
    if sigma2.len() != dim || sigma2.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::argument("diffusion intensity must be positive for every channel"));
    }
    let n = dim * (derivatives + 1);
    let mut drift = DMatrix::zeros(n, n);
    for block in 0..derivatives {
        for k in 0..dim {
            drift[(block * dim + k, (block + 1) * dim + k)] = 1.0;
        }
    }
    let mut dispersion = DMatrix::zeros(n, dim);
    for k in 0..dim {
        dispersion[(derivatives * dim + k, k)] = 1.0;
    }
    LtiSde::with_structure(
        drift,
        dispersion,
        DVector::from_column_slice(sigma2),
        PriorStructure::IntegratedWiener { dim, derivatives },
    )
}

fn matern_rate(lengthscale: f64) -> Result<f64> {
    if !(lengthscale > 0.0) || !lengthscale.is_finite() {
        return Err(Error::argument(format!(
            "lengthscale must be positive, got {lengthscale}"
        )));
    }
    Ok(3f64.sqrt() / lengthscale)
}

/// Matérn-3/2 process with diffusion intensity `sigma2` driving the derivative.
pub fn matern32_prior(lengthscale: f64, sigma2: f64) -> Result<LtiSde> {
    let lam = matern_rate(lengthscale)?;
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::argument("diffusion intensity must be positive"));
    }
    let drift = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -lam * lam, -2.0 * lam]);
    let dispersion = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    LtiSde::with_structure(
        drift,
        dispersion,
        DVector::from_element(1, sigma2),
        PriorStructure::Matern32 { lengthscale },
    )
}

/// Matérn-3/2 process parameterized by its stationary (marginal) variance.
///
/// The white-noise intensity is `4 λ³ variance` with `λ = √3 / lengthscale`.
pub fn matern32_prior_from_variance(lengthscale: f64, variance: f64) -> Result<LtiSde> {
    let lam = matern_rate(lengthscale)?;
    matern32_prior(lengthscale, 4.0 * lam.powi(3) * variance)
}

/// Block-diagonal stacking `(u, x)`; `u` occupies the leading coordinates.
pub fn augment(u_prior: &LtiSde, x_prior: &LtiSde) -> LtiSde {
    augment_all(&[u_prior.clone(), x_prior.clone()])
}

pub fn augment_all(parts: &[LtiSde]) -> LtiSde {
    let drifts: Vec<&DMatrix<f64>> = parts.iter().map(|p| &p.drift).collect();
    let disps: Vec<&DMatrix<f64>> = parts.iter().map(|p| &p.dispersion).collect();
    let diffusion: Vec<f64> = parts.iter().flat_map(|p| p.diffusion.iter().copied()).collect();
    LtiSde {
        drift: block_diag(&drifts),
        dispersion: block_diag(&disps),
        diffusion: DVector::from_vec(diffusion),
        structure: PriorStructure::Augmented(parts.to_vec()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let g = Self { mean, cov };
        g.validate()?;
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Dimension, symmetry (relative 1e-10) and PSD (eigenvalues ≥ −1e-10‖P‖) checks.
    pub fn validate(&self) -> Result<()> {
        let n = self.mean.len();
        if self.cov.nrows() != n || self.cov.ncols() != n {
            return Err(Error::argument(format!(
                "covariance must be {n}x{n}, got {}x{}",
                self.cov.nrows(),
                self.cov.ncols()
            )));
        }
        if !linalg::all_finite_vec(&self.mean) || !linalg::all_finite(&self.cov) {
            return Err(Error::argument("density has non-finite entries"));
        }
        let scale = max_abs(&self.cov);
        if max_abs(&(&self.cov - self.cov.transpose())) > 1e-10 * scale.max(1e-300) {
            return Err(Error::argument("covariance is not symmetric"));
        }
        if n > 0 {
            let eig = nalgebra::SymmetricEigen::new(symmetrize(&self.cov));
            if eig.eigenvalues.min() < -1e-10 * scale {
                return Err(Error::argument("covariance is not positive semi-definite"));
            }
        }
        Ok(())
    }

    pub fn std(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

/// Mean plus a square-root factor `cov_sqrt` with `P = cov_sqrt · cov_sqrtᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SqrtGaussianDensity {
    pub mean: DVector<f64>,
    pub cov_sqrt: DMatrix<f64>,
}

impl SqrtGaussianDensity {
    pub fn from_dense(g: &GaussianDensity) -> Result<Self> {
        Ok(Self {
            mean: g.mean.clone(),
            cov_sqrt: psd_sqrt(&g.cov)?,
        })
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.cov_sqrt * self.cov_sqrt.transpose()
    }

    pub fn to_dense(&self) -> GaussianDensity {
        GaussianDensity {
            mean: self.mean.clone(),
            cov: self.covariance(),
        }
    }
}

/// Exact discretization `(Φ(Δt), Q(Δt))` of an LTI SDE.
#[derive(Debug, Clone)]
pub struct DiscreteTransition {
    pub transition: DMatrix<f64>,
    pub process_noise: DMatrix<f64>,
    pub step: f64,
    noise_sqrt: OnceLock<DMatrix<f64>>,
}

impl DiscreteTransition {
    pub fn new(transition: DMatrix<f64>, process_noise: DMatrix<f64>, step: f64) -> Self {
        Self {
            transition,
            process_noise,
            step,
            noise_sqrt: OnceLock::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n), DMatrix::zeros(n, n), 0.0)
    }

    pub fn dim(&self) -> usize {
        self.transition.nrows()
    }

    /// Lower-triangular factor of `Q`, computed once.
    pub fn process_noise_sqrt(&self) -> Result<&DMatrix<f64>> {
        if let Some(s) = self.noise_sqrt.get() {
            return Ok(s);
        }
        let s = psd_sqrt(&self.process_noise)?;
        Ok(self.noise_sqrt.get_or_init(|| s))
    }
}

fn check_step(dt: f64) -> Result<()> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::argument(format!("time step must be finite and >= 0, got {dt}")));
    }
    Ok(())
}

/// Exact transition of `model` over `dt`, using closed forms where the
/// structure admits one and matrix fraction decomposition otherwise.
pub fn discretize(model: &LtiSde, dt: f64) -> Result<DiscreteTransition> {
    check_step(dt)?;
    match &model.structure {
        PriorStructure::IntegratedWiener { dim, derivatives } => {
            Ok(iwp_transition(*dim, *derivatives, model.diffusion.as_slice(), dt))
        }
        PriorStructure::Augmented(blocks) => {
            let parts = blocks
                .iter()
                .map(|b| discretize(b, dt))
                .collect::<Result<Vec<_>>>()?;
            let phis: Vec<&DMatrix<f64>> = parts.iter().map(|p| &p.transition).collect();
            let qs: Vec<&DMatrix<f64>> = parts.iter().map(|p| &p.process_noise).collect();
            Ok(DiscreteTransition::new(block_diag(&phis), block_diag(&qs), dt))
        }
        _ => discretize_mfd(model, dt),
    }
}

/// Matrix fraction decomposition: `exp([[F, LσLᵀ], [0, −Fᵀ]] Δt) = [[Φ, B], [0, ·]]`
/// and `Q = B Φᵀ`.
pub fn discretize_mfd(model: &LtiSde, dt: f64) -> Result<DiscreteTransition> {
    check_step(dt)?;
    let n = model.state_dim();
    if dt == 0.0 {
        return Ok(DiscreteTransition::identity(n));
    }
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(&model.drift * dt));
    block
        .view_mut((0, n), (n, n))
        .copy_from(&(model.noise_gram() * dt));
    block
        .view_mut((n, n), (n, n))
        .copy_from(&(-model.drift.transpose() * dt));
    let e = block.exp();
    let phi = e.view((0, 0), (n, n)).into_owned();
    let b = e.view((0, n), (n, n)).into_owned();
    let q = symmetrize(&(b * phi.transpose()));
    Ok(DiscreteTransition::new(phi, q, dt))
}

fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

fn iwp_transition(dim: usize, nu: usize, sigma2: &[f64], dt: f64) -> DiscreteTransition {
    let n = dim * (nu + 1);
    let mut phi = DMatrix::zeros(n, n);
    let mut q = DMatrix::zeros(n, n);
    for i in 0..=nu {
        for j in 0..=nu {
            let phi_ij = if j >= i {
                dt.powi((j - i) as i32) / factorial(j - i)
            } else {
                0.0
            };
            let p = 2 * nu + 1 - i - j;
            let q_ij = dt.powi(p as i32) / (p as f64 * factorial(nu - i) * factorial(nu - j));
            for k in 0..dim {
                phi[(i * dim + k, j * dim + k)] = phi_ij;
                q[(i * dim + k, j * dim + k)] = sigma2[k] * q_ij;
            }
        }
    }
    DiscreteTransition::new(phi, q, dt)
}

/// Serializable description of a prior, used by problem configurations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternSpec {
    pub lengthscale: f64,
    /// Marginal variance of the process.
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IwpSpec {
    pub derivatives: usize,
    pub diffusion: f64,
}
