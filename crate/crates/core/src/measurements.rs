//! Measurement models on the augmented state `(U, X)`.
//!
//! Data observations read `X⁽⁰⁾` linearly. ODE pseudo-observations assert
//! that the residual `X⁽¹⁾ − f(X⁽⁰⁾; ϑ(U))` (or its log-state counterpart)
//! vanishes; their Jacobians are exact and hand-derived.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::VectorField;

/// Monotone map from the native (Gauss–Markov) value of a latent force to the
/// value the vector field consumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkFunction {
    Identity,
    /// Logistic sigmoid shifted so that the link maps 0 to `value_at_zero`.
    ShiftedSigmoid { value_at_zero: f64 },
    Exp,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LinkFunction {
    pub fn shifted_sigmoid(value_at_zero: f64) -> Result<Self> {
        if !(value_at_zero > 0.0 && value_at_zero < 1.0) {
            return Err(Error::argument(format!(
                "sigmoid offset value must lie in (0, 1), got {value_at_zero}"
            )));
        }
        Ok(LinkFunction::ShiftedSigmoid { value_at_zero })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LinkFunction::Identity => "identity",
            LinkFunction::ShiftedSigmoid { .. } => "shifted_sigmoid",
            LinkFunction::Exp => "exp",
        }
    }

    fn shift(p0: f64) -> f64 {
        (p0 / (1.0 - p0)).ln()
    }

    pub fn forward(&self, v: f64) -> f64 {
        match *self {
            LinkFunction::Identity => v,
            LinkFunction::ShiftedSigmoid { value_at_zero } => sigmoid(v + Self::shift(value_at_zero)),
            LinkFunction::Exp => v.exp(),
        }
    }

    pub fn derivative(&self, v: f64) -> f64 {
        match *self {
            LinkFunction::Identity => 1.0,
            LinkFunction::ShiftedSigmoid { value_at_zero } => {
                let s = sigmoid(v + Self::shift(value_at_zero));
                s * (1.0 - s)
            }
            LinkFunction::Exp => v.exp(),
        }
    }

    pub fn inverse(&self, y: f64) -> f64 {
        match *self {
            LinkFunction::Identity => y,
            LinkFunction::ShiftedSigmoid { value_at_zero } => (y / (1.0 - y)).ln() - Self::shift(value_at_zero),
            LinkFunction::Exp => y.ln(),
        }
    }
}

/// Whether `X` models the ODE state directly or its elementwise logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StateSpace {
    #[default]
    Linear,
    Log,
}

/// Index bookkeeping for the augmented state `(U, X⁽⁰⁾, …, X⁽ν⁾)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    /// Global index of the coordinate carrying each latent force value.
    pub latent_positions: Vec<usize>,
    pub latent_state_dim: usize,
    pub dim: usize,
    pub derivatives: usize,
}

impl StateLayout {
    /// Layout for `latent_channels` Matérn-3/2 blocks (2 states each)
    /// followed by a ν-times integrated Wiener process on ℝ^d.
    pub fn matern_iwp(latent_channels: usize, dim: usize, derivatives: usize) -> Self {
        Self {
            latent_positions: (0..latent_channels).map(|k| 2 * k).collect(),
            latent_state_dim: 2 * latent_channels,
            dim,
            derivatives,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_positions.len()
    }

    pub fn state_dim(&self) -> usize {
        self.latent_state_dim + self.dim * (self.derivatives + 1)
    }

    /// Global index of derivative `order` of state coordinate `coord`.
    pub fn x_index(&self, order: usize, coord: usize) -> usize {
        self.latent_state_dim + order * self.dim + coord
    }

    pub fn latent(&self, m: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.latent_dim(), self.latent_positions.iter().map(|&i| m[i]))
    }

    pub fn x_block(&self, m: &DVector<f64>, order: usize) -> DVector<f64> {
        m.rows(self.x_index(order, 0), self.dim).into_owned()
    }
}

/// Linear-Gaussian data model `y = H X⁽⁰⁾ + ε`, `ε ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataModel {
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub observed: Vec<usize>,
}

/// Selection matrix onto the observed `X⁽⁰⁾` coordinates with diagonal noise.
pub fn make_data_model(layout: &StateLayout, observed: &[usize], noise_var: &[f64]) -> Result<DataModel> {
    if observed.is_empty() {
        return Err(Error::argument("at least one coordinate must be observed"));
    }
    if noise_var.len() != observed.len() {
        return Err(Error::argument(format!(
            "{} noise variances for {} observed coordinates",
            noise_var.len(),
            observed.len()
        )));
    }
    if noise_var.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::argument("observation noise variances must be finite and >= 0"));
    }
    let mut h = DMatrix::zeros(observed.len(), layout.state_dim());
    for (row, &coord) in observed.iter().enumerate() {
        if coord >= layout.dim {
            return Err(Error::argument(format!(
                "observed coordinate {coord} out of range for state dimension {}",
                layout.dim
            )));
        }
        h[(row, layout.x_index(0, coord))] = 1.0;
    }
    Ok(DataModel {
        h,
        r: DMatrix::from_diagonal(&DVector::from_column_slice(noise_var)),
        observed: observed.to_vec(),
    })
}

/// ODE pseudo-observation model; the pseudo-datum is always the zero vector.
#[derive(Debug, Clone)]
pub struct OdeModel {
    pub field: Arc<dyn VectorField>,
    /// Relaxation variance λ²; zero is the Dirac likelihood.
    pub ode_noise: f64,
    pub links: Vec<LinkFunction>,
    pub space: StateSpace,
    pub layout: StateLayout,
}

impl OdeModel {
    pub fn new(
        field: Arc<dyn VectorField>,
        ode_noise: f64,
        links: Vec<LinkFunction>,
        space: StateSpace,
        layout: StateLayout,
    ) -> Result<Self> {
        if !(ode_noise >= 0.0) || !ode_noise.is_finite() {
            return Err(Error::argument(format!("ODE noise must be >= 0, got {ode_noise}")));
        }
        if field.dim() != layout.dim {
            return Err(Error::argument(format!(
                "vector field has dimension {}, layout expects {}",
                field.dim(),
                layout.dim
            )));
        }
        if field.latent_dim() != layout.latent_dim() || links.len() != layout.latent_dim() {
            return Err(Error::argument(format!(
                "vector field takes {} latent forces; layout has {}, links {}",
                field.latent_dim(),
                layout.latent_dim(),
                links.len()
            )));
        }
        if layout.derivatives < 1 {
            return Err(Error::argument("ODE residual needs at least one derivative in the state"));
        }
        Ok(Self {
            field,
            ode_noise,
            links,
            space,
            layout,
        })
    }

    pub fn residual_dim(&self) -> usize {
        self.layout.dim
    }

    /// Linked latent force values read from an augmented state.
    pub fn linked_latent(&self, m: &DVector<f64>) -> DVector<f64> {
        let native = self.layout.latent(m);
        DVector::from_iterator(
            native.len(),
            native.iter().zip(&self.links).map(|(v, l)| l.forward(*v)),
        )
    }
}

fn check_finite(name: &str, v: &DVector<f64>) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Evaluation(format!("{name}[{i}] is not finite ({})", v[i])));
    }
    Ok(())
}

/// `X⁽¹⁾ − f(X⁽⁰⁾; ϑ(U))` in linear space; `ζ₁ − f(ζ₂; ζ₃)` in log space with
/// `ζ₁ = exp(X⁽⁰⁾) ⊙ X⁽¹⁾`, `ζ₂ = exp(X⁽⁰⁾)`, `ζ₃ = ϑ(U)`.
pub fn ode_residual(model: &OdeModel, m: &DVector<f64>) -> Result<DVector<f64>> {
    if m.len() != model.layout.state_dim() {
        return Err(Error::argument(format!(
            "state has length {}, expected {}",
            m.len(),
            model.layout.state_dim()
        )));
    }
    let u = model.linked_latent(m);
    check_finite("linked latent force", &u)?;
    let x0 = model.layout.x_block(m, 0);
    let x1 = model.layout.x_block(m, 1);
    let out = match model.space {
        StateSpace::Linear => &x1 - model.field.eval(&x0, &u),
        StateSpace::Log => {
            let zeta2 = x0.map(f64::exp);
            check_finite("exp(X0)", &zeta2)?;
            let zeta1 = zeta2.component_mul(&x1);
            zeta1 - model.field.eval(&zeta2, &u)
        }
    };
    check_finite("ODE residual", &out)?;
    Ok(out)
}

/// Exact Jacobian of [`ode_residual`] with respect to the augmented state.
pub fn ode_jacobian(model: &OdeModel, m: &DVector<f64>) -> Result<DMatrix<f64>> {
    let layout = &model.layout;
    if m.len() != layout.state_dim() {
        return Err(Error::argument(format!(
            "state has length {}, expected {}",
            m.len(),
            layout.state_dim()
        )));
    }
    let d = layout.dim;
    let native = layout.latent(m);
    let u = model.linked_latent(m);
    check_finite("linked latent force", &u)?;
    let x0 = layout.x_block(m, 0);
    let x1 = layout.x_block(m, 1);
    let mut jac = DMatrix::zeros(d, layout.state_dim());
    let c0 = layout.x_index(0, 0);
    let c1 = layout.x_index(1, 0);

    let jac_u = match model.space {
        StateSpace::Linear => {
            let jx = model.field.jac_x(&x0, &u);
            jac.view_mut((0, c0), (d, d)).copy_from(&(-jx));
            jac.view_mut((0, c1), (d, d)).fill_with_identity();
            model.field.jac_u(&x0, &u)
        }
        StateSpace::Log => {
            let zeta2 = x0.map(f64::exp);
            check_finite("exp(X0)", &zeta2)?;
            let zeta1 = zeta2.component_mul(&x1);
            let jx = model.field.jac_x(&zeta2, &u);
            // ∂ζ₁/∂X⁽⁰⁾ = diag(ζ₁), ∂ζ₂/∂X⁽⁰⁾ = diag(ζ₂)
            let block0 = DMatrix::from_diagonal(&zeta1) - jx * DMatrix::from_diagonal(&zeta2);
            jac.view_mut((0, c0), (d, d)).copy_from(&block0);
            jac.view_mut((0, c1), (d, d)).copy_from(&DMatrix::from_diagonal(&zeta2));
            model.field.jac_u(&zeta2, &u)
        }
    };
    for (k, &pos) in layout.latent_positions.iter().enumerate() {
        let chain = model.links[k].derivative(native[k]);
        for r in 0..d {
            jac[(r, pos)] = -jac_u[(r, k)] * chain;
        }
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("ODE Jacobian has non-finite entries".into()));
    }
    Ok(jac)
}
