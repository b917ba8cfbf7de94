//! Benchmark vector fields and their experiment configurations.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss_markov::{
    augment, augment_all, iwp_prior_per_channel, matern32_prior_from_variance, IwpSpec, LtiSde, MaternSpec,
};
use crate::measurements::{LinkFunction, StateLayout, StateSpace};

/// Autonomous right-hand side `ẋ = f(x; u)` with analytic Jacobians.
pub trait VectorField: Debug + Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn jac_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    fn jac_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    fn state_names(&self) -> Vec<String>;
    fn latent_names(&self) -> Vec<String>;
}

/// `ẋ₁ = x₂`, `ẋ₂ = μ (1 − x₁²) x₂ − x₁` with the stiffness μ as latent force.
#[derive(Debug, Clone, Copy, Default)]
pub struct VanDerPol;

impl VectorField for VanDerPol {
    fn name(&self) -> &str {
        "van-der-pol"
    }
    fn dim(&self) -> usize {
        2
    }
    fn latent_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mu = u[0];
        DVector::from_vec(vec![x[1], mu * (1.0 - x[0] * x[0]) * x[1] - x[0]])
    }
    fn jac_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let mu = u[0];
        DMatrix::from_row_slice(
            2,
            2,
            &[0.0, 1.0, -2.0 * mu * x[0] * x[1] - 1.0, mu * (1.0 - x[0] * x[0])],
        )
    }
    fn jac_u(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[0.0, (1.0 - x[0] * x[0]) * x[1]])
    }
    fn state_names(&self) -> Vec<String> {
        vec!["x1".into(), "x2".into()]
    }
    fn latent_names(&self) -> Vec<String> {
        vec!["mu".into()]
    }
}

/// Predator–prey dynamics with all four rates `(a, b, c, d)` as latent forces.
#[derive(Debug, Clone, Copy, Default)]
pub struct LotkaVolterra;

impl VectorField for LotkaVolterra {
    fn name(&self) -> &str {
        "lotka-volterra"
    }
    fn dim(&self) -> usize {
        2
    }
    fn latent_dim(&self) -> usize {
        4
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (a, b, c, d) = (u[0], u[1], u[2], u[3]);
        DVector::from_vec(vec![
            a * x[0] - b * x[0] * x[1],
            -c * x[1] + d * x[0] * x[1],
        ])
    }
    fn jac_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let (a, b, c, d) = (u[0], u[1], u[2], u[3]);
        DMatrix::from_row_slice(2, 2, &[a - b * x[1], -b * x[0], d * x[1], -c + d * x[0]])
    }
    fn jac_u(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        let p = x[0] * x[1];
        DMatrix::from_row_slice(2, 4, &[x[0], -p, 0.0, 0.0, 0.0, 0.0, -x[1], p])
    }
    fn state_names(&self) -> Vec<String> {
        vec!["prey".into(), "predator".into()]
    }
    fn latent_names(&self) -> Vec<String> {
        ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect()
    }
}

/// Susceptible–infectious–recovered–deceased compartments with the contact
/// rate β as latent force; `population` is in the same units as the state.
#[derive(Debug, Clone, Copy)]
pub struct Sird {
    pub population: f64,
    pub recovery_rate: f64,
    pub mortality_rate: f64,
}

impl Sird {
    pub fn new(population: f64, recovery_rate: f64, mortality_rate: f64) -> Result<Self> {
        if !(population > 0.0) || !population.is_finite() {
            return Err(Error::argument(format!("population must be positive, got {population}")));
        }
        Ok(Self {
            population,
            recovery_rate,
            mortality_rate,
        })
    }
}

impl VectorField for Sird {
    fn name(&self) -> &str {
        "sird"
    }
    fn dim(&self) -> usize {
        4
    }
    fn latent_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let beta = u[0];
        let (s, i) = (x[0], x[1]);
        let infection = beta * s * i / self.population;
        DVector::from_vec(vec![
            -infection,
            infection - (self.recovery_rate + self.mortality_rate) * i,
            self.recovery_rate * i,
            self.mortality_rate * i,
        ])
    }
    fn jac_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let beta = u[0];
        let p = self.population;
        let (s, i) = (x[0], x[1]);
        let (ds, di) = (beta * i / p, beta * s / p);
        DMatrix::from_row_slice(
            4,
            4,
            &[
                -ds,
                -di,
                0.0,
                0.0,
                ds,
                di - self.recovery_rate - self.mortality_rate,
                0.0,
                0.0,
                0.0,
                self.recovery_rate,
                0.0,
                0.0,
                0.0,
                self.mortality_rate,
                0.0,
                0.0,
            ],
        )
    }
    fn jac_u(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        let si = x[0] * x[1] / self.population;
        DMatrix::from_column_slice(4, 1, &[-si, si, 0.0, 0.0])
    }
    fn state_names(&self) -> Vec<String> {
        ["S", "I", "R", "D"].iter().map(|s| s.to_string()).collect()
    }
    fn latent_names(&self) -> Vec<String> {
        vec!["beta".into()]
    }
}

/// `ẋ = A x`, without latent forces.
#[derive(Debug, Clone)]
pub struct LinearField {
    pub a: DMatrix<f64>,
}

impl VectorField for LinearField {
    fn name(&self) -> &str {
        "linear"
    }
    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn latent_dim(&self) -> usize {
        0
    }
    fn eval(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        &self.a * x
    }
    fn jac_x(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
    fn jac_u(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.a.nrows(), 0)
    }
    fn state_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{}", i + 1)).collect()
    }
    fn latent_names(&self) -> Vec<String> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum ProblemKind {
    VanDerPol,
    LotkaVolterra,
    Sird {
        /// Population in the units of the state (1000 for cases-per-thousand).
        population: f64,
        recovery_rate: f64,
        mortality_rate: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub t0: f64,
    pub t_max: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.t_max > self.t0) {
            return Err(Error::argument(format!(
                "grid needs step > 0 and t_max > t0 (got t0={}, t_max={}, step={})",
                self.t0, self.t_max, self.step
            )));
        }
        let n = (self.t_max - self.t0) / self.step;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::argument(format!(
                "step {} does not divide [{}, {}]",
                self.step, self.t0, self.t_max
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        ((self.t_max - self.t0) / self.step).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid points `t0 + k·step`, computed by multiplication so rounding does
    /// not accumulate.
    pub fn points(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|k| if k + 1 == n { self.t_max } else { self.t0 + k as f64 * self.step })
            .collect()
    }
}

/// Ground-truth generation settings for simulated experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub initial_state: Vec<f64>,
    /// Observe every `obs_stride`-th point of the dense grid.
    pub obs_stride: usize,
    /// Observation noise std as a fraction of each coordinate's trajectory std.
    pub noise_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub problem: ProblemKind,
    pub state_prior: IwpSpec,
    pub latent_priors: Vec<MaternSpec>,
    pub links: Vec<LinkFunction>,
    pub grid: GridSpec,
    /// λ²; zero selects the Dirac ODE likelihood.
    pub ode_noise: f64,
    #[serde(default)]
    pub state_space: StateSpace,
    pub observed: Vec<usize>,
    /// Initial variance of observed `X⁽⁰⁾` coordinates; `None` uses the
    /// observation noise variance.
    #[serde(default)]
    pub initial_state_var: Option<f64>,
    #[serde(default = "default_derivative_var")]
    pub initial_derivative_var: f64,
    #[serde(default)]
    pub simulation: Option<SimulationSpec>,
}

fn default_derivative_var() -> f64 {
    1.0
}

pub const PROBLEM_NAMES: [&str; 3] = ["van-der-pol", "lotka-volterra", "sird"];

/// Population used for the COVID experiments (persons).
pub const GERMANY_POPULATION: f64 = 83_783_945.0;

impl ProblemConfig {
    pub fn van_der_pol() -> Self {
        Self {
            problem: ProblemKind::VanDerPol,
            state_prior: IwpSpec {
                derivatives: 2,
                diffusion: 300.0,
            },
            latent_priors: vec![MaternSpec {
                lengthscale: 10.0,
                variance: 0.3,
            }],
            links: vec![LinkFunction::Identity],
            grid: GridSpec {
                t0: 0.0,
                t_max: 25.0,
                step: 0.025,
            },
            ode_noise: 0.0,
            state_space: StateSpace::Linear,
            observed: vec![0, 1],
            initial_state_var: None,
            initial_derivative_var: 1.0,
            simulation: Some(SimulationSpec {
                initial_state: vec![1.0, 0.0],
                obs_stride: 10,
                noise_scale: 0.05,
            }),
        }
    }

    pub fn lotka_volterra() -> Self {
        let m = |variance| MaternSpec {
            lengthscale: 40.0,
            variance,
        };
        Self {
            problem: ProblemKind::LotkaVolterra,
            state_prior: IwpSpec {
                derivatives: 2,
                diffusion: 10.0,
            },
            latent_priors: vec![m(0.01), m(0.001), m(0.01), m(0.001)],
            links: vec![LinkFunction::Exp; 4],
            grid: GridSpec {
                t0: 0.0,
                t_max: 60.0,
                step: 0.1,
            },
            ode_noise: 0.0,
            state_space: StateSpace::Linear,
            observed: vec![0, 1],
            initial_state_var: None,
            initial_derivative_var: 1.0,
            simulation: Some(SimulationSpec {
                initial_state: vec![2.0, 1.0],
                obs_stride: 10,
                noise_scale: 0.05,
            }),
        }
    }

    /// Simulated-environment SIRD on a population of `population`.
    pub fn sird(population: f64) -> Result<Self> {
        Sird::new(population, 0.06, 0.002)?;
        let infected = (population * 0.01).max(1e-9);
        Ok(Self {
            problem: ProblemKind::Sird {
                population,
                recovery_rate: 0.06,
                mortality_rate: 0.002,
            },
            state_prior: IwpSpec {
                derivatives: 2,
                diffusion: 50.0,
            },
            latent_priors: vec![MaternSpec {
                lengthscale: 14.0,
                variance: 0.1,
            }],
            links: vec![LinkFunction::ShiftedSigmoid { value_at_zero: 0.1 }],
            grid: GridSpec {
                t0: 0.0,
                t_max: 100.0,
                step: 0.1,
            },
            ode_noise: 0.0,
            state_space: StateSpace::Linear,
            observed: vec![0, 1, 2, 3],
            initial_state_var: None,
            initial_derivative_var: 1.0,
            simulation: Some(SimulationSpec {
                initial_state: vec![population - infected, infected, 0.0, 0.0],
                obs_stride: 10,
                noise_scale: 0.05,
            }),
        })
    }

    /// SIRD on case counts per thousand with the relaxed ODE likelihood.
    pub fn sird_covid(days: f64) -> Result<Self> {
        let mut c = Self::sird(1000.0)?;
        c.state_prior.diffusion = 10.0;
        c.latent_priors = vec![MaternSpec {
            lengthscale: 75.0,
            variance: 0.05,
        }];
        c.grid = GridSpec {
            t0: 0.0,
            t_max: days,
            step: 1.0 / 24.0,
        };
        c.ode_noise = 0.01;
        c.initial_state_var = Some(1e-6);
        c.simulation = None;
        c.grid.validate()?;
        Ok(c)
    }

    /// The log-state variant of [`ProblemConfig::sird_covid`].
    pub fn sird_covid_log(days: f64) -> Result<Self> {
        let mut c = Self::sird_covid(days)?;
        c.state_prior.diffusion = 0.05;
        c.state_space = StateSpace::Log;
        Ok(c)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "van-der-pol" | "vdp" => Ok(Self::van_der_pol()),
            "lotka-volterra" | "lv" => Ok(Self::lotka_volterra()),
            "sird" => Self::sird(1000.0),
            _ => Err(Error::argument(format!(
                "unknown problem '{name}'; expected one of {{{}}}",
                PROBLEM_NAMES.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let field = self.vector_field()?;
        if self.latent_priors.len() != field.latent_dim() || self.links.len() != field.latent_dim() {
            return Err(Error::argument(format!(
                "{} needs {} latent priors and links",
                field.name(),
                field.latent_dim()
            )));
        }
        if self.observed.iter().any(|&i| i >= field.dim()) {
            return Err(Error::argument("observed coordinate out of range"));
        }
        if let Some(sim) = &self.simulation {
            if sim.initial_state.len() != field.dim() {
                return Err(Error::argument("simulation initial state has the wrong dimension"));
            }
            if sim.obs_stride == 0 {
                return Err(Error::argument("observation stride must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self.problem {
            ProblemKind::VanDerPol => "van-der-pol",
            ProblemKind::LotkaVolterra => "lotka-volterra",
            ProblemKind::Sird { .. } => "sird",
        }
    }

    pub fn vector_field(&self) -> Result<Arc<dyn VectorField>> {
        Ok(match self.problem {
            ProblemKind::VanDerPol => Arc::new(VanDerPol),
            ProblemKind::LotkaVolterra => Arc::new(LotkaVolterra),
            ProblemKind::Sird {
                population,
                recovery_rate,
                mortality_rate,
            } => Arc::new(Sird::new(population, recovery_rate, mortality_rate)?),
        })
    }

    pub fn dim(&self) -> usize {
        match self.problem {
            ProblemKind::VanDerPol | ProblemKind::LotkaVolterra => 2,
            ProblemKind::Sird { .. } => 4,
        }
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout::matern_iwp(self.latent_priors.len(), self.dim(), self.state_prior.derivatives)
    }

    pub fn latent_prior(&self) -> Result<LtiSde> {
        let parts = self
            .latent_priors
            .iter()
            .map(|m| matern32_prior_from_variance(m.lengthscale, m.variance))
            .collect::<Result<Vec<_>>>()?;
        Ok(augment_all(&parts))
    }

    pub fn state_prior(&self) -> Result<LtiSde> {
        iwp_prior_per_channel(
            self.dim(),
            self.state_prior.derivatives,
            &vec![self.state_prior.diffusion; self.dim()],
        )
    }

    /// Augmented `(U, X)` prior.
    pub fn prior(&self) -> Result<LtiSde> {
        Ok(augment(&self.latent_prior()?, &self.state_prior()?))
    }
}
