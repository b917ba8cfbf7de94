//! Glue from a problem configuration and a dataset to a smoothed posterior,
//! its plot-ready summary, and a run report.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter_smoother::{infer, FilterMode, InferenceModel, Observations, PassStats, PosteriorTrajectory};
use crate::gauss_markov::GaussianDensity;
use crate::measurements::{make_data_model, OdeModel, StateSpace};
use crate::metrics::{score, ScoreReport};
use crate::problems::ProblemConfig;
use crate::simulate::{fmt, read_table, simulate, write_file, Dataset, FileHeader, GroundTruth, Simulation};

/// Counts below this floor are clipped before taking logs.
pub const LOG_FLOOR: f64 = 1e-6;

/// 97.5% standard-normal quantile.
const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InferenceOptions {
    #[serde(default)]
    pub mode: FilterMode,
    /// Overrides the configuration's λ².
    #[serde(default)]
    pub ode_noise: Option<f64>,
    /// Observation noise variances in the model's state space, overriding
    /// those recorded with the dataset.
    #[serde(default)]
    pub data_noise: Option<Vec<f64>>,
    /// End of the ODE grid; defaults to the configuration's `t_max`.
    #[serde(default)]
    pub t_end: Option<f64>,
}

/// Model, events and initial law ready for the filter.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: InferenceModel,
    pub ode_times: Vec<f64>,
    pub observations: Observations,
    pub initial: GaussianDensity,
}

fn to_state_space(space: StateSpace, y: f64) -> f64 {
    match space {
        StateSpace::Linear => y,
        StateSpace::Log => y.max(LOG_FLOOR).ln(),
    }
}

pub fn prepare(config: &ProblemConfig, dataset: &Dataset, opts: &InferenceOptions) -> Result<Prepared> {
    config.validate()?;
    let layout = config.layout();
    let field = config.vector_field()?;
    let space = config.state_space;
    let ode_noise = opts.ode_noise.unwrap_or(config.ode_noise);
    let ode = OdeModel::new(field.clone(), ode_noise, config.links.clone(), space, layout.clone())?;
    let noise = opts.data_noise.clone().unwrap_or_else(|| dataset.meta.noise_var.clone());
    let data = make_data_model(&layout, &dataset.meta.observed, &noise)?;

    let mut grid_spec = config.grid;
    if let Some(t_end) = opts.t_end {
        grid_spec.t_max = t_end;
    }
    grid_spec.validate()?;
    let ode_times = grid_spec.points();
    if let Some(t) = dataset
        .times
        .iter()
        .find(|&&t| t < grid_spec.t0 - 1e-9 || t > grid_spec.t_max + 1e-9)
    {
        return Err(Error::Data(format!(
            "observation at t = {t} lies outside the grid [{}, {}]",
            grid_spec.t0, grid_spec.t_max
        )));
    }
    let observations = Observations {
        times: dataset.times.clone(),
        values: dataset
            .values
            .iter()
            .map(|y| y.map(|v| to_state_space(space, v)))
            .collect(),
    };

    // Initial law: X⁽⁰⁾ at the first datum, X⁽¹⁾ at the vector field there,
    // higher derivatives at zero, U at its stationary law.
    let n = layout.state_dim();
    let d = layout.dim;
    let mut mean = DVector::zeros(n);
    let mut cov = DMatrix::zeros(n, n);
    let u_cov = config.latent_prior()?.stationary_covariance()?;
    cov.view_mut((0, 0), (layout.latent_state_dim, layout.latent_state_dim))
        .copy_from(&u_cov);
    let first = observations
        .values
        .first()
        .ok_or_else(|| Error::Data("dataset has no observations".into()))?;
    for i in 0..d {
        let idx = layout.x_index(0, i);
        match dataset.meta.observed.iter().position(|&o| o == i) {
            Some(j) => {
                mean[idx] = first[j];
                cov[(idx, idx)] = config.initial_state_var.unwrap_or(noise[j]);
            }
            None => cov[(idx, idx)] = config.initial_derivative_var,
        }
    }
    let x0 = layout.x_block(&mean, 0);
    let u0 = ode.linked_latent(&mean);
    let x1 = match space {
        StateSpace::Linear => field.eval(&x0, &u0),
        StateSpace::Log => {
            let z = x0.map(f64::exp);
            field.eval(&z, &u0).component_div(&z)
        }
    };
    for order in 1..=layout.derivatives {
        for i in 0..d {
            let idx = layout.x_index(order, i);
            if order == 1 {
                mean[idx] = x1[i];
            }
            cov[(idx, idx)] = config.initial_derivative_var;
        }
    }
    let initial = GaussianDensity::new(mean, cov)?;
    Ok(Prepared {
        model: InferenceModel {
            prior: config.prior()?,
            data: Some(data),
            ode: Some(ode),
            mode: opts.mode,
        },
        ode_times,
        observations,
        initial,
    })
}

/// Posterior marginals mapped back to physical quantities and latent forces.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub times: Vec<f64>,
    pub state_names: Vec<String>,
    pub latent_names: Vec<String>,
    pub state_mean: Vec<DVector<f64>>,
    pub state_std: Vec<DVector<f64>>,
    pub state_lo: Vec<DVector<f64>>,
    pub state_hi: Vec<DVector<f64>>,
    pub latent_linked_mean: Vec<DVector<f64>>,
    pub latent_linked_std: Vec<DVector<f64>>,
    pub latent_linked_lo: Vec<DVector<f64>>,
    pub latent_linked_hi: Vec<DVector<f64>>,
    pub latent_native_mean: Vec<DVector<f64>>,
    pub latent_native_cov: Vec<DMatrix<f64>>,
}

impl PosteriorSummary {
    pub fn from_trajectory(config: &ProblemConfig, traj: &PosteriorTrajectory) -> Result<Self> {
        if !traj.is_smoothed() {
            return Err(Error::argument("trajectory has not been smoothed"));
        }
        let layout = config.layout();
        let field = config.vector_field()?;
        let d = layout.dim;
        let mut s = Self {
            times: traj.grid.clone(),
            state_names: field.state_names(),
            latent_names: field.latent_names(),
            state_mean: Vec::new(),
            state_std: Vec::new(),
            state_lo: Vec::new(),
            state_hi: Vec::new(),
            latent_linked_mean: Vec::new(),
            latent_linked_std: Vec::new(),
            latent_linked_lo: Vec::new(),
            latent_linked_hi: Vec::new(),
            latent_native_mean: Vec::new(),
            latent_native_cov: Vec::new(),
        };
        for g in &traj.smoothed {
            let std = g.std();
            let c0 = layout.x_index(0, 0);
            let m = g.mean.rows(c0, d).into_owned();
            let sd = std.rows(c0, d).into_owned();
            match config.state_space {
                StateSpace::Linear => {
                    s.state_lo.push(&m - &sd * Z95);
                    s.state_hi.push(&m + &sd * Z95);
                    s.state_mean.push(m);
                    s.state_std.push(sd);
                }
                StateSpace::Log => {
                    // Log-normal moments and quantiles.
                    let mean = m.zip_map(&sd, |a, b| (a + 0.5 * b * b).exp());
                    let std = m.zip_map(&sd, |a, b| ((b * b).exp_m1() * (2.0 * a + b * b).exp()).sqrt());
                    s.state_lo.push(m.zip_map(&sd, |a, b| (a - Z95 * b).exp()));
                    s.state_hi.push(m.zip_map(&sd, |a, b| (a + Z95 * b).exp()));
                    s.state_mean.push(mean);
                    s.state_std.push(std);
                }
            }
            let pos = &layout.latent_positions;
            let um = DVector::from_iterator(pos.len(), pos.iter().map(|&i| g.mean[i]));
            let ucov = DMatrix::from_fn(pos.len(), pos.len(), |a, b| g.cov[(pos[a], pos[b])]);
            let usd = DVector::from_iterator(pos.len(), pos.iter().map(|&i| std[i]));
            let links = &config.links;
            s.latent_linked_mean
                .push(DVector::from_iterator(pos.len(), (0..pos.len()).map(|k| links[k].forward(um[k]))));
            s.latent_linked_std.push(DVector::from_iterator(
                pos.len(),
                (0..pos.len()).map(|k| links[k].derivative(um[k]).abs() * usd[k]),
            ));
            s.latent_linked_lo.push(DVector::from_iterator(
                pos.len(),
                (0..pos.len()).map(|k| links[k].forward(um[k] - Z95 * usd[k])),
            ));
            s.latent_linked_hi.push(DVector::from_iterator(
                pos.len(),
                (0..pos.len()).map(|k| links[k].forward(um[k] + Z95 * usd[k])),
            ));
            s.latent_native_mean.push(um);
            s.latent_native_cov.push(ucov);
        }
        Ok(s)
    }

    /// Column order: `t`; mean and std of each quantity; linked mean and std
    /// of each latent force; native mean and std of each latent force; native
    /// latent covariances `cov_<a>_<b>` for `a < b`; 95% bounds of each
    /// quantity and each linked latent force.
    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        for n in &self.state_names {
            cols.push(format!("{n}_mean"));
            cols.push(format!("{n}_std"));
        }
        for n in &self.latent_names {
            cols.push(format!("{n}_mean"));
            cols.push(format!("{n}_std"));
        }
        for n in &self.latent_names {
            cols.push(format!("{n}_native_mean"));
            cols.push(format!("{n}_native_std"));
        }
        for a in 0..self.latent_names.len() {
            for b in a + 1..self.latent_names.len() {
                cols.push(format!("cov_{}_{}", self.latent_names[a], self.latent_names[b]));
            }
        }
        for n in self.state_names.iter().chain(&self.latent_names) {
            cols.push(format!("{n}_lo95"));
            cols.push(format!("{n}_hi95"));
        }
        cols
    }

    pub fn write_csv(&self, path: &Path, header: &FileHeader) -> Result<()> {
        let mut out = header.comment_line();
        out.push_str(&self.columns().join(","));
        out.push('\n');
        let l = self.latent_names.len();
        for k in 0..self.times.len() {
            let mut row = vec![fmt(self.times[k])];
            for i in 0..self.state_names.len() {
                row.push(fmt(self.state_mean[k][i]));
                row.push(fmt(self.state_std[k][i]));
            }
            for i in 0..l {
                row.push(fmt(self.latent_linked_mean[k][i]));
                row.push(fmt(self.latent_linked_std[k][i]));
            }
            for i in 0..l {
                row.push(fmt(self.latent_native_mean[k][i]));
                row.push(fmt(self.latent_native_cov[k][(i, i)].max(0.0).sqrt()));
            }
            for a in 0..l {
                for b in a + 1..l {
                    row.push(fmt(self.latent_native_cov[k][(a, b)]));
                }
            }
            for i in 0..self.state_names.len() {
                row.push(fmt(self.state_lo[k][i]));
                row.push(fmt(self.state_hi[k][i]));
            }
            for i in 0..l {
                row.push(fmt(self.latent_linked_lo[k][i]));
                row.push(fmt(self.latent_linked_hi[k][i]));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        write_file(path, &out)
    }
}

/// Native-space latent marginals read back from a posterior CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMarginals {
    pub header: FileHeader,
    pub times: Vec<f64>,
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
}

pub fn read_latent_marginals(path: &Path, latent_names: &[String]) -> Result<LatentMarginals> {
    let (header, cols, rows) = read_table(path)?;
    let find = |name: &str| {
        cols.iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Data(format!("{} lacks column '{name}'", path.display())))
    };
    let l = latent_names.len();
    let mean_idx = latent_names
        .iter()
        .map(|n| find(&format!("{n}_native_mean")))
        .collect::<Result<Vec<_>>>()?;
    let std_idx = latent_names
        .iter()
        .map(|n| find(&format!("{n}_native_std")))
        .collect::<Result<Vec<_>>>()?;
    let mut cov_idx = vec![vec![None; l]; l];
    for a in 0..l {
        for b in a + 1..l {
            cov_idx[a][b] = Some(find(&format!("cov_{}_{}", latent_names[a], latent_names[b]))?);
        }
    }
    let mut out = LatentMarginals {
        header,
        times: Vec::new(),
        mean: Vec::new(),
        cov: Vec::new(),
    };
    for r in rows {
        out.times.push(r[0]);
        out.mean.push(DVector::from_iterator(l, mean_idx.iter().map(|&i| r[i])));
        out.cov.push(DMatrix::from_fn(l, l, |a, b| {
            if a == b {
                r[std_idx[a]].powi(2)
            } else {
                let (i, j) = (a.min(b), a.max(b));
                r[cov_idx[i][j].expect("filled for i < j")]
            }
        }));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: String,
    pub config_hash: String,
    pub seed: u64,
    pub mode: FilterMode,
    pub state_space: StateSpace,
    pub ode_noise: f64,
    pub grid_points: usize,
    pub data_events: usize,
    pub ode_events: usize,
    pub passes: PassStats,
    #[serde(default)]
    pub holdout_days: Option<usize>,
    #[serde(default)]
    pub extrapolation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct InferenceRun {
    pub trajectory: PosteriorTrajectory,
    pub summary: PosteriorSummary,
    pub report: RunReport,
}

pub fn run_inference(
    config: &ProblemConfig,
    dataset: &Dataset,
    opts: &InferenceOptions,
    config_hash: &str,
) -> Result<InferenceRun> {
    let prep = prepare(config, dataset, opts)?;
    let trajectory = infer(&prep.model, &prep.ode_times, &prep.observations, &prep.initial)?;
    let summary = PosteriorSummary::from_trajectory(config, &trajectory)?;
    let last_datum = dataset.times.last().copied().unwrap_or(f64::NAN);
    let t_end = *trajectory.grid.last().expect("non-empty");
    let report = RunReport {
        problem: config.name().to_string(),
        config_hash: config_hash.to_string(),
        seed: dataset.meta.seed,
        mode: opts.mode,
        state_space: config.state_space,
        ode_noise: prep.model.ode.as_ref().map(|o| o.ode_noise).unwrap_or(0.0),
        grid_points: trajectory.len(),
        data_events: trajectory.stats.data_updates,
        ode_events: trajectory.stats.ode_updates,
        passes: trajectory.stats.clone(),
        holdout_days: None,
        extrapolation: (t_end > last_datum).then_some(t_end - last_datum),
    };
    Ok(InferenceRun {
        trajectory,
        summary,
        report,
    })
}

/// Score a posterior summary against ground truth on the same grid.
pub fn score_against_truth(config: &ProblemConfig, summary: &PosteriorSummary, truth: &GroundTruth) -> Result<ScoreReport> {
    check_same_grid(&summary.times, &truth.grid)?;
    score(
        &summary.times,
        &summary.latent_native_mean,
        &summary.latent_native_cov,
        &truth.u_native,
        &config.links,
    )
}

pub fn check_same_grid(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| (x - y).abs() > 1e-9 * x.abs().max(1.0)) {
        return Err(Error::argument(format!(
            "grid mismatch: estimate has {} points, truth has {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Simulate, infer and score one seed of a simulated experiment.
pub fn simulated_experiment(
    config: &ProblemConfig,
    seed: u64,
    opts: &InferenceOptions,
) -> Result<(Simulation, InferenceRun, ScoreReport)> {
    let sim = simulate(config, seed)?;
    let run = run_inference(config, &sim.dataset, opts, &sim.dataset.meta.config_hash)?;
    let score = score_against_truth(config, &run.summary, &sim.truth)?;
    Ok((sim, run, score))
}
