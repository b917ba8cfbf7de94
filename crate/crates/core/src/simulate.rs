//! Synthetic ground truth and datasets: latent forces sampled from their
//! prior, a reference ODE solve, then subsampling plus Gaussian noise.
//!
//! Random numbers come from ChaCha20 seeded with `seed_from_u64(seed)`.
//! Stream 0 draws the latent-force path (initial state first, then one
//! standard-normal vector per grid step); stream 1 draws observation noise
//! (row by row, observed coordinates in order). A latent path under which
//! the ODE solution diverges is discarded and redrawn from stream `1 + k` on
//! the k-th retry.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gauss_markov::{discretize, GaussianDensity, LtiSde};
use crate::linalg::psd_sqrt;
use crate::problems::{GridSpec, ProblemConfig, VectorField};

pub const LATENT_STREAM: u64 = 0;
pub const NOISE_STREAM: u64 = 1;
pub const MAX_TRUTH_ATTEMPTS: u64 = 10;

pub fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn standard_normal_vec<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// SHA-256 of the canonical JSON form of a configuration, first 16 hex digits.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let text = serde_json::to_string(config)?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(hex::encode(digest)[..16].to_string())
}

/// Exact sampling `x_{k+1} = Φ x_k + q_k` on `grid`, starting from `initial`.
pub fn sample_prior_from<R: Rng>(
    prior: &LtiSde,
    initial: &GaussianDensity,
    grid: &[f64],
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::argument("sampling grid must be strictly increasing"));
    }
    let n = prior.state_dim();
    if initial.dim() != n {
        return Err(Error::argument("initial law has the wrong dimension"));
    }
    let mut out = Vec::with_capacity(grid.len());
    if grid.is_empty() {
        return Ok(out);
    }
    let root = psd_sqrt(&initial.cov)?;
    let mut x = &initial.mean + root * standard_normal_vec(rng, n);
    out.push(x.clone());
    let mut cached: Option<(u64, crate::gauss_markov::DiscreteTransition)> = None;
    for w in grid.windows(2) {
        let dt = w[1] - w[0];
        if cached.as_ref().map(|(b, _)| *b != dt.to_bits()).unwrap_or(true) {
            cached = Some((dt.to_bits(), discretize(prior, dt)?));
        }
        let tr = &cached.as_ref().expect("just set").1;
        let q = tr.process_noise_sqrt()?;
        x = &tr.transition * &x + q * standard_normal_vec(rng, n);
        out.push(x.clone());
    }
    Ok(out)
}

/// Sample a path of `prior` from its stationary law; deterministic in `seed`.
pub fn sample_prior(prior: &LtiSde, grid: &[f64], seed: u64) -> Result<Vec<DVector<f64>>> {
    sample_prior_stream(prior, grid, seed, LATENT_STREAM)
}

pub fn sample_prior_stream(prior: &LtiSde, grid: &[f64], seed: u64, stream: u64) -> Result<Vec<DVector<f64>>> {
    let n = prior.state_dim();
    let initial = GaussianDensity::new(DVector::zeros(n), prior.stationary_covariance()?)?;
    sample_prior_from(prior, &initial, grid, &mut rng_for(seed, stream))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Largest `|ẋ_interp − f| / (1 + |f|)` at interval midpoints.
    pub max_scaled_residual: f64,
    pub steps: usize,
    pub rejected: usize,
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Continuous extension of one accepted step.
struct DenseStep {
    t0: f64,
    h: f64,
    y0: DVector<f64>,
    coef: [DVector<f64>; 4],
}

impl DenseStep {
    fn eval(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let [a, b, c, d] = &self.coef;
        let q = c + d * th1;
        let r = b + &q * th;
        let s = a + &r * th1;
        let x = &self.y0 + &s * th;
        let dq = -d;
        let dr = &q + dq * th;
        let ds = -&r + dr * th1;
        let dx = (&s + ds * th) / self.h;
        (x, dx)
    }
}

/// Adaptive Dormand–Prince 5(4) solve of `ẋ = f(x; u(t))` with `u` linearly
/// interpolated between `grid` nodes. The solver integrates node to node, so
/// the kinks of the interpolant never fall inside a step.
pub fn reference_solve(
    vf: &dyn VectorField,
    u_values: &[DVector<f64>],
    x0: &DVector<f64>,
    grid: &[f64],
    tol: Tolerances,
) -> Result<ReferenceSolution> {
    if grid.len() != u_values.len() {
        return Err(Error::argument(format!(
            "{} latent values for {} grid points",
            u_values.len(),
            grid.len()
        )));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::argument("solver grid must be strictly increasing"));
    }
    if x0.len() != vf.dim() {
        return Err(Error::argument("initial state has the wrong dimension"));
    }
    let mut states = vec![x0.clone()];
    let mut max_res: f64 = 0.0;
    let (mut steps, mut rejected) = (0usize, 0usize);
    let mut h = grid
        .windows(2)
        .next()
        .map(|w| (w[1] - w[0]) * 0.1)
        .unwrap_or(0.0);
    for k in 0..grid.len().saturating_sub(1) {
        let (ta, tb) = (grid[k], grid[k + 1]);
        let (ua, ub) = (&u_values[k], &u_values[k + 1]);
        let u_at = |t: f64| {
            let w = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
            ua * (1.0 - w) + ub * w
        };
        let f = |t: f64, x: &DVector<f64>| vf.eval(x, &u_at(t));
        let mid = 0.5 * (ta + tb);
        let mut t = ta;
        let mut y = states[k].clone();
        let mut k1 = f(t, &y);
        h = h.min(tb - ta);
        while t < tb {
            // Stretch a step that would leave a sliver before the node.
            let last = t + 1.01 * h >= tb;
            let hs = if last { tb - t } else { h };
            if hs <= 1e-14 * t.abs().max(1.0) {
                return Err(Error::numerical(t, "step size underflow in the reference solver; problem may be stiff"));
            }
            let mut ks: Vec<DVector<f64>> = Vec::with_capacity(7);
            ks.push(k1.clone());
            for s in 1..7 {
                let mut ys = y.clone();
                for (j, kj) in ks.iter().enumerate() {
                    if A[s][j] != 0.0 {
                        ys += kj * (hs * A[s][j]);
                    }
                }
                ks.push(f(t + C[s] * hs, &ys));
            }
            // Row 6 of A is the 5th-order solution; its stage is FSAL.
            let mut y1 = y.clone();
            for (j, kj) in ks.iter().take(6).enumerate() {
                if A[6][j] != 0.0 {
                    y1 += kj * (hs * A[6][j]);
                }
            }
            let k7 = f(t + hs, &y1);
            ks[6] = k7.clone();
            let mut err = DVector::zeros(y.len());
            for (j, kj) in ks.iter().enumerate() {
                if E[j] != 0.0 {
                    err += kj * (hs * E[j]);
                }
            }
            let n = y.len() as f64;
            let err_norm = (err
                .iter()
                .zip(y.iter().zip(y1.iter()))
                .map(|(e, (a, b))| {
                    let sc = tol.atol + tol.rtol * a.abs().max(b.abs());
                    (e / sc).powi(2)
                })
                .sum::<f64>()
                / n)
                .sqrt();
            if !err_norm.is_finite() {
                return Err(Error::numerical(t, "non-finite values in the reference solver"));
            }
            if err_norm <= 1.0 {
                steps += 1;
                if t <= mid && mid <= t + hs {
                    let ydiff = &y1 - &y;
                    let bspl = &k1 * hs - &ydiff;
                    let c3 = &ydiff - &k7 * hs - &bspl;
                    let mut c4 = DVector::zeros(y.len());
                    for (j, kj) in ks.iter().enumerate() {
                        if D[j] != 0.0 {
                            c4 += kj * (hs * D[j]);
                        }
                    }
                    let dense = DenseStep {
                        t0: t,
                        h: hs,
                        y0: y.clone(),
                        coef: [ydiff, bspl, c3, c4],
                    };
                    let (xm, dxm) = dense.eval(mid);
                    let fm = f(mid, &xm);
                    for i in 0..fm.len() {
                        max_res = max_res.max((dxm[i] - fm[i]).abs() / (1.0 + fm[i].abs()));
                    }
                }
                t = if last { tb } else { t + hs };
                y = y1;
                k1 = k7;
                let fac = if err_norm == 0.0 { 5.0 } else { (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0) };
                if !last {
                    h = hs * fac;
                } else {
                    h = h.max(hs * fac.min(1.0));
                }
            } else {
                rejected += 1;
                h = hs * (0.9 * err_norm.powf(-0.2)).clamp(0.1, 1.0);
            }
        }
        states.push(y);
    }
    Ok(ReferenceSolution {
        times: grid.to_vec(),
        states,
        max_scaled_residual: max_res,
        steps,
        rejected,
    })
}

/// Ground-truth latent force and ODE solution on the dense grid.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub grid: Vec<f64>,
    pub u_native: Vec<DVector<f64>>,
    pub u_linked: Vec<DVector<f64>>,
    pub x: Vec<DVector<f64>>,
    pub seed: u64,
    /// Number of latent paths drawn, including discarded divergent ones.
    pub attempts: u64,
    pub max_scaled_residual: f64,
}

pub const TRUTH_RESIDUAL_TOL: f64 = 1e-5;

impl GroundTruth {
    pub fn generate(config: &ProblemConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let sim = config
            .simulation
            .as_ref()
            .ok_or_else(|| Error::argument(format!("configuration '{}' has no simulation settings", config.name())))?;
        let grid = config.grid.points();
        let layout = config.layout();
        let prior = config.latent_prior()?;
        let field = config.vector_field()?;
        let x0 = DVector::from_column_slice(&sim.initial_state);
        let mut last_err = None;
        for attempt in 0..MAX_TRUTH_ATTEMPTS {
            let stream = if attempt == 0 { LATENT_STREAM } else { NOISE_STREAM + attempt };
            let latent_path = sample_prior_stream(&prior, &grid, seed, stream)?;
            let u_native: Vec<DVector<f64>> = latent_path
                .iter()
                .map(|s| DVector::from_iterator(layout.latent_dim(), layout.latent_positions.iter().map(|&i| s[i])))
                .collect();
            let u_linked: Vec<DVector<f64>> = u_native
                .iter()
                .map(|u| DVector::from_iterator(u.len(), u.iter().zip(&config.links).map(|(v, l)| l.forward(*v))))
                .collect();
            let sol = match reference_solve(field.as_ref(), &u_linked, &x0, &grid, Tolerances::default()) {
                Ok(sol) => sol,
                Err(e @ Error::Numerical { .. }) => {
                    log::info!("seed {seed}: latent draw {attempt} rejected ({e})");
                    last_err = Some(e);
                    continue;
                }
                Err(e) => return Err(e),
            };
            if sol.max_scaled_residual > TRUTH_RESIDUAL_TOL {
                return Err(Error::numerical(
                    f64::NAN,
                    format!(
                        "reference solution violates the ODE by {:.2e} (tolerance {TRUTH_RESIDUAL_TOL:e})",
                        sol.max_scaled_residual
                    ),
                ));
            }
            return Ok(Self {
                grid,
                u_native,
                u_linked,
                x: sol.states,
                seed,
                attempts: attempt + 1,
                max_scaled_residual: sol.max_scaled_residual,
            });
        }
        Err(last_err.expect("at least one attempt"))
    }

    /// Per-coordinate standard deviation of the true trajectory.
    pub fn state_std(&self) -> Vec<f64> {
        let d = self.x.first().map(|v| v.len()).unwrap_or(0);
        let n = self.x.len() as f64;
        (0..d)
            .map(|i| {
                let mean = self.x.iter().map(|v| v[i]).sum::<f64>() / n;
                (self.x.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path, header: &FileHeader, state_names: &[String], latent_names: &[String]) -> Result<()> {
        let mut out = header.comment_line();
        let mut cols = vec!["t".to_string()];
        cols.extend(state_names.iter().cloned());
        cols.extend(latent_names.iter().map(|n| format!("{n}_native")));
        cols.extend(latent_names.iter().cloned());
        out.push_str(&cols.join(","));
        out.push('\n');
        for k in 0..self.grid.len() {
            let mut row = vec![fmt(self.grid[k])];
            row.extend(self.x[k].iter().map(|v| fmt(*v)));
            row.extend(self.u_native[k].iter().map(|v| fmt(*v)));
            row.extend(self.u_linked[k].iter().map(|v| fmt(*v)));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        write_file(path, &out)
    }

    /// Reads a file written by [`GroundTruth::write_csv`]; `latent_dim`
    /// separates state from latent columns.
    pub fn read_csv(path: &Path, latent_dim: usize) -> Result<Self> {
        let (header, cols, rows) = read_table(path)?;
        let d = cols
            .len()
            .checked_sub(1 + 2 * latent_dim)
            .ok_or_else(|| Error::Data(format!("{} has too few columns", path.display())))?;
        let mut truth = Self {
            grid: Vec::new(),
            u_native: Vec::new(),
            u_linked: Vec::new(),
            x: Vec::new(),
            seed: header.seed,
            attempts: 1,
            max_scaled_residual: f64::NAN,
        };
        for r in rows {
            truth.grid.push(r[0]);
            truth.x.push(DVector::from_column_slice(&r[1..1 + d]));
            truth.u_native.push(DVector::from_column_slice(&r[1 + d..1 + d + latent_dim]));
            truth.u_linked.push(DVector::from_column_slice(&r[1 + d + latent_dim..]));
        }
        Ok(truth)
    }
}

/// Shortest round-trip decimal form; identical inputs give identical bytes.
pub fn fmt(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// The `# lfm config_hash=… seed=…` line that opens every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileHeader {
    pub config_hash: String,
    pub seed: u64,
}

impl FileHeader {
    pub fn comment_line(&self) -> String {
        format!("# lfm config_hash={} seed={}\n", self.config_hash, self.seed)
    }

    fn parse(line: &str) -> Option<Self> {
        let rest = line.strip_prefix("# lfm ")?;
        let mut hash = None;
        let mut seed = None;
        for part in rest.split_whitespace() {
            if let Some(v) = part.strip_prefix("config_hash=") {
                hash = Some(v.to_string());
            } else if let Some(v) = part.strip_prefix("seed=") {
                seed = v.parse().ok();
            }
        }
        Some(Self {
            config_hash: hash?,
            seed: seed?,
        })
    }
}

/// Reads a numeric CSV with an optional `# lfm` header line.
pub(crate) fn read_table(path: &Path) -> Result<(FileHeader, Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let name = path.display().to_string();
    let header = text
        .lines()
        .next()
        .and_then(FileHeader::parse)
        .unwrap_or(FileHeader {
            config_hash: String::new(),
            seed: 0,
        });
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(text.as_bytes());
    let cols: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != cols.len() {
            return Err(Error::Parse {
                source_name: name.clone(),
                line,
                message: format!("expected {} fields, found {}", cols.len(), rec.len()),
            });
        }
        let row = rec
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| Error::Parse {
                    source_name: name.clone(),
                    line,
                    message: format!("'{s}' is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, cols, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// Problem name or data source.
    pub source: String,
    pub seed: u64,
    pub config_hash: String,
    /// State coordinates observed, in column order.
    pub observed: Vec<usize>,
    pub columns: Vec<String>,
    /// Diagonal of the observation noise covariance R.
    pub noise_var: Vec<f64>,
    #[serde(default)]
    pub obs_stride: Option<usize>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub population: Option<f64>,
    #[serde(default)]
    pub start_date: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl Dataset {
    pub fn header(&self) -> FileHeader {
        FileHeader {
            config_hash: self.meta.config_hash.clone(),
            seed: self.meta.seed,
        }
    }

    /// Sidecar metadata path: `data.csv` → `data.json`.
    pub fn meta_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("json")
    }

    pub fn write(&self, csv_path: &Path) -> Result<()> {
        let mut out = self.header().comment_line();
        out.push('t');
        for c in &self.meta.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (t, y) in self.times.iter().zip(&self.values) {
            out.push_str(&fmt(*t));
            for v in y.iter() {
                out.push(',');
                out.push_str(&fmt(*v));
            }
            out.push('\n');
        }
        write_file(csv_path, &out)?;
        let mut meta = serde_json::to_string_pretty(&self.meta)?;
        meta.push('\n');
        write_file(&Self::meta_path(csv_path), &meta)
    }

    pub fn read(csv_path: &Path) -> Result<Self> {
        let meta_path = Self::meta_path(csv_path);
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&meta_path).map_err(|e| {
            Error::Data(format!("cannot read dataset metadata {}: {e}", meta_path.display()))
        })?)?;
        let (_, cols, rows) = read_table(csv_path)?;
        if cols.len() != meta.columns.len() + 1 || meta.noise_var.len() != meta.columns.len() {
            return Err(Error::Data(format!(
                "{} has {} value columns but metadata lists {}",
                csv_path.display(),
                cols.len().saturating_sub(1),
                meta.columns.len()
            )));
        }
        let times = rows.iter().map(|r| r[0]).collect::<Vec<_>>();
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Data(format!("{}: times are not strictly increasing", csv_path.display())));
        }
        let values = rows.iter().map(|r| DVector::from_column_slice(&r[1..])).collect();
        Ok(Self { meta, times, values })
    }

    pub fn noise_cov(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.meta.noise_var))
    }
}

/// Every `stride`-th truth point of the `observed` coordinates plus
/// independent `N(0, noise_std²)` noise drawn from stream 1 of `seed`.
pub fn make_dataset(
    truth: &GroundTruth,
    stride: usize,
    observed: &[usize],
    noise_std: &[f64],
    seed: u64,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    if stride == 0 {
        return Err(Error::argument("observation stride must be >= 1"));
    }
    if noise_std.len() != observed.len() || noise_std.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::argument("need one non-negative noise std per observed coordinate"));
    }
    let d = truth.x.first().map(|v| v.len()).unwrap_or(0);
    if observed.iter().any(|&i| i >= d) {
        return Err(Error::argument("observed coordinate out of range"));
    }
    let mut rng = rng_for(seed, NOISE_STREAM);
    let mut times = Vec::new();
    let mut values = Vec::new();
    for k in (0..truth.grid.len()).step_by(stride) {
        times.push(truth.grid[k]);
        let noise = standard_normal_vec(&mut rng, observed.len());
        values.push(DVector::from_iterator(
            observed.len(),
            observed
                .iter()
                .enumerate()
                .map(|(j, &i)| truth.x[k][i] + noise_std[j] * noise[j]),
        ));
    }
    Ok((times, values))
}

/// A full simulated experiment: ground truth plus its noisy dataset.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub truth: GroundTruth,
    pub dataset: Dataset,
}

pub fn simulate(config: &ProblemConfig, seed: u64) -> Result<Simulation> {
    let truth = GroundTruth::generate(config, seed)?;
    let sim = config.simulation.as_ref().expect("checked by generate");
    let all_std = truth.state_std();
    let noise_std: Vec<f64> = config.observed.iter().map(|&i| sim.noise_scale * all_std[i]).collect();
    let (times, values) = make_dataset(&truth, sim.obs_stride, &config.observed, &noise_std, seed)?;
    let names = config.vector_field()?.state_names();
    let dataset = Dataset {
        meta: DatasetMeta {
            source: config.name().to_string(),
            seed,
            config_hash: config_hash(config)?,
            observed: config.observed.clone(),
            columns: config.observed.iter().map(|&i| names[i].clone()).collect(),
            noise_var: noise_std.iter().map(|s| s * s).collect(),
            obs_stride: Some(sim.obs_stride),
            grid: Some(config.grid),
            population: match config.problem {
                crate::problems::ProblemKind::Sird { population, .. } => Some(population),
                _ => None,
            },
            start_date: None,
        },
        times,
        values,
    };
    Ok(Simulation { truth, dataset })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss_markov::matern32_prior_from_variance;
    use crate::problems::{LinearField, Sird};
    use approx::assert_relative_eq;

    #[test]
    fn zero_diffusion_path_is_constant() {
        let prior = LtiSde::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1), DVector::zeros(1)).unwrap();
        let init = GaussianDensity::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let grid: Vec<f64> = (0..50).map(|k| k as f64 * 0.3).collect();
        let path = sample_prior_from(&prior, &init, &grid, &mut rng_for(3, 0)).unwrap();
        assert!(path.iter().all(|x| x[0] == path[0][0]));
        assert!(path[0][0] != 0.0);
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let prior = matern32_prior_from_variance(2.0, 0.5).unwrap();
        let grid: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let a = sample_prior(&prior, &grid, 11).unwrap();
        let b = sample_prior(&prior, &grid, 11).unwrap();
        let c = sample_prior(&prior, &grid, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn stationary_variance_by_monte_carlo() {
        let prior = matern32_prior_from_variance(1.5, 0.7).unwrap();
        let p_inf = prior.stationary_covariance().unwrap();
        let grid = [0.0, 0.4, 2.0];
        let init = GaussianDensity::new(DVector::zeros(2), p_inf.clone()).unwrap();
        let mut rng = rng_for(99, 0);
        let n = 10_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let path = sample_prior_from(&prior, &init, &grid, &mut rng).unwrap();
            acc += path[2][0] * path[2][0];
        }
        let var = acc / n as f64;
        assert!((var - p_inf[(0, 0)]).abs() < 0.05 * p_inf[(0, 0)], "{var} vs {}", p_inf[(0, 0)]);
    }

    #[test]
    fn decay_matches_closed_form() {
        let vf = LinearField { a: DMatrix::from_element(1, 1, -1.0) };
        let grid: Vec<f64> = (0..=20).map(|k| k as f64 * 0.1).collect();
        let u = vec![DVector::zeros(0); grid.len()];
        let sol = reference_solve(&vf, &u, &DVector::from_element(1, 1.0), &grid, Tolerances::default()).unwrap();
        assert!((sol.states[20][0] - (-2.0_f64).exp()).abs() < 1e-8);
        assert!(sol.max_scaled_residual < TRUTH_RESIDUAL_TOL);
    }

    #[test]
    fn sird_solve_conserves_population() {
        let vf = Sird::new(1000.0, 0.06, 0.002).unwrap();
        let grid: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.1).collect();
        let u: Vec<DVector<f64>> = grid
            .iter()
            .map(|t| DVector::from_element(1, 0.15 + 0.1 * (t / 10.0).sin()))
            .collect();
        let x0 = DVector::from_vec(vec![990.0, 10.0, 0.0, 0.0]);
        let sol = reference_solve(&vf, &u, &x0, &grid, Tolerances::default()).unwrap();
        for x in &sol.states {
            assert!((x.sum() - 1000.0).abs() < 1e-8 * 1000.0);
        }
    }

    #[test]
    fn tighter_tolerance_is_self_consistent() {
        let vf = crate::problems::VanDerPol;
        let grid: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let u: Vec<DVector<f64>> = grid.iter().map(|t| DVector::from_element(1, 1.0 + 0.2 * t.cos())).collect();
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let tol = Tolerances::default();
        let a = reference_solve(&vf, &u, &x0, &grid, tol).unwrap();
        let b = reference_solve(&vf, &u, &x0, &grid, Tolerances { rtol: tol.rtol / 2.0, atol: tol.atol / 2.0 }).unwrap();
        let diff = a
            .states
            .iter()
            .zip(&b.states)
            .map(|(x, y)| (x - y).amax())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6, "{diff}");
    }

    fn fake_truth(n: usize) -> GroundTruth {
        let grid: Vec<f64> = (0..n).map(|k| k as f64).collect();
        GroundTruth {
            x: grid.iter().map(|t| DVector::from_vec(vec![t.sin(), t.cos()])).collect(),
            u_native: vec![DVector::zeros(0); n],
            u_linked: vec![DVector::zeros(0); n],
            grid,
            seed: 0,
            attempts: 1,
            max_scaled_residual: 0.0,
        }
    }

    #[test]
    fn noise_free_dataset_is_subsampled_truth() {
        let truth = fake_truth(31);
        let (t, y) = make_dataset(&truth, 10, &[0, 1], &[0.0, 0.0], 5).unwrap();
        assert_eq!(t, vec![0.0, 10.0, 20.0, 30.0]);
        assert_eq!(y[2], truth.x[20]);
        let (t1, _) = make_dataset(&truth, 1, &[1], &[0.1], 5).unwrap();
        assert_eq!(t1, truth.grid);
        assert!(make_dataset(&truth, 0, &[0], &[0.1], 5).is_err());
    }

    #[test]
    fn noise_std_matches_request() {
        let truth = fake_truth(10_000);
        let (_, y) = make_dataset(&truth, 1, &[0], &[0.3], 8).unwrap();
        let res: Vec<f64> = y.iter().zip(&truth.x).map(|(a, b)| a[0] - b[0]).collect();
        let mean = res.iter().sum::<f64>() / res.len() as f64;
        let std = (res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / res.len() as f64).sqrt();
        assert!((std - 0.3).abs() < 0.03 * 0.3, "{std}");
    }

    #[test]
    fn dataset_round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ProblemConfig::van_der_pol();
        let a = simulate(&cfg, 7).unwrap();
        let p1 = dir.path().join("a/data.csv");
        let p2 = dir.path().join("b/data.csv");
        a.dataset.write(&p1).unwrap();
        simulate(&cfg, 7).unwrap().dataset.write(&p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert_eq!(fs::read(p1.with_extension("json")).unwrap(), fs::read(p2.with_extension("json")).unwrap());
        let back = Dataset::read(&p1).unwrap();
        assert_eq!(back, a.dataset);
        assert!(back.times.iter().all(|t| a.truth.grid.contains(t)));
        let first = fs::read_to_string(&p1).unwrap();
        assert!(first.starts_with(&format!("# lfm config_hash={} seed=7", config_hash(&cfg).unwrap())));
    }

    #[test]
    fn truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ProblemConfig::lotka_volterra();
        let truth = GroundTruth::generate(&cfg, 3).unwrap();
        let vf = cfg.vector_field().unwrap();
        let p = dir.path().join("truth.csv");
        let header = FileHeader { config_hash: "x".into(), seed: 3 };
        truth.write_csv(&p, &header, &vf.state_names(), &vf.latent_names()).unwrap();
        let back = GroundTruth::read_csv(&p, 4).unwrap();
        assert_eq!(back.x, truth.x);
        assert_eq!(back.u_linked, truth.u_linked);
        assert_eq!(back.seed, 3);
    }

    #[test]
    fn all_problems_generate_valid_truth() {
        for cfg in [ProblemConfig::van_der_pol(), ProblemConfig::lotka_volterra(), ProblemConfig::sird(1000.0).unwrap()] {
            let truth = GroundTruth::generate(&cfg, 1).unwrap();
            assert!(truth.max_scaled_residual <= TRUTH_RESIDUAL_TOL);
            assert_eq!(truth.grid.len(), cfg.grid.len());
        }
        let sird = GroundTruth::generate(&ProblemConfig::sird(1000.0).unwrap(), 4).unwrap();
        for x in &sird.x {
            assert_relative_eq!(x.sum(), 1000.0, max_relative = 1e-8);
        }
    }
}
