//! JHU CSSE time-series ingestion and the COVID-19 SIRD experiment.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{run_inference, InferenceOptions, InferenceRun};
use crate::problems::ProblemConfig;
use crate::simulate::{config_hash, fmt, write_file, Dataset, DatasetMeta, FileHeader};

pub const CONFIRMED_FILE: &str = "time_series_covid19_confirmed_global.csv";
pub const RECOVERED_FILE: &str = "time_series_covid19_recovered_global.csv";
pub const DEATHS_FILE: &str = "time_series_covid19_deaths_global.csv";

/// Observation noise variance of the case data, in cases per thousand squared.
pub const DATA_NOISE: f64 = 0.01;
/// Observation noise variance of the log-transformed case data.
pub const LOG_DATA_NOISE: f64 = 0.01;
pub const DEFAULT_HOLDOUT_DAYS: usize = 14;
pub const DEFAULT_HORIZON_DAYS: usize = 31;

/// Aligned cumulative counts for one country.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub country: String,
    pub dates: Vec<NaiveDate>,
    pub confirmed: Vec<f64>,
    pub recovered: Vec<f64>,
    pub deceased: Vec<f64>,
    /// Dates dropped because a value was missing in at least one file.
    pub dropped: usize,
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%m/%d/%y").ok()
}

/// Per-date country totals of one JHU file; `None` marks a missing value.
fn read_jhu_file(path: &Path, country: &str) -> Result<(BTreeMap<NaiveDate, Option<f64>>, BTreeSet<String>, bool)> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read {name}: {e}")))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let parse_err = |line: usize, message: String| Error::Parse {
        source_name: name.clone(),
        line,
        message,
    };
    let country_col = header
        .iter()
        .position(|h| h.trim() == "Country/Region")
        .ok_or_else(|| parse_err(1, "missing 'Country/Region' column".into()))?;
    let mut date_cols = Vec::new();
    for (i, h) in header.iter().enumerate() {
        if let Some(d) = parse_date(h) {
            date_cols.push((i, d));
        }
    }
    if date_cols.is_empty() {
        return Err(parse_err(1, "no date columns in header".into()));
    }
    let mut totals: BTreeMap<NaiveDate, Option<f64>> = date_cols.iter().map(|(_, d)| (*d, Some(0.0))).collect();
    let mut countries = BTreeSet::new();
    let mut found = false;
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let c = rec[country_col].trim();
        countries.insert(c.to_string());
        if c != country {
            continue;
        }
        found = true;
        for (i, d) in &date_cols {
            let cell = rec[*i].trim();
            let entry = totals.get_mut(d).expect("initialised from header");
            if cell.is_empty() {
                *entry = None;
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("'{cell}' is not a count")))?;
            if let Some(acc) = entry.as_mut() {
                *acc += v;
            }
        }
    }
    Ok((totals, countries, found))
}

/// Parse the confirmed/recovered/deaths files and sum all rows of `country`.
pub fn parse_jhu_csv(confirmed: &Path, recovered: &Path, deaths: &Path, country: &str) -> Result<RawSeries> {
    let (c, countries, found) = read_jhu_file(confirmed, country)?;
    if !found {
        return Err(Error::argument(format!(
            "country '{country}' not found; available: {}",
            countries.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let (r, _, found_r) = read_jhu_file(recovered, country)?;
    let (d, _, found_d) = read_jhu_file(deaths, country)?;
    if !found_r || !found_d {
        return Err(Error::Data(format!("country '{country}' missing from the recovered or deaths file")));
    }
    let mut out = RawSeries {
        country: country.to_string(),
        dates: Vec::new(),
        confirmed: Vec::new(),
        recovered: Vec::new(),
        deceased: Vec::new(),
        dropped: 0,
    };
    for (date, cv) in &c {
        match (cv, r.get(date).copied().flatten(), d.get(date).copied().flatten()) {
            (Some(cv), Some(rv), Some(dv)) => {
                out.dates.push(*date);
                out.confirmed.push(*cv);
                out.recovered.push(rv);
                out.deceased.push(dv);
            }
            _ => out.dropped += 1,
        }
    }
    if out.dropped > 0 {
        log::warn!("{country}: dropped {} dates with missing values", out.dropped);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMark {
    pub date: NaiveDate,
    pub label: String,
}

/// Lines of `YYYY-MM-DD,label`; `#` starts a comment.
pub fn load_events(path: &Path) -> Result<Vec<EventMark>> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (date, label) = line.split_once(',').ok_or_else(|| Error::Parse {
            source_name: name.clone(),
            line: i + 1,
            message: "expected 'YYYY-MM-DD,label'".into(),
        })?;
        let date = NaiveDate::parse_from_str(date.trim(), "%Y-%m-%d").map_err(|e| Error::Parse {
            source_name: name.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(EventMark {
            date,
            label: label.trim().to_string(),
        });
    }
    Ok(out)
}

/// Compartment counts in cases per thousand; `S` is implied by `1000 − I − R − D`.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSeries {
    pub dates: Vec<NaiveDate>,
    pub infectious: Vec<f64>,
    pub recovered: Vec<f64>,
    pub deceased: Vec<f64>,
    /// Persons.
    pub population: f64,
    pub events: Vec<EventMark>,
}

fn running_max(v: &[f64]) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    v.iter()
        .map(|x| {
            m = m.max(*x);
            m
        })
        .collect()
}

/// `I = confirmed − R − D`, rescaled to cases per thousand. Cumulative series
/// are made non-decreasing by a running maximum and negative `I` is clipped
/// to zero.
pub fn to_sird(raw: &RawSeries, population: f64) -> Result<CaseSeries> {
    if !(population > 0.0) || !population.is_finite() {
        return Err(Error::argument(format!("population must be positive, got {population}")));
    }
    if raw.dates.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Data("dates are not strictly increasing".into()));
    }
    let scale = 1000.0 / population;
    let c = running_max(&raw.confirmed);
    let r = running_max(&raw.recovered);
    let d = running_max(&raw.deceased);
    let mut clipped = 0usize;
    let infectious = (0..c.len())
        .map(|k| {
            let i = c[k] - r[k] - d[k];
            if i < 0.0 {
                clipped += 1;
            }
            i.max(0.0) * scale
        })
        .collect();
    if clipped > 0 {
        log::warn!("{}: clipped {clipped} negative infectious counts to zero", raw.country);
    }
    Ok(CaseSeries {
        dates: raw.dates.clone(),
        infectious,
        recovered: r.iter().map(|v| v * scale).collect(),
        deceased: d.iter().map(|v| v * scale).collect(),
        population,
        events: Vec::new(),
    })
}

impl CaseSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn susceptible(&self, k: usize) -> f64 {
        1000.0 - self.infectious[k] - self.recovered[k] - self.deceased[k]
    }

    /// Days since the first date.
    pub fn day(&self, date: NaiveDate) -> f64 {
        (date - self.dates[0]).num_days() as f64
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            dates: self.dates[range.clone()].to_vec(),
            infectious: self.infectious[range.clone()].to_vec(),
            recovered: self.recovered[range.clone()].to_vec(),
            deceased: self.deceased[range].to_vec(),
            population: self.population,
            events: self.events.clone(),
        }
    }

    pub fn write_csv(&self, path: &Path, header: &FileHeader) -> Result<()> {
        let mut out = header.comment_line();
        out.push_str(&format!("# population={}\ndate,I,R,D\n", fmt(self.population)));
        for k in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.dates[k].format("%Y-%m-%d"),
                fmt(self.infectious[k]),
                fmt(self.recovered[k]),
                fmt(self.deceased[k])
            ));
        }
        write_file(path, &out)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let text = fs::read_to_string(path)?;
        let perr = |line: usize, message: String| Error::Parse {
            source_name: name.clone(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().skip_while(|(_, l)| l.starts_with("# lfm "));
        let population = lines
            .next()
            .and_then(|(_, l)| l.strip_prefix("# population="))
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| perr(1, "expected '# population=<persons>'".into()))?;
        match lines.next() {
            Some((_, h)) if h.trim() == "date,I,R,D" => {}
            _ => return Err(perr(2, "expected header 'date,I,R,D'".into())),
        }
        let mut s = Self {
            dates: Vec::new(),
            infectious: Vec::new(),
            recovered: Vec::new(),
            deceased: Vec::new(),
            population,
            events: Vec::new(),
        };
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(perr(i + 1, format!("expected 4 fields, found {}", f.len())));
            }
            let date = NaiveDate::parse_from_str(f[0], "%Y-%m-%d").map_err(|e| perr(i + 1, e.to_string()))?;
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| perr(i + 1, format!("'{s}' is not a number")));
            s.dates.push(date);
            s.infectious.push(num(f[1])?);
            s.recovered.push(num(f[2])?);
            s.deceased.push(num(f[3])?);
        }
        if s.dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!("{name}: dates are not strictly increasing")));
        }
        Ok(s)
    }

    /// Observations of `(S, I, R, D)` at day offsets from the first date.
    pub fn to_dataset(&self, source: &str, config_hash: &str) -> Dataset {
        Dataset {
            meta: DatasetMeta {
                source: source.to_string(),
                seed: 0,
                config_hash: config_hash.to_string(),
                observed: vec![0, 1, 2, 3],
                columns: ["S", "I", "R", "D"].iter().map(|s| s.to_string()).collect(),
                noise_var: vec![DATA_NOISE; 4],
                obs_stride: None,
                grid: None,
                population: Some(self.population),
                start_date: self.dates.first().map(|d| d.format("%Y-%m-%d").to_string()),
            },
            times: self.dates.iter().map(|d| self.day(*d)).collect(),
            values: (0..self.len())
                .map(|k| {
                    DVector::from_vec(vec![
                        self.susceptible(k),
                        self.infectious[k],
                        self.recovered[k],
                        self.deceased[k],
                    ])
                })
                .collect(),
        }
    }
}

/// Withhold the final `holdout` days.
pub fn train_validation_split(series: &CaseSeries, holdout: usize) -> Result<(CaseSeries, CaseSeries)> {
    if holdout >= series.len() {
        return Err(Error::argument(format!(
            "holdout of {holdout} days leaves no training data in a {}-day series",
            series.len()
        )));
    }
    let cut = series.len() - holdout;
    Ok((series.slice(0..cut), series.slice(cut..series.len())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovidOptions {
    pub log_space: bool,
    pub holdout_days: usize,
    pub horizon_days: usize,
    #[serde(default)]
    pub inference: InferenceOptions,
}

impl Default for CovidOptions {
    fn default() -> Self {
        Self {
            log_space: false,
            holdout_days: DEFAULT_HOLDOUT_DAYS,
            horizon_days: DEFAULT_HORIZON_DAYS,
            inference: InferenceOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CovidRun {
    pub config: ProblemConfig,
    pub config_hash: String,
    pub train: CaseSeries,
    pub validation: CaseSeries,
    pub run: InferenceRun,
}

/// Split, infer on the training window, and extrapolate `horizon_days` past
/// the last training day with ODE updates only.
pub fn run_covid(series: &CaseSeries, opts: &CovidOptions) -> Result<CovidRun> {
    let (train, validation) = train_validation_split(series, opts.holdout_days)?;
    let last = train.day(*train.dates.last().expect("non-empty"));
    let t_end = last + opts.horizon_days as f64;
    let config = if opts.log_space {
        ProblemConfig::sird_covid_log(t_end)?
    } else {
        ProblemConfig::sird_covid(t_end)?
    };
    let hash = config_hash(&(&config, opts))?;
    let dataset = train.to_dataset("jhu", &hash);
    let mut inference = opts.inference.clone();
    if opts.log_space && inference.data_noise.is_none() {
        inference.data_noise = Some(vec![LOG_DATA_NOISE; 4]);
    }
    let mut run = run_inference(&config, &dataset, &inference, &hash)?;
    run.report.holdout_days = Some(opts.holdout_days);
    Ok(CovidRun {
        config,
        config_hash: hash,
        train,
        validation,
        run,
    })
}

impl CovidRun {
    pub fn header(&self) -> FileHeader {
        FileHeader {
            config_hash: self.config_hash.clone(),
            seed: 0,
        }
    }

    fn grid_index(&self, day: f64) -> Option<usize> {
        let times = &self.run.summary.times;
        let k = times.partition_point(|t| *t < day - 1e-9);
        (k < times.len() && (times[k] - day).abs() < 1e-6).then_some(k)
    }

    /// Posterior of `I` next to the withheld observations.
    pub fn write_validation_csv(&self, path: &Path) -> Result<()> {
        let s = &self.run.summary;
        let mut out = self.header().comment_line();
        out.push_str("date,t,I_observed,I_mean,I_lo95,I_hi95,R_observed,R_mean,D_observed,D_mean\n");
        for k in 0..self.validation.len() {
            let date = self.validation.dates[k];
            let day = self.train.day(date);
            let Some(j) = self.grid_index(day) else { continue };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                date.format("%Y-%m-%d"),
                fmt(day),
                fmt(self.validation.infectious[k]),
                fmt(s.state_mean[j][1]),
                fmt(s.state_lo[j][1]),
                fmt(s.state_hi[j][1]),
                fmt(self.validation.recovered[k]),
                fmt(s.state_mean[j][2]),
                fmt(self.validation.deceased[k]),
                fmt(s.state_mean[j][3]),
            ));
        }
        write_file(path, &out)
    }

    pub fn write_events_csv(&self, path: &Path) -> Result<()> {
        let mut out = self.header().comment_line();
        out.push_str("date,t,label\n");
        for e in &self.train.events {
            out.push_str(&format!(
                "{},{},{}\n",
                e.date.format("%Y-%m-%d"),
                fmt(self.train.day(e.date)),
                e.label
            ));
        }
        write_file(path, &out)
    }

    /// Mean of the linked contact-rate posterior mean over `[from, to)` days.
    pub fn mean_contact_rate(&self, from: f64, to: f64) -> f64 {
        let s = &self.run.summary;
        let vals: Vec<f64> = s
            .times
            .iter()
            .zip(&s.latent_linked_mean)
            .filter(|(t, _)| **t >= from && **t < to)
            .map(|(_, b)| b[0])
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }
}
