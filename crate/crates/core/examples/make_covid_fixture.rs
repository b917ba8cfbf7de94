//! Writes the bundled case-count snapshot in the JHU CSSE time-series layout.
//!
//! The counts are synthetic: a SIRD epidemic in a population of 83 783 945
//! driven by a piecewise-linear contact rate, with weekday reporting effects
//! and log-normal reporting noise, rounded to integers. Germany is a single
//! row; two other countries are included so that filtering and
//! province summation are exercised.
//!
//! cargo run -p lfm-core --example make_covid_fixture [out_dir]

use std::fmt::Write as _;
use std::path::PathBuf;

use chrono::{Datelike, Days, NaiveDate};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use lfm_core::covid_ingest::{CONFIRMED_FILE, DEATHS_FILE, RECOVERED_FILE};
use lfm_core::problems::{Sird, GERMANY_POPULATION};
use lfm_core::simulate::{reference_solve, rng_for, Tolerances};

const DAYS: usize = 492;

/// (day since 2020-01-22, contact rate)
const GERMANY_BETA: [(f64, f64); 17] = [
    (0.0, 0.15),
    (30.0, 0.15),
    (33.0, 0.33),
    (58.0, 0.33),
    (68.0, 0.045),
    (120.0, 0.045),
    (130.0, 0.048),
    (200.0, 0.05),
    (225.0, 0.11),
    (295.0, 0.11),
    (305.0, 0.08),
    (330.0, 0.048),
    (395.0, 0.048),
    (405.0, 0.085),
    (455.0, 0.085),
    (468.0, 0.04),
    (491.0, 0.04),
];

fn interp(knots: &[(f64, f64)], t: f64) -> f64 {
    let k = knots.partition_point(|(x, _)| *x <= t);
    if k == 0 {
        return knots[0].1;
    }
    if k == knots.len() {
        return knots[k - 1].1;
    }
    let ((x0, y0), (x1, y1)) = (knots[k - 1], knots[k]);
    y0 + (y1 - y0) * (t - x0) / (x1 - x0)
}

struct Counts {
    confirmed: Vec<u64>,
    recovered: Vec<u64>,
    deaths: Vec<u64>,
}

fn epidemic(population: f64, beta: &[(f64, f64)], start_day: usize, seed_infected: f64, seed: u64) -> Counts {
    let vf = Sird::new(population, 0.06, 0.002).expect("positive population");
    let grid: Vec<f64> = (start_day..DAYS).map(|d| d as f64).collect();
    let u: Vec<DVector<f64>> = grid.iter().map(|t| DVector::from_element(1, interp(beta, *t))).collect();
    let x0 = DVector::from_vec(vec![population - seed_infected, seed_infected, 0.0, 0.0]);
    let sol = reference_solve(&vf, &u, &x0, &grid, Tolerances::default()).expect("smooth epidemic");
    let mut rng = rng_for(seed, 0);
    let mut noisy = |x: f64, sd: f64| (x * (sd * rng.sample::<f64, _>(StandardNormal)).exp()).max(0.0);
    let start = NaiveDate::from_ymd_opt(2020, 1, 22).expect("valid date");
    let (mut c, mut r, mut d) = (Vec::new(), Vec::new(), Vec::new());
    let (mut cc, mut rc, mut dc) = (0.0_f64, 0.0_f64, 0.0_f64);
    let (mut prev_c, mut prev_r, mut prev_d) = (0.0, 0.0, 0.0);
    for day in 0..DAYS {
        if day >= start_day {
            let x = &sol.states[day - start_day];
            let (true_c, true_r, true_d) = (population - x[0], x[2], x[3]);
            let weekday = match (start + Days::new(day as u64)).weekday().num_days_from_monday() {
                0 => 0.8,
                5 => 0.9,
                6 => 0.6,
                _ => 1.1,
            };
            cc += noisy((true_c - prev_c) * weekday, 0.1);
            rc += noisy((true_r - prev_r) * weekday, 0.15);
            dc += noisy((true_d - prev_d) * weekday, 0.15);
            prev_c = true_c;
            prev_r = true_r;
            prev_d = true_d;
        }
        c.push(cc.round() as u64);
        r.push(rc.round() as u64);
        d.push(dc.round() as u64);
    }
    Counts {
        confirmed: c,
        recovered: r,
        deaths: d,
    }
}

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/jhu_snapshot".into()));
    std::fs::create_dir_all(&out).expect("create output directory");
    let germany = epidemic(GERMANY_POPULATION, &GERMANY_BETA, 5, 1.0, 2020);
    let france_beta: Vec<(f64, f64)> = GERMANY_BETA.iter().map(|(t, b)| (*t, b * 1.05)).collect();
    let mainland = epidemic(65_000_000.0, &france_beta, 3, 3.0, 33);
    let overseas = epidemic(2_000_000.0, &france_beta, 40, 1.0, 974);
    let italy = epidemic(60_000_000.0, &GERMANY_BETA, 8, 2.0, 39);
    let rows: Vec<(&str, &str, f64, f64, &Counts)> = vec![
        ("", "Germany", 51.165691, 10.451526, &germany),
        ("", "France", 46.2276, 2.2137, &mainland),
        ("Reunion", "France", -21.1151, 55.5364, &overseas),
        ("", "Italy", 41.87194, 12.56738, &italy),
    ];
    let start = NaiveDate::from_ymd_opt(2020, 1, 22).expect("valid date");
    let mut header = String::from("Province/State,Country/Region,Lat,Long");
    for day in 0..DAYS {
        let date = start + Days::new(day as u64);
        write!(header, ",{}/{}/{}", date.month(), date.day(), date.year() % 100).expect("string write");
    }
    for (file, pick) in [
        (CONFIRMED_FILE, 0usize),
        (RECOVERED_FILE, 1),
        (DEATHS_FILE, 2),
    ] {
        let mut text = header.clone();
        text.push('\n');
        for (prov, country, lat, long, counts) in &rows {
            let series = match pick {
                0 => &counts.confirmed,
                1 => &counts.recovered,
                _ => &counts.deaths,
            };
            write!(text, "{prov},{country},{lat},{long}").expect("string write");
            for v in series {
                write!(text, ",{v}").expect("string write");
            }
            text.push('\n');
        }
        std::fs::write(out.join(file), text).expect("write snapshot file");
    }
    for day in [60, 100, 250, 344, DAYS - 1] {
        println!(
            "Germany on {}: confirmed {}, active {}, deaths {}",
            start + Days::new(day as u64),
            germany.confirmed[day],
            germany.confirmed[day] as i64 - germany.recovered[day] as i64 - germany.deaths[day] as i64,
            germany.deaths[day]
        );
    }
}
