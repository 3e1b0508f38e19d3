#![allow(dead_code)]

use chrono::NaiveDate;
use potsel::gpd::GpdParams;
use potsel::rng::{stream, StreamRng};
use potsel::station::StationSeries;
use rand::Rng;
use rand_distr::{Beta, Distribution};

/// Every day of `years` calendar years from 1950, each value from `draw`.
pub fn daily_station(id: &str, years: i32, seed: u64, mut draw: impl FnMut(&mut StreamRng) -> f64) -> StationSeries {
    let mut rng = stream(seed, &[potsel::rng::key_of(id)]);
    let start = NaiveDate::from_ymd_opt(1950, 1, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(1950 + years, 1, 1).unwrap();
    let obs = start.iter_days().take_while(|d| *d < end).map(|d| (d, draw(&mut rng))).collect();
    StationSeries::new(id, obs).unwrap()
}

/// Daily values below 5 from `5·Beta(2, 1)` with probability `body`, above
/// from `5 + GPD(2, 0.25)` otherwise.
pub fn mixture_station(id: &str, years: i32, seed: u64, body: f64) -> StationSeries {
    let beta = Beta::new(2.0, 1.0).unwrap();
    let tail = GpdParams::new(2.0, 0.25).unwrap();
    daily_station(id, years, seed, |rng| {
        if rng.random::<f64>() < body {
            5.0 * beta.sample(rng)
        } else {
            5.0 + tail.draw(rng)
        }
    })
}

pub fn gpd_station(id: &str, years: i32, seed: u64) -> StationSeries {
    let p = GpdParams::new(1.0, 0.25).unwrap();
    daily_station(id, years, seed, |rng| p.draw(rng))
}

/// Values rounded to tenths of mm, as stored in `.dly` files.
pub fn rounded(mut s: StationSeries) -> StationSeries {
    for o in &mut s.observations {
        o.1 = (o.1 * 10.0).round() / 10.0;
    }
    s
}

/// A mixed corpus: mixture and pure GPD sites, short records and a
/// constant site.
pub fn corpus(sites: usize, seed: u64) -> Vec<StationSeries> {
    (0..sites)
        .map(|i| {
            let id = format!("SITE{i:04}");
            match i % 10 {
                0 => daily_station(&id, 20, seed, |rng| rng.random::<f64>()),
                1 => daily_station(&id, 55, seed, |_| 2.5),
                2..=5 => mixture_station(&id, 52, seed, 0.8),
                _ => gpd_station(&id, 52, seed),
            }
        })
        .collect()
}
