//! Daily station records: ingestion, screening and threshold candidates.

use crate::error::{Error, Result};
use crate::null_dist::type7_quantile;
use chrono::{Datelike, NaiveDate};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

/// Daily precipitation of one station, in mm, missing days omitted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StationSeries {
    pub station_id: String,
    /// Strictly increasing dates with non-negative values.
    pub observations: Vec<(NaiveDate, f64)>,
    /// Years passing the availability screen; zero before screening.
    pub years_available: usize,
    pub season_filtered: bool,
    /// Days dropped on ingest as missing.
    pub missing: usize,
    /// Days dropped on ingest for a failed quality flag.
    pub quality_dropped: usize,
}

impl StationSeries {
    pub fn new(station_id: impl Into<String>, mut observations: Vec<(NaiveDate, f64)>) -> Result<Self> {
        observations.sort_by_key(|o| o.0);
        let s = Self { station_id: station_id.into(), observations, ..Default::default() };
        s.validate()?;
        Ok(s)
    }

    /// A series of consecutive days starting 1900-01-01, already prepared for
    /// modelling (no screening is applied to it).
    pub fn from_values(station_id: impl Into<String>, values: &[f64]) -> Result<Self> {
        let start = NaiveDate::from_ymd_opt(1900, 1, 1).expect("valid date");
        let observations = values.iter().zip(start.iter_days()).map(|(&v, d)| (d, v)).collect();
        let mut s = Self::new(station_id, observations)?;
        s.season_filtered = true;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.observations.windows(2).find(|w| w[0].0 >= w[1].0) {
            return Err(Error::Domain(format!("{}: repeated or unordered date {}", self.station_id, w[1].0)));
        }
        if let Some(o) = self.observations.iter().find(|o| !(o.1 >= 0.0 && o.1.is_finite())) {
            return Err(Error::Domain(format!("{}: invalid value {} on {}", self.station_id, o.1, o.0)));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.1).collect()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

const DLY_WIDTH: usize = 269;
const DLY_MISSING: i64 = -9999;

/// Reads the PRCP records of a GHCN-Daily `.dly` file, one series per
/// station id in order of first appearance.
pub fn parse_ghcn_dly<R: BufRead>(reader: R) -> Result<Vec<StationSeries>> {
    let mut stations: Vec<StationSeries> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: line_no, msg };
        if line.len() != DLY_WIDTH || !line.is_ascii() {
            return Err(err(format!("expected {DLY_WIDTH} ASCII characters, found {}", line.len())));
        }
        if &line[17..21] != "PRCP" {
            continue;
        }
        let id = line[0..11].trim();
        let year: i32 = line[11..15].trim().parse().map_err(|_| err(format!("bad year {:?}", &line[11..15])))?;
        let month: u32 = line[15..17].trim().parse().map_err(|_| err(format!("bad month {:?}", &line[15..17])))?;
        if !(1..=12).contains(&month) {
            return Err(err(format!("month {month} out of range")));
        }
        let idx = match stations.iter().position(|s| s.station_id == id) {
            Some(k) => k,
            None => {
                stations.push(StationSeries { station_id: id.to_string(), ..Default::default() });
                stations.len() - 1
            }
        };
        let st = &mut stations[idx];
        for day in 1..=31u32 {
            let g = 21 + 8 * (day as usize - 1);
            let field = &line[g..g + 5];
            let value: i64 = field.trim().parse().map_err(|_| err(format!("bad value {field:?} for day {day}")))?;
            let qflag = line.as_bytes()[g + 6];
            let date = NaiveDate::from_ymd_opt(year, month, day);
            if value == DLY_MISSING {
                if date.is_some() {
                    st.missing += 1;
                }
                continue;
            }
            let Some(date) = date else {
                return Err(err(format!("value for nonexistent day {year}-{month:02}-{day:02}")));
            };
            if qflag != b' ' {
                st.quality_dropped += 1;
                continue;
            }
            if value < 0 {
                return Err(err(format!("negative precipitation {value} on {date}")));
            }
            st.observations.push((date, value as f64 / 10.0));
        }
    }
    for s in &mut stations {
        s.observations.sort_by_key(|o| o.0);
        s.validate()?;
    }
    Ok(stations)
}

/// Writes a series as `.dly` PRCP lines; days without an observation are
/// written as missing and values are rounded to tenths of mm.
pub fn write_ghcn_dly<W: Write>(series: &StationSeries, mut w: W) -> Result<()> {
    if series.station_id.len() > 11 || !series.station_id.is_ascii() {
        return Err(Error::Domain(format!("station id {:?} does not fit 11 ASCII columns", series.station_id)));
    }
    let mut months: BTreeMap<(i32, u32), [Option<f64>; 31]> = BTreeMap::new();
    for &(d, v) in &series.observations {
        months.entry((d.year(), d.month())).or_insert([None; 31])[d.day0() as usize] = Some(v);
    }
    for ((year, month), days) in months {
        let mut line = format!("{:<11}{:04}{:02}PRCP", series.station_id, year, month);
        for v in days {
            let tenths = v.map_or(DLY_MISSING, |v| (v * 10.0).round() as i64);
            line.push_str(&format!("{tenths:>5}   "));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Reads `station_id,date,value_mm` records. Empty or `NA` values count as
/// missing.
pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<StationSeries>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != ["station_id", "date", "value_mm"] {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header station_id,date,value_mm, found {}", header.join(",")),
        });
    }
    let mut stations: Vec<StationSeries> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let err = |msg: String| Error::Parse { line, msg };
        let id = &rec[0];
        let date =
            NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d").map_err(|e| err(format!("date {:?}: {e}", &rec[1])))?;
        let idx = match stations.iter().position(|s| s.station_id == id) {
            Some(k) => k,
            None => {
                stations.push(StationSeries { station_id: id.to_string(), ..Default::default() });
                stations.len() - 1
            }
        };
        match &rec[2] {
            "" | "NA" => stations[idx].missing += 1,
            v => {
                let v: f64 = v.parse().map_err(|_| err(format!("value {v:?} is not a number")))?;
                stations[idx].observations.push((date, v));
            }
        }
    }
    for s in &mut stations {
        s.observations.sort_by_key(|o| o.0);
        s.validate()?;
    }
    Ok(stations)
}

pub fn write_csv<W: Write>(series: &[StationSeries], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["station_id", "date", "value_mm"]).map_err(csv_err)?;
    for s in series {
        for (d, v) in &s.observations {
            wr.write_record([s.station_id.as_str(), &d.format("%Y-%m-%d").to_string(), &v.to_string()])
                .map_err(csv_err)?;
        }
    }
    wr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse { line, msg: e.to_string() }
}

/// Record-length and season screen.
#[derive(Debug, Clone, PartialEq)]
pub struct Screen {
    pub min_years: usize,
    /// Months kept for modelling, 1 to 12.
    pub season: Vec<u32>,
    /// Fraction of a year's season days that must be present for the year
    /// to count.
    pub min_fraction: f64,
}

impl Default for Screen {
    fn default() -> Self {
        Self { min_years: 50, season: vec![11, 12, 1, 2, 3], min_fraction: 0.8 }
    }
}

fn days_in_month(year: i32, month: u32) -> u32 {
    let (ny, nm) = if month == 12 { (year + 1, 1) } else { (year, month + 1) };
    let first = NaiveDate::from_ymd_opt(year, month, 1).expect("valid month");
    let next = NaiveDate::from_ymd_opt(ny, nm, 1).expect("valid month");
    (next - first).num_days() as u32
}

impl Screen {
    pub fn validate(&self) -> Result<()> {
        if self.season.is_empty() || self.season.iter().any(|m| !(1..=12).contains(m)) {
            return Err(Error::Config(format!("season months must lie in 1..=12, got {:?}", self.season)));
        }
        if !(self.min_fraction > 0.0 && self.min_fraction <= 1.0) {
            return Err(Error::Config(format!("availability fraction must lie in (0, 1], got {}", self.min_fraction)));
        }
        Ok(())
    }

    pub fn in_season(&self, d: NaiveDate) -> bool {
        self.season.contains(&d.month())
    }

    /// Season days in a calendar year.
    pub fn season_days(&self, year: i32) -> u32 {
        let mut months = self.season.clone();
        months.sort_unstable();
        months.dedup();
        months.iter().map(|&m| days_in_month(year, m)).sum()
    }

    /// Mean number of season days per year.
    pub fn season_length(&self) -> f64 {
        (2001..2401).map(|y| self.season_days(y) as f64).sum::<f64>() / 400.0
    }
}

/// A station removed by [`screen_and_filter`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub station_id: String,
    pub years_available: usize,
    pub needed: usize,
}

/// Keeps the season days of a station with enough available years.
///
/// A calendar year is available when at least `min_fraction` of its season
/// days are observed. All season days are retained, including those of
/// years that fail the availability rule.
pub fn screen_and_filter(series: &StationSeries, screen: &Screen) -> std::result::Result<StationSeries, Rejection> {
    let mut present: BTreeMap<i32, u32> = BTreeMap::new();
    let observations: Vec<(NaiveDate, f64)> =
        series.observations.iter().copied().filter(|(d, _)| screen.in_season(*d)).collect();
    for (d, _) in &observations {
        *present.entry(d.year()).or_insert(0) += 1;
    }
    let years_available =
        present.iter().filter(|(&y, &c)| c as f64 >= screen.min_fraction * screen.season_days(y) as f64).count();
    if years_available < screen.min_years {
        return Err(Rejection { station_id: series.station_id.clone(), years_available, needed: screen.min_years });
    }
    Ok(StationSeries { observations, years_available, season_filtered: true, ..series.clone() })
}

/// Nominal percentiles of the threshold ladder: 75 to 97 by 2, then 97.1 to
/// 99.5 by 0.1.
pub fn ladder_percentiles() -> Vec<f64> {
    (0..12).map(|i| 75.0 + 2.0 * i as f64).chain((1..=25).map(|i| (970 + i) as f64 / 10.0)).collect()
}

/// Candidate threshold at a nominal percentile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rung {
    pub percentile: f64,
    pub threshold: f64,
}

/// Interpolated order-statistic percentiles of `values`; ties keep the lowest
/// percentile.
pub fn percentile_ladder(values: &[f64]) -> Result<Vec<Rung>> {
    if values.len() < 2 {
        return Err(Error::Ladder(format!("{} observation(s)", values.len())));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut rungs: Vec<Rung> = Vec::with_capacity(37);
    for p in ladder_percentiles() {
        let u = type7_quantile(&sorted, p / 100.0);
        if rungs.last().is_none_or(|r| u > r.threshold) {
            rungs.push(Rung { percentile: p, threshold: u });
        }
    }
    if rungs.len() < 2 {
        return Err(Error::Ladder("every candidate threshold is identical".into()));
    }
    Ok(rungs)
}

/// Intervals estimator of the extremal index from the times of successive
/// exceedances, clamped to `(0, 1]`.
pub fn intervals_estimator(times: &[i64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::Unavailable(format!("{} exceedance(s), need 2", times.len())));
    }
    let gaps: Vec<f64> = times.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    if gaps.iter().any(|&g| g <= 0.0) {
        return Err(Error::Domain("exceedance times must increase".into()));
    }
    let m = gaps.len() as f64;
    let theta = if gaps.iter().all(|&g| g <= 2.0) {
        let s: f64 = gaps.iter().sum();
        let s2: f64 = gaps.iter().map(|g| g * g).sum();
        2.0 * s * s / (m * s2)
    } else {
        let s: f64 = gaps.iter().map(|g| g - 1.0).sum();
        let s2: f64 = gaps.iter().map(|g| (g - 1.0) * (g - 2.0)).sum();
        2.0 * s * s / (m * s2)
    };
    Ok(theta.min(1.0))
}

/// Extremal index of a regularly spaced series above `u`.
pub fn extremal_index(values: &[f64], u: f64) -> Result<f64> {
    let times: Vec<i64> = values.iter().enumerate().filter(|(_, &x)| x > u).map(|(i, _)| i as i64).collect();
    intervals_estimator(&times)
}

/// Extremal index of a station above `u`. Exceedances are timed on a clock
/// that counts in-season days only, so missing days inside a season lengthen
/// the gaps while the off-season does not.
pub fn station_extremal_index(series: &StationSeries, u: f64, screen: &Screen) -> Result<f64> {
    let mut times = Vec::new();
    let mut clock = 0i64;
    let mut prev: Option<NaiveDate> = None;
    for &(d, x) in &series.observations {
        if let Some(p) = prev {
            clock += p.iter_days().skip(1).take_while(|t| *t <= d).filter(|t| screen.in_season(*t)).count() as i64;
        }
        prev = Some(d);
        if x > u {
            times.push(clock);
        }
    }
    intervals_estimator(&times)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn dly_line(id: &str, year: i32, month: u32, days: &[(u32, &str, char)]) -> String {
        let mut line = format!("{id:<11}{year:04}{month:02}PRCP");
        for day in 1..=31 {
            match days.iter().find(|d| d.0 == day) {
                Some(&(_, v, q)) => line.push_str(&format!("{v:>5} {q} ")),
                None => line.push_str("-9999   "),
            }
        }
        line
    }

    #[test]
    fn dly_fields() {
        let text = dly_line("USC00000001", 1990, 1, &[(1, "128", ' '), (2, "5", 'X'), (3, "0", ' ')]);
        assert_eq!(text.len(), 269);
        let s = parse_ghcn_dly(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].observations, vec![(date(1990, 1, 1), 12.8), (date(1990, 1, 3), 0.0)]);
        assert_eq!(s[0].quality_dropped, 1);
        assert_eq!(s[0].missing, 28);
    }

    #[test]
    fn dly_skips_other_elements_and_rejects_bad_width() {
        let tmax = dly_line("USC00000001", 1990, 1, &[(1, "250", ' ')]).replace("PRCP", "TMAX");
        let prcp = dly_line("USC00000001", 1990, 2, &[(1, "10", ' ')]);
        let s = parse_ghcn_dly(format!("{tmax}\n{prcp}\n").as_bytes()).unwrap();
        assert_eq!(s[0].observations, vec![(date(1990, 2, 1), 1.0)]);

        let short = format!("{tmax}\n{}\n", &prcp[..200]);
        match parse_ghcn_dly(short.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dly_round_trip() {
        let obs = vec![(date(1999, 12, 31), 3.4), (date(2000, 2, 29), 0.0), (date(2000, 3, 1), 101.7)];
        let s = StationSeries::new("ABC", obs).unwrap();
        let mut buf = Vec::new();
        write_ghcn_dly(&s, &mut buf).unwrap();
        let back = parse_ghcn_dly(buf.as_slice()).unwrap();
        assert_eq!(back[0].observations, s.observations);
    }

    #[test]
    fn csv_round_trip_and_missing() {
        let text = "station_id,date,value_mm\nA,2000-01-02,1.5\nA,2000-01-01,NA\nB,2000-01-01,0\nA,2000-01-03,\n";
        let s = read_csv(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].observations, vec![(date(2000, 1, 2), 1.5)]);
        assert_eq!(s[0].missing, 2);
        let mut buf = Vec::new();
        write_csv(&s, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap()[1].observations, s[1].observations);
        assert!(read_csv("station_id,date,value_mm\nA,2000-01-01,-1\n".as_bytes()).is_err());
        assert!(read_csv("station_id,date,value_mm\nA,2000-01-01,1\nA,2000-01-01,2\n".as_bytes()).is_err());
    }

    fn full_years(first: i32, years: i32) -> StationSeries {
        let mut obs = Vec::new();
        let mut d = date(first, 1, 1);
        while d < date(first + years, 1, 1) {
            obs.push((d, 1.0));
            d = d.succ_opt().unwrap();
        }
        StationSeries::new("S", obs).unwrap()
    }

    #[test]
    fn screening() {
        let screen = Screen::default();
        let s = screen_and_filter(&full_years(1950, 60), &screen).unwrap();
        assert_eq!(s.years_available, 60);
        assert!(s.season_filtered);
        assert!(s.observations.iter().all(|o| ![4, 5, 6, 7, 8, 9, 10].contains(&o.0.month())));

        let r = screen_and_filter(&full_years(1950, 49), &screen).unwrap_err();
        assert_eq!(r.years_available, 49);
    }

    #[test]
    fn sparse_years_do_not_count() {
        let mut s = full_years(1950, 50);
        // drop every other day of 1960: half its season days remain
        s.observations.retain(|o| o.0.year() != 1960 || o.0.day() % 2 == 0);
        assert_eq!(screen_and_filter(&s, &Screen::default()).unwrap_err().years_available, 49);
        assert_eq!(Screen::default().season_days(2000), 31 + 29 + 31 + 30 + 31);
        assert!((Screen::default().season_length() - 151.2425).abs() < 1e-9);
    }

    #[test]
    fn ladder_grid() {
        let p = ladder_percentiles();
        assert_eq!(p.len(), 37);
        assert_eq!(p[11], 97.0);
        assert_eq!(p[12], 97.1);
        assert_eq!(p[36], 99.5);
        let x: Vec<f64> = (0..1000).map(f64::from).collect();
        assert_eq!(percentile_ladder(&x).unwrap().len(), 37);

        let mut tied = vec![0.0; 800];
        tied.extend((0..200).map(f64::from));
        let rungs = percentile_ladder(&tied).unwrap();
        assert!(rungs.len() < 37);
        assert!(rungs.windows(2).all(|w| w[0].threshold < w[1].threshold));
        assert!(percentile_ladder(&[2.0; 100]).is_err());
    }

    #[test]
    fn extremal_index_cases() {
        use rand::Rng;
        let mut rng = crate::rng::stream(5, &[]);
        let z: Vec<f64> = (0..100_001).map(|_| rng.random::<f64>()).collect();
        // moving maximum: every exceedance arrives in a pair
        let pairs: Vec<f64> = z.windows(2).map(|w| w[0].max(w[1])).collect();
        let theta = extremal_index(&pairs, 0.99).unwrap();
        assert!((theta - 0.5).abs() < 0.1, "{theta}");
        let theta = extremal_index(&z, 0.99).unwrap();
        assert!(theta > 0.9, "{theta}");

        // iid season days: the off-season must not look like clustering
        let screen = Screen::default();
        let obs: Vec<(NaiveDate, f64)> = date(1950, 1, 1)
            .iter_days()
            .take_while(|d| d.year() < 2000)
            .filter(|d| screen.in_season(*d))
            .zip(&z)
            .map(|(d, &x)| (d, x))
            .collect();
        let s = StationSeries::new("X", obs).unwrap();
        let theta = station_extremal_index(&s, 0.9, &screen).unwrap();
        assert!(theta > 0.9, "{theta}");
        assert_eq!(intervals_estimator(&[1, 2, 3, 4]).unwrap(), 1.0);
        assert!(intervals_estimator(&[3]).is_err());
    }
}
