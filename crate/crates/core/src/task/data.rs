//! Datasets, generators and their CSV forms.
//!
//! Feature/label files use the header `x_0..x_{m-1},y_0..y_{p-1}`; decision
//! files use `x_0..x_{m-1},a_0..a_{d-1},cost`. Values are written with Rust's
//! shortest round-trip float formatting, so a write/read cycle is exact.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Feature/label pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

/// Feature/optimal-decision pairs with the realized optimal cost.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionDataset {
    pub x: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub cost: Vec<f64>,
}

fn header(prefixes: &[(&str, usize)], trailing: Option<&str>) -> Vec<String> {
    let mut h: Vec<String> = prefixes
        .iter()
        .flat_map(|(p, n)| (0..*n).map(move |i| format!("{p}_{i}")))
        .collect();
    if let Some(t) = trailing {
        h.push(t.to_string());
    }
    h
}

fn write_rows<W: Write>(
    out: W,
    head: &[String],
    rows: impl Iterator<Item = Vec<f64>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(head)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV, returning `(header, rows)`. Ragged rows are errors.
fn read_rows<R: Read>(input: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(input);
    let head: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: cannot parse {f:?}: {e}", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((head, rows))
}

/// Counts a leading run of `prefix_0, prefix_1, ...` columns.
fn count_prefix(head: &[String], prefix: &str, start: usize) -> usize {
    head[start..]
        .iter()
        .enumerate()
        .take_while(|(i, h)| **h == format!("{prefix}_{i}"))
        .count()
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> Result<Self> {
        let ds = Self { x, y };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() {
            return Err(Error::Config("feature and label counts differ".into()));
        }
        let (m, p) = (self.feature_dim(), self.label_dim());
        if self.x.iter().any(|r| r.len() != m) || self.y.iter().any(|r| r.len() != p) {
            return Err(Error::Config("ragged dataset rows".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn label_dim(&self) -> usize {
        self.y.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i].clone()).collect(),
        }
    }

    /// Random split into `(train, validation, test)`; validation and test get
    /// `round(n * frac)` examples each and train the rest.
    pub fn split(
        &self,
        val_frac: f64,
        test_frac: f64,
        stream: &mut RngStream,
    ) -> Result<(Self, Self, Self)> {
        if !(0.0..1.0).contains(&val_frac)
            || !(0.0..1.0).contains(&test_frac)
            || val_frac + test_frac >= 1.0
        {
            return Err(Error::Config(
                "split fractions must be in [0, 1) and sum below 1".into(),
            ));
        }
        let n = self.len();
        let perm = stream.permutation(n);
        let n_val = (n as f64 * val_frac).round() as usize;
        let n_test = (n as f64 * test_frac).round() as usize;
        let n_train = n - n_val - n_test;
        let mut train: Vec<usize> = perm[..n_train].to_vec();
        let mut val: Vec<usize> = perm[n_train..n_train + n_val].to_vec();
        let mut test: Vec<usize> = perm[n_train + n_val..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&val), self.subset(&test)))
    }

    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let head = header(&[("x", self.feature_dim()), ("y", self.label_dim())], None);
        write_rows(
            out,
            &head,
            self.x
                .iter()
                .zip(&self.y)
                .map(|(x, y)| [x.as_slice(), y].concat()),
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_to(BufWriter::new(File::create(path)?))
    }

    pub fn read_csv_from<R: Read>(input: R) -> Result<Self> {
        let (head, rows) = read_rows(input)?;
        let m = count_prefix(&head, "x", 0);
        let p = count_prefix(&head, "y", m);
        if m + p != head.len() || m == 0 || p == 0 {
            return Err(Error::Parse(format!("unexpected dataset header {head:?}")));
        }
        let (x, y) = rows
            .into_iter()
            .map(|r| (r[..m].to_vec(), r[m..].to_vec()))
            .unzip();
        Ok(Self { x, y })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::read_csv_from(File::open(path)?)
    }
}

impl DecisionDataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let m = self.x.first().map_or(0, Vec::len);
        let d = self.a.first().map_or(0, Vec::len);
        let head = header(&[("x", m), ("a", d)], Some("cost"));
        write_rows(
            out,
            &head,
            (0..self.len()).map(|i| [self.x[i].as_slice(), &self.a[i], &[self.cost[i]]].concat()),
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_to(BufWriter::new(File::create(path)?))
    }

    pub fn read_csv_from<R: Read>(input: R) -> Result<Self> {
        let (head, rows) = read_rows(input)?;
        let m = count_prefix(&head, "x", 0);
        let d = count_prefix(&head, "a", m);
        if m + d + 1 != head.len() || head.last().map(String::as_str) != Some("cost") || d == 0 {
            return Err(Error::Parse(format!("unexpected decision header {head:?}")));
        }
        let mut out = Self {
            x: vec![],
            a: vec![],
            cost: vec![],
        };
        for r in rows {
            out.x.push(r[..m].to_vec());
            out.a.push(r[m..m + d].to_vec());
            out.cost.push(r[m + d]);
        }
        Ok(out)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::read_csv_from(File::open(path)?)
    }
}

/// `x ~ U[-2, 2]^2`, `y_i = x_i^2 + noise · N(0, 1)` per dimension.
pub fn gen_synthetic2d_dataset(n: usize, noise: f64, stream: &mut RngStream) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = [
            stream.uniform_range(-2.0, 2.0),
            stream.uniform_range(-2.0, 2.0),
        ];
        let yi = xi
            .iter()
            .map(|v| v * v + noise * stream.standard_normal())
            .collect();
        x.push(xi.to_vec());
        y.push(yi);
    }
    Ok(Dataset { x, y })
}

/// Knobs of the synthetic load generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerGenConfig {
    pub horizon: usize,
    pub feature_dim: usize,
    /// Mean load level before the softplus floor.
    pub base_load: f64,
    pub daily_amplitude: f64,
    /// Load reduction on weekends.
    pub weekend_drop: f64,
    /// AR(1) coefficient of the hourly load noise.
    pub noise_ar: f64,
    /// Innovation standard deviation of the load noise.
    pub noise_std: f64,
}

impl Default for PowerGenConfig {
    fn default() -> Self {
        Self {
            horizon: 24,
            feature_dim: 150,
            base_load: 2.0,
            daily_amplitude: 0.6,
            weekend_drop: 0.3,
            noise_ar: 0.9,
            noise_std: 0.08,
        }
    }
}

impl PowerGenConfig {
    /// Columns used before zero padding: previous-day and previous-week loads,
    /// temperature forecast plus heating/cooling degrees, day-of-week one-hot,
    /// annual phase.
    pub fn informative_features(&self) -> usize {
        5 * self.horizon + 7 + 2
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// Synthetic day-ahead load data, one example per day.
///
/// Hourly temperature is an annual plus diurnal sinusoid with AR(1) weather
/// noise. Hourly load is
/// `softplus(base + daily profile - weekend drop + heating/cooling response + noise)`
/// where the noise is AR(1) with innovations scaled up at peak hours, so
/// predictive uncertainty varies over the day. Example `i` predicts the 24
/// loads of day `i + 7` from:
///
/// - loads of the previous day and of the same day one week earlier,
/// - a noisy temperature forecast for the target day and its heating
///   (`(15 - T)_+`) and cooling (`(T - 22)_+`) degrees,
/// - a day-of-week one-hot and the sine/cosine of the annual phase,
///
/// all roughly unit-scaled and zero-padded to `feature_dim` columns.
pub fn gen_power_dataset(
    n: usize,
    cfg: &PowerGenConfig,
    stream: &mut RngStream,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    let h = cfg.horizon;
    if h == 0 || cfg.feature_dim < cfg.informative_features() {
        return Err(Error::Config(format!(
            "feature_dim must be at least {} for horizon {h}",
            cfg.informative_features()
        )));
    }
    let tau = std::f64::consts::TAU;
    let days = n + 7;
    let hours = days * h;
    let mut temp = Vec::with_capacity(hours);
    let mut load = Vec::with_capacity(hours);
    let mut weather = 0.0;
    let mut noise = 0.0;
    let start_doy = stream.uniform_range(0.0, 365.0);
    for t in 0..hours {
        let day = t / h;
        let hour = (t % h) as f64 * 24.0 / h as f64;
        let doy = start_doy + day as f64;
        weather = 0.95 * weather + 0.6 * stream.standard_normal();
        let tmp = 15.0
            + 9.0 * (tau * (doy - 110.0) / 365.0).sin()
            + 4.0 * (tau * (hour - 9.0) / 24.0).sin()
            + weather;
        let profile =
            (tau * (hour - 8.0) / 24.0).sin() + 0.35 * (2.0 * tau * (hour - 5.0) / 24.0).sin();
        let weekend = if day % 7 >= 5 { cfg.weekend_drop } else { 0.0 };
        let weather_load = 0.05 * (15.0 - tmp).max(0.0) + 0.08 * (tmp - 22.0).max(0.0);
        let scale = 1.0 + 0.5 * profile.max(0.0);
        noise = cfg.noise_ar * noise + cfg.noise_std * scale * stream.standard_normal();
        let z = cfg.base_load + cfg.daily_amplitude * profile - weekend + weather_load + noise;
        temp.push(tmp);
        load.push(softplus(z));
    }
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let day = i + 7;
        let target = &load[day * h..(day + 1) * h];
        let mut f = Vec::with_capacity(cfg.feature_dim);
        f.extend(
            load[(day - 1) * h..day * h]
                .iter()
                .map(|l| l - cfg.base_load),
        );
        f.extend(
            load[(day - 7) * h..(day - 6) * h]
                .iter()
                .map(|l| l - cfg.base_load),
        );
        let forecast: Vec<f64> = temp[day * h..(day + 1) * h]
            .iter()
            .map(|t| t + 1.0 * stream.standard_normal())
            .collect();
        f.extend(forecast.iter().map(|t| (t - 15.0) / 10.0));
        f.extend(forecast.iter().map(|t| (15.0 - t).max(0.0) / 10.0));
        f.extend(forecast.iter().map(|t| (t - 22.0).max(0.0) / 10.0));
        for d in 0..7 {
            f.push(if day % 7 == d { 1.0 } else { 0.0 });
        }
        let phase = tau * (start_doy + day as f64) / 365.0;
        f.push(phase.sin());
        f.push(phase.cos());
        f.resize(cfg.feature_dim, 0.0);
        x.push(f);
        y.push(target.to_vec());
    }
    Ok(Dataset { x, y })
}
