//! Energy and cost surfaces over a 2-D slice of decision space.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use soebm_core::numerics::{Purpose, RngStream};
use soebm_core::{EnergyModel, Error, Result};

/// `E(x, c + d1·v1 + d2·v2)` and `f(y, ·)` on a square grid of displacements.
#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeGrid {
    pub center: Vec<f64>,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub range: f64,
    pub resolution: usize,
    /// Row-major, `energy[i * resolution + j]` at `(d[i], d[j])`.
    pub energy: Vec<f64>,
    pub true_cost: Vec<f64>,
}

fn unit(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) {
        return Err(Error::Numerical("degenerate landscape direction".into()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// Two Gaussian directions normalized to unit length, drawn from the
/// landscape substream of `(seed, index)`.
pub fn random_directions(dim: usize, seed: u64, index: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut s = RngStream::keyed(seed, 0, index as u64, Purpose::Landscape);
    let v1 = unit((0..dim).map(|_| s.standard_normal()).collect())?;
    let v2 = unit((0..dim).map(|_| s.standard_normal()).collect())?;
    Ok((v1, v2))
}

impl LandscapeGrid {
    /// Evaluates both surfaces. The energy uses the Monte-Carlo substream of
    /// `(seed, index)` when the task is in Monte-Carlo mode.
    #[allow(clippy::too_many_arguments)]
    pub fn compute(
        model: &EnergyModel,
        x: &[f64],
        y: &[f64],
        center: Vec<f64>,
        v1: Vec<f64>,
        v2: Vec<f64>,
        range: f64,
        resolution: usize,
        seed: u64,
        index: usize,
    ) -> Result<Self> {
        if resolution < 2 || !(range > 0.0) {
            return Err(Error::Config(
                "landscape needs resolution >= 2 and a positive range".into(),
            ));
        }
        let d = center.len();
        if v1.len() != d || v2.len() != d {
            return Err(Error::Domain(
                "landscape directions do not match the decision dimension".into(),
            ));
        }
        let pred = model.params.predict(x)?;
        let mc = model.task.draw_mc_samples(&mut RngStream::keyed(
            seed,
            0,
            index as u64,
            Purpose::MonteCarlo,
        ));
        let mut grid = Self {
            center,
            v1,
            v2,
            range,
            resolution,
            energy: vec![],
            true_cost: vec![],
        };
        let steps = grid.displacements();
        for &d1 in &steps {
            for &d2 in &steps {
                let a = grid.point(d1, d2);
                grid.energy
                    .push(model.energy_from_prediction(&pred, &a, mc.as_ref())?.value);
                grid.true_cost.push(model.task.cost(y, &a)?);
            }
        }
        Ok(grid)
    }

    pub fn displacements(&self) -> Vec<f64> {
        let h = self.cell();
        (0..self.resolution)
            .map(|i| -self.range + i as f64 * h)
            .collect()
    }

    /// Grid spacing.
    pub fn cell(&self) -> f64 {
        2.0 * self.range / (self.resolution - 1) as f64
    }

    pub fn point(&self, d1: f64, d2: f64) -> Vec<f64> {
        (0..self.center.len())
            .map(|k| self.center[k] + d1 * self.v1[k] + d2 * self.v2[k])
            .collect()
    }

    pub fn v1_dot_v2(&self) -> f64 {
        self.v1.iter().zip(&self.v2).map(|(a, b)| a * b).sum()
    }

    fn argmin(values: &[f64], resolution: usize) -> (usize, usize) {
        let k = values
            .iter()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |best, (k, &v)| if v < best.1 { (k, v) } else { best },
            )
            .0;
        (k / resolution, k % resolution)
    }

    /// Grid indices of the lowest energy.
    pub fn argmin_energy(&self) -> (usize, usize) {
        Self::argmin(&self.energy, self.resolution)
    }

    pub fn argmin_true_cost(&self) -> (usize, usize) {
        Self::argmin(&self.true_cost, self.resolution)
    }

    /// Displacement coordinates `(d1, d2)` of the point in the slice closest
    /// to `a` (least squares; exact when `a` lies in the slice).
    pub fn coordinates(&self, a: &[f64]) -> Result<(f64, f64)> {
        let r: Vec<f64> = a.iter().zip(&self.center).map(|(p, c)| p - c).collect();
        let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
        let (g11, g12, g22) = (
            dot(&self.v1, &self.v1),
            self.v1_dot_v2(),
            dot(&self.v2, &self.v2),
        );
        let det = g11 * g22 - g12 * g12;
        if det.abs() < 1e-12 {
            return Err(Error::Numerical(
                "landscape directions are collinear".into(),
            ));
        }
        let (b1, b2) = (dot(&self.v1, &r), dot(&self.v2, &r));
        Ok(((g22 * b1 - g12 * b2) / det, (g11 * b2 - g12 * b1) / det))
    }

    /// True when grid cell `(i, j)` lies within one cell spacing of `a` along
    /// both directions.
    pub fn within_one_cell(&self, (i, j): (usize, usize), a: &[f64]) -> Result<bool> {
        let (d1, d2) = self.coordinates(a)?;
        let steps = self.displacements();
        let h = self.cell() * (1.0 + 1e-9);
        Ok((steps[i] - d1).abs() <= h && (steps[j] - d2).abs() <= h)
    }

    fn fmt_vec(v: &[f64]) -> String {
        v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
    }

    /// CSV with `#` metadata lines, then `d1,d2,energy,true_cost`.
    pub fn write_csv_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# center {}", Self::fmt_vec(&self.center))?;
        writeln!(out, "# v1 {}", Self::fmt_vec(&self.v1))?;
        writeln!(out, "# v2 {}", Self::fmt_vec(&self.v2))?;
        writeln!(out, "# v1_dot_v2 {}", self.v1_dot_v2())?;
        writeln!(out, "# range {}", self.range)?;
        writeln!(out, "# resolution {}", self.resolution)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["d1", "d2", "energy", "true_cost"])?;
        let steps = self.displacements();
        for (i, d1) in steps.iter().enumerate() {
            for (j, d2) in steps.iter().enumerate() {
                let k = i * self.resolution + j;
                w.write_record(
                    [d1, d2, &self.energy[k], &self.true_cost[k]].map(|v| v.to_string()),
                )?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_to(BufWriter::new(File::create(path)?))
    }

    pub fn read_csv_from<R: Read>(mut input: R) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let mut meta = std::collections::HashMap::new();
        for line in text.lines().filter_map(|l| l.strip_prefix("# ")) {
            if let Some((k, v)) = line.split_once(' ') {
                meta.insert(k.to_string(), v.to_string());
            }
        }
        let field = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::Parse(format!("landscape header lacks {k}")))
        };
        let floats = |k: &str| -> Result<Vec<f64>> {
            field(k)?
                .split(' ')
                .map(|t| {
                    t.parse()
                        .map_err(|e| Error::Parse(format!("landscape {k}: {e}")))
                })
                .collect()
        };
        let scalar = |k: &str| -> Result<f64> {
            field(k)?
                .parse()
                .map_err(|e| Error::Parse(format!("landscape {k}: {e}")))
        };
        let resolution: usize = field("resolution")?
            .parse()
            .map_err(|e| Error::Parse(format!("landscape resolution: {e}")))?;
        let mut grid = Self {
            center: floats("center")?,
            v1: floats("v1")?,
            v2: floats("v2")?,
            range: scalar("range")?,
            resolution,
            energy: vec![],
            true_cost: vec![],
        };
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        for rec in r.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|f| {
                    f.parse()
                        .map_err(|e| Error::Parse(format!("landscape row: {e}")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != 4 {
                return Err(Error::Parse("landscape rows need 4 columns".into()));
            }
            grid.energy.push(vals[2]);
            grid.true_cost.push(vals[3]);
        }
        if grid.energy.len() != resolution * resolution {
            return Err(Error::Parse(format!(
                "landscape has {} rows, expected {}",
                grid.energy.len(),
                resolution * resolution
            )));
        }
        Ok(grid)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::read_csv_from(File::open(path)?)
    }
}
