//! Dirichlet densities over the 2-simplex: lattice grids, mode detection
//! and grayscale images.

use std::fs;
use std::path::Path;

use crate::dirichlet::{dirichlet_log_pdf, DirichletParams};
use crate::error::{Error, Result};

pub const MIN_RESOLUTION: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticePoint {
    /// Integer coordinates, each ≥ 1, summing to the resolution.
    pub index: [usize; 3],
    pub point: [f64; 3],
    pub log_density: f64,
}

/// Density evaluated on the interior lattice `{(i, j, k)/n : i + j + k = n,
/// i, j, k ≥ 1}`. The boundary is left out because the density there is
/// zero or unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexGrid {
    resolution: usize,
    points: Vec<LatticePoint>,
}

fn check(params: &DirichletParams, resolution: usize) -> Result<()> {
    if params.k() != 3 {
        return Err(Error::invalid(format!(
            "simplex rendering needs K = 3, got {}",
            params.k()
        )));
    }
    if resolution < MIN_RESOLUTION {
        return Err(Error::invalid(format!(
            "resolution must be >= {MIN_RESOLUTION}, got {resolution}"
        )));
    }
    if params.is_saturated() {
        return Err(Error::invalid("cannot render a saturated Dirichlet"));
    }
    Ok(())
}

impl SimplexGrid {
    pub fn new(params: &DirichletParams, resolution: usize) -> Result<Self> {
        check(params, resolution)?;
        let n = resolution;
        let mut points = Vec::with_capacity((n - 1) * (n - 2) / 2);
        for i in 1..n - 1 {
            for j in 1..n - i {
                let k = n - i - j;
                let point = [i as f64 / n as f64, j as f64 / n as f64, k as f64 / n as f64];
                let log_density = dirichlet_log_pdf(params, &point)?.value();
                points.push(LatticePoint {
                    index: [i, j, k],
                    point,
                    log_density,
                });
            }
        }
        Ok(Self { resolution, points })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn points(&self) -> &[LatticePoint] {
        &self.points
    }

    fn lookup(&self, i: usize, j: usize) -> Option<&LatticePoint> {
        let n = self.resolution;
        if i == 0 || j == 0 || i + j >= n {
            return None;
        }
        // rows for i' < i hold n-2, n-3, ... points
        let before = (i - 1) * (n - 1) - (i - 1) * i / 2;
        self.points.get(before + j - 1)
    }

    /// The lattice point of highest density (first one on ties).
    pub fn argmax(&self) -> &LatticePoint {
        self.points
            .iter()
            .reduce(|best, p| if p.log_density > best.log_density { p } else { best })
            .expect("lattice is never empty")
    }

    /// Points strictly denser than all of their (up to six) lattice
    /// neighbours.
    pub fn local_maxima(&self) -> Vec<&LatticePoint> {
        const STEPS: [(isize, isize); 6] = [(1, -1), (-1, 1), (1, 0), (-1, 0), (0, 1), (0, -1)];
        self.points
            .iter()
            .filter(|p| {
                let [i, j, _] = p.index;
                STEPS.iter().all(|&(di, dj)| {
                    let (ni, nj) = (i as isize + di, j as isize + dj);
                    if ni < 0 || nj < 0 {
                        return true;
                    }
                    self.lookup(ni as usize, nj as usize)
                        .is_none_or(|q| p.log_density > q.log_density)
                })
            })
            .collect()
    }

    /// Spread of log-density over the lattice.
    pub fn log_density_range(&self) -> f64 {
        let (lo, hi) = self
            .points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.log_density), hi.max(p.log_density))
            });
        hi - lo
    }

    /// `x1,x2,x3,density` rows in lattice order.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x1", "x2", "x3", "density"])?;
        for p in &self.points {
            w.write_record([
                p.point[0].to_string(),
                p.point[1].to_string(),
                p.point[2].to_string(),
                p.log_density.exp().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Barycentric distance between two simplex points (Euclidean in ℝ³).
pub fn simplex_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Binary PGM (P5) image, `width` pixels wide, of the log-density over the
/// triangle with corner 1 bottom-left, corner 2 bottom-right and corner 3 on
/// top. Pixels outside the triangle are 0; inside, log-density is mapped
/// linearly onto 1..=255 (all 255 when the density is flat).
pub fn render_pgm(params: &DirichletParams, width: usize) -> Result<Vec<u8>> {
    check(params, width)?;
    let height = (width as f64 * 3f64.sqrt() / 2.0).round() as usize;
    let (w, h) = (width as f64, height as f64);
    let mut values = vec![None; width * height];
    for py in 0..height {
        for px in 0..width {
            let x = (px as f64 + 0.5) / w;
            let y = 1.0 - (py as f64 + 0.5) / h;
            // corners (0,0), (1,0), (1/2,1) in unit-square coordinates
            let b3 = y;
            let b2 = x - 0.5 * y;
            let b1 = 1.0 - b2 - b3;
            if b1 > 0.0 && b2 > 0.0 && b3 > 0.0 {
                let ld = dirichlet_log_pdf(params, &[b1, b2, b3])?.value();
                values[py * width + px] = Some(ld);
            }
        }
    }
    let (lo, hi) = values
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| match v {
        None => 0u8,
        Some(_) if !(span > 1e-12) => 255,
        Some(v) => (1.0 + 254.0 * ((v - lo) / span)).round() as u8,
    }));
    Ok(out)
}

pub fn write_pgm(params: &DirichletParams, width: usize, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render_pgm(params, width)?)?;
    Ok(())
}
