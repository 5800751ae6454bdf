//! Decision-region and sample-weight dumps for 2-D problems.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::argmax;
use crate::data::Dataset;
use crate::losses::LossFn;
use crate::math::DenseMatrix;
use crate::models::{forward, forward_with_losses, ModelArch, ParamVector};
use crate::optim::{batch_weights_log, log_batch_g_tilde, Lambda};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    /// Bounding box of the data widened by `margin` on every side.
    pub fn around(dataset: &Dataset, nx: usize, ny: usize, margin: f64) -> Result<Self> {
        require_2d(dataset)?;
        let f = dataset.features();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for i in 0..f.rows() {
            let r = f.row(i);
            x0 = x0.min(r[0]);
            x1 = x1.max(r[0]);
            y0 = y0.min(r[1]);
            y1 = y1.max(r[1]);
        }
        Ok(Self {
            x_min: x0 - margin,
            x_max: x1 + margin,
            y_min: y0 - margin,
            y_max: y1 + margin,
            nx,
            ny,
        })
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        let coord = |lo: f64, hi: f64, n: usize, i: usize| {
            if n <= 1 {
                (lo + hi) / 2.0
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push([
                    coord(self.x_min, self.x_max, self.nx, i),
                    coord(self.y_min, self.y_max, self.ny, j),
                ]);
            }
        }
        out
    }
}

fn require_2d(dataset: &Dataset) -> Result<()> {
    if dataset.dim() != 2 {
        return Err(Error::domain(format!(
            "plot data needs 2-D features, got {}",
            dataset.dim()
        )));
    }
    Ok(())
}

/// Per-sample weights `exp(Lᵢ/λ)/s` over the whole dataset. Without `s`
/// the dataset mean of `exp(L/λ)` is used.
pub fn sample_weights(
    params: &ParamVector,
    arch: &ModelArch,
    dataset: &Dataset,
    loss: &LossFn,
    lambda: Lambda,
    s: Option<f64>,
) -> Result<Vec<f64>> {
    let eval = forward_with_losses(params, arch, dataset.features(), dataset.labels(), loss)?;
    let log_s = match s {
        Some(s) if s > 0.0 => s.ln(),
        Some(s) => return Err(Error::domain(format!("normalizer must be > 0, got {s}"))),
        None => log_batch_g_tilde(&eval.per_sample_losses, lambda)?,
    };
    batch_weights_log(&eval.per_sample_losses, lambda, log_s)
}

/// Writes `grid.csv` (`x,y,pred`) and `points.csv` (`x,y,label,weight`)
/// into `dir`, returning both paths.
#[allow(clippy::too_many_arguments)]
pub fn emit_plot_data(
    params: &ParamVector,
    arch: &ModelArch,
    dataset: &Dataset,
    loss: &LossFn,
    lambda: Lambda,
    s: Option<f64>,
    grid: &GridSpec,
    dir: impl AsRef<Path>,
) -> Result<(PathBuf, PathBuf)> {
    require_2d(dataset)?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;

    let pts = grid.points();
    let flat: Vec<f64> = pts.iter().flatten().copied().collect();
    let logits = forward(params, arch, &DenseMatrix::new(pts.len(), 2, flat)?)?.logits;
    let grid_path = dir.join("grid.csv");
    let mut w = BufWriter::new(File::create(&grid_path)?);
    writeln!(w, "x,y,pred")?;
    for (i, p) in pts.iter().enumerate() {
        writeln!(w, "{},{},{}", p[0], p[1], argmax(logits.row(i)))?;
    }
    w.flush()?;

    let weights = sample_weights(params, arch, dataset, loss, lambda, s)?;
    let points_path = dir.join("points.csv");
    let mut w = BufWriter::new(File::create(&points_path)?);
    writeln!(w, "x,y,label,weight")?;
    for (i, wt) in weights.iter().enumerate() {
        let r = dataset.features().row(i);
        writeln!(w, "{},{},{},{}", r[0], r[1], dataset.labels()[i], wt)?;
    }
    w.flush()?;
    Ok((grid_path, points_path))
}
