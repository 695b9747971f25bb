use crate::error::{Error, Result};
use crate::raster::HistogramCube;

/// Row-major design matrix with one sample id per row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, ids: Vec<String>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Argument(format!("empty feature matrix {rows}x{cols}")));
        }
        if values.len() != rows * cols || ids.len() != rows {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix given {} values and {} ids",
                values.len(),
                ids.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite feature at row {}, column {}",
                i / cols,
                i % cols
            )));
        }
        Ok(Self { rows, cols, values, ids })
    }

    /// Unlabeled-id convenience constructor.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged feature rows".into()));
        }
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(rows.len(), cols, rows.concat(), ids)
    }

    pub fn from_cubes(cubes: &[&HistogramCube]) -> Result<Self> {
        let first = cubes.first().ok_or_else(|| Error::Argument("no cubes".into()))?;
        let cols = first.len();
        let mut values = Vec::with_capacity(cubes.len() * cols);
        let mut ids = Vec::with_capacity(cubes.len());
        for c in cubes {
            if c.shape() != first.shape() {
                return Err(Error::Dimension(format!(
                    "cube {}/{} has shape {:?}, expected {:?}",
                    c.location_id,
                    c.year,
                    c.shape(),
                    first.shape()
                )));
            }
            values.extend(flatten_features(c));
            ids.push(format!("{}/{}", c.location_id, c.year));
        }
        Self::new(cubes.len(), cols, values, ids)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(j).step_by(self.cols).copied()
    }

    /// Rows picked by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self::new(idx.len(), self.cols, values, idx.iter().map(|&i| self.ids[i].clone()).collect())
    }
}

/// `t` outer, bin middle, band inner: the cube's own storage order.
pub fn flatten_features(cube: &HistogramCube) -> Vec<f64> {
    cube.values.clone()
}

/// Inverse of [`flatten_features`] for a `(t, b, d)` shape; returns the
/// value at each `(t, bin, band)` in nested form.
pub fn unflatten_features(row: &[f64], shape: (usize, usize, usize)) -> Result<Vec<Vec<Vec<f64>>>> {
    let (t, b, d) = shape;
    if row.len() != t * b * d {
        return Err(Error::Dimension(format!("{} features for shape {shape:?}", row.len())));
    }
    Ok(row
        .chunks(b * d)
        .map(|step| step.chunks(d).map(<[f64]>::to_vec).collect())
        .collect())
}

/// Per-column centering and scaling fitted on a training matrix.
/// Constant columns get unit scale and so map to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &FeatureMatrix) -> Self {
        let n = x.rows() as f64;
        let mut mean = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn identity(cols: usize) -> Self {
        Self {
            mean: vec![0.0; cols],
            scale: vec![1.0; cols],
        }
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn transform(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.rows()).flat_map(|i| self.transform_row(x.row(i))).collect()
    }
}
