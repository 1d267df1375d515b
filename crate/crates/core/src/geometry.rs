//! Deformable aperture surface `y = g(u, v)` over the rectangle
//! `[-Lx/2, Lx/2] x [-Lz/2, Lz/2]`.
//!
//! Heights live on a uniform `n x n` grid indexed `(j, i)` with `j` along
//! `v` (the z axis) and `i` along `u` (the x axis). Slopes come from
//! second-order finite differences; off-grid samples use bilinear
//! interpolation of the height and slope fields, with the area element
//! `zeta = sqrt(1 + g_u^2 + g_v^2)` recomputed from the interpolated slopes.

use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FcapaError, Result};

/// Reference paraboloid `g(u, v) = u^2 + v^2`.
pub fn eval_paraboloid(u: f64, v: f64) -> f64 {
    u * u + v * v
}

/// Named reference shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapePreset {
    Flat,
    Paraboloid,
}

impl FromStr for ShapePreset {
    type Err = FcapaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flat" => Ok(ShapePreset::Flat),
            "paraboloid" => Ok(ShapePreset::Paraboloid),
            other => Err(FcapaError::InvalidConfig(format!(
                "unknown shape preset '{other}' (expected 'flat' or 'paraboloid')"
            ))),
        }
    }
}

/// Height field plus the reference shape and morphability band it is
/// confined to.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceShape {
    half_lx: f64,
    half_lz: f64,
    heights: DMatrix<f64>,
    reference: DMatrix<f64>,
    morph_range: f64,
}

/// Derived slope, curvature and area-element fields on the shape grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeFields {
    pub du_g: DMatrix<f64>,
    pub dv_g: DMatrix<f64>,
    pub duu_g: DMatrix<f64>,
    pub dvv_g: DMatrix<f64>,
    pub zeta: DMatrix<f64>,
}

/// Surface quantities at an arbitrary parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSample {
    pub g: f64,
    pub du_g: f64,
    pub dv_g: f64,
    pub zeta: f64,
}

fn area_element(du: f64, dv: f64) -> f64 {
    (1.0 + du * du + dv * dv).sqrt()
}

impl SurfaceShape {
    /// Builds a shape whose reference and current heights are `f(u, v)`
    /// sampled on an `n x n` grid over an `lx x lz` aperture. The band
    /// starts at zero width.
    pub fn from_fn(lx: f64, lz: f64, n: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if !(lx > 0.0 && lz > 0.0 && lx.is_finite() && lz.is_finite()) {
            return Err(FcapaError::InvalidConfig(format!(
                "aperture lengths must be positive (got {lx} x {lz})"
            )));
        }
        if n < 3 {
            return Err(FcapaError::InvalidConfig(format!(
                "shape grid needs at least 3 points per axis (got {n})"
            )));
        }
        let (half_lx, half_lz) = (lx / 2.0, lz / 2.0);
        let du = lx / (n - 1) as f64;
        let dv = lz / (n - 1) as f64;
        let reference = DMatrix::from_fn(n, n, |j, i| f(-half_lx + i as f64 * du, -half_lz + j as f64 * dv));
        Ok(Self {
            half_lx,
            half_lz,
            heights: reference.clone(),
            reference,
            morph_range: 0.0,
        })
    }

    pub fn flat(lx: f64, lz: f64, n: usize) -> Result<Self> {
        Self::from_fn(lx, lz, n, |_, _| 0.0)
    }

    pub fn paraboloid(lx: f64, lz: f64, n: usize) -> Result<Self> {
        Self::from_fn(lx, lz, n, eval_paraboloid)
    }

    pub fn from_preset(preset: ShapePreset, lx: f64, lz: f64, n: usize) -> Result<Self> {
        match preset {
            ShapePreset::Flat => Self::flat(lx, lz, n),
            ShapePreset::Paraboloid => Self::paraboloid(lx, lz, n),
        }
    }

    /// Loads a height grid from CSV with header `u,v,g`, rows ordered with
    /// `v` outer and `u` inner. The loaded heights become the reference.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path).map_err(|e| FcapaError::parse(path, e))?;
        let headers = reader.headers().map_err(|e| FcapaError::parse(path, e))?.clone();
        let names: Vec<&str> = headers.iter().map(str::trim).collect();
        if names != ["u", "v", "g"] {
            return Err(FcapaError::parse(
                path,
                format!("expected header 'u,v,g', found '{}'", names.join(",")),
            ));
        }
        let mut rows = Vec::new();
        for record in reader.deserialize::<(f64, f64, f64)>() {
            rows.push(record.map_err(|e| FcapaError::parse(path, e))?);
        }
        let n = (rows.len() as f64).sqrt().round() as usize;
        if n < 3 || n * n != rows.len() {
            return Err(FcapaError::parse(
                path,
                format!("{} rows do not form a square grid of at least 3x3", rows.len()),
            ));
        }
        let (u0, v0) = (rows[0].0, rows[0].1);
        let (u1, v1) = (rows[n * n - 1].0, rows[n * n - 1].1);
        let lx = u1 - u0;
        let lz = v1 - v0;
        let tol = 1e-9 * (lx.abs() + lz.abs()).max(1.0);
        if lx <= 0.0 || lz <= 0.0 || (u0 + u1).abs() > tol || (v0 + v1).abs() > tol {
            return Err(FcapaError::parse(
                path,
                "grid must cover a rectangle centered on the origin",
            ));
        }
        let mut shape = Self::flat(lx, lz, n)?;
        for (idx, &(u, v, g)) in rows.iter().enumerate() {
            let (j, i) = (idx / n, idx % n);
            if (u - shape.u_coord(i)).abs() > tol || (v - shape.v_coord(j)).abs() > tol {
                return Err(FcapaError::parse(
                    path,
                    format!("row {} at ({u}, {v}) is not on the uniform grid", idx + 2),
                ));
            }
            shape.reference[(j, i)] = g;
        }
        shape.heights = shape.reference.clone();
        Ok(shape)
    }

    /// Writes the current heights in the format read by [`Self::from_csv`].
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut writer = csv::Writer::from_path(path).map_err(|e| FcapaError::parse(path, e))?;
        let io = |e: csv::Error| FcapaError::parse(path, e);
        writer.write_record(["u", "v", "g"]).map_err(io)?;
        let n = self.resolution();
        for j in 0..n {
            for i in 0..n {
                writer
                    .serialize((self.u_coord(i), self.v_coord(j), self.heights[(j, i)]))
                    .map_err(io)?;
            }
        }
        writer.flush().map_err(|e| FcapaError::io(path, e))
    }

    /// Sets the admissible deformation range and re-projects the heights.
    pub fn with_morph_range(mut self, xi: f64) -> Result<Self> {
        if !(xi >= 0.0 && xi.is_finite()) {
            return Err(FcapaError::InvalidConfig(format!(
                "morphability must be a non-negative finite length (got {xi})"
            )));
        }
        self.morph_range = xi;
        Ok(self.project_morph())
    }

    /// Replaces the heights, projecting them into the morphability band.
    pub fn with_heights(&self, heights: DMatrix<f64>) -> Result<Self> {
        let n = self.resolution();
        if heights.nrows() != n || heights.ncols() != n {
            return Err(FcapaError::ShapeMismatch {
                expected: n * n,
                got: heights.len(),
            });
        }
        let shape = Self {
            heights,
            ..self.clone()
        };
        Ok(shape.project_morph())
    }

    /// Clamps every height into `[g_ref - xi/2, g_ref + xi/2]`.
    pub fn project_morph(&self) -> Self {
        let half = self.morph_range / 2.0;
        let heights = self.heights.zip_map(&self.reference, |g, r| {
            if half == 0.0 {
                r
            } else {
                g.clamp(r - half, r + half)
            }
        });
        Self {
            heights,
            ..self.clone()
        }
    }

    pub fn resolution(&self) -> usize {
        self.heights.nrows()
    }

    pub fn half_lengths(&self) -> (f64, f64) {
        (self.half_lx, self.half_lz)
    }

    /// Grid spacing `(du, dv)`.
    pub fn spacing(&self) -> (f64, f64) {
        let m = (self.resolution() - 1) as f64;
        (2.0 * self.half_lx / m, 2.0 * self.half_lz / m)
    }

    pub fn u_coord(&self, i: usize) -> f64 {
        -self.half_lx + i as f64 * self.spacing().0
    }

    pub fn v_coord(&self, j: usize) -> f64 {
        -self.half_lz + j as f64 * self.spacing().1
    }

    pub fn heights(&self) -> &DMatrix<f64> {
        &self.heights
    }

    pub fn reference(&self) -> &DMatrix<f64> {
        &self.reference
    }

    pub fn morph_range(&self) -> f64 {
        self.morph_range
    }

    /// Largest deviation of the current heights from the reference.
    pub fn max_deviation(&self) -> f64 {
        self.heights
            .iter()
            .zip(self.reference.iter())
            .map(|(g, r)| (g - r).abs())
            .fold(0.0, f64::max)
    }

    pub fn fields(&self) -> Result<ShapeFields> {
        finite_diff_fields(self)
    }

    pub fn sample(&self, points: &[(f64, f64)]) -> Result<Vec<ShapeSample>> {
        let fields = self.fields()?;
        points.iter().map(|&(u, v)| self.sample_with(&fields, u, v)).collect()
    }

    /// Samples one point using precomputed fields.
    pub fn sample_with(&self, fields: &ShapeFields, u: f64, v: f64) -> Result<ShapeSample> {
        let stencil = self.bilinear_stencil(u, v)?;
        let g = stencil.apply(&self.heights);
        let du_g = stencil.apply(&fields.du_g);
        let dv_g = stencil.apply(&fields.dv_g);
        Ok(ShapeSample {
            g,
            du_g,
            dv_g,
            zeta: area_element(du_g, dv_g),
        })
    }

    /// Bilinear weights of the four grid nodes surrounding `(u, v)`.
    pub fn bilinear_stencil(&self, u: f64, v: f64) -> Result<BilinearStencil> {
        let tol_u = 1e-12 * self.half_lx.max(1.0);
        let tol_v = 1e-12 * self.half_lz.max(1.0);
        if !(u.abs() <= self.half_lx + tol_u && v.abs() <= self.half_lz + tol_v) {
            return Err(FcapaError::OutOfDomain { u, v });
        }
        let n = self.resolution();
        let (du, dv) = self.spacing();
        let locate = |x: f64, half: f64, h: f64| {
            let pos = ((x + half) / h).clamp(0.0, (n - 1) as f64);
            let lo = (pos.floor() as usize).min(n - 2);
            (lo, pos - lo as f64)
        };
        let (i0, tu) = locate(u, self.half_lx, du);
        let (j0, tv) = locate(v, self.half_lz, dv);
        Ok(BilinearStencil {
            i0,
            j0,
            weights: [(1.0 - tu) * (1.0 - tv), tu * (1.0 - tv), (1.0 - tu) * tv, tu * tv],
        })
    }
}

/// Four-node bilinear interpolation stencil anchored at `(j0, i0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearStencil {
    pub i0: usize,
    pub j0: usize,
    /// Weights for `(j0,i0)`, `(j0,i0+1)`, `(j0+1,i0)`, `(j0+1,i0+1)`.
    pub weights: [f64; 4],
}

impl BilinearStencil {
    pub fn nodes(&self) -> [(usize, usize); 4] {
        let (j, i) = (self.j0, self.i0);
        [(j, i), (j, i + 1), (j + 1, i), (j + 1, i + 1)]
    }

    pub fn apply(&self, field: &DMatrix<f64>) -> f64 {
        self.nodes()
            .iter()
            .zip(self.weights)
            .map(|(&idx, w)| w * field[idx])
            .sum()
    }
}

/// First derivative along one axis of a row of samples with spacing `h`:
/// central differences inside, second-order one-sided at the ends.
pub(crate) fn diff1(values: &[f64], h: f64, out: &mut [f64]) {
    let n = values.len();
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
    out[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
    for k in 1..n - 1 {
        out[k] = (values[k + 1] - values[k - 1]) / (2.0 * h);
    }
}

fn diff2(values: &[f64], h: f64, out: &mut [f64]) {
    let n = values.len();
    let h2 = h * h;
    if n >= 4 {
        out[0] = (2.0 * values[0] - 5.0 * values[1] + 4.0 * values[2] - values[3]) / h2;
        out[n - 1] = (2.0 * values[n - 1] - 5.0 * values[n - 2] + 4.0 * values[n - 3] - values[n - 4]) / h2;
    } else {
        out[0] = (values[0] - 2.0 * values[1] + values[2]) / h2;
        out[n - 1] = out[0];
    }
    for k in 1..n - 1 {
        out[k] = (values[k + 1] - 2.0 * values[k] + values[k - 1]) / h2;
    }
}

/// Applies a 1-D stencil along `u` (within each row `j`) of a grid.
pub(crate) fn along_u(field: &DMatrix<f64>, h: f64, op: fn(&[f64], f64, &mut [f64])) -> DMatrix<f64> {
    let n = field.nrows();
    let mut out = DMatrix::zeros(n, field.ncols());
    let mut line = vec![0.0; field.ncols()];
    let mut res = vec![0.0; field.ncols()];
    for j in 0..n {
        for (i, x) in line.iter_mut().enumerate() {
            *x = field[(j, i)];
        }
        op(&line, h, &mut res);
        for (i, x) in res.iter().enumerate() {
            out[(j, i)] = *x;
        }
    }
    out
}

/// Applies a 1-D stencil along `v` (within each column `i`) of a grid.
pub(crate) fn along_v(field: &DMatrix<f64>, h: f64, op: fn(&[f64], f64, &mut [f64])) -> DMatrix<f64> {
    let m = field.ncols();
    let mut out = DMatrix::zeros(field.nrows(), m);
    let mut res = vec![0.0; field.nrows()];
    for i in 0..m {
        op(field.column(i).as_slice(), h, &mut res);
        out.column_mut(i).copy_from_slice(&res);
    }
    out
}

/// Slopes, curvatures and area element of the current heights.
pub fn finite_diff_fields(shape: &SurfaceShape) -> Result<ShapeFields> {
    let n = shape.resolution();
    if n < 3 {
        return Err(FcapaError::InvalidConfig(format!(
            "shape grid needs at least 3 points per axis (got {n})"
        )));
    }
    let (du, dv) = shape.spacing();
    let g = &shape.heights;
    let du_g = along_u(g, du, diff1);
    let dv_g = along_v(g, dv, diff1);
    let duu_g = along_u(g, du, diff2);
    let dvv_g = along_v(g, dv, diff2);
    let zeta = du_g.zip_map(&dv_g, area_element);
    Ok(ShapeFields {
        du_g,
        dv_g,
        duu_g,
        dvv_g,
        zeta,
    })
}
