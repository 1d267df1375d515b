//! Line-of-sight radiating Green's function and the scalar channels it
//! induces between the aperture and uni-polarized users.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{FcapaError, Result};
use crate::geometry::SurfaceShape;
use crate::quadrature::QuadratureGrid;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const FREE_SPACE_IMPEDANCE: f64 = 120.0 * PI;

pub type Vec3 = [f64; 3];
pub type Tensor3 = [[Complex64; 3]; 3];

const Z_HAT: Vec3 = [0.0, 0.0, 1.0];

fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// A single-antenna receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub position: Vec3,
    pub polarization: Vec3,
    pub noise_var: f64,
    pub weight: f64,
}

/// Everything needed to evaluate channels and rates for one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub users: Vec<User>,
    pub carrier_hz: f64,
    pub impedance: f64,
    /// Transmit power factor in A².
    pub transmit_power: f64,
    pub lx: f64,
    pub lz: f64,
}

impl Scenario {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FcapaError::InvalidConfig(msg));
        if self.users.is_empty() {
            return bad("scenario has no users".into());
        }
        if !(self.carrier_hz > 0.0 && self.impedance > 0.0) {
            return bad("carrier frequency and impedance must be positive".into());
        }
        if !(self.transmit_power > 0.0) {
            return bad(format!("transmit power must be positive (got {})", self.transmit_power));
        }
        if !(self.lx > 0.0 && self.lz > 0.0) {
            return bad(format!(
                "aperture lengths must be positive (got {} x {})",
                self.lx, self.lz
            ));
        }
        for (k, u) in self.users.iter().enumerate() {
            if (dot(&u.polarization, &u.polarization).sqrt() - 1.0).abs() > 1e-12 {
                return bad(format!("user {k}: polarization is not a unit vector"));
            }
            if !(u.noise_var > 0.0) {
                return bad(format!("user {k}: noise variance must be positive"));
            }
            if !(u.weight >= 0.0) {
                return bad(format!("user {k}: weight must be non-negative"));
            }
            if u.position.iter().any(|x| !x.is_finite()) {
                return bad(format!("user {k}: position is not finite"));
            }
        }
        Ok(())
    }
}

/// Dyadic Green's function without reactive near-field terms.
pub fn green_tensor(r: &Vec3, s: &Vec3, wavelength: f64, eta: f64) -> Result<Tensor3> {
    let d = sub(r, s);
    let dist2 = dot(&d, &d);
    if dist2 == 0.0 {
        return Err(FcapaError::Singularity(*s));
    }
    let dist = dist2.sqrt();
    let pref = prefactor(dist, wavelength, eta);
    let mut g = [[Complex64::new(0.0, 0.0); 3]; 3];
    for (a, row) in g.iter_mut().enumerate() {
        for (b, entry) in row.iter_mut().enumerate() {
            let delta = if a == b { 1.0 } else { 0.0 };
            *entry = pref * (delta - d[a] * d[b] / dist2);
        }
    }
    Ok(g)
}

fn prefactor(dist: f64, wavelength: f64, eta: f64) -> Complex64 {
    let phase = Complex64::from_polar(1.0, -2.0 * PI * dist / wavelength);
    Complex64::new(0.0, -eta) * phase / (2.0 * wavelength * dist)
}

/// `u_k^T G(r_k, s) z_hat` for a z-polarized source current.
pub fn scalar_channel(r: &Vec3, s: &Vec3, pol: &Vec3, wavelength: f64, eta: f64) -> Result<Complex64> {
    let d = sub(r, s);
    let dist2 = dot(&d, &d);
    if dist2 == 0.0 {
        return Err(FcapaError::Singularity(*s));
    }
    let dist = dist2.sqrt();
    let projected = dot(pol, &Z_HAT) - dot(pol, &d) * d[2] / dist2;
    Ok(prefactor(dist, wavelength, eta) * projected)
}

/// Channel samples at a set of surface points together with the
/// integration weights that turn sums over rows into surface integrals.
///
/// `h[(n, k)]` is user `k`'s channel at point `n`. Continuous apertures
/// carry quadrature weights and the area element; discrete arrays use unit
/// weights and fold any area factor into `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub h: DMatrix<Complex64>,
    pub zeta: Vec<f64>,
    pub weights: Vec<f64>,
    pub points: Vec<Vec3>,
}

impl ChannelSet {
    pub fn num_points(&self) -> usize {
        self.h.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.h.ncols()
    }

    /// Integration measure `w_n * zeta_n` of every row.
    pub fn measure(&self) -> Vec<f64> {
        self.weights.iter().zip(&self.zeta).map(|(w, z)| w * z).collect()
    }
}

/// Evaluates every user's channel at surface points `[u, g(u,v), v]`.
pub fn channels_at_points(scn: &Scenario, points: &[Vec3]) -> Result<DMatrix<Complex64>> {
    let lambda = scn.wavelength();
    let mut h = DMatrix::zeros(points.len(), scn.num_users());
    for (k, user) in scn.users.iter().enumerate() {
        for (n, s) in points.iter().enumerate() {
            h[(n, k)] = scalar_channel(&user.position, s, &user.polarization, lambda, scn.impedance)?;
        }
    }
    Ok(h)
}

pub fn build_channels(scn: &Scenario, shape: &SurfaceShape, grid: &QuadratureGrid) -> Result<ChannelSet> {
    let (hx, hz) = shape.half_lengths();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
    if !(close(2.0 * hx, grid.lx) && close(2.0 * hz, grid.lz) && close(scn.lx, grid.lx) && close(scn.lz, grid.lz)) {
        return Err(FcapaError::InvalidConfig(format!(
            "aperture mismatch: scenario {}x{}, shape {}x{}, quadrature {}x{}",
            scn.lx,
            scn.lz,
            2.0 * hx,
            2.0 * hz,
            grid.lx,
            grid.lz
        )));
    }
    let fields = shape.fields()?;
    let mut points = Vec::with_capacity(grid.len());
    let mut zeta = Vec::with_capacity(grid.len());
    for &(u, v) in &grid.nodes_uv {
        let sample = shape.sample_with(&fields, u, v)?;
        points.push([u, sample.g, v]);
        zeta.push(sample.zeta);
    }
    let h = channels_at_points(scn, &points)?;
    Ok(ChannelSet {
        h,
        zeta,
        weights: grid.weights_2d.clone(),
        points,
    })
}

/// Channel correlation `Q[(i, m)] = q_{i,m} = sum_n w_n zeta_n H(n,m) conj(H(n,i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub q: DMatrix<Complex64>,
}

pub fn correlation_q(ch: &ChannelSet) -> CorrelationMatrix {
    let measure = ch.measure();
    let mut weighted = ch.h.clone();
    for (n, m) in measure.iter().enumerate() {
        let s = m.sqrt();
        weighted.row_mut(n).scale_mut(s);
    }
    CorrelationMatrix {
        q: weighted.ad_mul(&weighted),
    }
}
