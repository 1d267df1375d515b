//! Gauss–Legendre rules and their tensor product over the aperture.

use num_complex::Complex64;

use crate::error::{FcapaError, Result};

/// One-dimensional Gauss–Legendre rule on `[-1, 1]`, nodes ascending.
pub fn gl_rule(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(FcapaError::InvalidConfig("quadrature order must be at least 1".into()));
    }
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi's initial guess for the i-th largest root
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

/// `P_n(x)` and `P_n'(x)` by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 1..n {
        let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = if n == 0 {
        0.0
    } else {
        n as f64 * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, dp)
}

/// Tensor-product rule over `[-Lx/2, Lx/2] x [-Lz/2, Lz/2]`.
///
/// Flattened index `n = b * order + a`: `b` runs along `v` (outer) and `a`
/// along `u` (inner). Every `M²`-length field in the crate uses this order.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub order: usize,
    pub nodes_1d: Vec<f64>,
    pub weights_1d: Vec<f64>,
    pub nodes_uv: Vec<(f64, f64)>,
    pub weights_2d: Vec<f64>,
    pub lx: f64,
    pub lz: f64,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.weights_2d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights_2d.is_empty()
    }

    /// Node coordinates along `u` (equal to those along `v` up to scale).
    pub fn u_nodes(&self) -> Vec<f64> {
        self.nodes_1d.iter().map(|t| self.lx * t / 2.0).collect()
    }

    pub fn v_nodes(&self) -> Vec<f64> {
        self.nodes_1d.iter().map(|t| self.lz * t / 2.0).collect()
    }
}

pub fn tensor_grid(order: usize, lx: f64, lz: f64) -> Result<QuadratureGrid> {
    if !(lx > 0.0 && lz > 0.0 && lx.is_finite() && lz.is_finite()) {
        return Err(FcapaError::InvalidConfig(format!(
            "aperture lengths must be positive (got {lx} x {lz})"
        )));
    }
    let (nodes_1d, weights_1d) = gl_rule(order)?;
    let scale = lx * lz / 4.0;
    let mut nodes_uv = Vec::with_capacity(order * order);
    let mut weights_2d = Vec::with_capacity(order * order);
    for b in 0..order {
        for a in 0..order {
            nodes_uv.push((lx * nodes_1d[a] / 2.0, lz * nodes_1d[b] / 2.0));
            weights_2d.push(scale * weights_1d[a] * weights_1d[b]);
        }
    }
    Ok(QuadratureGrid {
        order,
        nodes_1d,
        weights_1d,
        nodes_uv,
        weights_2d,
        lx,
        lz,
    })
}

/// Weighted sum of node samples. Callers pre-multiply by `zeta` when
/// integrating over the curved surface rather than the parameter plane.
pub fn integrate(values: &[Complex64], grid: &QuadratureGrid) -> Result<Complex64> {
    check_len(values.len(), grid)?;
    Ok(values.iter().zip(&grid.weights_2d).map(|(v, w)| v * w).sum())
}

pub fn integrate_real(values: &[f64], grid: &QuadratureGrid) -> Result<f64> {
    check_len(values.len(), grid)?;
    Ok(values.iter().zip(&grid.weights_2d).map(|(v, w)| v * w).sum())
}

fn check_len(got: usize, grid: &QuadratureGrid) -> Result<()> {
    if got != grid.len() {
        return Err(FcapaError::ShapeMismatch {
            expected: grid.len(),
            got,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn low_order_rules() {
        assert_eq!(gl_rule(1).unwrap(), (vec![0.0], vec![2.0]));
        let (x, w) = gl_rule(2).unwrap();
        let r = 1.0 / 3f64.sqrt();
        assert_relative_eq!(x[0], -r, epsilon = 1e-15);
        assert_relative_eq!(x[1], r, epsilon = 1e-15);
        assert_relative_eq!(w[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(w[1], 1.0, epsilon = 1e-15);
        let x2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert_relative_eq!(x2, 2.0 / 3.0, epsilon = 1e-15);
        assert!(matches!(gl_rule(0), Err(FcapaError::InvalidConfig(_))));
    }

    #[test]
    fn rule_invariants() {
        for order in [3, 8, 20, 40, 64] {
            let (x, w) = gl_rule(order).unwrap();
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-12);
            assert!(w.iter().all(|&w| w > 0.0));
            for (a, b) in x.iter().zip(x.iter().rev()) {
                assert!((a + b).abs() < 1e-15);
            }
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn tensor_grid_area_and_symmetry() {
        let grid = tensor_grid(20, 0.5, 0.5).unwrap();
        let one = vec![Complex64::new(1.0, 0.0); grid.len()];
        assert_relative_eq!(integrate(&one, &grid).unwrap().re, 0.25, max_relative = 1e-12);
        let odd: Vec<Complex64> = grid.nodes_uv.iter().map(|&(u, _)| u.into()).collect();
        assert!(integrate(&odd, &grid).unwrap().norm() < 1e-14);
        let zeros = vec![Complex64::new(0.0, 0.0); grid.len()];
        assert_eq!(integrate(&zeros, &grid).unwrap(), Complex64::new(0.0, 0.0));
        let rect = tensor_grid(7, 0.3, 1.1).unwrap();
        assert_relative_eq!(rect.weights_2d.iter().sum::<f64>(), 0.33, max_relative = 1e-10);
    }

    #[test]
    fn quadratic_moment_with_two_points() {
        // int int (u^2 + v^2) over [-a, a]^2 = 8 a^4 / 3
        let a: f64 = 0.25;
        let grid = tensor_grid(2, 2.0 * a, 2.0 * a).unwrap();
        let vals: Vec<f64> = grid.nodes_uv.iter().map(|&(u, v)| u * u + v * v).collect();
        assert_relative_eq!(
            integrate_real(&vals, &grid).unwrap(),
            8.0 * a.powi(4) / 3.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(8.0 * a.powi(4) / 3.0, 0.010416666666666666, max_relative = 1e-15);
    }

    /// Adaptive Simpson, used only as an independent reference.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 40)
    }

    #[test]
    fn paraboloid_surface_area_matches_adaptive_reference() {
        let zeta = |u: f64, v: f64| (1.0 + 4.0 * u * u + 4.0 * v * v).sqrt();
        let reference = adaptive_simpson(
            &|v| adaptive_simpson(&|u| zeta(u, v), -0.25, 0.25, 1e-14),
            -0.25,
            0.25,
            1e-13,
        );
        let grid = tensor_grid(20, 0.5, 0.5).unwrap();
        let vals: Vec<f64> = grid.nodes_uv.iter().map(|&(u, v)| zeta(u, v)).collect();
        assert_relative_eq!(integrate_real(&vals, &grid).unwrap(), reference, max_relative = 1e-8);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let grid = tensor_grid(3, 1.0, 1.0).unwrap();
        assert!(matches!(
            integrate_real(&[1.0; 8], &grid),
            Err(FcapaError::ShapeMismatch { expected: 9, got: 8 })
        ));
    }

    proptest! {
        #[test]
        fn integration_is_linear(
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
            seed in 0u64..1000,
        ) {
            let grid = tensor_grid(6, 0.7, 0.4).unwrap();
            let f: Vec<Complex64> = grid.nodes_uv.iter()
                .map(|&(u, v)| Complex64::new((u * seed as f64).cos(), v * v)).collect();
            let g: Vec<Complex64> = grid.nodes_uv.iter()
                .map(|&(u, v)| Complex64::new(u * v, (v + seed as f64).sin())).collect();
            let mix: Vec<Complex64> = f.iter().zip(&g).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = integrate(&mix, &grid).unwrap();
            let rhs = alpha * integrate(&f, &grid).unwrap() + beta * integrate(&g, &grid).unwrap();
            prop_assert!((lhs - rhs).norm() <= 1e-14 * (1.0 + rhs.norm()));
        }
    }
}
