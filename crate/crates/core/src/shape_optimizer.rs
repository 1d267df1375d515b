//! Shape gradient of the current-optimized objective and the outer
//! alternating loop over auxiliary variables, currents and surface shape.

use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::current_optimizer::{
    fp_constants, rates, solve_w, surrogate, update_aux, AuxVars, CurrentField, FpConstants, FredholmSolution,
    LinkBudget, RateReport,
};
use crate::em_channel::{build_channels, correlation_q, ChannelSet, CorrelationMatrix, Scenario};
use crate::error::{FcapaError, Result};
use crate::geometry::{along_u, along_v, diff1, ShapeFields, SurfaceShape};
use crate::quadrature::{tensor_grid, QuadratureGrid};

/// How the dominant field, known at quadrature nodes, reaches the uniform
/// shape grid before the divergence is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientTransfer {
    /// Bilinear resampling of the dominant field followed by a
    /// finite-difference divergence on the grid.
    Interpolate,
    /// Exact derivative of the discretized objective: node fluxes are
    /// scattered through the bilinear stencils and hit with the transposed
    /// difference operators.
    Adjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmijoOptions {
    /// Largest first-trial displacement, in wavelengths.
    pub initial_step: f64,
    pub shrink: f64,
    pub c1: f64,
    /// Trials stop once the largest displacement falls below this many
    /// wavelengths.
    pub min_step: f64,
}

impl Default for ArmijoOptions {
    fn default() -> Self {
        ArmijoOptions {
            initial_step: 0.1,
            shrink: 0.5,
            c1: 1e-4,
            min_step: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Relative surrogate change treated as converged.
    pub tol: f64,
    /// Number of consecutive converged iterations before stopping.
    pub patience: usize,
    pub armijo: ArmijoOptions,
    pub transfer: GradientTransfer,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 20,
            tol: 1e-6,
            patience: 2,
            armijo: ArmijoOptions::default(),
            transfer: GradientTransfer::Adjoint,
        }
    }
}

/// Dominant bracket of the shape derivative at every channel row.
///
/// `j` holds the unnormalized currents implied by `consts` and `w`.
pub fn dominant_field(
    ch: &ChannelSet,
    j: &DMatrix<Complex64>,
    consts: &FpConstants,
    w: &DMatrix<Complex64>,
) -> Vec<f64> {
    let t = j * w.map(|x| x.conj());
    (0..ch.num_points())
        .map(|n| {
            let mut acc = 0.0;
            for k in 0..ch.num_users() {
                let hj = ch.h[(n, k)] * j[(n, k)];
                acc += 2.0 * (consts.a[k].conj() * hj).re;
                acc -= 2.0 * consts.b[k] * (ch.h[(n, k)] * t[(n, k)]).re;
                acc -= consts.c_sum * j[(n, k)].norm_sqr();
            }
            acc
        })
        .collect()
}

/// Same quantity as [`dominant_field`], with the interference integrals
/// evaluated explicitly by quadrature instead of read from `W`.
pub fn dominant_field_direct(ch: &ChannelSet, j: &DMatrix<Complex64>, consts: &FpConstants) -> Vec<f64> {
    let k = ch.num_users();
    let measure = ch.measure();
    // overlap[(k, i)] = int H_k J_i zeta
    let mut overlap = DMatrix::<Complex64>::zeros(k, k);
    for n in 0..ch.num_points() {
        for a in 0..k {
            for i in 0..k {
                overlap[(a, i)] += measure[n] * ch.h[(n, a)] * j[(n, i)];
            }
        }
    }
    (0..ch.num_points())
        .map(|n| {
            let mut acc = 0.0;
            for a in 0..k {
                acc += 2.0 * (consts.a[a].conj() * ch.h[(n, a)] * j[(n, a)]).re;
                for i in 0..k {
                    acc -= 2.0 * consts.b[a] * (overlap[(a, i)].conj() * ch.h[(n, a)] * j[(n, i)]).re;
                    acc -= consts.c[i] * j[(n, a)].norm_sqr();
                }
            }
            acc
        })
        .collect()
}

/// Resamples a tensor-grid field onto the shape grid: bilinear between
/// quadrature nodes, nearest value beyond the outermost nodes.
pub fn resample_to_grid(values: &[f64], grid: &QuadratureGrid, shape: &SurfaceShape) -> DMatrix<f64> {
    let m = grid.order;
    let (un, vn) = (grid.u_nodes(), grid.v_nodes());
    let bracket = |nodes: &[f64], x: f64| -> (usize, usize, f64) {
        if x <= nodes[0] {
            return (0, 0, 0.0);
        }
        if x >= nodes[m - 1] {
            return (m - 1, m - 1, 0.0);
        }
        let hi = nodes.partition_point(|&t| t <= x).min(m - 1);
        let lo = hi - 1;
        (lo, hi, (x - nodes[lo]) / (nodes[hi] - nodes[lo]))
    };
    let n = shape.resolution();
    DMatrix::from_fn(n, n, |jv, iu| {
        let (a0, a1, ta) = bracket(&un, shape.u_coord(iu));
        let (b0, b1, tb) = bracket(&vn, shape.v_coord(jv));
        let at = |a: usize, b: usize| values[b * m + a];
        (1.0 - tb) * ((1.0 - ta) * at(a0, b0) + ta * at(a1, b0)) + tb * ((1.0 - ta) * at(a0, b1) + ta * at(a1, b1))
    })
}

/// `G = -d/du(g_u Gd / zeta) - d/dv(g_v Gd / zeta)` with the boundary
/// pinned to zero.
pub fn el_residual(gd_grid: &DMatrix<f64>, fields: &ShapeFields, spacing: (f64, f64)) -> DMatrix<f64> {
    let flux_u = DMatrix::from_fn(gd_grid.nrows(), gd_grid.ncols(), |j, i| {
        fields.du_g[(j, i)] / fields.zeta[(j, i)] * gd_grid[(j, i)]
    });
    let flux_v = DMatrix::from_fn(gd_grid.nrows(), gd_grid.ncols(), |j, i| {
        fields.dv_g[(j, i)] / fields.zeta[(j, i)] * gd_grid[(j, i)]
    });
    let mut g = -(along_u(&flux_u, spacing.0, diff1) + along_v(&flux_v, spacing.1, diff1));
    pin_boundary(&mut g);
    g
}

/// Transpose of [`diff1`].
fn diff1_transpose(values: &[f64], h: f64, out: &mut [f64]) {
    let n = values.len();
    out.iter_mut().for_each(|x| *x = 0.0);
    let s = 1.0 / (2.0 * h);
    out[0] += -3.0 * s * values[0];
    out[1] += 4.0 * s * values[0];
    out[2] += -s * values[0];
    out[n - 1] += 3.0 * s * values[n - 1];
    out[n - 2] += -4.0 * s * values[n - 1];
    out[n - 3] += s * values[n - 1];
    for k in 1..n - 1 {
        out[k + 1] += s * values[k];
        out[k - 1] -= s * values[k];
    }
}

/// Derivative of `sum_n measure_n Gd_n` with respect to each grid height,
/// per unit cell area, through the slope dependence of `zeta`.
pub fn adjoint_gradient(
    gd: &[f64],
    points: &[(f64, f64)],
    weights: &[f64],
    shape: &SurfaceShape,
    fields: &ShapeFields,
) -> Result<DMatrix<f64>> {
    let n = shape.resolution();
    let mut flux_u = DMatrix::zeros(n, n);
    let mut flux_v = DMatrix::zeros(n, n);
    for ((&(u, v), &w), &d) in points.iter().zip(weights).zip(gd) {
        let stencil = shape.bilinear_stencil(u, v)?;
        let su = stencil.apply(&fields.du_g);
        let sv = stencil.apply(&fields.dv_g);
        let zeta = (1.0 + su * su + sv * sv).sqrt();
        for (idx, phi) in stencil.nodes().into_iter().zip(stencil.weights) {
            flux_u[idx] += w * d * su / zeta * phi;
            flux_v[idx] += w * d * sv / zeta * phi;
        }
    }
    let (du, dv) = shape.spacing();
    let mut g = along_u(&flux_u, du, diff1_transpose) + along_v(&flux_v, dv, diff1_transpose);
    g /= du * dv;
    pin_boundary(&mut g);
    Ok(g)
}

fn pin_boundary(g: &mut DMatrix<f64>) {
    let (r, c) = g.shape();
    for j in 0..r {
        for i in 0..c {
            if j == 0 || i == 0 || j == r - 1 || i == c - 1 {
                g[(j, i)] = 0.0;
            }
        }
    }
}

/// Result of one projected backtracking search.
#[derive(Debug, Clone)]
pub struct LineSearch<T> {
    pub shape: SurfaceShape,
    pub step: f64,
    pub gain: f64,
    pub trials: usize,
    /// Evaluation payload of the accepted candidate, if any.
    pub accepted: Option<T>,
}

/// Backtracking ascent along `direction` with projection onto the
/// morphability band. `objective` returns the value at a candidate shape
/// together with any data the caller wants to keep for the accepted one.
pub fn armijo_ascent<T>(
    shape: &SurfaceShape,
    direction: &DMatrix<f64>,
    base: f64,
    wavelength: f64,
    opts: &ArmijoOptions,
    mut objective: impl FnMut(&SurfaceShape) -> Result<(f64, T)>,
) -> Result<LineSearch<T>> {
    let unchanged = |trials| LineSearch {
        shape: shape.clone(),
        step: 0.0,
        gain: 0.0,
        trials,
        accepted: None,
    };
    let peak = direction.amax();
    if !(peak > 0.0) || shape.morph_range() == 0.0 {
        return Ok(unchanged(0));
    }
    let (du, dv) = shape.spacing();
    let cell = du * dv;
    let mut step = opts.initial_step * wavelength / peak;
    let mut trials = 0;
    while step * peak >= opts.min_step * wavelength {
        let candidate = shape.with_heights(shape.heights() + direction * step)?;
        let moved = candidate.heights() - shape.heights();
        if moved.amax() == 0.0 {
            return Ok(unchanged(trials));
        }
        let predicted = direction.dot(&moved) * cell;
        trials += 1;
        let (value, payload) = objective(&candidate)?;
        if value.is_finite() && value >= base + opts.c1 * predicted {
            return Ok(LineSearch {
                shape: candidate,
                step,
                gain: value - base,
                trials,
                accepted: Some(payload),
            });
        }
        step *= opts.shrink;
    }
    Ok(unchanged(trials))
}

/// A deformable radiator whose channels and shape gradient can be
/// evaluated for any admissible height field.
pub trait ShapeModel {
    fn channels(&self, shape: &SurfaceShape) -> Result<ChannelSet>;

    /// Ascent direction on the height grid for the current block state.
    fn shape_gradient(
        &self,
        shape: &SurfaceShape,
        ch: &ChannelSet,
        consts: &FpConstants,
        sol: &FredholmSolution,
    ) -> Result<DMatrix<f64>>;
}

/// Continuous aperture integrated by a tensor Gauss-Legendre rule.
#[derive(Debug, Clone)]
pub struct ContinuousAperture<'a> {
    pub scenario: &'a Scenario,
    pub grid: QuadratureGrid,
    pub transfer: GradientTransfer,
}

impl<'a> ContinuousAperture<'a> {
    pub fn new(scenario: &'a Scenario, order: usize, transfer: GradientTransfer) -> Result<Self> {
        Ok(ContinuousAperture {
            scenario,
            grid: tensor_grid(order, scenario.lx, scenario.lz)?,
            transfer,
        })
    }
}

impl ShapeModel for ContinuousAperture<'_> {
    fn channels(&self, shape: &SurfaceShape) -> Result<ChannelSet> {
        build_channels(self.scenario, shape, &self.grid)
    }

    fn shape_gradient(
        &self,
        shape: &SurfaceShape,
        ch: &ChannelSet,
        consts: &FpConstants,
        sol: &FredholmSolution,
    ) -> Result<DMatrix<f64>> {
        let j = CurrentField::new(consts, &sol.w).on(ch);
        let gd = dominant_field(ch, &j, consts, &sol.w);
        let fields = shape.fields()?;
        match self.transfer {
            GradientTransfer::Interpolate => {
                let gd_grid = resample_to_grid(&gd, &self.grid, shape);
                Ok(el_residual(&gd_grid, &fields, shape.spacing()))
            }
            GradientTransfer::Adjoint => {
                adjoint_gradient(&gd, &self.grid.nodes_uv, &self.grid.weights_2d, shape, &fields)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub surrogate: f64,
    pub arpu: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    /// State before the first iteration.
    pub initial: TracePoint,
    /// One entry per completed iteration.
    pub trace: Vec<TracePoint>,
    pub steps: Vec<f64>,
    pub shape: SurfaceShape,
    pub channels: ChannelSet,
    /// Currents scaled to the transmit power.
    pub field: CurrentField,
    pub solution: FredholmSolution,
    pub report: RateReport,
    /// Radiated power of `field` measured on `channels`.
    pub power: f64,
    pub wall_ms: f64,
}

impl SolveReport {
    pub fn arpu(&self) -> f64 {
        self.report.arpu
    }
}

struct Block {
    shape: SurfaceShape,
    ch: ChannelSet,
    q: CorrelationMatrix,
}

/// Alternating maximization: auxiliary variables, currents (closed form)
/// and shape (projected ascent on the current-optimized surrogate).
///
/// With a zero morphability band the shape step is skipped and the loop is
/// the fixed-shape current iteration.
pub fn run_bcd(
    model: &impl ShapeModel,
    budget: &LinkBudget,
    wavelength: f64,
    shape0: SurfaceShape,
    start: Option<FredholmSolution>,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let clock = Instant::now();
    let ch = model.channels(&shape0)?;
    let q = correlation_q(&ch);
    let mut block = Block { shape: shape0, ch, q };
    let mut sol = start.unwrap_or_else(|| FredholmSolution::initial(&block.q));
    let mut aux = update_aux(&sol, budget);
    let point = |iteration: usize, sol: &FredholmSolution, aux: &AuxVars| TracePoint {
        iteration,
        surrogate: surrogate(sol, aux, budget),
        arpu: rates(sol, budget).arpu,
    };
    let initial = point(0, &sol, &aux);
    let mut trace: Vec<TracePoint> = Vec::new();
    let mut steps = Vec::new();
    let mut consts = fp_constants(&aux, budget)?;
    let mut quiet = 0;
    for it in 1..=opts.max_iters {
        consts = fp_constants(&aux, budget)?;
        sol = solve_w(&block.q, &consts)?;
        let base = surrogate(&sol, &aux, budget);
        if !base.is_finite() {
            return Err(FcapaError::NonFinite { iteration: it });
        }
        if block.shape.morph_range() > 0.0 {
            let direction = model.shape_gradient(&block.shape, &block.ch, &consts, &sol)?;
            let search = armijo_ascent(&block.shape, &direction, base, wavelength, &opts.armijo, |cand| {
                let ch = model.channels(cand)?;
                let q = correlation_q(&ch);
                let trial = solve_w(&q, &consts)?;
                Ok((surrogate(&trial, &aux, budget), (ch, q, trial)))
            })?;
            steps.push(search.step);
            if let Some((ch, q, trial)) = search.accepted {
                block = Block {
                    shape: search.shape,
                    ch,
                    q,
                };
                sol = trial;
            }
        }
        aux = update_aux(&sol, budget);
        let p = point(it, &sol, &aux);
        if !p.surrogate.is_finite() {
            return Err(FcapaError::NonFinite { iteration: it });
        }
        let prev = trace.last().map_or(initial.surrogate, |t| t.surrogate);
        trace.push(p);
        if (p.surrogate - prev).abs() <= opts.tol * prev.abs() {
            quiet += 1;
            if quiet >= opts.patience {
                break;
            }
        } else {
            quiet = 0;
        }
    }
    let field = CurrentField::new(&consts, &sol.w).normalized(sol.rho, budget.power)?;
    let power = crate::current_optimizer::current_power(&block.ch, &field.on(&block.ch))?;
    let report = rates(&sol, budget);
    Ok(SolveReport {
        iterations: trace.len(),
        initial,
        trace,
        steps,
        shape: block.shape,
        channels: block.ch,
        field,
        solution: sol,
        report,
        power,
        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
    })
}

/// Joint current and shape optimization of a continuous aperture.
pub fn solve(scn: &Scenario, shape0: SurfaceShape, order: usize, opts: &SolveOptions) -> Result<SolveReport> {
    scn.validate()?;
    let model = ContinuousAperture::new(scn, order, opts.transfer)?;
    run_bcd(
        &model,
        &LinkBudget::from_scenario(scn),
        scn.wavelength(),
        shape0,
        None,
        opts,
    )
}
