//! Reference schemes: the rigid continuous aperture and discrete
//! half-wavelength arrays, either fixed or with per-element heights.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::current_optimizer::{rates, CurrentField, FpConstants, FredholmSolution, LinkBudget, RateReport};
use crate::em_channel::{scalar_channel, ChannelSet, Scenario, Vec3};
use crate::error::{FcapaError, Result};
use crate::geometry::SurfaceShape;
use crate::shape_optimizer::{run_bcd, solve, ShapeModel, SolveOptions, SolveReport};

/// Beamformer used to report discrete-array rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precoder {
    Zf,
    #[default]
    Fp,
}

impl std::str::FromStr for Precoder {
    type Err = FcapaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zf" => Ok(Precoder::Zf),
            "fp" => Ok(Precoder::Fp),
            other => Err(FcapaError::InvalidConfig(format!(
                "unknown precoder '{other}' (expected 'zf' or 'fp')"
            ))),
        }
    }
}

/// Rigid continuous aperture: the joint solver with the shape frozen.
pub fn rigid_capa(scn: &Scenario, reference: &SurfaceShape, order: usize, opts: &SolveOptions) -> Result<SolveReport> {
    solve(scn, reference.clone().with_morph_range(0.0)?, order, opts)
}

/// Uniform array of point radiators spaced half a wavelength apart.
///
/// Element `(iz, ix)` sits at `x = ix d - Lx/2`, `z = iz d - Lz/2`. Heights
/// are carried by a [`SurfaceShape`] whose grid coincides with the elements
/// up to a constant in-plane shift, so projection and slopes are shared
/// with the continuous aperture.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteArray {
    pub spacing: f64,
    pub element_area: f64,
    pub nx: usize,
    pub nz: usize,
    offset: (f64, f64),
    pub shape: SurfaceShape,
    /// Area element of the reference surface at each element center; it
    /// does not follow the optimized heights.
    zeta: DMatrix<f64>,
}

fn element_count(length: f64, spacing: f64) -> usize {
    // guard against L/d landing a rounding error above an integer
    (length / spacing - 1e-9).ceil().max(1.0) as usize
}

impl DiscreteArray {
    /// Builds the array for `scn`. Element heights follow `reference`
    /// (sampled at the element positions) or zero when it is `None`.
    pub fn new(scn: &Scenario, reference: Option<&SurfaceShape>) -> Result<Self> {
        let lambda = scn.wavelength();
        let d = lambda / 2.0;
        let (nx, nz) = (element_count(scn.lx, d), element_count(scn.lz, d));
        if nx != nz {
            return Err(FcapaError::InvalidConfig(format!(
                "discrete arrays need a square element grid (got {nx} x {nz})"
            )));
        }
        if nx < 3 {
            return Err(FcapaError::InvalidConfig(format!(
                "aperture of {} m holds only {nx} elements per side at {:.3e} m spacing",
                scn.lx, d
            )));
        }
        let span = (nx - 1) as f64 * d;
        let offset = (span / 2.0 - scn.lx / 2.0, span / 2.0 - scn.lz / 2.0);
        let flat = SurfaceShape::flat(span, span, nx)?;
        let mut zeta = DMatrix::from_element(nz, nx, 1.0);
        let shape = match reference {
            None => flat,
            Some(r) => {
                let pts: Vec<(f64, f64)> = (0..nz)
                    .flat_map(|j| (0..nx).map(move |i| (j, i)))
                    .map(|(j, i)| (flat.u_coord(i) + offset.0, flat.v_coord(j) + offset.1))
                    .collect();
                let samples = r.sample(&pts)?;
                for (n, smp) in samples.iter().enumerate() {
                    zeta[(n / nx, n % nx)] = smp.zeta;
                }
                SurfaceShape::from_fn(span, span, nx, |u, v| {
                    let i = ((u + span / 2.0) / d).round() as usize;
                    let j = ((v + span / 2.0) / d).round() as usize;
                    samples[j * nx + i].g
                })?
            }
        };
        Ok(DiscreteArray {
            spacing: d,
            element_area: lambda * lambda / (4.0 * std::f64::consts::PI),
            nx,
            nz,
            offset,
            shape,
            zeta,
        })
    }

    pub fn with_morph_range(mut self, xi: f64) -> Result<Self> {
        self.shape = self.shape.with_morph_range(xi)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Position of element `(j, i)` for the given heights.
    fn position(&self, heights: &DMatrix<f64>, j: usize, i: usize) -> Vec3 {
        [
            self.shape.u_coord(i) + self.offset.0,
            heights[(j, i)],
            self.shape.v_coord(j) + self.offset.1,
        ]
    }

    pub fn positions(&self) -> Vec<Vec3> {
        (0..self.nz)
            .flat_map(|j| (0..self.nx).map(move |i| (j, i)))
            .map(|(j, i)| self.position(self.shape.heights(), j, i))
            .collect()
    }
}

/// Element channels `sqrt(A_d) H_k(s_n) zeta_n`, packed with unit
/// integration weights so that the continuous machinery applies verbatim.
pub fn discrete_channels(arr: &DiscreteArray, scn: &Scenario) -> Result<ChannelSet> {
    DiscreteModel {
        scenario: scn,
        array: arr,
    }
    .channels(&arr.shape)
}

/// Discrete array whose element heights are the shape variable.
pub struct DiscreteModel<'a> {
    pub scenario: &'a Scenario,
    pub array: &'a DiscreteArray,
}

impl DiscreteModel<'_> {
    fn row(&self, heights: &DMatrix<f64>, j: usize, i: usize) -> Result<Vec<Complex64>> {
        let p = self.array.position(heights, j, i);
        let scale = self.array.element_area.sqrt() * self.array.zeta[(j, i)];
        let lambda = self.scenario.wavelength();
        self.scenario
            .users
            .iter()
            .map(|u| Ok(scale * scalar_channel(&u.position, &p, &u.polarization, lambda, self.scenario.impedance)?))
            .collect()
    }
}

impl ShapeModel for DiscreteModel<'_> {
    fn channels(&self, shape: &SurfaceShape) -> Result<ChannelSet> {
        let (nx, nz) = (self.array.nx, self.array.nz);
        let k = self.scenario.num_users();
        let mut h = DMatrix::zeros(nx * nz, k);
        let mut points = Vec::with_capacity(nx * nz);
        for j in 0..nz {
            for i in 0..nx {
                let n = j * nx + i;
                for (c, value) in self.row(shape.heights(), j, i)?.into_iter().enumerate() {
                    h[(n, c)] = value;
                }
                points.push(self.array.position(shape.heights(), j, i));
            }
        }
        Ok(ChannelSet {
            h,
            zeta: vec![1.0; nx * nz],
            weights: vec![1.0; nx * nz],
            points,
        })
    }

    /// Central differences of the fixed-beamformer surrogate over each
    /// element height, per unit cell area.
    fn shape_gradient(
        &self,
        shape: &SurfaceShape,
        ch: &ChannelSet,
        consts: &FpConstants,
        sol: &FredholmSolution,
    ) -> Result<DMatrix<f64>> {
        let j_mat = CurrentField::new(consts, &sol.w).on(ch);
        let w0 = j_mat.transpose() * &ch.h;
        let k = ch.num_users();
        let value = |w: &DMatrix<Complex64>| -> f64 {
            (0..k)
                .map(|r| {
                    let interference: f64 = (0..k).map(|i| w[(i, r)].norm_sqr()).sum();
                    2.0 * (consts.a[r].conj() * w[(r, r)]).re - consts.b[r] * interference
                })
                .sum()
        };
        let (nx, nz) = (self.array.nx, self.array.nz);
        let delta = 1e-6 * self.scenario.wavelength();
        let mut grad = DMatrix::zeros(nz, nx);
        let mut heights = shape.heights().clone();
        for j in 0..nz {
            for i in 0..nx {
                // an element's channel depends on its own height only
                let n = j * nx + i;
                let mut side = [0.0; 2];
                for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
                    heights[(j, i)] = shape.heights()[(j, i)] + sign * delta;
                    let new_row = self.row(&heights, j, i)?;
                    let mut w = w0.clone();
                    for col in 0..k {
                        let dh = new_row[col] - ch.h[(n, col)];
                        for row in 0..k {
                            w[(row, col)] += j_mat[(n, row)] * dh;
                        }
                    }
                    side[s] = value(&w);
                }
                heights[(j, i)] = shape.heights()[(j, i)];
                grad[(j, i)] = (side[0] - side[1]) / (2.0 * delta);
            }
        }
        let cell = self.array.spacing * self.array.spacing;
        Ok(grad / cell)
    }
}

/// Zero-forcing beamformers with equal power per user, `N x K`.
pub fn zf_precoder(ch: &ChannelSet, budget: &LinkBudget) -> Result<DMatrix<Complex64>> {
    let (n, k) = (ch.num_points(), ch.num_users());
    let rank_error = FcapaError::RankDeficient { users: k, antennas: n };
    if n < k {
        return Err(rank_error);
    }
    // responses are h^T J, so the pseudo-inverse is taken of h^T
    let g = ch.h.transpose();
    let gram = &g * g.adjoint();
    let inv = gram
        .clone()
        .lu()
        .try_inverse()
        .ok_or(FcapaError::RankDeficient { users: k, antennas: n })?;
    let norm1 = |m: &DMatrix<Complex64>| {
        m.column_iter()
            .map(|c| c.iter().map(|x| x.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    if !(norm1(&gram) * norm1(&inv) < 1e12) {
        return Err(rank_error);
    }
    let mut v = g.adjoint() * inv;
    let per_user = (budget.power / k as f64).sqrt();
    for mut col in v.column_iter_mut() {
        let norm = col.norm();
        col *= Complex64::from(per_user / norm);
    }
    Ok(v)
}

pub fn zf_rates(ch: &ChannelSet, budget: &LinkBudget) -> Result<RateReport> {
    let v = zf_precoder(ch, budget)?;
    Ok(rates(&FredholmSolution::from_currents(ch, &v)?, budget))
}

/// Options for the discrete fractional-programming iteration.
pub fn discrete_fp_options(base: &SolveOptions) -> SolveOptions {
    SolveOptions {
        max_iters: 50,
        tol: 1e-6,
        patience: 1,
        ..*base
    }
}

/// Outcome of a discrete-array run.
#[derive(Debug, Clone)]
pub struct DiscreteOutcome {
    pub report: RateReport,
    pub iterations: usize,
    pub power: f64,
    pub shape: SurfaceShape,
}

/// Fractional-programming beamforming on a discrete array, started from
/// zero forcing when it exists (so the result is never below it) and from
/// matched filtering otherwise. A non-zero morph range on the array also
/// optimizes the element heights.
pub fn fp_discrete(scn: &Scenario, arr: &DiscreteArray, opts: &SolveOptions) -> Result<SolveReport> {
    let budget = LinkBudget::from_scenario(scn);
    let model = DiscreteModel {
        scenario: scn,
        array: arr,
    };
    let ch = model.channels(&arr.shape)?;
    let start = match zf_precoder(&ch, &budget) {
        Ok(v) => Some(FredholmSolution::from_currents(&ch, &v)?),
        Err(FcapaError::RankDeficient { .. }) => None,
        Err(e) => return Err(e),
    };
    run_bcd(
        &model,
        &budget,
        scn.wavelength(),
        arr.shape.clone(),
        start,
        &discrete_fp_options(opts),
    )
}

/// Discrete array baseline with the chosen precoder. With ZF on a
/// deformable array, the heights come from the FP run and ZF is applied on
/// the resulting shape.
pub fn discrete_baseline(
    scn: &Scenario,
    arr: &DiscreteArray,
    precoder: Precoder,
    opts: &SolveOptions,
) -> Result<DiscreteOutcome> {
    let budget = LinkBudget::from_scenario(scn);
    match precoder {
        Precoder::Fp => {
            let out = fp_discrete(scn, arr, opts)?;
            Ok(DiscreteOutcome {
                report: out.report,
                iterations: out.iterations,
                power: out.power,
                shape: out.shape,
            })
        }
        Precoder::Zf => {
            let (shape, iterations) = if arr.shape.morph_range() > 0.0 {
                let out = fp_discrete(scn, arr, opts)?;
                (out.shape, out.iterations)
            } else {
                (arr.shape.clone(), 0)
            };
            let ch = DiscreteModel {
                scenario: scn,
                array: arr,
            }
            .channels(&shape)?;
            let v = zf_precoder(&ch, &budget)?;
            let sol = FredholmSolution::from_currents(&ch, &v)?;
            Ok(DiscreteOutcome {
                report: rates(&sol, &budget),
                iterations,
                power: sol.rho,
                shape,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::current_optimizer::{fp_constants, solve_w, surrogate, update_aux};
    use crate::em_channel::{correlation_q, User, FREE_SPACE_IMPEDANCE};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn scenario(seed: u64, k: usize) -> Scenario {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Scenario {
            users: (0..k)
                .map(|_| User {
                    position: [
                        rng.gen_range(-5.0..5.0),
                        rng.gen_range(15.0..30.0),
                        rng.gen_range(-5.0..5.0),
                    ],
                    polarization: [0.0, 0.0, 1.0],
                    noise_var: 5.6e-3,
                    weight: 1.0 / k as f64,
                })
                .collect(),
            carrier_hz: 2.4e9,
            impedance: FREE_SPACE_IMPEDANCE,
            transmit_power: 0.1,
            lx: 0.5,
            lz: 0.5,
        }
    }

    #[test]
    fn element_count_uses_exact_wavelength() {
        let scn = scenario(0, 2);
        let d = scn.wavelength() / 2.0;
        assert!(0.5 / d > 8.0);
        let arr = DiscreteArray::new(&scn, None).unwrap();
        assert_eq!((arr.nx, arr.nz, arr.len()), (9, 9, 81));
        assert_relative_eq!(
            arr.element_area,
            scn.wavelength().powi(2) / (4.0 * std::f64::consts::PI)
        );
        assert_eq!(element_count(0.5, 0.0625), 8);
    }

    #[test]
    fn positions_follow_the_layout() {
        let scn = scenario(0, 2);
        let arr = DiscreteArray::new(&scn, None).unwrap();
        let pos = arr.positions();
        let d = arr.spacing;
        assert_relative_eq!(pos[0][0], -0.25, epsilon = 1e-15);
        assert_relative_eq!(pos[0][2], -0.25, epsilon = 1e-15);
        assert_relative_eq!(pos[arr.nx + 3][0], 3.0 * d - 0.25, epsilon = 1e-15);
        assert_relative_eq!(pos[arr.nx + 3][2], d - 0.25, epsilon = 1e-15);
        assert!(pos.iter().all(|p| p[1] == 0.0));

        let bowl = SurfaceShape::paraboloid(0.5, 0.5, 65).unwrap();
        let curved = DiscreteArray::new(&scn, Some(&bowl)).unwrap();
        for p in curved.positions() {
            assert!((p[1] - (p[0] * p[0] + p[2] * p[2])).abs() < 1e-4);
        }
    }

    #[test]
    fn zeta_comes_from_the_reference_and_ignores_height_moves() {
        let scn = scenario(1, 2);
        let bowl = SurfaceShape::paraboloid(0.5, 0.5, 65).unwrap();
        let arr = DiscreteArray::new(&scn, Some(&bowl))
            .unwrap()
            .with_morph_range(scn.wavelength())
            .unwrap();
        for (n, p) in arr.positions().iter().enumerate() {
            let (x, z) = (p[0], p[2]);
            let analytic = (1.0 + 4.0 * x * x + 4.0 * z * z).sqrt();
            assert!((arr.zeta[(n / arr.nx, n % arr.nx)] - analytic).abs() < 1e-3);
        }
        let model = DiscreteModel {
            scenario: &scn,
            array: &arr,
        };
        let base = model.channels(&arr.shape).unwrap();
        let mut rough = arr.shape.heights().clone();
        rough[(4, 4)] += 0.3 * scn.wavelength();
        let moved = model.channels(&arr.shape.with_heights(rough).unwrap()).unwrap();
        // neighbours keep their magnitude, only the moved element changes
        let n = 4 * arr.nx + 5;
        for c in 0..2 {
            assert_eq!(moved.h[(n, c)], base.h[(n, c)]);
        }
        assert!((moved.h[(4 * arr.nx + 4, 0)] - base.h[(4 * arr.nx + 4, 0)]).norm() > 1e-3 * base.h[(0, 0)].norm());
    }

    #[test]
    fn channels_scale_with_element_area_and_match_broadside_level() {
        let scn = Scenario {
            users: vec![User {
                position: [0.0, 20.0, 0.0],
                polarization: [0.0, 0.0, 1.0],
                noise_var: 5.6e-3,
                weight: 1.0,
            }],
            ..scenario(0, 1)
        };
        let arr = DiscreteArray::new(&scn, None).unwrap();
        let ch = discrete_channels(&arr, &scn).unwrap();
        let nominal = arr.element_area.sqrt() * scn.impedance / (2.0 * scn.wavelength() * 20.0);
        for h in ch.h.iter() {
            assert!((h.norm() - nominal).abs() < 0.01 * nominal);
        }
        let mut bigger = arr.clone();
        bigger.element_area *= 2.0;
        let ch2 = discrete_channels(&bigger, &scn).unwrap();
        for (a, b) in ch.h.iter().zip(ch2.h.iter()) {
            assert_relative_eq!(b.norm() / a.norm(), 2f64.sqrt(), max_relative = 1e-12);
        }
    }

    #[test]
    fn flat_flexible_array_equals_conventional() {
        let scn = scenario(4, 4);
        let conventional = DiscreteArray::new(&scn, None).unwrap();
        let flat = SurfaceShape::flat(0.5, 0.5, 33).unwrap();
        let flexible = DiscreteArray::new(&scn, Some(&flat)).unwrap();
        let a = discrete_channels(&conventional, &scn).unwrap();
        let b = discrete_channels(&flexible, &scn).unwrap();
        assert_eq!(a.h, b.h);
        let opts = SolveOptions::default();
        let ra = fp_discrete(&scn, &conventional, &opts).unwrap().report.arpu;
        let rb = fp_discrete(&scn, &flexible, &opts).unwrap().report.arpu;
        assert!((ra - rb).abs() <= 1e-12 * ra);
    }

    #[test]
    fn zero_forcing_nulls_interference() {
        let scn = scenario(9, 6);
        let budget = LinkBudget::from_scenario(&scn);
        let ch = discrete_channels(&DiscreteArray::new(&scn, None).unwrap(), &scn).unwrap();
        let v = zf_precoder(&ch, &budget).unwrap();
        let w = v.transpose() * &ch.h;
        for k in 0..6 {
            for i in 0..6 {
                if i != k {
                    let bound = 1e-10 * ch.h.column(i).norm() * v.column(k).norm();
                    assert!(w[(k, i)].norm() <= bound);
                }
            }
        }
        let power: f64 = v.iter().map(|x| x.norm_sqr()).sum();
        assert_relative_eq!(power, budget.power, max_relative = 1e-12);
    }

    #[test]
    fn single_user_zero_forcing_is_matched_filter() {
        let scn = scenario(2, 1);
        let budget = LinkBudget::from_scenario(&scn);
        let ch = discrete_channels(&DiscreteArray::new(&scn, None).unwrap(), &scn).unwrap();
        let gain: f64 = ch.h.column(0).iter().map(|x| x.norm_sqr()).sum();
        let bound = (1.0 + budget.power * gain / budget.noise[0]).log2();
        assert_relative_eq!(zf_rates(&ch, &budget).unwrap().rates[0], bound, max_relative = 1e-10);
        let arr = DiscreteArray::new(&scn, None).unwrap();
        let fp = fp_discrete(&scn, &arr, &SolveOptions::default()).unwrap();
        assert_relative_eq!(fp.report.rates[0], bound, max_relative = 1e-9);
    }

    #[test]
    fn orthogonal_channels_need_no_power_penalty() {
        let mut h = DMatrix::zeros(4, 2);
        h[(0, 0)] = Complex64::new(0.0, 2.0);
        h[(3, 1)] = Complex64::new(1.0, 1.0);
        let ch = ChannelSet {
            h,
            zeta: vec![1.0; 4],
            weights: vec![1.0; 4],
            points: vec![[0.0; 3]; 4],
        };
        let budget = LinkBudget {
            alpha: vec![0.5, 0.5],
            noise: vec![1.0, 1.0],
            power: 2.0,
        };
        let rep = zf_rates(&ch, &budget).unwrap();
        assert_relative_eq!(rep.rates[0], (1.0f64 + 4.0).log2(), max_relative = 1e-12);
        assert_relative_eq!(rep.rates[1], (1.0f64 + 2.0).log2(), max_relative = 1e-12);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let u = User {
            position: [1.0, 20.0, 1.0],
            polarization: [0.0, 0.0, 1.0],
            noise_var: 5.6e-3,
            weight: 0.5,
        };
        let scn = Scenario {
            users: vec![u.clone(), u],
            ..scenario(0, 2)
        };
        let budget = LinkBudget::from_scenario(&scn);
        let ch = discrete_channels(&DiscreteArray::new(&scn, None).unwrap(), &scn).unwrap();
        assert!(matches!(
            zf_precoder(&ch, &budget),
            Err(FcapaError::RankDeficient { .. })
        ));
        // the FP baseline falls back to the matched-filter start
        let arr = DiscreteArray::new(&scn, None).unwrap();
        assert!(fp_discrete(&scn, &arr, &SolveOptions::default()).is_ok());
    }

    #[test]
    fn fp_never_loses_to_zero_forcing() {
        for seed in 0..20 {
            let scn = scenario(300 + seed, 8);
            let budget = LinkBudget::from_scenario(&scn);
            let arr = DiscreteArray::new(&scn, None).unwrap();
            let zf = zf_rates(&discrete_channels(&arr, &scn).unwrap(), &budget).unwrap().wsr;
            let fp = fp_discrete(&scn, &arr, &SolveOptions::default()).unwrap();
            assert!(fp.report.wsr >= zf - 1e-9, "seed {seed}: {} < {zf}", fp.report.wsr);
            let mut prev = fp.initial.surrogate;
            for p in &fp.trace {
                assert!(p.surrogate >= prev - 1e-9 * prev.abs());
                prev = p.surrogate;
            }
            assert_relative_eq!(fp.power, budget.power, max_relative = 1e-9);
        }
    }

    #[test]
    fn numerical_height_gradient_matches_full_recomputation() {
        let scn = scenario(12, 3);
        let budget = LinkBudget::from_scenario(&scn);
        let bowl = SurfaceShape::paraboloid(0.5, 0.5, 33).unwrap();
        let arr = DiscreteArray::new(&scn, Some(&bowl))
            .unwrap()
            .with_morph_range(0.25)
            .unwrap();
        let model = DiscreteModel {
            scenario: &scn,
            array: &arr,
        };
        let ch = model.channels(&arr.shape).unwrap();
        let q = correlation_q(&ch);
        let aux = update_aux(&FredholmSolution::initial(&q), &budget);
        let consts = fp_constants(&aux, &budget).unwrap();
        let sol = solve_w(&q, &consts).unwrap();
        let grad = model.shape_gradient(&arr.shape, &ch, &consts, &sol).unwrap();
        let j = CurrentField::new(&consts, &sol.w).on(&ch);
        let full = |heights: DMatrix<f64>| {
            let s = arr.shape.with_heights(heights).unwrap();
            let c = model.channels(&s).unwrap();
            surrogate(&FredholmSolution::from_currents(&c, &j).unwrap(), &aux, &budget)
        };
        let cell = arr.spacing * arr.spacing;
        // five-point stencil: the full surrogate carries large constant
        // terms, so small steps drown in rounding
        let delta = 1e-4;
        for (r, c) in [(0, 0), (4, 4), (2, 7), (8, 1)] {
            let at = |t: f64| {
                let mut h = arr.shape.heights().clone();
                h[(r, c)] += t;
                full(h)
            };
            let reference =
                (8.0 * (at(delta) - at(-delta)) - (at(2.0 * delta) - at(-2.0 * delta))) / (12.0 * delta) / cell;
            assert!(
                (grad[(r, c)] - reference).abs() <= 1e-3 * grad.amax(),
                "({r},{c}): {} vs {reference}",
                grad[(r, c)]
            );
        }
    }

    #[test]
    fn flexible_array_improves_on_rigid_curved_array() {
        let scn = scenario(21, 4);
        let bowl = SurfaceShape::paraboloid(0.5, 0.5, 33).unwrap();
        let rigid = DiscreteArray::new(&scn, Some(&bowl)).unwrap();
        let flexible = rigid.clone().with_morph_range(2.0 * scn.wavelength()).unwrap();
        let opts = SolveOptions::default();
        let a = fp_discrete(&scn, &rigid, &opts).unwrap();
        let b = fp_discrete(&scn, &flexible, &opts).unwrap();
        assert!(b.shape.max_deviation() <= scn.wavelength() + 1e-12);
        let mut prev = b.initial.surrogate;
        for p in &b.trace {
            assert!(p.surrogate >= prev - 1e-9 * prev.abs());
            prev = p.surrogate;
        }
        assert!(
            b.report.arpu >= a.report.arpu - 1e-9,
            "{} < {}",
            b.report.arpu,
            a.report.arpu
        );
    }
}
