//! Fractional-programming current design for a fixed aperture shape.
//!
//! The optimal current of every user is a linear combination of conjugated
//! user channels, `J_k(s) = sum_i C[(k, i)] conj(H_i(s))`, so the whole
//! infinite-dimensional problem reduces to the `K x K` response matrix `W`
//! with `W[(k, i)] = int H_i J_k zeta`, i.e. the field of current `k` seen
//! by user `i`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::em_channel::{ChannelSet, CorrelationMatrix, Scenario};
use crate::error::{FcapaError, Result};

const MAX_CONDITION: f64 = 1e14;

/// Per-user weights, noise levels and the transmit power factor.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkBudget {
    pub alpha: Vec<f64>,
    pub noise: Vec<f64>,
    pub power: f64,
}

impl LinkBudget {
    pub fn from_scenario(scn: &Scenario) -> Self {
        LinkBudget {
            alpha: scn.users.iter().map(|u| u.weight).collect(),
            noise: scn.users.iter().map(|u| u.noise_var).collect(),
            power: scn.transmit_power,
        }
    }

    pub fn num_users(&self) -> usize {
        self.alpha.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxVars {
    pub mu: Vec<f64>,
    pub lambda: Vec<Complex64>,
}

/// Raw fractional-programming constants for one set of auxiliary variables.
#[derive(Debug, Clone, PartialEq)]
pub struct FpConstants {
    pub a: Vec<Complex64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub c_sum: f64,
}

impl FpConstants {
    pub fn a_bar(&self) -> Vec<Complex64> {
        self.a.iter().map(|a| a / self.c_sum).collect()
    }

    pub fn b_bar(&self) -> Vec<f64> {
        self.b.iter().map(|b| b / self.c_sum).collect()
    }

    /// Current coefficients `C = diag(a_bar) - W diag(b_bar)`.
    pub fn coefficients(&self, w: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let (a_bar, b_bar) = (self.a_bar(), self.b_bar());
        let k = a_bar.len();
        DMatrix::from_fn(k, k, |r, i| {
            let diag = if r == i { a_bar[r] } else { Complex64::new(0.0, 0.0) };
            diag - w[(r, i)] * b_bar[i]
        })
    }
}

/// Response matrix of an (unnormalized) current together with its power.
#[derive(Debug, Clone, PartialEq)]
pub struct FredholmSolution {
    pub w: DMatrix<Complex64>,
    pub rho: f64,
}

impl FredholmSolution {
    /// Matched-filter starting point: `J_k = conj(H_k)`.
    pub fn initial(q: &CorrelationMatrix) -> Self {
        FredholmSolution {
            w: q.q.clone(),
            rho: q.q.trace().re,
        }
    }

    /// Measures `W` and `rho` of arbitrary currents sampled on `ch`.
    pub fn from_currents(ch: &ChannelSet, j: &DMatrix<Complex64>) -> Result<Self> {
        check_currents(ch, j)?;
        let measure = ch.measure();
        let k = ch.num_users();
        let mut w = DMatrix::zeros(k, k);
        let mut rho = 0.0;
        for n in 0..ch.num_points() {
            for r in 0..k {
                let jr = j[(n, r)] * measure[n];
                rho += measure[n] * j[(n, r)].norm_sqr();
                for i in 0..k {
                    w[(r, i)] += jr * ch.h[(n, i)];
                }
            }
        }
        Ok(FredholmSolution { w, rho })
    }
}

fn check_currents(ch: &ChannelSet, j: &DMatrix<Complex64>) -> Result<()> {
    if j.shape() != ch.h.shape() {
        return Err(FcapaError::ShapeMismatch {
            expected: ch.h.len(),
            got: j.len(),
        });
    }
    Ok(())
}

/// Closed-form current field `J_k(s) = scale * sum_i C[(k, i)] conj(H_i(s))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentField {
    pub coeffs: DMatrix<Complex64>,
    pub scale: f64,
}

impl CurrentField {
    pub fn new(consts: &FpConstants, w: &DMatrix<Complex64>) -> Self {
        CurrentField {
            coeffs: consts.coefficients(w),
            scale: 1.0,
        }
    }

    /// Currents of every user at a point whose channels are `h`.
    pub fn at(&self, h: &[Complex64]) -> Vec<Complex64> {
        let k = self.coeffs.nrows();
        (0..k)
            .map(|r| {
                let s: Complex64 = (0..k).map(|i| self.coeffs[(r, i)] * h[i].conj()).sum();
                s * self.scale
            })
            .collect()
    }

    /// `N x K` matrix of currents on every row of `ch`.
    pub fn on(&self, ch: &ChannelSet) -> DMatrix<Complex64> {
        let mut j = ch.h.map(|h| h.conj()) * self.coeffs.transpose();
        j.scale_mut(self.scale);
        j
    }

    /// Rescales so that the transmit power equals `power`.
    pub fn normalized(&self, rho: f64, power: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(FcapaError::DegenerateState(format!(
                "cannot normalize a current with power {rho}"
            )));
        }
        Ok(CurrentField {
            coeffs: self.coeffs.clone(),
            scale: self.scale * (power / rho).sqrt(),
        })
    }
}

pub fn current_power(ch: &ChannelSet, j: &DMatrix<Complex64>) -> Result<f64> {
    check_currents(ch, j)?;
    let measure = ch.measure();
    Ok((0..ch.num_points())
        .map(|n| measure[n] * j.row(n).iter().map(|x| x.norm_sqr()).sum::<f64>())
        .sum())
}

/// `rho = tr((A - W B) Q (A - W B)^H)`.
pub fn rho_of(q: &CorrelationMatrix, consts: &FpConstants, w: &DMatrix<Complex64>) -> f64 {
    let c = consts.coefficients(w);
    (&c * &q.q * c.adjoint()).trace().re.max(0.0)
}

fn interference_plus_noise(sol: &FredholmSolution, budget: &LinkBudget, k: usize) -> f64 {
    let others: f64 = (0..budget.num_users())
        .filter(|&i| i != k)
        .map(|i| sol.w[(i, k)].norm_sqr())
        .sum();
    others + budget.noise[k] / budget.power * sol.rho
}

pub fn sinr(sol: &FredholmSolution, budget: &LinkBudget) -> Vec<f64> {
    (0..budget.num_users())
        .map(|k| {
            let signal = sol.w[(k, k)].norm_sqr();
            if signal == 0.0 {
                0.0
            } else {
                signal / interference_plus_noise(sol, budget, k)
            }
        })
        .collect()
}

pub fn update_aux(sol: &FredholmSolution, budget: &LinkBudget) -> AuxVars {
    let k = budget.num_users();
    let mut mu = Vec::with_capacity(k);
    let mut lambda = Vec::with_capacity(k);
    for (user, gamma) in sinr(sol, budget).into_iter().enumerate() {
        let m = (1.0 + gamma).sqrt();
        let total = interference_plus_noise(sol, budget, user) + sol.w[(user, user)].norm_sqr();
        mu.push(m);
        lambda.push(if total > 0.0 {
            m * sol.w[(user, user)] / total
        } else {
            Complex64::new(0.0, 0.0)
        });
    }
    AuxVars { mu, lambda }
}

pub fn fp_constants(aux: &AuxVars, budget: &LinkBudget) -> Result<FpConstants> {
    let k = budget.num_users();
    let mut a = Vec::with_capacity(k);
    let mut b = Vec::with_capacity(k);
    let mut c = Vec::with_capacity(k);
    for i in 0..k {
        let l2 = aux.lambda[i].norm_sqr();
        a.push(budget.alpha[i] * aux.mu[i] * aux.lambda[i]);
        b.push(budget.alpha[i] * l2);
        c.push(budget.alpha[i] * l2 * budget.noise[i] / budget.power);
    }
    let c_sum: f64 = c.iter().sum();
    if !(c_sum > 0.0 && c_sum.is_finite()) {
        return Err(FcapaError::DegenerateState(
            "all users have zero signal; the power constraint carries no weight".into(),
        ));
    }
    Ok(FpConstants { a, b, c, c_sum })
}

/// Solves `W (I + diag(b_bar) Q) = diag(a_bar) Q` and returns `W` with the
/// power `rho` of the implied current.
pub fn solve_w(q: &CorrelationMatrix, consts: &FpConstants) -> Result<FredholmSolution> {
    let k = q.q.nrows();
    if consts.a.len() != k {
        return Err(FcapaError::ShapeMismatch {
            expected: k,
            got: consts.a.len(),
        });
    }
    let (a_bar, b_bar) = (consts.a_bar(), consts.b_bar());
    // transpose so that the unknown sits on the right: (I + Q^T B) W^T = Q^T A
    let qt = q.q.transpose();
    let mut m = qt.clone();
    for (mut col, &b) in m.column_iter_mut().zip(&b_bar) {
        col.scale_mut(b);
    }
    for d in 0..k {
        m[(d, d)] += Complex64::new(1.0, 0.0);
    }
    let mut rhs = qt;
    for (mut col, &a) in rhs.column_iter_mut().zip(&a_bar) {
        col.iter_mut().for_each(|x| *x *= a);
    }
    let norm1 = one_norm(&m);
    let inv = m.lu().try_inverse().ok_or(FcapaError::Conditioning(f64::INFINITY))?;
    let cond = norm1 * one_norm(&inv);
    if !(cond <= MAX_CONDITION) {
        return Err(FcapaError::Conditioning(cond));
    }
    let w = (inv * rhs).transpose();
    let rho = rho_of(q, consts, &w);
    Ok(FredholmSolution { w, rho })
}

fn one_norm(m: &DMatrix<Complex64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Lower bound maximized by the block updates. It equals `ln 2` times the
/// weighted sum rate when the auxiliary variables are optimal for `sol`.
pub fn surrogate(sol: &FredholmSolution, aux: &AuxVars, budget: &LinkBudget) -> f64 {
    (0..budget.num_users())
        .map(|k| {
            let mu = aux.mu[k];
            let lam = aux.lambda[k];
            let gbar = mu * mu - 1.0;
            let total = interference_plus_noise(sol, budget, k) + sol.w[(k, k)].norm_sqr();
            budget.alpha[k]
                * ((1.0 + gbar).ln() - gbar + 2.0 * mu * (lam.conj() * sol.w[(k, k)]).re - lam.norm_sqr() * total)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub rates: Vec<f64>,
    pub wsr: f64,
    pub arpu: f64,
}

pub fn rates(sol: &FredholmSolution, budget: &LinkBudget) -> RateReport {
    let rates: Vec<f64> = sinr(sol, budget).iter().map(|g| (1.0 + g).log2()).collect();
    let wsr = rates.iter().zip(&budget.alpha).map(|(r, a)| r * a).sum();
    let arpu = rates.iter().sum::<f64>() / rates.len().max(1) as f64;
    RateReport { rates, wsr, arpu }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for FpOptions {
    fn default() -> Self {
        FpOptions {
            max_iters: 50,
            tol: 1e-6,
        }
    }
}

/// Result of the alternating updates on a fixed channel.
#[derive(Debug, Clone)]
pub struct CurrentSolution {
    pub solution: FredholmSolution,
    pub consts: FpConstants,
    pub field: CurrentField,
    pub report: RateReport,
    /// Weighted sum rate after every iteration, starting from `start`.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Alternates auxiliary-variable and current updates until the weighted
/// sum rate stalls. The returned field is scaled to the transmit power.
pub fn optimize_currents(
    q: &CorrelationMatrix,
    budget: &LinkBudget,
    start: FredholmSolution,
    opts: FpOptions,
) -> Result<CurrentSolution> {
    let mut sol = start;
    let mut aux = update_aux(&sol, budget);
    let mut trace = vec![rates(&sol, budget).wsr];
    let mut iterations = 0;
    let mut consts = fp_constants(&aux, budget)?;
    for it in 1..=opts.max_iters {
        consts = fp_constants(&aux, budget)?;
        sol = solve_w(q, &consts)?;
        aux = update_aux(&sol, budget);
        let value = rates(&sol, budget).wsr;
        if !value.is_finite() {
            return Err(FcapaError::NonFinite { iteration: it });
        }
        let prev = *trace.last().unwrap_or(&value);
        trace.push(value);
        iterations = it;
        if (value - prev).abs() <= opts.tol * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let field = CurrentField::new(&consts, &sol.w).normalized(sol.rho, budget.power)?;
    let report = rates(&sol, budget);
    Ok(CurrentSolution {
        solution: sol,
        consts,
        field,
        report,
        trace,
        iterations,
    })
}
