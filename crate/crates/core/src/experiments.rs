//! Monte-Carlo sweeps over user drops, result records and their files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{discrete_baseline, rigid_capa, DiscreteArray};
use crate::config::{Config, Scheme, SweepParameter, SystemConfig, UserRegion};
use crate::em_channel::{Scenario, User, SPEED_OF_LIGHT};
use crate::error::{FcapaError, Result};
use crate::geometry::SurfaceShape;
use crate::shape_optimizer::{solve, SolveOptions, TracePoint};

/// Draws `k` users uniformly in `region`, polarized along `z`, with equal
/// weights.
///
/// User `i` of realization `r` reads its own ChaCha stream, so a drop does
/// not depend on `k` beyond the users it contains, nor on the order in
/// which realizations are evaluated.
pub fn sample_users(k: usize, region: &UserRegion, noise_var: f64, seed: u64, realization: u64) -> Vec<User> {
    (0..k)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((realization << 32) | i as u64);
            let x = uniform(&mut rng, -region.half_x, region.half_x);
            let y = uniform(&mut rng, region.y_min, region.y_max);
            let z = uniform(&mut rng, -region.half_z, region.half_z);
            User {
                position: [x, y, z],
                polarization: [0.0, 0.0, 1.0],
                noise_var,
                weight: 1.0 / k as f64,
            }
        })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

pub fn build_scenario(sys: &SystemConfig, seed: u64, realization: u64) -> Scenario {
    let side = sys.aperture_area.sqrt();
    Scenario {
        users: sample_users(sys.users, &sys.region, sys.noise_var, seed, realization),
        carrier_hz: sys.frequency_hz,
        impedance: sys.impedance,
        transmit_power: sys.transmit_power,
        lx: side,
        lz: side,
    }
}

/// Reference shape over the scenario's aperture, without a morph band.
pub fn reference_shape(sys: &SystemConfig, scn: &Scenario) -> Result<SurfaceShape> {
    match &sys.shape_file {
        Some(path) => {
            let shape = SurfaceShape::from_csv(path)?;
            let (hx, hz) = shape.half_lengths();
            if (2.0 * hx - scn.lx).abs() > 1e-9 * scn.lx || (2.0 * hz - scn.lz).abs() > 1e-9 * scn.lz {
                return Err(FcapaError::InvalidConfig(format!(
                    "shape file spans {} x {} m but the aperture is {} x {} m",
                    2.0 * hx,
                    2.0 * hz,
                    scn.lx,
                    scn.lz
                )));
            }
            Ok(shape)
        }
        None => SurfaceShape::from_preset(sys.reference_shape, scn.lx, scn.lz, sys.shape_grid),
    }
}

/// Result of one scheme on one scenario.
#[derive(Debug, Clone)]
pub struct SchemeOutcome {
    pub rates: Vec<f64>,
    pub arpu: f64,
    pub iterations: usize,
    pub power: f64,
    pub initial: Option<TracePoint>,
    pub trace: Vec<TracePoint>,
    pub shape: SurfaceShape,
}

pub fn run_scheme(scheme: Scheme, sys: &SystemConfig, scn: &Scenario, opts: &SolveOptions) -> Result<SchemeOutcome> {
    let reference = reference_shape(sys, scn)?;
    let xi = sys.morph_wavelengths * SPEED_OF_LIGHT / sys.frequency_hz;
    match scheme {
        Scheme::Fcapa | Scheme::Capa => {
            let out = if scheme == Scheme::Fcapa {
                solve(scn, reference.with_morph_range(xi)?, sys.quadrature_order, opts)?
            } else {
                rigid_capa(scn, &reference, sys.quadrature_order, opts)?
            };
            Ok(SchemeOutcome {
                arpu: out.report.arpu,
                rates: out.report.rates.clone(),
                iterations: out.iterations,
                power: out.power,
                initial: Some(out.initial),
                trace: out.trace,
                shape: out.shape,
            })
        }
        Scheme::MimoFlexible | Scheme::MimoConventional => {
            let arr = if scheme == Scheme::MimoFlexible {
                DiscreteArray::new(scn, Some(&reference))?.with_morph_range(xi)?
            } else {
                DiscreteArray::new(scn, None)?
            };
            let out = discrete_baseline(scn, &arr, sys.precoder, opts)?;
            Ok(SchemeOutcome {
                arpu: out.report.arpu,
                rates: out.report.rates,
                iterations: out.iterations,
                power: out.power,
                initial: None,
                trace: Vec::new(),
                shape: out.shape,
            })
        }
    }
}

/// One row of a sweep result file. A failed solve keeps its row with the
/// error message and NaN metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub scheme: Scheme,
    pub param_name: String,
    pub param_value: f64,
    pub realization: u64,
    pub seed: u64,
    pub arpu: f64,
    pub iterations: usize,
    pub power: f64,
    pub wall_ms: f64,
    pub rates: Vec<f64>,
    pub error: Option<String>,
}

impl ResultRecord {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub scheme: Scheme,
    pub param_value: f64,
    pub realization: u64,
    pub iteration: usize,
    pub surrogate: f64,
    pub arpu: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub records: Vec<ResultRecord>,
    pub traces: Vec<TraceRow>,
}

impl SweepOutput {
    /// Mean ARPU per swept value for `scheme`, over successful records.
    pub fn mean_arpu(&self, scheme: Scheme) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64, usize)> = Vec::new();
        for r in self.records.iter().filter(|r| r.scheme == scheme && r.is_ok()) {
            match out.iter_mut().find(|(v, _, _)| *v == r.param_value) {
                Some(e) => {
                    e.1 += r.arpu;
                    e.2 += 1;
                }
                None => out.push((r.param_value, r.arpu, 1)),
            }
        }
        out.into_iter().map(|(v, s, n)| (v, s / n as f64)).collect()
    }
}

/// Runs every configured scheme on the same user drops for every swept
/// value and realization. Records are ordered by scheme (config order),
/// then value, then realization, independent of thread scheduling.
pub fn run_sweep(cfg: &Config) -> Result<SweepOutput> {
    cfg.validate()?;
    let param = cfg.sweep.parameter;
    let values = cfg.sweep.values();
    let mut systems = Vec::with_capacity(values.len());
    for &v in &values {
        systems.push(param.apply(&cfg.system, v)?);
    }
    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|vi| (0..cfg.realizations as u64).map(move |r| (vi, r)))
        .collect();
    let results: Vec<Vec<(ResultRecord, Vec<TraceRow>)>> = jobs
        .par_iter()
        .map(|&(vi, r)| {
            let sys = &systems[vi];
            let scn = build_scenario(sys, cfg.seed, r);
            cfg.schemes
                .iter()
                .map(|&scheme| evaluate(scheme, sys, &scn, cfg, param, values[vi], r))
                .collect()
        })
        .collect();

    let mut out = SweepOutput::default();
    for (si, _) in cfg.schemes.iter().enumerate() {
        for job in &results {
            let (rec, trace) = &job[si];
            out.records.push(rec.clone());
            if cfg.write_traces {
                out.traces.extend(trace.iter().cloned());
            }
        }
    }
    Ok(out)
}

fn evaluate(
    scheme: Scheme,
    sys: &SystemConfig,
    scn: &Scenario,
    cfg: &Config,
    param: SweepParameter,
    value: f64,
    realization: u64,
) -> (ResultRecord, Vec<TraceRow>) {
    let clock = Instant::now();
    let res = run_scheme(scheme, sys, scn, &cfg.solver);
    let wall_ms = if cfg.record_timing {
        clock.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    let mut rec = ResultRecord {
        scheme,
        param_name: param.name().to_string(),
        param_value: value,
        realization,
        seed: cfg.seed,
        arpu: f64::NAN,
        iterations: 0,
        power: f64::NAN,
        wall_ms,
        rates: Vec::new(),
        error: None,
    };
    match res {
        Ok(o) => {
            rec.arpu = o.arpu;
            rec.iterations = o.iterations;
            rec.power = o.power;
            rec.rates = o.rates;
            let rows = o
                .initial
                .iter()
                .chain(o.trace.iter())
                .map(|t| TraceRow {
                    scheme,
                    param_value: value,
                    realization,
                    iteration: t.iteration,
                    surrogate: t.surrogate,
                    arpu: t.arpu,
                })
                .collect();
            (rec, rows)
        }
        Err(e) => {
            log::warn!("{scheme} at {}={value}, realization {realization}: {e}", param.name());
            rec.error = Some(e.to_string());
            (rec, Vec::new())
        }
    }
}

const RESULT_HEADER: [&str; 11] = [
    "scheme",
    "param_name",
    "param_value",
    "realization",
    "seed",
    "arpu",
    "iterations",
    "power",
    "wall_ms",
    "rates",
    "error",
];

pub fn write_results(path: impl AsRef<Path>, records: &[ResultRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| FcapaError::io(path, e))?;
    let io = |e: csv::Error| FcapaError::io(path, e);
    w.write_record(RESULT_HEADER).map_err(io)?;
    for r in records {
        let rates = r.rates.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
        w.write_record([
            r.scheme.name().to_string(),
            r.param_name.clone(),
            r.param_value.to_string(),
            r.realization.to_string(),
            r.seed.to_string(),
            r.arpu.to_string(),
            r.iterations.to_string(),
            r.power.to_string(),
            r.wall_ms.to_string(),
            rates,
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| FcapaError::io(path, e))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    let path = path.as_ref();
    let mut rd = csv::Reader::from_path(path).map_err(|e| FcapaError::io(path, e))?;
    let header = rd.headers().map_err(|e| FcapaError::parse(path, e))?.clone();
    if header.iter().ne(RESULT_HEADER) {
        return Err(FcapaError::parse(path, "unexpected result header"));
    }
    let mut out = Vec::new();
    for (line, row) in rd.records().enumerate() {
        let row = row.map_err(|e| FcapaError::parse(path, e))?;
        let bad = |what: &str| FcapaError::parse(path, format!("row {}: bad {what}", line + 1));
        let num = |i: usize, what: &str| row[i].parse::<f64>().map_err(|_| bad(what));
        let int = |i: usize, what: &str| row[i].parse::<u64>().map_err(|_| bad(what));
        let rates = if row[9].is_empty() {
            Vec::new()
        } else {
            row[9]
                .split(';')
                .map(|s| s.parse::<f64>().map_err(|_| bad("rates")))
                .collect::<Result<_>>()?
        };
        out.push(ResultRecord {
            scheme: row[0].parse()?,
            param_name: row[1].to_string(),
            param_value: num(2, "param_value")?,
            realization: int(3, "realization")?,
            seed: int(4, "seed")?,
            arpu: num(5, "arpu")?,
            iterations: int(6, "iterations")? as usize,
            power: num(7, "power")?,
            wall_ms: num(8, "wall_ms")?,
            rates,
            error: (!row[10].is_empty()).then(|| row[10].to_string()),
        });
    }
    Ok(out)
}

pub fn write_traces(path: impl AsRef<Path>, traces: &[TraceRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| FcapaError::io(path, e))?;
    for t in traces {
        w.serialize(t).map_err(|e| FcapaError::io(path, e))?;
    }
    w.flush().map_err(|e| FcapaError::io(path, e))
}

/// Files written for a sweep named `name` in `dir`.
#[derive(Debug, Clone)]
pub struct SweepFiles {
    pub results: PathBuf,
    pub config: PathBuf,
    pub traces: Option<PathBuf>,
}

/// Writes `<name>.csv`, the effective config as `<name>.json` and, when
/// traces were collected, `<name>_traces.csv`.
pub fn emit_sweep(dir: impl AsRef<Path>, name: &str, cfg: &Config, out: &SweepOutput) -> Result<SweepFiles> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| FcapaError::io(dir, e))?;
    let results = dir.join(format!("{name}.csv"));
    write_results(&results, &out.records)?;
    let config = dir.join(format!("{name}.json"));
    fs::write(&config, cfg.to_json()).map_err(|e| FcapaError::io(&config, e))?;
    let traces = if out.traces.is_empty() {
        None
    } else {
        let p = dir.join(format!("{name}_traces.csv"));
        write_traces(&p, &out.traces)?;
        Some(p)
    };
    Ok(SweepFiles {
        results,
        config,
        traces,
    })
}

/// Per-realization convergence of the joint solver on the base system.
#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub traces: Vec<TraceRow>,
    /// Iteration at which the relative surrogate change first fell below
    /// the tolerance, per realization (`None` if it never did).
    pub settled_at: Vec<Option<usize>>,
}

impl ConvergenceStudy {
    pub fn fraction_within(&self, iterations: usize) -> f64 {
        let n = self
            .settled_at
            .iter()
            .filter(|s| s.is_some_and(|i| i <= iterations))
            .count();
        n as f64 / self.settled_at.len().max(1) as f64
    }
}

/// Runs FCAPA with early stopping disabled for `cfg.realizations` drops.
pub fn convergence_study(cfg: &Config, tol: f64) -> Result<ConvergenceStudy> {
    cfg.validate()?;
    let opts = SolveOptions { tol: 0.0, ..cfg.solver };
    let per: Vec<Result<Vec<TraceRow>>> = (0..cfg.realizations as u64)
        .into_par_iter()
        .map(|r| {
            let scn = build_scenario(&cfg.system, cfg.seed, r);
            let o = run_scheme(Scheme::Fcapa, &cfg.system, &scn, &opts)?;
            Ok(o.initial
                .iter()
                .chain(o.trace.iter())
                .map(|t| TraceRow {
                    scheme: Scheme::Fcapa,
                    param_value: cfg.system.morph_wavelengths,
                    realization: r,
                    iteration: t.iteration,
                    surrogate: t.surrogate,
                    arpu: t.arpu,
                })
                .collect())
        })
        .collect();
    let mut traces = Vec::new();
    let mut settled_at = Vec::new();
    for rows in per {
        let rows = rows?;
        settled_at.push(rows.windows(2).find_map(|w| {
            ((w[1].surrogate - w[0].surrogate).abs() <= tol * w[0].surrogate.abs()).then_some(w[1].iteration)
        }));
        traces.extend(rows);
    }
    Ok(ConvergenceStudy { traces, settled_at })
}
