use std::fs;

use fcapa::baselines::{discrete_baseline, discrete_channels, zf_rates, DiscreteArray, Precoder};
use fcapa::config::{Config, Scheme, SweepParameter};
use fcapa::current_optimizer::LinkBudget;
use fcapa::em_channel::SPEED_OF_LIGHT;
use fcapa::experiments::{build_scenario, emit_sweep, read_results, run_scheme, run_sweep};

fn small(realizations: usize) -> Config {
    let mut cfg = Config {
        realizations,
        seed: 17,
        record_timing: false,
        ..Config::default()
    };
    cfg.system.users = 3;
    cfg.system.quadrature_order = 8;
    cfg.system.shape_grid = 24;
    cfg.solver.max_iters = 5;
    cfg
}

#[test]
fn sweep_output_is_byte_identical_across_runs_and_thread_counts() {
    let mut cfg = small(3);
    cfg.sweep.parameter = SweepParameter::Power;
    cfg.sweep.values = Some(vec![0.05, 0.1]);
    let dir = tempfile::tempdir().unwrap();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let a = single.install(|| run_sweep(&cfg)).unwrap();
    let b = single.install(|| run_sweep(&cfg)).unwrap();
    let c = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(|| run_sweep(&cfg))
        .unwrap();
    let files: Vec<_> = [("a", &a), ("b", &b), ("c", &c)]
        .into_iter()
        .map(|(n, o)| fs::read(emit_sweep(dir.path(), n, &cfg, o).unwrap().results).unwrap())
        .collect();
    assert_eq!(files[0], files[1]);
    assert_eq!(files[0], files[2]);
}

#[test]
fn config_file_drives_a_sweep_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(
        &path,
        r#"
        seed = 5
        realizations = 2
        schemes = ["capa", "mimo-conventional"]
        record_timing = false
        [system]
        users = 2
        quadrature_order = 6
        shape_grid = 16
        precoder = "zf"
        [solver]
        max_iters = 4
        [sweep]
        parameter = "aperture"
        values = [0.1, 0.25]
        "#,
    )
    .unwrap();
    let cfg = Config::load(&path).unwrap();
    let out = run_sweep(&cfg).unwrap();
    let files = emit_sweep(dir.path(), "aperture", &cfg, &out).unwrap();
    let back = read_results(&files.results).unwrap();
    assert_eq!(back, out.records);
    assert_eq!(back.len(), 2 * 2 * 2);
    assert!(back
        .iter()
        .all(|r| r.param_name == "aperture" && r.seed == 5 && r.is_ok()));
    let again = Config::load(&files.config).unwrap();
    assert_eq!(again, cfg);
    // the rigid aperture radiates exactly the budget
    for r in back.iter().filter(|r| r.scheme == Scheme::Capa) {
        assert!((r.power - 0.1).abs() < 1e-6 * 0.1);
    }
}

#[test]
fn default_trace_is_short_and_non_decreasing() {
    let cfg = Config::default();
    let scn = build_scenario(&cfg.system, 3, 0);
    let out = run_scheme(Scheme::Fcapa, &cfg.system, &scn, &cfg.solver).unwrap();
    assert!(out.trace.len() <= 20);
    let mut prev = out.initial.unwrap().surrogate;
    for t in &out.trace {
        assert!(t.surrogate >= prev - 1e-12 * prev.abs(), "iteration {}", t.iteration);
        prev = t.surrogate;
    }
    let xi = cfg.system.morph_wavelengths * SPEED_OF_LIGHT / cfg.system.frequency_hz;
    assert!(out.shape.max_deviation() <= xi / 2.0 + 1e-12);
}

#[test]
fn zero_morph_range_sweep_point_matches_rigid_aperture() {
    let mut cfg = small(3);
    cfg.schemes = vec![Scheme::Fcapa, Scheme::Capa];
    cfg.sweep.parameter = SweepParameter::Morph;
    cfg.sweep.values = Some(vec![0.0, 2.0]);
    let out = run_sweep(&cfg).unwrap();
    let at_zero = |s| out.mean_arpu(s).into_iter().find(|(v, _)| *v == 0.0).unwrap().1;
    assert_eq!(at_zero(Scheme::Fcapa), at_zero(Scheme::Capa));
}

#[test]
fn optimized_shape_file_can_seed_a_new_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(1);
    let scn = build_scenario(&cfg.system, cfg.seed, 0);
    let first = run_scheme(Scheme::Fcapa, &cfg.system, &scn, &cfg.solver).unwrap();
    let path = dir.path().join("shape.csv");
    first.shape.write_csv(&path).unwrap();

    cfg.system.shape_file = Some(path);
    let second = run_scheme(Scheme::Capa, &cfg.system, &scn, &cfg.solver).unwrap();
    assert!(second.arpu.is_finite());
    assert_eq!(second.shape.heights(), first.shape.heights());

    // a file for another aperture size is rejected
    cfg.system.aperture_area = 0.5;
    let other = build_scenario(&cfg.system, cfg.seed, 0);
    assert!(run_scheme(Scheme::Capa, &cfg.system, &other, &cfg.solver).is_err());
}

#[test]
fn single_user_discrete_precoders_agree() {
    let mut cfg = small(1);
    cfg.system.users = 1;
    let scn = build_scenario(&cfg.system, 9, 0);
    let budget = LinkBudget::from_scenario(&scn);
    let arr = DiscreteArray::new(&scn, None).unwrap();
    let ch = discrete_channels(&arr, &scn).unwrap();
    let zf = zf_rates(&ch, &budget).unwrap().arpu;
    let gain: f64 = ch.h.iter().map(|h| h.norm_sqr()).sum();
    let closed = (1.0 + budget.power * gain / budget.noise[0]).log2();
    assert!((zf - closed).abs() < 1e-9 * closed);
    let fp = discrete_baseline(&scn, &arr, Precoder::Fp, &cfg.solver)
        .unwrap()
        .report
        .arpu;
    assert!((fp - zf).abs() < 1e-9 * zf);
}
