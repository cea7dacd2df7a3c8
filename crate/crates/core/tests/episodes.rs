use cable_follow::harness::{
    compare_controllers, fit_model, metrics_from_trace, read_trace, run_episode, write_results_csv, write_trace, Config,
    ControllerKind, EpisodeConfig, TraceRow,
};

fn short_config() -> Config {
    let mut cfg = Config::default();
    cfg.corpus.length_mm = 400.0;
    cfg
}

fn episode(cfg: &Config, controller: ControllerKind) -> Vec<TraceRow> {
    let ec = EpisodeConfig::from_config(cfg, controller, &cfg.corpus.default_cable, 3, None).unwrap();
    run_episode(&ec, 3).unwrap().trace
}

fn ticks(rows: &[TraceRow]) -> Vec<&TraceRow> {
    rows.iter().filter(|r| r.event.is_empty()).collect()
}

/// Count of rows where `f` differs from the previous tick.
fn changes(rows: &[&TraceRow], f: impl Fn(&TraceRow) -> f64) -> usize {
    rows.windows(2).filter(|w| f(w[0]) != f(w[1])).count()
}

#[test]
fn base_ticks_are_evenly_spaced() {
    let cfg = short_config();
    let rows = episode(&cfg, ControllerKind::PControl);
    let ticks = ticks(&rows);
    assert!(ticks.len() > 100);
    let dt = 1.0 / cfg.episode.base_rate_hz;
    for w in ticks.windows(2) {
        assert!((w[1].t - w[0].t - dt).abs() < 1e-9, "{} -> {}", w[0].t, w[1].t);
    }
}

#[test]
fn sub_rate_tasks_respect_their_rates() {
    let cfg = short_config();
    let rows = episode(&cfg, ControllerKind::PControl);
    let ticks = ticks(&rows);
    let seconds = ticks.last().unwrap().t - ticks[0].t;
    let per_s = |n: usize| n as f64 / seconds;
    assert!(per_s(changes(&ticks, |r| r.v_y)) <= cfg.episode.pose_rate_hz + 1.0);
    assert!(per_s(changes(&ticks, |r| r.d_t)) <= cfg.episode.grip_rate_hz + 1.0);
    assert!(per_s(changes(&ticks, |r| r.opening)) <= cfg.episode.grip_rate_hz + 1.0);
}

#[test]
fn estimates_arrive_after_the_latency() {
    let cfg = short_config();
    let rows = episode(&cfg, ControllerKind::PControl);
    let first = rows.iter().find(|r| r.y_est != 0.0).expect("estimate never changed");
    assert!(first.t + 1e-9 >= cfg.episode.perception_latency_s, "first estimate at {}", first.t);
}

#[test]
fn open_loop_keeps_a_constant_grip() {
    let cfg = short_config();
    let rows = episode(&cfg, ControllerKind::OpenLoop);
    assert!(rows.iter().all(|r| r.opening == rows[0].opening));
    assert!(rows.iter().all(|r| r.v_y == 0.0 || r.event == "start"));
}

#[test]
fn metrics_are_recomputable_from_the_written_trace() {
    let cfg = short_config();
    let ec = EpisodeConfig::from_config(&cfg, ControllerKind::OpenLoopRegrasp, &cfg.corpus.default_cable, 1, None).unwrap();
    let ep = run_episode(&ec, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    write_trace(&ep.trace, &path).unwrap();
    let back = read_trace(&path).unwrap();
    assert_eq!(back, ep.trace);
    let m = metrics_from_trace(&back, cfg.corpus.length_mm, &cfg.episode).unwrap();
    assert_eq!(m, ep.metrics);
    let segments: f64 = m.segment_followed_mm.iter().sum();
    assert!((segments - m.followed_mm).abs() < 1e-9);
    assert_eq!(m.segment_followed_mm.len(), m.n_regrasps + 1);
}

#[test]
fn grid_outputs_are_byte_identical_across_pool_sizes() {
    let cfg = short_config();
    let fitted = fit_model(&cfg).unwrap();
    let run = |threads: usize, dir: &std::path::Path| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let (rows, paths) = pool.install(|| compare_controllers(&cfg, &[0], Some(&fitted.schedule), Some(dir))).unwrap();
        write_results_csv(&rows, &dir.join("results.csv")).unwrap();
        let mut files: Vec<_> = paths.iter().map(|p| (p.file_name().unwrap().to_owned(), std::fs::read(p).unwrap())).collect();
        files.push(("results.csv".into(), std::fs::read(dir.join("results.csv")).unwrap()));
        files
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run(1, a.path()), run(2, b.path()));
}
