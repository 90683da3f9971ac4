use abpc::config::{list_presets, preset, Overrides};
use abpc::linalg::Mat;

struct Row {
    name: &'static str,
    p: usize,
    m: usize,
    lag: usize,
    horizon: usize,
    forgetting: f64,
    ridge: f64,
    input_weight: f64,
    steps: usize,
    warmup: usize,
    noise: f64,
    kernel: &'static str,
}

const TABLE: &[Row] = &[
    Row { name: "e1", p: 1, m: 1, lag: 2, horizon: 16, forgetting: 1.0, ridge: 1e-9, input_weight: 1e-3, steps: 250, warmup: 50, noise: 0.0, kernel: "unitary" },
    Row { name: "e2", p: 1, m: 1, lag: 2, horizon: 20, forgetting: 1.0, ridge: 1e-9, input_weight: 3.5e3, steps: 250, warmup: 5, noise: 0.0, kernel: "unitary" },
    Row { name: "e2b_lag", p: 1, m: 1, lag: 5, horizon: 20, forgetting: 1.0, ridge: 1e-9, input_weight: 3.5e3, steps: 500, warmup: 5, noise: 0.0, kernel: "unitary" },
    Row { name: "e2b", p: 1, m: 1, lag: 5, horizon: 20, forgetting: 1.0, ridge: 1e-9, input_weight: 3.5e3, steps: 5000, warmup: 5, noise: 0.0, kernel: "unitary" },
    Row { name: "e2b_noise", p: 1, m: 1, lag: 5, horizon: 20, forgetting: 1.0, ridge: 1e-9, input_weight: 3.5e3, steps: 5000, warmup: 5, noise: 1e-2, kernel: "unitary" },
    Row { name: "e3", p: 3, m: 2, lag: 2, horizon: 10, forgetting: 1.0, ridge: 1e-9, input_weight: 1e2, steps: 300, warmup: 50, noise: 0.0, kernel: "unitary" },
    Row { name: "e4", p: 1, m: 1, lag: 2, horizon: 16, forgetting: 1.0, ridge: 1e-9, input_weight: 1.0, steps: 250, warmup: 50, noise: 0.0, kernel: "unitary" },
    Row { name: "e5", p: 1, m: 1, lag: 2, horizon: 16, forgetting: 1.0, ridge: 1e-9, input_weight: 5e-2, steps: 250, warmup: 50, noise: 0.0, kernel: "unitary" },
    Row { name: "e6", p: 1, m: 1, lag: 2, horizon: 30, forgetting: 1.0, ridge: 1e-9, input_weight: 1e3, steps: 1600, warmup: 10, noise: 0.0, kernel: "poly2" },
    Row { name: "e6_noise", p: 1, m: 1, lag: 2, horizon: 30, forgetting: 0.999, ridge: 1e-4, input_weight: 2.25e4, steps: 1600, warmup: 10, noise: 1e-3, kernel: "poly2" },
    Row { name: "e7", p: 6, m: 3, lag: 1, horizon: 30, forgetting: 1.0, ridge: 1e-9, input_weight: 1e-2, steps: 1500, warmup: 100, noise: 0.0, kernel: "unitary" },
];

#[test]
fn table_covers_every_preset() {
    let mut names: Vec<&str> = list_presets().into_iter().map(|(n, _)| n).collect();
    names.sort_unstable();
    let mut rows: Vec<&str> = TABLE.iter().map(|r| r.name).collect();
    rows.sort_unstable();
    assert_eq!(names, rows);
}

#[test]
fn presets_match_table() {
    for row in TABLE {
        let exp = preset(row.name).unwrap().resolve(&Overrides::default()).unwrap();
        let n = row.name;
        assert_eq!((exp.outputs(), exp.inputs()), (row.p, row.m), "{n} dims");
        assert_eq!((exp.lag, exp.horizon), (row.lag, row.horizon), "{n} lag/horizon");
        assert_eq!(exp.forgetting, row.forgetting, "{n} forgetting");
        assert_eq!(exp.ridge, row.ridge, "{n} ridge");
        assert_eq!(exp.jitter, 1e-12, "{n} jitter");
        assert_eq!(exp.output_weight, Mat::identity(row.p), "{n} output weight");
        assert_eq!(exp.input_weight, Mat::identity(row.m).scale(row.input_weight), "{n} input weight");
        assert_eq!((exp.steps, exp.warmup), (row.steps, row.warmup), "{n} steps/warmup");
        assert_eq!(exp.noise_std, row.noise, "{n} noise");
        assert_eq!(exp.kernel.label(), row.kernel, "{n} kernel");
        assert_eq!(exp.seed, 42, "{n} seed");
        assert_eq!((exp.prbs_amplitude, exp.prbs_dwell), (0.1, (5, 15)), "{n} prbs");
    }
}

#[test]
fn reference_schedules() {
    let e1 = preset("e1").unwrap().resolve(&Overrides::default()).unwrap();
    for (k, r) in [(50, 0.0), (51, 1.0), (100, 1.0), (101, -0.5), (151, 0.75), (200, 0.75), (201, 0.0), (250, 0.0)] {
        assert_eq!(e1.reference.at(k), vec![r], "e1 r at {k}");
    }
    let e6 = preset("e6").unwrap().resolve(&Overrides::default()).unwrap();
    for (k, r) in [(10, 0.0), (11, 0.5), (401, 1.5), (801, 3.0), (1200, 3.0), (1201, 0.0)] {
        assert_eq!(e6.reference.at(k), vec![r], "e6 r at {k}");
    }
    let e3 = preset("e3").unwrap().resolve(&Overrides::default()).unwrap();
    assert_eq!(e3.reference.at(60), vec![1.0, -0.5, 2.0]);
    assert_eq!(e3.reference.at(150), vec![-0.5, 1.3, -0.5]);
    let e7 = preset("e7").unwrap().resolve(&Overrides::default()).unwrap();
    assert_eq!(e7.reference.at(1000), vec![0.0; 6]);
}

#[test]
fn rbf_widths() {
    use abpc::harness::KernelSpec;
    for (name, width) in [("e1", 1e3), ("e2b", 1e4), ("e2b_noise", 1e4)] {
        let cfg = preset(name).unwrap();
        let kernel = abpc::config::parse_kernel_flag("rbf", cfg.kernel.width).unwrap();
        assert_eq!(kernel, KernelSpec::Rbf { centers: 1, width }, "{name}");
    }
}

#[test]
fn sweep_presets() {
    for name in ["e2b", "e2b_noise"] {
        let exp = preset(name).unwrap().resolve(&Overrides::default()).unwrap();
        let sweep = exp.sweep.unwrap();
        assert_eq!(sweep.grid.len(), 64);
        assert_eq!(sweep.amplitude, 0.01);
    }
}
