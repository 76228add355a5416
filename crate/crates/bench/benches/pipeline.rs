use criterion::{black_box, criterion_group, criterion_main, Criterion};
use num_complex::Complex64;

use chronos_core::band_plan::default_band_plan;
use chronos_core::channel_sim::{synthesize_sweep, ImpairmentConfig, Scene, SweepSchedule};
use chronos_core::csi_pipeline::{process_sweep, PipelineConfig};
use chronos_core::hop_protocol::{run_sweep, ProtocolConfig};
use chronos_core::tof_solver::{
    first_peak, invert_ndft_with, DelayGrid, NdftOperator, SolverConfig,
};

fn single_path_h(freqs: &[f64], tau: f64) -> Vec<Complex64> {
    freqs
        .iter()
        .map(|&f| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * tau))
        .collect()
}

fn bench_ndft(c: &mut Criterion) {
    let plan = default_band_plan();
    let freqs = plan.center_frequencies();
    let grid = DelayGrid::default_grid();
    let op = NdftOperator::new(&freqs, grid).unwrap();
    let h = single_path_h(&freqs, 42e-9);
    let p = op.adjoint(&h);
    c.bench_function("ndft_adjoint_4001", |b| {
        b.iter(|| black_box(op.adjoint(black_box(&h))))
    });
    c.bench_function("ndft_apply_dense_4001", |b| {
        b.iter(|| black_box(op.apply(black_box(&p))))
    });
    c.bench_function("spectral_norm_4001", |b| b.iter(|| op.spectral_norm()));
}

fn bench_solver(c: &mut Criterion) {
    let plan = default_band_plan();
    let freqs = plan.center_frequencies();
    let grid = DelayGrid::new(0.0, 50e-9, 0.05e-9).unwrap();
    let op = NdftOperator::new(&freqs, grid).unwrap();
    let h = single_path_h(&freqs, 17.3e-9);
    let config = SolverConfig::default();
    c.bench_function("invert_ndft_single_path_1001", |b| {
        b.iter(|| {
            let profile = invert_ndft_with(&op, &h, &config, 1).unwrap();
            black_box(first_peak(&profile, &config).unwrap())
        })
    });
}

fn bench_pipeline(c: &mut Criterion) {
    let plan = default_band_plan();
    let scene = Scene {
        tx_position: [2.0, 1.0],
        rx_antennas: vec![[0.0, 0.0]],
        reflectors: vec![],
    };
    let imp = ImpairmentConfig {
        detection_delay_median: 177e-9,
        detection_delay_stddev: 24.76e-9,
        snr_db: Some(20.0),
        ..ImpairmentConfig::default()
    };
    let schedule = SweepSchedule::default();
    c.bench_function("synthesize_sweep_35_bands", |b| {
        b.iter(|| black_box(synthesize_sweep(&scene, &plan, &imp, &schedule, 7).unwrap()))
    });
    let sweeps = synthesize_sweep(&scene, &plan, &imp, &schedule, 7).unwrap();
    c.bench_function("process_sweep_35_bands", |b| {
        b.iter(|| black_box(process_sweep(&sweeps[0], &PipelineConfig::default()).unwrap()))
    });
}

fn bench_protocol(c: &mut Criterion) {
    let plan = default_band_plan();
    let config = ProtocolConfig {
        loss_probability: 0.05,
        ..ProtocolConfig::default()
    };
    c.bench_function("hop_sweep_lossy", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            black_box(run_sweep(&plan, &config, seed).unwrap())
        })
    });
}

criterion_group!(benches, bench_ndft, bench_solver, bench_pipeline, bench_protocol);
criterion_main!(benches);
