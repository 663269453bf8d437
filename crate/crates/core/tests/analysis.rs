use std::f64::consts::PI;

use num_complex::Complex;
use podnolab_core::analysis::{
    ablation_csv, ablation_sweep, band_error_summary, mean_report, spectrum_error, spectrum_prefix, AblationAxis,
    SpectrumReport,
};
use podnolab_core::dataset::DarcyGen;
use podnolab_core::experiment::{run_experiment, ExperimentConfig, GenConfig, ModelSpec, SnapshotSpec};
use podnolab_core::{Field64, Grid64, KernelConfig, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(n: usize) -> Grid64 {
    Grid64::periodic_square(n, 0.0, 1.0).unwrap()
}

fn random_field(g: &Grid64, channels: usize, seed: u64) -> Field64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Field64::from_fn(g, channels, |_, _, _| rng.gen_range(-1.0..1.0))
}

#[test]
fn identical_fields_give_a_zero_spectrum() {
    let g = grid(64);
    let f = random_field(&g, 1, 1);
    let r = spectrum_error(&f, &f).unwrap();
    assert_eq!(r.len(), 3000);
    assert!(r.values.iter().all(|&v| v == 0.0));
}

#[test]
fn single_complex_mode_lands_on_its_label() {
    let n = 64;
    let g = grid(n);
    let mut data = vec![0.0; 2 * n * n];
    for j in 0..n {
        for i in 0..n {
            let ph = 2.0 * PI * (3 * i + 5 * j) as f64 / n as f64;
            data[j * n + i] = ph.cos();
            data[n * n + j * n + i] = ph.sin();
        }
    }
    let diff = Field64::from_vec(&g, 2, data).unwrap();
    let zero = Field64::zeros(&g, 2);
    let r = spectrum_error(&diff, &zero).unwrap();
    for (label, v) in r.labels.iter().zip(&r.values) {
        if *label == (3, 5) {
            assert!((v - 4096.0).abs() < 1e-9, "{v}");
        } else {
            assert!(v.abs() < 1e-9, "{label:?}: {v}");
        }
    }
    assert!(r.labels.contains(&(3, 5)));
}

/// Naive double-sum DFT of `pred - truth` followed by an independent sort.
fn naive_report(pred: &Field64, truth: &Field64, n: usize) -> (Vec<(usize, usize)>, Vec<f64>) {
    let d: Vec<Complex<f64>> = (0..n * n)
        .map(|p| {
            let re = pred.data()[p] - truth.data()[p];
            let im = if pred.channels() == 2 { pred.data()[n * n + p] - truth.data()[n * n + p] } else { 0.0 };
            Complex::new(re, im)
        })
        .collect();
    let mut modes = Vec::new();
    for kx in 0..n {
        for ky in 0..n {
            let mut acc = Complex::new(0.0, 0.0);
            for j in 0..n {
                for i in 0..n {
                    let ph = -2.0 * PI * ((kx * i + ky * j) % n) as f64 / n as f64;
                    acc += d[j * n + i] * Complex::from_polar(1.0, ph);
                }
            }
            let key = kx.min(n - kx) + ky.min(n - ky);
            modes.push((key, kx, ky, acc.norm()));
        }
    }
    modes.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    let keep = spectrum_prefix(n);
    modes.truncate(keep);
    (modes.iter().map(|m| (m.1, m.2)).collect(), modes.iter().map(|m| m.3).collect())
}

#[test]
fn spectrum_matches_naive_dft_and_sort() {
    let n = 16;
    let g = grid(n);
    for channels in [1, 2] {
        let (p, t) = (random_field(&g, channels, 2), random_field(&g, channels, 3));
        let r = spectrum_error(&p, &t).unwrap();
        let (labels, values) = naive_report(&p, &t, n);
        assert_eq!(r.labels, labels);
        for (a, b) in r.values.iter().zip(&values) {
            assert!((a - b).abs() <= 1e-10 * b.max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn spectrum_is_symmetric_in_its_arguments() {
    let g = grid(16);
    let (p, t) = (random_field(&g, 2, 4), random_field(&g, 2, 5));
    let a = spectrum_error(&p, &t).unwrap();
    let b = spectrum_error(&t, &p).unwrap();
    assert_eq!(a, b);
}

#[test]
fn spectrum_rejects_mismatched_or_unsupported_shapes() {
    let (a, b) = (random_field(&grid(8), 1, 1), random_field(&grid(16), 1, 1));
    assert!(spectrum_error(&a, &b).is_err());
    let c = random_field(&grid(8), 3, 1);
    assert!(spectrum_error(&c, &c).is_err());
}

#[test]
fn prefix_scales_with_grid_area() {
    assert_eq!(spectrum_prefix(64), 3000);
    assert_eq!(spectrum_prefix(32), 750);
    assert_eq!(spectrum_prefix(16), 188);
    assert_eq!(spectrum_prefix(1), 1);
}

fn report(values: Vec<f64>) -> SpectrumReport {
    SpectrumReport {
        labels: (0..values.len()).map(|k| (k, 0)).collect(),
        values,
    }
}

#[test]
fn band_summary_examples() {
    assert_eq!(band_error_summary(&report(vec![0.0; 10]), 0.5).unwrap(), (0.0, 0.0));
    assert_eq!(band_error_summary(&report(vec![1.0, 1.0, 0.0, 0.0]), 0.5).unwrap(), (1.0, 0.0));
    assert!(band_error_summary(&report(vec![1.0]), 0.0).is_err());
    assert!(band_error_summary(&report(vec![1.0]), 1.0).is_err());
}

#[test]
fn band_summary_matches_loop_and_recomposes() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let len = rng.gen_range(2..200);
        let values: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..3.0)).collect();
        let frac = rng.gen_range(0.05..0.95);
        let (lo, hi) = band_error_summary(&report(values.clone()), frac).unwrap();
        let split = (frac * len as f64).floor() as usize;
        let (mut sl, mut sh) = (0.0, 0.0);
        for (k, v) in values.iter().enumerate() {
            if k < split {
                sl += v;
            } else {
                sh += v;
            }
        }
        let lo_ref = if split == 0 { 0.0 } else { sl / split as f64 };
        let hi_ref = sh / (len - split) as f64;
        assert_eq!((lo, hi), (lo_ref, hi_ref));
        let global = values.iter().sum::<f64>() / len as f64;
        let recomposed = (lo * split as f64 + hi * (len - split) as f64) / len as f64;
        assert!((global - recomposed).abs() <= 1e-14 * global.max(1.0));
    }
}

#[test]
fn mean_report_averages_elementwise() {
    let a = report(vec![1.0, 2.0, 3.0]);
    let b = report(vec![3.0, 2.0, 1.0]);
    assert_eq!(mean_report(&[a.clone(), b]).unwrap().values, vec![2.0, 2.0, 2.0]);
    assert!(mean_report(&[]).is_err());
    let mut c = a.clone();
    c.labels[0] = (9, 9);
    assert!(mean_report(&[a, c]).is_err());
}

fn tiny_setup() -> (GenConfig, ExperimentConfig) {
    let gen = GenConfig::Darcy(DarcyGen {
        n: 9,
        samples: 12,
        seed: 4,
        ..Default::default()
    });
    let exp = ExperimentConfig {
        model: ModelSpec {
            width: 4,
            layers: 1,
            kernel: KernelConfig::Pod { n_modes: 6 },
            seed: 2,
            ..Default::default()
        },
        train: TrainConfig {
            epochs: 2,
            batch: 4,
            n_train: 8,
            n_test: 4,
            seed: 3,
            ..Default::default()
        },
        snapshots: SnapshotSpec::default(),
    };
    (gen, exp)
}

#[test]
fn single_value_sweep_equals_direct_run() {
    let (gen, exp) = tiny_setup();
    let rows = ablation_sweep::<f64>(AblationAxis::Modes, &[6], &gen, &exp).unwrap();
    assert_eq!(rows.len(), 1);
    let direct = run_experiment(&exp, &gen.generate::<f64>().unwrap(), |_| {}).unwrap();
    let last = direct.history.last().unwrap();
    assert_eq!(rows[0].test_error, last.test_error.unwrap());
    assert_eq!(rows[0].train_loss, last.train_loss);
    let csv = ablation_csv(AblationAxis::Modes, &rows);
    assert!(csv.starts_with("modes,test_error,train_loss\n6,"));
}

#[test]
fn repeated_axis_values_give_identical_rows() {
    let (gen, exp) = tiny_setup();
    let rows = ablation_sweep::<f64>(AblationAxis::Snapshots, &[5, 5], &gen, &exp).unwrap();
    assert_eq!(rows[0], rows[1]);
    let res = ablation_sweep::<f64>(AblationAxis::Resolution, &[7, 9], &gen, &exp).unwrap();
    assert_eq!(res.len(), 2);
    assert!(ablation_sweep::<f64>(AblationAxis::Timesteps, &[5], &gen, &exp).is_err());
    assert!(ablation_sweep::<f64>(AblationAxis::Modes, &[], &gen, &exp).is_err());
}
