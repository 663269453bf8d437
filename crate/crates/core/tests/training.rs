use podnolab_core::neuralop::{Gso, GsoConfig, KernelConfig};
use podnolab_core::pod::{compute_basis, SnapshotMatrix};
use podnolab_core::training::{
    adam_step, batch_gradient, evaluate, history_csv, relative_l2_loss, relative_l2_with_grad, train, AdamState, Sample,
};
use podnolab_core::{Dataset64, Family, Field64, Grid64, ModeSet, PodBasis64, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn periodic(n: usize) -> Grid64 {
    Grid64::periodic_square(n, 0.0, 1.0).unwrap()
}

/// Smooth random field: a few low Fourier modes with random amplitudes.
fn smooth_field(g: &Grid64, channels: usize, seed: u64) -> Field64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coef: Vec<[f64; 4]> = (0..channels * 9).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0, 0.0]).collect();
    let tau = std::f64::consts::TAU;
    Field64::from_fn(g, channels, |c, x, y| {
        let mut v = 0.0;
        for kx in 0..3 {
            for ky in 0..3 {
                let [a, b, _, _] = coef[c * 9 + kx * 3 + ky];
                let ph = tau * (kx as f64 * x + ky as f64 * y);
                v += (a * ph.cos() + b * ph.sin()) / (1.0 + (kx + ky) as f64);
            }
        }
        v
    })
}

fn basis(g: &Grid64, n: usize) -> PodBasis64 {
    let fields: Vec<Field64> = (0..3 * n).map(|k| smooth_field(g, 1, 500 + k as u64)).collect();
    compute_basis(&SnapshotMatrix::from_fields(&fields, &[]).unwrap(), n).unwrap()
}

fn model(kernel: KernelConfig, g: &Grid64, eps: bool, seed: u64) -> Gso<f64> {
    let cfg = GsoConfig {
        width: 4,
        layers: 2,
        kernel,
        in_channels: 1,
        out_channels: 1,
        coords: true,
        use_epsilon: eps,
    };
    let b = basis(g, 6);
    let mut m = Gso::new(cfg, g, Some(&b), seed).unwrap();
    // push spectral weights to O(1) so the kernel path matters in the check
    for e in m.table().to_vec() {
        if e.name.ends_with("spectral") {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + e.offset as u64);
            for p in &mut m.params_mut()[e.range()] {
                *p = rng.gen_range(-0.5..0.5);
            }
        }
    }
    m
}

fn loss_at(m: &Gso<f64>, s: &Sample<'_, f64>) -> f64 {
    relative_l2_loss(&m.forward(s.input, s.epsilon).unwrap(), s.output).unwrap()
}

/// Central differences with h = 1e-6 on every parameter; the relative error
/// is measured per tensor as |g_fd - g| / |g_fd|.
fn check_gradient(kernel: KernelConfig) {
    let g = periodic(8);
    let m = model(kernel, &g, true, 3);
    let a = smooth_field(&g, 1, 1);
    let u = smooth_field(&g, 1, 2);
    let s = Sample {
        input: &a,
        epsilon: Some(-0.4),
        output: &u,
    };
    let (_, grad) = batch_gradient(&m, &[s]).unwrap();
    let h = 1e-6;
    for e in m.table() {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in e.range() {
            let mut p = m.clone();
            p.params_mut()[i] += h;
            let up = loss_at(&p, &s);
            p.params_mut()[i] -= 2.0 * h;
            let dn = loss_at(&p, &s);
            let fd = (up - dn) / (2.0 * h);
            num += (fd - grad[i]).powi(2);
            den += fd * fd;
        }
        let rel = (num / den.max(1e-300)).sqrt();
        assert!(den > 0.0, "{} has zero gradient", e.name);
        assert!(rel < 1e-5, "{}: relative error {rel:e}", e.name);
    }
}

#[test]
fn gradient_matches_finite_differences_pod() {
    check_gradient(KernelConfig::Pod { n_modes: 4 });
}

#[test]
fn gradient_matches_finite_differences_fourier() {
    check_gradient(KernelConfig::Fourier { modes: ModeSet::new(2, 2) });
}

#[test]
fn loss_examples() {
    let g = periodic(8);
    let u = smooth_field(&g, 2, 4);
    assert_eq!(relative_l2_loss(&u, &u).unwrap(), 0.0);
    assert!((relative_l2_loss(&Field64::zeros(&g, 2), &u).unwrap() - 1.0).abs() < 1e-15);
    assert!((relative_l2_loss(&u.scaled(2.0), &u).unwrap() - 1.0).abs() < 1e-15);
    let (_, grad) = relative_l2_with_grad(&u, &u, true).unwrap();
    assert!(grad.unwrap().data().iter().all(|&x| x == 0.0));
    assert!(relative_l2_loss(&u, &Field64::zeros(&g, 2)).is_err());
}

#[test]
fn unused_parameters_get_exact_zero_gradient() {
    let g = periodic(8);
    let mut m = model(KernelConfig::Pod { n_modes: 4 }, &g, true, 5);
    for l in 0..2 {
        m.param_mut(&format!("layers.{l}.eps2.weight")).unwrap().fill(0.0);
    }
    let a = smooth_field(&g, 1, 1);
    let u = smooth_field(&g, 1, 2);
    let (_, grad) = batch_gradient(&m, &[Sample { input: &a, epsilon: Some(0.3), output: &u }]).unwrap();
    for l in 0..2 {
        for name in [format!("layers.{l}.eps1.weight"), format!("layers.{l}.eps1.bias")] {
            let e = m.table().iter().find(|e| e.name == name).unwrap();
            assert!(grad[e.range()].iter().all(|&x| x == 0.0), "{name}");
        }
    }
}

#[test]
fn batch_gradient_is_mean_of_sample_gradients() {
    let g = periodic(8);
    let m = model(KernelConfig::Fourier { modes: ModeSet::new(2, 2) }, &g, false, 9);
    let f: Vec<Field64> = (0..4).map(|k| smooth_field(&g, 1, 20 + k)).collect();
    let s1 = Sample { input: &f[0], epsilon: None, output: &f[1] };
    let s2 = Sample { input: &f[2], epsilon: None, output: &f[3] };
    let (l1, g1) = batch_gradient(&m, &[s1]).unwrap();
    let (l2, g2) = batch_gradient(&m, &[s2]).unwrap();
    let (l, g12) = batch_gradient(&m, &[s1, s2]).unwrap();
    assert!((l - 0.5 * (l1 + l2)).abs() < 1e-15);
    for i in 0..g12.len() {
        assert!((2.0 * g12[i] - g1[i] - g2[i]).abs() < 1e-12);
    }
}

#[test]
fn adam_identities() {
    let mut p = vec![1.0, -2.0, 3.0];
    let mut st = AdamState::new(3);
    adam_step(&mut p, &[0.0; 3], &mut st, 1e-3, 0.0);
    assert_eq!(p, vec![1.0, -2.0, 3.0]);

    let mut p = vec![0.0; 3];
    let mut st = AdamState::new(3);
    adam_step(&mut p, &[5.0, -0.25, 1e-3], &mut st, 1e-2, 0.0);
    for (v, s) in p.iter().zip([-1.0f64, 1.0, -1.0]) {
        assert!((v - s * 1e-2).abs() < 1e-6, "{v}");
    }

    // f(x) = (x - 3)^2 / 2 from x = 0: loss decreases monotonically
    let mut x = vec![0.0];
    let mut st = AdamState::new(1);
    let mut last = f64::INFINITY;
    for _ in 0..100 {
        let g = [x[0] - 3.0];
        adam_step(&mut x, &g, &mut st, 0.01, 0.0);
        let loss = 0.5 * (x[0] - 3.0f64).powi(2);
        assert!(loss < last);
        last = loss;
    }
}

fn toy_dataset(g: &Grid64, n: usize) -> Dataset64 {
    // output: a fixed smooth nonlinear map of the input
    let inputs: Vec<Field64> = (0..n as u64).map(|k| smooth_field(g, 1, 100 + k)).collect();
    let outputs = inputs
        .iter()
        .map(|a| {
            let d: Vec<f64> = a.data().iter().map(|v| 0.5 * v + 0.2 * v * v + 0.3).collect();
            Field64::from_vec(g, 1, d).unwrap()
        })
        .collect();
    Dataset64 {
        family: Family::Darcy,
        grid: g.clone(),
        inputs,
        outputs,
        epsilons: None,
        seed: 0,
        settings: serde_json::Value::Null,
    }
}

#[test]
fn tiny_learning_rate_leaves_loss_unchanged() {
    let g = periodic(8);
    let data = toy_dataset(&g, 4);
    let mut m = model(KernelConfig::Pod { n_modes: 4 }, &g, false, 1);
    let before = evaluate(&m, &data, 0..4).unwrap().mean;
    let cfg = TrainConfig { lr: 1e-12, epochs: 1, batch: 4, n_train: 4, n_test: 0, ..TrainConfig::default() };
    train(&mut m, &data, &cfg).unwrap();
    let after = evaluate(&m, &data, 0..4).unwrap().mean;
    assert!((after - before).abs() < 1e-9);
}

#[test]
fn zero_epochs_and_determinism() {
    let g = periodic(8);
    let data = toy_dataset(&g, 12);
    let m0 = model(KernelConfig::Fourier { modes: ModeSet::new(3, 3) }, &g, false, 2);
    let mut m = m0.clone();
    let cfg = TrainConfig { epochs: 0, batch: 4, n_train: 8, n_test: 4, ..TrainConfig::default() };
    let out = train(&mut m, &data, &cfg).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(m.params(), m0.params());

    let cfg = TrainConfig { epochs: 3, ..cfg };
    let (mut a, mut b) = (m0.clone(), m0.clone());
    let ha = train(&mut a, &data, &cfg).unwrap().history;
    let hb = train(&mut b, &data, &cfg).unwrap().history;
    assert_eq!(a.params(), b.params());
    let strip = |h: &[podnolab_core::training::EpochRecord]| h.iter().map(|r| (r.epoch, r.train_loss, r.test_error)).collect::<Vec<_>>();
    assert_eq!(strip(&ha), strip(&hb));
    let csv = history_csv(&ha);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("epoch,train_loss,test_error,wall_seconds\n"));
}

#[test]
fn evaluation_examples() {
    let g = periodic(8);
    let data = toy_dataset(&g, 6);
    let m = model(KernelConfig::Pod { n_modes: 4 }, &g, false, 4);
    let r = evaluate(&m, &data, 2..6).unwrap();
    let mean = r.per_sample.iter().sum::<f64>() / 4.0;
    assert!((r.mean - mean).abs() < 1e-15);
    assert!(evaluate(&m, &data, 3..3).is_err());
    let mut zero = m.clone();
    zero.params_mut().fill(0.0);
    assert!((evaluate(&zero, &data, 0..6).unwrap().mean - 1.0).abs() < 1e-15);
    // order of evaluation does not matter
    let rev = data.subset(0..6).unwrap();
    let mut swapped = rev.clone();
    swapped.inputs.reverse();
    swapped.outputs.reverse();
    let mut per = evaluate(&m, &swapped, 0..6).unwrap().per_sample;
    per.reverse();
    assert_eq!(per, evaluate(&m, &data, 0..6).unwrap().per_sample);
}

#[test]
fn desk_model_overfits_ten_samples() {
    let g = periodic(16);
    let data = toy_dataset(&g, 10);
    let cfg = GsoConfig {
        width: 16,
        layers: 2,
        kernel: KernelConfig::Fourier { modes: ModeSet::new(4, 4) },
        in_channels: 1,
        out_channels: 1,
        coords: true,
        use_epsilon: false,
    };
    let mut m = Gso::new(cfg, &g, None, 7).unwrap();
    let tc = TrainConfig { epochs: 500, batch: 10, n_train: 10, n_test: 0, weight_decay: 0.0, ..TrainConfig::default() };
    let out = train(&mut m, &data, &tc).unwrap();
    let err = evaluate(&m, &data, 0..10).unwrap().mean;
    assert!(err < 1e-2, "train error {err}, last loss {:?}", out.history.last());
}
