use podnolab_core::dataset::{generate_darcy, generate_kp, generate_nls, DarcyGen, KpGen, NlsGen};
use podnolab_core::experiment::GenConfig;
use podnolab_core::{Dataset64, Family};

fn small_nls(seed: u64) -> NlsGen {
    NlsGen {
        n: 16,
        samples: 4,
        seed,
        steps: 20,
        t_final: 0.02,
        epsilon_pool: 3,
        ..Default::default()
    }
}

fn in_pool(threads: usize, f: impl FnOnce() -> Dataset64 + Send) -> Dataset64 {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn generators_have_the_documented_shapes() {
    let d: Dataset64 = generate_darcy(&DarcyGen { n: 9, samples: 3, seed: 1, ..Default::default() }).unwrap();
    assert_eq!((d.family, d.len(), d.in_channels(), d.out_channels()), (Family::Darcy, 3, 1, 1));
    assert!(d.epsilons.is_none());
    assert!(!d.grid.is_periodic());

    let n: Dataset64 = generate_nls(&small_nls(7)).unwrap();
    assert_eq!((n.len(), n.in_channels(), n.out_channels()), (4, 2, 2));
    let eps = n.epsilons.as_ref().unwrap();
    let mut distinct = eps.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    assert!(distinct.len() <= 3);

    let k: Dataset64 = generate_kp(&KpGen { n: 16, samples: 2, steps: 10, t_final: 0.01, ..Default::default() }).unwrap();
    assert_eq!((k.len(), k.in_channels(), k.out_channels()), (2, 1, 1));
    assert!(d.validate().is_ok() && n.validate().is_ok() && k.validate().is_ok());
}

#[test]
fn generation_is_reproducible_and_thread_independent() {
    let a = in_pool(1, || generate_nls(&small_nls(7)).unwrap());
    let b = in_pool(2, || generate_nls(&small_nls(7)).unwrap());
    assert_eq!(a, b);
    let c: Dataset64 = generate_nls(&small_nls(8)).unwrap();
    assert_ne!(a.inputs, c.inputs);
    let darcy = DarcyGen { n: 9, samples: 4, seed: 2, ..Default::default() };
    assert_eq!(
        in_pool(1, || generate_darcy(&darcy).unwrap()),
        in_pool(3, || generate_darcy(&darcy).unwrap())
    );
}

#[test]
fn samples_depend_only_on_seed_and_index() {
    let mut cfg = small_nls(5);
    let four: Dataset64 = generate_nls(&cfg).unwrap();
    cfg.samples = 2;
    let two: Dataset64 = generate_nls(&cfg).unwrap();
    assert_eq!(&four.inputs[..2], &two.inputs[..]);
    assert_eq!(&four.outputs[..2], &two.outputs[..]);
}

#[test]
fn zero_samples_and_subsets() {
    assert!(generate_darcy::<f64>(&DarcyGen { n: 9, samples: 0, ..Default::default() }).is_err());
    let d: Dataset64 = generate_nls(&small_nls(1)).unwrap();
    let s = d.subset(1..3).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(s.inputs[0], d.inputs[1]);
    assert_eq!(s.epsilons.as_ref().unwrap()[1], d.epsilons.as_ref().unwrap()[2]);
    assert!(d.subset(3..9).is_err());
}

#[test]
fn generator_configs_round_trip_through_json() {
    let g = GenConfig::Nls(small_nls(3));
    let text = serde_json::to_string(&g).unwrap();
    assert!(text.contains("\"family\":\"nls\""));
    let back: GenConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, g);
    assert!(GenConfig::Darcy(DarcyGen::default()).with_steps(5).is_err());
    assert_eq!(g.with_resolution(32).resolution(), 32);
}
