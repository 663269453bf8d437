use std::fs;
use std::ops::Range;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};

use podnolab_core::analysis::{
    ablation_csv, ablation_sweep, band_error_summary, mean_report, spectrum_error, AblationAxis,
};
use podnolab_core::datagen::{nls_potential, sample_epsilon, sample_nls_u0};
use podnolab_core::dataset::{generate_darcy, generate_kp, generate_nls, nls_grid, DarcyGen, KpGen, NlsGen};
use podnolab_core::experiment::{build_model, training_basis, GenConfig};
use podnolab_core::grid::{complex_to_field, ComplexView};
use podnolab_core::io::{self, Checkpoint};
use podnolab_core::neuralop::Normalizer;
use podnolab_core::pod::{energy_ratio, modes_for_energy};
use podnolab_core::solvers::nls::{
    complex_l2, lie_trotter_nls_observed, pod_split_error_curve, BasisType, NlsProblem,
};
use podnolab_core::training::{evaluate, history_csv, train_from, AdamState};
use podnolab_core::{Dataset64, Family, Field64, Gso64, KernelConfig, ModeSet};

use crate::config::{
    self, write_run_manifest, write_text, AblateConfig, ConfigError, ModelDataConfig, PodBasisConfig,
    SplitSolveConfig, TrainCmdConfig,
};
use crate::{AblateArgs, Common, GenArgs, ModelArgs, ModelDataArgs, PodBasisArgs, SplitArgs, TrainArgs};

/// Energy fraction the POD advisory aims for.
const ENERGY_TARGET: f64 = 0.99;

fn prepare_out(common: &Common) -> Result<()> {
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))
}

fn print_summary(v: &Value) {
    println!("{v}");
}

fn write_summary(out: &Path, v: &Value) -> Result<()> {
    write_text(&out.join("summary.json"), &serde_json::to_string_pretty(v)?)?;
    print_summary(v);
    Ok(())
}

fn need_path(p: &Path, what: &str) -> Result<()> {
    if p.as_os_str().is_empty() {
        bail!(ConfigError(format!("no {what} given (use --{what} or the config file)")));
    }
    Ok(())
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| ConfigError(format!("`{t}` is not a nonnegative integer")).into())
        })
        .collect()
}

pub fn gen(args: GenArgs, family: Family) -> Result<()> {
    let path = args.common.config.as_deref();
    let command = format!("gen-{}", family.name());
    prepare_out(&args.common)?;
    let gen = match family {
        Family::Darcy => {
            let mut c: DarcyGen = config::load(path, &command)?;
            if args.steps.is_some() || args.t_final.is_some() {
                bail!(ConfigError("the Darcy family has no time stepping".into()));
            }
            c.samples = args.n.unwrap_or(c.samples);
            c.seed = args.seed.unwrap_or(c.seed);
            c.n = args.resolution.unwrap_or(c.n);
            GenConfig::Darcy(c)
        }
        Family::Nls => {
            let mut c: NlsGen = config::load(path, &command)?;
            c.samples = args.n.unwrap_or(c.samples);
            c.seed = args.seed.unwrap_or(c.seed);
            c.n = args.resolution.unwrap_or(c.n);
            c.steps = args.steps.unwrap_or(c.steps);
            c.t_final = args.t_final.unwrap_or(c.t_final);
            GenConfig::Nls(c)
        }
        Family::Kp => {
            let mut c: KpGen = config::load(path, &command)?;
            c.samples = args.n.unwrap_or(c.samples);
            c.seed = args.seed.unwrap_or(c.seed);
            c.n = args.resolution.unwrap_or(c.n);
            c.steps = args.steps.unwrap_or(c.steps);
            c.t_final = args.t_final.unwrap_or(c.t_final);
            GenConfig::Kp(c)
        }
    };
    let data: Dataset64 = match &gen {
        GenConfig::Darcy(c) => generate_darcy(c)?,
        GenConfig::Nls(c) => generate_nls(c)?,
        GenConfig::Kp(c) => generate_kp(c)?,
    };
    let manifest = io::save_dataset(&args.common.out, &data)?;
    let resolved = match &gen {
        GenConfig::Darcy(c) => serde_json::to_value(c)?,
        GenConfig::Nls(c) => serde_json::to_value(c)?,
        GenConfig::Kp(c) => serde_json::to_value(c)?,
    };
    write_run_manifest(&args.common.out, &command, &resolved, Map::new())?;
    print_summary(&json!({
        "family": family.name(),
        "samples": manifest.samples,
        "grid": [data.grid.nx(), data.grid.ny()],
        "seed": manifest.seed,
    }));
    Ok(())
}

fn load_data(path: &Path) -> Result<Dataset64> {
    need_path(path, "dataset")?;
    io::load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn fit_normalizer(data: &Dataset64, n_train: usize) -> Result<Normalizer> {
    let ins: Vec<&Field64> = data.inputs[..n_train].iter().collect();
    let outs: Vec<&Field64> = data.outputs[..n_train].iter().collect();
    Ok(Normalizer::fit(&ins, &outs)?)
}

pub fn pod_basis(args: PodBasisArgs) -> Result<()> {
    let mut c: PodBasisConfig = config::load(args.common.config.as_deref(), "pod-basis")?;
    if let Some(d) = args.dataset {
        c.dataset = d;
    }
    c.modes = args.modes.or(c.modes);
    c.split.n_train = args.n_train.or(c.split.n_train);
    if let Some(f) = args.snapshot_fraction {
        c.snapshots.fraction = f;
        c.snapshots.pairs = None;
    }
    prepare_out(&args.common)?;
    let data = load_data(&c.dataset)?;
    c.split = c.split.resolved(data.len())?;
    let (n_train, _) = c.split.resolve(data.len())?;
    let modes = c.modes.unwrap_or(144);
    c.modes = Some(modes);
    let norm = fit_normalizer(&data, n_train)?;
    let scales = c.snapshots.rescale.then(|| (norm.in_std.as_slice(), norm.out_std.as_slice()));
    let basis = training_basis(&data, c.snapshots.pair_count(n_train)?, modes, scales)?;
    io::save_basis(&args.common.out.join("basis.bin"), &basis)?;
    let mut csv = String::from("modes,energy_ratio\n");
    for n in 1..=basis.sigma().len() {
        csv.push_str(&format!("{n},{:.17e}\n", energy_ratio(&basis, n)));
    }
    write_text(&args.common.out.join("energy.csv"), &csv)?;
    let rho = energy_ratio(&basis, modes);
    let needed = modes_for_energy(&basis, ENERGY_TARGET);
    if rho < ENERGY_TARGET {
        let hint = needed.map_or_else(|| "no basis size reaches it".to_string(), |n| format!("N = {n} reaches it"));
        eprintln!("warning: N = {modes} captures {rho:.6} of the snapshot energy, below {ENERGY_TARGET}; {hint}");
    }
    write_run_manifest(&args.common.out, "pod-basis", &c, Map::new())?;
    write_summary(
        &args.common.out,
        &json!({
            "modes": modes,
            "energy_ratio": rho,
            "modes_for_99_percent": needed,
            "snapshot_columns": basis.sigma().len(),
        }),
    )
}

fn apply_model_args(spec: &mut podnolab_core::experiment::ModelSpec, m: &ModelArgs) -> Result<()> {
    let pod = match m.kernel.as_deref() {
        None => matches!(spec.kernel, KernelConfig::Pod { .. }),
        Some("pod") => true,
        Some("fourier") | Some("fno") => false,
        Some(k) => bail!(ConfigError(format!("unknown kernel `{k}` (expected pod or fourier)"))),
    };
    let modes = match &m.modes {
        Some(s) => Some(parse_list(s)?),
        None => None,
    };
    spec.kernel = match (pod, spec.kernel, modes.as_deref()) {
        (true, _, Some([n])) => KernelConfig::Pod { n_modes: *n },
        (true, KernelConfig::Pod { n_modes }, None) => KernelConfig::Pod { n_modes },
        (true, _, None) => KernelConfig::Pod { n_modes: 144 },
        (false, _, Some([m])) => KernelConfig::Fourier { modes: ModeSet::new(*m, *m) },
        (false, _, Some([mx, my])) => KernelConfig::Fourier { modes: ModeSet::new(*mx, *my) },
        (false, KernelConfig::Fourier { modes }, None) => KernelConfig::Fourier { modes },
        (false, _, None) => KernelConfig::Fourier { modes: ModeSet::new(6, 6) },
        _ => bail!(ConfigError("--modes takes one count for pod and `m` or `mx,my` for fourier".into())),
    };
    spec.width = m.width.unwrap_or(spec.width);
    spec.layers = m.layers.unwrap_or(spec.layers);
    spec.seed = m.model_seed.unwrap_or(spec.seed);
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut c: TrainCmdConfig = config::load(args.common.config.as_deref(), "train")?;
    if let Some(d) = args.dataset {
        c.dataset = d;
    }
    apply_model_args(&mut c.model, &args.model)?;
    c.train.epochs = args.epochs.unwrap_or(c.train.epochs);
    c.train.lr = args.lr.unwrap_or(c.train.lr);
    c.train.batch = args.batch.unwrap_or(c.train.batch);
    c.train.seed = args.seed.unwrap_or(c.train.seed);
    c.split.n_train = args.n_train.or(c.split.n_train);
    c.split.n_test = args.n_test.or(c.split.n_test);
    if let Some(f) = args.snapshot_fraction {
        c.snapshots.fraction = f;
        c.snapshots.pairs = None;
    }
    prepare_out(&args.common)?;
    let data = load_data(&c.dataset)?;
    c.split = c.split.resolved(data.len())?;
    let (n_train, n_test) = c.split.resolve(data.len())?;
    let cfg = c.train.to_train_config(n_train, n_test);
    c.train.batch = cfg.batch;
    c.model.use_epsilon = Some(c.model.use_epsilon.unwrap_or(data.epsilons.is_some()));

    let mut model = build_model(&c.model, &c.snapshots, &data, n_train)?;
    let state = AdamState::new(model.n_params());
    let outcome = train_from(&mut model, &data, &cfg, state, 0, |_| {})?;

    let mut extra = std::collections::BTreeMap::new();
    extra.insert("dataset".into(), json!(c.dataset));
    extra.insert("split".into(), serde_json::to_value(c.split)?);
    extra.insert("train".into(), serde_json::to_value(&cfg)?);
    extra.insert("snapshots".into(), serde_json::to_value(&c.snapshots)?);
    extra.insert("weight_decay_mode".into(), json!("coupled-l2"));
    let final_rec = outcome.history.last().cloned();
    let ck = Checkpoint {
        model,
        epoch: outcome.epochs_done,
        family: Some(data.family),
        optimizer: Some(outcome.state),
        extra,
    };
    io::save_checkpoint(&args.common.out.join("checkpoint.bin"), &ck)?;
    write_text(&args.common.out.join("history.csv"), &history_csv(&outcome.history))?;
    let mut notes = Map::new();
    notes.insert("weight_decay_mode".into(), json!("coupled-l2"));
    notes.insert("nondeterministic_outputs".into(), json!(["history.csv:wall_seconds"]));
    write_run_manifest(&args.common.out, "train", &c, notes)?;
    write_summary(
        &args.common.out,
        &json!({
            "epochs": outcome.epochs_done,
            "n_params": ck.model.n_params(),
            "kernel": ck.model.config().kernel.label(),
            "final_train_loss": final_rec.as_ref().map(|r| r.train_loss),
            "final_test_error": final_rec.and_then(|r| r.test_error),
        }),
    )
}

struct Loaded {
    model: Gso64,
    data: Dataset64,
    range: Range<usize>,
}

fn load_model_data(args: &ModelDataArgs, command: &str) -> Result<(ModelDataConfig, Loaded)> {
    let mut c: ModelDataConfig = config::load(args.common.config.as_deref(), command)?;
    if let Some(p) = &args.checkpoint {
        c.checkpoint = p.clone();
    }
    if let Some(d) = &args.dataset {
        c.dataset = d.clone();
    }
    c.start = args.start.or(c.start);
    c.end = args.end.or(c.end);
    c.split_frac = args.split_frac.or(c.split_frac);
    need_path(&c.checkpoint, "checkpoint")?;
    let ck = io::load_checkpoint::<f64>(&c.checkpoint)
        .with_context(|| format!("loading checkpoint {}", c.checkpoint.display()))?;
    let data = load_data(&c.dataset)?;
    if data.grid.nx() != ck.model.grid().nx() || data.grid.ny() != ck.model.grid().ny() {
        bail!(ConfigError("dataset and checkpoint grids differ".into()));
    }
    // default range: the recorded test split when it fits, else everything
    let recorded = ck
        .extra
        .get("split")
        .and_then(|s| Some((s.get("n_train")?.as_u64()? as usize, s.get("n_test")?.as_u64()? as usize)))
        .filter(|&(a, b)| b > 0 && a + b <= data.len());
    let (d0, d1) = recorded.map_or((0, data.len()), |(a, b)| (a, a + b));
    let start = c.start.unwrap_or(d0);
    let end = c.end.unwrap_or(if c.start.is_some() { data.len() } else { d1 });
    if start >= end || end > data.len() {
        bail!(ConfigError(format!("sample range {start}..{end} invalid for {} samples", data.len())));
    }
    c.start = Some(start);
    c.end = Some(end);
    Ok((
        c,
        Loaded {
            model: ck.model,
            data,
            range: start..end,
        },
    ))
}

pub fn eval(args: ModelDataArgs) -> Result<()> {
    let (c, l) = load_model_data(&args, "eval")?;
    prepare_out(&args.common)?;
    let r = evaluate(&l.model, &l.data, l.range.clone())?;
    let mut csv = String::from("sample,relative_error\n");
    for (i, e) in l.range.clone().zip(&r.per_sample) {
        csv.push_str(&format!("{i},{e:.17e}\n"));
    }
    write_text(&args.common.out.join("per_sample.csv"), &csv)?;
    write_run_manifest(&args.common.out, "eval", &c, Map::new())?;
    write_summary(
        &args.common.out,
        &json!({ "mean_relative_error": r.mean, "samples": r.per_sample.len(), "start": l.range.start, "end": l.range.end }),
    )
}

fn predictions(l: &Loaded) -> Result<Vec<Field64>> {
    use rayon::prelude::*;
    l.range
        .clone()
        .into_par_iter()
        .map(|i| Ok(l.model.forward(&l.data.inputs[i], l.data.epsilon(i))?))
        .collect()
}

pub fn predict(args: ModelDataArgs) -> Result<()> {
    let (c, l) = load_model_data(&args, "predict")?;
    prepare_out(&args.common)?;
    let outputs = predictions(&l)?;
    let pred = Dataset64 {
        family: l.data.family,
        grid: l.data.grid.clone(),
        inputs: l.data.inputs[l.range.clone()].to_vec(),
        outputs,
        epsilons: l.data.epsilons.as_ref().map(|e| e[l.range.clone()].to_vec()),
        seed: l.data.seed,
        settings: json!({ "predicted_by": c.checkpoint, "source": c.dataset, "start": l.range.start }),
    };
    io::save_dataset(&args.common.out, &pred)?;
    write_run_manifest(&args.common.out, "predict", &c, Map::new())?;
    print_summary(&json!({ "samples": pred.len(), "start": l.range.start, "end": l.range.end }));
    Ok(())
}

pub fn spectrum(args: ModelDataArgs) -> Result<()> {
    let (mut c, l) = load_model_data(&args, "spectrum")?;
    let frac = c.split_frac.unwrap_or(0.5);
    c.split_frac = Some(frac);
    prepare_out(&args.common)?;
    let preds = predictions(&l)?;
    let reports = preds
        .iter()
        .zip(l.range.clone())
        .map(|(p, i)| spectrum_error(p, &l.data.outputs[i]))
        .collect::<podnolab_core::Result<Vec<_>>>()?;
    let mean = mean_report(&reports)?;
    let (low, high) = band_error_summary(&mean, frac)?;
    write_text(&args.common.out.join("spectrum.csv"), &mean.to_csv())?;
    write_run_manifest(&args.common.out, "spectrum", &c, Map::new())?;
    write_summary(
        &args.common.out,
        &json!({ "low_band_mean": low, "high_band_mean": high, "split_frac": frac, "modes": mean.len(), "samples": reports.len() }),
    )
}

#[derive(Serialize)]
struct SplitSummary {
    epsilon: f64,
    mass_initial: f64,
    mass_final: f64,
    max_relative_mass_drift: f64,
}

pub fn split_solve(args: SplitArgs, pod: bool) -> Result<()> {
    let command = if pod { "pod-split-solve" } else { "split-solve" };
    let mut c: SplitSolveConfig = config::load(args.common.config.as_deref(), command)?;
    c.n = args.n.unwrap_or(c.n);
    c.seed = args.seed.unwrap_or(c.seed);
    c.index = args.index.unwrap_or(c.index);
    c.epsilon = args.epsilon.or(c.epsilon);
    c.steps = args.steps.unwrap_or(c.steps);
    c.t_final = args.t_final.unwrap_or(c.t_final);
    c.basis_type = args.basis_type.unwrap_or(c.basis_type);
    if let Some(m) = &args.modes {
        c.modes = parse_list(m)?;
    }
    let eps = c.epsilon.unwrap_or_else(|| sample_epsilon(c.seed, c.index));
    c.epsilon = Some(eps);
    prepare_out(&args.common)?;

    let grid = nls_grid::<f64>(c.n)?;
    let u0f = sample_nls_u0(&grid, &c.law, c.seed, c.index)?;
    let u0 = ComplexView::STANDARD.extract(&u0f)?;
    let p = NlsProblem {
        potential: nls_potential(&grid, &c.law),
        grid: grid.clone(),
        epsilon: eps,
        t_final: c.t_final,
        steps: c.steps,
    };
    if !pod {
        let m0 = complex_l2(&grid, &u0);
        let mut drift: f64 = 0.0;
        let u = lie_trotter_nls_observed(&p, &u0, |_, u| {
            drift = drift.max((complex_l2(&grid, u) - m0).abs() / m0);
        })?;
        let data = Dataset64 {
            family: Family::Nls,
            grid: grid.clone(),
            inputs: vec![u0f],
            outputs: vec![complex_to_field(&grid, &u)?],
            epsilons: Some(vec![eps]),
            seed: c.seed,
            settings: serde_json::to_value(&c)?,
        };
        io::save_dataset(&args.common.out, &data)?;
        write_run_manifest(&args.common.out, command, &c, Map::new())?;
        let s = SplitSummary {
            epsilon: eps,
            mass_initial: m0,
            mass_final: complex_l2(&grid, &u),
            max_relative_mass_drift: drift,
        };
        return write_summary(&args.common.out, &serde_json::to_value(s)?);
    }

    let kind = BasisType::from_index(c.basis_type)?;
    let columns = match kind {
        BasisType::EndPoints => 4,
        BasisType::States => 2 * (c.steps + 1),
        BasisType::StatesAndIncrements => 2 * (2 * c.steps + 1),
    };
    let max = columns.min(grid.len());
    if c.modes.is_empty() {
        let mut n = 1;
        while n < max {
            c.modes.push(n);
            n *= 2;
        }
        c.modes.push(max);
    }
    let curve = pod_split_error_curve(&p, &u0, kind, &c.modes)?;
    let mut csv = String::from("modes,relative_error\n");
    for (n, e) in &curve {
        csv.push_str(&format!("{n},{e:.17e}\n"));
    }
    write_text(&args.common.out.join("curve.csv"), &csv)?;
    write_run_manifest(&args.common.out, command, &c, Map::new())?;
    write_summary(
        &args.common.out,
        &json!({
            "basis_type": c.basis_type,
            "epsilon": eps,
            "max_modes": max,
            "errors": curve.iter().map(|(n, e)| json!({"modes": n, "relative_error": e})).collect::<Vec<_>>(),
        }),
    )
}

fn parse_axis(s: &str) -> Result<AblationAxis> {
    Ok(match s {
        "modes" => AblationAxis::Modes,
        "snapshots" => AblationAxis::Snapshots,
        "resolution" => AblationAxis::Resolution,
        "timesteps" => AblationAxis::Timesteps,
        _ => bail!(ConfigError(format!("unknown ablation axis `{s}`"))),
    })
}

pub fn ablate(args: AblateArgs) -> Result<()> {
    let mut c: AblateConfig = config::load(args.common.config.as_deref(), "ablate")?;
    if let Some(a) = &args.axis {
        c.axis = parse_axis(a)?;
    }
    if let Some(v) = &args.values {
        c.values = parse_list(v)?;
    }
    if let Some(f) = &args.family {
        c.data = match f.as_str() {
            "darcy" => GenConfig::Darcy(DarcyGen::default()),
            "nls" => GenConfig::Nls(NlsGen::default()),
            "kp" => GenConfig::Kp(KpGen::default()),
            _ => bail!(ConfigError(format!("unknown family `{f}`"))),
        };
    }
    if let Some(n) = args.n {
        match &mut c.data {
            GenConfig::Darcy(g) => g.samples = n,
            GenConfig::Nls(g) => g.samples = n,
            GenConfig::Kp(g) => g.samples = n,
        }
    }
    if let Some(r) = args.resolution {
        c.data = c.data.with_resolution(r);
    }
    apply_model_args(&mut c.experiment.model, &args.model)?;
    let t = &mut c.experiment.train;
    t.epochs = args.epochs.unwrap_or(t.epochs);
    t.n_train = args.n_train.unwrap_or(t.n_train);
    t.n_test = args.n_test.unwrap_or(t.n_test);
    t.batch = t.batch.min(t.n_train.max(1));
    prepare_out(&args.common)?;
    let rows = ablation_sweep::<f64>(c.axis, &c.values, &c.data, &c.experiment)?;
    write_text(&args.common.out.join("ablation.csv"), &ablation_csv(c.axis, &rows))?;
    write_run_manifest(&args.common.out, "ablate", &c, Map::new())?;
    write_summary(&args.common.out, &json!({ "axis": c.axis.name(), "rows": rows }))
}
