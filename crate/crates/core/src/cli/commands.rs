//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{
    AblateArgs, Command, ConfigArgs, DataArgs, FeaturesArgs, GradcheckArgs, MaskplanArgs,
    PretrainArgs, ProbeArgs, SweepArgs, SynthArgs, TrainOverrides, EXIT_OK, EXIT_RUNTIME,
};
use crate::autodiff::primitive_gradchecks;
use crate::config::RunConfig;
use crate::corpus::{load_manifest, read_wav, synth_corpus, write_corpus, Corpus, NoiseBank, SynthSpec};
use crate::dsp::{FeatureMatrix, TargetKind};
use crate::encoder::{EncoderConfig, MgfModel};
use crate::error::{Error, Result};
use crate::objectives::{plan_masks, LossWeights};
use crate::plot::{line_chart_svg, Chart, Series};
use crate::probe::{
    ablation_csv, ablation_suite, checkpoint_id, data_efficiency_sweep, model_fingerprint,
    run_probe, sweep_csv, ProbeKind, ProbeTask, SweepConfig, SweepMode,
};
use crate::trainer::{full_loss_gradcheck, load_model, pretrain, Ablation, LOG_FILE, LOG_HEADER};

pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const PROBE_HEADER: &str =
    "task,accuracy,train_size,test_size,label_fraction,seed,checkpoint_id,dataset";
pub const PROBE_PER_CLASS_HEADER: &str = "task,class,accuracy,checkpoint_id";

pub(super) fn dispatch(cmd: &Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Synth(a) => synth(a, out),
        Command::Pretrain(a) => pretrain_cmd(a, out),
        Command::Probe(a) => probe(a, out),
        Command::Sweep(a) => sweep(a, out),
        Command::Ablate(a) => ablate(a, out),
        Command::Features(a) => features(a, out),
        Command::Maskplan(a) => maskplan(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// The corpus and its provenance string for the `dataset` column.
fn load_data(args: &DataArgs, seed: u64) -> Result<(Corpus, String)> {
    match &args.data {
        Some(p) => {
            let manifest = if p.is_dir() { p.join("manifest.jsonl") } else { p.clone() };
            Ok((load_manifest(&manifest)?, manifest.display().to_string()))
        }
        None => {
            let spec = SynthSpec {
                seed,
                ..SynthSpec::default()
            };
            Ok((synth_corpus(&spec)?, format!("synthetic:seed={seed}")))
        }
    }
}

fn load_noise(args: &DataArgs) -> Result<NoiseBank> {
    match &args.noise_dir {
        Some(d) => NoiseBank::from_dir(d),
        None => Ok(NoiseBank::Synthetic),
    }
}

/// Preset, then the config file, then `--seed`.
fn load_config(args: &ConfigArgs, seed: u64) -> Result<RunConfig> {
    let mut cfg = match (&args.config, args.preset) {
        (Some(path), preset) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut overlay: serde_json::Value = serde_json::from_str(&text)?;
            if let (Some(p), serde_json::Value::Object(map)) = (preset, &mut overlay) {
                map.entry("preset")
                    .or_insert_with(|| serde_json::Value::String(p.name().into()));
            }
            RunConfig::from_json(&overlay.to_string())?
        }
        (None, preset) => RunConfig::preset(preset.unwrap_or_default()),
    };
    cfg.train.seed = seed;
    Ok(cfg)
}

fn apply_train_overrides(cfg: &mut RunConfig, o: &TrainOverrides) -> Result<()> {
    let t = &mut cfg.train;
    if let Some(v) = o.epochs {
        t.epochs = v;
    }
    if let Some(v) = o.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = o.warmup_steps {
        t.warmup_steps = v;
    }
    if let Some(v) = o.lr {
        t.base_lr = v;
    }
    if let Some(l) = &o.lambda {
        if l.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "--lambda takes 4 weights, got {}",
                l.len()
            )));
        }
        t.weights = LossWeights {
            sample: l[0],
            frame: l[1],
            phoneme: l[2],
            sentence: l[3],
        };
    }
    cfg.validate()
}

fn parse_ablation(name: &str) -> Result<Ablation> {
    Ablation::by_name(name).ok_or_else(|| Error::UnknownKind(name.to_string()))
}

/// The model under `--checkpoint` and its id, or a random encoder of the
/// configured size identified by its parameter fingerprint.
fn load_or_init(checkpoint: Option<&Path>, enc: &EncoderConfig, seed: u64) -> Result<(MgfModel, String)> {
    match checkpoint {
        Some(p) => Ok((load_model(p)?, checkpoint_id(p)?)),
        None => {
            let model = MgfModel::new(enc.clone(), seed)?;
            let id = model_fingerprint(&model);
            Ok((model, id))
        }
    }
}

fn synth(a: &SynthArgs, out: &mut dyn Write) -> Result<i32> {
    let spec = SynthSpec {
        class_count: a.classes,
        speaker_count: a.speakers,
        utterances_per_speaker: a.utt,
        utterance_seconds: a.seconds,
        seed: a.common.seed,
    };
    let corpus = synth_corpus(&spec)?;
    let manifest = write_corpus(&corpus, &a.common.out)?;
    emit(
        out,
        &format!(
            "wrote {} utterances ({} classes, {} speakers) to {}\n",
            corpus.len(),
            corpus.class_count,
            corpus.speaker_count,
            manifest.display()
        ),
    )?;
    Ok(EXIT_OK)
}

/// `(step, l_total)` pairs of a training log.
fn read_loss_curve(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let total_col = LOG_HEADER.split(',').count() - 1;
    Ok(text
        .lines()
        .skip(1)
        .filter_map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            Some((cols.first()?.parse().ok()?, cols.get(total_col)?.parse().ok()?))
        })
        .collect())
}

fn pretrain_cmd(a: &PretrainArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = load_config(&a.config, a.common.seed)?;
    apply_train_overrides(&mut cfg, &a.train)?;
    if let Some(name) = &a.ablation {
        cfg.train.ablation = parse_ablation(name)?;
        cfg.validate()?;
    }
    let (corpus, dataset) = load_data(&a.data, a.common.seed)?;
    let bank = load_noise(&a.data)?;
    let dir = &a.common.out;
    create_dir(dir)?;
    write_file(&dir.join(RUN_CONFIG_FILE), &cfg.to_json())?;
    log::info!("pretraining on {dataset}: {} utterances", corpus.len());
    let outcome = pretrain(&corpus, &cfg.encoder, &cfg.train, &bank, dir, a.resume)?;
    let curve = read_loss_curve(&dir.join(LOG_FILE))?;
    let chart = Chart {
        title: "Pretraining loss".into(),
        x_label: "step".into(),
        y_label: "weighted total loss".into(),
        ..Chart::default()
    };
    write_file(
        &dir.join("train_loss.svg"),
        &line_chart_svg(&chart, &[Series { name: "l_total".into(), points: curve.clone() }]),
    )?;
    let mut text = format!(
        "steps {} (this run {})\n",
        outcome.state.step,
        outcome.reports.len()
    );
    if let Some(&(_, last)) = curve.last() {
        let _ = writeln!(text, "final loss {last:.4}");
    }
    let _ = writeln!(text, "checkpoint {}", outcome.checkpoint.display());
    let _ = writeln!(text, "log {}", outcome.log.display());
    emit(out, &text)?;
    Ok(EXIT_OK)
}

fn probe_kinds(task: &str) -> Result<Vec<ProbeKind>> {
    if task == "all" {
        Ok(ProbeKind::ALL.to_vec())
    } else {
        Ok(vec![task.parse()?])
    }
}

fn probe(a: &ProbeArgs, out: &mut dyn Write) -> Result<i32> {
    let kinds = probe_kinds(&a.task)?;
    let mut cfg = load_config(&a.config, a.common.seed)?;
    if let Some(e) = a.probe_epochs {
        cfg.probe.epochs = e;
        cfg.validate()?;
    }
    let tasks = kinds
        .iter()
        .map(|&k| ProbeTask::new(k, a.label_fraction, a.common.seed))
        .collect::<Result<Vec<_>>>()?;
    let (corpus, dataset) = load_data(&a.data, a.common.seed)?;
    let (model, id) = load_or_init(a.checkpoint.as_deref(), &cfg.encoder, a.common.seed)?;
    let dir = &a.common.out;
    create_dir(dir)?;
    let cache = a.cache.clone().unwrap_or_else(|| dir.join("cache"));
    let mut csv = format!("{PROBE_HEADER}\n");
    let mut per_class = format!("{PROBE_PER_CLASS_HEADER}\n");
    let mut text = String::new();
    for task in &tasks {
        let r = run_probe(&model, &id, &corpus, task, &cfg.probe, Some(&cache))?;
        let name = task.kind.name();
        let _ = writeln!(
            csv,
            "{name},{},{},{},{},{},{id},{dataset}",
            r.accuracy, r.train_size, r.test_size, task.label_fraction, task.seed
        );
        for (c, acc) in r.per_class_accuracy.iter().enumerate() {
            let acc = acc.map_or_else(String::new, |v| v.to_string());
            let _ = writeln!(per_class, "{name},{c},{acc},{id}");
        }
        let _ = writeln!(
            text,
            "{name:<18} accuracy {:.4}  (train {}, test {})",
            r.accuracy, r.train_size, r.test_size
        );
    }
    write_file(&dir.join("probe_results.csv"), &csv)?;
    write_file(&dir.join("probe_per_class.csv"), &per_class)?;
    emit(out, &text)?;
    Ok(EXIT_OK)
}

fn sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = load_config(&a.config, a.common.seed)?;
    if let Some(e) = a.finetune_epochs {
        cfg.finetune.epochs = e;
    }
    if let Some(e) = a.probe_epochs {
        cfg.probe.epochs = e;
    }
    cfg.validate()?;
    let sweep_cfg = SweepConfig {
        fractions: a.fractions.clone(),
        seeds: a.seeds.clone().unwrap_or_else(|| vec![a.common.seed]),
        probe: cfg.probe.clone(),
        finetune: cfg.finetune.clone(),
    };
    if sweep_cfg.seeds.is_empty() || sweep_cfg.fractions.is_empty() {
        return Err(Error::InvalidArgument("fractions and seeds must be nonempty".into()));
    }
    let (corpus, dataset) = load_data(&a.data, a.common.seed)?;
    let (model, id) = load_or_init(a.checkpoint.as_deref(), &cfg.encoder, a.common.seed)?;
    let dir = &a.common.out;
    create_dir(dir)?;
    let rows = data_efficiency_sweep(&model, &id, &corpus, &sweep_cfg, Some(&dir.join("cache")))?;
    let csv = sweep_csv(&rows, &dataset);
    write_file(&dir.join("sweep.csv"), &csv)?;

    let mean_curve = |mode: SweepMode| -> Vec<(f64, f64)> {
        sweep_cfg
            .fractions
            .iter()
            .map(|&f| {
                let accs: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.mode == mode && r.fraction == f)
                    .map(|r| r.accuracy)
                    .collect();
                (f, accs.iter().sum::<f64>() / accs.len().max(1) as f64)
            })
            .collect()
    };
    let chart = Chart {
        title: "Frame-class accuracy against label fraction".into(),
        x_label: "label fraction".into(),
        y_label: "accuracy".into(),
        log_x: true,
        ..Chart::default()
    };
    let series: Vec<Series> = SweepMode::ALL
        .iter()
        .map(|&m| Series {
            name: m.name().into(),
            points: mean_curve(m),
        })
        .collect();
    write_file(&dir.join("sweep.svg"), &line_chart_svg(&chart, &series))?;
    emit(out, &csv)?;
    Ok(EXIT_OK)
}

fn ablate(a: &AblateArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = load_config(&a.config, a.common.seed)?;
    apply_train_overrides(&mut cfg, &a.train)?;
    if let Some(e) = a.probe_epochs {
        cfg.probe.epochs = e;
        cfg.validate()?;
    }
    let variants: Vec<(&str, Ablation)> = match &a.variants {
        None => Ablation::variants().to_vec(),
        Some(names) => names
            .iter()
            .map(|n| Ok((n.as_str(), parse_ablation(n)?)))
            .collect::<Result<_>>()?,
    };
    let (corpus, dataset) = load_data(&a.data, a.common.seed)?;
    let bank = load_noise(&a.data)?;
    let dir = &a.common.out;
    create_dir(dir)?;
    write_file(&dir.join(RUN_CONFIG_FILE), &cfg.to_json())?;
    let rows = ablation_suite(
        &corpus,
        &cfg.encoder,
        &cfg.train,
        &bank,
        &cfg.probe,
        &variants,
        dir,
        Some(&dir.join("cache")),
    )?;
    let csv = ablation_csv(&rows, &dataset);
    write_file(&dir.join("ablation.csv"), &csv)?;
    emit(out, &csv)?;
    Ok(if rows.iter().any(|r| r.error.is_some()) {
        EXIT_RUNTIME
    } else {
        EXIT_OK
    })
}

fn matrix_csv(values: &[f64], n_rows: usize, n_cols: usize) -> String {
    let mut s = String::from("frame");
    for j in 0..n_cols {
        let _ = write!(s, ",d{j}");
    }
    s.push('\n');
    for i in 0..n_rows {
        let _ = write!(s, "{i}");
        for v in &values[i * n_cols..(i + 1) * n_cols] {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned())
}

fn features(a: &FeaturesArgs, out: &mut dyn Write) -> Result<i32> {
    let kinds: Vec<TargetKind> = if a.kind.iter().any(|k| k == "all") {
        TargetKind::ALL.to_vec()
    } else {
        a.kind.iter().map(|k| k.parse()).collect::<Result<_>>()?
    };
    let waves: Vec<(String, crate::dsp::Waveform)> = match &a.wav {
        Some(p) => vec![(file_stem(p), read_wav(p)?)],
        None => {
            let (corpus, _) = load_data(&a.data, a.common.seed)?;
            corpus.utterances.into_iter().map(|u| (u.id, u.wave)).collect()
        }
    };
    let model = a.checkpoint.as_deref().map(load_model).transpose()?;
    let dir = &a.common.out;
    let mut text = String::new();
    for (id, wave) in &waves {
        for &k in &kinds {
            let FeatureMatrix {
                values,
                n_frames,
                n_dims,
                ..
            } = k.extract(wave)?;
            let path = dir.join("features").join(format!("{id}.{}.csv", k.name()));
            write_file(&path, &matrix_csv(&values, n_frames, n_dims))?;
            let _ = writeln!(text, "{id} {:<8} {n_frames} x {n_dims}", k.name());
        }
        if let Some(m) = &model {
            let rep = m.represent(wave)?;
            let path = dir.join("representations").join(format!("{id}.csv"));
            write_file(&path, &matrix_csv(rep.values.data(), rep.n_frames(), rep.dim()))?;
            let _ = writeln!(text, "{id} encoder  {} x {}", rep.n_frames(), rep.dim());
        }
    }
    let _ = writeln!(text, "wrote {} files under {}", waves.len() * (kinds.len() + usize::from(model.is_some())), dir.display());
    emit(out, &text)?;
    Ok(EXIT_OK)
}

fn maskplan(a: &MaskplanArgs, out: &mut dyn Write) -> Result<i32> {
    let plan = plan_masks(a.frames, a.common.seed);
    let mut text = format!("frames {} seed {}\n", plan.n_frames, plan.seed);
    if plan.too_short {
        text.push_str("crop shorter than one segment: nothing masked\n");
    }
    for &(s, e) in &plan.segments {
        let _ = writeln!(text, "segment {s}..{e}");
    }
    let _ = writeln!(text, "coverage {:.1}%", 100.0 * plan.coverage());
    if let Some(dir) = &a.common.out {
        write_file(&dir.join("maskplan.json"), &serde_json::to_string_pretty(&plan)?)?;
    }
    emit(out, &text)?;
    Ok(EXIT_OK)
}

fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let enc = match a.scale.as_str() {
        "tiny" => EncoderConfig::tiny(),
        "desk" => EncoderConfig::desk(),
        other => return Err(Error::UnknownKind(format!("scale {other} (expected tiny or desk)"))),
    };
    if !(a.tolerance > 0.0) || a.coords == 0 {
        return Err(Error::InvalidArgument("tolerance and coords must be > 0".into()));
    }
    let mut text = String::from("primitive max_rel_error\n");
    let mut worst_primitive = 0.0f64;
    for (name, r) in primitive_gradchecks(a.common.seed)? {
        let _ = writeln!(text, "{name:<24} {:.3e}", r.max_rel_error);
        worst_primitive = worst_primitive.max(r.max_rel_error);
    }
    let full = full_loss_gradcheck(&enc, a.common.seed, a.coords)?;
    let _ = writeln!(
        text,
        "full loss ({} model, {} coordinates) max relative error {:.3e}",
        a.scale, full.checked, full.max_rel_error
    );
    let pass = worst_primitive < a.tolerance && full.passes(a.tolerance);
    let _ = writeln!(text, "{} (tolerance {:e})", if pass { "PASS" } else { "FAIL" }, a.tolerance);
    if let Some(dir) = &a.common.out {
        write_file(&dir.join("gradcheck.txt"), &text)?;
    }
    emit(out, &text)?;
    Ok(if pass { EXIT_OK } else { EXIT_RUNTIME })
}
