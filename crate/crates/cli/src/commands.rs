use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use log::info;
use voltavision::data::{decode_image, kfold_split, preprocess, LabeledDataset, PreprocessConfig};
use voltavision::eval::{cross_validate, format_table, predict_probabilities};
use voltavision::model::encode_checkpoint;
use voltavision::model::{load_checkpoint, save_checkpoint};
use voltavision::train::{fit, DatasetSplit, TrainConfig};
use voltavision::{ArchitectureConfig, ModelGraph, TrainablePolicy};

use crate::manifest::{hash_bytes, manifest_path_for, RunManifest, RunStatus};
use crate::source::{classes_path_for, load_sources, read_class_names, write_class_names};
use crate::{
    selfcheck, Cli, CliError, CrossvalArgs, FinetuneArgs, InitArgs, InspectArgs, PredictArgs, PretrainArgs,
    ReplayArgs, SelfcheckArgs, SurgeryArgs, TrainArgs,
};

fn train_config(t: &TrainArgs, policy: TrainablePolicy) -> Result<TrainConfig, CliError> {
    let cfg = TrainConfig {
        epochs: t.epochs,
        base_lr: t.lr,
        momentum: t.momentum,
        lr_step: t.lr_step,
        lr_gamma: t.lr_gamma,
        batch_size: t.batch_size,
        seed: t.seed,
        trainable_policy: policy,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train_argv(t: &TrainArgs) -> Vec<String> {
    vec![
        "--epochs".into(),
        t.epochs.to_string(),
        "--lr".into(),
        t.lr.to_string(),
        "--momentum".into(),
        t.momentum.to_string(),
        "--lr-step".into(),
        t.lr_step.to_string(),
        "--lr-gamma".into(),
        t.lr_gamma.to_string(),
        "--batch-size".into(),
        t.batch_size.to_string(),
        "--seed".into(),
        t.seed.to_string(),
    ]
}

fn init_argv(init: &InitArgs) -> Vec<String> {
    let mut argv = match &init.from {
        Some(p) => vec!["--from".into(), p.display().to_string()],
        None => vec!["--scratch".into()],
    };
    if init.unfreeze {
        argv.push("--unfreeze".into());
    }
    argv
}

fn config_map(cfg: &TrainConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("epochs".into(), cfg.epochs.to_string());
    m.insert("base_lr".into(), cfg.base_lr.to_string());
    m.insert("momentum".into(), cfg.momentum.to_string());
    m.insert("lr_step".into(), cfg.lr_step.to_string());
    m.insert("lr_gamma".into(), cfg.lr_gamma.to_string());
    m.insert("batch_size".into(), cfg.batch_size.to_string());
    m.insert("seed".into(), cfg.seed.to_string());
    m.insert("trainable_policy".into(), cfg.trainable_policy.name().to_owned());
    m.insert("loss_reduction".into(), "mean".into());
    m.insert("input".into(), "3x32x32, (x - 0.5) / 0.5".into());
    m
}

fn policy_for(init: &InitArgs) -> TrainablePolicy {
    if init.scratch || init.unfreeze {
        TrainablePolicy::All
    } else {
        TrainablePolicy::HeadOnly
    }
}

/// Loads `--from` or builds a fresh network, with a head sized for
/// `classes`.
fn initial_model(init: &InitArgs, classes: usize, seed: u64) -> Result<ModelGraph, CliError> {
    let expected = ArchitectureConfig::voltavision(classes);
    match &init.from {
        Some(path) => {
            let mut m = load_checkpoint(path)?;
            if !m.config().same_backbone(&expected) {
                return Err(CliError::Config(format!(
                    "{}: backbone does not match the standard architecture",
                    path.display()
                )));
            }
            m.replace_head(classes, seed)?;
            Ok(m)
        }
        None => Ok(ModelGraph::build(expected, seed)?),
    }
}

fn all_indices(ds: &LabeledDataset) -> Vec<usize> {
    (0..ds.len()).collect()
}

fn log_history(history: &[voltavision::train::EpochRecord]) {
    for r in history {
        info!(
            "epoch {:>2}  lr {:.1e}  loss {:.4}  train acc {:.2}%",
            r.epoch + 1,
            r.lr,
            r.train.mean_loss,
            100.0 * r.train.accuracy
        );
    }
}

fn save_model(model: &ModelGraph, out: &Path, class_names: &[String]) -> Result<usize, CliError> {
    let size = save_checkpoint(model, out)?;
    write_class_names(&classes_path_for(out), class_names)?;
    Ok(size)
}

fn finish(manifest: &mut RunManifest, path: &Path) -> Result<(), CliError> {
    manifest.complete()?;
    manifest.write(path)
}

pub fn pretrain(a: &PretrainArgs) -> Result<(), CliError> {
    let cfg = train_config(&a.train, TrainablePolicy::All)?;
    let mut ds = load_sources(&a.data)?;
    if !a.class_filter.is_empty() {
        ds = ds.filter_classes(&a.class_filter)?;
    }
    let classes = ds.num_classes();
    if let Some(expected) = a.classes {
        if expected != classes {
            return Err(CliError::Config(format!(
                "--classes {expected} but the data has {classes} classes"
            )));
        }
    }

    let mut argv = vec!["pretrain".to_string()];
    for d in &a.data {
        argv.extend(["--data".into(), d.to_string()]);
    }
    argv.extend(["--classes".into(), classes.to_string()]);
    if !a.class_filter.is_empty() {
        argv.extend(["--class-filter".into(), a.class_filter.join(",")]);
    }
    argv.extend(train_argv(&a.train));
    argv.extend(["--out".into(), a.out.display().to_string()]);

    let mut config = config_map(&cfg);
    config.insert("classes".into(), classes.to_string());
    let mut manifest = RunManifest::new("pretrain", argv, config, cfg.seed);
    for d in &a.data {
        manifest.add_input(d.path())?;
    }
    manifest.add_output(&a.out);
    manifest.add_output(&classes_path_for(&a.out));
    let manifest_path = manifest_path_for(&a.out);
    manifest.write(&manifest_path)?;

    info!("pretraining on {} ({} samples, {classes} classes)", ds.source, ds.len());
    let mut model = ModelGraph::build(ArchitectureConfig::voltavision(classes), cfg.seed)?;
    let idx = all_indices(&ds);
    let history = fit(&mut model, DatasetSplit::new(&ds, &idx), &cfg)?;
    log_history(&history);
    model.set_provenance(format!(
        "pretrained on {}; {} samples; {classes} classes; {} epochs; seed {}",
        ds.source,
        ds.len(),
        cfg.epochs,
        cfg.seed
    ));
    let size = save_model(&model, &a.out, &ds.class_names)?;
    finish(&mut manifest, &manifest_path)?;

    let last = history.last().expect("at least one epoch");
    println!(
        "wrote {} ({size} bytes); final loss {:.4}, train accuracy {:.2}%",
        a.out.display(),
        last.train.mean_loss,
        100.0 * last.train.accuracy
    );
    Ok(())
}

pub fn surgery(a: &SurgeryArgs) -> Result<(), CliError> {
    let argv = vec![
        "surgery".into(),
        "--from".into(),
        a.from.display().to_string(),
        "--classes".into(),
        a.classes.to_string(),
        "--seed".into(),
        a.seed.to_string(),
        "--out".into(),
        a.out.display().to_string(),
    ];
    let mut config = BTreeMap::new();
    config.insert("classes".into(), a.classes.to_string());
    let mut manifest = RunManifest::new("surgery", argv, config, a.seed);
    manifest.add_input(&a.from)?;
    manifest.add_output(&a.out);
    let manifest_path = manifest_path_for(&a.out);
    manifest.write(&manifest_path)?;

    let mut model = load_checkpoint(&a.from)?;
    let before = model.num_classes();
    model.replace_head(a.classes, a.seed)?;
    let size = save_checkpoint(&model, &a.out)?;
    finish(&mut manifest, &manifest_path)?;
    println!(
        "replaced {before}-way head with {}-way head; wrote {} ({size} bytes)",
        a.classes,
        a.out.display()
    );
    Ok(())
}

pub fn finetune(a: &FinetuneArgs) -> Result<(), CliError> {
    let policy = policy_for(&a.init);
    let cfg = train_config(&a.train, policy)?;
    let ds = load_sources(&[crate::source::DataSource::Folder(a.data.clone())])?;
    let classes = ds.num_classes();

    let mut argv = vec!["finetune".to_string()];
    argv.extend(init_argv(&a.init));
    argv.extend(["--data".into(), a.data.display().to_string()]);
    argv.extend(train_argv(&a.train));
    argv.extend(["--out".into(), a.out.display().to_string()]);
    let mut config = config_map(&cfg);
    config.insert("classes".into(), classes.to_string());
    let mut manifest = RunManifest::new("finetune", argv, config, cfg.seed);
    if let Some(from) = &a.init.from {
        manifest.add_input(from)?;
    }
    manifest.add_input(&a.data)?;
    manifest.add_output(&a.out);
    manifest.add_output(&classes_path_for(&a.out));
    let manifest_path = manifest_path_for(&a.out);
    manifest.write(&manifest_path)?;

    let mut model = initial_model(&a.init, classes, cfg.seed)?;
    let backbone_before = hash_bytes(&model.backbone_bytes());
    info!(
        "fine-tuning on {} ({} samples, {classes} classes), policy {}",
        ds.source,
        ds.len(),
        policy.name()
    );
    let idx = all_indices(&ds);
    let history = fit(&mut model, DatasetSplit::new(&ds, &idx), &cfg)?;
    log_history(&history);
    let size = save_model(&model, &a.out, &ds.class_names)?;
    finish(&mut manifest, &manifest_path)?;

    let last = history.last().expect("at least one epoch");
    let backbone_after = hash_bytes(&model.backbone_bytes());
    println!(
        "wrote {} ({size} bytes); final loss {:.4}, train accuracy {:.2}%; backbone {}",
        a.out.display(),
        last.train.mean_loss,
        100.0 * last.train.accuracy,
        if backbone_before == backbone_after { "unchanged" } else { "updated" }
    );
    Ok(())
}

pub fn crossval(a: &CrossvalArgs) -> Result<(), CliError> {
    if a.folds < 2 {
        return Err(CliError::Config(format!("--folds must be at least 2, got {}", a.folds)));
    }
    let policy = policy_for(&a.init);
    let cfg = train_config(&a.train, policy)?;
    let ds = load_sources(&[crate::source::DataSource::Folder(a.data.clone())])?;
    let classes = ds.num_classes();
    let label = a.label.clone().unwrap_or_else(|| match &a.init.from {
        Some(p) => p.file_stem().map_or("checkpoint".into(), |s| s.to_string_lossy().into_owned()),
        None => "None".into(),
    });

    let mut argv = vec!["crossval".to_string()];
    argv.extend(init_argv(&a.init));
    argv.extend(["--data".into(), a.data.display().to_string()]);
    argv.extend(["--folds".into(), a.folds.to_string()]);
    argv.extend(train_argv(&a.train));
    argv.extend(["--report".into(), a.report.display().to_string()]);
    argv.extend(["--label".into(), label.clone()]);
    let mut config = config_map(&cfg);
    config.insert("folds".into(), a.folds.to_string());
    config.insert("classes".into(), classes.to_string());
    let mut manifest = RunManifest::new("crossval", argv, config, cfg.seed);
    if let Some(from) = &a.init.from {
        manifest.add_input(from)?;
    }
    manifest.add_input(&a.data)?;
    manifest.add_output(&a.report);
    let manifest_path = manifest_path_for(&a.report);
    manifest.write(&manifest_path)?;

    let pretrained = match &a.init.from {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    let plan = kfold_split(&ds, a.folds, cfg.seed)?;
    info!(
        "{}-fold cross-validation on {} ({} samples), policy {}",
        a.folds,
        ds.source,
        ds.len(),
        policy.name()
    );
    let started = Instant::now();
    let report = cross_validate(pretrained.as_ref(), &ds, &plan, &cfg)?;
    info!("finished in {:.1}s", started.elapsed().as_secs_f64());
    std::fs::write(&a.report, report.to_text()).map_err(|e| CliError::io(&a.report, e))?;
    finish(&mut manifest, &manifest_path)?;

    for f in &report.folds {
        println!(
            "fold {}: accuracy {:.2}  precision {:.2}  recall {:.2}  f1 {:.2}",
            f.fold,
            100.0 * f.metrics.accuracy,
            100.0 * f.metrics.precision,
            100.0 * f.metrics.recall,
            100.0 * f.metrics.f1
        );
    }
    let mut row = report.table_row(&label);
    let sized = initial_model(&a.init, classes, cfg.seed)?;
    row.model_size_bytes = Some(encode_checkpoint(&sized).len());
    print!("{}", format_table(&[row]));
    println!("report written to {}", a.report.display());
    Ok(())
}

pub fn predict(a: &PredictArgs) -> Result<(), CliError> {
    let model = load_checkpoint(&a.model)?;
    let classes = model.num_classes();
    let names_path = a.class_names.clone().unwrap_or_else(|| classes_path_for(&a.model));
    let names = if a.class_names.is_some() || names_path.exists() {
        let names = read_class_names(&names_path)?;
        if names.len() != classes {
            return Err(CliError::Config(format!(
                "{} lists {} class names but the model has {classes} outputs",
                names_path.display(),
                names.len()
            )));
        }
        names
    } else {
        (0..classes).map(|i| format!("class_{i}")).collect()
    };

    let image = preprocess(&decode_image(&a.image)?, &PreprocessConfig::default())?;
    let probs = predict_probabilities(&model, &image)?.remove(0);
    let best = voltavision::eval::argmax(&probs);

    let mut order: Vec<usize> = (0..classes).collect();
    if a.sorted {
        order.sort_by(|&i, &j| probs[j].total_cmp(&probs[i]).then(i.cmp(&j)));
    }
    println!("prediction: {}", names[best]);
    let width = names.iter().map(String::len).max().unwrap_or(0);
    for &i in &order {
        println!("  {:<width$}  {:.6}", names[i], probs[i]);
    }
    let dist: Vec<String> = order.iter().map(|&i| format!("{}={:.6}", names[i], probs[i])).collect();
    println!(
        "RESULT\tclass={}\tindex={best}\tconfidence={:.6}\tprobs={}",
        names[best],
        probs[best],
        dist.join(",")
    );
    Ok(())
}

pub fn inspect(a: &InspectArgs) -> Result<(), CliError> {
    let bytes = std::fs::read(&a.model).map_err(|e| CliError::io(&a.model, e))?;
    let model = voltavision::model::decode_checkpoint(&bytes)?;
    let cfg = model.config();
    let counts = model.count_parameters();
    println!("file:        {} ({} bytes)", a.model.display(), bytes.len());
    println!("sha256:      {}", hash_bytes(&bytes));
    println!(
        "provenance:  {}",
        if model.provenance().is_empty() { "(none)" } else { model.provenance() }
    );
    println!(
        "input:       {}x{}x{}",
        cfg.input_channels, cfg.input_h, cfg.input_w
    );
    println!("filters:     {:?}", cfg.conv_filters);
    println!(
        "kernel {} stride {} padding {}; pool {}/{}",
        cfg.kernel, cfg.stride, cfg.padding, cfg.pool_kernel, cfg.pool_stride
    );
    println!("classes:     {}", cfg.num_classes);
    println!("parameters:  {}", counts.parameters);
    println!("with stats:  {}", counts.with_stats);
    println!("backbone:    {}", hash_bytes(&model.backbone_bytes()));
    println!("layers:");
    for (i, layer) in model.layers().iter().enumerate() {
        let tensors: Vec<String> = layer
            .tensor_shapes()
            .into_iter()
            .map(|(role, dims)| format!("{role:?}{dims:?}"))
            .collect();
        println!("  {i:>2} {:<10} {}", format!("{:?}", layer.kind()), tensors.join(" "));
    }
    Ok(())
}

pub fn selfcheck(a: &SelfcheckArgs) -> Result<(), CliError> {
    let lines = selfcheck::run(a.seed);
    let failed = lines.iter().filter(|l| !l.passed).count();
    for l in &lines {
        println!("[{}] {}: {}", if l.passed { "PASS" } else { "FAIL" }, l.name, l.detail);
    }
    println!("{} of {} checks passed", lines.len() - failed, lines.len());
    if failed > 0 {
        return Err(CliError::Selfcheck(failed));
    }
    Ok(())
}

pub fn replay(a: &ReplayArgs) -> Result<(), CliError> {
    use clap::Parser;

    let recorded = RunManifest::read(&a.manifest)?;
    if recorded.status != RunStatus::Complete {
        return Err(CliError::Config(format!(
            "{}: the recorded run did not complete",
            a.manifest.display()
        )));
    }
    let cli = Cli::try_parse_from(std::iter::once("voltavision".to_string()).chain(recorded.argv.iter().cloned()))
        .map_err(|e| CliError::Config(format!("manifest arguments do not parse: {e}")))?;
    if matches!(cli.command, crate::Command::Replay(_)) {
        return Err(CliError::Config("a replay manifest cannot replay itself".into()));
    }
    crate::run(cli)?;

    let mut mismatches = 0;
    for out in &recorded.outputs {
        let now = crate::manifest::hash_path(&out.path)?;
        let same = out.sha256.as_deref() == Some(now.as_str());
        println!("{} {}", if same { "identical" } else { "DIFFERENT" }, out.path.display());
        mismatches += usize::from(!same);
    }
    if mismatches > 0 {
        return Err(CliError::Config(format!("{mismatches} output(s) differ from the manifest")));
    }
    Ok(())
}
