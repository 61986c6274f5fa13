use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use roast_core::dataset::{load_dataset, split_dataset, synthesize_dataset, LabeledSample, SynthConfig};
use roast_core::eval::{evaluate, evaluate_with, export_curves, EvaluationReport};
use roast_core::imaging::{
    load_image, preprocess_stages, save_mask_png, save_png, ColorSpace, PreprocessConfig, RasterImage,
};
use roast_core::model::{
    build_model, load_model, predict, save_model, train, train_kfold, BackboneSpec, ModelArtifact, TrainingConfig,
};
use roast_core::RoastClass;
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::error::{usage, CliError, CliResult};
use crate::manifest::{write_json, write_text, RunManifest};

pub const MODEL_FILE: &str = "model.roast";
const DEFAULT_LR: f64 = 1e-5;

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Kfold(a) => kfold_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let mut config = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            toml::from_str::<SynthConfig>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    config.per_class_count = a.per_class;
    config.seed = a.seed;
    config.image_width = a.width;
    config.image_height = a.height;
    usage(config.validate())?;

    let mut run = RunManifest::start("synth", Some(a.seed));
    let started = Instant::now();
    let manifest = synthesize_dataset(&config, &a.out)?;
    println!(
        "wrote {} images ({} per class) to {} in {:.1}s",
        manifest.files.len(),
        config.per_class_count,
        a.out.display(),
        started.elapsed().as_secs_f64()
    );
    run.config = json!(config);
    run.outputs = vec!["manifest.json".into()];
    run.outputs.extend(RoastClass::ALL.iter().map(|c| format!("{c}/")));
    run.summary = json!({ "images": manifest.files.len() });
    run.finish(&a.out)?;
    Ok(())
}

fn load_preprocess(path: Option<&Path>) -> CliResult<PreprocessConfig> {
    match path {
        Some(p) => usage(PreprocessConfig::load(p)),
        None => Ok(PreprocessConfig::default()),
    }
}

/// Hue, saturation and value shown as red, green and blue.
fn hsv_false_color(hsv: &RasterImage) -> roast_core::Result<RasterImage> {
    let data = hsv.data().chunks_exact(3).flat_map(|p| [p[0] / 360.0, p[1], p[2]]).collect();
    RasterImage::new(hsv.width(), hsv.height(), 3, ColorSpace::Float01, data)
}

fn preprocess_cmd(a: PreprocessArgs) -> CliResult<()> {
    let config = load_preprocess(a.preprocess.as_deref())?;
    usage(config.validate())?;
    let image = load_image(&a.image)?;
    let stages = preprocess_stages(&image, &config)?;
    create_dir(&a.out)?;
    let mut run = RunManifest::start("preprocess", None);
    let outputs: [(&str, &RasterImage); 4] = [
        ("1-original.png", &image),
        ("2-blurred.png", &stages.blurred),
        ("5-masked.png", &stages.masked),
        ("6-resized.png", &stages.resized),
    ];
    for (name, img) in outputs {
        let p = a.out.join(name);
        save_png(img, &p)?;
        run.output(&a.out, &p);
    }
    let p = a.out.join("3-hsv.png");
    save_png(&hsv_false_color(&stages.hsv)?, &p)?;
    run.output(&a.out, &p);
    let p = a.out.join("4-mask.png");
    save_mask_png(&stages.mask, &p)?;
    run.output(&a.out, &p);
    run.outputs.sort();

    println!("foreground {:.1}% of pixels; stages written to {}", 100.0 * stages.mask.fraction(), a.out.display());
    run.config = json!({ "image": a.image, "preprocess": config, "fingerprint": config.fingerprint() });
    run.summary = json!({ "foreground_fraction": stages.mask.fraction() });
    run.finish(&a.out)?;
    Ok(())
}

fn training_config(f: &TrainingFlags) -> CliResult<TrainingConfig> {
    let mut c = match &f.config {
        Some(p) => usage(TrainingConfig::load(p))?,
        None => TrainingConfig::default(),
    };
    if let Some(v) = f.epochs {
        c.epochs = v;
    }
    if let Some(v) = f.lr {
        c.learning_rate = v;
    }
    if let Some(v) = f.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = f.dropout {
        c.dropout_rate = v;
    }
    if let Some(v) = f.hidden {
        c.hidden_units = v;
    }
    if let Some(v) = &f.backbone {
        c.backbone = BackboneSpec { name: v.clone(), weights: c.backbone.weights.clone() };
    }
    if let Some(v) = &f.weights {
        c.backbone.weights = Some(v.clone());
    }
    if f.no_augment {
        c.augment = false;
    }
    if let Some(v) = f.seed {
        c.seed = v;
    }
    Ok(c)
}

fn lr_notes(config: &TrainingConfig) -> Vec<String> {
    if config.learning_rate != DEFAULT_LR {
        vec![format!("learning rate {} (default {DEFAULT_LR})", config.learning_rate)]
    } else {
        Vec::new()
    }
}

/// Configs for a training run, validated before any file is touched.
fn prepare_training(f: &TrainingFlags, command: &str) -> CliResult<(TrainingConfig, PreprocessConfig, PathBuf)> {
    let config = training_config(f)?;
    let preprocess = load_preprocess(f.preprocess.as_deref())?;
    usage(config.validate())?;
    usage(preprocess.validate())?;
    if preprocess.target_size() != (config.target_width, config.target_height) {
        return Err(CliError::Usage(format!(
            "preprocessing target {:?} differs from the model input {}x{}",
            preprocess.target_size(),
            config.target_width,
            config.target_height
        )));
    }
    let out = f.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command));
    Ok((config, preprocess, out))
}

fn load_samples(root: &Path) -> CliResult<Vec<LabeledSample>> {
    Ok(load_dataset(root)?.samples)
}

fn write_report(
    report: &EvaluationReport,
    dir: &Path,
    stem: &str,
    run: &mut RunManifest,
    root: &Path,
) -> CliResult<()> {
    let json_path = dir.join(format!("{stem}.json"));
    write_text(&json_path, &(report.to_json()? + "\n"))?;
    let txt_path = dir.join(format!("{stem}.txt"));
    write_text(&txt_path, &report.to_text())?;
    run.output(root, &json_path);
    run.output(root, &txt_path);
    Ok(())
}

#[derive(Serialize)]
struct SplitListing {
    seed: u64,
    train: Vec<String>,
    validation: Vec<String>,
    test: Vec<String>,
}

fn ids(samples: &[LabeledSample]) -> Vec<String> {
    samples.iter().map(LabeledSample::id).collect()
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    let (config, preprocess, out) = prepare_training(&a.flags, "train")?;
    let samples = load_samples(&a.flags.data)?;
    let split = split_dataset(&samples, config.split_ratios, config.seed)?;
    log::info!("split: {} train, {} validation, {} test", split.train.len(), split.validation.len(), split.test.len());
    create_dir(&out)?;
    let mut run = RunManifest::start("train", Some(config.seed));
    run.notes = lr_notes(&config);

    let started = Instant::now();
    let model = build_model(&config)?;
    if model.fallback {
        log::warn!("using fallback backbone: {}", model.backbone_id);
    }
    let (artifact, history) = train(model, &split.train, &split.validation, &config, &preprocess)?;
    let train_secs = started.elapsed().as_secs_f64();

    let model_path = out.join(MODEL_FILE);
    save_model(&artifact, &model_path)?;
    run.output(&out, &model_path);
    let history_path = out.join("history.json");
    write_json(&history_path, &history)?;
    run.output(&out, &history_path);
    let curves = export_curves(std::slice::from_ref(&history), &out)?;
    run.output(&out, &curves.svg);
    run.output(&out, &curves.csv);
    let split_path = out.join("split.json");
    write_json(
        &split_path,
        &SplitListing {
            seed: split.seed,
            train: ids(&split.train),
            validation: ids(&split.validation),
            test: ids(&split.test),
        },
    )?;
    run.output(&out, &split_path);

    let report = evaluate(&artifact, &split.test, &preprocess, "test")?;
    write_report(&report, &out, "report-test", &mut run, &out)?;
    println!("{}", report.to_text());
    let last = history.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs in {:.0}s: train accuracy {:.4}, validation accuracy {:.4}, test accuracy {:.4}",
        history.epochs.len(),
        train_secs,
        last.train_accuracy,
        last.val_accuracy,
        report.accuracy
    );
    println!("model written to {}", model_path.display());

    run.config = json!({ "training": config, "preprocess": preprocess, "data": a.flags.data });
    run.summary = json!({
        "backbone_id": artifact.meta.backbone_id,
        "backbone_fallback": artifact.meta.backbone_fallback,
        "epochs": history.epochs.len(),
        "final_train_accuracy": last.train_accuracy,
        "final_val_accuracy": last.val_accuracy,
        "test_accuracy": report.accuracy,
        "train_seconds": train_secs,
    });
    run.finish(&out)?;
    Ok(())
}

fn kfold_cmd(a: KfoldArgs) -> CliResult<()> {
    let (mut config, preprocess, out) = prepare_training(&a.flags, "kfold")?;
    if let Some(k) = a.k {
        config.k_folds = k;
        usage(config.validate())?;
    }
    let samples = load_samples(&a.flags.data)?;
    // The test part is held out once; folds cover the rest.
    let split = split_dataset(&samples, config.split_ratios, config.seed)?;
    let pool: Vec<LabeledSample> = split.train.iter().chain(&split.validation).cloned().collect();
    log::info!("{}-fold over {} samples; {} held out for test", config.k_folds, pool.len(), split.test.len());
    create_dir(&out)?;
    let mut run = RunManifest::start("kfold", Some(config.seed));
    run.notes = lr_notes(&config);

    let started = Instant::now();
    let outcome = train_kfold(&pool, &config, &preprocess)?;
    let secs = started.elapsed().as_secs_f64();

    for (i, (history, report)) in outcome.histories.iter().zip(&outcome.fold_reports).enumerate() {
        let dir = out.join(format!("fold-{}", i + 1));
        let p = dir.join("history.json");
        write_json(&p, history)?;
        run.output(&out, &p);
        write_report(report, &dir, "report-validation", &mut run, &out)?;
    }
    let curves = export_curves(&outcome.histories, &out)?;
    run.output(&out, &curves.svg);
    run.output(&out, &curves.csv);
    write_report(&outcome.aggregated, &out, "report-pooled", &mut run, &out)?;

    let folds_path = out.join("folds.json");
    let assignments: BTreeMap<String, usize> =
        pool.iter().zip(&outcome.plan.assignments).map(|(s, f)| (s.id(), *f + 1)).collect();
    write_json(
        &folds_path,
        &json!({ "k": outcome.plan.k, "seed": outcome.plan.seed, "fold_of": assignments, "test": ids(&split.test) }),
    )?;
    run.output(&out, &folds_path);

    let best = outcome.best_artifact();
    let model_path = out.join(MODEL_FILE);
    save_model(best, &model_path)?;
    run.output(&out, &model_path);
    let test_report = evaluate(best, &split.test, &preprocess, "test (best fold model)")?;
    write_report(&test_report, &out, "report-test", &mut run, &out)?;

    for (i, acc) in outcome.fold_accuracies.iter().enumerate() {
        println!("fold {}: validation accuracy {acc:.4}", i + 1);
    }
    println!(
        "mean accuracy {:.4} +/- {:.4} over {} folds ({:.0}s)",
        outcome.mean_accuracy, outcome.std_accuracy, outcome.plan.k, secs
    );
    println!(
        "best fold {} written to {}; its test accuracy {:.4}",
        outcome.best_fold + 1,
        model_path.display(),
        test_report.accuracy
    );

    run.config = json!({ "training": config, "preprocess": preprocess, "data": a.flags.data });
    run.summary = json!({
        "fold_accuracies": outcome.fold_accuracies,
        "mean_accuracy": outcome.mean_accuracy,
        "std_accuracy": outcome.std_accuracy,
        "best_fold": outcome.best_fold + 1,
        "best_fold_test_accuracy": test_report.accuracy,
        "seconds": secs,
    });
    run.finish(&out)?;
    Ok(())
}

fn serving_preprocess(artifact: &ModelArtifact, path: Option<&Path>) -> CliResult<PreprocessConfig> {
    match path {
        Some(p) => usage(PreprocessConfig::load(p)),
        None => Ok(artifact.meta.preprocess_config.clone()),
    }
}

fn evaluate_cmd(a: EvaluateArgs) -> CliResult<()> {
    let override_pp = a.preprocess.as_deref().map(|p| usage(PreprocessConfig::load(p))).transpose()?;
    let artifact = load_model(&a.model)?;
    let preprocess = override_pp.unwrap_or_else(|| artifact.meta.preprocess_config.clone());
    roast_core::model::check_compatible(&artifact, &preprocess, a.allow_mismatch)?;
    let samples = load_samples(&a.data)?;
    let tc = &artifact.meta.training_config;
    let seed = a.seed.unwrap_or(tc.seed);
    let (part, tag) = match a.split {
        SplitPart::All => (samples, "all".to_string()),
        other => {
            let s = split_dataset(&samples, tc.split_ratios, seed)?;
            match other {
                SplitPart::Train => (s.train, "train".into()),
                SplitPart::Validation => (s.validation, "validation".into()),
                _ => (s.test, "test".into()),
            }
        }
    };
    create_dir(&a.out)?;
    let mut run = RunManifest::start("evaluate", Some(seed));
    let report = evaluate_with(&artifact, &part, &preprocess, &tag, a.allow_mismatch)?;
    write_report(&report, &a.out, "report", &mut run, &a.out)?;
    println!("{}", report.to_text());
    run.config = json!({ "model": a.model, "data": a.data, "split": tag, "preprocess": preprocess });
    run.summary = json!({ "accuracy": report.accuracy, "samples": report.confusion.total() });
    run.finish(&a.out)?;
    Ok(())
}

#[derive(Serialize)]
struct PredictionSidecar {
    image: PathBuf,
    model: PathBuf,
    roast_level: RoastClass,
    description: &'static str,
    probability_percent: f64,
    probabilities: BTreeMap<RoastClass, f64>,
    preprocess_fingerprint: String,
}

fn predict_cmd(a: PredictArgs) -> CliResult<()> {
    let override_pp = a.preprocess.as_deref().map(|p| usage(PreprocessConfig::load(p))).transpose()?;
    let artifact = load_model(&a.model)?;
    let preprocess = match override_pp {
        Some(p) => p,
        None => serving_preprocess(&artifact, None)?,
    };
    let image = load_image(&a.image)?;
    let p = predict(&artifact, &image, &preprocess, a.allow_mismatch)?;
    println!("{}", p.display_line());
    let sidecar = a.json.clone().unwrap_or_else(|| {
        let mut s = a.image.as_os_str().to_owned();
        s.push(".prediction.json");
        PathBuf::from(s)
    });
    write_json(
        &sidecar,
        &PredictionSidecar {
            image: a.image.clone(),
            model: a.model.clone(),
            roast_level: p.predicted_class,
            description: p.predicted_class.description(),
            probability_percent: roast_service::round_percent(p.confidence_percent),
            probabilities: RoastClass::ALL.iter().map(|c| (*c, p.probabilities[c.index()])).collect(),
            preprocess_fingerprint: preprocess.fingerprint(),
        },
    )?;
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> CliResult<()> {
    if a.upload_limit == 0 {
        return Err(CliError::Usage("--upload-limit must be positive".into()));
    }
    let config = roast_service::ServiceConfig {
        bind: a.bind,
        model_path: a.model,
        store_dir: a.store,
        upload_limit: a.upload_limit,
        preprocess_path: a.preprocess,
        allow_fingerprint_mismatch: a.allow_mismatch,
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(roast_service::serve(config))?;
    Ok(())
}
