use roast_core::dataset::{synthesize_bean_image, LabeledSample, SynthConfig};
use roast_core::eval::evaluate;
use roast_core::imaging::{preprocess, PreprocessConfig, RasterImage};
use roast_core::model::{
    build_model, load_model, predict, save_model, train, BackboneSpec, ModelArtifact, TrainingConfig, PRETRAINED,
    TINY_CNN,
};
use roast_core::{Error, RoastClass};

const SIDE: usize = 32;

fn config(epochs: usize) -> TrainingConfig {
    TrainingConfig {
        target_width: SIDE,
        target_height: SIDE,
        batch_size: 4,
        learning_rate: 3e-3,
        epochs,
        dropout_rate: 0.0,
        hidden_units: 16,
        backbone: BackboneSpec { name: TINY_CNN.into(), weights: None },
        augment: false,
        seed: 5,
        ..TrainingConfig::default()
    }
}

fn pre() -> PreprocessConfig {
    PreprocessConfig { target_width: SIDE, target_height: SIDE, ..PreprocessConfig::default() }
}

fn image(class: RoastClass, seed: u64) -> RasterImage {
    let cfg = SynthConfig { image_width: 64, image_height: 64, ..SynthConfig::default() };
    synthesize_bean_image(class, &cfg, seed).image
}

fn samples(per_class: u64, first_seed: u64) -> Vec<LabeledSample> {
    RoastClass::ALL
        .iter()
        .flat_map(|&c| (0..per_class).map(move |i| (c, first_seed + i)))
        .map(|(c, s)| LabeledSample::in_memory(format!("{c}-{s}"), image(c, s), c))
        .collect()
}

fn bits(values: &[f32]) -> Vec<u32> {
    values.iter().map(|v| v.to_bits()).collect()
}

fn backbone_bits(a: &ModelArtifact) -> Vec<Vec<u32>> {
    a.network.backbone.params().iter().map(|t| bits(&t.data)).collect()
}

#[test]
fn memorizes_a_small_set() {
    let set = samples(2, 100);
    let (artifact, history) = train(build_model(&config(40)).unwrap(), &set, &set, &config(40), &pre()).unwrap();
    assert_eq!(history.epochs.len(), 40);
    assert_eq!(history.fold_index, None);
    let report = evaluate(&artifact, &set, &pre(), "train").unwrap();
    assert_eq!(report.accuracy, 1.0, "{}", report.to_text());
    let first = history.epochs[0].train_loss;
    let last = history.epochs.last().unwrap().train_loss;
    assert!(last < first / 4.0, "loss {first} -> {last}");
}

#[test]
fn training_is_reproducible() {
    let set = samples(1, 10);
    let run = || train(build_model(&config(2)).unwrap(), &set, &set, &config(2), &pre()).unwrap();
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha, hb);
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
}

#[test]
fn frozen_backbone_is_untouched_by_training() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("donor.roast");
    let donor = ModelArtifact::untrained(build_model(&config(1)).unwrap(), &config(1), &pre()).unwrap();
    save_model(&donor, &weights).unwrap();

    let cfg = TrainingConfig {
        backbone: BackboneSpec { name: PRETRAINED.into(), weights: Some(weights.clone()) },
        ..config(3)
    };
    let model = build_model(&cfg).unwrap();
    assert!(model.frozen && !model.fallback, "{}", model.backbone_id);
    let probe = preprocess(&image(RoastClass::Light, 1), &pre()).unwrap().to_chw_f32();
    let before = model.network.logits(&probe).unwrap();

    let set = samples(2, 40);
    let (trained, _) = train(model, &set, &set, &cfg, &pre()).unwrap();
    assert_eq!(backbone_bits(&trained), backbone_bits(&donor));
    assert!(trained.meta.backbone_frozen);
    assert_ne!(bits(&trained.network.logits(&probe).unwrap()), bits(&before), "head did not move");
}

#[test]
fn missing_pretrained_weights_fall_back() {
    let cfg = TrainingConfig {
        backbone: BackboneSpec { name: PRETRAINED.into(), weights: Some("/nonexistent/weights.roast".into()) },
        ..config(1)
    };
    let model = build_model(&cfg).unwrap();
    assert!(model.fallback && !model.frozen);
}

#[test]
fn artifact_round_trip_is_bitwise() {
    let set = samples(1, 70);
    let (artifact, _) = train(build_model(&config(2)).unwrap(), &set, &set, &config(2), &pre()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.roast");
    save_model(&artifact, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded.meta, artifact.meta);
    assert_eq!(loaded.meta.class_mapping, RoastClass::ALL.to_vec());
    for i in 0..10 {
        let img = image(RoastClass::ALL[i % 4], 500 + i as u64);
        let a = predict(&artifact, &img, &pre(), false).unwrap();
        let b = predict(&loaded, &img, &pre(), false).unwrap();
        assert_eq!(a.probabilities.map(f64::to_bits), b.probabilities.map(f64::to_bits));
        // Inference mode: no dropout, running batch-norm statistics.
        let c = predict(&loaded, &img, &pre(), false).unwrap();
        assert_eq!(b.probabilities.map(f64::to_bits), c.probabilities.map(f64::to_bits));
    }
    assert_eq!(loaded.to_bytes().unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn damaged_artifacts_are_rejected() {
    let artifact = ModelArtifact::untrained(build_model(&config(1)).unwrap(), &config(1), &pre()).unwrap();
    let bytes = artifact.to_bytes().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.roast");

    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Artifact { .. })));

    let mut flipped = bytes.clone();
    let mid = flipped.len() - 100;
    flipped[mid] ^= 1;
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Artifact { .. })));

    assert!(load_model(&dir.path().join("absent.roast")).is_err());
}

#[test]
fn serving_with_other_preprocessing_needs_consent() {
    let artifact = ModelArtifact::untrained(build_model(&config(1)).unwrap(), &config(1), &pre()).unwrap();
    let other = PreprocessConfig { blur_sigma: 2.0, ..pre() };
    let img = image(RoastClass::Dark, 3);
    assert!(matches!(predict(&artifact, &img, &other, false), Err(Error::Incompatible { .. })));
    assert!(predict(&artifact, &img, &other, true).is_ok());
    let wrong_size = PreprocessConfig { target_width: 48, target_height: 48, ..pre() };
    assert!(predict(&artifact, &img, &wrong_size, true).is_err());
}
