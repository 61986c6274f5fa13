use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::class::RoastClass;
use crate::dataset::{class_counts, make_folds, splitmix, FoldPlan, LabeledSample};
use crate::error::{Error, Result};
use crate::eval::{confusion_matrix, metrics_from_confusion, ConfusionMatrix, EvaluationReport};
use crate::imaging::{augment, preprocess_stages, AugmentConfig, ColorSpace, PreprocessConfig, RasterImage};
use crate::model::adam::Adam;
use crate::model::artifact::{ArtifactMeta, MetricsSummary, ModelArtifact};
use crate::model::{build_model, BuiltModel, Network, Prediction, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub fold_index: Option<usize>,
    pub epochs: Vec<EpochRecord>,
}

/// Samples run through the deterministic preprocessing once and cached
/// as 8-bit pixels at the model input size.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    pub width: usize,
    pub height: usize,
    pixels: Vec<Arc<[u8]>>,
    pub labels: Vec<RoastClass>,
    pub ids: Vec<String>,
}

impl PreparedSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> PreparedSet {
        PreparedSet {
            width: self.width,
            height: self.height,
            pixels: indices.iter().map(|&i| self.pixels[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }

    /// Normalized `3 x H x W` network input for sample `i`.
    pub fn input(&self, i: usize) -> Vec<f32> {
        let hw = self.width * self.height;
        let mut out = vec![0.0f32; 3 * hw];
        for (p, px) in self.pixels[i].chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * hw + p] = (px[c] as f64 / 255.0) as f32;
            }
        }
        out
    }

    fn augmented_input(&self, i: usize, config: &AugmentConfig) -> Result<Vec<f32>> {
        let data = self.pixels[i].iter().map(|&b| b as f64 / 255.0).collect();
        let img = RasterImage::from_parts_unchecked(self.width, self.height, 3, ColorSpace::Float01, data);
        Ok(augment(&img, config)?.to_chw_f32())
    }
}

pub fn prepare_samples(samples: &[LabeledSample], preprocess: &PreprocessConfig) -> Result<PreparedSet> {
    preprocess.validate()?;
    let pixels = samples
        .par_iter()
        .map(|s| {
            s.load()
                .and_then(|img| preprocess_stages(&img, preprocess))
                .and_then(|st| st.resized.to_rgb8_bytes())
                .map(Arc::from)
                .map_err(|e| Error::Sample { sample: s.id(), source: Box::new(e) })
        })
        .collect::<Result<Vec<Arc<[u8]>>>>()?;
    let (width, height) = preprocess.target_size();
    Ok(PreparedSet {
        width,
        height,
        pixels,
        labels: samples.iter().map(|s| s.class).collect(),
        ids: samples.iter().map(LabeledSample::id).collect(),
    })
}

fn check_configs(config: &TrainingConfig, preprocess: &PreprocessConfig) -> Result<()> {
    config.validate()?;
    preprocess.validate()?;
    if preprocess.target_size() != (config.target_width, config.target_height) {
        return Err(Error::Config(format!(
            "preprocessing produces {:?} images but the model expects {}x{}",
            preprocess.target_size(),
            config.target_width,
            config.target_height
        )));
    }
    Ok(())
}

fn require_all_classes(labels: &[RoastClass], what: &str) -> Result<()> {
    let mut seen = [false; RoastClass::COUNT];
    for l in labels {
        seen[l.index()] = true;
    }
    match RoastClass::ALL.iter().find(|c| !seen[c.index()]) {
        Some(c) => Err(Error::Data(format!("class {c} is absent from the {what}"))),
        None => Ok(()),
    }
}

/// Trains `model` on `train_samples`, reporting validation metrics on
/// `val_samples` after every epoch.
pub fn train(
    model: BuiltModel,
    train_samples: &[LabeledSample],
    val_samples: &[LabeledSample],
    config: &TrainingConfig,
    preprocess: &PreprocessConfig,
) -> Result<(ModelArtifact, TrainingHistory)> {
    check_configs(config, preprocess)?;
    if train_samples.is_empty() || val_samples.is_empty() {
        return Err(Error::Data("training and validation sets must both be non-empty".into()));
    }
    let labels: Vec<RoastClass> = train_samples.iter().map(|s| s.class).collect();
    require_all_classes(&labels, "training set")?;
    let train_set = prepare_samples(train_samples, preprocess)?;
    let val_set = prepare_samples(val_samples, preprocess)?;
    train_prepared(model, &train_set, &val_set, config, preprocess, None)
}

/// [`train`] on already prepared sets; `fold` tags the history and
/// decorrelates the random streams of different folds.
pub fn train_prepared(
    model: BuiltModel,
    train_set: &PreparedSet,
    val_set: &PreparedSet,
    config: &TrainingConfig,
    preprocess: &PreprocessConfig,
    fold: Option<usize>,
) -> Result<(ModelArtifact, TrainingHistory)> {
    fit(model, train_set, val_set, config, preprocess, fold).map(|(a, h, _)| (a, h))
}

fn stream_seed(seed: u64, fold: Option<usize>, stream: u64) -> u64 {
    splitmix(seed ^ splitmix(fold.map_or(u64::MAX, |f| f as u64)) ^ splitmix(stream.wrapping_mul(0x51ED)))
}

/// Batch boundaries; a trailing batch of one sample is merged into the
/// previous batch so batch normalization always sees two or more.
fn batch_ranges(n: usize, batch: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n).step_by(batch).map(|s| (s, (s + batch).min(n))).collect();
    if batch > 1 && out.len() > 1 && out.last().is_some_and(|(s, e)| e - s == 1) {
        let (_, end) = out.pop().unwrap();
        out.last_mut().unwrap().1 = end;
    }
    out
}

/// Inference-mode predictions, mean cross-entropy and accuracy.
pub(crate) fn score(network: &Network, set: &PreparedSet) -> Result<(Vec<Prediction>, f64, f64)> {
    let preds: Vec<Prediction> =
        (0..set.len()).into_par_iter().map(|i| network.predict_input(&set.input(i))).collect::<Result<_>>()?;
    let n = set.len().max(1) as f64;
    let loss = preds.iter().zip(&set.labels).map(|(p, l)| -p.probabilities[l.index()].max(1e-12).ln()).sum::<f64>() / n;
    let correct = preds.iter().zip(&set.labels).filter(|(p, l)| p.predicted_class == **l).count();
    Ok((preds, loss, correct as f64 / n))
}

fn fit(
    model: BuiltModel,
    train_set: &PreparedSet,
    val_set: &PreparedSet,
    config: &TrainingConfig,
    preprocess: &PreprocessConfig,
    fold: Option<usize>,
) -> Result<(ModelArtifact, TrainingHistory, Vec<Prediction>)> {
    check_configs(config, preprocess)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data("training and validation sets must both be non-empty".into()));
    }
    require_all_classes(&train_set.labels, "training set")?;
    let BuiltModel { mut network, backbone_id, frozen, fallback } = model;
    if (network.input_width, network.input_height) != (train_set.width, train_set.height) {
        return Err(Error::Shape(format!(
            "model input {}x{} does not match prepared images {}x{}",
            network.input_width, network.input_height, train_set.width, train_set.height
        )));
    }
    let (h, w) = (network.input_height, network.input_width);

    let mut order_rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, fold, 1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, fold, 2));
    let augment_base = stream_seed(config.augmentation.seed ^ config.seed, fold, 3);

    let head_sizes: Vec<usize> = network.head.trainable().iter().map(|t| t.len()).collect();
    let mut head_opt = Adam::new(config.learning_rate, &head_sizes);
    let bb_sizes: Vec<usize> = network.backbone.params().iter().map(|t| t.len()).collect();
    let mut bb_opt = Adam::new(config.learning_rate, &bb_sizes);

    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainingHistory { fold_index: fold, epochs: Vec::with_capacity(config.epochs) };
    let mut last_val = Vec::new();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (start, end) in batch_ranges(n, config.batch_size) {
            let idx = &order[start..end];
            let inputs: Vec<Vec<f32>> = idx
                .par_iter()
                .map(|&i| {
                    if config.augment {
                        let seed = splitmix(augment_base ^ splitmix(((epoch as u64) << 32) | i as u64));
                        train_set.augmented_input(i, &config.augmentation.with_seed(seed))
                    } else {
                        Ok(train_set.input(i))
                    }
                })
                .collect::<Result<_>>()?;
            let labels: Vec<usize> = idx.iter().map(|&i| train_set.labels[i].index()).collect();

            let backbone = &network.backbone;
            let (features, tapes): (Vec<Vec<f32>>, Vec<_>) = if frozen {
                (inputs.par_iter().map(|x| backbone.forward(x, h, w)).collect(), Vec::new())
            } else {
                inputs.par_iter().map(|x| backbone.forward_train(x, h, w)).unzip()
            };
            drop(inputs);

            let step = network.head.train_step(&features, &labels, &mut dropout_rng)?;
            if !step.loss.is_finite() {
                return Err(Error::Diverged { epoch, loss: step.loss });
            }
            loss_sum += step.loss * idx.len() as f64;
            correct += step.correct;

            if !frozen {
                let per_sample: Vec<Vec<Vec<f32>>> = tapes
                    .par_iter()
                    .zip(&step.grad_features)
                    .map(|(tape, g)| {
                        let mut grads: Vec<Vec<f32>> = bb_sizes.iter().map(|&s| vec![0.0; s]).collect();
                        backbone.backward(tape, g, &mut grads);
                        grads
                    })
                    .collect();
                drop(tapes);
                let mut total: Vec<Vec<f32>> = bb_sizes.iter().map(|&s| vec![0.0; s]).collect();
                for sample in &per_sample {
                    for (t, g) in total.iter_mut().zip(sample) {
                        t.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                    }
                }
                let grads: Vec<&[f32]> = total.iter().map(Vec::as_slice).collect();
                let mut params: Vec<&mut [f32]> =
                    network.backbone.params_mut().into_iter().map(|t| t.data.as_mut_slice()).collect();
                bb_opt.update(&mut params, &grads);
            }
            let grads: Vec<&[f32]> = step.grads.iter().map(Vec::as_slice).collect();
            let mut params: Vec<&mut [f32]> =
                network.head.trainable_mut().into_iter().map(|t| t.data.as_mut_slice()).collect();
            head_opt.update(&mut params, &grads);
        }

        let train_loss = loss_sum / n as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: train_loss });
        }
        let (val_preds, val_loss, val_accuracy) = score(&network, val_set)?;
        let record =
            EpochRecord { epoch, train_loss, train_accuracy: correct as f64 / n as f64, val_loss, val_accuracy };
        log::info!(
            "{}epoch {epoch}/{}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            fold.map(|f| format!("fold {} ", f + 1)).unwrap_or_default(),
            config.epochs,
            record.train_loss,
            record.train_accuracy,
            record.val_loss,
            record.val_accuracy
        );
        history.epochs.push(record);
        last_val = val_preds;
    }

    let last = history.epochs.last().expect("at least one epoch");
    let metrics = MetricsSummary {
        epochs_run: history.epochs.len(),
        fold_index: fold,
        final_train_loss: last.train_loss,
        final_train_accuracy: last.train_accuracy,
        final_val_loss: last.val_loss,
        final_val_accuracy: last.val_accuracy,
    };
    let meta = ArtifactMeta::describe(&network, backbone_id, frozen, fallback, config, preprocess, metrics);
    Ok((ModelArtifact { meta, network }, history, last_val))
}

/// Outcome of [`train_kfold`].
#[derive(Debug, Clone)]
pub struct KFoldOutcome {
    pub plan: FoldPlan,
    pub artifacts: Vec<ModelArtifact>,
    pub histories: Vec<TrainingHistory>,
    /// Final-epoch validation report of each fold.
    pub fold_reports: Vec<EvaluationReport>,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Population standard deviation of the fold accuracies.
    pub std_accuracy: f64,
    /// Fold with the highest validation accuracy (first on ties).
    pub best_fold: usize,
    /// All folds' validation predictions pooled into one report.
    pub aggregated: EvaluationReport,
}

impl KFoldOutcome {
    pub fn best_artifact(&self) -> &ModelArtifact {
        &self.artifacts[self.best_fold]
    }
}

/// k-fold cross-validation over `samples`; every sample is held out
/// exactly once.
pub fn train_kfold(
    samples: &[LabeledSample],
    config: &TrainingConfig,
    preprocess: &PreprocessConfig,
) -> Result<KFoldOutcome> {
    check_configs(config, preprocess)?;
    let counts = class_counts(samples);
    if let Some(c) = RoastClass::ALL.iter().find(|c| counts[c.index()] < config.k_folds) {
        return Err(Error::Data(format!(
            "class {c} has {} samples; k-fold with k = {} needs at least k per class",
            counts[c.index()],
            config.k_folds
        )));
    }
    let plan = make_folds(samples, config.k_folds, config.seed)?;
    let pool = prepare_samples(samples, preprocess)?;

    let mut artifacts = Vec::with_capacity(plan.k);
    let mut histories = Vec::with_capacity(plan.k);
    let mut fold_reports = Vec::with_capacity(plan.k);
    let mut pooled = ConfusionMatrix::default();
    for fold in 0..plan.k {
        let train_set = pool.subset(&plan.train_indices(fold));
        let val_set = pool.subset(&plan.validation_indices(fold));
        log::info!("fold {}/{}: {} training, {} validation samples", fold + 1, plan.k, train_set.len(), val_set.len());
        let model = build_model(config)?;
        let (artifact, history, preds) = fit(model, &train_set, &val_set, config, preprocess, Some(fold))?;
        let predicted: Vec<RoastClass> = preds.iter().map(|p| p.predicted_class).collect();
        let m = confusion_matrix(&val_set.labels, &predicted)?;
        pooled.merge(&m);
        fold_reports.push(metrics_from_confusion(&m, format!("fold {} validation", fold + 1))?);
        artifacts.push(artifact);
        histories.push(history);
    }

    let fold_accuracies: Vec<f64> = fold_reports.iter().map(|r| r.accuracy).collect();
    let k = fold_accuracies.len() as f64;
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / k;
    let std_accuracy = (fold_accuracies.iter().map(|a| (a - mean_accuracy).powi(2)).sum::<f64>() / k).sqrt();
    let mut best_fold = 0;
    for (i, a) in fold_accuracies.iter().enumerate() {
        if *a > fold_accuracies[best_fold] {
            best_fold = i;
        }
    }
    Ok(KFoldOutcome {
        aggregated: metrics_from_confusion(&pooled, format!("{}-fold pooled validation", plan.k))?,
        plan,
        artifacts,
        histories,
        fold_reports,
        fold_accuracies,
        mean_accuracy,
        std_accuracy,
        best_fold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_everything_without_singletons() {
        for n in 1..100 {
            for b in 1..40 {
                let r = batch_ranges(n, b);
                assert_eq!(r.first().unwrap().0, 0);
                assert_eq!(r.last().unwrap().1, n);
                assert!(r.windows(2).all(|w| w[0].1 == w[1].0));
                if r.len() > 1 && b > 1 {
                    assert!(r.iter().all(|(s, e)| e - s >= 2));
                }
            }
        }
        assert_eq!(batch_ranges(65, 32), vec![(0, 32), (32, 65)]);
    }

    #[test]
    fn prepared_input_matches_preprocess() {
        let img =
            RasterImage::from_rgb8(3, 2, &[150, 90, 40, 10, 10, 10, 200, 120, 60, 90, 60, 40, 255, 255, 255, 0, 0, 0])
                .unwrap();
        let cfg = PreprocessConfig { target_width: 8, target_height: 8, ..Default::default() };
        let set = prepare_samples(&[LabeledSample::in_memory("x", img.clone(), RoastClass::Dark)], &cfg).unwrap();
        let direct = crate::imaging::preprocess(&img, &cfg).unwrap().to_chw_f32();
        assert_eq!(set.input(0), direct);
    }
}
