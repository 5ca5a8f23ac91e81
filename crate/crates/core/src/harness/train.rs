//! Epoch loop, validation, best-epoch tracking and metric files.

use std::borrow::Cow;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, ExperimentConfig, TrainConfig};
use super::optim::{poly_lr, sgd_step, GroupMultipliers, SgdConfig};
use crate::autograd::Tape;
use crate::data::image_io::{read_labels, write_png_rgb};
use crate::data::{
    augment_pair, colorize_labels, generate_synthetic_sample, stratified_subsample, voc_palette,
    AugmentSpec, SamplePair, VocDataset,
};
use crate::error::{Error, Result};
use crate::metrics::{
    confusion_counts, dataset_summary, image_miou, LabelMap, MiouSummary, IGNORE_LABEL,
};
use crate::model::{predict_labels, ForwardCtx, HookPoint, Model};
use crate::ops::loss::softmax_cross_entropy;
use crate::regularizers::scheduled_p;
use crate::rng;
use crate::tensor::{Shape, Tensor};
use crate::Mode;

/// Samples held in memory or read from a VOC root on demand.
#[derive(Clone, Debug)]
pub enum SampleSet {
    Memory(Vec<SamplePair>),
    Voc {
        dataset: VocDataset,
        indices: Vec<usize>,
    },
}

impl SampleSet {
    pub fn len(&self) -> usize {
        match self {
            SampleSet::Memory(v) => v.len(),
            SampleSet::Voc { indices, .. } => indices.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Result<Cow<'_, SamplePair>> {
        match self {
            SampleSet::Memory(v) => Ok(Cow::Borrowed(&v[i])),
            SampleSet::Voc { dataset, indices } => Ok(Cow::Owned(dataset.load(indices[i])?)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: SampleSet,
    pub val: SampleSet,
    pub classes: usize,
}

/// Builds the (subsampled) training set and the full validation set.
pub fn load_splits(cfg: &TrainConfig) -> Result<Splits> {
    let classes = cfg.dataset.num_classes();
    match &cfg.dataset {
        DatasetSource::Synthetic {
            spec,
            train_count,
            val_count,
        } => {
            let train: Vec<SamplePair> = (0..*train_count)
                .map(|i| generate_synthetic_sample(spec, i))
                .collect::<Result<_>>()?;
            let labels: Vec<&LabelMap> = train.iter().map(|p| &p.label).collect();
            let keep = stratified_subsample(&labels, cfg.subsample_fraction, cfg.seed, classes)?;
            let train = keep.into_iter().map(|i| train[i].clone()).collect();
            let val = (*train_count..train_count + val_count)
                .map(|i| generate_synthetic_sample(spec, i))
                .collect::<Result<_>>()?;
            Ok(Splits {
                train: SampleSet::Memory(train),
                val: SampleSet::Memory(val),
                classes,
            })
        }
        DatasetSource::Voc {
            root,
            train_split,
            val_split,
        } => {
            let train = VocDataset::open(root, train_split)?;
            let labels: Vec<LabelMap> = (0..train.len())
                .map(|i| read_labels(&train.paths(i).1))
                .collect::<Result<_>>()?;
            let refs: Vec<&LabelMap> = labels.iter().collect();
            let keep = stratified_subsample(&refs, cfg.subsample_fraction, cfg.seed, classes)?;
            let val = VocDataset::open(root, val_split)?;
            let all = (0..val.len()).collect();
            Ok(Splits {
                train: SampleSet::Voc {
                    dataset: train,
                    indices: keep,
                },
                val: SampleSet::Voc {
                    dataset: val,
                    indices: all,
                },
                classes,
            })
        }
    }
}

/// Statistics for one epoch. Epochs are counted from 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val: MiouSummary,
    /// Mean per-image mIoU on the (un-augmented) training set in eval mode.
    pub train_miou: f64,
    /// Scheduled probability at the backbone, SPP and decoder hooks.
    pub effective_p: [f64; 3],
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl EpochMetrics {
    /// Higher validation mean mIoU wins, then lower validation loss; on a
    /// full tie the earlier epoch is kept.
    pub fn beats(&self, other: &EpochMetrics) -> bool {
        self.val.mean > other.val.mean
            || (self.val.mean == other.val.mean && self.val_loss < other.val_loss)
    }
}

/// Model plus optimizer state carried across epochs.
pub struct TrainState {
    pub model: Model,
    pub velocity: Vec<Vec<f64>>,
    /// Learning rates applied to (backbone, head) at every step.
    pub lr_trace: Vec<[f64; 2]>,
}

impl TrainState {
    pub fn new(model: Model) -> Self {
        TrainState {
            model,
            velocity: Vec::new(),
            lr_trace: Vec::new(),
        }
    }
}

pub fn num_batches(samples: usize, batch_size: usize) -> usize {
    samples.div_ceil(batch_size)
}

fn batch_inputs(items: &[SamplePair]) -> Result<(Tensor, Vec<u8>)> {
    let images: Vec<&Tensor> = items.iter().map(|p| &p.image).collect();
    let x = Tensor::stack(&images)?;
    let labels = items
        .iter()
        .flat_map(|p| p.label.data().iter().copied())
        .collect();
    Ok((x, labels))
}

/// One pass over the training set followed by validation.
pub fn train_epoch(
    state: &mut TrainState,
    data: &Splits,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochMetrics> {
    let start = Instant::now();
    let n = data.train.len();
    if n == 0 {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let nb = num_batches(n, cfg.batch_size);
    let max_iterations = cfg.epochs * nb;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::keyed(&[
        rng::stream::SHUFFLE,
        cfg.seed,
        epoch as u64,
    ]));
    let sgd = SgdConfig {
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
    };
    let mult = GroupMultipliers {
        backbone: 1.0,
        head: cfg.head_lr_multiplier,
    };

    let mut loss_sum = 0.0;
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let items: Vec<SamplePair> = chunk
            .iter()
            .map(|&i| {
                let mut r = rng::keyed(&[rng::stream::AUGMENT, cfg.seed, epoch as u64, i as u64]);
                augment_pair(&*data.train.get(i)?, &cfg.augment, &mut r)
            })
            .collect::<Result<_>>()?;
        let (x, labels) = batch_inputs(&items)?;
        let mut tape = Tape::new();
        let input = tape.leaf(x);
        let fv =
            state
                .model
                .forward_on(&mut tape, input, &ForwardCtx::train(epoch, b as u64), true)?;
        let loss = tape.cross_entropy(fv.logits, &labels, IGNORE_LABEL)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged { epoch, batch: b });
        }
        tape.backward(loss)?;
        let zeros: Vec<Vec<f64>> = fv
            .params
            .iter()
            .map(|&v| match tape.grad(v) {
                Some(_) => Vec::new(),
                None => vec![0.0; tape.shape(v).numel()],
            })
            .collect();
        let grads: Vec<&[f64]> = fv
            .params
            .iter()
            .zip(&zeros)
            .map(|(&v, z)| tape.grad(v).unwrap_or(z))
            .collect();
        let lr = poly_lr(cfg.base_lr, epoch * nb + b, max_iterations, cfg.lr_power)?;
        let applied = sgd_step(
            state.model.params_mut(),
            &grads,
            &mut state.velocity,
            lr,
            mult,
            sgd,
        )?;
        state.lr_trace.push(applied);
        loss_sum += value;
    }

    let val = evaluate(
        &mut state.model,
        &data.val,
        &cfg.augment,
        cfg.batch_size,
        data.classes,
    )?;
    let train_eval = evaluate(
        &mut state.model,
        &data.train,
        &cfg.augment,
        cfg.batch_size,
        data.classes,
    )?;
    let hooks = *state.model.hooks();
    let effective_p = HookPoint::ALL.map(|h| {
        let s = hooks.get(h);
        if s.is_active() {
            scheduled_p(s, epoch)
        } else {
            0.0
        }
    });
    Ok(EpochMetrics {
        epoch,
        train_loss: loss_sum / nb as f64,
        val_loss: val.loss,
        val,
        train_miou: train_eval.mean,
        effective_p,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn eval_spec(spec: &AugmentSpec) -> AugmentSpec {
    AugmentSpec {
        mode: Mode::Eval,
        ..spec.clone()
    }
}

/// Eval-mode predictions for the first `count` samples of `set`.
pub fn predict(
    model: &mut Model,
    set: &SampleSet,
    augment: &AugmentSpec,
    count: usize,
) -> Result<Vec<LabelMap>> {
    let spec = eval_spec(augment);
    let mut out = Vec::new();
    for i in 0..count.min(set.len()) {
        let pair = augment_pair(&*set.get(i)?, &spec, &mut rng::keyed(&[0]))?;
        let logits = model.forward(&pair.image, &ForwardCtx::eval())?;
        out.extend(predict_labels(&logits));
    }
    Ok(out)
}

/// Per-image mIoU and loss over `set` in eval mode (centre crop/pad,
/// running batch statistics). Images with no labelled pixels are skipped.
pub fn evaluate(
    model: &mut Model,
    set: &SampleSet,
    augment: &AugmentSpec,
    batch_size: usize,
    classes: usize,
) -> Result<MiouSummary> {
    let spec = eval_spec(augment);
    let mut mious = Vec::with_capacity(set.len());
    let mut losses = Vec::with_capacity(set.len());
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let items: Vec<SamplePair> = chunk
            .iter()
            .map(|&i| augment_pair(&*set.get(i)?, &spec, &mut rng::keyed(&[0])))
            .collect::<Result<_>>()?;
        let (x, _) = batch_inputs(&items)?;
        let logits = model.forward(&x, &ForwardCtx::eval())?;
        let s = logits.shape();
        let per = s.c() * s.plane();
        let preds = predict_labels(&logits);
        for (k, (item, pred)) in items.iter().zip(&preds).enumerate() {
            let counts = confusion_counts(pred, &item.label, classes)?;
            if counts.total() == 0 {
                continue;
            }
            let one = Tensor::from_vec(
                Shape::new(1, s.c(), s.h(), s.w()),
                logits.data()[k * per..(k + 1) * per].to_vec(),
            )?;
            let ce = softmax_cross_entropy(&one, item.label.data(), IGNORE_LABEL)?;
            mious.push(image_miou(&counts)?);
            losses.push(ce.loss);
        }
    }
    dataset_summary(&mious, &losses)
}

pub const METRICS_HEADER: &str =
    "epoch,train_loss,val_loss,mean_miou,std,worst,median,best,train_miou,p_resnet,p_spp,p_decoder";

/// Full record of a run as written to `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub best_epoch: usize,
    pub best: EpochMetrics,
    pub epochs: Vec<EpochMetrics>,
}

pub fn best_epoch(history: &[EpochMetrics]) -> Option<&EpochMetrics> {
    let mut best: Option<&EpochMetrics> = None;
    for m in history {
        if best.map_or(true, |b| m.beats(b)) {
            best = Some(m);
        }
    }
    best
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in history {
        let v = &m.val;
        let p = &m.effective_p;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            m.epoch,
            m.train_loss,
            m.val_loss,
            v.mean,
            v.std,
            v.worst,
            v.median,
            v.best,
            m.train_miou,
            p[0],
            p[1],
            p[2]
        ));
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `metrics.csv`, `metrics.json` and `timing.csv` into `dir`. The
/// first two depend only on the run's configuration and seed; wall-clock
/// times go to the third.
pub fn emit_metrics(history: &[EpochMetrics], dir: &Path) -> Result<()> {
    let best =
        best_epoch(history).ok_or_else(|| Error::Evaluation("no epochs to report".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("metrics.csv"), &metrics_csv(history))?;
    let report = MetricsReport {
        best_epoch: best.epoch,
        best: best.clone(),
        epochs: history.to_vec(),
    };
    write(
        &dir.join("metrics.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    let mut timing = String::from("epoch,wall_seconds\n");
    for m in history {
        timing.push_str(&format!("{},{}\n", m.epoch, m.wall_seconds));
    }
    write(&dir.join("timing.csv"), &timing)
}

/// Colourised predictions for the probe images.
pub fn write_probes(preds: &[LabelMap], classes: usize, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let palette = voc_palette(classes.max(21));
    for (i, p) in preds.iter().enumerate() {
        write_png_rgb(
            &dir.join(format!("probe_{i:02}.png")),
            &colorize_labels(p, &palette)?,
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub name: String,
    pub best: EpochMetrics,
    pub history: Vec<EpochMetrics>,
    pub checkpoint: PathBuf,
    /// Regularizer masks drawn over the whole run.
    pub masks_drawn: u64,
}

/// Trains for the configured number of epochs, keeping the checkpoint and
/// probe predictions of the best epoch. Metrics are rewritten after every
/// epoch, so a failing run leaves the completed epochs on disk.
pub fn run_experiment(exp: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    exp.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write(
        &out_dir.join("config.json"),
        &serde_json::to_string_pretty(exp)?,
    )?;
    let data = load_splits(&exp.train)?;
    let model = Model::build(exp.model.clone(), exp.hooks(), exp.train.seed)?;
    let mut state = TrainState::new(model);
    let mut history: Vec<EpochMetrics> = Vec::with_capacity(exp.train.epochs);
    let stem = out_dir.join("best");
    let mut checkpoint = PathBuf::new();
    for epoch in 0..exp.train.epochs {
        let m = match train_epoch(&mut state, &data, &exp.train, epoch) {
            Ok(m) => m,
            Err(e) => {
                if !history.is_empty() {
                    emit_metrics(&history, out_dir)?;
                }
                return Err(e);
            }
        };
        log::info!(
            "{} epoch {epoch}: train loss {:.4}, val mIoU {:.4}",
            exp.name,
            m.train_loss,
            m.val.mean
        );
        let improved = best_epoch(&history).map_or(true, |b| m.beats(b));
        history.push(m);
        if improved {
            checkpoint = state.model.save_checkpoint(&stem, Some(&state.velocity))?;
            let preds = predict(
                &mut state.model,
                &data.val,
                &exp.train.augment,
                exp.train.probe_count,
            )?;
            write_probes(&preds, data.classes, &out_dir.join("probes"))?;
        }
        emit_metrics(&history, out_dir)?;
    }
    let best = best_epoch(&history).expect("at least one epoch").clone();
    Ok(ExperimentOutcome {
        name: exp.name.clone(),
        best,
        history,
        checkpoint,
        masks_drawn: state.model.stats.masks_drawn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(epoch: usize, mean: f64, loss: f64) -> EpochMetrics {
        EpochMetrics {
            epoch,
            train_loss: 1.0,
            val_loss: loss,
            val: MiouSummary {
                mean,
                std: 0.0,
                worst: mean,
                median: mean,
                best: mean,
                loss,
            },
            train_miou: 0.5,
            effective_p: [0.0; 3],
            wall_seconds: 1.5,
        }
    }

    #[test]
    fn best_epoch_tie_breaks() {
        let h = vec![
            metrics(0, 0.5, 1.0),
            metrics(1, 0.6, 2.0),
            metrics(2, 0.6, 1.5),
            metrics(3, 0.6, 1.5),
        ];
        assert_eq!(best_epoch(&h).unwrap().epoch, 2);
        assert_eq!(best_epoch(&h[..1]).unwrap().epoch, 0);
        assert!(best_epoch(&[]).is_none());
    }

    #[test]
    fn emitted_files() {
        let dir = tempfile::tempdir().unwrap();
        let h = vec![metrics(0, 0.1 + 0.2, 1.0 / 3.0), metrics(1, 0.7, 0.25)];
        emit_metrics(&h, dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().next(), Some(METRICS_HEADER));
        assert!(!csv.contains("1.5"));
        let json = fs::read_to_string(dir.path().join("metrics.json")).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.epochs[0].val.mean, 0.1 + 0.2);
        assert_eq!(back.epochs[0].val_loss, 1.0 / 3.0);
        assert_eq!(back.best_epoch, 1);
        assert!(emit_metrics(&[], dir.path()).is_err());
    }
}
