use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::params::{init_params, Gradients, NetworkParams};
use super::{real, Architecture, Real};
use crate::cloud::{bbox_diagonal, load_cloud, PointCloud};
use crate::error::{Error, Result};
use crate::index::NeighborIndex;
use crate::loss::{total_loss, CleanPatch, LossKind, LossParams};
use crate::patch::{canonicalize, extract_patch_pair, CanonicalPatchPair};
use crate::rng::stream;
use crate::synth::DatasetManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::invalid(format!("unknown precision `{other}` (expected f32 or f64)"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub eta: f64,
    pub sigma_n_degrees: f64,
    pub patch_size: usize,
    pub radius_fraction: f64,
    pub loss_kind: LossKind,
    pub seed: u64,
    /// Reductions always run in a fixed order, so training is reproducible
    /// for a given seed either way.
    pub deterministic: bool,
    pub architecture: Architecture,
    pub precision: Precision,
    /// Start from a zeroed output layer (the identity filter).
    pub zero_init_output: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            lr_start: 1e-4,
            lr_end: 1e-8,
            eta: 0.97,
            sigma_n_degrees: 15.0,
            patch_size: 500,
            radius_fraction: 0.05,
            loss_kind: LossKind::ProjB,
            seed: 0,
            deterministic: true,
            architecture: Architecture::default(),
            precision: Precision::F32,
            zero_init_output: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss_params().validate()?;
        self.architecture.validate()?;
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2 for batch statistics"));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rates must satisfy lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        if self.patch_size == 0 {
            return Err(Error::invalid("patch size must be at least 1"));
        }
        if !(self.radius_fraction > 0.0 && self.radius_fraction.is_finite()) {
            return Err(Error::invalid("radius fraction must be positive"));
        }
        Ok(())
    }

    pub fn loss_params(&self) -> LossParams {
        LossParams {
            eta: self.eta,
            sigma_n_degrees: self.sigma_n_degrees,
        }
    }
}

/// Geometric decay from `lr_start` at epoch 0 to `lr_end` at the last epoch.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} outside 0..{}",
            config.epochs
        )));
    }
    if config.epochs == 1 {
        return Ok(config.lr_start);
    }
    if epoch == config.epochs - 1 {
        return Ok(config.lr_end);
    }
    let t = epoch as f64 / (config.epochs - 1) as f64;
    Ok(config.lr_start * (config.lr_end / config.lr_start).powf(t))
}

/// `theta <- theta - lr * g` for every trainable tensor.
pub fn sgd_step<T: Real>(params: &mut NetworkParams<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
    let g = grads.tensors();
    let mut p = params.trainable_mut();
    if g.len() != p.len() || g.iter().zip(&p).any(|(g, p)| g.len() != p.len()) {
        return Err(Error::State("gradients do not match the parameter shapes".into()));
    }
    let lr = real::<T>(lr);
    for (p, g) in p.iter_mut().zip(g) {
        for (x, &d) in p.iter_mut().zip(g) {
            *x -= lr * d;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub skipped_patches: usize,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}, {:.6e}, {:.9e}, {}",
            self.epoch, self.lr, self.mean_loss, self.skipped_patches
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl fmt::Display for TrainingLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "epoch, lr, mean_loss, skipped_patches")?;
        for r in &self.records {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

/// A noisy cloud with its clean counterpart (which must carry normals).
#[derive(Debug, Clone)]
pub struct TrainingModel {
    pub noisy: PointCloud,
    pub clean: PointCloud,
}

impl TrainingModel {
    pub fn new(noisy: PointCloud, clean: PointCloud) -> Result<Self> {
        if clean.normals().is_none() {
            return Err(Error::invalid("clean training cloud has no normals"));
        }
        if noisy.is_empty() || clean.is_empty() {
            return Err(Error::EmptyInput("training cloud".into()));
        }
        Ok(Self { noisy, clean })
    }

    /// Loads every entry of a dataset manifest.
    pub fn load_manifest(manifest: &DatasetManifest) -> Result<Vec<Self>> {
        manifest
            .entries
            .iter()
            .map(|e| Self::new(load_cloud(&e.noisy)?, load_cloud(&e.clean)?))
            .collect()
    }
}

struct Prepared<'a> {
    model: &'a TrainingModel,
    noisy_index: NeighborIndex,
    clean_index: NeighborIndex,
    radius: f64,
}

/// Trains on every manifest entry with `manifest.patches_per_model` patches
/// per model and epoch.
pub fn train(manifest: &DatasetManifest, config: &TrainConfig) -> Result<(NetworkParams, TrainingLog)> {
    let models = TrainingModel::load_manifest(manifest)?;
    train_models(&models, manifest.patches_per_model, config, |_| {})
}

/// Trains from freshly initialized parameters, reporting each finished epoch.
pub fn train_models(
    models: &[TrainingModel],
    patches_per_model: usize,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(NetworkParams, TrainingLog)> {
    config.validate()?;
    if models.is_empty() {
        return Err(Error::EmptyInput("no training models".into()));
    }
    if patches_per_model == 0 {
        return Err(Error::invalid("patches per model must be at least 1"));
    }
    let prepared = models
        .iter()
        .map(|model| {
            Ok(Prepared {
                model,
                noisy_index: NeighborIndex::from_cloud(&model.noisy)?,
                clean_index: NeighborIndex::from_cloud(&model.clean)?,
                radius: config.radius_fraction * bbox_diagonal(&model.noisy)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if prepared.iter().any(|p| !(p.radius > 0.0)) {
        return Err(Error::invalid("a training cloud has a zero bounding box"));
    }

    let mut params = init_params(&config.architecture, config.seed)?;
    if config.zero_init_output {
        params.zero_output_layer();
    }
    match config.precision {
        Precision::F32 => {
            let (p, log) = run::<f32>(params.cast(), &prepared, patches_per_model, config, on_epoch)?;
            Ok((p.cast(), log))
        }
        Precision::F64 => run::<f64>(params, &prepared, patches_per_model, config, on_epoch),
    }
}

/// Stream tag separating the shuffle stream from per-patch streams.
const SHUFFLE_TAG: u64 = u64::MAX;

fn sample_patch(
    prepared: &Prepared,
    epoch: usize,
    model: usize,
    sample: usize,
    config: &TrainConfig,
) -> Result<Option<CanonicalPatchPair>> {
    let mut rng = stream(config.seed, &[epoch as u64, model as u64, sample as u64]);
    let center = rng.random_range(0..prepared.model.noisy.len());
    let raw = match extract_patch_pair(
        &prepared.model.noisy,
        &prepared.model.clean,
        center,
        prepared.radius,
        &prepared.noisy_index,
        &prepared.clean_index,
    ) {
        Ok(raw) => raw,
        Err(Error::DegeneratePatch(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let pair = canonicalize(&raw, config.patch_size, &mut rng)?;
    Ok((!pair.noisy.degenerate).then_some(pair))
}

fn run<T: Real>(
    mut params: NetworkParams<T>,
    models: &[Prepared],
    patches_per_model: usize,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(NetworkParams<T>, TrainingLog)> {
    let n = config.patch_size;
    let loss_params = config.loss_params();
    let mut log = TrainingLog::default();
    for epoch in 0..config.epochs {
        let lr = lr_schedule(epoch, config)?;
        let mut plan: Vec<(usize, usize)> = (0..models.len())
            .flat_map(|m| (0..patches_per_model).map(move |s| (m, s)))
            .collect();
        plan.shuffle(&mut stream(config.seed, &[SHUFFLE_TAG, epoch as u64]));

        let mut skipped = 0;
        let mut loss_sum = 0.0;
        let mut used = 0;
        for chunk in plan.chunks(config.batch_size) {
            let sampled = chunk
                .par_iter()
                .map(|&(m, s)| sample_patch(&models[m], epoch, m, s, config))
                .collect::<Result<Vec<_>>>()?;
            let pairs: Vec<CanonicalPatchPair> = sampled.into_iter().flatten().collect();
            skipped += chunk.len() - pairs.len();
            if pairs.len() < 2 {
                skipped += pairs.len();
                continue;
            }
            let batch = pairs.len();
            let input = Array2::from_shape_fn((batch * n, 3), |(r, c)| {
                real::<T>(pairs[r / n].noisy.points[r % n][c])
            });
            let (out, cache) = params.forward_train(input.view(), n)?;
            let terms = pairs
                .par_iter()
                .enumerate()
                .map(|(b, pair)| {
                    let d = crate::Vec3::from_fn(|c, _| out[(b, c)].to_f64().expect("finite"));
                    Ok(total_loss(&d, &CleanPatch::from_pair(pair)?, &loss_params, config.loss_kind))
                })
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch as f64;
            let grad_out = Array2::from_shape_fn((batch, 3), |(b, c)| real::<T>(terms[b].grad[c] * scale));
            let grads = params.backward(&cache, grad_out.view())?;
            sgd_step(&mut params, &grads, lr)?;
            loss_sum += terms.iter().map(|t| t.total).sum::<f64>();
            used += batch;
        }
        if used == 0 {
            return Err(Error::Training(format!(
                "every patch of epoch {epoch} was degenerate ({skipped} skipped)"
            )));
        }
        let record = EpochRecord {
            epoch,
            lr,
            mean_loss: loss_sum / used as f64,
            skipped_patches: skipped,
        };
        if !record.mean_loss.is_finite() || !params.all_finite() {
            return Err(Error::Training(format!("training diverged in epoch {epoch}")));
        }
        on_epoch(&record);
        log.records.push(record);
    }
    Ok((params, log))
}
