use std::fmt;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;

use crate::data::augment::augment;
use crate::data::mixing::{mix_train_pattern, TargetMode};
use crate::data::patterns::is_vocal_chops;
use crate::data::{AugmentSpec, PatternBank, TrackSet};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::metrics::usdr;
use crate::model::{separate, Checkpoint, DttNet, Estimator, TrainingMeta};
use crate::seed;
use crate::spectral::Waveform;

use super::loss::{train_step, TrainExample};
use super::optim::AdamW;
use super::{TrainConfig, TrainMode};

/// A full validation song and its reference stem.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidTrack {
    pub name: String,
    pub mixture: Waveform,
    pub target: Waveform,
}

/// Everything [`fit`] reads. `patterns` is required for the fine-tuning modes.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub train: TrackSet,
    pub valid: Vec<ValidTrack>,
    pub patterns: Option<PatternBank>,
}

impl TrainData {
    /// Validation set from whole tracks of a track set.
    pub fn valid_from(set: &TrackSet, source: crate::model::Source) -> Result<Vec<ValidTrack>> {
        set.tracks
            .iter()
            .map(|t| {
                Ok(ValidTrack {
                    name: t.name.clone(),
                    mixture: t.mixture.clone(),
                    target: t.stem(source)?.clone(),
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Where `best.ckpt` and `last.ckpt` are written after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
    /// A `last.ckpt` to continue from (weights, optimizer moments, best score).
    pub resume: Option<PathBuf>,
}

/// One drawn training chunk, recorded for auditing.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplerEvent {
    pub epoch: usize,
    pub index: usize,
    pub track: String,
    pub offset: usize,
    pub augment: AugmentSpec,
    pub pattern: Option<String>,
    pub segment: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid_usdr: f64,
    pub best: bool,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss={:.6} valid_usdr={:.4} best={}",
            self.epoch, self.mean_loss, self.valid_usdr, self.best
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub best_usdr: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best_path: Option<PathBuf>,
    pub loss_history: Vec<f64>,
    pub usdr_history: Vec<f64>,
}

impl TrainState {
    /// Records an epoch's validation score; true when it strictly beats the best so far.
    pub fn observe(&mut self, epoch: usize, valid_usdr: f64) -> bool {
        self.usdr_history.push(valid_usdr);
        let better = self.best_usdr.is_none_or(|b| valid_usdr > b);
        if better {
            self.best_usdr = Some(valid_usdr);
            self.best_epoch = Some(epoch);
        }
        better
    }

    fn meta(&self) -> TrainingMeta {
        TrainingMeta {
            epoch: self.epoch,
            step: self.step,
            best_usdr: self.best_usdr,
            best_epoch: self.best_epoch,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome<T> {
    /// Weights with the highest validation uSDR (the initial model if no epoch ran).
    pub best: Checkpoint<T>,
    pub state: TrainState,
    pub epochs: Vec<EpochLog>,
    pub audit: Vec<SamplerEvent>,
}

/// Full-song chunked separation of every validation track, scored by uSDR.
pub fn validate<E: Estimator + ?Sized>(est: &E, valid: &[ValidTrack], overlap: f64) -> Result<f64> {
    if valid.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let pairs = valid
        .iter()
        .map(|t| {
            let est = separate(est, &t.mixture, overlap)?;
            Ok((t.target.with_channels(est.channels())?, est))
        })
        .collect::<Result<Vec<_>>>()?;
    usdr(&pairs)
}

/// Patterns a fine-tuning mode may draw, with their role in the target.
fn pattern_pool(mode: TrainMode, bank: &PatternBank) -> Vec<(String, TargetMode)> {
    bank.names()
        .filter_map(|name| match (mode, is_vocal_chops(name)) {
            (TrainMode::Base, _) | (TrainMode::Nvc, true) => None,
            (TrainMode::Vc, true) => Some((name.to_string(), TargetMode::Target)),
            _ => Some((name.to_string(), TargetMode::Accompaniment)),
        })
        .collect()
}

struct Sampler<'a> {
    cfg: &'a TrainConfig,
    data: &'a TrainData,
    source: crate::model::Source,
    chunk_len: usize,
    pool: Vec<(String, TargetMode)>,
}

const CHUNK_TAG: &str = "train-chunk";

impl Sampler<'_> {
    /// Chunk `index` of `epoch`. Depends only on the seed and these two
    /// numbers, so producers may run in any order or thread count.
    fn draw(&self, epoch: usize, index: usize) -> Result<(TrainExample, SamplerEvent)> {
        let mut rng = seed::rng(self.cfg.seed, &[seed::tag_str(CHUNK_TAG), epoch as u64, index as u64]);
        let spec = if self.cfg.augment {
            AugmentSpec::random(&mut rng)
        } else {
            AugmentSpec::IDENTITY
        };
        // Draw enough source audio that the stretched result covers the chunk.
        let duration = 1.0 + spec.stretch_percent as f64 / 100.0;
        let raw_len = (self.chunk_len as f64 / duration).ceil() as usize + 1;
        let pair = self.data.train.sample_chunk(self.source, raw_len, &mut rng)?;
        let (mut mixture, mut target) = if spec.is_identity() {
            (pair.mixture, pair.target)
        } else {
            (augment(&pair.mixture, spec)?, augment(&pair.target, spec)?)
        };
        mixture = mixture.resized(self.chunk_len)?;
        target = target.resized(self.chunk_len)?;
        let mut event = SamplerEvent {
            epoch,
            index,
            track: self.data.train.tracks[pair.track].name.clone(),
            offset: pair.offset,
            augment: spec,
            pattern: None,
            segment: None,
        };
        if self.cfg.mode.is_finetune() {
            let bank = self.data.patterns.as_ref().expect("checked in fit");
            let (pattern, role) = &self.pool[rng.random_range(0..self.pool.len())];
            let mixed = mix_train_pattern(&mixture, &target, bank, pattern, *role, &self.cfg.overlay, &mut rng)?;
            mixture = mixed.mixture;
            target = mixed.target;
            event.pattern = Some(mixed.placement.pattern);
            event.segment = Some(mixed.placement.segment);
        }
        let id = format!("e{epoch}/c{index}:{}@{}", event.track, event.offset);
        Ok((TrainExample { id, mixture, target }, event))
    }
}

fn save_to(dir: Option<&Path>, file: &str, ck: &Checkpoint<impl Float>) -> Result<Option<PathBuf>> {
    let Some(dir) = dir else { return Ok(None) };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(file);
    ck.save(&path)?;
    Ok(Some(path))
}

/// Runs `cfg.max_epochs` epochs (counting any resumed ones) and returns the
/// best-scoring weights. Each epoch draws `epoch_size` chunks, takes
/// `ceil(epoch_size / batch_size)` optimizer steps, then validates.
pub fn fit<T: Float>(net: DttNet<T>, cfg: &TrainConfig, data: &TrainData, opts: &FitOptions) -> Result<FitOutcome<T>> {
    cfg.validate()?;
    let mut net = net;
    let mut opt = AdamW::new(net.params(), cfg);
    let mut state = TrainState::default();
    let dir = opts.checkpoint_dir.as_deref();
    let mut best = Checkpoint::from_net(&net, state.meta());

    if let Some(path) = &opts.resume {
        let ck = Checkpoint::<T>::load_expecting(path, net.config())?;
        net = ck.to_net()?;
        opt.load_arrays(net.params(), &ck.extra, ck.meta.step)?;
        state.epoch = ck.meta.epoch;
        state.step = ck.meta.step;
        state.best_usdr = ck.meta.best_usdr;
        state.best_epoch = ck.meta.best_epoch;
        let best_path = path.with_file_name("best.ckpt");
        best = if best_path.exists() {
            state.best_path = Some(best_path.clone());
            Checkpoint::load_expecting(&best_path, net.config())?
        } else {
            Checkpoint::from_net(&net, state.meta())
        };
        log::info!("resumed from {} at epoch {}", path.display(), state.epoch);
    }

    if state.epoch >= cfg.max_epochs {
        return Ok(FitOutcome { best, state, epochs: Vec::new(), audit: Vec::new() });
    }
    if data.valid.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let pool = match (&data.patterns, cfg.mode.is_finetune()) {
        (_, false) => Vec::new(),
        (None, true) => return Err(Error::config("fine-tuning needs a pattern bank")),
        (Some(bank), true) => pattern_pool(cfg.mode, bank),
    };
    if cfg.mode.is_finetune() && pool.is_empty() {
        return Err(Error::Data("pattern bank has no pattern usable in this mode".into()));
    }
    let sampler = Sampler {
        cfg,
        data,
        source: net.config().source,
        chunk_len: net.config().chunk_samples(),
        pool,
    };

    let epoch_size = cfg.epoch_size();
    let mut epochs = Vec::new();
    let mut audit = Vec::new();
    while state.epoch < cfg.max_epochs {
        let epoch = state.epoch + 1;
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for start in (0..epoch_size).step_by(cfg.batch_size) {
            let end = (start + cfg.batch_size).min(epoch_size);
            let drawn = (start..end)
                .into_par_iter()
                .map(|i| sampler.draw(epoch, i))
                .collect::<Result<Vec<_>>>()?;
            let (batch, events): (Vec<_>, Vec<_>) = drawn.into_iter().unzip();
            audit.extend(events);
            let report = train_step(&mut net, &mut opt, &batch, cfg)?;
            loss_sum += report.loss;
            steps += 1;
        }
        state.epoch = epoch;
        state.step = opt.step;
        let mean_loss = loss_sum / steps as f64;
        state.loss_history.push(mean_loss);

        let valid_usdr = validate(&net, &data.valid, cfg.valid_overlap)?;
        let improved = state.observe(epoch, valid_usdr);
        if improved {
            best = Checkpoint::from_net(&net, state.meta());
            if let Some(p) = save_to(dir, "best.ckpt", &best)? {
                state.best_path = Some(p);
            }
        }
        best.meta = state.meta();
        let mut last = Checkpoint::from_net(&net, state.meta());
        last.extra = opt.to_arrays(net.params());
        save_to(dir, "last.ckpt", &last)?;

        let line = EpochLog { epoch, mean_loss, valid_usdr, best: improved };
        log::info!("{line}");
        epochs.push(line);
    }
    // The returned checkpoint describes the run but keeps the best weights.
    Ok(FitOutcome { best, state, epochs, audit })
}

/// Runs `f` on a one-thread pool so reductions happen in a fixed order.
pub fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_improves_only_strictly() {
        let mut s = TrainState::default();
        assert!(s.observe(1, 3.0));
        assert!(!s.observe(2, 3.0));
        assert!(!s.observe(3, 1.0));
        assert!(s.observe(4, 3.5));
        assert_eq!(s.best_epoch, Some(4));
        assert_eq!(s.best_usdr, Some(3.5));
    }

    #[test]
    fn epoch_line_is_stable() {
        let l = EpochLog { epoch: 3, mean_loss: 0.5, valid_usdr: 4.25, best: true };
        assert_eq!(l.to_string(), "epoch=3 loss=0.500000 valid_usdr=4.2500 best=true");
    }
}
