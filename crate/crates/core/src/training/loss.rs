use ndarray::{Array2, Array4, Axis};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::model::{DttNet, ModelConfig};
use crate::params::Grads;
use crate::spectral::{istft_adjoint, istft_with_fill, stft, stft_uncropped, ComplexSpectrogram, HighBinFill, Waveform};

use super::optim::AdamW;
use super::TrainConfig;

/// One aligned (mixture, target) chunk.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub id: String,
    pub mixture: Waveform,
    pub target: Waveform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

struct Prepared {
    specs: Vec<ComplexSpectrogram>,
    mixtures: Vec<Waveform>,
    targets: Vec<Waveform>,
    input: Array4<f64>,
}

fn prepare(cfg: &ModelConfig, batch: &[TrainExample]) -> Result<Prepared> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let m = cfg.frame_multiple();
    let mut specs: Vec<ComplexSpectrogram> = Vec::with_capacity(batch.len());
    let mut mixtures = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for ex in batch {
        let mix = ex.mixture.with_channels(cfg.audio_channels)?;
        let target = ex.target.with_channels(cfg.audio_channels)?;
        if mix.len() != target.len() {
            return Err(Error::shape(format!("{}: mixture and target lengths differ", ex.id)));
        }
        let s = stft(&mix, &cfg.spectral)?;
        let keep = s.frames() / m * m;
        if keep == 0 {
            return Err(Error::shape(format!("{}: chunk too short for {m} frames", ex.id)));
        }
        if let Some(first) = specs.first() {
            if first.frames() != keep || first.source_length() != s.source_length() {
                return Err(Error::shape(format!("{}: chunk length differs within the batch", ex.id)));
            }
        }
        specs.push(s.trim_frames(keep)?);
        mixtures.push(mix);
        targets.push(target);
    }
    let views: Vec<_> = specs.iter().map(|s| s.data()).collect();
    let input = ndarray::stack(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?;
    Ok(Prepared { specs, mixtures, targets, input })
}

impl Prepared {
    fn count(&self) -> f64 {
        (self.targets.len() * self.targets[0].channels() * self.targets[0].len()) as f64
    }

    /// Waveform of item `b` from network output `y`, minus its target.
    fn residual<T: Float>(&self, cfg: &ModelConfig, y: &Array4<T>, b: usize) -> Result<(ComplexSpectrogram, Array2<f64>)> {
        let out = self.specs[b].with_data(y.index_axis(Axis(0), b).mapv(|v| v.as_f64()))?;
        let fill = match cfg.spectral.high_bins {
            HighBinFill::Mixture => Some(stft_uncropped(&self.mixtures[b], &cfg.spectral)?),
            HighBinFill::Zero => None,
        };
        let wav = istft_with_fill(&out, &cfg.spectral, fill.as_ref())?;
        let diff = &wav.samples() - &self.targets[b].samples();
        Ok((out, diff))
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute error between the separated chunk waveforms and the targets.
pub fn waveform_loss<T: Float>(net: &DttNet<T>, batch: &[TrainExample]) -> Result<f64> {
    let cfg = net.config();
    let p = prepare(cfg, batch)?;
    let y = net.forward(&p.input.mapv(T::of))?;
    if !y.iter().all(|v| v.is_finite()) {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for b in 0..batch.len() {
        total += p.residual(cfg, &y, b)?.1.iter().map(|d| d.abs()).sum::<f64>();
    }
    Ok(total / p.count())
}

/// [`waveform_loss`] and its parameter gradient. Every chunk goes
/// STFT → network → ISTFT; the gradient returns through the exact
/// transpose of the ISTFT.
pub fn loss_and_grads<T: Float>(net: &DttNet<T>, batch: &[TrainExample]) -> Result<(f64, Grads<T>)> {
    let cfg = net.config();
    let p = prepare(cfg, batch)?;
    let (y, cache) = net.forward_train(&p.input.mapv(T::of))?;
    let count = p.count();
    let mut grads = net.params().zeros_like();
    if !y.iter().all(|v| v.is_finite()) {
        // No waveform exists to compare; the gradient is undefined as well.
        net.backward(cache, &Array4::from_elem(y.raw_dim(), T::nan()), &mut grads);
        return Ok((f64::NAN, grads));
    }
    let mut total = 0.0;
    let mut dy = Array4::<f64>::zeros(y.raw_dim());
    for b in 0..batch.len() {
        let (out, diff) = p.residual(cfg, &y, b)?;
        total += diff.iter().map(|d| d.abs()).sum::<f64>();
        let g = diff.mapv(|d| sign(d) / count);
        dy.index_axis_mut(Axis(0), b)
            .assign(&istft_adjoint(g.view(), &out, &cfg.spectral)?);
    }
    net.backward(cache, &dy.mapv(T::of), &mut grads);
    Ok((total / count, grads))
}

/// One optimizer update on `batch`. A non-finite loss or gradient aborts
/// with the batch ids and gradient norm in the error.
pub fn train_step<T: Float>(
    net: &mut DttNet<T>,
    opt: &mut AdamW<T>,
    batch: &[TrainExample],
    cfg: &TrainConfig,
) -> Result<StepReport> {
    let (loss, mut grads) = loss_and_grads(net, batch)?;
    let grad_norm = grads.global_norm();
    if !loss.is_finite() || !grad_norm.is_finite() || !grads.is_finite() {
        let ids: Vec<&str> = batch.iter().map(|e| e.id.as_str()).collect();
        return Err(Error::Numerical(format!(
            "non-finite training step at update {}: loss {loss}, grad norm {grad_norm}, batch {ids:?}",
            opt.step + 1
        )));
    }
    if let Some(clip) = cfg.grad_clip {
        if grad_norm > clip {
            grads.scale(T::of(clip / grad_norm));
        }
    }
    opt.update(net.params_mut(), &grads);
    Ok(StepReport { loss, grad_norm })
}
