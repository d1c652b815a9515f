//! The full network: input conv, encoder levels, latent block with IDPMs,
//! decoder levels with multiplicative skips, output conv.

use ndarray::Array4;

use crate::blocks::conv::Conv2d;
use crate::blocks::sampling::{Downsample, Upsample};
use crate::blocks::tfc::{TfcTdf, TfcTdfCache};
use crate::blocks::{BlockConfig, ConvGeometry, Layer};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::idpm::{Idpm, IdpmCache};
use crate::params::{Grads, ParamBuilder, ParamStore};
use crate::seed;

use super::config::ModelConfig;

#[derive(Clone, Debug)]
pub struct EncoderLevel {
    pub block: TfcTdf,
    pub down: Downsample,
}

#[derive(Clone, Debug)]
pub struct DecoderLevel {
    pub up: Upsample,
    pub block: TfcTdf,
}

/// Layer structure without parameter values.
#[derive(Clone, Debug)]
pub struct Architecture {
    pub input: Conv2d,
    /// Shallowest first.
    pub encoder: Vec<EncoderLevel>,
    pub latent: TfcTdf,
    pub idpms: Vec<Idpm>,
    /// Deepest first, in execution order.
    pub decoder: Vec<DecoderLevel>,
    pub output: Conv2d,
}

/// What the decoder multiplies its upsampled features with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipSource {
    Encoder,
    /// All-ones skips: the decoder-only path.
    Ones,
}

pub struct NetCache<T> {
    input: Array4<T>,
    encoder: Vec<(TfcTdfCache<T>, Array4<T>, Array4<T>)>,
    latent: TfcTdfCache<T>,
    idpms: Vec<IdpmCache<T>>,
    decoder: Vec<(Array4<T>, Array4<T>, TfcTdfCache<T>)>,
    output: Array4<T>,
}

#[derive(Clone, Debug)]
pub struct DttNet<T> {
    config: ModelConfig,
    arch: Architecture,
    params: ParamStore<T>,
}

impl<T: Float> DttNet<T> {
    /// Builds the network with parameters drawn from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = seed::rng(config.init_seed, &[seed::tag_str("init")]);
        let arch = {
            let mut pb = ParamBuilder::new(&mut params, &mut rng);
            build(&mut pb, &config)?
        };
        Ok(Self { config, arch, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Same architecture, parameters converted to another precision.
    pub fn cast<U: Float>(&self) -> DttNet<U> {
        let mut params = ParamStore::new();
        for p in self.params.iter() {
            params
                .insert(p.name.clone(), p.value.mapv(|v| U::of(v.as_f64())))
                .expect("names are unique");
        }
        DttNet {
            config: self.config.clone(),
            arch: self.arch.clone(),
            params,
        }
    }

    pub fn check_input(&self, x: &Array4<T>) -> Result<()> {
        let (_, c, f, t) = x.dim();
        let m = self.config.frame_multiple();
        if c != self.config.input_channels() || f != self.config.spectral.crop_bins {
            return Err(Error::shape(format!(
                "network expects [_, {}, {}, _], got {:?}",
                self.config.input_channels(),
                self.config.spectral.crop_bins,
                x.dim()
            )));
        }
        if t == 0 || t % m != 0 {
            return Err(Error::shape(format!("frame count {t} is not a positive multiple of {m}")));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array4<T>) -> Result<Array4<T>> {
        self.forward_with_skips(x, SkipSource::Encoder)
    }

    pub fn forward_with_skips(&self, x: &Array4<T>, skips: SkipSource) -> Result<Array4<T>> {
        self.check_input(x)?;
        let ps = &self.params;
        let a = &self.arch;
        let mut h = a.input.forward(ps, x)?;
        let mut saved = Vec::with_capacity(a.encoder.len());
        for level in &a.encoder {
            h = level.block.forward(ps, &h)?;
            let next = level.down.forward(ps, &h)?;
            if skips == SkipSource::Encoder {
                saved.push(h);
            }
            h = next;
        }
        h = a.latent.forward(ps, &h)?;
        for idpm in &a.idpms {
            h = idpm.forward(ps, &h)?;
        }
        for level in &a.decoder {
            h = level.up.forward(ps, &h)?;
            if let Some(skip) = saved.pop() {
                h *= &skip;
            }
            h = level.block.forward(ps, &h)?;
        }
        a.output.forward(ps, &h)
    }

    pub fn forward_train(&self, x: &Array4<T>) -> Result<(Array4<T>, NetCache<T>)> {
        self.check_input(x)?;
        let ps = &self.params;
        let a = &self.arch;
        let (mut h, input) = a.input.forward_train(ps, x)?;
        let mut encoder = Vec::with_capacity(a.encoder.len());
        for level in &a.encoder {
            let (skip, bc) = level.block.forward_train(ps, &h)?;
            let (next, dc) = level.down.forward_train(ps, &skip)?;
            encoder.push((bc, dc, skip));
            h = next;
        }
        let (mut h, latent) = a.latent.forward_train(ps, &h)?;
        let mut idpms = Vec::with_capacity(a.idpms.len());
        for idpm in &a.idpms {
            let (y, c) = idpm.forward_train(ps, &h)?;
            idpms.push(c);
            h = y;
        }
        let mut decoder = Vec::with_capacity(a.decoder.len());
        for (level, (_, _, skip)) in a.decoder.iter().zip(encoder.iter().rev()) {
            let (up, uc) = level.up.forward_train(ps, &h)?;
            let (y, bc) = level.block.forward_train(ps, &(&up * skip))?;
            decoder.push((uc, up, bc));
            h = y;
        }
        let (y, output) = a.output.forward_train(ps, &h)?;
        Ok((
            y,
            NetCache {
                input,
                encoder,
                latent,
                idpms,
                decoder,
                output,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, cache: NetCache<T>, dy: &Array4<T>, grads: &mut Grads<T>) -> Array4<T> {
        let ps = &self.params;
        let a = &self.arch;
        let NetCache {
            input,
            encoder,
            latent,
            idpms,
            decoder,
            output,
        } = cache;
        let n = encoder.len();
        let mut d = a.output.backward(ps, output, dy, grads);
        // Decoder level k consumes the skip of encoder level n-1-k.
        let mut dskips: Vec<Option<Array4<T>>> = (0..n).map(|_| None).collect();
        for (k, (uc, up, bc)) in decoder.into_iter().enumerate().rev() {
            let level = &a.decoder[k];
            let skip = &encoder[n - 1 - k].2;
            let dprod = level.block.backward(ps, bc, &d, grads);
            dskips[n - 1 - k] = Some(&dprod * &up);
            d = level.up.backward(ps, uc, &(&dprod * skip), grads);
        }
        for (idpm, c) in a.idpms.iter().zip(idpms).rev() {
            d = idpm.backward(ps, c, &d, grads);
        }
        d = a.latent.backward(ps, latent, &d, grads);
        for (j, (bc, dc, _)) in encoder.into_iter().enumerate().rev() {
            let level = &a.encoder[j];
            let mut dh = level.down.backward(ps, dc, &d, grads);
            dh += dskips[j].as_ref().expect("every level has a decoder partner");
            d = level.block.backward(ps, bc, &dh, grads);
        }
        a.input.backward(ps, input, &d, grads)
    }
}

fn build<T: Float>(pb: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Result<Architecture> {
    let g = cfg.growth;
    let block_cfg = |channels: usize, level: usize| BlockConfig {
        channels,
        freq: cfg.bins_at(level),
        bottleneck_factor: cfg.bottleneck_factor,
        activation: cfg.activation,
        norm: cfg.norm,
    };
    let input = Conv2d::new(&mut pb.child("input"), cfg.input_channels(), g, ConvGeometry::POINTWISE)?;
    let mut encoder = Vec::with_capacity(cfg.depth);
    for i in 0..cfg.depth {
        let c = g * (i + 1);
        let mut lp = pb.child(&format!("encoder.{i}"));
        encoder.push(EncoderLevel {
            block: TfcTdf::new(&mut lp.child("block"), &block_cfg(c, i))?,
            down: Downsample::new(&mut lp.child("down"), c, g)?,
        });
    }
    let latent_c = cfg.latent_channels();
    let latent = TfcTdf::new(&mut pb.child("latent.block"), &block_cfg(latent_c, cfg.depth))?;
    let idpms = (0..cfg.idpm.repeats)
        .map(|i| Idpm::new(&mut pb.child(&format!("latent.idpm.{i}")), &cfg.idpm, latent_c))
        .collect::<Result<Vec<_>>>()?;
    let mut decoder = Vec::with_capacity(cfg.depth);
    for i in (0..cfg.depth).rev() {
        let c = g * (i + 1);
        let mut lp = pb.child(&format!("decoder.{i}"));
        decoder.push(DecoderLevel {
            up: Upsample::new(&mut lp.child("up"), c + g, g)?,
            block: TfcTdf::new(&mut lp.child("block"), &block_cfg(c, i))?,
        });
    }
    let output = Conv2d::new(&mut pb.child("output"), g, cfg.input_channels(), ConvGeometry::POINTWISE)?;
    Ok(Architecture {
        input,
        encoder,
        latent,
        idpms,
        decoder,
        output,
    })
}
