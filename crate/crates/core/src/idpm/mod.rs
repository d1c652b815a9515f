//! Improved dual-path module: channel heads folded into the batch, a
//! time-axis recurrent block, a frequency-axis recurrent block, then the
//! heads merged back.

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::blocks::norm::{GroupNorm, NormCache};
use crate::blocks::Layer;
use crate::error::{Error, Result};
use crate::float::Float;
use crate::linalg::gemm;
use crate::params::{Grads, ParamBuilder, ParamId, ParamStore};

pub mod lstm;

pub use lstm::{BiLstm, LstmDirection};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdpmConfig {
    pub heads: usize,
    pub repeats: usize,
    pub group_norm_channels: usize,
}

impl Default for IdpmConfig {
    fn default() -> Self {
        Self {
            heads: 2,
            repeats: 4,
            group_norm_channels: 16,
        }
    }
}

impl IdpmConfig {
    /// Checks divisibility against the latent width and returns `C′`.
    pub fn head_width(&self, latent_channels: usize) -> Result<usize> {
        if self.heads == 0 || latent_channels % self.heads != 0 {
            return Err(Error::config(format!(
                "{} heads do not divide {latent_channels} latent channels",
                self.heads
            )));
        }
        let width = latent_channels / self.heads;
        if self.group_norm_channels == 0 || width % self.group_norm_channels != 0 {
            return Err(Error::config(format!(
                "group norm size {} does not divide head width {width}",
                self.group_norm_channels
            )));
        }
        Ok(width)
    }
}

/// `[B, C, F, T]` → `[B·H, C/H, F, T]`; head `k` of sample `b` holds channels
/// `k·C/H .. (k+1)·C/H` and lands at batch index `b·H + k`.
pub fn split_heads<T: Float>(x: &Array4<T>, heads: usize) -> Result<Array4<T>> {
    let (b, c, f, t) = x.dim();
    if heads == 0 || c % heads != 0 {
        return Err(Error::shape(format!("{heads} heads do not divide {c} channels")));
    }
    Ok(x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * heads, c / heads, f, t))
        .expect("standard layout"))
}

pub fn merge_heads<T: Float>(x: &Array4<T>, heads: usize) -> Result<Array4<T>> {
    let (bh, c, f, t) = x.dim();
    if heads == 0 || bh % heads != 0 {
        return Err(Error::shape(format!("{heads} heads do not divide batch {bh}")));
    }
    Ok(x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((bh / heads, c * heads, f, t))
        .expect("standard layout"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeqAxis {
    Time,
    Frequency,
}

impl SeqAxis {
    /// `[B, C, F, T]` → `[steps, batch, C]`.
    pub fn to_sequence<T: Float>(self, x: &Array4<T>) -> Array3<T> {
        let (b, c, f, t) = x.dim();
        let (perm, shape) = match self {
            SeqAxis::Time => ([3, 0, 2, 1], (t, b * f, c)),
            SeqAxis::Frequency => ([2, 0, 3, 1], (f, b * t, c)),
        };
        x.view()
            .permuted_axes(perm)
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(shape)
            .expect("standard layout")
    }

    pub fn from_sequence<T: Float>(self, y: Array3<T>, dims: (usize, usize, usize, usize)) -> Array4<T> {
        let (b, c, f, t) = dims;
        let (shape, perm) = match self {
            SeqAxis::Time => ((t, b, f, c), [1, 3, 2, 0]),
            SeqAxis::Frequency => ((f, b, t, c), [1, 3, 0, 2]),
        };
        y.into_shape_with_order(shape)
            .expect("sequence matches dims")
            .permuted_axes(perm)
            .as_standard_layout()
            .into_owned()
    }
}

/// Fully connected layer on the last axis; weight `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
    input: usize,
    output: usize,
}

impl Linear {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            weight: pb.kaiming_uniform("weight", &[output, input], input)?,
            bias: pb.zeros("bias", &[output])?,
            input,
            output,
        })
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn forward<T: Float>(&self, ps: &ParamStore<T>, x: &Array2<T>) -> Array2<T> {
        let mut y = Array2::zeros((x.nrows(), self.output));
        gemm(T::one(), x.view(), ps.view2(self.weight).t(), T::zero(), y.view_mut());
        let b = ps.view1(self.bias);
        for mut row in y.outer_iter_mut() {
            row += &b;
        }
        y
    }

    pub fn backward<T: Float>(&self, ps: &ParamStore<T>, x: &Array2<T>, dy: &Array2<T>, grads: &mut Grads<T>) -> Array2<T> {
        gemm(T::one(), dy.t(), x.view(), T::one(), grads.view2_mut(self.weight));
        grads
            .view1_mut(self.bias)
            .zip_mut_with(&dy.sum_axis(ndarray::Axis(0)), |g, &v| *g += v);
        let mut dx = Array2::zeros((dy.nrows(), self.input));
        gemm(T::one(), dy.view(), ps.view2(self.weight), T::zero(), dx.view_mut());
        dx
    }
}

fn flat<T: Float>(x: Array3<T>) -> Array2<T> {
    let (s, n, c) = x.dim();
    x.into_shape_with_order((s * n, c)).expect("standard layout")
}

fn unflat<T: Float>(x: Array2<T>, steps: usize) -> Array3<T> {
    let (rows, c) = x.dim();
    x.into_shape_with_order((steps, rows / steps, c)).expect("rows divide")
}

/// `out = x + FC(BLSTM(GroupNorm(x)))` along one axis, the other spatial
/// axis folded into the batch.
#[derive(Clone, Debug)]
pub struct RnnBlock {
    axis: SeqAxis,
    norm: GroupNorm,
    lstm: BiLstm,
    fc: Linear,
    channels: usize,
}

pub struct RnnBlockCache<T> {
    norm: NormCache<T>,
    lstm: lstm::BiLstmCache<T>,
    lstm_out: Array2<T>,
    steps: usize,
}

impl RnnBlock {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, axis: SeqAxis, channels: usize, group_norm_channels: usize) -> Result<Self> {
        if group_norm_channels == 0 || channels % group_norm_channels != 0 {
            return Err(Error::config(format!(
                "group norm size {group_norm_channels} does not divide {channels} channels"
            )));
        }
        let norm = GroupNorm::new(&mut pb.child("norm"), channels, channels / group_norm_channels)?;
        let lstm = BiLstm::new(&mut pb.child("blstm"), channels, 2 * channels)?;
        let fc = Linear::new(&mut pb.child("fc"), lstm.output_width(), channels)?;
        Ok(Self {
            axis,
            norm,
            lstm,
            fc,
            channels,
        })
    }

    pub fn axis(&self) -> SeqAxis {
        self.axis
    }

    pub fn norm(&self) -> &GroupNorm {
        &self.norm
    }

    pub fn lstm(&self) -> &BiLstm {
        &self.lstm
    }

    pub fn fc(&self) -> &Linear {
        &self.fc
    }

    /// BLSTM multiply-adds for an input of shape `[b, C′, f, t]`.
    pub fn lstm_macs(&self, b: usize, f: usize, t: usize) -> usize {
        match self.axis {
            SeqAxis::Time => self.lstm.macs(t, b * f),
            SeqAxis::Frequency => self.lstm.macs(f, b * t),
        }
    }

    fn check<T: Float>(&self, x: &Array4<T>) -> Result<()> {
        if x.dim().1 != self.channels {
            return Err(Error::shape(format!(
                "RNN block expects {} channels, got {}",
                self.channels,
                x.dim().1
            )));
        }
        Ok(())
    }
}

impl<T: Float> Layer<T> for RnnBlock {
    type Cache = RnnBlockCache<T>;

    fn forward(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<Array4<T>> {
        self.check(x)?;
        let seq = self.axis.to_sequence(&self.norm.forward(ps, x)?);
        let steps = seq.dim().0;
        let h = flat(self.lstm.forward(ps, &seq)?);
        drop(seq);
        let y = unflat(self.fc.forward(ps, &h), steps);
        Ok(x + &self.axis.from_sequence(y, x.dim()))
    }

    fn forward_train(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<(Array4<T>, RnnBlockCache<T>)> {
        self.check(x)?;
        let (n, norm) = self.norm.forward_train(ps, x)?;
        let seq = self.axis.to_sequence(&n);
        drop(n);
        let steps = seq.dim().0;
        let (h, lstm) = self.lstm.forward_train(ps, &seq)?;
        let h = flat(h);
        let y = unflat(self.fc.forward(ps, &h), steps);
        Ok((
            x + &self.axis.from_sequence(y, x.dim()),
            RnnBlockCache {
                norm,
                lstm,
                lstm_out: h,
                steps,
            },
        ))
    }

    fn backward(&self, ps: &ParamStore<T>, cache: RnnBlockCache<T>, dy: &Array4<T>, grads: &mut Grads<T>) -> Array4<T> {
        let dims = dy.dim();
        let dseq = flat(self.axis.to_sequence(dy));
        let dh = unflat(self.fc.backward(ps, &cache.lstm_out, &dseq, grads), cache.steps);
        drop(dseq);
        let dn_seq = self.lstm.backward(ps, cache.lstm, &dh, grads);
        let dn = self.axis.from_sequence(dn_seq, dims);
        dy + &self.norm.backward(ps, cache.norm, &dn, grads)
    }
}

/// One IDPM: split heads, time block, frequency block, merge heads.
#[derive(Clone, Debug)]
pub struct Idpm {
    heads: usize,
    channels: usize,
    time: RnnBlock,
    freq: RnnBlock,
}

pub struct IdpmCache<T> {
    time: RnnBlockCache<T>,
    freq: RnnBlockCache<T>,
}

impl Idpm {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, cfg: &IdpmConfig, latent_channels: usize) -> Result<Self> {
        let width = cfg.head_width(latent_channels)?;
        Ok(Self {
            heads: cfg.heads,
            channels: latent_channels,
            time: RnnBlock::new(&mut pb.child("time"), SeqAxis::Time, width, cfg.group_norm_channels)?,
            freq: RnnBlock::new(&mut pb.child("freq"), SeqAxis::Frequency, width, cfg.group_norm_channels)?,
        })
    }

    pub fn time_block(&self) -> &RnnBlock {
        &self.time
    }

    pub fn freq_block(&self) -> &RnnBlock {
        &self.freq
    }

    /// BLSTM multiply-adds for a latent input `[b, C, f, t]`.
    pub fn lstm_macs(&self, b: usize, f: usize, t: usize) -> usize {
        let bh = b * self.heads;
        self.time.lstm_macs(bh, f, t) + self.freq.lstm_macs(bh, f, t)
    }

    fn check<T: Float>(&self, x: &Array4<T>) -> Result<()> {
        if x.dim().1 != self.channels {
            return Err(Error::shape(format!(
                "IDPM expects {} channels, got {}",
                self.channels,
                x.dim().1
            )));
        }
        Ok(())
    }
}

impl<T: Float> Layer<T> for Idpm {
    type Cache = IdpmCache<T>;

    fn forward(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<Array4<T>> {
        self.check(x)?;
        let s = split_heads(x, self.heads)?;
        let s = self.time.forward(ps, &s)?;
        let s = self.freq.forward(ps, &s)?;
        merge_heads(&s, self.heads)
    }

    fn forward_train(&self, ps: &ParamStore<T>, x: &Array4<T>) -> Result<(Array4<T>, IdpmCache<T>)> {
        self.check(x)?;
        let s = split_heads(x, self.heads)?;
        let (s, time) = self.time.forward_train(ps, &s)?;
        let (s, freq) = self.freq.forward_train(ps, &s)?;
        Ok((merge_heads(&s, self.heads)?, IdpmCache { time, freq }))
    }

    fn backward(&self, ps: &ParamStore<T>, cache: IdpmCache<T>, dy: &Array4<T>, grads: &mut Grads<T>) -> Array4<T> {
        let d = split_heads(dy, self.heads).expect("checked in forward");
        let d = self.freq.backward(ps, cache.freq, &d, grads);
        let d = self.time.backward(ps, cache.time, &d, grads);
        merge_heads(&d, self.heads).expect("checked in forward")
    }
}
