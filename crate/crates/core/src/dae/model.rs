//! Encoder/decoder model `F = D ∘ E` and its checkpoint format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{Cache, Conv2d, ConvGeom, Dense, Init, Layer, LayerKind, TransConv2d};
use crate::error::{shape_err, Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{tnsr, Real, Tensor};

/// One strided (transposed) convolution stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub const fn new(channels: usize, kernel: usize, stride: usize) -> Self {
        Self { channels, kernel, stride }
    }
}

/// Layer-level description of a DAE.
///
/// The encoder is a stack of same-padded conv + ReLU stages followed by a
/// linear head to `latent_dim`. The decoder is a dense layer (+ ReLU) back to
/// the last encoder feature map, then transposed convs (ReLU between, sigmoid
/// at the end). The last decoder stage must emit the image channel count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// Image shape `[H, W, C]`.
    pub in_shape: Vec<usize>,
    pub encoder: Vec<ConvSpec>,
    pub latent_dim: usize,
    pub decoder: Vec<ConvSpec>,
}

impl ArchSpec {
    /// 28×28 greyscale model: conv 5×5/s2, 5×5/s2, 3×3/s2, 3×3/s1 and
    /// transposed conv 3×3/s1, 3×3/s2, 5×5/s2, 5×5/s2.
    pub fn mnist(widths: [usize; 4], latent_dim: usize) -> Self {
        Self::square(28, widths, latent_dim)
    }

    /// The MNIST layer stack on a `size × size` greyscale image.
    pub fn square(size: usize, widths: [usize; 4], latent_dim: usize) -> Self {
        let [a, b, c, d] = widths;
        Self {
            in_shape: vec![size, size, 1],
            encoder: vec![
                ConvSpec::new(a, 5, 2),
                ConvSpec::new(b, 5, 2),
                ConvSpec::new(c, 3, 2),
                ConvSpec::new(d, 3, 1),
            ],
            latent_dim,
            decoder: vec![
                ConvSpec::new(c, 3, 1),
                ConvSpec::new(b, 3, 2),
                ConvSpec::new(a, 5, 2),
                ConvSpec::new(1, 5, 2),
            ],
        }
    }

    pub fn mnist_default() -> Self {
        Self::mnist([32, 64, 128, 128], 64)
    }

    fn image_dims(&self) -> Result<(usize, usize, usize)> {
        match *self.in_shape.as_slice() {
            [h, w, c] if h > 0 && w > 0 && c > 0 => Ok((h, w, c)),
            _ => shape_err(format!("architecture input must be [H, W, C], got {:?}", self.in_shape)),
        }
    }

    /// Spatial sizes after each encoder stage, starting with the input size.
    fn encoder_sizes(&self) -> Result<Vec<(usize, usize)>> {
        let (h, w, _) = self.image_dims()?;
        let mut sizes = vec![(h, w)];
        for s in &self.encoder {
            let (sh, sw) = *sizes.last().unwrap();
            let g = ConvGeom::same(sh, sw, s.kernel, s.stride)?;
            sizes.push((g.dst_h, g.dst_w));
        }
        Ok(sizes)
    }

    /// Output sizes of each decoder stage, solved backwards from the image
    /// size so that the last stage lands exactly on it.
    fn decoder_sizes(&self) -> Result<Vec<(usize, usize)>> {
        let (h, w, _) = self.image_dims()?;
        let mut out = vec![(h, w)];
        for s in self.decoder.iter().rev().take(self.decoder.len().saturating_sub(1)) {
            let (oh, ow) = *out.last().unwrap();
            out.push((oh.div_ceil(s.stride), ow.div_ceil(s.stride)));
        }
        out.reverse();
        Ok(out)
    }

    pub fn build<T: Real>(&self, rng: &mut SeededRng) -> Result<DaeModel<T>> {
        let (h, w, ch) = self.image_dims()?;
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return Err(Error::Geometry("encoder and decoder need at least one stage".into()));
        }
        if self.decoder.last().unwrap().channels != ch {
            return Err(Error::Geometry(format!(
                "last decoder stage emits {} channels, image has {ch}",
                self.decoder.last().unwrap().channels
            )));
        }
        if self.latent_dim == 0 || self.latent_dim >= h * w * ch {
            return Err(Error::Geometry(format!("latent dim {} must be in [1, N)", self.latent_dim)));
        }

        let enc_sizes = self.encoder_sizes()?;
        let mut encoder = Vec::new();
        let mut in_ch = ch;
        for (s, &(sh, sw)) in self.encoder.iter().zip(&enc_sizes) {
            let g = ConvGeom::same(sh, sw, s.kernel, s.stride)?;
            encoder.push(Layer::Conv2d(Conv2d::new(in_ch, s.channels, g, Init::HeUniform, rng)?));
            encoder.push(Layer::Relu);
            in_ch = s.channels;
        }
        let (fh, fw) = *enc_sizes.last().unwrap();
        let feat = [in_ch, fh, fw];
        let feat_len = in_ch * fh * fw;
        encoder.push(Layer::Dense(Dense::new(feat_len, &[self.latent_dim], Init::GlorotUniform, rng)?));

        let dec_sizes = self.decoder_sizes()?;
        let first_in = {
            let s = self.decoder[0];
            let (oh, ow) = dec_sizes[0];
            (oh.div_ceil(s.stride), ow.div_ceil(s.stride))
        };
        if first_in != (fh, fw) {
            return Err(Error::Geometry(format!(
                "decoder starts from {first_in:?} but the encoder ends at {:?}",
                (fh, fw)
            )));
        }
        let mut decoder = vec![Layer::Dense(Dense::new(self.latent_dim, &feat, Init::HeUniform, rng)?), Layer::Relu];
        let last = self.decoder.len() - 1;
        for (i, (s, &(oh, ow))) in self.decoder.iter().zip(&dec_sizes).enumerate() {
            let g = ConvGeom::same(oh, ow, s.kernel, s.stride)?;
            let init = if i == last { Init::GlorotUniform } else { Init::HeUniform };
            decoder.push(Layer::TransConv2d(TransConv2d::new(in_ch, s.channels, g, init, rng)?));
            decoder.push(if i == last { Layer::Sigmoid } else { Layer::Relu });
            in_ch = s.channels;
        }
        let model = DaeModel { arch: self.clone(), encoder, decoder };
        model.check_shapes()?;
        Ok(model)
    }
}

/// Denoising autoencoder `F = D ∘ E: ℝ^N → ℝ^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct DaeModel<T> {
    arch: ArchSpec,
    encoder: Vec<Layer<T>>,
    decoder: Vec<Layer<T>>,
}

/// Forward caches for one sample.
pub struct ForwardTrace<T> {
    encoder: Vec<Cache<T>>,
    decoder: Vec<Cache<T>>,
}

fn run<T: Real>(layers: &[Layer<T>], x: Tensor<T>, caches: Option<&mut Vec<Cache<T>>>) -> Result<Tensor<T>> {
    let mut cur = x;
    match caches {
        Some(c) => {
            for l in layers {
                let (y, cache) = l.forward(&cur)?;
                c.push(cache);
                cur = y;
            }
        }
        None => {
            for l in layers {
                cur = l.forward(&cur)?.0;
            }
        }
    }
    Ok(cur)
}

fn run_back<T: Real>(
    layers: &[Layer<T>],
    caches: &[Cache<T>],
    grad: Tensor<T>,
    mut grads: Option<&mut [Tensor<T>]>,
) -> Result<Tensor<T>> {
    if caches.len() != layers.len() {
        return Err(Error::Contract("cache count does not match layer count".into()));
    }
    // Parameter slots are laid out in layer order; walk them from the end.
    let mut slot_end = layers.iter().map(|l| l.params().len()).sum::<usize>();
    let mut g = grad;
    for (l, c) in layers.iter().zip(caches).rev() {
        let np = l.params().len();
        let start = slot_end - np;
        let acc = match grads.as_deref_mut() {
            Some(all) if np > 0 => Some(&mut all[start..slot_end]),
            _ => None,
        };
        g = l.backward_into(c, &g, acc)?;
        slot_end = start;
    }
    Ok(g)
}

/// Image `[H, W, C]` ↔ feature map `[C, H, W]`.
fn hwc_to_chw<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let &[h, w, c] = x.shape() else {
        return shape_err(format!("expected [H, W, C], got {:?}", x.shape()));
    };
    if c == 1 {
        return x.clone().reshape(&[1, h, w]);
    }
    let d = x.data();
    let mut out = vec![T::zero(); d.len()];
    for i in 0..h * w {
        for k in 0..c {
            out[k * h * w + i] = d[i * c + k];
        }
    }
    Tensor::new(vec![c, h, w], out)
}

fn chw_to_hwc<T: Real>(x: Tensor<T>) -> Result<Tensor<T>> {
    let &[c, h, w] = x.shape() else {
        return shape_err(format!("expected [C, H, W], got {:?}", x.shape()));
    };
    if c == 1 {
        return x.reshape(&[h, w, 1]);
    }
    let d = x.data();
    let mut out = vec![T::zero(); d.len()];
    for i in 0..h * w {
        for k in 0..c {
            out[i * c + k] = d[k * h * w + i];
        }
    }
    Tensor::new(vec![h, w, c], out)
}

impl<T: Real> DaeModel<T> {
    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn in_shape(&self) -> &[usize] {
        &self.arch.in_shape
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn encoder(&self) -> &[Layer<T>] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[Layer<T>] {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.decoder
    }

    /// Sets the final transposed-conv bias to `logit(mean)` so that the
    /// initial output sits at the mean pixel value.
    ///
    /// With a zero bias the sigmoid starts at 0.5 over mostly dark images,
    /// and the first Adam steps can push it into saturation where no
    /// gradient flows back.
    pub fn init_output_bias(&mut self, mean: f64) -> Result<()> {
        if !(mean > 0.0 && mean < 1.0) {
            return shape_err(format!("mean pixel value must lie in (0, 1), got {mean}"));
        }
        let b = T::c((mean / (1.0 - mean)).ln());
        match self.decoder.iter_mut().rev().find(|l| matches!(l, Layer::TransConv2d(_))) {
            Some(Layer::TransConv2d(l)) => {
                l.bias.data_mut().iter_mut().for_each(|v| *v = b);
                Ok(())
            }
            _ => Err(Error::Contract("decoder has no transposed convolution".into())),
        }
    }

    fn check_shapes(&self) -> Result<()> {
        let (h, w, c) = self.arch.image_dims()?;
        let mut shape = vec![c, h, w];
        for l in &self.encoder {
            shape = l.output_shape(&shape)?;
        }
        if shape != [self.arch.latent_dim] {
            return shape_err(format!("encoder emits {shape:?}"));
        }
        for l in &self.decoder {
            shape = l.output_shape(&shape)?;
        }
        if shape != [c, h, w] {
            return shape_err(format!("decoder emits {shape:?}, expected {:?}", [c, h, w]));
        }
        Ok(())
    }

    /// `E(x)`.
    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        run(&self.encoder, hwc_to_chw(x)?, None)
    }

    /// `D(z)`.
    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_latent(z)?;
        chw_to_hwc(run(&self.decoder, z.clone(), None)?)
    }

    /// `F(x) = D(E(x))`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.decode(&self.encode(x)?)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape() != self.arch.in_shape.as_slice() {
            return shape_err(format!("model input {:?} vs {:?}", x.shape(), self.arch.in_shape));
        }
        Ok(())
    }

    fn check_latent(&self, z: &Tensor<T>) -> Result<()> {
        if z.shape() != [self.arch.latent_dim] {
            return shape_err(format!("latent {:?} vs [{}]", z.shape(), self.arch.latent_dim));
        }
        Ok(())
    }

    /// Forward pass keeping caches for [`Self::backward`].
    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardTrace<T>)> {
        self.check_input(x)?;
        let mut enc = Vec::with_capacity(self.encoder.len());
        let mut dec = Vec::with_capacity(self.decoder.len());
        let z = run(&self.encoder, hwc_to_chw(x)?, Some(&mut enc))?;
        let y = run(&self.decoder, z, Some(&mut dec))?;
        Ok((chw_to_hwc(y)?, ForwardTrace { encoder: enc, decoder: dec }))
    }

    /// Backpropagates `grad_y` (image layout), adding parameter gradients to
    /// `grads` (ordered as [`Self::params`]). Returns the input gradient.
    pub fn backward(&self, trace: &ForwardTrace<T>, grad_y: &Tensor<T>, grads: &mut [Tensor<T>]) -> Result<Tensor<T>> {
        let n_enc: usize = self.encoder.iter().map(|l| l.params().len()).sum();
        if grads.len() != self.num_param_tensors() {
            return Err(Error::Contract("gradient buffer does not match parameters".into()));
        }
        let (ge, gd) = grads.split_at_mut(n_enc);
        let gz = run_back(&self.decoder, &trace.decoder, hwc_to_chw(grad_y)?, Some(gd))?;
        let gx = run_back(&self.encoder, &trace.encoder, gz, Some(ge))?;
        chw_to_hwc(gx)
    }

    /// Decoder forward with caches, for optimising the latent input.
    pub fn decode_cached(&self, z: &Tensor<T>) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        self.check_latent(z)?;
        let mut caches = Vec::with_capacity(self.decoder.len());
        let y = run(&self.decoder, z.clone(), Some(&mut caches))?;
        Ok((chw_to_hwc(y)?, caches))
    }

    /// Gradient with respect to `z` of a loss whose image gradient is `grad_y`.
    pub fn decode_backward(&self, caches: &[Cache<T>], grad_y: &Tensor<T>) -> Result<Tensor<T>> {
        run_back(&self.decoder, caches, hwc_to_chw(grad_y)?, None)
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.encoder.iter().chain(&self.decoder).flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut()).flat_map(|l| l.params_mut()).collect()
    }

    pub fn num_param_tensors(&self) -> usize {
        self.encoder.iter().chain(&self.decoder).map(|l| l.params().len()).sum()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Tensor<T>> {
        self.params().iter().map(|p| Tensor::zeros(p.shape()).expect("valid shape")).collect()
    }

    pub fn cast<U: Real>(&self) -> DaeModel<U> {
        DaeModel {
            arch: self.arch.clone(),
            encoder: self.encoder.iter().map(Layer::cast).collect(),
            decoder: self.decoder.iter().map(Layer::cast).collect(),
        }
    }

    pub fn manifest(&self, seed: u64, epoch: usize) -> CheckpointManifest {
        let describe = |l: &Layer<T>| {
            let (weight_shape, bias_shape, stride, padding) = match l {
                Layer::Conv2d(c) => (
                    Some(c.weight.shape().to_vec()),
                    Some(c.bias.shape().to_vec()),
                    Some(c.geom.stride),
                    Some((c.geom.pad_top, c.geom.pad_left)),
                ),
                Layer::TransConv2d(c) => (
                    Some(c.weight.shape().to_vec()),
                    Some(c.bias.shape().to_vec()),
                    Some(c.geom.stride),
                    Some((c.geom.pad_top, c.geom.pad_left)),
                ),
                Layer::Dense(d) => (Some(d.weight.shape().to_vec()), Some(d.bias.shape().to_vec()), None, None),
                _ => (None, None, None, None),
            };
            LayerRecord { kind: l.kind(), weight_shape, bias_shape, stride, padding }
        };
        CheckpointManifest {
            format: "dae-pgd-checkpoint/1".into(),
            dtype: T::DTYPE,
            arch: self.arch.clone(),
            encoder: self.encoder.iter().map(describe).collect(),
            decoder: self.decoder.iter().map(describe).collect(),
            latent_dim: self.arch.latent_dim,
            seed,
            epoch,
        }
    }

    /// Writes `<stem>.tnsr` (parameters in [`Self::params`] order) and
    /// `<stem>.json` (manifest).
    pub fn save(&self, stem: &Path, seed: u64, epoch: usize) -> Result<()> {
        let manifest = self.manifest(seed, epoch);
        tnsr::write_file(&stem.with_extension("tnsr"), &self.params())?;
        std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<(Self, CheckpointManifest)> {
        let manifest: CheckpointManifest =
            serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
        let tensors = tnsr::read_file(&stem.with_extension("tnsr"))?;
        let mut model = manifest.arch.build::<T>(&mut SeededRng::new(0))?;
        let layers_ok = |ls: &[Layer<T>], rec: &[LayerRecord]| {
            ls.len() == rec.len() && ls.iter().zip(rec).all(|(l, r)| l.kind() == r.kind)
        };
        if !layers_ok(&model.encoder, &manifest.encoder) || !layers_ok(&model.decoder, &manifest.decoder) {
            return Err(Error::Format("manifest layers do not match the architecture".into()));
        }
        let mut params = model.params_mut();
        if params.len() != tensors.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, model has {}",
                tensors.len(),
                params.len()
            )));
        }
        for (p, t) in params.iter_mut().zip(tensors) {
            if p.shape() != t.shape() {
                return Err(Error::Format(format!("parameter {:?} vs stored {:?}", p.shape(), t.shape())));
            }
            **p = t.into_real();
        }
        Ok((model, manifest))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub kind: LayerKind,
    pub weight_shape: Option<Vec<usize>>,
    pub bias_shape: Option<Vec<usize>>,
    pub stride: Option<usize>,
    pub padding: Option<(usize, usize)>,
}

/// JSON manifest stored beside a checkpoint's TNSR payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub dtype: crate::tensor::DType,
    pub arch: ArchSpec,
    pub encoder: Vec<LayerRecord>,
    pub decoder: Vec<LayerRecord>,
    pub latent_dim: usize,
    pub seed: u64,
    pub epoch: usize,
}
