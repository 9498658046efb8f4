use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::AutoencoderConfig;
use crate::affordance::{AffordanceVector, TAG_COUNT};
use crate::corpus::ContextSample;
use crate::error::{Error, Result};
use crate::tensor::{
    join, mse_loss, sigmoid, tanh, weighted_bce_loss, BatchNorm, Conv2d, ConvTranspose2d, Dense, HasParams, Mode,
    Padding, Param, Real, Sigmoid, Tanh, Tensor,
};
use crate::{CHANNELS, CONTEXT_PX, TILE_PX};

#[derive(Debug, Clone)]
struct ConvBlock<T> {
    conv: Conv2d<T>,
    bn: BatchNorm<T>,
    act: Tanh<T>,
}

impl<T: Real> ConvBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.conv.forward(x)?;
        let y = self.bn.forward(&y, mode)?;
        Ok(self.act.forward(&y))
    }

    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(tanh(&self.bn.apply(&self.conv.apply(x)?)?))
    }

    fn backward(&mut self, up: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.act.backward(up)?;
        let d = self.bn.backward(&d)?;
        self.conv.backward(&d)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv.visit(prefix, f);
        self.bn.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv.visit_mut(prefix, f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}

#[derive(Debug, Clone)]
struct DeconvBlock<T> {
    deconv: ConvTranspose2d<T>,
    bn: BatchNorm<T>,
    act: Tanh<T>,
}

impl<T: Real> DeconvBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.deconv.forward(x)?;
        let y = self.bn.forward(&y, mode)?;
        Ok(self.act.forward(&y))
    }

    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(tanh(&self.bn.apply(&self.deconv.apply(x)?)?))
    }

    fn backward(&mut self, up: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.act.backward(up)?;
        let d = self.bn.backward(&d)?;
        self.deconv.backward(&d)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.deconv.visit(prefix, f);
        self.bn.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.deconv.visit_mut(prefix, f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}

/// Dense layers with tanh between them; the last layer's activation is
/// chosen by the caller.
#[derive(Debug, Clone)]
struct Mlp<T> {
    layers: Vec<Dense<T>>,
    acts: Vec<Tanh<T>>,
}

impl<T: Real> Mlp<T> {
    fn new(d_in: usize, widths: &[usize], tanh_last: bool, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut d = d_in;
        for &w in widths {
            layers.push(Dense::new(d, w, rng));
            d = w;
        }
        let n_acts = if tanh_last { widths.len() } else { widths.len().saturating_sub(1) };
        Mlp {
            layers,
            acts: vec![Tanh::new(); n_acts],
        }
    }

    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h)?;
            if let Some(act) = self.acts.get_mut(i) {
                h = act.forward(&h);
            }
        }
        Ok(h)
    }

    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h)?;
            if i < self.acts.len() {
                h = tanh(&h);
            }
        }
        Ok(h)
    }

    fn backward(&mut self, up: &Tensor<T>) -> Result<Tensor<T>> {
        let mut d = up.clone();
        for i in (0..self.layers.len()).rev() {
            if let Some(act) = self.acts.get_mut(i) {
                d = act.backward(&d)?;
            }
            d = self.layers[i].backward(&d)?;
        }
        Ok(d)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("dense{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("dense{i}")), f);
        }
    }
}

/// Inputs and targets for one batch, all row-major.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    /// `[N, 48, 48, 3]`
    pub contexts: Tensor<T>,
    /// `[N, 13]` affordance input (zeros for unannotated or held-out tiles).
    pub affordance_inputs: Tensor<T>,
    /// `[N, 16, 16, 3]`
    pub tiles: Tensor<T>,
    /// `[N, 13]`
    pub affordance_targets: Tensor<T>,
}

impl<T: Real> Batch<T> {
    /// Stacks samples; `mask_input[i]` replaces sample `i`'s affordance input
    /// with zeros while keeping its target.
    pub fn from_samples(samples: &[&ContextSample], mask_input: &[bool]) -> Result<Self> {
        let n = samples.len();
        let mut ctx = Vec::with_capacity(n * CONTEXT_PX * CONTEXT_PX * CHANNELS);
        let mut tiles = Vec::with_capacity(n * TILE_PX * TILE_PX * CHANNELS);
        let mut aff_in = Vec::with_capacity(n * TAG_COUNT);
        let mut aff_t = Vec::with_capacity(n * TAG_COUNT);
        for (i, s) in samples.iter().enumerate() {
            ctx.extend(s.pixels.iter().map(|&v| T::lit(v as f64)));
            tiles.extend(s.center_tile().into_iter().map(|v| T::lit(v as f64)));
            let target = s.center_affordance.to_reals::<T>();
            aff_t.extend_from_slice(&target);
            if mask_input.get(i).copied().unwrap_or(false) {
                aff_in.extend(std::iter::repeat_n(T::zero(), TAG_COUNT));
            } else {
                aff_in.extend_from_slice(&target);
            }
        }
        Ok(Batch {
            contexts: Tensor::from_vec(&[n, CONTEXT_PX, CONTEXT_PX, CHANNELS], ctx)?,
            affordance_inputs: Tensor::from_vec(&[n, TAG_COUNT], aff_in)?,
            tiles: Tensor::from_vec(&[n, TILE_PX, TILE_PX, CHANNELS], tiles)?,
            affordance_targets: Tensor::from_vec(&[n, TAG_COUNT], aff_t)?,
        })
    }

    pub fn len(&self) -> usize {
        self.contexts.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss components of one evaluation, accumulated in `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub image: f64,
    pub affordance: f64,
}

impl LossBreakdown {
    pub fn combine(config: &AutoencoderConfig, image: f64, affordance: f64) -> Self {
        LossBreakdown {
            total: config.image_loss_weight * image + config.affordance_loss_weight * affordance,
            image,
            affordance,
        }
    }
}

/// The two-branch autoencoder.
///
/// ```text
/// context 48×48×3 ─ conv/bn/tanh ×3 ─ flatten ─┐
///                                              ├─ dense+tanh ─ embedding
/// affordances 13 ─ dense+tanh ×2 ──────────────┘        │
///                 ┌─────────────────────────────────────┴──────┐
///   dense/bn/tanh ─ reshape ─ deconv/bn/tanh ×2 ─ conv+sigmoid  dense+tanh ×2 ─ dense+sigmoid
///                                          tile 16×16×3                 probabilities 13
/// ```
#[derive(Debug, Clone)]
pub struct Autoencoder<T> {
    config: AutoencoderConfig,
    enc_convs: Vec<ConvBlock<T>>,
    enc_aff: Mlp<T>,
    merge: Dense<T>,
    merge_act: Tanh<T>,
    dec_seed: Dense<T>,
    dec_seed_bn: BatchNorm<T>,
    dec_seed_act: Tanh<T>,
    dec_deconvs: Vec<DeconvBlock<T>>,
    dec_out: Conv2d<T>,
    dec_out_act: Sigmoid<T>,
    dec_aff: Mlp<T>,
    dec_aff_act: Sigmoid<T>,
}

/// Outputs of a forward pass.
#[derive(Debug, Clone)]
pub struct Reconstruction<T> {
    /// `[N, embedding_dim]`, in `[-1, 1]`.
    pub embedding: Tensor<T>,
    /// `[N, 16, 16, 3]`, in `[0, 1]`.
    pub tile: Tensor<T>,
    /// `[N, 13]`, in `(0, 1)`.
    pub probs: Tensor<T>,
}

impl<T: Real> Autoencoder<T> {
    /// Builds a freshly initialized network; deterministic in `config.seed`.
    pub fn new(config: &AutoencoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let k = config.kernel_size;
        let mut enc_convs = Vec::new();
        let mut c_in = CHANNELS;
        for &c in &config.conv_filters {
            enc_convs.push(ConvBlock {
                conv: Conv2d::new(k, c_in, c, config.conv_stride, Padding::Same, &mut rng),
                bn: BatchNorm::new(c),
                act: Tanh::new(),
            });
            c_in = c;
        }
        let enc_aff = Mlp::new(TAG_COUNT, &config.affordance_widths, true, &mut rng);
        let merge_in = config.image_code_len() + config.affordance_code_len();
        let merge = Dense::new(merge_in, config.embedding_dim, &mut rng);
        let side = config.decoder_seed_side()?;
        let seed_len = side * side * config.decoder_seed_channels;
        let dec_seed = Dense::new(config.embedding_dim, seed_len, &mut rng);
        let mut dec_deconvs = Vec::new();
        let mut c_in = config.decoder_seed_channels;
        for &c in &config.decoder_filters {
            dec_deconvs.push(DeconvBlock {
                deconv: ConvTranspose2d::new(k, c_in, c, 2, &mut rng),
                bn: BatchNorm::new(c),
                act: Tanh::new(),
            });
            c_in = c;
        }
        let dec_out = Conv2d::new(k, c_in, CHANNELS, 1, Padding::Same, &mut rng);
        let mut widths = config.decoder_affordance_widths.clone();
        widths.push(TAG_COUNT);
        let dec_aff = Mlp::new(config.embedding_dim, &widths, false, &mut rng);
        Ok(Autoencoder {
            config: config.clone(),
            enc_convs,
            enc_aff,
            merge,
            merge_act: Tanh::new(),
            dec_seed,
            dec_seed_bn: BatchNorm::new(seed_len),
            dec_seed_act: Tanh::new(),
            dec_deconvs,
            dec_out,
            dec_out_act: Sigmoid::new(),
            dec_aff,
            dec_aff_act: Sigmoid::new(),
        })
    }

    pub fn config(&self) -> &AutoencoderConfig {
        &self.config
    }

    fn check_inputs(&self, contexts: &Tensor<T>, affordances: &Tensor<T>) -> Result<usize> {
        let n = contexts.batch();
        contexts.expect_shape(&[n, CONTEXT_PX, CONTEXT_PX, CHANNELS])?;
        affordances.expect_shape(&[n, TAG_COUNT])?;
        Ok(n)
    }

    fn seed_shape(&self, n: usize) -> Vec<usize> {
        let side = self.config.decoder_seed_side().expect("validated");
        vec![n, side, side, self.config.decoder_seed_channels]
    }

    /// Training-time forward pass; caches activations for [`Self::backward`].
    pub fn forward(&mut self, contexts: &Tensor<T>, affordances: &Tensor<T>, mode: Mode) -> Result<Reconstruction<T>> {
        let n = self.check_inputs(contexts, affordances)?;
        let mut h = contexts.clone();
        for block in &mut self.enc_convs {
            h = block.forward(&h, mode)?;
        }
        let img_code = h.reshape(&[n, self.config.image_code_len()])?;
        let aff_code = self.enc_aff.forward(affordances)?;
        let merged = Tensor::concat_cols(&img_code, &aff_code)?;
        let embedding = self.merge_act.forward(&self.merge.forward(&merged)?);

        let s = self.dec_seed.forward(&embedding)?;
        let s = self.dec_seed_act.forward(&self.dec_seed_bn.forward(&s, mode)?);
        let mut g = s.reshape(&self.seed_shape(n))?;
        for block in &mut self.dec_deconvs {
            g = block.forward(&g, mode)?;
        }
        let tile = self.dec_out_act.forward(&self.dec_out.forward(&g)?);
        let probs = self.dec_aff_act.forward(&self.dec_aff.forward(&embedding)?);
        Ok(Reconstruction { embedding, tile, probs })
    }

    /// Back-propagates output gradients from the last [`Self::forward`],
    /// accumulating parameter gradients.
    pub fn backward(&mut self, d_tile: &Tensor<T>, d_probs: &Tensor<T>) -> Result<()> {
        let n = d_tile.batch();
        let d = self.dec_out_act.backward(d_tile)?;
        let mut d = self.dec_out.backward(&d)?;
        for block in self.dec_deconvs.iter_mut().rev() {
            d = block.backward(&d)?;
        }
        let d = d.reshape(&[n, self.dec_seed.d_out()])?;
        let d = self.dec_seed_act.backward(&d)?;
        let d = self.dec_seed_bn.backward(&d)?;
        let mut d_emb = self.dec_seed.backward(&d)?;

        let d = self.dec_aff_act.backward(d_probs)?;
        d_emb.add_assign(&self.dec_aff.backward(&d)?)?;

        let d = self.merge_act.backward(&d_emb)?;
        let d_merged = self.merge.backward(&d)?;
        let (d_img, d_aff) = d_merged.split_cols(self.config.image_code_len())?;
        self.enc_aff.backward(&d_aff)?;
        let side = self.config.encoder_side();
        let c = *self.config.conv_filters.last().expect("validated");
        let mut d = d_img.reshape(&[n, side, side, c])?;
        for block in self.enc_convs.iter_mut().rev() {
            d = block.backward(&d)?;
        }
        Ok(())
    }

    /// Forward, loss and backward on one batch in training mode. Gradients are
    /// zeroed first, so afterwards they hold exactly this batch's gradient.
    pub fn train_step(&mut self, batch: &Batch<T>, label_weights: &[f64]) -> Result<LossBreakdown> {
        self.zero_grad();
        let out = self.forward(&batch.contexts, &batch.affordance_inputs, Mode::Train)?;
        let img = mse_loss(&out.tile, &batch.tiles)?;
        let aff = weighted_bce_loss(&out.probs, &batch.affordance_targets, label_weights)?;
        let (wi, wa) = (T::lit(self.config.image_loss_weight), T::lit(self.config.affordance_loss_weight));
        let d_tile = img.grad.map(|g| g * wi);
        let d_probs = aff.grad.map(|g| g * wa);
        self.backward(&d_tile, &d_probs)?;
        Ok(LossBreakdown::combine(&self.config, img.value, aff.value))
    }

    /// Inference-mode embedding (running batchnorm statistics); read-only.
    pub fn encode(&self, contexts: &Tensor<T>, affordances: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.check_inputs(contexts, affordances)?;
        let mut h = contexts.clone();
        for block in &self.enc_convs {
            h = block.apply(&h)?;
        }
        let img_code = h.reshape(&[n, self.config.image_code_len()])?;
        let aff_code = self.enc_aff.apply(affordances)?;
        Ok(tanh(&self.merge.apply(&Tensor::concat_cols(&img_code, &aff_code)?)?))
    }

    /// Inference-mode decoding of `[N, embedding_dim]` into tiles and
    /// affordance probabilities; read-only.
    pub fn decode(&self, embedding: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let n = embedding.batch();
        embedding.expect_shape(&[n, self.config.embedding_dim])?;
        let s = tanh(&self.dec_seed_bn.apply(&self.dec_seed.apply(embedding)?)?);
        let mut g = s.reshape(&self.seed_shape(n))?;
        for block in &self.dec_deconvs {
            g = block.apply(&g)?;
        }
        let tile = sigmoid(&self.dec_out.apply(&g)?);
        let probs = sigmoid(&self.dec_aff.apply(embedding)?);
        Ok((tile, probs))
    }

    /// Inference-mode losses on a batch.
    pub fn evaluate(&self, batch: &Batch<T>, label_weights: &[f64]) -> Result<LossBreakdown> {
        let emb = self.encode(&batch.contexts, &batch.affordance_inputs)?;
        let (tile, probs) = self.decode(&emb)?;
        let img = mse_loss(&tile, &batch.tiles)?.value;
        let aff = weighted_bce_loss(&probs, &batch.affordance_targets, label_weights)?.value;
        Ok(LossBreakdown::combine(&self.config, img, aff))
    }

    /// Copies parameters into another precision.
    pub fn cast<U: Real>(&self) -> Autoencoder<U> {
        let mut out = Autoencoder::<U>::new(&self.config).expect("config already validated");
        let src = self.named_tensors();
        out.visit_mut("", &mut |name, p| {
            let (_, t) = src.iter().find(|(n, _)| n == name).expect("same architecture");
            p.value = t.cast();
        });
        out
    }
}

impl<T: Real> HasParams<T> for Autoencoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, b) in self.enc_convs.iter().enumerate() {
            b.visit(&join(prefix, &format!("enc.conv{i}")), f);
        }
        self.enc_aff.visit(&join(prefix, "enc.aff"), f);
        self.merge.visit(&join(prefix, "merge"), f);
        self.dec_seed.visit(&join(prefix, "dec.seed"), f);
        self.dec_seed_bn.visit(&join(prefix, "dec.seed.bn"), f);
        for (i, b) in self.dec_deconvs.iter().enumerate() {
            b.visit(&join(prefix, &format!("dec.deconv{i}")), f);
        }
        self.dec_out.visit(&join(prefix, "dec.out"), f);
        self.dec_aff.visit(&join(prefix, "dec.aff"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, b) in self.enc_convs.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("enc.conv{i}")), f);
        }
        self.enc_aff.visit_mut(&join(prefix, "enc.aff"), f);
        self.merge.visit_mut(&join(prefix, "merge"), f);
        self.dec_seed.visit_mut(&join(prefix, "dec.seed"), f);
        self.dec_seed_bn.visit_mut(&join(prefix, "dec.seed.bn"), f);
        for (i, b) in self.dec_deconvs.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("dec.deconv{i}")), f);
        }
        self.dec_out.visit_mut(&join(prefix, "dec.out"), f);
        self.dec_aff.visit_mut(&join(prefix, "dec.aff"), f);
    }
}

/// Rows per inference chunk.
const CHUNK: usize = 128;

impl Autoencoder<f32> {
    /// Embeds context windows with the given affordance inputs, in chunks.
    pub fn encode_contexts(&self, contexts: &[&[f32]], affordances: &[AffordanceVector]) -> Result<Vec<Vec<f32>>> {
        if contexts.len() != affordances.len() {
            return Err(Error::Geometry(format!(
                "{} contexts but {} affordance vectors",
                contexts.len(),
                affordances.len()
            )));
        }
        let dim = self.config.embedding_dim;
        let mut out = Vec::with_capacity(contexts.len());
        for (cs, afs) in contexts.chunks(CHUNK).zip(affordances.chunks(CHUNK)) {
            let ctx = stack_contexts(cs)?;
            let aff: Vec<f32> = afs.iter().flat_map(|a| a.to_reals::<f32>()).collect();
            let aff = Tensor::from_vec(&[afs.len(), TAG_COUNT], aff)?;
            let emb = self.encode(&ctx, &aff)?;
            out.extend(emb.data().chunks(dim).map(<[f32]>::to_vec));
        }
        Ok(out)
    }

    /// Predicts affordances from pixels alone: encodes with an all-zero
    /// affordance input, decodes, and thresholds (`p ≥ threshold`).
    pub fn predict_affordances(
        &self,
        contexts: &[&[f32]],
        threshold: f64,
    ) -> Result<Vec<(AffordanceVector, [f32; TAG_COUNT])>> {
        let zeros = vec![AffordanceVector::EMPTY; contexts.len()];
        let embs = self.encode_contexts(contexts, &zeros)?;
        let mut out = Vec::with_capacity(embs.len());
        for chunk in embs.chunks(CHUNK) {
            let flat: Vec<f32> = chunk.concat();
            let (_, probs) = self.decode(&Tensor::from_vec(&[chunk.len(), self.config.embedding_dim], flat)?)?;
            for row in probs.data().chunks(TAG_COUNT) {
                let p: [f32; TAG_COUNT] = row.try_into().expect("13 columns");
                out.push((AffordanceVector::from_probs(&p, threshold), p));
            }
        }
        Ok(out)
    }
}

fn stack_contexts<T: Real>(contexts: &[&[f32]]) -> Result<Tensor<T>> {
    let len = CONTEXT_PX * CONTEXT_PX * CHANNELS;
    let mut data = Vec::with_capacity(contexts.len() * len);
    for c in contexts {
        if c.len() != len {
            return Err(Error::Geometry(format!("context has {} values, expected {len}", c.len())));
        }
        data.extend(c.iter().map(|&v| T::lit(v as f64)));
    }
    Tensor::from_vec(&[contexts.len(), CONTEXT_PX, CONTEXT_PX, CHANNELS], data)
}
