use std::path::Path;

use fbpick_autograd::checkpoint::{load_checkpoint_into, read_checkpoint, save_checkpoint, CheckpointManifest};
use fbpick_autograd::{Graph, Layer, LayerSpec, Mode, ParamStore, Tensor, Var};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::labels::LabelType;
use crate::error::{invalid, FbError, Result};
use crate::precondition::FeatureStack;
use crate::rng::derive_seed;

/// Network regions that receive a dropout layer after each pair of conv units.
/// The bottleneck counts as encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutPlacement {
    Encoder,
    Decoder,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsample {
    TransposedConv,
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_width: usize,
    /// Drop probability.
    pub dropout_rate: f64,
    pub dropout_placement: DropoutPlacement,
    pub upsample: Upsample,
    pub in_channels: usize,
    pub label_type: LabelType,
}

impl UNetConfig {
    /// Depth 4, 64 base channels, dropout 0.3 everywhere, transposed-conv upsampling.
    pub fn paper() -> Self {
        Self {
            depth: 4,
            base_width: 64,
            dropout_rate: 0.3,
            dropout_placement: DropoutPlacement::Both,
            upsample: Upsample::TransposedConv,
            in_channels: 3,
            label_type: LabelType::FbNonFb,
        }
    }

    /// The same network at depth 3 with 8 base channels.
    pub fn desk() -> Self {
        Self { depth: 3, base_width: 8, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 8 {
            return invalid("unet.depth", format!("{} outside 1..=8", self.depth));
        }
        if self.base_width == 0 {
            return invalid("unet.base_width", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return invalid("unet.dropout_rate", format!("{} outside [0, 1)", self.dropout_rate));
        }
        if !(1..=3).contains(&self.in_channels) {
            return invalid("unet.in_channels", format!("{} outside 1..=3", self.in_channels));
        }
        Ok(())
    }

    /// Channels of the encoder level `l`.
    fn width(&self, l: usize) -> usize {
        self.base_width << l
    }
}

#[derive(Debug, Clone)]
struct ConvBlock {
    units: Vec<Layer>,
    dropout: Option<Layer>,
}

#[derive(Debug, Clone)]
struct UpStage {
    up: Layer,
    concat: Layer,
    block: ConvBlock,
}

/// `T_s` Monte Carlo segmentation maps of one gather and the seeds that drew them.
#[derive(Debug, Clone, PartialEq)]
pub struct McRunResult {
    pub maps: Vec<Array2<f32>>,
    pub sample_seeds: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct BayesUNet {
    cfg: UNetConfig,
    store: ParamStore<f32>,
    encoder: Vec<ConvBlock>,
    bottleneck: ConvBlock,
    decoder: Vec<UpStage>,
    pool: Layer,
    head: Layer,
    sigmoid: Layer,
}

struct Builder<'a> {
    store: &'a mut ParamStore<f32>,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn layer(&mut self, name: String, spec: LayerSpec) -> Result<Layer> {
        Ok(Layer::new(name, spec, self.store, &mut self.rng)?)
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize, dropout: Option<f64>) -> Result<ConvBlock> {
        let mut units = Vec::with_capacity(6);
        for (k, c) in [cin, cout].into_iter().enumerate() {
            units.push(self.layer(format!("{name}.conv{k}"), LayerSpec::Conv3x3 { in_ch: c, out_ch: cout })?);
            units.push(self.layer(format!("{name}.bn{k}"), LayerSpec::BatchNorm { channels: cout })?);
            units.push(self.layer(format!("{name}.relu{k}"), LayerSpec::Relu)?);
        }
        let dropout = match dropout {
            Some(p) => Some(self.layer(format!("{name}.dropout"), LayerSpec::Dropout { p })?),
            None => None,
        };
        Ok(ConvBlock { units, dropout })
    }
}

impl BayesUNet {
    /// Assembles the network. Encoder level `l` has `base · 2^l` channels, the
    /// bottleneck keeps the deepest encoder width, and decoder level `l` maps the
    /// concatenated features to `base · 2^(l-1)` channels (`base` at level 0).
    pub fn new(cfg: UNetConfig, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder { store: &mut store, rng: ChaCha8Rng::seed_from_u64(init_seed) };
        let enc_p = matches!(cfg.dropout_placement, DropoutPlacement::Encoder | DropoutPlacement::Both)
            .then_some(cfg.dropout_rate);
        let dec_p = matches!(cfg.dropout_placement, DropoutPlacement::Decoder | DropoutPlacement::Both)
            .then_some(cfg.dropout_rate);

        let mut encoder = Vec::with_capacity(cfg.depth);
        let mut cin = cfg.in_channels;
        for l in 0..cfg.depth {
            encoder.push(b.block(&format!("enc{l}"), cin, cfg.width(l), enc_p)?);
            cin = cfg.width(l);
        }
        let deep = cfg.width(cfg.depth - 1);
        let bottleneck = b.block("mid", deep, deep, enc_p)?;
        let mut decoder = Vec::with_capacity(cfg.depth);
        let mut below = deep;
        for l in (0..cfg.depth).rev() {
            let up_spec = match cfg.upsample {
                Upsample::TransposedConv => LayerSpec::ConvTranspose2x2s2 { in_ch: below, out_ch: below },
                Upsample::Bilinear => LayerSpec::BilinearUp2,
            };
            let up = b.layer(format!("dec{l}.up"), up_spec)?;
            let concat = b.layer(format!("dec{l}.concat"), LayerSpec::Concat)?;
            let out = if l == 0 { cfg.base_width } else { cfg.width(l - 1) };
            let block = b.block(&format!("dec{l}"), below + cfg.width(l), out, dec_p)?;
            decoder.push(UpStage { up, concat, block });
            below = out;
        }
        let pool = b.layer("pool".into(), LayerSpec::MaxPool2)?;
        let head = b.layer("head".into(), LayerSpec::Conv1x1 { in_ch: below, out_ch: 1 })?;
        let sigmoid = b.layer("sigmoid".into(), LayerSpec::Sigmoid)?;
        Ok(Self { cfg, store, encoder, bottleneck, decoder, pool, head, sigmoid })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    /// Every layer in execution order (the shared max-pool appears once per encoder level).
    pub fn layers(&self) -> Vec<&Layer> {
        fn block(b: &ConvBlock) -> impl Iterator<Item = &Layer> {
            b.units.iter().chain(&b.dropout)
        }
        let mut out = Vec::new();
        for e in &self.encoder {
            out.extend(block(e));
            out.push(&self.pool);
        }
        out.extend(block(&self.bottleneck));
        for d in &self.decoder {
            out.push(&d.up);
            out.push(&d.concat);
            out.extend(block(&d.block));
        }
        out.push(&self.head);
        out.push(&self.sigmoid);
        out
    }

    /// Output channels of every convolution (3×3 and 1×1) in execution order.
    pub fn conv_channels(&self) -> Vec<usize> {
        self.layers()
            .iter()
            .filter_map(|l| match l.spec {
                LayerSpec::Conv3x3 { out_ch, .. } | LayerSpec::Conv1x1 { out_ch, .. } => Some(out_ch),
                _ => None,
            })
            .collect()
    }

    pub fn trainable_parameters(&self) -> usize {
        self.store.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.value.numel()).sum()
    }

    fn run_block<R: Rng>(&self, b: &ConvBlock, g: &mut Graph<f32>, mut x: Var, mode: Mode, rng: &mut R) -> Result<Var> {
        for l in b.units.iter().chain(&b.dropout) {
            x = l.forward(g, &self.store, &[x], mode, rng)?;
        }
        Ok(x)
    }

    /// Records the pass on `g` and returns the pre-sigmoid logits.
    pub fn forward_logits<R: Rng>(&self, g: &mut Graph<f32>, x: Var, mode: Mode, rng: &mut R) -> Result<Var> {
        let shape = g.value(x).shape().to_vec();
        let f = 1usize << self.cfg.depth;
        match shape[..] {
            [_, c, h, w] if c == self.cfg.in_channels && h % f == 0 && w % f == 0 => {}
            _ => {
                return invalid(
                    "input",
                    format!(
                        "shape {shape:?}: need [batch, {}, H, W] with H and W divisible by {f}",
                        self.cfg.in_channels
                    ),
                )
            }
        }
        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut x = x;
        for e in &self.encoder {
            let y = self.run_block(e, g, x, mode, rng)?;
            skips.push(y);
            x = self.pool.forward(g, &self.store, &[y], mode, rng)?;
        }
        x = self.run_block(&self.bottleneck, g, x, mode, rng)?;
        for d in &self.decoder {
            let up = d.up.forward(g, &self.store, &[x], mode, rng)?;
            let skip = skips.pop().expect("one skip per level");
            let cat = d.concat.forward(g, &self.store, &[up, skip], mode, rng)?;
            x = self.run_block(&d.block, g, cat, mode, rng)?;
        }
        Ok(self.head.forward(g, &self.store, &[x], mode, rng)?)
    }

    /// Segmentation probabilities `[batch, 1, H, W]`.
    pub fn predict<R: Rng>(&self, x: Tensor<f32>, mode: Mode, rng: &mut R) -> Result<Tensor<f32>> {
        let mut g = Graph::inference();
        let input = g.input(x);
        let logits = self.forward_logits(&mut g, input, mode, rng)?;
        let probs = self.sigmoid.forward(&mut g, &self.store, &[logits], mode, rng)?;
        let out = g.take_value(probs);
        if !out.all_finite() {
            return Err(FbError::Numeric("non-finite network output".into()));
        }
        Ok(out)
    }

    /// Deterministic (dropout off) segmentation map of one stack.
    pub fn predict_map(&self, stack: &FeatureStack) -> Result<Array2<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.predict(super::stack_tensor(stack), Mode::EvalDeterministic, &mut rng)?;
        Ok(to_map(out, stack))
    }

    /// `ts` forward passes with dropout active; pass `k` draws its masks from
    /// `derive_seed(seed, k)`, independent of every other pass.
    pub fn mc_sample(&self, stack: &FeatureStack, ts: usize, seed: u64) -> Result<McRunResult> {
        if ts == 0 {
            return invalid("T_s", "at least one Monte Carlo sample is required");
        }
        let input = super::stack_tensor(stack);
        let mut maps = Vec::with_capacity(ts);
        let mut sample_seeds = Vec::with_capacity(ts);
        for k in 0..ts {
            let s = derive_seed(seed, k as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let out = self.predict(input.clone(), Mode::EvalMcSample, &mut rng)?;
            maps.push(to_map(out, stack));
            sample_seeds.push(s);
        }
        Ok(McRunResult { maps, sample_seeds })
    }
}

fn to_map(t: Tensor<f32>, stack: &FeatureStack) -> Array2<f32> {
    Array2::from_shape_vec((stack.window_length(), stack.traces()), t.into_data())
        .expect("single-channel output matches the input window")
}

/// Writes the weights plus a manifest recording the configuration and layer list.
pub fn save_model(model: &BayesUNet, path: &Path, extra: serde_json::Value) -> Result<()> {
    let layers: Vec<_> = model
        .layers()
        .iter()
        .map(|l| json!({ "name": l.name, "spec": l.spec }))
        .collect();
    let metadata = json!({ "unet": model.cfg, "layers": layers, "run": extra });
    save_checkpoint(path, &model.store, metadata)?;
    Ok(())
}

/// Rebuilds the network described by a checkpoint manifest and loads its weights.
pub fn load_model(path: &Path) -> Result<(BayesUNet, CheckpointManifest)> {
    let (manifest, _) = read_checkpoint(path)?;
    let cfg: UNetConfig = serde_json::from_value(manifest.metadata["unet"].clone()).map_err(|e| {
        FbError::Format { field: "metadata.unet".into(), msg: e.to_string() }
    })?;
    let mut model = BayesUNet::new(cfg, 0)?;
    load_checkpoint_into(path, &mut model.store)?;
    Ok((model, manifest))
}
