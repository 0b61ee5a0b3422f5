//! Attention-based bidirectional GRU with a classification head (fault
//! type) and a regression head (fault index within the window), trained on
//! the weighted sum of cross-entropy and MSE.
//!
//! The same network with a five-class head, trained on normal windows as
//! well, is the flat comparison model.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use fiberwatch_nn::{
    read_params, rng_from_seed, softmax, softmax_cross_entropy, with_prefix, with_prefix_mut, write_params, Activation,
    Attention, AttentionCache, BiGru, BiGruCache, Dense, DenseCache, LossWeights, Matrix, MergeConvention, Module,
    NnError, Param, SeqBatch,
};
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, Sequence, MODEL_STEPS, WINDOW};
use crate::error::{CoreError, Result};
use crate::eval::{per_snr_table, SnrRow, SnrSample};
use crate::trace_sim::index_to_distance;
use crate::training::{fit, EpochRecord, Trainable, TrainConfig, TrainingCurve};

pub const MODEL_KIND: &str = "abigru/v1";
pub const FLAT_MODEL_KIND: &str = "bigru-flat/v1";
/// Regression targets are fault indices divided by this.
pub const INDEX_SCALE: f64 = (WINDOW - 1) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Four fault classes, fault-only training data.
    Faults,
    /// Normal plus the four fault classes.
    Flat,
}

impl Variant {
    pub fn labels(self) -> &'static [Label] {
        match self {
            Variant::Faults => &Label::FAULTS,
            Variant::Flat => &Label::ALL,
        }
    }

    pub fn class_of(self, label: Label) -> Option<usize> {
        self.labels().iter().position(|&l| l == label)
    }

    pub fn model_kind(self) -> &'static str {
        match self {
            Variant::Faults => MODEL_KIND,
            Variant::Flat => FLAT_MODEL_KIND,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagConfig {
    pub variant: Variant,
    pub trunk_widths: [usize; 2],
    pub attention_dim: usize,
    pub class_hidden: usize,
    pub regression_hidden: usize,
    pub hidden_activation: Activation,
    pub convention: MergeConvention,
    pub steps: usize,
    pub loss_weights: LossWeights,
}

impl Default for DiagConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Faults,
            trunk_widths: [64, 32],
            attention_dim: 32,
            class_hidden: 16,
            regression_hidden: 20,
            hidden_activation: Activation::Elu,
            convention: MergeConvention::KeepPrevious,
            steps: MODEL_STEPS,
            loss_weights: LossWeights::default(),
        }
    }
}

impl DiagConfig {
    pub fn flat() -> Self {
        Self {
            variant: Variant::Flat,
            ..Self::default()
        }
    }

    pub fn classes(&self) -> usize {
        self.variant.labels().len()
    }
}

/// One training example: the 31-step input, its class, and the normalized
/// fault index when there is one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagExample {
    pub input: Vec<f64>,
    pub class: usize,
    pub target: Option<f64>,
}

#[derive(Debug, Clone)]
struct DiagCache {
    bi1: BiGruCache,
    bi2: BiGruCache,
    attn: AttentionCache,
    cls_hidden: DenseCache,
    cls_out: DenseCache,
    reg_hidden: DenseCache,
    reg_out: DenseCache,
}

#[derive(Debug, Clone)]
pub struct Outputs {
    pub logits: Matrix,
    /// Normalized index predictions, one per example.
    pub regression: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ABiGru {
    pub config: DiagConfig,
    pub bi1: BiGru,
    pub bi2: BiGru,
    pub attention: Attention,
    pub cls_hidden: Dense,
    pub cls_out: Dense,
    pub reg_hidden: Dense,
    pub reg_out: Dense,
    cache: Option<DiagCache>,
}

impl PartialEq for ABiGru {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params() == other.params()
    }
}

impl ABiGru {
    pub fn new(config: DiagConfig, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let [w1, w2] = config.trunk_widths;
        let c = config.convention;
        let act = config.hidden_activation;
        Self {
            bi1: BiGru::new(1, w1, c, &mut rng),
            bi2: BiGru::new(w1, w2, c, &mut rng),
            attention: Attention::new(w2, config.attention_dim, &mut rng),
            cls_hidden: Dense::new(w2, config.class_hidden, act, &mut rng),
            cls_out: Dense::new(config.class_hidden, config.classes(), Activation::Identity, &mut rng),
            reg_hidden: Dense::new(w2, config.regression_hidden, act, &mut rng),
            reg_out: Dense::new(config.regression_hidden, 1, Activation::Identity, &mut rng),
            config,
            cache: None,
        }
    }

    fn run(&self, x: &SeqBatch) -> Result<(Outputs, DiagCache)> {
        let (h1, bi1) = self.bi1.forward(x)?;
        let (h2, bi2) = self.bi2.forward(&h1)?;
        let (c, attn) = self.attention.forward(&h2)?;
        let (ch, cls_hidden) = self.cls_hidden.forward(&c)?;
        let (logits, cls_out) = self.cls_out.forward(&ch)?;
        let (rh, reg_hidden) = self.reg_hidden.forward(&c)?;
        let (reg, reg_out) = self.reg_out.forward(&rh)?;
        let cache = DiagCache {
            bi1,
            bi2,
            attn,
            cls_hidden,
            cls_out,
            reg_hidden,
            reg_out,
        };
        Ok((
            Outputs {
                logits,
                regression: reg.data,
            },
            cache,
        ))
    }

    pub fn infer(&self, x: &SeqBatch) -> Result<Outputs> {
        Ok(self.run(x)?.0)
    }

    /// Outputs plus the attention weights of each example.
    pub fn infer_with_attention(&self, x: &SeqBatch) -> Result<(Outputs, Vec<Vec<f64>>)> {
        let (out, cache) = self.run(x)?;
        let weights = (0..x.batch).map(|b| cache.attn.weights(b)).collect();
        Ok((out, weights))
    }

    pub fn forward(&mut self, x: &SeqBatch) -> Result<Outputs> {
        let (out, cache) = self.run(x)?;
        self.cache = Some(cache);
        Ok(out)
    }

    /// Backpropagates head gradients through the last training forward pass.
    pub fn backward(&mut self, d_logits: &Matrix, d_regression: &[f64]) -> Result<()> {
        let cache = self.cache.take().ok_or(NnError::BackwardBeforeForward)?;
        let dch = self.cls_out.backward(&cache.cls_out, d_logits)?;
        let mut dc = self.cls_hidden.backward(&cache.cls_hidden, &dch)?;
        let dreg = Matrix::from_vec(d_regression.len(), 1, d_regression.to_vec())?;
        let drh = self.reg_out.backward(&cache.reg_out, &dreg)?;
        let dc_reg = self.reg_hidden.backward(&cache.reg_hidden, &drh)?;
        for (a, b) in dc.data.iter_mut().zip(&dc_reg.data) {
            *a += b;
        }
        let dh2 = self.attention.backward(&cache.attn, &dc)?;
        let dh1 = self.bi2.backward(&cache.bi2, &dh2)?;
        self.bi1.backward(&cache.bi1, &dh1)?;
        Ok(())
    }

    fn batch(&self, examples: &[&DiagExample]) -> Result<SeqBatch> {
        let refs: Vec<&[f64]> = examples.iter().map(|e| e.input.as_slice()).collect();
        Ok(SeqBatch::from_examples(&refs, self.config.steps, 1)?)
    }

    /// Weighted loss and its gradients with respect to both head outputs.
    fn loss_and_grads(&self, out: &Outputs, examples: &[&DiagExample]) -> Result<(f64, Matrix, Vec<f64>)> {
        let w = self.config.loss_weights;
        let classes: Vec<usize> = examples.iter().map(|e| e.class).collect();
        let (ce, _, mut d_logits) = softmax_cross_entropy(&out.logits, &classes)?;
        d_logits.data.iter_mut().for_each(|g| *g *= w.lambda_1);
        let masked = examples.iter().filter(|e| e.target.is_some()).count();
        let mut mse = 0.0;
        let mut d_reg = vec![0.0; examples.len()];
        if masked > 0 {
            let n = masked as f64;
            for (i, e) in examples.iter().enumerate() {
                if let Some(t) = e.target {
                    let d = out.regression[i] - t;
                    mse += d * d / n;
                    d_reg[i] = w.lambda_2 * 2.0 * d / n;
                }
            }
        }
        Ok((fiberwatch_nn::multitask_loss(ce, mse, w), d_logits, d_reg))
    }

    pub fn save(&self, path: &Path, metadata: serde_json::Value) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?), metadata)
    }

    pub fn write<W: Write>(&self, out: W, metadata: serde_json::Value) -> Result<()> {
        write_params(
            out,
            self.config.variant.model_kind(),
            self.config.convention,
            serde_json::to_value(&self.config)?,
            metadata,
            self,
        )?;
        Ok(())
    }

    pub fn load(path: &Path, variant: Variant) -> Result<(Self, serde_json::Value)> {
        Self::read(BufReader::new(File::open(path)?), variant)
    }

    pub fn read<R: Read>(input: R, variant: Variant) -> Result<(Self, serde_json::Value)> {
        let (manifest, tensors) = read_params(input)?;
        if manifest.model_kind != variant.model_kind() {
            return Err(CoreError::ModelKind {
                found: manifest.model_kind,
                expected: variant.model_kind().into(),
            });
        }
        let mut config: DiagConfig = serde_json::from_value(manifest.config)?;
        config.convention = manifest.merge_convention;
        let mut model = Self::new(config, 0);
        fiberwatch_nn::load_into(&mut model, &tensors)?;
        Ok((model, manifest.metadata))
    }
}

impl Module for ABiGru {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut v = with_prefix("bi1", self.bi1.params());
        v.extend(with_prefix("bi2", self.bi2.params()));
        v.extend(with_prefix("attention", self.attention.params()));
        v.extend(with_prefix("cls_hidden", self.cls_hidden.params()));
        v.extend(with_prefix("cls_out", self.cls_out.params()));
        v.extend(with_prefix("reg_hidden", self.reg_hidden.params()));
        v.extend(with_prefix("reg_out", self.reg_out.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut v = with_prefix_mut("bi1", self.bi1.params_mut());
        v.extend(with_prefix_mut("bi2", self.bi2.params_mut()));
        v.extend(with_prefix_mut("attention", self.attention.params_mut()));
        v.extend(with_prefix_mut("cls_hidden", self.cls_hidden.params_mut()));
        v.extend(with_prefix_mut("cls_out", self.cls_out.params_mut()));
        v.extend(with_prefix_mut("reg_hidden", self.reg_hidden.params_mut()));
        v.extend(with_prefix_mut("reg_out", self.reg_out.params_mut()));
        v
    }
}

impl Trainable for ABiGru {
    type Example = DiagExample;

    fn accumulate_gradients(&mut self, batch: &[&DiagExample]) -> Result<f64> {
        let x = self.batch(batch)?;
        let out = self.forward(&x)?;
        let (loss, d_logits, d_reg) = self.loss_and_grads(&out, batch)?;
        self.backward(&d_logits, &d_reg)?;
        Ok(loss)
    }

    fn loss(&self, examples: &[&DiagExample]) -> Result<f64> {
        let x = self.batch(examples)?;
        let out = self.infer(&x)?;
        Ok(self.loss_and_grads(&out, examples)?.0)
    }
}

/// Training examples for `variant`; labels outside the variant are rejected.
pub fn examples(seqs: &[Sequence], variant: Variant) -> Result<Vec<DiagExample>> {
    seqs.iter()
        .map(|s| {
            let class = variant.class_of(s.label).ok_or_else(|| CoreError::WrongLabel {
                found: s.label.to_string(),
                expected: "the diagnoser trains on fault sequences only",
            })?;
            Ok(DiagExample {
                input: s.model_input(),
                class,
                target: s.fault_index.map(|i| i as f64 / INDEX_SCALE),
            })
        })
        .collect()
}

pub fn train_diagnoser(
    train: &[Sequence],
    validation: &[Sequence],
    config: &DiagConfig,
    train_config: &TrainConfig,
    progress: impl FnMut(&EpochRecord),
) -> Result<(ABiGru, TrainingCurve)> {
    config.loss_weights.validate()?;
    let tr = examples(train, config.variant)?;
    let va = examples(validation, config.variant)?;
    let mut model = ABiGru::new(config.clone(), train_config.seed);
    let curve = fit(&mut model, &tr, &va, train_config, progress)?;
    Ok((model, curve))
}

/// The five-class comparison model trained on normal and fault windows.
pub fn train_flat_model_b(
    train: &[Sequence],
    validation: &[Sequence],
    config: &DiagConfig,
    train_config: &TrainConfig,
    progress: impl FnMut(&EpochRecord),
) -> Result<(ABiGru, TrainingCurve)> {
    let config = DiagConfig {
        variant: Variant::Flat,
        ..config.clone()
    };
    train_diagnoser(train, validation, &config, train_config, progress)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisResult {
    #[serde(rename = "class")]
    pub predicted_class: Label,
    #[serde(rename = "probs")]
    pub class_probs: Vec<f64>,
    #[serde(rename = "index")]
    pub predicted_index: f64,
    #[serde(rename = "distance_m")]
    pub predicted_distance_m: f64,
    pub gamma_db: f64,
}

impl DiagnosisResult {
    pub fn confidence(&self) -> f64 {
        self.class_probs.iter().copied().fold(0.0, f64::max)
    }
}

/// Index of the largest logit; the first wins on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Regression output scaled back to index units and clamped to the window.
pub fn denormalize_index(raw: f64) -> f64 {
    (raw * INDEX_SCALE).clamp(0.0, INDEX_SCALE)
}

pub fn diagnose_batch(model: &ABiGru, seqs: &[Sequence], sample_spacing_m: f64) -> Result<Vec<DiagnosisResult>> {
    let labels = model.config.variant.labels();
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(256) {
        let inputs: Vec<Vec<f64>> = chunk.iter().map(Sequence::model_input).collect();
        let refs: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
        let x = SeqBatch::from_examples(&refs, model.config.steps, 1)?;
        let o = model.infer(&x)?;
        for (b, s) in chunk.iter().enumerate() {
            let logits = o.logits.row(b);
            let probs = softmax(logits);
            let index = denormalize_index(o.regression[b]);
            out.push(DiagnosisResult {
                predicted_class: labels[argmax(logits)],
                class_probs: probs,
                predicted_index: index,
                predicted_distance_m: index_to_distance(index, sample_spacing_m),
                gamma_db: s.gamma_db,
            });
        }
    }
    Ok(out)
}

pub fn diagnose(model: &ABiGru, seq: &Sequence, sample_spacing_m: f64) -> Result<DiagnosisResult> {
    Ok(diagnose_batch(model, std::slice::from_ref(seq), sample_spacing_m)?.remove(0))
}

/// Attention weights over the 31 input steps.
pub fn attention_weights(model: &ABiGru, seq: &Sequence) -> Result<Vec<f64>> {
    let input = seq.model_input();
    let x = SeqBatch::from_examples(&[input.as_slice()], model.config.steps, 1)?;
    Ok(model.infer_with_attention(&x)?.1.remove(0))
}

/// Accuracy and localization RMSE per 1 dB SNR bin.
pub fn per_snr_breakdown(model: &ABiGru, test: &[Sequence], sample_spacing_m: f64) -> Result<Vec<SnrRow>> {
    let results = diagnose_batch(model, test, sample_spacing_m)?;
    let samples: Vec<SnrSample> = test
        .iter()
        .zip(&results)
        .map(|(s, r)| SnrSample {
            gamma_db: s.gamma_db,
            correct: r.predicted_class == s.label,
            index_error: s.fault_index.map(|i| r.predicted_index - i as f64),
        })
        .collect();
    Ok(per_snr_table(&samples, sample_spacing_m))
}
