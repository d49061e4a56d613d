//! Mini-batch training of the encoder under the combined objective.

mod optim;
mod schedule;

pub use optim::{clip_global_norm, AdamW, AdamWConfig};
pub use schedule::{lr_schedule, warmup_steps};

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{tokenize, EncodeTrace, EncoderDims, EncoderParams, TokenizedText};
use crate::error::{Error, Result};
use crate::losses::{cce_from_logits, DmlLoss, EmbeddingBatch, LossConfig, LossKind, LossRegistry};
use crate::numeric::{Mat, Rng};
use crate::proxy_bank::{init_proxies, ProxyBank};

/// Stream tags under the run seed.
const STREAM_ENCODER: u64 = 0;
const STREAM_PROXIES: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_MINING: u64 = 3;

/// Which terms of the objective are optimised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `beta * cce + (1 - beta) * dml`, or plain cross-entropy when the loss is `cce`.
    #[default]
    Combined,
    /// The metric-learning term alone; the classifier head receives no gradient.
    DmlOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub objective: Objective,
    pub encoder: EncoderDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-2,
            epochs: 64,
            warmup_fraction: 0.06,
            weight_decay: 0.01,
            clip_norm: 5.0,
            seed: 0,
            loss: LossConfig::default(),
            objective: Objective::Combined,
            encoder: EncoderDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let dml = self.loss.kind != LossKind::Cce;
        if self.batch_size == 0 || (dml && self.batch_size < 2) {
            return Err(Error::Config(format!("batch size {} too small", self.batch_size)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!(
                "need lr >= 0, weight decay >= 0, clip norm > 0; got {}, {}, {}",
                self.learning_rate, self.weight_decay, self.clip_norm
            )));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!("warmup fraction {} outside [0, 1]", self.warmup_fraction)));
        }
        if self.objective == Objective::DmlOnly && !dml {
            return Err(Error::Config("dml_only objective needs a metric-learning loss".into()));
        }
        Ok(())
    }
}

/// Tokenized examples with labels in `0..classes`.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    tokens: Vec<TokenizedText>,
    labels: Vec<usize>,
    classes: usize,
}

impl TrainingSet {
    pub fn new(tokens: Vec<TokenizedText>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        if tokens.len() != labels.len() {
            return Err(Error::Dimension(format!("{} texts, {} labels", tokens.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label(format!("label {bad} not among {classes} classes")));
        }
        Ok(Self { tokens, labels, classes })
    }

    pub fn from_texts<S: AsRef<str>>(texts: &[S], labels: Vec<usize>, classes: usize, buckets: usize) -> Result<Self> {
        Self::new(texts.iter().map(|t| tokenize(t.as_ref(), buckets)).collect(), labels, classes)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn tokens(&self) -> &[TokenizedText] {
        &self.tokens
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Objective value and gradients for one mini-batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub value: f64,
    pub encoder: EncoderParams,
    pub proxies: Option<Mat>,
}

/// Forward and backward pass of the configured objective on one batch.
///
/// A metric-learning term with no usable tuples in the batch contributes zero.
#[allow(clippy::too_many_arguments)]
pub fn batch_gradients(
    params: &EncoderParams,
    bank: Option<&ProxyBank>,
    tokens: &[&TokenizedText],
    labels: &[usize],
    loss: Option<&dyn DmlLoss>,
    beta: f64,
    objective: Objective,
    mining: &mut Rng,
) -> Result<BatchGradients> {
    let classes = params.classes();
    let traces: Vec<EncodeTrace> = tokens.iter().map(|t| params.encode_traced(t)).collect::<Result<_>>()?;
    let d = params.dims().repr_dim;
    let n = tokens.len();
    let mut z = Mat::zeros(n, d);
    for (i, t) in traces.iter().enumerate() {
        z.row_mut(i).copy_from_slice(&t.z);
    }

    let (w_cce, w_dml) = match (loss, objective) {
        (None, _) => (Some(1.0), None),
        (Some(_), Objective::Combined) => (Some(beta), Some(1.0 - beta)),
        (Some(_), Objective::DmlOnly) => (None, Some(1.0)),
    };

    let mut grads = EncoderParams::zeros(params.dims(), classes);
    let mut dz = Mat::zeros(n, d);
    let mut value = 0.0;

    if let Some(w) = w_cce {
        let mut logits = Mat::zeros(n, classes);
        for (i, t) in traces.iter().enumerate() {
            logits.row_mut(i).copy_from_slice(&params.classify_logits(&t.z)?);
        }
        let cce = cce_from_logits(&logits, labels)?;
        value += w * cce.value;
        for i in 0..n {
            let dl: Vec<f64> = cce.grad_embeddings.row(i).iter().map(|g| w * g).collect();
            let dzi = params.backward_classifier(&traces[i].z, &dl, &mut grads);
            dz.row_mut(i).copy_from_slice(&dzi);
        }
    }

    let mut proxy_grad = bank.map(|b| Mat::zeros(b.matrix().rows(), b.dim()));
    if let (Some(loss), Some(w)) = (loss, w_dml) {
        let batch = EmbeddingBatch::new(z, labels.to_vec(), classes)?;
        match loss.evaluate(&batch, bank, mining) {
            Ok(out) => {
                value += w * out.value;
                dz.add_scaled(&out.grad_embeddings, w)?;
                if let (Some(pg), Some(g)) = (proxy_grad.as_mut(), out.grad_proxies.as_ref()) {
                    pg.add_scaled(g, w)?;
                }
            }
            Err(Error::DegenerateBatch(_)) | Err(Error::Pairing(_)) => {}
            Err(e) => return Err(e),
        }
    }

    for (i, t) in traces.iter().enumerate() {
        params.backward_encoder(tokens[i], t, dz.row(i), &mut grads);
    }
    Ok(BatchGradients {
        value,
        encoder: grads,
        proxies: proxy_grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub encoder_params: EncoderParams,
    pub proxy_bank: Option<ProxyBank>,
    pub loss_config: LossConfig,
    pub log: TrainingLog,
}

const ENCODER_FILE: &str = "encoder.enc1";
const PROXY_FILE: &str = "proxies.pxb1";
const LOG_FILE: &str = "train_log.json";

impl TrainedModel {
    pub fn final_loss(&self) -> Option<f64> {
        self.log.steps.last().map(|s| s.loss)
    }

    /// Writes the encoder checkpoint, the proxy checkpoint if any, and the JSON log into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.encoder_params.write_to(BufWriter::new(File::create(dir.join(ENCODER_FILE))?))?;
        if let Some(bank) = &self.proxy_bank {
            bank.write_to(BufWriter::new(File::create(dir.join(PROXY_FILE))?))?;
        }
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(LOG_FILE))?), &self.log)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let encoder_params = EncoderParams::read_from(BufReader::new(File::open(dir.join(ENCODER_FILE))?))?;
        let log: TrainingLog = serde_json::from_reader(BufReader::new(File::open(dir.join(LOG_FILE))?))?;
        let proxy_path = dir.join(PROXY_FILE);
        let proxy_bank = if proxy_path.exists() {
            Some(ProxyBank::read_from(BufReader::new(File::open(proxy_path)?))?)
        } else {
            None
        };
        Ok(Self {
            encoder_params,
            proxy_bank,
            loss_config: log.config.loss.clone(),
            log,
        })
    }
}

pub fn train(data: &TrainingSet, config: &TrainConfig) -> Result<TrainedModel> {
    train_with(&LossRegistry::default(), data, config)
}

/// Runs `epochs * ceil(n / batch_size)` optimizer steps. The final short batch is kept.
pub fn train_with(registry: &LossRegistry, data: &TrainingSet, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    if data.tokens.iter().flat_map(|t| &t.bucket_ids).any(|&b| b >= config.encoder.vocab_buckets) {
        return Err(Error::Dimension("token bucket outside encoder vocabulary".into()));
    }
    let loss = registry.build(&config.loss)?;
    let layout = loss.as_ref().and_then(|l| l.proxy_layout());
    let root = Rng::new(config.seed);
    let mut params = EncoderParams::init(config.encoder, data.classes, &mut root.derive(&[STREAM_ENCODER]))?;
    let mut bank = match layout {
        Some(l) => Some(init_proxies(
            data.classes,
            l.per_class,
            config.encoder.repr_dim,
            &mut root.derive(&[STREAM_PROXIES]),
        )?),
        None => None,
    };
    let mut shuffle_rng = root.derive(&[STREAM_SHUFFLE]);
    let mut mining_rng = root.derive(&[STREAM_MINING]);

    let mut sizes: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
    if let Some(b) = &bank {
        sizes.push(b.matrix().as_slice().len());
    }
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
        &sizes,
    );

    let n = data.len();
    let total = config.epochs * n.div_ceil(config.batch_size);
    let mut steps = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    for _ in 0..config.epochs {
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let tokens: Vec<&TokenizedText> = chunk.iter().map(|&i| &data.tokens[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let mut g = batch_gradients(
                &params,
                bank.as_ref(),
                &tokens,
                &labels,
                loss.as_deref(),
                config.loss.beta,
                config.objective,
                &mut mining_rng,
            )?;
            if !g.value.is_finite() {
                return Err(Error::Diverged {
                    step,
                    what: format!("loss is {}", g.value),
                });
            }
            let lr = lr_schedule(step, total, config.learning_rate, config.warmup_fraction)?;
            {
                let mut grad_blocks: Vec<&mut [f64]> = g.encoder.blocks_mut().into_iter().collect();
                if let Some(pg) = g.proxies.as_mut() {
                    grad_blocks.push(pg.as_mut_slice());
                }
                let norm = clip_global_norm(&mut grad_blocks, config.clip_norm);
                if !norm.is_finite() {
                    return Err(Error::Diverged {
                        step,
                        what: format!("gradient norm is {norm}"),
                    });
                }
            }
            let grad_blocks: Vec<&[f64]> = g
                .encoder
                .blocks()
                .into_iter()
                .chain(g.proxies.as_ref().map(Mat::as_slice))
                .collect();
            let mut param_blocks: Vec<&mut [f64]> = params.blocks_mut().into_iter().collect();
            if let Some(b) = bank.as_mut() {
                param_blocks.push(b.values_mut());
            }
            opt.step(&mut param_blocks, &grad_blocks, lr);
            if let (Some(b), Some(l)) = (bank.as_mut(), layout) {
                if l.renormalize && lr > 0.0 {
                    b.renormalize();
                }
            }
            steps.push(StepRecord { step, loss: g.value });
            step += 1;
        }
    }
    if !params.is_finite() {
        return Err(Error::Diverged {
            step,
            what: "non-finite parameters".into(),
        });
    }
    Ok(TrainedModel {
        encoder_params: params,
        proxy_bank: bank,
        loss_config: config.loss.clone(),
        log: TrainingLog {
            steps,
            config: config.clone(),
        },
    })
}
