//! Feature-hashed bag-of-tokens encoder with a dense classifier head.
//!
//! `z = tanh(P^T mean(E[tokens]) + b_p)`, `logits = W^T z + b_w`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Mat, Rng};
use crate::proxy_bank::{read_f64s, read_u32};

const MAGIC: &[u8; 4] = b"ENC1";

/// Bucket reserved for texts with no tokens.
pub const EMPTY_BUCKET: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub vocab_buckets: usize,
    pub embed_dim: usize,
    pub repr_dim: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            vocab_buckets: 4096,
            embed_dim: 32,
            repr_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    pub bucket_ids: Vec<usize>,
}

/// Lowercases, splits on Unicode whitespace, trims ASCII punctuation from
/// both ends of each token and hashes it with 64-bit FNV-1a modulo `buckets`.
/// Tokens that trim to nothing are dropped; a text with no tokens maps to
/// [`EMPTY_BUCKET`].
pub fn tokenize(text: &str, buckets: usize) -> TokenizedText {
    use std::hash::Hasher;

    let lower = text.to_lowercase();
    let mut ids: Vec<usize> = lower
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()))
        .filter(|t| !t.is_empty())
        .map(|t| {
            let mut h = fnv::FnvHasher::default();
            h.write(t.as_bytes());
            (h.finish() % buckets as u64) as usize
        })
        .collect();
    if ids.is_empty() {
        ids.push(EMPTY_BUCKET);
    }
    TokenizedText { bucket_ids: ids }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// V x d_emb
    pub embedding: Mat,
    /// d_emb x d
    pub projection: Mat,
    pub projection_bias: Vec<f64>,
    /// d x C
    pub classifier: Mat,
    pub classifier_bias: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    pub pooled: Vec<f64>,
    pub z: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(dims: EncoderDims, classes: usize) -> Self {
        Self {
            embedding: Mat::zeros(dims.vocab_buckets, dims.embed_dim),
            projection: Mat::zeros(dims.embed_dim, dims.repr_dim),
            projection_bias: vec![0.0; dims.repr_dim],
            classifier: Mat::zeros(dims.repr_dim, classes),
            classifier_bias: vec![0.0; classes],
        }
    }

    /// Every entry drawn from Gaussian(0, 0.1).
    pub fn init(dims: EncoderDims, classes: usize, rng: &mut Rng) -> Result<Self> {
        if dims.vocab_buckets == 0 || dims.embed_dim == 0 || dims.repr_dim == 0 || classes == 0 {
            return Err(Error::Config(format!(
                "encoder dimensions must be positive: {dims:?}, C={classes}"
            )));
        }
        let mut p = Self::zeros(dims, classes);
        for block in p.blocks_mut() {
            block.iter_mut().for_each(|v| *v = rng.gaussian(0.0, 0.1));
        }
        Ok(p)
    }

    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            vocab_buckets: self.embedding.rows(),
            embed_dim: self.embedding.cols(),
            repr_dim: self.projection.cols(),
        }
    }

    pub fn classes(&self) -> usize {
        self.classifier.cols()
    }

    /// Parameter blocks in checkpoint order.
    pub fn blocks(&self) -> [&[f64]; 5] {
        [
            self.embedding.as_slice(),
            self.projection.as_slice(),
            &self.projection_bias,
            self.classifier.as_slice(),
            &self.classifier_bias,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.embedding.as_mut_slice(),
            self.projection.as_mut_slice(),
            &mut self.projection_bias,
            self.classifier.as_mut_slice(),
            &mut self.classifier_bias,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn encode(&self, tokens: &TokenizedText) -> Result<Vec<f64>> {
        Ok(self.encode_traced(tokens)?.z)
    }

    pub fn encode_traced(&self, tokens: &TokenizedText) -> Result<EncodeTrace> {
        let v = self.embedding.rows();
        if tokens.bucket_ids.is_empty() {
            return Err(Error::Dimension("tokenized text is empty".into()));
        }
        if let Some(&bad) = tokens.bucket_ids.iter().find(|&&b| b >= v) {
            return Err(Error::Dimension(format!("bucket {bad} outside vocabulary of {v}")));
        }
        let (e, d) = (self.embedding.cols(), self.projection.cols());
        let mut pooled = vec![0.0; e];
        for &b in &tokens.bucket_ids {
            for (acc, x) in pooled.iter_mut().zip(self.embedding.row(b)) {
                *acc += x;
            }
        }
        let inv = 1.0 / tokens.bucket_ids.len() as f64;
        pooled.iter_mut().for_each(|x| *x *= inv);
        let mut z = self.projection_bias.clone();
        for (k, &h) in pooled.iter().enumerate() {
            let row = self.projection.row(k);
            for j in 0..d {
                z[j] += h * row[j];
            }
        }
        z.iter_mut().for_each(|x| *x = x.tanh());
        Ok(EncodeTrace { pooled, z })
    }

    pub fn classify_logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        let d = self.classifier.rows();
        if z.len() != d {
            return Err(Error::Dimension(format!("representation has {} entries, expected {d}", z.len())));
        }
        let mut logits = self.classifier_bias.clone();
        for (j, &zj) in z.iter().enumerate() {
            for (l, w) in logits.iter_mut().zip(self.classifier.row(j)) {
                *l += zj * w;
            }
        }
        Ok(logits)
    }

    /// Accumulates classifier gradients for one observation and returns `dL/dz`.
    pub fn backward_classifier(&self, z: &[f64], dlogits: &[f64], grads: &mut EncoderParams) -> Vec<f64> {
        let mut dz = vec![0.0; z.len()];
        for (j, &zj) in z.iter().enumerate() {
            let w = self.classifier.row(j);
            let gw = grads.classifier.row_mut(j);
            for c in 0..dlogits.len() {
                gw[c] += zj * dlogits[c];
                dz[j] += w[c] * dlogits[c];
            }
        }
        for (g, d) in grads.classifier_bias.iter_mut().zip(dlogits) {
            *g += d;
        }
        dz
    }

    /// Accumulates encoder gradients for one observation given `dL/dz`.
    pub fn backward_encoder(
        &self,
        tokens: &TokenizedText,
        trace: &EncodeTrace,
        dz: &[f64],
        grads: &mut EncoderParams,
    ) {
        let dpre: Vec<f64> = trace.z.iter().zip(dz).map(|(z, g)| g * (1.0 - z * z)).collect();
        let mut dpooled = vec![0.0; trace.pooled.len()];
        for (k, &h) in trace.pooled.iter().enumerate() {
            let p = self.projection.row(k);
            let gp = grads.projection.row_mut(k);
            for j in 0..dpre.len() {
                gp[j] += h * dpre[j];
                dpooled[k] += p[j] * dpre[j];
            }
        }
        for (g, d) in grads.projection_bias.iter_mut().zip(&dpre) {
            *g += d;
        }
        let inv = 1.0 / tokens.bucket_ids.len() as f64;
        for &b in &tokens.bucket_ids {
            for (g, d) in grads.embedding.row_mut(b).iter_mut().zip(&dpooled) {
                *g += d * inv;
            }
        }
    }

    /// Little-endian: `ENC1`, V, d_emb, d, C as u32, then embedding,
    /// projection, projection bias, classifier, classifier bias as f64.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let dims = self.dims();
        w.write_all(MAGIC)?;
        for v in [dims.vocab_buckets, dims.embed_dim, dims.repr_dim, self.classes()] {
            let v = u32::try_from(v).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
            w.write_all(&v.to_le_bytes())?;
        }
        for block in self.blocks() {
            for v in block {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad encoder checkpoint magic {magic:?}")));
        }
        let dims = EncoderDims {
            vocab_buckets: read_u32(&mut r)? as usize,
            embed_dim: read_u32(&mut r)? as usize,
            repr_dim: read_u32(&mut r)? as usize,
        };
        let classes = read_u32(&mut r)? as usize;
        let mut p = Self::zeros(dims, classes);
        for block in p.blocks_mut() {
            let vals = read_f64s(&mut r, block.len())?;
            block.copy_from_slice(&vals);
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{argmax, softmax};

    fn small() -> EncoderParams {
        EncoderParams::init(
            EncoderDims {
                vocab_buckets: 64,
                embed_dim: 6,
                repr_dim: 4,
            },
            3,
            &mut Rng::new(8),
        )
        .unwrap()
    }

    #[test]
    fn tokenize_folds_case_and_punctuation() {
        let t = tokenize("The THE the", 4096);
        assert_eq!(t.bucket_ids.len(), 3);
        assert!(t.bucket_ids.iter().all(|&b| b == t.bucket_ids[0]));
        assert_eq!(tokenize("", 4096).bucket_ids, vec![EMPTY_BUCKET]);
        assert_eq!(tokenize("  \t\n", 4096).bucket_ids, vec![EMPTY_BUCKET]);
        assert_eq!(tokenize("good movie!", 4096), tokenize("good movie", 4096));
        assert_eq!(tokenize("(hello)", 4096), tokenize("hello", 4096));
    }

    #[test]
    fn tokenize_uses_fnv1a() {
        // FNV-1a 64 of "a" is 0xaf63dc4c8601ec8c
        let t = tokenize("a", usize::MAX);
        assert_eq!(t.bucket_ids, vec![(0xaf63dc4c8601ec8cu64 % usize::MAX as u64) as usize]);
    }

    #[test]
    fn mean_pooling_ignores_duplication() {
        let p = small();
        let a = TokenizedText { bucket_ids: vec![5] };
        let aa = TokenizedText { bucket_ids: vec![5, 5] };
        assert_eq!(p.encode(&a).unwrap(), p.encode(&aa).unwrap());
    }

    #[test]
    fn outputs_are_bounded() {
        let mut p = small();
        p.projection.scale(1000.0);
        let z = p.encode(&TokenizedText { bucket_ids: vec![1, 2, 3] }).unwrap();
        assert!(z.iter().all(|v| v.abs() <= 1.0));
        let z = small().encode(&TokenizedText { bucket_ids: vec![1, 2, 3] }).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn out_of_range_bucket() {
        let p = small();
        assert!(p.encode(&TokenizedText { bucket_ids: vec![64] }).is_err());
    }

    #[test]
    fn classify_examples() {
        let mut p = EncoderParams::zeros(
            EncoderDims {
                vocab_buckets: 1,
                embed_dim: 1,
                repr_dim: 2,
            },
            2,
        );
        assert_eq!(p.classify_logits(&[0.3, -0.2]).unwrap(), vec![0.0, 0.0]);
        p.classifier.set(0, 0, 1.0);
        p.classifier.set(1, 1, 1.0);
        assert_eq!(p.classify_logits(&[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(p.classify_logits(&[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn softmax_preserves_argmax() {
        let p = small();
        let mut r = Rng::new(1);
        for _ in 0..50 {
            let t = TokenizedText {
                bucket_ids: (0..4).map(|_| r.below(64)).collect(),
            };
            let l = p.classify_logits(&p.encode(&t).unwrap()).unwrap();
            assert_eq!(argmax(&l), argmax(&softmax(&l).unwrap()));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = small();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"ENC1");
        assert_eq!(buf.len(), 4 + 16 + 8 * p.num_params());
        let back = EncoderParams::read_from(buf.as_slice()).unwrap();
        for (a, b) in p.blocks().iter().zip(back.blocks()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
