use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::transformer::{self, Dropout};
use super::{Layout, ModelConfig};
use crate::autodiff::{Differentiable, Scalar, Tape, Var};
use crate::corpus::{EncodedPair, PAD_ID};
use crate::error::{Error, Result};

/// Label-smoothed cross-entropy averaged over every target token in a batch.
///
/// The decoder sees `[pad] ++ target[..n-1]` and predicts `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqLoss {
    config: ModelConfig,
    layout: Layout,
    smoothing: f64,
    dropout_seed: Option<u64>,
}

impl Seq2SeqLoss {
    pub fn new(config: ModelConfig, smoothing: f64) -> Result<Self> {
        config.validate()?;
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::InvalidArgument(format!("label smoothing {smoothing} outside [0, 1)")));
        }
        Ok(Seq2SeqLoss {
            layout: Layout::new(&config),
            config,
            smoothing,
            dropout_seed: None,
        })
    }

    /// Enable the config's dropout with masks drawn from `seed`.
    pub fn with_dropout_seed(&self, seed: u64) -> Self {
        Seq2SeqLoss {
            dropout_seed: Some(seed),
            ..self.clone()
        }
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check(&self, pair: &EncodedPair) -> Result<()> {
        let (v, p) = (self.config.vocab_size, self.config.max_positions);
        if pair.target.is_empty() {
            return Err(Error::InvalidArgument("empty target".into()));
        }
        if pair.input.tokens.is_empty() {
            return Err(Error::InvalidArgument("empty input".into()));
        }
        if pair.input.tokens.len() > p || pair.target.len() > p {
            return Err(Error::InvalidArgument(format!(
                "sequence longer than {p} positions (input {}, target {})",
                pair.input.tokens.len(),
                pair.target.len()
            )));
        }
        if pair.input.tokens.iter().chain(&pair.target).any(|t| *t as usize >= v) {
            return Err(Error::InvalidArgument("token outside vocabulary".into()));
        }
        Ok(())
    }
}

impl Differentiable for Seq2SeqLoss {
    type Example = EncodedPair;

    fn build_loss<S: Scalar>(&self, tape: &mut Tape<S>, params: &[Var], batch: &[EncodedPair]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut drop = match self.dropout_seed {
            Some(seed) if self.config.dropout > 0.0 => Some(Dropout {
                rate: self.config.dropout,
                rng: ChaCha8Rng::seed_from_u64(seed),
            }),
            _ => None,
        };
        let mut terms = Vec::with_capacity(batch.len());
        let mut tokens = 0usize;
        for pair in batch {
            self.check(pair)?;
            let enc = transformer::encode(tape, &self.config, &self.layout, params, &pair.input.tokens, &mut drop);
            let mut dec_in = Vec::with_capacity(pair.target.len());
            dec_in.push(PAD_ID);
            dec_in.extend_from_slice(&pair.target[..pair.target.len() - 1]);
            let logits = transformer::decode(tape, &self.config, &self.layout, params, enc, &dec_in, &mut drop);
            let targets: Vec<usize> = pair.target.iter().map(|t| *t as usize).collect();
            terms.push(tape.cross_entropy(logits, &targets, self.smoothing));
            tokens += targets.len();
        }
        let total = if terms.len() == 1 { terms[0] } else { tape.sum_all(&terms) };
        Ok(tape.scale(total, 1.0 / tokens as f64))
    }

    fn weight(&self, batch: &[EncodedPair]) -> f64 {
        batch.iter().map(|p| p.target.len()).sum::<usize>() as f64
    }
}
