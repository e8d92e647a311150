//! Small pre-norm encoder-decoder with named parameters.
//!
//! Parameter names:
//! `token_embeddings`, `{encoder,decoder}.pos_embedding`,
//! `encoder.layers.{i}.{attn_norm,attn.{q,k,v,o},ffn_norm,ffn.{wi,wo}}`,
//! `decoder.layers.{i}.{self_norm,self_attn.*,cross_norm,cross_attn.*,ffn_norm,ffn.*}`,
//! `{encoder,decoder}.final_norm`, `decoder.lm_head`, and with the extra
//! normalization flag `{encoder,decoder}.embed_norm`.
//!
//! The output projection lives under `decoder.` so freezing the decoder
//! freezes it too.

mod decode;
mod loss;
mod transformer;

pub use decode::{beam_search, greedy_search, DecodeConfig};
pub use loss::Seq2SeqLoss;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::corpus::{TaggedSequence, EOS_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::params::{FreezeMask, ParameterSet, Tensor, TrainableMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    /// Layers in each of the encoder and the decoder.
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub extra_layer_norm: bool,
}

impl ModelConfig {
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_positions: 64,
            dropout: 0.0,
            extra_layer_norm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size <= EOS_ID as usize {
            return Err(Error::InvalidConfig("vocabulary has no room for pad and eos".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Names and shapes of every tensor, in construction order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (v, d, f, p) = (self.vocab_size, self.d_model, self.d_ff, self.max_positions);
        let mut out = vec![
            (String::from("token_embeddings"), vec![v, d]),
            (String::from("encoder.pos_embedding"), vec![p, d]),
            (String::from("decoder.pos_embedding"), vec![p, d]),
            (String::from("encoder.final_norm"), vec![d]),
            (String::from("decoder.final_norm"), vec![d]),
            (String::from("decoder.lm_head"), vec![d, v]),
        ];
        if self.extra_layer_norm {
            out.push((String::from("encoder.embed_norm"), vec![d]));
            out.push((String::from("decoder.embed_norm"), vec![d]));
        }
        let attn = |out: &mut Vec<(String, Vec<usize>)>, prefix: &str| {
            for w in ["q", "k", "v", "o"] {
                out.push((format!("{prefix}.{w}"), vec![d, d]));
            }
        };
        for i in 0..self.n_layers {
            let l = format!("encoder.layers.{i}");
            out.push((format!("{l}.attn_norm"), vec![d]));
            attn(&mut out, &format!("{l}.attn"));
            out.push((format!("{l}.ffn_norm"), vec![d]));
            out.push((format!("{l}.ffn.wi"), vec![d, f]));
            out.push((format!("{l}.ffn.wo"), vec![f, d]));
        }
        for i in 0..self.n_layers {
            let l = format!("decoder.layers.{i}");
            out.push((format!("{l}.self_norm"), vec![d]));
            attn(&mut out, &format!("{l}.self_attn"));
            out.push((format!("{l}.cross_norm"), vec![d]));
            attn(&mut out, &format!("{l}.cross_attn"));
            out.push((format!("{l}.ffn_norm"), vec![d]));
            out.push((format!("{l}.ffn.wi"), vec![d, f]));
            out.push((format!("{l}.ffn.wo"), vec![f, d]));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AttnIdx {
    pub q: usize,
    pub k: usize,
    pub v: usize,
    pub o: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EncLayerIdx {
    pub attn_norm: usize,
    pub attn: AttnIdx,
    pub ffn_norm: usize,
    pub wi: usize,
    pub wo: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DecLayerIdx {
    pub self_norm: usize,
    pub self_attn: AttnIdx,
    pub cross_norm: usize,
    pub cross_attn: AttnIdx,
    pub ffn_norm: usize,
    pub wi: usize,
    pub wo: usize,
}

/// Position of each named tensor in the sorted parameter order.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub tok: usize,
    pub enc_pos: usize,
    pub dec_pos: usize,
    pub enc_embed_norm: Option<usize>,
    pub dec_embed_norm: Option<usize>,
    pub enc_layers: Vec<EncLayerIdx>,
    pub dec_layers: Vec<DecLayerIdx>,
    pub enc_final: usize,
    pub dec_final: usize,
    pub lm_head: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let order: BTreeMap<String, ()> = cfg.parameter_shapes().into_iter().map(|(n, _)| (n, ())).collect();
        let ix = |name: &str| order.keys().position(|k| k == name).expect("known parameter");
        let attn = |p: &str| AttnIdx {
            q: ix(&format!("{p}.q")),
            k: ix(&format!("{p}.k")),
            v: ix(&format!("{p}.v")),
            o: ix(&format!("{p}.o")),
        };
        Layout {
            tok: ix("token_embeddings"),
            enc_pos: ix("encoder.pos_embedding"),
            dec_pos: ix("decoder.pos_embedding"),
            enc_embed_norm: cfg.extra_layer_norm.then(|| ix("encoder.embed_norm")),
            dec_embed_norm: cfg.extra_layer_norm.then(|| ix("decoder.embed_norm")),
            enc_layers: (0..cfg.n_layers)
                .map(|i| {
                    let l = format!("encoder.layers.{i}");
                    EncLayerIdx {
                        attn_norm: ix(&format!("{l}.attn_norm")),
                        attn: attn(&format!("{l}.attn")),
                        ffn_norm: ix(&format!("{l}.ffn_norm")),
                        wi: ix(&format!("{l}.ffn.wi")),
                        wo: ix(&format!("{l}.ffn.wo")),
                    }
                })
                .collect(),
            dec_layers: (0..cfg.n_layers)
                .map(|i| {
                    let l = format!("decoder.layers.{i}");
                    DecLayerIdx {
                        self_norm: ix(&format!("{l}.self_norm")),
                        self_attn: attn(&format!("{l}.self_attn")),
                        cross_norm: ix(&format!("{l}.cross_norm")),
                        cross_attn: attn(&format!("{l}.cross_attn")),
                        ffn_norm: ix(&format!("{l}.ffn_norm")),
                        wi: ix(&format!("{l}.ffn.wi")),
                        wo: ix(&format!("{l}.ffn.wo")),
                    }
                })
                .collect(),
            enc_final: ix("encoder.final_norm"),
            dec_final: ix("decoder.final_norm"),
            lm_head: ix("decoder.lm_head"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterSet,
}

impl Model {
    /// Deterministic initialization: norms at one, embeddings uniform in
    /// `[-1, 1]`, positions in `[-0.1, 0.1]`, projections uniform with
    /// variance `1 / (3 fan_in)`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::new();
        for (name, shape) in config.parameter_shapes() {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if shape.len() == 1 {
                vec![1.0; n]
            } else if name == "token_embeddings" {
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
            } else if name.ends_with("pos_embedding") {
                (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect()
            } else {
                let a = 1.0 / libm::sqrt(shape[0] as f64);
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            };
            entries.push((name, Tensor::new(&shape, data)?));
        }
        let params = ParameterSet::from_entries(entries)?;
        Ok(Model { config, params })
    }

    /// Wrap existing parameters, checking names and shapes against the config.
    pub fn from_parts(config: ModelConfig, params: ParameterSet) -> Result<Self> {
        config.validate()?;
        let expected = config.parameter_shapes();
        if expected.len() != params.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in expected {
            match params.get(&name) {
                Some(t) if t.shape == shape => {}
                Some(t) => return Err(Error::InvalidConfig(format!("{name} has shape {:?}, expected {shape:?}", t.shape))),
                None => return Err(Error::InvalidConfig(format!("missing tensor {name}"))),
            }
        }
        Ok(Model { config, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn trainable(&self, mask: &FreezeMask) -> Result<TrainableMask> {
        mask.resolve(&self.params)
    }

    pub fn loss(&self, smoothing: f64) -> Result<Seq2SeqLoss> {
        Seq2SeqLoss::new(self.config.clone(), smoothing)
    }

    fn check_input(&self, input: &TaggedSequence) -> Result<()> {
        if input.tokens.len() < 2 {
            return Err(Error::InvalidArgument("input lacks language tags".into()));
        }
        if input.tokens.len() > self.config.max_positions {
            return Err(Error::InvalidArgument(format!(
                "input of {} tokens exceeds {} positions",
                input.tokens.len(),
                self.config.max_positions
            )));
        }
        if let Some(t) = input.tokens.iter().find(|t| **t as usize >= self.config.vocab_size) {
            return Err(Error::InvalidArgument(format!("token {t} outside vocabulary")));
        }
        Ok(())
    }

    /// Encoder output rows for `tokens`, `[n, d_model]` row-major.
    pub fn encode(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        let layout = Layout::new(&self.config);
        let mut tape = Tape::<f64>::new();
        let p = constants(&mut tape, &self.params);
        let enc = transformer::encode(&mut tape, &self.config, &layout, &p, tokens, &mut None);
        Ok(tape.value(enc).to_vec())
    }

    /// Beam-search decode of `input`.
    pub fn generate(&self, input: &TaggedSequence, cfg: &DecodeConfig) -> Result<Vec<u32>> {
        self.generate_masked(input, cfg, &[])
    }

    /// [`Model::generate`] with `banned` tokens removed from every step's
    /// distribution before normalization.
    pub fn generate_masked(&self, input: &TaggedSequence, cfg: &DecodeConfig, banned: &[u32]) -> Result<Vec<u32>> {
        self.check_input(input)?;
        cfg.validate()?;
        if cfg.max_len + 1 > self.config.max_positions {
            return Err(Error::InvalidArgument(format!(
                "max_len {} exceeds decoder positions {}",
                cfg.max_len,
                self.config.max_positions - 1
            )));
        }
        let layout = Layout::new(&self.config);
        let d = self.config.d_model;
        let enc = self.encode(&input.tokens)?;
        let n = input.tokens.len();
        let step = |prefix: &[u32]| -> Result<Vec<f64>> {
            let mut tape = Tape::<f64>::new();
            let p = constants(&mut tape, &self.params);
            let enc_var = tape.constant(enc.clone(), n, d);
            let mut dec_in = Vec::with_capacity(prefix.len() + 1);
            dec_in.push(PAD_ID);
            dec_in.extend_from_slice(prefix);
            let logits = transformer::decode(&mut tape, &self.config, &layout, &p, enc_var, &dec_in, &mut None);
            let v = self.config.vocab_size;
            let mut last = tape.value(logits)[prefix.len() * v..(prefix.len() + 1) * v].to_vec();
            for b in banned {
                if let Some(x) = last.get_mut(*b as usize) {
                    *x = f64::NEG_INFINITY;
                }
            }
            Ok(log_softmax(&last))
        };
        beam_search(step, self.config.vocab_size, EOS_ID, Some(PAD_ID), cfg)
    }

    /// Mean over probes of the encoder outputs at the two tag positions.
    pub fn language_tag_representation(&self, probes: &[TaggedSequence]) -> Result<Vec<f64>> {
        if probes.is_empty() {
            return Err(Error::InvalidArgument("no probe inputs".into()));
        }
        let lang = &probes[0].lang;
        let d = self.config.d_model;
        let mut acc = vec![0.0; d];
        for probe in probes {
            if &probe.lang != lang {
                return Err(Error::InvalidArgument(format!("probe in {} mixed with {}", probe.lang, lang)));
            }
            self.check_input(probe)?;
            let out = self.encode(&probe.tokens)?;
            for j in 0..d {
                acc[j] += 0.5 * (out[j] + out[d + j]);
            }
        }
        let inv = 1.0 / probes.len() as f64;
        acc.iter_mut().for_each(|x| *x *= inv);
        Ok(acc)
    }
}

fn constants(tape: &mut Tape<f64>, params: &ParameterSet) -> Vec<crate::autodiff::Var> {
    params
        .tensors()
        .iter()
        .map(|t| tape.constant(t.data.clone(), t.rows(), t.cols()))
        .collect()
}

pub(crate) fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(row.iter().map(|x| libm::exp(x - max)).sum::<f64>());
    row.iter().map(|x| x - lse).collect()
}

#[cfg(test)]
mod tests;
