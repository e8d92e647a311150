//! Datasets, language tags, denoising corruption and meta-task sampling.

mod denoise;
mod sampling;
mod tokenizer;

pub use denoise::{corrupt_spans, denoising_pair, reconstruct, span_corrupt, Corruption};
pub use sampling::{build_multimonolang, sample_task_batch, split_support_query, MultiMonoLang, SplitCounts, TaskBatch};
pub use tokenizer::{CharTokenizer, CharTokenizerSpec, Tokenizer, EOS_ID, PAD_ID, UNK_ID};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::LangCode;

/// Longest source (in tokens, tags excluded) fed to the encoder.
pub const MAX_SOURCE_LEN: usize = 512;

/// Delimiter between answer and passage in question-generation sources.
pub const QG_DELIMITER: &str = "</s>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Summarization,
    QuestionGeneration,
    Denoising,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Summarization => "summarization",
            Task::QuestionGeneration => "question_generation",
            Task::Denoising => "denoising",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// One source/target pair in one language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub source: String,
    pub target: String,
    pub lang: LangCode,
    pub task: Task,
}

impl Example {
    pub fn new(source: impl Into<String>, target: impl Into<String>, lang: LangCode, task: Task) -> Result<Self> {
        let source = source.into();
        if source.is_empty() {
            return Err(Error::InvalidArgument("empty source text".into()));
        }
        Ok(Example {
            source,
            target: target.into(),
            lang,
            task,
        })
    }

    /// Source is `answer </s> passage`.
    pub fn question_generation(answer: &str, passage: &str, question: &str, lang: LangCode) -> Result<Self> {
        Example::new(
            format!("{answer} {QG_DELIMITER} {passage}"),
            question,
            lang,
            Task::QuestionGeneration,
        )
    }

    /// Monolingual text; the denoising target is produced at tokenization time.
    pub fn monolingual(text: impl Into<String>, lang: LangCode) -> Result<Self> {
        let text = text.into();
        Example::new(text.clone(), text, lang, Task::Denoising)
    }
}

/// Examples of one language, task and split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub lang: LangCode,
    pub task: Task,
    pub split: Split,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(lang: LangCode, task: Task, split: Split, examples: Vec<Example>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::InvalidArgument(format!("empty {split} dataset for {lang}")));
        }
        for (i, e) in examples.iter().enumerate() {
            if e.lang != lang {
                return Err(Error::InvalidArgument(format!(
                    "example {i} is in {} but the dataset is declared {lang}",
                    e.lang
                )));
            }
            if e.task != task {
                return Err(Error::InvalidArgument(format!(
                    "example {i} is a {} example in a {task} dataset",
                    e.task
                )));
            }
        }
        Ok(Dataset {
            lang,
            task,
            split,
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Token ids whose first two entries are the `<fxx>` `<2xx>` tags of `lang`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSequence {
    pub tokens: Vec<u32>,
    pub lang: LangCode,
}

/// Model-ready example: tagged encoder input and EOS-terminated target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedPair {
    pub input: TaggedSequence,
    pub target: Vec<u32>,
}

/// Prefix the language tags and cap the source at `max_source_len` tokens.
pub fn tag_tokens<T: Tokenizer + ?Sized>(tokens: &[u32], lang: &LangCode, tokenizer: &T, max_source_len: usize) -> Result<TaggedSequence> {
    let (from, to) = tokenizer
        .tag_ids(lang)
        .ok_or_else(|| Error::UnknownLanguage(format!("no tag tokens for {lang}")))?;
    let keep = tokens.len().min(max_source_len);
    let mut out = Vec::with_capacity(keep + 2);
    out.push(from);
    out.push(to);
    out.extend_from_slice(&tokens[..keep]);
    Ok(TaggedSequence {
        tokens: out,
        lang: lang.clone(),
    })
}

/// Tokenize an example: `[<fxx>, <2xx>] ++ source` and `target ++ [EOS]`.
pub fn tag_example<T: Tokenizer + ?Sized>(example: &Example, tokenizer: &T, max_source_len: usize) -> Result<EncodedPair> {
    let source = tokenizer.encode(&example.source);
    let input = tag_tokens(&source, &example.lang, tokenizer, max_source_len)?;
    let mut target = tokenizer.encode(&example.target);
    target.push(tokenizer.eos_id());
    Ok(EncodedPair { input, target })
}

/// Check the tag-prefix invariant of a sequence.
pub fn has_tag_prefix<T: Tokenizer + ?Sized>(seq: &TaggedSequence, tokenizer: &T) -> bool {
    match tokenizer.tag_ids(&seq.lang) {
        Some((f, t)) => seq.tokens.len() >= 2 && seq.tokens[0] == f && seq.tokens[1] == t,
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tok() -> CharTokenizer {
        CharTokenizer::new(vec!["en".into(), "hi".into()], 8, "abcdefghij ".chars())
    }

    #[test]
    fn tags_come_first() {
        let t = tok();
        let ex = Example::new("abc", "cba", "hi".into(), Task::Summarization).unwrap();
        let pair = tag_example(&ex, &t, MAX_SOURCE_LEN).unwrap();
        assert_eq!(t.decode(&pair.input.tokens[..2]), "<fhi><2hi>");
        assert!(has_tag_prefix(&pair.input, &t));
        assert_eq!(pair.input.tokens.len(), 5);
        assert_eq!(*pair.target.last().unwrap(), EOS_ID);
    }

    #[test]
    fn tokenizer_without_languages_rejects_tagging() {
        let t = CharTokenizer::new(vec![], 0, "abc".chars());
        let ex = Example::new("abc", "a", "hi".into(), Task::Summarization).unwrap();
        assert!(matches!(tag_example(&ex, &t, MAX_SOURCE_LEN), Err(Error::UnknownLanguage(_))));
    }

    #[test]
    fn long_sources_truncate_after_tags() {
        let t = tok();
        let text: String = core::iter::repeat_n('a', 600).collect();
        let ex = Example::new(text, "b", "en".into(), Task::Summarization).unwrap();
        let pair = tag_example(&ex, &t, MAX_SOURCE_LEN).unwrap();
        assert_eq!(pair.input.tokens.len(), 512 + 2);
    }

    #[test]
    fn question_generation_source_layout() {
        let ex = Example::question_generation("bob", "bob went home", "who went home", "en".into()).unwrap();
        assert_eq!(ex.source, "bob </s> bob went home");
        let t = CharTokenizer::new(vec!["en".into()], 0, "bowenthm ".chars());
        let ids = t.encode(&ex.source);
        assert!(ids.contains(&EOS_ID));
    }

    #[test]
    fn dataset_rejects_mixed_languages() {
        let a = Example::new("x", "y", "en".into(), Task::Summarization).unwrap();
        let b = Example::new("x", "y", "hi".into(), Task::Summarization).unwrap();
        assert!(Dataset::new("en".into(), Task::Summarization, Split::Test, vec![a.clone(), b]).is_err());
        assert!(Dataset::new("en".into(), Task::Summarization, Split::Test, vec![]).is_err());
        assert_eq!(
            Dataset::new("en".into(), Task::Summarization, Split::Test, vec![a]).unwrap().len(),
            1
        );
        assert!(Example::new("", "y", "en".into(), Task::Summarization).is_err());
    }
}
