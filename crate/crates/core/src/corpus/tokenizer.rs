use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::lang::LangCode;

pub const PAD_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
const FIRST_TAG_ID: u32 = 3;

/// Text to token ids and back, with reserved language-tag and sentinel ids.
pub trait Tokenizer {
    fn vocab_size(&self) -> usize;
    fn encode(&self, text: &str) -> Vec<u32>;
    /// Render ids as text, stopping at the first EOS and skipping padding.
    fn decode(&self, ids: &[u32]) -> String;
    /// `(<fxx>, <2xx>)` ids for a language.
    fn tag_ids(&self, lang: &LangCode) -> Option<(u32, u32)>;
    /// Sentinel ids used by span corruption, in order.
    fn sentinels(&self) -> Vec<u32>;

    fn eos_id(&self) -> u32 {
        EOS_ID
    }

    fn pad_id(&self) -> u32 {
        PAD_ID
    }
}

/// Serializable description of a [`CharTokenizer`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharTokenizerSpec {
    pub languages: Vec<LangCode>,
    pub sentinels: usize,
    pub alphabet: Vec<char>,
}

/// Character-level vocabulary.
///
/// Layout: `<pad>`, `</s>`, `<unk>`, then `<fxx>` `<2xx>` per language, then
/// `<extra_id_N>` sentinels, then one id per alphabet character.
#[derive(Debug, Clone, PartialEq)]
pub struct CharTokenizer {
    spec: CharTokenizerSpec,
    char_ids: BTreeMap<char, u32>,
    lang_index: BTreeMap<LangCode, u32>,
}

impl CharTokenizer {
    pub fn new(languages: Vec<LangCode>, sentinels: usize, alphabet: impl IntoIterator<Item = char>) -> Self {
        let mut chars: Vec<char> = alphabet.into_iter().collect();
        chars.sort_unstable();
        chars.dedup();
        let mut languages = languages;
        languages.sort();
        languages.dedup();
        CharTokenizer::from_spec(CharTokenizerSpec {
            languages,
            sentinels,
            alphabet: chars,
        })
    }

    /// Alphabet collected from `texts`.
    pub fn fit<'a>(languages: Vec<LangCode>, sentinels: usize, texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut chars = Vec::new();
        for t in texts {
            chars.extend(strip_specials(t).chars());
        }
        CharTokenizer::new(languages, sentinels, chars)
    }

    pub fn from_spec(spec: CharTokenizerSpec) -> Self {
        let lang_index = spec.languages.iter().enumerate().map(|(i, l)| (l.clone(), i as u32)).collect();
        let base = FIRST_TAG_ID + 2 * spec.languages.len() as u32 + spec.sentinels as u32;
        let char_ids = spec.alphabet.iter().enumerate().map(|(i, c)| (*c, base + i as u32)).collect();
        CharTokenizer {
            spec,
            char_ids,
            lang_index,
        }
    }

    pub fn spec(&self) -> &CharTokenizerSpec {
        &self.spec
    }

    fn sentinel_base(&self) -> u32 {
        FIRST_TAG_ID + 2 * self.spec.languages.len() as u32
    }

    fn char_base(&self) -> u32 {
        self.sentinel_base() + self.spec.sentinels as u32
    }

    pub fn char_id(&self, c: char) -> Option<u32> {
        self.char_ids.get(&c).copied()
    }

    /// Try to read a special token at the start of `rest`, returning its id and byte length.
    fn special_at(&self, rest: &str) -> Option<(u32, usize)> {
        let close = rest.find('>')?;
        let inner = &rest[1..close];
        let len = close + 1;
        if inner == "/s" {
            return Some((EOS_ID, len));
        }
        if let Some(n) = inner.strip_prefix("extra_id_") {
            let k: usize = n.parse().ok()?;
            return (k < self.spec.sentinels).then(|| (self.sentinel_base() + k as u32, len));
        }
        let (kind, code) = (inner.get(..1)?, inner.get(1..)?);
        let idx = *self.lang_index.get(code)?;
        match kind {
            "f" => Some((FIRST_TAG_ID + 2 * idx, len)),
            "2" => Some((FIRST_TAG_ID + 2 * idx + 1, len)),
            _ => None,
        }
    }
}

fn strip_specials(t: &str) -> String {
    t.replace("</s>", " ")
}

impl Tokenizer for CharTokenizer {
    fn vocab_size(&self) -> usize {
        self.char_base() as usize + self.spec.alphabet.len()
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::with_capacity(text.len());
        let mut i = 0;
        while i < text.len() {
            let rest = &text[i..];
            if rest.starts_with('<') {
                if let Some((id, len)) = self.special_at(rest) {
                    out.push(id);
                    i += len;
                    continue;
                }
            }
            let c = rest.chars().next().expect("non-empty");
            out.push(self.char_id(c).unwrap_or(UNK_ID));
            i += c.len_utf8();
        }
        out
    }

    fn decode(&self, ids: &[u32]) -> String {
        let mut s = String::new();
        let sentinel_base = self.sentinel_base();
        let char_base = self.char_base();
        for &id in ids {
            match id {
                PAD_ID => {}
                EOS_ID => break,
                UNK_ID => s.push_str("<unk>"),
                id if id < sentinel_base => {
                    let k = (id - FIRST_TAG_ID) as usize;
                    let kind = if k.is_multiple_of(2) { 'f' } else { '2' };
                    s.push_str(&format!("<{kind}{}>", self.spec.languages[k / 2]));
                }
                id if id < char_base => s.push_str(&format!("<extra_id_{}>", id - sentinel_base)),
                id => match self.spec.alphabet.get((id - char_base) as usize) {
                    Some(c) => s.push(*c),
                    None => s.push_str("<unk>"),
                },
            }
        }
        s
    }

    fn tag_ids(&self, lang: &LangCode) -> Option<(u32, u32)> {
        self.lang_index.get(lang).map(|i| (FIRST_TAG_ID + 2 * i, FIRST_TAG_ID + 2 * i + 1))
    }

    fn sentinels(&self) -> Vec<u32> {
        let base = self.sentinel_base();
        (0..self.spec.sentinels as u32).map(|k| base + k).collect()
    }
}
