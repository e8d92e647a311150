use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

/// How a language's text is split into metric tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segmentation {
    /// Whitespace, with punctuation split off as separate tokens.
    Words,
    /// Every non-space character is a token.
    Chars,
}

/// Per-language metric tokenizers.
#[derive(Debug, Clone)]
pub struct TokenizerRegistry {
    default: Segmentation,
    by_lang: BTreeMap<String, Segmentation>,
    lowercase: bool,
    stemmer: Option<fn(&str) -> String>,
}

impl Default for TokenizerRegistry {
    fn default() -> Self {
        let mut by_lang = BTreeMap::new();
        for l in ["zh", "th", "ja"] {
            by_lang.insert(String::from(l), Segmentation::Chars);
        }
        TokenizerRegistry {
            default: Segmentation::Words,
            by_lang,
            lowercase: false,
            stemmer: None,
        }
    }
}

impl TokenizerRegistry {
    pub fn with_lowercase(mut self, on: bool) -> Self {
        self.lowercase = on;
        self
    }

    pub fn with_stemmer(mut self, stem: fn(&str) -> String) -> Self {
        self.stemmer = Some(stem);
        self
    }

    pub fn set(&mut self, lang: &str, seg: Segmentation) {
        self.by_lang.insert(String::from(lang), seg);
    }

    pub fn segmentation(&self, lang: &str) -> Segmentation {
        self.by_lang.get(lang).copied().unwrap_or(self.default)
    }

    pub fn tokenize(&self, text: &str, lang: &str) -> Vec<String> {
        let text = if self.lowercase { text.to_lowercase() } else { String::from(text) };
        let raw = match self.segmentation(lang) {
            Segmentation::Words => words(&text),
            Segmentation::Chars => text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
        };
        match self.stemmer {
            Some(stem) => raw.iter().map(|t| stem(t)).collect(),
            None => raw,
        }
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '।' | '॥'
                | '。'
                | '，'
                | '、'
                | '？'
                | '！'
                | '：'
                | '；'
                | '«'
                | '»'
                | '¿'
                | '¡'
                | '“'
                | '”'
                | '‘'
                | '’'
                | '…'
                | '–'
                | '—'
                | '؟'
                | '،'
        )
}

fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !cur.is_empty() {
                out.push(core::mem::take(&mut cur));
            }
        } else if is_punct(c) {
            if !cur.is_empty() {
                out.push(core::mem::take(&mut cur));
            }
            out.push(String::from(c));
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn word_and_char_segmentation() {
        let r = TokenizerRegistry::default();
        assert_eq!(r.tokenize("Hello, world!", "en"), vec!["Hello", ",", "world", "!"]);
        assert_eq!(r.tokenize("你好 世界", "zh"), vec!["你", "好", "世", "界"]);
        assert_eq!(r.tokenize("नमस्ते।", "hi"), vec!["नमस्ते", "।"]);
        let lower = TokenizerRegistry::default().with_lowercase(true);
        assert_eq!(lower.tokenize("ABC d", "en"), vec!["abc", "d"]);
    }

    #[test]
    fn stemming_hook() {
        fn strip_s(t: &str) -> String {
            String::from(t.strip_suffix('s').unwrap_or(t))
        }
        let r = TokenizerRegistry::default().with_stemmer(strip_s);
        assert_eq!(r.tokenize("cats sit", "en"), vec!["cat", "sit"]);
    }
}
