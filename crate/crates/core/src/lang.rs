use alloc::string::{String, ToString};
use core::fmt;

use serde::{Deserialize, Serialize};

/// Language code (ISO 639 two- or three-letter form, e.g. `hi`, `eng`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LangCode(String);

impl LangCode {
    pub fn new(code: impl Into<String>) -> Self {
        LangCode(code.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LangCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LangCode {
    fn from(s: &str) -> Self {
        LangCode(s.to_string())
    }
}

impl From<String> for LangCode {
    fn from(s: String) -> Self {
        LangCode(s)
    }
}

impl core::borrow::Borrow<str> for LangCode {
    fn borrow(&self) -> &str {
        &self.0
    }
}
