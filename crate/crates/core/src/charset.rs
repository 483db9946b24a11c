//! The fixed 62-symbol alphabet: digits, then uppercase, then lowercase.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CHARS: usize = 62;

const SYMBOLS: &str = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct CharSet;

impl CharSet {
    pub fn as_str(&self) -> &'static str {
        SYMBOLS
    }

    pub fn chars(&self) -> impl Iterator<Item = char> + Clone {
        SYMBOLS.chars()
    }

    pub fn len(&self) -> usize {
        NUM_CHARS
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, ch: char) -> bool {
        char_index(ch).is_ok()
    }

    pub fn symbol(&self, index: usize) -> Option<char> {
        SYMBOLS.as_bytes().get(index).map(|&b| b as char)
    }
}

impl From<CharSet> for String {
    fn from(_: CharSet) -> String {
        SYMBOLS.to_string()
    }
}

impl TryFrom<String> for CharSet {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        if s == SYMBOLS {
            Ok(CharSet)
        } else {
            Err(format!("unsupported character set {s:?}"))
        }
    }
}

/// Position of `ch` in the fixed ordering.
pub fn char_index(ch: char) -> Result<usize> {
    match ch {
        '0'..='9' => Ok(ch as usize - '0' as usize),
        'A'..='Z' => Ok(10 + ch as usize - 'A' as usize),
        'a'..='z' => Ok(36 + ch as usize - 'a' as usize),
        _ => Err(Error::NotInCharSet(ch)),
    }
}

/// Checks that every symbol of `text` is in the set and that it is non-empty.
pub fn validate_text(text: &str) -> Result<()> {
    if text.is_empty() {
        return Err(Error::Invalid("text is empty".into()));
    }
    for ch in text.chars() {
        char_index(ch)?;
    }
    Ok(())
}
