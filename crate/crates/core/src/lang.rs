//! Language codes and the writing systems they are expected to use.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown language code `{0}`")]
pub struct UnknownLang(pub String);

/// Closed set of supported language identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LangCode {
    En,
    Bn,
    Gu,
    Hi,
    Kn,
    Ml,
    Mr,
    Or,
    Pa,
    Ta,
    Te,
    As,
    Ur,
    Ne,
    Si,
    Sd,
}

impl LangCode {
    pub const ALL: [LangCode; 16] = [
        LangCode::En,
        LangCode::Bn,
        LangCode::Gu,
        LangCode::Hi,
        LangCode::Kn,
        LangCode::Ml,
        LangCode::Mr,
        LangCode::Or,
        LangCode::Pa,
        LangCode::Ta,
        LangCode::Te,
        LangCode::As,
        LangCode::Ur,
        LangCode::Ne,
        LangCode::Si,
        LangCode::Sd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LangCode::En => "en",
            LangCode::Bn => "bn",
            LangCode::Gu => "gu",
            LangCode::Hi => "hi",
            LangCode::Kn => "kn",
            LangCode::Ml => "ml",
            LangCode::Mr => "mr",
            LangCode::Or => "or",
            LangCode::Pa => "pa",
            LangCode::Ta => "ta",
            LangCode::Te => "te",
            LangCode::As => "as",
            LangCode::Ur => "ur",
            LangCode::Ne => "ne",
            LangCode::Si => "si",
            LangCode::Sd => "sd",
        }
    }

    /// Position in [`LangCode::ALL`]; used to lay out the reserved tag tokens.
    pub fn index(self) -> usize {
        LangCode::ALL.iter().position(|&l| l == self).unwrap()
    }

    /// The script a well-formed sentence in this language is written in.
    pub fn expected_script(self) -> Script {
        match self {
            LangCode::En => Script::Latin,
            LangCode::Bn | LangCode::As => Script::Bengali,
            LangCode::Gu => Script::Gujarati,
            LangCode::Hi | LangCode::Mr | LangCode::Ne => Script::Devanagari,
            LangCode::Kn => Script::Kannada,
            LangCode::Ml => Script::Malayalam,
            LangCode::Or => Script::Oriya,
            LangCode::Pa => Script::Gurmukhi,
            LangCode::Ta => Script::Tamil,
            LangCode::Te => Script::Telugu,
            LangCode::Si => Script::Sinhala,
            LangCode::Ur | LangCode::Sd => Script::Arabic,
        }
    }

    /// The target-language tag, e.g. `<2hi>`.
    pub fn tag(self) -> String {
        format!("<2{}>", self.as_str())
    }
}

impl fmt::Display for LangCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LangCode {
    type Err = UnknownLang;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LangCode::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| UnknownLang(s.to_string()))
    }
}

impl Serialize for LangCode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for LangCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Writing systems recognised by the script classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Script {
    Devanagari,
    Bengali,
    Gurmukhi,
    Gujarati,
    Oriya,
    Tamil,
    Telugu,
    Kannada,
    Malayalam,
    Sinhala,
    Arabic,
    Latin,
    Other,
}

impl Script {
    /// Unicode block for scripts that occupy a single 128-codepoint block.
    pub fn block(self) -> Option<(u32, u32)> {
        let start = match self {
            Script::Devanagari => 0x0900,
            Script::Bengali => 0x0980,
            Script::Gurmukhi => 0x0A00,
            Script::Gujarati => 0x0A80,
            Script::Oriya => 0x0B00,
            Script::Tamil => 0x0B80,
            Script::Telugu => 0x0C00,
            Script::Kannada => 0x0C80,
            Script::Malayalam => 0x0D00,
            Script::Sinhala => 0x0D80,
            Script::Arabic => return Some((0x0600, 0x06FF)),
            Script::Latin | Script::Other => return None,
        };
        Some((start, start + 0x7F))
    }

    /// True for the Brahmi-derived blocks that share a parallel layout.
    pub fn is_brahmi(self) -> bool {
        !matches!(self, Script::Arabic | Script::Latin | Script::Other | Script::Sinhala)
    }

    pub fn name(self) -> &'static str {
        match self {
            Script::Devanagari => "Devanagari",
            Script::Bengali => "Bengali",
            Script::Gurmukhi => "Gurmukhi",
            Script::Gujarati => "Gujarati",
            Script::Oriya => "Oriya",
            Script::Tamil => "Tamil",
            Script::Telugu => "Telugu",
            Script::Kannada => "Kannada",
            Script::Malayalam => "Malayalam",
            Script::Sinhala => "Sinhala",
            Script::Arabic => "Arabic",
            Script::Latin => "Latin",
            Script::Other => "other",
        }
    }

    pub const BLOCK_SCRIPTS: [Script; 11] = [
        Script::Devanagari,
        Script::Bengali,
        Script::Gurmukhi,
        Script::Gujarati,
        Script::Oriya,
        Script::Tamil,
        Script::Telugu,
        Script::Kannada,
        Script::Malayalam,
        Script::Sinhala,
        Script::Arabic,
    ];

    /// Block-based lookup; Latin covers Basic Latin through Latin Extended-B.
    pub fn of_char(c: char) -> Script {
        let cp = c as u32;
        for s in Script::BLOCK_SCRIPTS {
            let (lo, hi) = s.block().unwrap();
            if (lo..=hi).contains(&cp) {
                return s;
            }
        }
        if cp <= 0x024F || (0x1E00..=0x1EFF).contains(&cp) {
            return Script::Latin;
        }
        Script::Other
    }
}

impl fmt::Display for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
