use std::collections::BTreeMap;

use unicode_general_category::{get_general_category, GeneralCategory};

use crate::lang::Script;

/// Letters and combining marks; digits, punctuation, symbols and spaces are not.
pub fn is_letter(c: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        UppercaseLetter
            | LowercaseLetter
            | TitlecaseLetter
            | ModifierLetter
            | OtherLetter
            | NonspacingMark
            | SpacingMark
            | EnclosingMark
    )
}

/// Fraction of letter characters falling in each script's block.
///
/// Letters outside every recognised block are reported under
/// [`Script::Other`]. Strings without letters yield an empty map.
pub fn classify_script(text: &str) -> BTreeMap<Script, f64> {
    let mut counts: BTreeMap<Script, usize> = BTreeMap::new();
    let mut total = 0usize;
    for c in text.chars().filter(|&c| is_letter(c)) {
        *counts.entry(Script::of_char(c)).or_default() += 1;
        total += 1;
    }
    counts
        .into_iter()
        .map(|(s, n)| (s, n as f64 / total as f64))
        .collect()
}

/// Fraction of letters in `script`; zero when the text has no letters.
pub fn script_fraction(text: &str, script: Script) -> f64 {
    classify_script(text).get(&script).copied().unwrap_or(0.0)
}
