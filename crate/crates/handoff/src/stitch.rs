//! Joining the opener with its continuation, and inspecting the result.

use mulm_core::metrics::CorrectionFlag;

use crate::prompts::RecoveryMode;

pub const CORRECTION_MARKER: &str = "Correction:";

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '…' | '—' | '–' | '‘' | '’' | '“' | '”' | '«' | '»' | '。' | '，' | '、' | '！' | '？' | '：' | '；'
        )
}

/// Separator placed between `opener` and `continuation`.
pub fn separator(opener: &str, continuation: &str) -> &'static str {
    let opener_open = opener.chars().last().is_some_and(|c| !c.is_whitespace());
    match continuation.chars().next() {
        Some(c) if opener_open && !c.is_whitespace() && !is_punctuation(c) => " ",
        _ => "",
    }
}

/// `opener ++ separator ++ continuation`; the separator is one space only
/// when both sides would otherwise touch with word characters.
pub fn stitch(opener: &str, continuation: &str) -> String {
    let sep = separator(opener, continuation);
    let mut out = String::with_capacity(opener.len() + sep.len() + continuation.len());
    out.push_str(opener);
    out.push_str(sep);
    out.push_str(continuation);
    out
}

fn normalized_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Number of leading words the continuation repeats from the opener.
pub fn restart_overlap(opener: &str, continuation: &str) -> usize {
    normalized_words(opener)
        .iter()
        .zip(normalized_words(continuation))
        .take_while(|(a, b)| *a == b)
        .count()
}

/// True when the continuation restarts by repeating the whole opener.
pub fn duplication_warning(opener: &str, continuation: &str) -> bool {
    let words = normalized_words(opener).len();
    words > 0 && restart_overlap(opener, continuation) == words
}

fn has_marker_line(continuation: &str) -> bool {
    continuation
        .lines()
        .any(|line| line.trim_start().starts_with(CORRECTION_MARKER))
}

/// Explicit mode is decided from the text; other modes only report a flag
/// that an external adjudicator supplied.
pub fn detect_correction(continuation: &str, mode: RecoveryMode, adjudicated: Option<bool>) -> CorrectionFlag {
    match mode {
        RecoveryMode::ExplicitCorrection => CorrectionFlag::from_bool(has_marker_line(continuation)),
        _ => adjudicated.map_or(CorrectionFlag::Unknown, CorrectionFlag::from_bool),
    }
}
