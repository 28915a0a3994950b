//! Default regex tokenizers. Anything implementing [`Tokenizers`] can replace them.

use std::sync::LazyLock;

use regex::Regex;

use super::Lang;

static NL_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[\p{L}\p{N}_]+|[^\s\p{L}\p{N}_]").expect("valid regex"));

// Alternation order matters: literals, then identifiers and numbers, then multi-character
// operators, then any single non-space character.
static CODE_TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(concat!(
        r#""(?:[^"\\\n]|\\.)*"|'(?:[^'\\\n]|\\.)*'"#,
        r"|[A-Za-z_][A-Za-z0-9_]*",
        r"|\d+(?:\.\d+)?(?:[eE][+-]?\d+)?",
        r"|==|!=|<=|>=|<>|\*\*|//|->|\+=|-=|\*=|/=|%=|<<|>>|&&|\|\||::",
        r"|\S",
    ))
    .expect("valid regex")
});

/// Lowercased word and punctuation tokens.
pub fn tokenize_nl(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    NL_TOKEN.find_iter(&lower).map(|m| m.as_str().to_string()).collect()
}

/// Identifier, literal, operator and punctuation tokens in source order. SQL is lowercased
/// outside string literals since its keywords and identifiers are case-insensitive.
pub fn tokenize_code(code: &str, lang: Lang) -> Vec<String> {
    CODE_TOKEN
        .find_iter(code)
        .map(|m| {
            let tok = m.as_str();
            let literal = tok.starts_with('"') || tok.starts_with('\'');
            if lang == Lang::Sql && !literal {
                tok.to_lowercase()
            } else {
                tok.to_string()
            }
        })
        .collect()
}

/// Pluggable tokenization used when loading datasets.
pub trait Tokenizers: Send + Sync {
    fn nl(&self, text: &str) -> Vec<String>;
    fn code(&self, code: &str, lang: Lang) -> Vec<String>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultTokenizers;

impl Tokenizers for DefaultTokenizers {
    fn nl(&self, text: &str) -> Vec<String> {
        tokenize_nl(text)
    }

    fn code(&self, code: &str, lang: Lang) -> Vec<String> {
        tokenize_code(code, lang)
    }
}
