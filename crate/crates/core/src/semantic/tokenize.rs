/// Lowercased token list from the canonical tokenizer.
pub type TokenSequence = Vec<String>;

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c,
            '\u{2010}'..='\u{2027}'
            | '\u{2030}'..='\u{205E}'
            | '\u{00A1}' | '\u{00BF}' | '\u{00AB}' | '\u{00BB}'
            | '\u{3001}' | '\u{3002}' | '\u{FF0C}' | '\u{FF0E}')
}

/// Lowercases, splits on Unicode whitespace, trims leading and trailing
/// punctuation from each piece and drops empty pieces.
pub fn tokenize(text: &str) -> TokenSequence {
    text.to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(is_punct))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}
