/// Splits text into word and punctuation tokens, preserving case.
///
/// Whitespace separates tokens. Every other character that is neither
/// alphanumeric nor a combining mark becomes a token of its own, except
/// `-` and `'` between two alphanumerics and `.` or `,` between two
/// digits, which stay inside the word.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut word = String::new();
        for (i, &c) in chars.iter().enumerate() {
            if is_word_char(c) || is_joiner(&chars, i) {
                word.push(c);
            } else {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(c.to_string());
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || is_combining(c)
}

fn is_combining(c: char) -> bool {
    matches!(c as u32, 0x0300..=0x036F | 0x1AB0..=0x1AFF | 0x1DC0..=0x1DFF | 0x20D0..=0x20FF | 0xFE20..=0xFE2F)
}

fn is_joiner(chars: &[char], i: usize) -> bool {
    if i == 0 || i + 1 >= chars.len() {
        return false;
    }
    let (prev, next) = (chars[i - 1], chars[i + 1]);
    match chars[i] {
        '-' | '\'' | '’' => prev.is_alphanumeric() && next.is_alphanumeric(),
        '.' | ',' => prev.is_numeric() && next.is_numeric(),
        _ => false,
    }
}

/// Space-joined token line.
pub fn tokenize_line(text: &str) -> String {
    tokenize(text).join(" ")
}
