//! Byte-level pre-tokenization.
//!
//! Splits text exactly like the standard pattern
//! `'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+`
//! with alternatives tried in order at each position: contraction suffixes,
//! then optional-space letter/digit/punctuation runs, then whitespace (a run
//! followed by a non-space keeps its final character for the next piece).

use super::unicode::{is_letter, is_number, is_space};

const CONTRACTIONS: [&str; 7] = ["'s", "'t", "'re", "'ve", "'m", "'ll", "'d"];

#[derive(Clone, Copy, PartialEq)]
enum Class {
    Letter,
    Number,
    Space,
    Other,
}

fn classify(c: char) -> Class {
    if is_space(c) {
        Class::Space
    } else if is_letter(c) {
        Class::Letter
    } else if is_number(c) {
        Class::Number
    } else {
        Class::Other
    }
}

/// Split `text` into pre-tokens, returned as borrowed slices that concatenate
/// back to the input.
pub(crate) fn pretokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let mut out = Vec::new();
    let mut i = 0;

    let byte_at = |k: usize| -> usize {
        if k < n {
            chars[k].0
        } else {
            text.len()
        }
    };

    while i < n {
        let (start, c) = chars[i];

        if c == '\'' {
            let rest = &text[start..];
            if let Some(m) = CONTRACTIONS.iter().find(|&&m| rest.starts_with(m)) {
                out.push(&text[start..start + m.len()]);
                i += m.chars().count();
                continue;
            }
        }

        let next_class = if i + 1 < n {
            Some(classify(chars[i + 1].1))
        } else {
            None
        };

        // ` ?\p{L}+` / ` ?\p{N}+` / ` ?[^\s\p{L}\p{N}]+`: a literal space may
        // prefix a run of the following character's class.
        let (run_class, mut j) = if c == ' ' && matches!(next_class, Some(cl) if cl != Class::Space)
        {
            (next_class.unwrap(), i + 1)
        } else {
            (classify(c), i)
        };

        match run_class {
            Class::Letter | Class::Number | Class::Other => {
                while j < n && classify(chars[j].1) == run_class {
                    j += 1;
                }
                out.push(&text[start..byte_at(j)]);
                i = j;
            }
            Class::Space => {
                while j < n && classify(chars[j].1) == Class::Space {
                    j += 1;
                }
                // `\s+(?!\S)`: a run followed by non-space gives up its last
                // character; a single such character falls through to `\s+`.
                if j < n && j - i >= 2 {
                    j -= 1;
                }
                out.push(&text[start..byte_at(j)]);
                i = j;
            }
        }
    }
    out
}
