//! The byte <-> printable-unicode table used by byte-level BPE.
//!
//! Every byte maps to a visible character: printable ASCII and most Latin-1
//! bytes map to themselves, the remaining 68 bytes map to U+0100 and up in
//! order. Vocab and merge files store token text in this mapped alphabet.

/// Byte value -> mapped char, indexable by byte.
pub(crate) fn byte_encoder() -> [char; 256] {
    let mut keep = [false; 256];
    for b in b'!'..=b'~' {
        keep[b as usize] = true;
    }
    for b in 0xa1..=0xac {
        keep[b as usize] = true;
    }
    for b in 0xae..=0xff {
        keep[b as usize] = true;
    }
    let mut table = ['\0'; 256];
    let mut next = 256u32;
    for b in 0..256 {
        if keep[b] {
            table[b] = char::from_u32(b as u32).unwrap();
        } else {
            table[b] = char::from_u32(next).unwrap();
            next += 1;
        }
    }
    table
}

/// Mapped char -> byte value, or None for chars outside the table.
pub(crate) fn decode_char(c: char) -> Option<u8> {
    let cp = c as u32;
    if (0x21..=0x7e).contains(&cp) || (0xa1..=0xac).contains(&cp) || (0xae..=0xff).contains(&cp) {
        return Some(cp as u8);
    }
    if (0x100..0x100 + 68).contains(&cp) {
        // Invert the sequential assignment for the 68 excluded bytes.
        let mut next = 0x100u32;
        for b in 0..256u32 {
            let kept = (0x21..=0x7e).contains(&b)
                || (0xa1..=0xac).contains(&b)
                || (0xae..=0xff).contains(&b);
            if !kept {
                if next == cp {
                    return Some(b as u8);
                }
                next += 1;
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoder_is_a_bijection() {
        let enc = byte_encoder();
        let mut seen = std::collections::HashSet::new();
        for (b, &c) in enc.iter().enumerate() {
            assert!(seen.insert(c), "duplicate mapping for byte {b}");
            assert_eq!(decode_char(c), Some(b as u8));
        }
    }

    #[test]
    fn known_mappings() {
        let enc = byte_encoder();
        assert_eq!(enc[b'A' as usize], 'A');
        assert_eq!(enc[b' ' as usize], '\u{120}'); // space -> Ġ
        assert_eq!(enc[b'\n' as usize], '\u{10a}'); // newline -> Ċ
        assert_eq!(enc[0x00], '\u{100}');
        assert_eq!(decode_char('x'), Some(b'x'));
        assert_eq!(decode_char('\u{1f600}'), None);
    }
}
