//! Programs shipped with the crate, addressable by name.

pub const VECTOR_SUM: &str = include_str!("../fixtures/vector_sum.jir");
pub const COLLATZ: &str = include_str!("../fixtures/collatz.jir");
pub const MD5: &str = include_str!("../fixtures/md5.jir");
pub const FIR: &str = include_str!("../fixtures/fir.jir");
pub const SHAPES: &str = include_str!("../fixtures/shapes.jir");
pub const SHAPES_MONO: &str = include_str!("../fixtures/shapes_mono.jir");
pub const CHECKED: &str = include_str!("../fixtures/checked.jir");
pub const CHECKED_OK: &str = include_str!("../fixtures/checked_ok.jir");
pub const ALLOC: &str = include_str!("../fixtures/alloc.jir");
pub const BAD_STACK: &str = include_str!("../fixtures/bad_stack.jir");
pub const DSE_HOT: &str = include_str!("../fixtures/dse_hot.jir");
pub const DSE_HOT_TRACE: &str = include_str!("../fixtures/dse_hot.trace");

pub const ALL: [(&str, &str); 11] = [
    ("vector_sum", VECTOR_SUM),
    ("collatz", COLLATZ),
    ("md5", MD5),
    ("fir", FIR),
    ("shapes", SHAPES),
    ("shapes_mono", SHAPES_MONO),
    ("checked", CHECKED),
    ("checked_ok", CHECKED_OK),
    ("alloc", ALLOC),
    ("bad_stack", BAD_STACK),
    ("dse_hot", DSE_HOT),
];

pub fn by_name(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".jir").unwrap_or(name);
    ALL.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// MD5 padding: the message followed by 0x80, zeros and the bit length,
/// as little-endian 32-bit words. Returns the words and the block count.
pub fn md5_words(msg: &[u8]) -> (Vec<i32>, i32) {
    let mut bytes = msg.to_vec();
    bytes.push(0x80);
    while bytes.len() % 64 != 56 {
        bytes.push(0);
    }
    bytes.extend_from_slice(&((msg.len() as u64).wrapping_mul(8)).to_le_bytes());
    let words: Vec<i32> = bytes
        .chunks(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let blocks = (words.len() / 16) as i32;
    (words, blocks)
}

/// Hex digest from the four output words.
pub fn md5_hex(out: &[i32]) -> String {
    out.iter()
        .flat_map(|w| w.to_le_bytes())
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// FIR coefficients and the 64-sample input (with 7 leading zeros).
pub fn fir_inputs() -> (Vec<i32>, Vec<i32>) {
    let h = vec![1, 3, -2, 5, 5, -2, 3, 1];
    let mut x = vec![0; 7];
    x.extend((0..64).map(|n: i32| (n * 37 + 11) % 101 - 50));
    (x, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jir::{parse_program, validate};

    #[test]
    fn every_fixture_parses_and_all_but_one_validate() {
        for (name, text) in ALL {
            let p = parse_program(text).unwrap_or_else(|e| panic!("{name}: {e:?}"));
            let r = validate(&p);
            if name == "bad_stack" {
                assert!(!r.is_clean());
            } else {
                assert!(r.is_clean(), "{name}: {:?}", r.errors);
            }
        }
    }

    #[test]
    fn padding_shapes() {
        let (w, b) = md5_words(b"");
        assert_eq!((w.len(), b), (16, 1));
        assert_eq!(w[0], 0x80);
        let (w, b) = md5_words(&[b'x'; 56]);
        assert_eq!((w.len(), b), (32, 2));
    }

    #[test]
    fn lookup_accepts_suffix() {
        assert!(by_name("fir.jir").is_some());
        assert!(by_name("nope").is_none());
    }
}
