//! Flat word-addressed heap with a bump allocator.
//!
//! Words `[0, HEAP_BASE)` form a zero-filled null page that is never
//! allocated or written, so reading `null + k` yields 0 for small `k`.

use serde::{Deserialize, Serialize};

use super::interp::TrapKind;
use super::ARRAY_TAG;

pub const NULL: i32 = 0;
pub const HEAP_BASE: usize = 8;
pub const DEFAULT_HEAP_WORDS: usize = 1 << 20;

/// An argument passed to an entry method. Arrays are materialised in the
/// heap before execution starts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArgValue {
    Int(i32),
    Null,
    Array(Vec<i32>),
}

impl ArgValue {
    /// Parses `12`, `-3`, `null` or `[1,2,3]`.
    pub fn parse(s: &str) -> Result<ArgValue, String> {
        let s = s.trim();
        if s == "null" {
            return Ok(ArgValue::Null);
        }
        if let Some(inner) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let inner = inner.trim();
            if inner.is_empty() {
                return Ok(ArgValue::Array(Vec::new()));
            }
            return inner
                .split(',')
                .map(|w| parse_word(w.trim()))
                .collect::<Result<Vec<_>, _>>()
                .map(ArgValue::Array);
        }
        parse_word(s).map(ArgValue::Int)
    }
}

impl std::fmt::Display for ArgValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ArgValue::Int(v) => write!(f, "{v}"),
            ArgValue::Null => f.write_str("null"),
            ArgValue::Array(a) => {
                f.write_str("[")?;
                for (i, v) in a.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
        }
    }
}

/// Parses a decimal or `0x` word; values up to `u32::MAX` wrap to `i32`.
pub fn parse_word(s: &str) -> Result<i32, String> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let v: i64 = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).map_err(|e| format!("bad number `{s}`: {e}"))?
    } else {
        body.parse::<i64>()
            .map_err(|e| format!("bad number `{s}`: {e}"))?
    };
    let v = if neg { -v } else { v };
    if v < i32::MIN as i64 || v > u32::MAX as i64 {
        return Err(format!("number `{s}` does not fit in 32 bits"));
    }
    Ok(v as u32 as i32)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Heap {
    words: Vec<i32>,
    limit: usize,
}

impl Default for Heap {
    fn default() -> Self {
        Heap::new(DEFAULT_HEAP_WORDS)
    }
}

impl Heap {
    pub fn new(limit: usize) -> Self {
        Heap {
            words: vec![0; HEAP_BASE],
            limit: limit.max(HEAP_BASE),
        }
    }

    pub fn words(&self) -> &[i32] {
        &self.words
    }

    pub fn into_words(self) -> Vec<i32> {
        self.words
    }

    /// Bump cursor: the handle the next allocation will receive.
    pub fn cursor(&self) -> usize {
        self.words.len()
    }

    pub fn is_valid_handle(&self, h: i32) -> bool {
        h != NULL && (h as usize) >= HEAP_BASE && (h as usize) < self.words.len()
    }

    /// Reads a word. Addresses outside the allocated image read as 0.
    pub fn read(&self, addr: i64) -> i32 {
        if addr < 0 {
            return 0;
        }
        self.words.get(addr as usize).copied().unwrap_or(0)
    }

    /// Writes an allocated, non-null-page word. Returns false otherwise.
    pub fn write(&mut self, addr: i64, value: i32) -> bool {
        if addr < HEAP_BASE as i64 {
            return false;
        }
        match self.words.get_mut(addr as usize) {
            Some(w) => {
                *w = value;
                true
            }
            None => false,
        }
    }

    fn bump(&mut self, words: usize) -> Result<i32, TrapKind> {
        let handle = self.words.len();
        if handle + words > self.limit || handle + words > i32::MAX as usize {
            return Err(TrapKind::OutOfMemory);
        }
        self.words.resize(handle + words, 0);
        Ok(handle as i32)
    }

    /// Object layout: `[tag][fields...]`, fields zeroed.
    pub fn alloc_object(&mut self, tag: i32, fields: usize) -> Result<i32, TrapKind> {
        let h = self.bump(1 + fields)?;
        self.words[h as usize] = tag;
        Ok(h)
    }

    /// Array layout: `[ARRAY_TAG][length][elements...]`.
    pub fn alloc_array(&mut self, len: i32) -> Result<i32, TrapKind> {
        if len < 0 {
            return Err(TrapKind::NegativeArraySize);
        }
        let h = self.bump(2 + len as usize)?;
        self.words[h as usize] = ARRAY_TAG;
        self.words[h as usize + 1] = len;
        Ok(h)
    }

    pub fn array_from(&mut self, values: &[i32]) -> Result<i32, TrapKind> {
        let h = self.alloc_array(values.len() as i32)?;
        let start = h as usize + 2;
        self.words[start..start + values.len()].copy_from_slice(values);
        Ok(h)
    }

    /// Elements of the array at `h`, if `h` is an array handle.
    pub fn array(&self, h: i32) -> Option<&[i32]> {
        if !self.is_valid_handle(h) || self.words[h as usize] != ARRAY_TAG {
            return None;
        }
        let len = self.words[h as usize + 1] as usize;
        self.words.get(h as usize + 2..h as usize + 2 + len)
    }

    /// Allocates array arguments in order and returns the argument words.
    pub fn materialize(&mut self, args: &[ArgValue]) -> Result<Vec<i32>, TrapKind> {
        args.iter()
            .map(|a| match a {
                ArgValue::Int(v) => Ok(*v),
                ArgValue::Null => Ok(NULL),
                ArgValue::Array(vs) => self.array_from(vs),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_allocation_never_overlaps() {
        let mut h = Heap::default();
        let a = h.alloc_object(3, 2).unwrap();
        let b = h.alloc_array(4).unwrap();
        let c = h.alloc_object(1, 0).unwrap();
        assert_eq!(a as usize, HEAP_BASE);
        assert_eq!(b, a + 3);
        assert_eq!(c, b + 6);
        assert_eq!(h.read(b as i64), ARRAY_TAG);
        assert_eq!(h.read(b as i64 + 1), 4);
    }

    #[test]
    fn null_page_reads_zero_and_rejects_writes() {
        let mut h = Heap::default();
        assert_eq!(h.read(1), 0);
        assert_eq!(h.read(-5), 0);
        assert_eq!(h.read(1 << 40), 0);
        assert!(!h.write(1, 5));
        assert!(!h.write(HEAP_BASE as i64, 5));
    }

    #[test]
    fn allocation_limits() {
        let mut h = Heap::new(HEAP_BASE + 4);
        assert_eq!(h.alloc_array(-1), Err(TrapKind::NegativeArraySize));
        assert!(h.alloc_array(2).is_ok());
        assert_eq!(h.alloc_object(1, 0), Err(TrapKind::OutOfMemory));
    }

    #[test]
    fn arg_parsing() {
        assert_eq!(ArgValue::parse("-3"), Ok(ArgValue::Int(-3)));
        assert_eq!(ArgValue::parse("null"), Ok(ArgValue::Null));
        assert_eq!(
            ArgValue::parse("[1, 2,3]"),
            Ok(ArgValue::Array(vec![1, 2, 3]))
        );
        assert_eq!(ArgValue::parse("[]"), Ok(ArgValue::Array(vec![])));
        assert_eq!(parse_word("0xffffffff"), Ok(-1));
        assert!(parse_word("0x1ffffffff").is_err());
        assert!(ArgValue::parse("abc").is_err());
    }
}
