//! Keyed, length-preserving bijection on ASCII decimal digit strings.
//!
//! Strings of two or more digits go through a 10-round alternating Feistel
//! network over the two halves of the string (`floor(n/2)` and `ceil(n/2)`
//! digits), with HMAC-SHA256 as the round function reduced modulo
//! `10^half_len`. Single digits use a keyed permutation of `0..=9` derived
//! from the same PRF. Inputs are limited to [`MAX_DIGITS`] so every half fits
//! in a `u128`.
//!
//! This is a deterministic anonymization primitive, not a NIST FF1/FF3
//! implementation.

use std::fmt;
use std::path::Path;

use hmac::{Hmac, Mac};
use rand::RngCore;
use sha2::Sha256;

use crate::error::Error;
use crate::fsutil;

/// Longest digit string accepted by [`encrypt_digits`].
pub const MAX_DIGITS: usize = 64;

const ROUNDS: u8 = 10;
const DOMAIN_FEISTEL: u8 = 0x46;
const DOMAIN_SINGLE: u8 = 0x31;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FpeError {
    #[error("empty digit string")]
    Empty,
    #[error("non-digit byte 0x{byte:02x} at offset {offset}")]
    NonDigit { offset: usize, byte: u8 },
    #[error("digit string of length {0} exceeds the {MAX_DIGITS} digit limit")]
    TooLong(usize),
}

/// 32-byte secret key. `Debug` never prints the key material.
#[derive(Clone, PartialEq, Eq)]
pub struct FpeKey([u8; 32]);

impl FpeKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        FpeKey(bytes)
    }

    pub fn generate() -> Self {
        let mut bytes = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut bytes);
        FpeKey(bytes)
    }

    pub fn from_hex(s: &str) -> Result<Self, Error> {
        let s = s.trim_end_matches('\n');
        if s.len() != 64 || !s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(Error::InvalidInput(
                "key must be 64 lowercase hex characters".into(),
            ));
        }
        let mut bytes = [0u8; 32];
        hex::decode_to_slice(s, &mut bytes)
            .map_err(|e| Error::InvalidInput(format!("key hex: {e}")))?;
        Ok(FpeKey(bytes))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Reads a key file: 64 lowercase hex characters followed by a newline.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_hex(&text).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    /// Writes the key file with owner-only permissions where supported.
    pub fn store(&self, path: &Path) -> Result<(), Error> {
        let mut text = self.to_hex();
        text.push('\n');
        fsutil::write_private(path, text.as_bytes())
    }

    fn mac(&self) -> HmacSha256 {
        <HmacSha256 as Mac>::new_from_slice(&self.0).expect("HMAC accepts any key length")
    }
}

impl fmt::Debug for FpeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FpeKey(<redacted>)")
    }
}

/// Domain separation for one digit run of one decoy of one object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tweak<'a> {
    pub object_id: &'a str,
    pub decoy_index: u32,
    pub run_index: u32,
}

impl<'a> Tweak<'a> {
    pub fn new(object_id: &'a str, decoy_index: u32, run_index: u32) -> Self {
        Tweak {
            object_id,
            decoy_index,
            run_index,
        }
    }

    /// Length-prefixed encoding; injective over all three fields.
    pub fn encode(&self) -> Vec<u8> {
        let id = self.object_id.as_bytes();
        let mut out = Vec::with_capacity(16 + id.len());
        out.extend_from_slice(&(id.len() as u64).to_be_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&self.decoy_index.to_be_bytes());
        out.extend_from_slice(&self.run_index.to_be_bytes());
        out
    }
}

pub fn encrypt_digits(
    key: &FpeKey,
    tweak: &Tweak<'_>,
    plaintext: &str,
) -> Result<String, FpeError> {
    transform(key, tweak, plaintext, Direction::Encrypt)
}

pub fn decrypt_digits(
    key: &FpeKey,
    tweak: &Tweak<'_>,
    ciphertext: &str,
) -> Result<String, FpeError> {
    transform(key, tweak, ciphertext, Direction::Decrypt)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Encrypt,
    Decrypt,
}

fn validate(input: &str) -> Result<(), FpeError> {
    if input.is_empty() {
        return Err(FpeError::Empty);
    }
    if let Some((offset, byte)) = input.bytes().enumerate().find(|(_, b)| !b.is_ascii_digit()) {
        return Err(FpeError::NonDigit { offset, byte });
    }
    if input.len() > MAX_DIGITS {
        return Err(FpeError::TooLong(input.len()));
    }
    Ok(())
}

fn transform(
    key: &FpeKey,
    tweak: &Tweak<'_>,
    input: &str,
    dir: Direction,
) -> Result<String, FpeError> {
    validate(input)?;
    let digits = input.as_bytes();
    let tweak_bytes = tweak.encode();
    if digits.len() == 1 {
        let perm = single_digit_permutation(key, &tweak_bytes);
        let d = (digits[0] - b'0') as usize;
        let out = match dir {
            Direction::Encrypt => perm[d],
            Direction::Decrypt => perm.iter().position(|&p| p as usize == d).unwrap() as u8,
        };
        return Ok(((b'0' + out) as char).to_string());
    }
    Ok(feistel(key, &tweak_bytes, digits, dir))
}

fn feistel(key: &FpeKey, tweak_bytes: &[u8], digits: &[u8], dir: Direction) -> String {
    let n = digits.len();
    let u = n / 2;
    let v = n - u;
    let keyed = key.mac();
    let round = |i: u8, half: u128, half_len: usize, modulus_len: usize| -> u128 {
        let mut mac = keyed.clone();
        mac.update(&[DOMAIN_FEISTEL, i, n as u8]);
        mac.update(tweak_bytes);
        mac.update(&[half_len as u8]);
        mac.update(render(half, half_len).as_bytes());
        reduce(&mac.finalize().into_bytes(), pow10(modulus_len))
    };
    // Lengths of (a, b) entering round i are (u, v) for even i and (v, u) for odd i.
    let lens = |i: u8| if i.is_multiple_of(2) { (u, v) } else { (v, u) };

    let mut a = parse(&digits[..u]);
    let mut b = parse(&digits[u..]);
    match dir {
        Direction::Encrypt => {
            for i in 0..ROUNDS {
                let (la, lb) = lens(i);
                let m = pow10(la);
                let c = (a + round(i, b, lb, la)) % m;
                a = b;
                b = c;
            }
        }
        Direction::Decrypt => {
            for i in (0..ROUNDS).rev() {
                let (la, lb) = lens(i);
                let m = pow10(la);
                let prev_b = a;
                let f = round(i, prev_b, lb, la);
                let prev_a = (b + m - f) % m;
                a = prev_a;
                b = prev_b;
            }
        }
    }
    let mut out = render(a, u);
    out.push_str(&render(b, v));
    out
}

/// Fisher-Yates shuffle of 0..=9 driven by the PRF over the tweak.
fn single_digit_permutation(key: &FpeKey, tweak_bytes: &[u8]) -> [u8; 10] {
    let mut mac = key.mac();
    mac.update(&[DOMAIN_SINGLE]);
    mac.update(tweak_bytes);
    let stream = mac.finalize().into_bytes();
    let mut perm: [u8; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];
    for (k, i) in (1..10usize).rev().enumerate() {
        let r = u16::from_be_bytes([stream[2 * k], stream[2 * k + 1]]) as usize;
        perm.swap(i, r % (i + 1));
    }
    perm
}

fn pow10(len: usize) -> u128 {
    10u128.pow(len as u32)
}

fn parse(digits: &[u8]) -> u128 {
    digits
        .iter()
        .fold(0u128, |acc, d| acc * 10 + (d - b'0') as u128)
}

fn render(value: u128, len: usize) -> String {
    format!("{value:0len$}")
}

/// Big-endian bytes interpreted as an integer, reduced modulo `modulus` (< 2^107).
fn reduce(bytes: &[u8], modulus: u128) -> u128 {
    bytes
        .iter()
        .fold(0u128, |acc, &b| (acc * 256 + b as u128) % modulus)
}
