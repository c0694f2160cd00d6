//! Decoy documents: the original bytes with every sensitive digit run
//! replaced by its format-preserving ciphertext, plus a plausible name.

use crate::error::{Error, Result};
use crate::fpe::{self, FpeKey, Tweak, MAX_DIGITS};
use crate::scanner;

/// Suffixes appended to the name stem, in decoy-index order.
pub const DECOY_NAME_SUFFIXES: [&str; 5] = ["_final", "_v2", "_copy", "_old", "_draft"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoyDocument {
    pub content: Vec<u8>,
    pub name: String,
    pub decoy_index: u32,
    pub source_object: String,
}

/// Rewrites every scanner-located digit run of `original`.
///
/// Runs longer than [`MAX_DIGITS`] are enciphered in consecutive chunks. Each
/// chunk gets its own `run_index`, counted across the whole document.
pub fn generate_decoy(
    original: &[u8],
    key: &FpeKey,
    object_id: &str,
    decoy_index: u32,
) -> Result<Vec<u8>> {
    if decoy_index == 0 {
        return Err(Error::InvalidInput("decoy index starts at 1".into()));
    }
    let mut out = original.to_vec();
    let mut run_index = 0u32;
    for run in scanner::scan(original) {
        let mut offset = run.start;
        for chunk in run.digits.as_bytes().chunks(MAX_DIGITS) {
            let chunk = std::str::from_utf8(chunk).expect("ASCII digits");
            let tweak = Tweak::new(object_id, decoy_index, run_index);
            let cipher = fpe::encrypt_digits(key, &tweak, chunk)?;
            out[offset..offset + chunk.len()].copy_from_slice(cipher.as_bytes());
            offset += chunk.len();
            run_index += 1;
        }
    }
    Ok(out)
}

/// `report.docx` with index 1 becomes `report_final.docx`.
pub fn derive_decoy_name(original_name: &str, decoy_index: u32) -> Result<String> {
    let suffix = decoy_index
        .checked_sub(1)
        .and_then(|i| DECOY_NAME_SUFFIXES.get(i as usize))
        .ok_or_else(|| {
            Error::Policy(format!(
                "decoy index {decoy_index} outside 1..={}",
                DECOY_NAME_SUFFIXES.len()
            ))
        })?;
    // A leading dot marks a hidden file, not an extension.
    Ok(match original_name.rfind('.') {
        Some(dot) if dot > 0 => {
            format!("{}{suffix}{}", &original_name[..dot], &original_name[dot..])
        }
        _ => format!("{original_name}{suffix}"),
    })
}

pub fn build_decoy(
    original: &[u8],
    original_name: &str,
    key: &FpeKey,
    object_id: &str,
    decoy_index: u32,
) -> Result<DecoyDocument> {
    Ok(DecoyDocument {
        name: derive_decoy_name(original_name, decoy_index)?,
        content: generate_decoy(original, key, object_id, decoy_index)?,
        decoy_index,
        source_object: object_id.to_owned(),
    })
}
