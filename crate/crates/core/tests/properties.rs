use decoyvault_core::decoy::generate_decoy;
use decoyvault_core::fpe::{decrypt_digits, encrypt_digits, FpeKey, Tweak, MAX_DIGITS};
use decoyvault_core::identity::{
    canonicalize_ip, canonicalize_mac, canonicalize_name, match_identities,
};
use decoyvault_core::scanner::{self, tokenize};
use decoyvault_core::{HostIdentity, Identifier, IdentifierSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use regex::bytes::Regex;

fn key_strategy() -> impl Strategy<Value = FpeKey> {
    any::<[u8; 32]>().prop_map(FpeKey::from_bytes)
}

fn digits(max: usize) -> impl Strategy<Value = String> {
    proptest::string::string_regex(&format!("[0-9]{{1,{max}}}")).unwrap()
}

/// Second implementation of the sensitivity rule: whitespace-split tokens made
/// only of digits and the allowed separators, then every `[0-9]+` inside.
fn regex_oracle(content: &[u8]) -> Vec<(usize, Vec<u8>)> {
    let token = Regex::new(r"(?-u)[^ \t\r\n]+").unwrap();
    let numeric = Regex::new(r"^[0-9\-/.:,()#+]*[0-9][0-9\-/.:,()#+]*$").unwrap();
    let run = Regex::new(r"[0-9]+").unwrap();
    let mut out = Vec::new();
    for t in token.find_iter(content) {
        if numeric.is_match(t.as_bytes()) {
            for r in run.find_iter(t.as_bytes()) {
                out.push((t.start() + r.start(), r.as_bytes().to_vec()));
            }
        }
    }
    out
}

fn content_strategy() -> impl Strategy<Value = Vec<u8>> {
    let piece = prop_oneof![
        Just(b" ".to_vec()),
        Just(b"\n".to_vec()),
        Just(b"\t".to_vec()),
        Just(b"-".to_vec()),
        Just(b"(".to_vec()),
        "[0-9]{1,80}".prop_map(String::into_bytes),
        "[a-zA-Z]{1,6}".prop_map(String::into_bytes),
        "[0-9]{3}-[0-9]{2}-[0-9]{4}".prop_map(String::into_bytes),
        proptest::collection::vec(any::<u8>(), 0..6),
    ];
    proptest::collection::vec(piece, 0..30).prop_map(|v| v.concat())
}

proptest! {
    #[test]
    fn fpe_roundtrip(key in key_strategy(), id in "[a-f0-9]{0,40}", d in 1u32..6, r in 0u32..100, p in digits(MAX_DIGITS)) {
        let t = Tweak::new(&id, d, r);
        let c = encrypt_digits(&key, &t, &p).unwrap();
        prop_assert_eq!(c.len(), p.len());
        prop_assert!(c.bytes().all(|b| b.is_ascii_digit()));
        prop_assert_eq!(&c, &encrypt_digits(&key, &t, &p).unwrap());
        prop_assert_eq!(decrypt_digits(&key, &t, &c).unwrap(), p);
    }

    #[test]
    fn tokenize_reconstructs_content(content in content_strategy()) {
        let tokens = tokenize(&content);
        let mut rebuilt = content.clone();
        for t in &tokens {
            prop_assert_eq!(&content[t.start..t.end], t.text);
            prop_assert!(!t.text.is_empty());
            prop_assert!(t.text.iter().all(|b| !scanner::DELIMITERS.contains(b)));
            for b in &mut rebuilt[t.start..t.end] { *b = b'x'; }
        }
        for pair in tokens.windows(2) {
            prop_assert!(pair[0].end < pair[1].start);
        }
        // Whatever is not a token is a delimiter.
        for (i, b) in rebuilt.iter().enumerate() {
            let covered = tokens.iter().any(|t| (t.start..t.end).contains(&i));
            prop_assert!(covered || scanner::DELIMITERS.contains(b));
        }
    }

    #[test]
    fn scan_matches_regex_oracle(content in content_strategy()) {
        let runs = scanner::scan(&content);
        let got: Vec<(usize, Vec<u8>)> = runs.iter().map(|r| (r.start, r.digits.as_bytes().to_vec())).collect();
        prop_assert_eq!(&got, &regex_oracle(&content));
        let total_digits = content.iter().filter(|b| b.is_ascii_digit()).count();
        prop_assert!(runs.iter().map(|r| r.len()).sum::<usize>() <= total_digits);
        prop_assert_eq!(runs, scanner::scan(&content));
    }

    #[test]
    fn decoy_is_local_and_length_preserving(content in content_strategy(), key in key_strategy(), idx in 1u32..6) {
        let decoy = generate_decoy(&content, &key, "0123456789abcdef0123456789abcdef", idx).unwrap();
        prop_assert_eq!(decoy.len(), content.len());
        let mut covered = vec![false; content.len()];
        for (start, digits) in regex_oracle(&content) {
            for c in &mut covered[start..start + digits.len()] { *c = true; }
        }
        for i in 0..content.len() {
            if !covered[i] {
                prop_assert_eq!(decoy[i], content[i]);
            } else {
                prop_assert!(decoy[i].is_ascii_digit());
            }
        }
        prop_assert_eq!(&decoy, &generate_decoy(&content, &key, "0123456789abcdef0123456789abcdef", idx).unwrap());
    }

    #[test]
    fn canonicalization_is_idempotent(raw in "[ -~]{0,24}", mac in "[0-9a-fA-F]{12}") {
        for f in [canonicalize_mac, canonicalize_ip, canonicalize_name] {
            if let Some(c) = f(&raw) {
                prop_assert_eq!(f(&c), Some(c.clone()));
            }
        }
        let c = canonicalize_mac(&mac).unwrap();
        prop_assert_eq!(canonicalize_mac(&c), Some(c.clone()));
        let shape = Regex::new("^[0-9a-f]{2}(:[0-9a-f]{2}){5}$").unwrap();
        prop_assert!(shape.is_match(c.as_bytes()));
    }

    #[test]
    fn match_is_monotone_in_required(correct in 0u8..32, required in 0u8..32, sub in 0u8..32) {
        let owner = HostIdentity::new(Some("aa:bb:cc:dd:ee:ff"), Some("10.0.0.1"), Some("h"), Some("u"));
        let mut presented = owner.clone();
        for (i, id) in Identifier::ALL.into_iter().enumerate() {
            if correct & (1 << i) == 0 {
                let wrong = match id {
                    Identifier::Mac => "00:00:00:00:00:01".to_owned(),
                    Identifier::Ip => "10.9.9.9".to_owned(),
                    Identifier::QuadHash => "f".repeat(64),
                    _ => "wrong".to_owned(),
                };
                presented.set(id, Some(&wrong));
            }
        }
        let set = |bits: u8| -> IdentifierSet {
            Identifier::ALL.into_iter().enumerate().filter(|(i, _)| bits & (1 << i) != 0).map(|(_, id)| id).collect()
        };
        let s = set(required);
        let subset = set(required & sub);
        if match_identities(&owner, &presented, s).overall {
            prop_assert!(match_identities(&owner, &presented, subset).overall);
        }
        prop_assert_eq!(match_identities(&owner, &presented, s).overall, set(correct).is_superset(s));
    }
}

#[test]
fn tweak_separation() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(0x5eed);
    let key = FpeKey::from_bytes(rng.gen());
    let mut differ = 0;
    for i in 0..1000u32 {
        let len = rng.gen_range(4..=24);
        let p: String = (0..len)
            .map(|_| char::from(b'0' + rng.gen_range(0..10u8)))
            .collect();
        let a = encrypt_digits(&key, &Tweak::new("obj", 1, i), &p).unwrap();
        let b = encrypt_digits(&key, &Tweak::new("obj", 2, i), &p).unwrap();
        differ += (a != b) as u32;
    }
    assert!(differ >= 990, "{differ}/1000 differ");
}

#[test]
fn distinct_decoys_per_index() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    let key = FpeKey::from_bytes(rng.gen());
    let mut differ = 0;
    for i in 0..200 {
        let original = format!("acct {:06} ref {}", rng.gen_range(0..1_000_000), i);
        let id = format!("{i:032x}");
        let d1 = generate_decoy(original.as_bytes(), &key, &id, 1).unwrap();
        let d2 = generate_decoy(original.as_bytes(), &key, &id, 2).unwrap();
        differ += (d1 != d2) as u32;
    }
    assert!(differ >= 198, "{differ}/200 differ");
}

#[test]
fn classify_without_digits_is_false() {
    for s in ["", "-", "()", "#+", "abc", "..."] {
        let t = scanner::Token {
            text: s.as_bytes(),
            start: 0,
            end: s.len(),
        };
        assert!(!scanner::classify(&t), "{s:?}");
    }
}
