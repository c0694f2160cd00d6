//! Tokenizer and sensitive-span locator.
//!
//! Content is split on whitespace (space, tab, CR, LF). A token is sensitive
//! when it is "numerical": after removing the separators in
//! [`NUMERIC_SEPARATORS`] only ASCII digits remain. Inside sensitive tokens
//! every maximal run of ASCII digits becomes a [`DigitRun`], the unit that
//! decoy generation rewrites. Tokens with any other character (letters,
//! Unicode digits, `$`, ...) are left alone.

/// Bytes that separate tokens.
pub const DELIMITERS: &[u8] = b" \t\r\n";

/// Punctuation allowed inside a numerical token.
pub const NUMERIC_SEPARATORS: &[u8] = b"-/.:,()#+";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a [u8],
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigitRun {
    pub start: usize,
    pub digits: String,
}

impl DigitRun {
    pub fn len(&self) -> usize {
        self.digits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }

    pub fn end(&self) -> usize {
        self.start + self.digits.len()
    }
}

/// Decides whether a token carries sensitive content.
///
/// [`NumericFormat`] is the built-in rule; other classifiers (for example a
/// named-entity recognizer) can be supplied to [`scan_with`].
pub trait TokenClassifier {
    fn is_sensitive(&self, token: &[u8]) -> bool;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NumericFormat;

impl TokenClassifier for NumericFormat {
    fn is_sensitive(&self, token: &[u8]) -> bool {
        let mut saw_digit = false;
        for &b in token {
            if b.is_ascii_digit() {
                saw_digit = true;
            } else if !NUMERIC_SEPARATORS.contains(&b) {
                return false;
            }
        }
        saw_digit
    }
}

pub fn tokenize(content: &[u8]) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, b) in content.iter().enumerate() {
        match (DELIMITERS.contains(b), start) {
            (true, Some(s)) => {
                tokens.push(Token {
                    text: &content[s..i],
                    start: s,
                    end: i,
                });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            text: &content[s..],
            start: s,
            end: content.len(),
        });
    }
    tokens
}

pub fn classify(token: &Token<'_>) -> bool {
    NumericFormat.is_sensitive(token.text)
}

pub fn scan(content: &[u8]) -> Vec<DigitRun> {
    scan_with(content, &NumericFormat)
}

pub fn scan_with(content: &[u8], classifier: &dyn TokenClassifier) -> Vec<DigitRun> {
    let mut runs = Vec::new();
    for token in tokenize(content) {
        if !classifier.is_sensitive(token.text) {
            continue;
        }
        let mut i = 0;
        while i < token.text.len() {
            if !token.text[i].is_ascii_digit() {
                i += 1;
                continue;
            }
            let begin = i;
            while i < token.text.len() && token.text[i].is_ascii_digit() {
                i += 1;
            }
            let digits = std::str::from_utf8(&token.text[begin..i])
                .expect("ASCII digits are UTF-8")
                .to_owned();
            runs.push(DigitRun {
                start: token.start + begin,
                digits,
            });
        }
    }
    runs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts<'a>(tokens: &[Token<'a>]) -> Vec<&'a [u8]> {
        tokens.iter().map(|t| t.text).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert!(tokenize(b"").is_empty());
        let toks = tokenize(b"SSN: 123-45-6789\n");
        assert_eq!(texts(&toks), vec![&b"SSN:"[..], b"123-45-6789"]);
        assert_eq!((toks[0].start, toks[0].end), (0, 4));
        assert_eq!((toks[1].start, toks[1].end), (5, 16));
        assert_eq!(texts(&tokenize(b"a  b")), vec![&b"a"[..], b"b"]);
        assert_eq!(texts(&tokenize(b"\t\r\n x\ty\r\n")), vec![&b"x"[..], b"y"]);
        assert!(tokenize(b" \n\t ").is_empty());
    }

    #[test]
    fn classify_examples() {
        let t = |s: &'static str| Token {
            text: s.as_bytes(),
            start: 0,
            end: s.len(),
        };
        assert!(classify(&t("123-45-6789")));
        assert!(classify(&t("(555)123-4567")));
        assert!(classify(&t("+1.5,000#7:8/9")));
        assert!(!classify(&t("hello")));
        assert!(!classify(&t("A1B2")));
        assert!(!classify(&t("---")));
        assert!(!classify(&t("$100")));
        assert!(!classify(&t("12\u{0661}")));
    }

    #[test]
    fn scan_examples() {
        let runs = scan(b"SSN: 123-45-6789");
        let got: Vec<(&str, usize, usize)> = runs
            .iter()
            .map(|r| (r.digits.as_str(), r.start, r.len()))
            .collect();
        assert_eq!(got, vec![("123", 5, 3), ("45", 9, 2), ("6789", 12, 4)]);
        assert!(scan(b"order A1B2 shipped").is_empty());
        assert!(scan(b"").is_empty());
    }

    #[test]
    fn binary_content_is_scanned_bytewise() {
        let content = b"\x00\x01 42 \xff9\xff 7\x00";
        let runs = scan(content);
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].digits, "42");
        assert_eq!(runs[0].start, 3);
    }

    struct Everything;
    impl TokenClassifier for Everything {
        fn is_sensitive(&self, _: &[u8]) -> bool {
            true
        }
    }

    #[test]
    fn classifier_seam_controls_which_tokens_are_scanned() {
        let runs = scan_with(b"order A1B2 shipped", &Everything);
        let digits: Vec<&str> = runs.iter().map(|r| r.digits.as_str()).collect();
        assert_eq!(digits, vec!["1", "2"]);
    }
}
