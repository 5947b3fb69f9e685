use unicode_normalization::UnicodeNormalization;

/// Normalizes raw text for tokenization.
///
/// NFC, lowercase, every character that is not a letter becomes a space
/// (digits and punctuation included), whitespace runs collapse to one space,
/// and the ends are trimmed. No stemming and no stopword removal.
pub fn clean_text(raw: &str) -> String {
    let lowered: String = raw.nfc().flat_map(char::to_lowercase).collect();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_space = false;
    for c in lowered.nfc() {
        if is_kept(c) {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        } else {
            pending_space = true;
        }
    }
    out
}

fn is_kept(c: char) -> bool {
    c.is_alphabetic() && !c.is_numeric() && !c.is_uppercase()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn keeps_accented_letters_and_drops_digits() {
        assert_eq!(clean_text("Ação  Nº 123!"), "ação nº");
    }

    #[test]
    fn empty_input() {
        assert_eq!(clean_text(""), "");
        assert_eq!(clean_text("  12 !? "), "");
    }

    #[test]
    fn collapses_and_trims() {
        assert_eq!(clean_text("  Foo,bar.\n\tBAZ  "), "foo bar baz");
    }

    #[test]
    fn composes_decomposed_input() {
        assert_eq!(clean_text("Ac\u{327}a\u{303}o"), "ação");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn idempotent(s in "\\PC{0,40}") {
            let once = clean_text(&s);
            prop_assert_eq!(clean_text(&once), once.clone());
        }

        #[test]
        fn idempotent_on_mixed_scripts(s in "[a-zA-ZÀ-ÿİıſΣσς0-9 .,!\u{300}-\u{36f}]{0,40}") {
            let once = clean_text(&s);
            prop_assert_eq!(clean_text(&once), once.clone());
        }
    }
}
