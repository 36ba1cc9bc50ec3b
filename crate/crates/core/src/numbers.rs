//! Numeric literals in prose: extraction for fact checking and the
//! formatting conventions used when rendering context.

use std::sync::LazyLock;

use regex::Regex;

/// Grouped thousands ("2,450", "1,234.5") or plain decimals ("15", "0.87").
/// Signs are not part of the literal; ASCII digits only.
static NUMBER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[0-9]{1,3}(?:,[0-9]{3})+\b(?:\.[0-9]+)?|[0-9]+(?:\.[0-9]+)?")
        .expect("number pattern compiles")
});

/// Every number literal in `text`, in order of appearance, with thousands
/// separators removed. Percent signs and units are ignored.
pub fn extract_numbers(text: &str) -> Vec<f64> {
    NUMBER
        .find_iter(text)
        .filter_map(|m| m.as_str().replace(',', "").parse().ok())
        .collect()
}

/// Whether `value` is within relative tolerance `tol` of any of `known`.
pub fn contains_close(known: &[f64], value: f64, tol: f64) -> bool {
    known
        .iter()
        .any(|k| *k == value || (k - value).abs() <= tol * k.abs().max(value.abs()))
}

/// Inserts `,` every three digits of the integer part.
fn group_thousands(digits: &str) -> String {
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// `2450` → `"2,450"`.
pub fn format_count(n: u64) -> String {
    group_thousands(&n.to_string())
}

/// Fixed decimals with grouped thousands: `(1234.56, 1)` → `"1,234.6"`.
/// Negative zero renders as zero.
pub fn format_fixed(value: f64, decimals: usize) -> String {
    let s = format!("{:.*}", decimals, value.abs());
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (s.as_str(), None),
    };
    let is_zero = s.chars().all(|c| c == '0' || c == '.');
    let sign = if value < 0.0 && !is_zero { "-" } else { "" };
    match frac {
        Some(f) => format!("{sign}{}.{f}", group_thousands(int)),
        None => format!("{sign}{}", group_thousands(int)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Hand-rolled reading of the same grammar: a run of digits and commas,
    /// then an optional fraction, interpreted leftmost-first like the regex.
    fn oracle(text: &str) -> Vec<f64> {
        let b = text.as_bytes();
        let digit = |i: usize| i < b.len() && b[i].is_ascii_digit();
        let word = |i: usize| i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_');
        let mut out = Vec::new();
        let mut i = 0;
        while i < b.len() {
            if !digit(i) {
                i += 1;
                continue;
            }
            let start = i;
            let mut j = i;
            while digit(j) {
                j += 1;
            }
            let lead = j - start;
            let mut end = j;
            let mut grouped = false;
            if lead <= 3 {
                // Take as many ",ddd" groups as possible while the last one
                // ends at a word boundary.
                let mut k = j;
                let mut best = None;
                while k < b.len() && b[k] == b',' && digit(k + 1) && digit(k + 2) && digit(k + 3) {
                    k += 4;
                    if !word(k) {
                        best = Some(k);
                    }
                }
                if let Some(k) = best {
                    end = k;
                    grouped = true;
                }
            }
            if !grouped {
                end = j;
            }
            if end < b.len() && b[end] == b'.' && digit(end + 1) {
                end += 1;
                while digit(end) {
                    end += 1;
                }
            }
            out.push(text[start..end].replace(',', "").parse().unwrap());
            i = end;
        }
        out
    }

    #[test]
    fn extracts_context_box_values() {
        assert_eq!(extract_numbers("15 events, instability 0.87"), vec![15.0, 0.87]);
        assert_eq!(extract_numbers("Total events: 2,450"), vec![2450.0]);
        assert_eq!(extract_numbers("dwell 12.5% of windows"), vec![12.5]);
        assert!(extract_numbers("").is_empty());
        assert!(extract_numbers("no digits here").is_empty());
    }

    #[test]
    fn commas_between_plain_numbers_are_separators() {
        assert_eq!(extract_numbers("1,2,3"), vec![1.0, 2.0, 3.0]);
        assert_eq!(extract_numbers("counts 15, 11, 8"), vec![15.0, 11.0, 8.0]);
        assert_eq!(extract_numbers("1,234.5 minutes"), vec![1234.5]);
    }

    #[test]
    fn formatting() {
        assert_eq!(format_count(0), "0");
        assert_eq!(format_count(593), "593");
        assert_eq!(format_count(2450), "2,450");
        assert_eq!(format_count(1_234_567), "1,234,567");
        assert_eq!(format_fixed(0.8712, 2), "0.87");
        assert_eq!(format_fixed(1234.56, 1), "1,234.6");
        assert_eq!(format_fixed(-0.001, 2), "0.00");
        assert_eq!(format_fixed(-12.5, 1), "-12.5");
    }

    #[test]
    fn rendered_numbers_read_back() {
        for v in [0.0, 0.87, 12.3, 999.9, 1000.0, 56_789.25] {
            for d in 0..3 {
                let s = format_fixed(v, d);
                let back = extract_numbers(&s);
                assert_eq!(back.len(), 1, "{s}");
                assert!((back[0] - s.replace(',', "").parse::<f64>().unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tolerance_matching() {
        assert!(contains_close(&[0.87], 0.870, 1e-6));
        assert!(!contains_close(&[0.87], 0.88, 1e-6));
        assert!(contains_close(&[0.0], 0.0, 1e-6));
    }

    fn sentence() -> impl Strategy<Value = String> {
        let word = prop_oneof![
            Just("events".to_string()),
            Just("near".to_string()),
            Just("instability".to_string()),
            Just("v2".to_string()),
            Just("%".to_string()),
            Just(",".to_string()),
            Just(".".to_string()),
            Just("-".to_string()),
            Just(":".to_string()),
            (0u64..5_000_000).prop_map(|n| n.to_string()),
            (0u64..5_000_000).prop_map(format_count),
            (0.0f64..10_000.0, 0usize..4).prop_map(|(v, d)| format_fixed(v, d)),
        ];
        proptest::collection::vec((word, prop_oneof![Just(""), Just(" "), Just(", ")]), 0..12)
            .prop_map(|parts| parts.into_iter().map(|(w, sep)| format!("{w}{sep}")).collect())
    }

    proptest! {
        #[test]
        fn extraction_matches_grammar_oracle(text in sentence()) {
            prop_assert_eq!(extract_numbers(&text), oracle(&text));
        }
    }
}
