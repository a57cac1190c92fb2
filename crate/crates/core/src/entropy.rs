// SPDX-License-Identifier: MIT OR Apache-2.0

//! Ambiguous / unambiguous condition assignment from the normalized entropy
//! of sampled first-word responses.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Label used for completions with no word left after normalization.
pub const EMPTY_TOKEN: &str = "<empty>";

pub const DEFAULT_HIGH_THRESHOLD: f64 = 0.7;
pub const DEFAULT_LOW_THRESHOLD: f64 = 0.5;

/// How a completion is reduced to its first word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FirstWordRule {
    pub lowercase: bool,
    /// Strip leading and trailing non-alphanumeric characters.
    pub strip_punctuation: bool,
}

impl Default for FirstWordRule {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Ambiguous,
    Unambiguous,
    Excluded,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Ambiguous => "ambiguous",
            Condition::Unambiguous => "unambiguous",
            Condition::Excluded => "excluded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionAssignment {
    pub prompt_id: String,
    pub entropy: f64,
    pub condition: Condition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub high_threshold: f64,
    pub low_threshold: f64,
    pub first_word: FirstWordRule,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            high_threshold: DEFAULT_HIGH_THRESHOLD,
            low_threshold: DEFAULT_LOW_THRESHOLD,
            first_word: FirstWordRule::default(),
        }
    }
}

/// First whitespace-delimited word of `completion`, normalized by `rule`.
pub fn extract_first_word(completion: &str, rule: FirstWordRule) -> String {
    let Some(word) = completion.split_whitespace().next() else {
        return EMPTY_TOKEN.to_string();
    };
    let word = if rule.strip_punctuation {
        word.trim_matches(|c: char| !c.is_alphanumeric())
    } else {
        word
    };
    if word.is_empty() {
        return EMPTY_TOKEN.to_string();
    }
    if rule.lowercase {
        word.to_lowercase()
    } else {
        word.to_string()
    }
}

/// Thresholds a normalized entropy: strictly above `high` is ambiguous,
/// strictly below `low` unambiguous, anything in between excluded.
pub fn classify(entropy: f64, high: f64, low: f64) -> Condition {
    if entropy > high {
        Condition::Ambiguous
    } else if entropy < low {
        Condition::Unambiguous
    } else {
        Condition::Excluded
    }
}

/// Normalized first-word entropy of one prompt's completions.
pub fn response_entropy<S: AsRef<str>>(completions: &[S], rule: FirstWordRule) -> Result<f64> {
    let mut words: Vec<String> = completions
        .iter()
        .map(|c| extract_first_word(c.as_ref(), rule))
        .collect();
    words.sort_unstable();
    stats::normalized_entropy_of(&words)
}

/// Assigns every prompt to a condition. All sample lists must share one
/// length `n >= 2`.
pub fn split_conditions<I, S>(samples: &[(I, Vec<S>)], config: &SplitConfig) -> Result<Vec<ConditionAssignment>>
where
    I: AsRef<str>,
    S: AsRef<str>,
{
    if config.low_threshold > config.high_threshold {
        return Err(Error::InvalidArgument(alloc::format!(
            "low threshold {} exceeds high threshold {}",
            config.low_threshold,
            config.high_threshold
        )));
    }
    let Some((_, first)) = samples.first() else {
        return Ok(Vec::new());
    };
    let n = first.len();
    samples
        .iter()
        .map(|(id, completions)| {
            if completions.len() != n {
                return Err(Error::InconsistentSamples {
                    prompt_id: id.as_ref().to_string(),
                    expected: n,
                    actual: completions.len(),
                });
            }
            let entropy = response_entropy(completions, config.first_word)?;
            Ok(ConditionAssignment {
                prompt_id: id.as_ref().to_string(),
                entropy,
                condition: classify(entropy, config.high_threshold, config.low_threshold),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn rule() -> FirstWordRule {
        FirstWordRule::default()
    }

    #[test]
    fn first_word_examples() {
        assert_eq!(extract_first_word("Paris.", rule()), "paris");
        assert_eq!(extract_first_word("  The answer is X", rule()), "the");
        assert_eq!(extract_first_word("", rule()), EMPTY_TOKEN);
        assert_eq!(extract_first_word("   \n", rule()), EMPTY_TOKEN);
        assert_eq!(extract_first_word("...", rule()), EMPTY_TOKEN);
        assert_eq!(extract_first_word("\"Hamlet\",", rule()), "hamlet");
        let raw = FirstWordRule {
            lowercase: false,
            strip_punctuation: false,
        };
        assert_eq!(extract_first_word("Paris.", raw), "Paris.");
    }

    fn prompt(id: &str, words: Vec<String>) -> (String, Vec<String>) {
        (id.to_string(), words)
    }

    #[test]
    fn split_examples() {
        let same = prompt("same", vec!["Paris".to_string(); 20]);
        let distinct = prompt("distinct", (0..20).map(|i| format!("w{i} rest")).collect());
        let halves = prompt(
            "halves",
            (0..20)
                .map(|i| if i < 10 { "Paris." } else { "London" }.to_string())
                .collect(),
        );
        let out = split_conditions(&[same, distinct, halves], &SplitConfig::default()).unwrap();
        assert_eq!(out[0].entropy, 0.0);
        assert_eq!(out[0].condition, Condition::Unambiguous);
        assert!((out[1].entropy - 1.0).abs() < 1e-12);
        assert_eq!(out[1].condition, Condition::Ambiguous);
        assert!((out[2].entropy - libm::log(2.0) / libm::log(20.0)).abs() < 1e-12);
        assert_eq!(out[2].condition, Condition::Unambiguous);
    }

    #[test]
    fn boundaries_are_excluded() {
        assert_eq!(classify(0.7, 0.7, 0.5), Condition::Excluded);
        assert_eq!(classify(0.5, 0.7, 0.5), Condition::Excluded);
        assert_eq!(classify(0.6, 0.7, 0.5), Condition::Excluded);
        assert_eq!(classify(0.7000001, 0.7, 0.5), Condition::Ambiguous);
    }

    #[test]
    fn split_errors() {
        let a = prompt("a", vec!["x".into(); 3]);
        let b = prompt("b", vec!["x".into(); 4]);
        assert!(matches!(
            split_conditions(&[a.clone(), b], &SplitConfig::default()),
            Err(Error::InconsistentSamples { .. })
        ));
        let single = prompt("s", vec!["x".into()]);
        assert!(split_conditions(&[single], &SplitConfig::default()).is_err());
        let bad = SplitConfig {
            high_threshold: 0.4,
            low_threshold: 0.5,
            ..SplitConfig::default()
        };
        assert!(split_conditions(&[a], &bad).is_err());
    }

    proptest! {
        #[test]
        fn order_invariant(words in prop::collection::vec(0u8..5, 2..25), rot in 0usize..25) {
            let completions: Vec<String> = words.iter().map(|w| format!("Word{w}!")).collect();
            let mut rotated = completions.clone();
            let len = rotated.len();
            rotated.rotate_left(rot % len);
            let a = response_entropy(&completions, rule()).unwrap();
            let b = response_entropy(&rotated, rule()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn raising_high_threshold_never_creates_ambiguity(h in 0.0f64..=1.0, t1 in 0.5f64..1.0, dt in 0.0f64..0.5) {
            let before = classify(h, t1, 0.5);
            let after = classify(h, t1 + dt, 0.5);
            if before != Condition::Ambiguous {
                prop_assert_ne!(after, Condition::Ambiguous);
            }
        }
    }
}
