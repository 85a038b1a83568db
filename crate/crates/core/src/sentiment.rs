//! Lexicon-based sentiment counting.
//!
//! Reviews are scanned for tendentious terms from a two-sided lexicon. The
//! scan is a greedy longest-match walk over the lowercase-folded text: at
//! each position the longest matching term (from either side) is counted and
//! the cursor jumps past it, so matches never overlap and "not good" beats
//! "good" when both are listed. Terms match as plain substrings, with no
//! word-boundary requirement, so the same scan works for scripts written
//! without delimiters.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Review-level sentiment label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Negative,
    Positive,
    Neutral,
}

/// Tendentious-term occurrence counts for one text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TermCounts {
    pub negative: u32,
    pub positive: u32,
}

/// More negative than positive occurrences makes a review negative, the
/// reverse makes it positive, and ties (including 0-0) are neutral.
pub fn classify(counts: TermCounts) -> Polarity {
    use std::cmp::Ordering::*;
    match counts.negative.cmp(&counts.positive) {
        Greater => Polarity::Negative,
        Less => Polarity::Positive,
        Equal => Polarity::Neutral,
    }
}

/// Two disjoint sets of lowercase-folded terms.
#[derive(Debug, Clone)]
pub struct Lexicon {
    positive: HashSet<String>,
    negative: HashSet<String>,
    max_term_chars: usize,
}

impl Lexicon {
    /// Builds a lexicon from raw term lists.
    ///
    /// Terms are lowercase-folded, trimmed, and deduplicated; blank entries
    /// are dropped. Errors if either side ends up empty or if a term appears
    /// on both sides.
    pub fn from_terms<I, J, S, T>(positive: I, negative: J) -> Result<Lexicon>
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        let fold = |side: &mut HashSet<String>, term: &str| {
            let t = term.trim().to_lowercase();
            if !t.is_empty() {
                side.insert(t);
            }
        };
        let mut pos = HashSet::new();
        let mut neg = HashSet::new();
        for t in positive {
            fold(&mut pos, t.as_ref());
        }
        for t in negative {
            fold(&mut neg, t.as_ref());
        }
        if pos.is_empty() {
            return Err(Error::LexiconEmpty { side: "positive" });
        }
        if neg.is_empty() {
            return Err(Error::LexiconEmpty { side: "negative" });
        }
        if let Some(term) = pos.intersection(&neg).min() {
            return Err(Error::LexiconOverlap { term: term.clone() });
        }
        let max_term_chars = pos
            .iter()
            .chain(neg.iter())
            .map(|t| t.chars().count())
            .max()
            .unwrap_or(0);
        Ok(Lexicon {
            positive: pos,
            negative: neg,
            max_term_chars,
        })
    }

    /// Loads a lexicon from two UTF-8 text files, one term per line.
    ///
    /// Blank lines and lines starting with `#` are ignored.
    pub fn load(positive_path: &Path, negative_path: &Path) -> Result<Lexicon> {
        Lexicon::from_terms(read_terms(positive_path)?, read_terms(negative_path)?)
    }

    pub fn positive_len(&self) -> usize {
        self.positive.len()
    }

    pub fn negative_len(&self) -> usize {
        self.negative.len()
    }

    /// Counts non-overlapping term occurrences in `text`.
    pub fn count(&self, text: &str) -> TermCounts {
        let folded: String = text.chars().flat_map(char::to_lowercase).collect();
        // Byte offsets of char starts, plus the end sentinel, so candidate
        // substrings can be sliced without re-walking the string.
        let starts: Vec<usize> = folded
            .char_indices()
            .map(|(b, _)| b)
            .chain(std::iter::once(folded.len()))
            .collect();
        let n_chars = starts.len() - 1;

        let mut counts = TermCounts::default();
        let mut i = 0;
        while i < n_chars {
            let max_len = self.max_term_chars.min(n_chars - i);
            let mut matched = 0;
            for len in (1..=max_len).rev() {
                let candidate = &folded[starts[i]..starts[i + len]];
                if self.negative.contains(candidate) {
                    counts.negative += 1;
                    matched = len;
                    break;
                }
                if self.positive.contains(candidate) {
                    counts.positive += 1;
                    matched = len;
                    break;
                }
            }
            i += if matched > 0 { matched } else { 1 };
        }
        counts
    }
}

fn read_terms(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex(pos: &[&str], neg: &[&str]) -> Lexicon {
        Lexicon::from_terms(pos.iter(), neg.iter()).unwrap()
    }

    #[test]
    fn counts_per_occurrence() {
        let l = lex(&["good"], &["bad"]);
        let c = l.count("bad bad good bad");
        assert_eq!((c.negative, c.positive), (3, 1));
    }

    #[test]
    fn longest_match_wins_across_sides() {
        let l = lex(&["good"], &["not good"]);
        let c = l.count("not good");
        assert_eq!((c.negative, c.positive), (1, 0));
        let c = l.count("good not good good");
        assert_eq!((c.negative, c.positive), (1, 2));
    }

    #[test]
    fn longest_match_wins_within_a_side() {
        let l = lex(&["very good", "good"], &["bad"]);
        let c = l.count("very good");
        assert_eq!((c.negative, c.positive), (0, 1));
    }

    #[test]
    fn matches_do_not_overlap() {
        let l = lex(&["aa"], &["zz"]);
        assert_eq!(l.count("aaa").positive, 1);
        assert_eq!(l.count("aaaa").positive, 2);
    }

    #[test]
    fn case_folds_text_and_terms() {
        let l = lex(&["GOOD"], &["Québec"]);
        let c = l.count("gOOd QUÉBEC good");
        assert_eq!((c.negative, c.positive), (1, 2));
    }

    #[test]
    fn substring_semantics_without_boundaries() {
        // By design terms match inside longer words, as in unsegmented text.
        let l = lex(&["好"], &["坏"]);
        let c = l.count("很好用不坏好");
        assert_eq!((c.negative, c.positive), (1, 2));
    }

    #[test]
    fn classify_breaks_ties_to_neutral() {
        let c = |negative, positive| TermCounts { negative, positive };
        assert_eq!(classify(c(2, 1)), Polarity::Negative);
        assert_eq!(classify(c(1, 2)), Polarity::Positive);
        assert_eq!(classify(c(2, 2)), Polarity::Neutral);
        assert_eq!(classify(c(0, 0)), Polarity::Neutral);
    }

    #[test]
    fn term_order_does_not_matter() {
        let a = lex(&["good", "great"], &["bad", "awful"]);
        let b = lex(&["great", "good"], &["awful", "bad"]);
        for text in ["good bad great awful", "awful awful good"] {
            assert_eq!(a.count(text), b.count(text));
        }
    }

    #[test]
    fn overlap_is_rejected_by_name() {
        let err = Lexicon::from_terms(["good", "fine"], ["bad", "Fine"]).unwrap_err();
        assert!(err.to_string().contains("\"fine\""), "{err}");
    }

    #[test]
    fn empty_sides_are_rejected() {
        assert!(Lexicon::from_terms(["good"], ["  ", ""]).is_err());
        let no_pos: [&str; 0] = [];
        assert!(Lexicon::from_terms(no_pos, ["bad"]).is_err());
    }

    #[test]
    fn loads_from_files_skipping_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pos.txt");
        let n = dir.path().join("neg.txt");
        std::fs::write(&p, "# positive terms\ngood\n Great \n\ngood\n").unwrap();
        std::fs::write(&n, "bad\n").unwrap();
        let l = Lexicon::load(&p, &n).unwrap();
        assert_eq!(l.positive_len(), 2);
        assert_eq!(l.negative_len(), 1);
        assert_eq!(l.count("great GOOD").positive, 2);
    }
}
