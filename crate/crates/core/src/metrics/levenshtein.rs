use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_words: usize,
}

impl ErrorCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// Error rate; with no reference words the denominator is taken as one.
    pub fn rate(&self) -> f64 {
        self.errors() as f64 / self.reference_words.max(1) as f64
    }
}

impl Add for ErrorCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            substitutions: self.substitutions + o.substitutions,
            deletions: self.deletions + o.deletions,
            insertions: self.insertions + o.insertions,
            reference_words: self.reference_words + o.reference_words,
        }
    }
}

impl AddAssign for ErrorCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ErrorCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Word-level edit distance with its substitution/deletion/insertion split.
pub fn levenshtein<S: AsRef<str>, H: AsRef<str>>(reference: &[S], hypothesis: &[H]) -> ErrorCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    // each cell keeps (total, subs, dels, ins); ties prefer fewer substitutions
    let mut prev: Vec<(usize, usize, usize, usize)> = (0..=m).map(|j| (j, 0, 0, j)).collect();
    let mut cur = prev.clone();
    for i in 1..=n {
        cur[0] = (i, 0, i, 0);
        for j in 1..=m {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            let d = prev[j - 1];
            let diag = if same { d } else { (d.0 + 1, d.1 + 1, d.2, d.3) };
            let u = prev[j];
            let up = (u.0 + 1, u.1, u.2 + 1, u.3);
            let l = cur[j - 1];
            let left = (l.0 + 1, l.1, l.2, l.3 + 1);
            cur[j] = [diag, up, left].into_iter().min_by_key(|c| (c.0, c.1)).expect("three candidates");
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (_, substitutions, deletions, insertions) = prev[m];
    ErrorCounts { substitutions, deletions, insertions, reference_words: n }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn basic_cases() {
        assert_eq!(levenshtein(&w("a b c"), &w("a b c")).errors(), 0);
        let c = levenshtein(&w("a b"), &w("a x"));
        assert_eq!((c.substitutions, c.deletions, c.insertions), (1, 0, 0));
        let c = levenshtein::<&str, &str>(&[], &w("a"));
        assert_eq!((c.insertions, c.reference_words), (1, 0));
        assert_eq!(c.rate(), 1.0);
        let c = levenshtein(&w("a b c d"), &w("b c d e"));
        assert_eq!((c.deletions, c.insertions, c.errors()), (1, 1, 2));
    }

    /// Plain recursive edit distance.
    fn naive(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = naive(ra, rb) + usize::from(x != y);
                sub.min(naive(ra, b) + 1).min(naive(a, rb) + 1)
            }
        }
    }

    proptest! {
        #[test]
        fn total_matches_recursive_oracle(a in prop::collection::vec(0u8..4, 0..7), b in prop::collection::vec(0u8..4, 0..7)) {
            let sa: Vec<String> = a.iter().map(u8::to_string).collect();
            let sb: Vec<String> = b.iter().map(u8::to_string).collect();
            let c = levenshtein(&sa, &sb);
            prop_assert_eq!(c.errors(), naive(&a, &b));
            // counts are consistent with the lengths
            prop_assert_eq!(a.len() - c.deletions + c.insertions, b.len());
        }
    }
}
