use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::hungarian::min_cost_assignment;
use super::levenshtein::{levenshtein, ErrorCounts};
use crate::error::{Error, Result};

/// Words spoken by one speaker (or emitted on one stream) in `[start, end)` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedWords {
    pub speaker: usize,
    pub start: f64,
    pub end: f64,
    pub words: Vec<String>,
}

impl TimedWords {
    pub fn new(speaker: usize, start: f64, end: f64, words: &str) -> Self {
        Self { speaker, start, end, words: words.split_whitespace().map(str::to_owned).collect() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTranscript {
    pub utterances: Vec<TimedWords>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HypothesisOutput {
    pub segments: Vec<TimedWords>,
}

fn labels(items: &[TimedWords]) -> Vec<usize> {
    items.iter().map(|u| u.speaker).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Words of `label` concatenated in start-time order.
fn stream(items: &[TimedWords], label: usize) -> Vec<&str> {
    let mut sel: Vec<&TimedWords> = items.iter().filter(|u| u.speaker == label).collect();
    sel.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
    sel.iter().flat_map(|u| u.words.iter().map(String::as_str)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpWer {
    pub counts: ErrorCounts,
    /// `(reference speaker, hypothesis stream)` pairs; `None` marks padding.
    pub assignment: Vec<(Option<usize>, Option<usize>)>,
}

impl CpWer {
    pub fn rate(&self) -> f64 {
        self.counts.rate()
    }
}

/// Concatenated minimum-permutation WER.
pub fn cpwer(reference: &ReferenceTranscript, hypothesis: &HypothesisOutput) -> CpWer {
    let refs = labels(&reference.utterances);
    let hyps = labels(&hypothesis.segments);
    let ref_words: Vec<Vec<&str>> = refs.iter().map(|&r| stream(&reference.utterances, r)).collect();
    let hyp_words: Vec<Vec<&str>> = hyps.iter().map(|&h| stream(&hypothesis.segments, h)).collect();
    let n = refs.len().max(hyps.len());
    let empty: Vec<&str> = Vec::new();
    let pair = |i: usize, j: usize| {
        levenshtein(ref_words.get(i).unwrap_or(&empty), hyp_words.get(j).unwrap_or(&empty))
    };
    let table: Vec<Vec<ErrorCounts>> = (0..n).map(|i| (0..n).map(|j| pair(i, j)).collect()).collect();
    let cost: Vec<Vec<i64>> = table.iter().map(|row| row.iter().map(|c| c.errors() as i64).collect()).collect();
    let assign = min_cost_assignment(&cost);
    let mut counts = ErrorCounts::default();
    let mut assignment = Vec::with_capacity(n);
    for (i, j) in assign.into_iter().enumerate() {
        let j = j.expect("square assignment is complete");
        counts += table[i][j];
        assignment.push((refs.get(i).copied(), hyps.get(j).copied()));
    }
    CpWer { counts, assignment }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiMode {
    /// Per-segment overlap labeling refined by single-segment moves.
    #[default]
    Heuristic,
    /// Global optimum over all labelings; small inputs only.
    Exact,
}

pub const EXACT_MAX_SEGMENTS: usize = 10;
pub const EXACT_MAX_SPEAKERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiCpWer {
    pub counts: ErrorCounts,
    /// Reference speaker given to each hypothesis segment (input order).
    pub labels: Vec<usize>,
}

impl DiCpWer {
    pub fn rate(&self) -> f64 {
        self.counts.rate()
    }
}

struct Labeling<'a> {
    order: Vec<usize>,
    segments: &'a [TimedWords],
    ref_words: Vec<Vec<&'a str>>,
}

impl<'a> Labeling<'a> {
    fn new(reference: &'a ReferenceTranscript, hypothesis: &'a HypothesisOutput, refs: &[usize]) -> Self {
        let mut order: Vec<usize> = (0..hypothesis.segments.len()).collect();
        let segs = &hypothesis.segments;
        order.sort_by(|&a, &b| segs[a].start.total_cmp(&segs[b].start).then(segs[a].end.total_cmp(&segs[b].end)));
        let ref_words = refs.iter().map(|&r| stream(&reference.utterances, r)).collect();
        Self { order, segments: segs, ref_words }
    }

    /// Errors of reference slot `r` against the segments carrying label slot `r`.
    fn slot_errors(&self, labels: &[usize], r: usize) -> usize {
        let hyp: Vec<&str> = self
            .order
            .iter()
            .filter(|&&b| labels[b] == r)
            .flat_map(|&b| self.segments[b].words.iter().map(String::as_str))
            .collect();
        levenshtein(&self.ref_words[r], &hyp).errors()
    }

    fn total(&self, labels: &[usize]) -> usize {
        (0..self.ref_words.len()).map(|r| self.slot_errors(labels, r)).sum()
    }

    /// Moves single segments to another slot while that strictly lowers the total.
    fn descend(&self, labels: &mut [usize]) {
        let slots = self.ref_words.len();
        let mut per_slot: Vec<usize> = (0..slots).map(|r| self.slot_errors(labels, r)).collect();
        loop {
            let mut improved = false;
            for b in 0..labels.len() {
                let from = labels[b];
                for to in 0..slots {
                    if to == from {
                        continue;
                    }
                    labels[b] = to;
                    let (ef, et) = (self.slot_errors(labels, from), self.slot_errors(labels, to));
                    if ef + et < per_slot[from] + per_slot[to] {
                        per_slot[from] = ef;
                        per_slot[to] = et;
                        improved = true;
                        break;
                    }
                    labels[b] = from;
                }
            }
            if !improved {
                return;
            }
        }
    }
}

fn relabeled(hypothesis: &HypothesisOutput, labels: &[usize], refs: &[usize]) -> HypothesisOutput {
    HypothesisOutput {
        segments: hypothesis
            .segments
            .iter()
            .zip(labels)
            .map(|(s, &r)| TimedWords { speaker: refs[r], ..s.clone() })
            .collect(),
    }
}

/// Diarization-invariant cpWER: each segment keeps its times but takes the
/// reference speaker label that minimises the error.
pub fn di_cpwer(reference: &ReferenceTranscript, hypothesis: &HypothesisOutput, mode: DiMode) -> Result<DiCpWer> {
    let refs = labels(&reference.utterances);
    let segs = &hypothesis.segments;
    if refs.is_empty() || segs.is_empty() {
        let counts = cpwer(reference, hypothesis).counts;
        return Ok(DiCpWer { counts, labels: vec![refs.first().copied().unwrap_or(0); segs.len()] });
    }
    let lab = Labeling::new(reference, hypothesis, &refs);
    let slots = match mode {
        DiMode::Heuristic => heuristic_slots(reference, hypothesis, &refs, &lab),
        DiMode::Exact => exact_slots(&lab)?,
    };
    let counts = cpwer(reference, &relabeled(hypothesis, &slots, &refs)).counts;
    Ok(DiCpWer { counts, labels: slots.iter().map(|&r| refs[r]).collect() })
}

fn heuristic_slots(
    reference: &ReferenceTranscript,
    hypothesis: &HypothesisOutput,
    refs: &[usize],
    lab: &Labeling<'_>,
) -> Vec<usize> {
    let segs = &hypothesis.segments;
    let mut local: Vec<usize> = segs
        .iter()
        .map(|seg| {
            let cost = |r: usize| {
                let mut near: Vec<&TimedWords> = reference
                    .utterances
                    .iter()
                    .filter(|u| u.speaker == refs[r] && u.start < seg.end && u.end > seg.start)
                    .collect();
                near.sort_by(|a, b| a.start.total_cmp(&b.start));
                let words: Vec<&str> = near.iter().flat_map(|u| u.words.iter().map(String::as_str)).collect();
                levenshtein(&words, &seg.words).errors()
            };
            (0..refs.len()).min_by_key(|&r| (cost(r), r)).expect("at least one reference speaker")
        })
        .collect();
    lab.descend(&mut local);

    // the labeling implied by the cpWER stream mapping is a second start, so the
    // result never exceeds the plain cpWER
    let cp = cpwer(reference, hypothesis);
    let mut from_cp: Vec<usize> = segs
        .iter()
        .map(|s| {
            cp.assignment
                .iter()
                .find(|(_, h)| *h == Some(s.speaker))
                .and_then(|(r, _)| *r)
                .and_then(|r| refs.iter().position(|&x| x == r))
                .unwrap_or(0)
        })
        .collect();
    lab.descend(&mut from_cp);
    if lab.total(&from_cp) < lab.total(&local) {
        from_cp
    } else {
        local
    }
}

/// Dynamic programme over segment subsets: best[r][mask] is the least error of
/// giving the segments in `mask` to the first `r` reference speakers.
fn exact_slots(lab: &Labeling<'_>) -> Result<Vec<usize>> {
    let b = lab.segments.len();
    let slots = lab.ref_words.len();
    if b > EXACT_MAX_SEGMENTS || slots > EXACT_MAX_SPEAKERS {
        return Err(Error::SearchLimit(format!(
            "exact labeling supports {EXACT_MAX_SEGMENTS} segments and {EXACT_MAX_SPEAKERS} speakers, got {b} and {slots}"
        )));
    }
    let full = (1usize << b) - 1;
    let subset_cost: Vec<Vec<usize>> = (0..slots)
        .map(|r| {
            (0..=full)
                .map(|mask| {
                    let labels: Vec<usize> = (0..b).map(|i| if mask >> i & 1 == 1 { r } else { usize::MAX }).collect();
                    lab.slot_errors(&labels, r)
                })
                .collect()
        })
        .collect();
    let mut best = vec![vec![usize::MAX; full + 1]; slots + 1];
    let mut choice = vec![vec![0usize; full + 1]; slots + 1];
    best[0][0] = 0;
    for r in 0..slots {
        for mask in 0..=full {
            // enumerate submasks of mask, including the empty one
            let mut sub = mask;
            loop {
                let rest = mask ^ sub;
                if best[r][rest] != usize::MAX {
                    let c = best[r][rest] + subset_cost[r][sub];
                    if c < best[r + 1][mask] {
                        best[r + 1][mask] = c;
                        choice[r + 1][mask] = sub;
                    }
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & mask;
            }
        }
    }
    let mut labels = vec![0usize; b];
    let mut mask = full;
    for r in (0..slots).rev() {
        let sub = choice[r + 1][mask];
        for (i, l) in labels.iter_mut().enumerate() {
            if sub >> i & 1 == 1 {
                *l = r;
            }
        }
        mask ^= sub;
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools_free::permutations;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    mod itertools_free {
        pub fn permutations(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in permutations(n - 1) {
                for i in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(i, n - 1);
                    out.push(q);
                }
            }
            out
        }
    }

    fn r(items: &[(usize, f64, f64, &str)]) -> ReferenceTranscript {
        ReferenceTranscript { utterances: items.iter().map(|&(k, a, b, w)| TimedWords::new(k, a, b, w)).collect() }
    }

    fn h(items: &[(usize, f64, f64, &str)]) -> HypothesisOutput {
        HypothesisOutput { segments: items.iter().map(|&(k, a, b, w)| TimedWords::new(k, a, b, w)).collect() }
    }

    #[test]
    fn permuted_streams_score_zero() {
        let re = r(&[(0, 0.0, 1.0, "hello world"), (1, 1.0, 2.0, "good morning")]);
        let hy = h(&[(0, 1.0, 2.0, "good morning"), (1, 0.0, 1.0, "hello world")]);
        assert_eq!(cpwer(&re, &hy).rate(), 0.0);
    }

    #[test]
    fn one_third_case() {
        let re = r(&[(0, 0.0, 1.0, "a b"), (1, 1.0, 2.0, "c")]);
        let hy = h(&[(0, 1.0, 2.0, "c"), (1, 0.0, 1.0, "a x")]);
        let got = cpwer(&re, &hy);
        assert!((got.rate() - 1.0 / 3.0).abs() < 1e-12);
        // brute force over both assignments
        let costs = [
            levenshtein(&["a", "b"], &["c"]).errors() + levenshtein(&["c"], &["a", "x"]).errors(),
            levenshtein(&["a", "b"], &["a", "x"]).errors() + levenshtein(&["c"], &["c"]).errors(),
        ];
        assert_eq!(got.counts.errors(), *costs.iter().min().unwrap());
    }

    #[test]
    fn mislabeled_utterance_costs_deletions_and_insertions() {
        let re = r(&[(0, 0.0, 1.0, "a b"), (0, 2.0, 3.0, "c d e"), (1, 1.0, 2.0, "f g h i")]);
        let hy = h(&[(0, 0.0, 1.0, "a b"), (1, 2.0, 3.0, "c d e"), (1, 1.0, 2.0, "f g h i")]);
        let got = cpwer(&re, &hy);
        assert_eq!((got.counts.deletions, got.counts.insertions, got.counts.substitutions), (3, 3, 0));
        let di = di_cpwer(&re, &hy, DiMode::Heuristic).unwrap();
        assert_eq!(di.counts.errors(), 0);
        assert_eq!(di_cpwer(&re, &hy, DiMode::Exact).unwrap().counts.errors(), 0);
    }

    #[test]
    fn perfect_diarization_leaves_cpwer_unchanged() {
        let re = r(&[(0, 0.0, 1.0, "a b c"), (1, 0.5, 2.0, "d e"), (0, 2.5, 3.0, "f")]);
        let hy = h(&[(7, 0.0, 1.0, "a x c"), (3, 0.5, 2.0, "d"), (7, 2.5, 3.0, "f")]);
        let cp = cpwer(&re, &hy).counts;
        assert_eq!(di_cpwer(&re, &hy, DiMode::Heuristic).unwrap().counts, cp);
        assert_eq!(di_cpwer(&re, &hy, DiMode::Exact).unwrap().counts, cp);
    }

    #[test]
    fn padding_handles_extra_streams() {
        let re = r(&[(0, 0.0, 1.0, "a b")]);
        let hy = h(&[(0, 0.0, 1.0, "a b"), (1, 0.0, 1.0, "z")]);
        let got = cpwer(&re, &hy);
        assert_eq!((got.counts.insertions, got.counts.reference_words), (1, 2));
        let none = cpwer(&ReferenceTranscript::default(), &hy);
        assert_eq!((none.counts.insertions, none.rate()), (3, 3.0));
    }

    #[test]
    fn exact_mode_refuses_large_inputs() {
        let re = r(&[(0, 0.0, 1.0, "a")]);
        let hy = HypothesisOutput { segments: (0..11).map(|i| TimedWords::new(0, i as f64, i as f64 + 1.0, "a")).collect() };
        assert!(matches!(di_cpwer(&re, &hy, DiMode::Exact), Err(Error::SearchLimit(_))));
    }

    fn brute_cpwer(re: &ReferenceTranscript, hy: &HypothesisOutput) -> usize {
        let refs = labels(&re.utterances);
        let hyps = labels(&hy.segments);
        let n = refs.len().max(hyps.len());
        let rw: Vec<Vec<&str>> = (0..n).map(|i| refs.get(i).map(|&k| stream(&re.utterances, k)).unwrap_or_default()).collect();
        let hw: Vec<Vec<&str>> = (0..n).map(|i| hyps.get(i).map(|&k| stream(&hy.segments, k)).unwrap_or_default()).collect();
        permutations(n).iter().map(|p| (0..n).map(|i| levenshtein(&rw[i], &hw[p[i]]).errors()).sum()).min().unwrap()
    }

    fn brute_di(re: &ReferenceTranscript, hy: &HypothesisOutput) -> usize {
        let refs = labels(&re.utterances);
        let b = hy.segments.len();
        let mut best = usize::MAX;
        for code in 0..refs.len().pow(b as u32) {
            let mut c = code;
            let mut relab = hy.clone();
            for s in relab.segments.iter_mut() {
                s.speaker = refs[c % refs.len()];
                c /= refs.len();
            }
            best = best.min(cpwer(re, &relab).counts.errors());
        }
        best
    }

    const WORDS: [&str; 5] = ["a", "b", "c", "d", "e"];

    fn random_case(rng: &mut ChaCha8Rng, speakers: usize, segments: usize, noise: f64) -> (ReferenceTranscript, HypothesisOutput) {
        let mut re = ReferenceTranscript::default();
        let mut hy = HypothesisOutput::default();
        let mut t = 0.0;
        for _ in 0..segments {
            let k = rng.random_range(0..speakers);
            let len = rng.random_range(1.0..3.0);
            let words: Vec<String> = (0..rng.random_range(1..4)).map(|_| WORDS[rng.random_range(0..5)].to_string()).collect();
            let mut heard = words.clone();
            if rng.random_bool(noise) {
                let i = rng.random_range(0..heard.len());
                heard[i] = WORDS[rng.random_range(0..5)].to_string();
            }
            re.utterances.push(TimedWords { speaker: k, start: t, end: t + len, words });
            let label = if rng.random_bool(0.3) { rng.random_range(0..speakers + 1) } else { k };
            hy.segments.push(TimedWords { speaker: label, start: t, end: t + len, words: heard });
            t += len - rng.random_range(0.0..0.8);
        }
        (re, hy)
    }

    #[test]
    fn cpwer_matches_permutation_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let k = rng.random_range(1..=5);
            let b = rng.random_range(1..9);
            let (re, hy) = random_case(&mut rng, k, b, 0.4);
            assert_eq!(cpwer(&re, &hy).counts.errors(), brute_cpwer(&re, &hy));
        }
    }

    #[test]
    fn exact_mode_matches_labeling_enumeration_and_bounds_cpwer() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..60 {
            let k = rng.random_range(1..=3);
            let b = rng.random_range(1..7);
            let (re, hy) = random_case(&mut rng, k, b, 0.5);
            let exact = di_cpwer(&re, &hy, DiMode::Exact).unwrap();
            assert_eq!(exact.counts.errors(), brute_di(&re, &hy));
            assert!(exact.counts.errors() <= cpwer(&re, &hy).counts.errors());
        }
    }

    #[test]
    fn heuristic_is_bracketed_by_exact_and_cpwer() {
        // tiny vocabulary and heavy overlap: many spurious alignments
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let k = rng.random_range(1..=4);
            let b = rng.random_range(1..=10);
            let (re, hy) = random_case(&mut rng, k, b, 0.3);
            let heur = di_cpwer(&re, &hy, DiMode::Heuristic).unwrap().counts.errors();
            let exact = di_cpwer(&re, &hy, DiMode::Exact).unwrap().counts.errors();
            assert!(exact <= heur && heur <= cpwer(&re, &hy).counts.errors());
        }
    }

    /// Meeting-like case: distinct words, short crosstalk, some label and word errors.
    fn meeting_case(rng: &mut ChaCha8Rng, speakers: usize, segments: usize) -> (ReferenceTranscript, HypothesisOutput) {
        let vocab = crate::synth::VOCABULARY;
        let mut re = ReferenceTranscript::default();
        let mut hy = HypothesisOutput::default();
        let mut t = 0.0;
        for _ in 0..segments {
            let k = rng.random_range(0..speakers);
            let len = rng.random_range(1.0..3.0);
            let words: Vec<String> = (0..rng.random_range(2..6)).map(|_| vocab[rng.random_range(0..vocab.len())].to_string()).collect();
            let mut heard = words.clone();
            if rng.random_bool(0.3) {
                let i = rng.random_range(0..heard.len());
                heard[i] = vocab[rng.random_range(0..vocab.len())].to_string();
            }
            re.utterances.push(TimedWords { speaker: k, start: t, end: t + len, words });
            let label = if rng.random_bool(0.3) { rng.random_range(0..speakers + 1) } else { k };
            hy.segments.push(TimedWords { speaker: label, start: t, end: t + len, words: heard });
            t += len + rng.random_range(-0.3..0.5);
        }
        (re, hy)
    }

    #[test]
    fn heuristic_agrees_with_exact_on_meeting_like_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..200 {
            let k = rng.random_range(1..=4);
            let b = rng.random_range(1..=10);
            let (re, hy) = meeting_case(&mut rng, k, b);
            let heur = di_cpwer(&re, &hy, DiMode::Heuristic).unwrap().counts.errors();
            let exact = di_cpwer(&re, &hy, DiMode::Exact).unwrap().counts.errors();
            assert_eq!(heur, exact, "{re:?}\n{hy:?}");
        }
    }

    proptest! {
        #[test]
        fn rates_are_nonnegative_and_zero_iff_perfect(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (re, hy) = random_case(&mut rng, 3, 5, 0.5);
            let cp = cpwer(&re, &hy);
            prop_assert!(cp.rate() >= 0.0);
            prop_assert_eq!(cp.rate() == 0.0, brute_cpwer(&re, &hy) == 0);
        }
    }
}
