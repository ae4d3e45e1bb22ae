//! Reconstruction of segment-level correction labels from a token diff.
//!
//! Tokens on a longest-common-subsequence alignment of the flawed and the
//! corrected response are unchanged; everything else is corrected. A
//! replacement shows up as a corrected run on both sides.

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentLabel {
    Unchanged,
    Corrected,
}

impl SegmentLabel {
    pub fn from_flag(flag: u8) -> Option<Self> {
        match flag {
            0 => Some(SegmentLabel::Unchanged),
            1 => Some(SegmentLabel::Corrected),
            _ => None,
        }
    }

    pub fn flag(self) -> u8 {
        match self {
            SegmentLabel::Unchanged => 0,
            SegmentLabel::Corrected => 1,
        }
    }
}

/// Maximal run `[start, end)` sharing one label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub label: SegmentLabel,
}

/// Tokens with per-token labels and their maximal runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentAnnotation<T = TokenId> {
    tokens: Vec<T>,
    labels: Vec<SegmentLabel>,
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SegmentCounts {
    pub unchanged_tokens: usize,
    pub corrected_tokens: usize,
    pub corrected_segments: usize,
}

impl<T> SegmentAnnotation<T> {
    pub fn new(tokens: Vec<T>, labels: Vec<SegmentLabel>) -> Result<Self> {
        if tokens.len() != labels.len() {
            return Err(Error::Domain(format!(
                "{} labels for {} tokens",
                labels.len(),
                tokens.len()
            )));
        }
        let segments = runs(&labels);
        Ok(Self {
            tokens,
            labels,
            segments,
        })
    }

    /// Every token unchanged.
    pub fn unchanged(tokens: Vec<T>) -> Self {
        let labels = vec![SegmentLabel::Unchanged; tokens.len()];
        Self::new(tokens, labels).expect("lengths match")
    }

    pub fn tokens(&self) -> &[T] {
        &self.tokens
    }

    pub fn labels(&self) -> &[SegmentLabel] {
        &self.labels
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn counts(&self) -> SegmentCounts {
        segment_counts(self)
    }
}

fn runs(labels: &[SegmentLabel]) -> Vec<Segment> {
    let mut segments: Vec<Segment> = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        match segments.last_mut() {
            Some(seg) if seg.label == label => seg.end = i + 1,
            _ => segments.push(Segment {
                start: i,
                end: i + 1,
                label,
            }),
        }
    }
    segments
}

pub fn segment_counts<T>(a: &SegmentAnnotation<T>) -> SegmentCounts {
    let corrected_tokens = a
        .labels
        .iter()
        .filter(|&&l| l == SegmentLabel::Corrected)
        .count();
    SegmentCounts {
        unchanged_tokens: a.labels.len() - corrected_tokens,
        corrected_tokens,
        corrected_segments: a
            .segments
            .iter()
            .filter(|s| s.label == SegmentLabel::Corrected)
            .count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    /// Token kept on both sides.
    Equal,
    /// Token present only in the flawed sequence.
    Delete,
    /// Token present only in the corrected sequence.
    Insert,
}

/// Minimal edit script over an LCS alignment. Matches are taken as early as
/// possible; on ties a deletion is emitted before an insertion.
pub fn edit_script<T: PartialEq>(flawed: &[T], corrected: &[T]) -> Vec<EditOp> {
    let (n, m) = (flawed.len(), corrected.len());
    // suffix[i][j] = LCS length of flawed[i..] and corrected[j..]
    let width = m + 1;
    let mut suffix = vec![0usize; (n + 1) * width];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            suffix[i * width + j] = if flawed[i] == corrected[j] {
                suffix[(i + 1) * width + j + 1] + 1
            } else {
                suffix[(i + 1) * width + j].max(suffix[i * width + j + 1])
            };
        }
    }
    let mut ops = Vec::with_capacity(n + m);
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        if i < n && j < m && flawed[i] == corrected[j] {
            ops.push(EditOp::Equal);
            i += 1;
            j += 1;
        } else if j == m || (i < n && suffix[(i + 1) * width + j] >= suffix[i * width + j + 1]) {
            ops.push(EditOp::Delete);
            i += 1;
        } else {
            ops.push(EditOp::Insert);
            j += 1;
        }
    }
    ops
}

/// Labels both sides of a correction.
pub fn diff_segments<T: PartialEq + Clone>(
    flawed: &[T],
    corrected: &[T],
) -> (SegmentAnnotation<T>, SegmentAnnotation<T>) {
    let mut flawed_labels = Vec::with_capacity(flawed.len());
    let mut corrected_labels = Vec::with_capacity(corrected.len());
    for op in edit_script(flawed, corrected) {
        match op {
            EditOp::Equal => {
                flawed_labels.push(SegmentLabel::Unchanged);
                corrected_labels.push(SegmentLabel::Unchanged);
            }
            EditOp::Delete => flawed_labels.push(SegmentLabel::Corrected),
            EditOp::Insert => corrected_labels.push(SegmentLabel::Corrected),
        }
    }
    (
        SegmentAnnotation::new(flawed.to_vec(), flawed_labels).expect("one label per token"),
        SegmentAnnotation::new(corrected.to_vec(), corrected_labels).expect("one label per token"),
    )
}

/// Number of edit hunks: maximal groups of non-equal operations between
/// matched tokens. A replacement counts once.
pub fn count_hunks<T: PartialEq>(flawed: &[T], corrected: &[T]) -> usize {
    let mut hunks = 0;
    let mut in_hunk = false;
    for op in edit_script(flawed, corrected) {
        match op {
            EditOp::Equal => in_hunk = false,
            _ if !in_hunk => {
                hunks += 1;
                in_hunk = true;
            }
            _ => {}
        }
    }
    hunks
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use SegmentLabel::{Corrected as C, Unchanged as U};

    /// LCS length by exhaustive subsequence enumeration.
    fn brute_force_lcs(a: &[&str], b: &[&str]) -> usize {
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let sub: Vec<&str> = (0..a.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| a[i])
                .collect();
            let mut it = b.iter();
            if sub.iter().all(|t| it.any(|x| x == t)) {
                best = best.max(sub.len());
            }
        }
        best
    }

    #[test]
    fn identity_has_no_corrections() {
        let s = [3u32, 1, 4, 1, 5];
        let (f, c) = diff_segments(&s, &s);
        assert!(f.labels().iter().all(|&l| l == U));
        assert_eq!(c.counts().corrected_segments, 0);
        assert_eq!(f.counts().corrected_segments, 0);
    }

    #[test]
    fn single_substitution() {
        let a = ["a", "red", "car"];
        let b = ["a", "blue", "car"];
        assert_eq!(brute_force_lcs(&a, &b), 2);
        let (f, c) = diff_segments(&a, &b);
        assert_eq!(f.labels(), &[U, C, U]);
        assert_eq!(c.labels(), &[U, C, U]);
        assert_eq!(f.counts().corrected_segments, 1);
        assert_eq!(c.counts().corrected_segments, 1);
        assert_eq!(
            f.counts(),
            SegmentCounts {
                unchanged_tokens: 2,
                corrected_tokens: 1,
                corrected_segments: 1
            }
        );
        assert_eq!(count_hunks(&a, &b), 1);
    }

    #[test]
    fn empty_target() {
        let (f, c) = diff_segments(&["x", "y"], &[]);
        assert_eq!(f.labels(), &[C, C]);
        assert!(c.is_empty());
        assert!(c.segments().is_empty());
        assert_eq!(f.segments().len(), 1);
        let (f, c) = diff_segments::<u32>(&[], &[]);
        assert!(f.is_empty() && c.is_empty());
    }

    #[test]
    fn counts_from_labels() {
        let a = SegmentAnnotation::unchanged(vec![1u32; 5]);
        let n = a.counts();
        assert_eq!((n.unchanged_tokens, n.corrected_tokens, n.corrected_segments), (5, 0, 0));
        let a = SegmentAnnotation::new(vec![0u32; 5], vec![U, C, C, U, C]).unwrap();
        let n = a.counts();
        assert_eq!((n.unchanged_tokens, n.corrected_tokens, n.corrected_segments), (2, 3, 2));
        assert_eq!(a.segments().len(), 4);
    }

    #[test]
    fn label_length_mismatch_is_rejected() {
        assert!(SegmentAnnotation::new(vec![1u32, 2], vec![U]).is_err());
    }

    #[test]
    fn leftmost_match_tie_breaking() {
        // "x" could align with either copy; the first one wins.
        let (f, c) = diff_segments(&["x"], &["x", "x"]);
        assert_eq!(f.labels(), &[U]);
        assert_eq!(c.labels(), &[U, C]);
    }

    #[test]
    fn pure_insertion_and_deletion_hunks() {
        let a = [1u32, 2, 3, 4];
        let b = [1u32, 9, 2, 3];
        let (f, c) = diff_segments(&a, &b);
        assert_eq!(f.labels(), &[U, U, U, C]);
        assert_eq!(c.labels(), &[U, C, U, U]);
        assert_eq!(count_hunks(&a, &b), 2);
    }

    fn seq() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(0u8..4, 0..=12)
    }

    proptest! {
        #[test]
        fn segments_partition_tokens(a in seq(), b in seq()) {
            let (f, c) = diff_segments(&a, &b);
            for ann in [&f, &c] {
                let mut pos = 0;
                for (k, s) in ann.segments().iter().enumerate() {
                    prop_assert_eq!(s.start, pos);
                    prop_assert!(s.end > s.start);
                    if k > 0 {
                        prop_assert_ne!(ann.segments()[k - 1].label, s.label);
                    }
                    prop_assert!(ann.labels()[s.start..s.end].iter().all(|&l| l == s.label));
                    pos = s.end;
                }
                prop_assert_eq!(pos, ann.len());
            }
            prop_assert_eq!(f.counts().unchanged_tokens, c.counts().unchanged_tokens);
        }

        #[test]
        fn unchanged_tokens_form_common_subsequence(a in seq(), b in seq()) {
            let (f, c) = diff_segments(&a, &b);
            let keep = |ann: &SegmentAnnotation<u8>| -> Vec<u8> {
                ann.tokens().iter().zip(ann.labels()).filter(|(_, &l)| l == U).map(|(t, _)| *t).collect()
            };
            prop_assert_eq!(keep(&f), keep(&c));
        }

        #[test]
        fn self_diff_is_clean(a in seq()) {
            let (_, c) = diff_segments(&a, &a);
            prop_assert_eq!(c.counts().corrected_segments, 0);
            prop_assert_eq!(count_hunks(&a, &a), 0);
        }
    }
}
