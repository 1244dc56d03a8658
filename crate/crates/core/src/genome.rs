use std::fmt;

use crate::dataset::{GenomeLayout, Segment};

const WORD: usize = 64;

/// Packed bit vector over every training patch. Bit `i` set means patch `i`
/// (in layout order) is selected.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct Genome {
    words: Vec<u64>,
    len: usize,
}

impl Genome {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(WORD)],
            len,
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut g = Self {
            words: vec![u64::MAX; len.div_ceil(WORD)],
            len,
        };
        g.clear_tail();
        g
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut g = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                g.set(i, true);
            }
        }
        g
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i % WORD);
        if value {
            self.words[i / WORD] |= mask;
        } else {
            self.words[i / WORD] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / WORD] ^= 1u64 << (i % WORD);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Popcount over `range`, word at a time.
    pub fn count_ones_in(&self, range: std::ops::Range<usize>) -> usize {
        let (start, end) = (range.start, range.end.min(self.len));
        if start >= end {
            return 0;
        }
        let (first, last) = (start / WORD, (end - 1) / WORD);
        let lo_mask = u64::MAX << (start % WORD);
        let hi_mask = u64::MAX >> (WORD - 1 - (end - 1) % WORD);
        if first == last {
            return (self.words[first] & lo_mask & hi_mask).count_ones() as usize;
        }
        let mut n = (self.words[first] & lo_mask).count_ones() as usize;
        n += self.words[first + 1..last]
            .iter()
            .map(|w| w.count_ones() as usize)
            .sum::<usize>();
        n + (self.words[last] & hi_mask).count_ones() as usize
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * WORD + bit)
            })
        })
    }

    pub fn iter_ones_in(&self, range: std::ops::Range<usize>) -> impl Iterator<Item = usize> + '_ {
        range.filter(move |&i| self.get(i))
    }

    /// Copies the bits of `segment` from `other`.
    pub fn copy_segment_from(&mut self, other: &Genome, segment: &Segment) {
        for i in segment.range() {
            self.set(i, other.get(i));
        }
    }

    /// Per-segment popcounts in layout order.
    pub fn segment_counts(&self, layout: &GenomeLayout) -> Vec<usize> {
        layout
            .segments()
            .iter()
            .map(|s| self.count_ones_in(s.range()))
            .collect()
    }

    /// First segment with no set bit, if any.
    pub fn first_uncovered(&self, layout: &GenomeLayout) -> Option<usize> {
        layout
            .segments()
            .iter()
            .position(|s| self.count_ones_in(s.range()) == 0)
    }

    pub fn is_coverage_valid(&self, layout: &GenomeLayout) -> bool {
        self.len == layout.total_patches() && self.first_uncovered(layout).is_none()
    }

    fn clear_tail(&mut self) {
        let rem = self.len % WORD;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

impl fmt::Debug for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits: String = (0..self.len)
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect();
        write!(f, "Genome({bits})")
    }
}
