use crate::frontend::BinaryDescriptor;

pub const VOCABULARY_SIZE: usize = 1 << 16;

/// Visual word of a descriptor: its first 16 bits.
#[inline]
pub fn quantize(d: &BinaryDescriptor) -> u16 {
    (d.0[0] & 0xFFFF) as u16
}

/// Sparse word histogram, sorted by word id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BowHistogram {
    words: Vec<(u16, u32)>,
}

impl BowHistogram {
    pub fn from_descriptors(descs: &[BinaryDescriptor]) -> Self {
        let mut ids: Vec<u16> = descs.iter().map(quantize).collect();
        ids.sort_unstable();
        let mut words: Vec<(u16, u32)> = Vec::new();
        for w in ids {
            match words.last_mut() {
                Some((last, c)) if *last == w => *c += 1,
                _ => words.push((w, 1)),
            }
        }
        Self { words }
    }

    /// Entries must be sorted by word with positive counts.
    pub fn from_sorted(words: Vec<(u16, u32)>) -> Option<Self> {
        let ok = words.windows(2).all(|w| w[0].0 < w[1].0) && words.iter().all(|w| w.1 > 0);
        ok.then_some(Self { words })
    }

    pub fn entries(&self) -> &[(u16, u32)] {
        &self.words
    }

    pub fn total(&self) -> u64 {
        self.words.iter().map(|w| w.1 as u64).sum()
    }

    pub fn get(&self, word: u16) -> u32 {
        self.words
            .binary_search_by_key(&word, |w| w.0)
            .map(|i| self.words[i].1)
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Document frequencies over a set of histograms.
#[derive(Clone, Debug)]
pub struct DocFrequency {
    counts: Vec<u32>,
    docs: usize,
}

impl Default for DocFrequency {
    fn default() -> Self {
        Self {
            counts: vec![0; VOCABULARY_SIZE],
            docs: 0,
        }
    }
}

impl DocFrequency {
    pub fn add(&mut self, h: &BowHistogram) {
        for &(w, _) in h.entries() {
            self.counts[w as usize] += 1;
        }
        self.docs += 1;
    }

    pub fn remove(&mut self, h: &BowHistogram) {
        for &(w, _) in h.entries() {
            self.counts[w as usize] -= 1;
        }
        self.docs -= 1;
    }

    pub fn df(&self, word: u16) -> u32 {
        self.counts[word as usize]
    }

    pub fn docs(&self) -> usize {
        self.docs
    }
}

fn idf(df: &DocFrequency, n_docs: usize, word: u16) -> f64 {
    // Words unseen in the collection count as seen once.
    let d = (df.df(word).max(1) as f64).min(n_docs as f64);
    (n_docs as f64 / d).ln()
}

/// Cosine of the tf-idf vectors, in `[0, 1]`. Identical histograms score 1
/// even when every idf weight vanishes.
pub fn similarity(a: &BowHistogram, b: &BowHistogram, df: &DocFrequency, n_docs: usize) -> f64 {
    if a == b {
        return if a.is_empty() { 0.0 } else { 1.0 };
    }
    let n_docs = n_docs.max(1);
    let weight = |w: u16, c: u32| c as f64 * idf(df, n_docs, w);
    let norm = |h: &BowHistogram| h.entries().iter().map(|&(w, c)| weight(w, c).powi(2)).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let (ea, eb) = (a.entries(), b.entries());
    let (mut i, mut j) = (0, 0);
    let mut dot = 0.0;
    while i < ea.len() && j < eb.len() {
        match ea[i].0.cmp(&eb[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += weight(ea[i].0, ea[i].1) * weight(eb[j].0, eb[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    (dot / (na * nb)).clamp(0.0, 1.0)
}
