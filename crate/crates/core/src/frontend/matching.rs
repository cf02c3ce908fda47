use super::brief::BinaryDescriptor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Match {
    /// Index into the first list.
    pub a: usize,
    /// Index into the second list.
    pub b: usize,
    pub distance: u32,
}

fn best_two(d: &BinaryDescriptor, set: &[BinaryDescriptor]) -> Option<(usize, u32, u32)> {
    let mut best = (usize::MAX, u32::MAX);
    let mut second = u32::MAX;
    for (j, e) in set.iter().enumerate() {
        let h = d.hamming(e);
        if h < best.1 {
            second = best.1;
            best = (j, h);
        } else if h < second {
            second = h;
        }
    }
    (best.0 != usize::MAX).then_some((best.0, best.1, second))
}

/// Nearest-neighbour matching with a distance cap, Lowe's ratio test and a
/// mutual-best check. A lone candidate has no second neighbour and passes the
/// ratio test.
pub fn match_descriptors(
    a: &[BinaryDescriptor],
    b: &[BinaryDescriptor],
    max_hamming: u32,
    ratio: f64,
) -> Vec<Match> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let back: Vec<usize> = b
        .iter()
        .map(|d| best_two(d, a).map(|(i, _, _)| i).unwrap_or(usize::MAX))
        .collect();
    let mut out = Vec::new();
    for (i, d) in a.iter().enumerate() {
        let Some((j, best, second)) = best_two(d, b) else { continue };
        if best > max_hamming {
            continue;
        }
        if second != u32::MAX && !((best as f64) < ratio * second as f64) {
            continue;
        }
        if back[j] != i {
            continue;
        }
        out.push(Match { a: i, b: j, distance: best });
    }
    out
}
