use super::{KdTree, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProgressState {
    Complete,
    Partial,
    Missing,
}

impl ProgressState {
    pub fn name(self) -> &'static str {
        match self {
            ProgressState::Complete => "complete",
            ProgressState::Partial => "partial",
            ProgressState::Missing => "missing",
        }
    }

    /// Overlay color: green, yellow, red.
    pub fn color(self) -> [u8; 3] {
        match self {
            ProgressState::Complete => [0, 200, 0],
            ProgressState::Partial => [230, 200, 0],
            ProgressState::Missing => [220, 0, 0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProgressParams {
    /// Distance within which an element point counts as scanned, meters.
    pub tau: f64,
    pub hi: f64,
    pub lo: f64,
}

impl Default for ProgressParams {
    fn default() -> Self {
        Self {
            tau: 0.05,
            hi: 0.9,
            lo: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElementProgress {
    pub label: String,
    pub coverage: f64,
    pub state: ProgressState,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProgressReport {
    pub elements: Vec<ElementProgress>,
}

impl ProgressReport {
    pub fn get(&self, label: &str) -> Option<&ElementProgress> {
        self.elements.iter().find(|e| e.label == label)
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for e in &self.elements {
            s.push_str(&format!("{}.coverage={:.4}\n{}.state={}\n", e.label, e.coverage, e.label, e.state.name()));
        }
        s
    }
}

/// Fraction of each element's points that have a scanned point within `tau`.
/// The scan must already be aligned to the elements.
pub fn progress_classify(elements: &[(String, PointCloud)], scan: &PointCloud, params: &ProgressParams) -> ProgressReport {
    let tree = KdTree::new(scan.positions());
    let elements = elements
        .iter()
        .map(|(label, cloud)| {
            let covered = if tree.is_empty() {
                0
            } else {
                cloud
                    .points
                    .iter()
                    .filter(|p| tree.nearest(&p.position).is_some_and(|(_, d)| d <= params.tau))
                    .count()
            };
            let coverage = if cloud.is_empty() { 0.0 } else { covered as f64 / cloud.len() as f64 };
            let state = if coverage >= params.hi {
                ProgressState::Complete
            } else if coverage <= params.lo {
                ProgressState::Missing
            } else {
                ProgressState::Partial
            };
            ElementProgress {
                label: label.clone(),
                coverage,
                state,
            }
        })
        .collect();
    ProgressReport { elements }
}
