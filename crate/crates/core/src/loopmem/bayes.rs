/// Hypothesis id standing for "this is a place not in memory".
pub const NEW_PLACE: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopHypothesis {
    pub candidate_id: u64,
    pub posterior: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    /// Mass a hypothesis keeps for itself and its neighbours; the rest moves to NEW_PLACE.
    pub stay: f64,
    /// Share of the kept mass on the candidate itself; each of its two id
    /// neighbours gets half of the remainder.
    pub self_share: f64,
}

impl Default for Transition {
    fn default() -> Self {
        Self {
            stay: 0.9,
            self_share: 0.8,
        }
    }
}

/// Initial belief: certainly a new place.
pub fn initial_belief() -> Vec<LoopHypothesis> {
    vec![LoopHypothesis {
        candidate_id: NEW_PLACE,
        posterior: 1.0,
    }]
}

/// Likelihood of each candidate from its similarity score:
/// `max(score / mean of the nonzero scores, 1)`.
pub fn likelihoods_from_scores(scores: &[(u64, f64)]) -> Vec<(u64, f64)> {
    let nonzero: Vec<f64> = scores.iter().map(|s| s.1).filter(|&s| s > 0.0).collect();
    let mean = if nonzero.is_empty() {
        0.0
    } else {
        nonzero.iter().sum::<f64>() / nonzero.len() as f64
    };
    scores
        .iter()
        .map(|&(id, s)| (id, if mean > 0.0 { (s / mean).max(1.0) } else { 1.0 }))
        .collect()
}

/// One predict/update cycle of the discrete Bayes filter. The returned set
/// holds NEW_PLACE first, then every candidate of `likelihoods` in order.
pub fn update_bayes(
    prev: &[LoopHypothesis],
    likelihoods: &[(u64, f64)],
    transition: &Transition,
) -> Vec<LoopHypothesis> {
    let n = likelihoods.len();
    let index: std::collections::HashMap<u64, usize> =
        likelihoods.iter().enumerate().map(|(i, &(id, _))| (id, i)).collect();
    let mut new_place = 0.0;
    let mut pred = vec![0.0; n];
    let uniform = |mass: f64, pred: &mut [f64], new_place: &mut f64| {
        if n == 0 {
            *new_place += mass;
        } else {
            for p in pred.iter_mut() {
                *p += mass / n as f64;
            }
        }
    };
    for h in prev {
        if h.candidate_id == NEW_PLACE {
            new_place += transition.stay * h.posterior;
            uniform((1.0 - transition.stay) * h.posterior, &mut pred, &mut new_place);
            continue;
        }
        new_place += (1.0 - transition.stay) * h.posterior;
        let keep = transition.stay * h.posterior;
        let side = 0.5 * (1.0 - transition.self_share);
        let id = h.candidate_id;
        let targets = [
            (Some(id), transition.self_share),
            (id.checked_sub(1), side),
            (id.checked_add(1).filter(|&x| x != NEW_PLACE), side),
        ];
        let present: Vec<(usize, f64)> = targets
            .iter()
            .filter_map(|&(t, w)| t.and_then(|t| index.get(&t)).map(|&i| (i, w)))
            .collect();
        let total: f64 = present.iter().map(|p| p.1).sum();
        if total > 0.0 {
            for (i, w) in present {
                pred[i] += keep * w / total;
            }
        } else {
            uniform(keep, &mut pred, &mut new_place);
        }
    }
    let mut out = Vec::with_capacity(n + 1);
    out.push(LoopHypothesis {
        candidate_id: NEW_PLACE,
        posterior: new_place,
    });
    for (i, &(id, l)) in likelihoods.iter().enumerate() {
        out.push(LoopHypothesis {
            candidate_id: id,
            posterior: pred[i] * l.max(0.0),
        });
    }
    let sum: f64 = out.iter().map(|h| h.posterior).sum();
    if sum > 0.0 {
        for h in &mut out {
            h.posterior /= sum;
        }
    } else {
        return initial_belief();
    }
    out
}
