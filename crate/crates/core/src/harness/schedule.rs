use super::config::Schedule;

/// Percent of the training universe to annotate next, given the labeled ratio.
pub fn next_step_size(labeled_ratio: f64, schedule: Schedule) -> f64 {
    match schedule {
        Schedule::Fixed(pct) => pct,
        Schedule::Adaptive => {
            if labeled_ratio < 0.15 {
                1.0
            } else if labeled_ratio < 0.25 {
                2.0
            } else if labeled_ratio < 0.40 {
                5.0
            } else {
                10.0
            }
        }
    }
}

/// `min(round(percent · universe), remaining)`, never less than one clip while
/// the pool is non-empty.
pub fn step_budget(percent: f64, universe: usize, remaining: usize) -> usize {
    let clips = (percent / 100.0 * universe as f64).round() as usize;
    clips.max(1).min(remaining)
}

/// Clips annotated per round, seed round included, until the universe is exhausted.
pub fn annotation_rounds(universe: usize, schedule: Schedule) -> Vec<usize> {
    let mut rounds = Vec::new();
    let mut labeled = 0usize;
    while labeled < universe {
        let ratio = labeled as f64 / universe as f64;
        let budget = step_budget(next_step_size(ratio, schedule), universe, universe - labeled);
        labeled += budget;
        rounds.push(budget);
    }
    rounds
}
