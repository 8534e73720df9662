use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counters from one generation run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenStats {
    pub rounds: usize,
    /// Accepted draft length per round, as length → count.
    pub accepted_lengths: BTreeMap<usize, usize>,
    pub tokens_emitted: usize,
    pub wall_time_ns: u64,
    pub target_forward_calls: usize,
    pub draft_forward_calls: usize,
    /// Draft parameters plus the largest per-round tree footprint.
    pub peak_extra_bytes: usize,
}

impl GenStats {
    pub fn record_round(&mut self, accepted: usize) {
        self.rounds += 1;
        *self.accepted_lengths.entry(accepted).or_default() += 1;
    }

    pub fn mean_accepted(&self) -> Result<f64> {
        mean_accepted(self)
    }

    /// Sums counters; wall time adds, peak memory takes the maximum.
    pub fn merge(&mut self, other: &GenStats) {
        self.rounds += other.rounds;
        for (&k, &v) in &other.accepted_lengths {
            *self.accepted_lengths.entry(k).or_default() += v;
        }
        self.tokens_emitted += other.tokens_emitted;
        self.wall_time_ns += other.wall_time_ns;
        self.target_forward_calls += other.target_forward_calls;
        self.draft_forward_calls += other.draft_forward_calls;
        self.peak_extra_bytes = self.peak_extra_bytes.max(other.peak_extra_bytes);
    }

    /// Same run modulo wall-clock time.
    pub fn eq_ignoring_time(&self, other: &GenStats) -> bool {
        GenStats { wall_time_ns: 0, ..self.clone() } == GenStats { wall_time_ns: 0, ..other.clone() }
    }
}

/// Tokens emitted per round.
pub fn mean_accepted(stats: &GenStats) -> Result<f64> {
    if stats.rounds == 0 {
        return Err(Error::EmptyStats);
    }
    Ok(stats.tokens_emitted as f64 / stats.rounds as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(lengths: &[usize], cap: Option<usize>) -> GenStats {
        let mut s = GenStats::default();
        for &l in lengths {
            s.record_round(l);
            s.tokens_emitted += l + 1;
        }
        if let Some(c) = cap {
            s.tokens_emitted = s.tokens_emitted.min(c);
        }
        s
    }

    #[test]
    fn mean_accepted_examples() {
        assert_eq!(mean_accepted(&stats(&[6; 10], None)).unwrap(), 7.0);
        assert_eq!(mean_accepted(&stats(&[0; 4], None)).unwrap(), 1.0);
        assert!(mean_accepted(&stats(&[6; 10], Some(64))).unwrap() < 7.0);
        assert!(matches!(mean_accepted(&GenStats::default()), Err(Error::EmptyStats)));
    }

    #[test]
    fn merge_sums_histograms() {
        let mut a = stats(&[1, 2], None);
        a.peak_extra_bytes = 10;
        let mut b = stats(&[2], None);
        b.peak_extra_bytes = 4;
        a.merge(&b);
        assert_eq!(a.rounds, 3);
        assert_eq!(a.accepted_lengths[&2], 2);
        assert_eq!(a.peak_extra_bytes, 10);
    }
}
