//! Windowed convergence monitoring of the alternating pseudo-label /
//! parameter updates. This is a reported diagnostic, not an assertion.

use serde::Serialize;

use super::trace::MetricsTrace;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmReport {
    pub window: usize,
    /// Means of `total_loss` over consecutive non-overlapping windows; a
    /// trailing partial window is dropped.
    pub window_means: Vec<f64>,
    /// Every window mean is <= the previous one.
    pub monotone: bool,
    /// First epoch of the last window whose mean rose.
    pub last_increase: Option<usize>,
    /// Last epoch whose raw total loss exceeded the previous epoch's.
    pub last_epoch_increase: Option<usize>,
    pub h_con_trajectory: Vec<Option<f64>>,
    pub r_trajectory: Vec<Option<f64>>,
}

pub fn em_diagnostics(trace: &MetricsTrace, window: usize) -> EmReport {
    let window = window.max(1);
    let losses = trace.total_losses();
    let window_means: Vec<f64> = losses
        .chunks_exact(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect();
    let last_increase = window_means
        .windows(2)
        .enumerate()
        .rev()
        .find(|(_, w)| w[1] > w[0])
        .map(|(i, _)| trace.records[(i + 1) * window].epoch);
    let last_epoch_increase = losses
        .windows(2)
        .enumerate()
        .rev()
        .find(|(_, w)| w[1] > w[0])
        .map(|(i, _)| trace.records[i + 1].epoch);
    EmReport {
        window,
        monotone: last_increase.is_none(),
        window_means,
        last_increase,
        last_epoch_increase,
        h_con_trajectory: trace.records.iter().map(|r| r.mean_h_con).collect(),
        r_trajectory: trace.records.iter().map(|r| r.mean_r).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::trace::EpochRecord;

    fn trace(losses: &[f64]) -> MetricsTrace {
        let mut t = MetricsTrace::default();
        for (epoch, &l) in losses.iter().enumerate() {
            t.push(EpochRecord {
                epoch,
                l_hisnce: l,
                l_hisst: 0.0,
                total_loss: l,
                target_accuracy: None,
                mean_h_con: Some(0.4),
                mean_r: Some(0.6),
                selected_fraction: None,
                lr: 0.0,
            });
        }
        t
    }

    #[test]
    fn strictly_decreasing() {
        let r = em_diagnostics(&trace(&[9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0]), 3);
        assert!(r.monotone);
        assert_eq!(r.last_increase, None);
        assert_eq!(r.last_epoch_increase, None);
        assert_eq!(r.window_means, vec![8.0, 5.0]);
    }

    #[test]
    fn spike_inside_window_is_tolerated() {
        let r = em_diagnostics(&trace(&[5.0, 6.0, 4.0, 3.0, 3.5, 2.0]), 3);
        assert!(r.monotone);
        assert_eq!(r.last_epoch_increase, Some(4));
    }

    #[test]
    fn rising_window_is_reported() {
        let r = em_diagnostics(&trace(&[3.0, 3.0, 3.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0]), 3);
        assert!(!r.monotone);
        assert_eq!(r.last_increase, Some(6));
        assert_eq!(r.h_con_trajectory.len(), 9);
    }
}
