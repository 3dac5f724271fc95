//! Overlapping many-to-one training windows over a shared feature matrix.

use std::ops::Range;
use std::sync::Arc;

use crate::training::Windows;
use crate::{Error, Result};

/// Windows `x(end−τ+1 ..= end)` with target `r(end)`. Features and targets
/// are shared, so a window costs one index.
#[derive(Debug, Clone)]
pub struct WindowSet {
    features: Arc<Vec<Vec<f64>>>,
    targets: Arc<Vec<f64>>,
    tau: usize,
    ends: Vec<usize>,
}

impl WindowSet {
    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn ends(&self) -> &[usize] {
        &self.ends
    }

    /// Keeps every `k`-th window, for cheap subsampled experiments.
    pub fn every(&self, k: usize) -> WindowSet {
        WindowSet {
            ends: self.ends.iter().copied().step_by(k.max(1)).collect(),
            ..self.clone()
        }
    }
}

impl Windows for WindowSet {
    fn len(&self) -> usize {
        self.ends.len()
    }

    fn window(&self, i: usize) -> (&[Vec<f64>], f64) {
        let end = self.ends[i];
        (&self.features[end + 1 - self.tau..=end], self.targets[end])
    }
}

/// Windows lying entirely inside `range`: `(len − τ) / stride + 1` of them.
pub fn make_windows(
    features: Arc<Vec<Vec<f64>>>,
    targets: Arc<Vec<f64>>,
    range: Range<usize>,
    tau: usize,
    stride: usize,
) -> Result<WindowSet> {
    if tau == 0 || stride == 0 {
        return Err(Error::InvalidArgument("tau and stride must be >= 1".into()));
    }
    if range.len() < tau {
        return Err(Error::InvalidArgument(format!(
            "series of {} hours is shorter than tau = {tau}",
            range.len()
        )));
    }
    make_windows_ending_in(
        features,
        targets,
        range.start + tau - 1..range.end,
        tau,
        stride,
    )
}

/// Windows whose last hour lies in `ends`; they may reach back before
/// `ends.start` for history.
pub fn make_windows_ending_in(
    features: Arc<Vec<Vec<f64>>>,
    targets: Arc<Vec<f64>>,
    ends: Range<usize>,
    tau: usize,
    stride: usize,
) -> Result<WindowSet> {
    if tau == 0 || stride == 0 {
        return Err(Error::InvalidArgument("tau and stride must be >= 1".into()));
    }
    if features.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows for {} targets",
            features.len(),
            targets.len()
        )));
    }
    if ends.end > features.len() || ends.start + 1 < tau || ends.is_empty() {
        return Err(Error::Data(format!(
            "windows ending in {ends:?} need {} hours of history within {} rows",
            tau - 1,
            features.len()
        )));
    }
    Ok(WindowSet {
        features,
        targets,
        tau,
        ends: ends.step_by(stride).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize) -> (Arc<Vec<Vec<f64>>>, Arc<Vec<f64>>) {
        (
            Arc::new((0..n).map(|i| vec![i as f64]).collect()),
            Arc::new((0..n).map(|i| i as f64 * 10.0).collect()),
        )
    }

    #[test]
    fn counts() {
        let (f, t) = data(60);
        assert_eq!(
            make_windows(f.clone(), t.clone(), 0..49, 49, 1)
                .unwrap()
                .len(),
            1
        );
        assert_eq!(
            make_windows(f.clone(), t.clone(), 0..52, 49, 1)
                .unwrap()
                .len(),
            4
        );
        assert!(make_windows(f.clone(), t.clone(), 0..48, 49, 1).is_err());
        let (f, t) = data(35064);
        assert_eq!(make_windows(f, t, 0..35064, 49, 1).unwrap().len(), 35016);
    }

    #[test]
    fn contents() {
        let (f, t) = data(60);
        let w = make_windows(f, t, 5..20, 4, 3).unwrap();
        assert_eq!(w.len(), 4);
        let (xs, r) = w.window(1);
        assert_eq!(xs, &[vec![8.0], vec![9.0], vec![10.0], vec![11.0]]);
        assert_eq!(r, 110.0);
    }

    #[test]
    fn history_before_range() {
        let (f, t) = data(60);
        let w = make_windows_ending_in(f.clone(), t.clone(), 10..20, 11, 1).unwrap();
        assert_eq!(w.window(0).0[0], vec![0.0]);
        assert!(make_windows_ending_in(f, t, 5..20, 11, 1).is_err());
    }

    proptest::proptest! {
        #[test]
        fn window_count_formula(len in 1usize..400, tau in 1usize..60) {
            let (f, t) = data(400);
            let w = make_windows(f, t, 0..len, tau, 1);
            if len >= tau {
                proptest::prop_assert_eq!(w.unwrap().len(), len - tau + 1);
            } else {
                proptest::prop_assert!(w.is_err());
            }
        }
    }
}
