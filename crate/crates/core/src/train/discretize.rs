use crate::error::{DkajError, Result};
use crate::scalar::Scalar;
use crate::survival::{Cohort, EventTimeGrid, PreprocessedCohort, SubjectRecord, TimeLabel};

/// Largest number of time bins used when all observed event times are requested.
pub const MAX_TIME_STEPS: usize = 512;

/// Training time grid, possibly coarsened to quantile bins, with the rule
/// mapping raw observations onto it.
///
/// An uncensored time maps to the first representative time at or after it
/// (the last one when it lies beyond the grid); a censored time maps to the
/// last representative strictly before it, or to index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTimeMap<T> {
    grid: EventTimeGrid<T>,
}

/// Representative times for `k` bins over the observed event times.
///
/// `k = 0` keeps every unique time unless there are more than
/// [`MAX_TIME_STEPS`], in which case it coarsens to that many quantiles.
/// Otherwise the representatives are the quantiles at levels `j/k`,
/// `j = 1..=k`, taken as order statistics (`sorted[ceil(j n / k) - 1]`) and
/// deduplicated, so coinciding event times give fewer bins.
pub fn discretize_times<T: Scalar>(event_times: &[T], k: usize) -> Result<DiscreteTimeMap<T>> {
    if event_times.is_empty() {
        return Err(DkajError::NoEvents);
    }
    let mut sorted = event_times.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite event times"));
    let mut unique = sorted.clone();
    unique.dedup();
    let k = match k {
        0 if unique.len() <= MAX_TIME_STEPS => {
            return DiscreteTimeMap::from_grid(EventTimeGrid::new(unique)?)
        }
        0 => MAX_TIME_STEPS,
        k => k,
    };
    let n = sorted.len();
    let mut reps: Vec<T> = (1..=k)
        .map(|j| {
            let pos = (j * n).div_ceil(k);
            sorted[pos.max(1) - 1]
        })
        .collect();
    reps.dedup();
    DiscreteTimeMap::from_grid(EventTimeGrid::new(reps)?)
}

impl<T: Scalar> DiscreteTimeMap<T> {
    pub fn from_grid(grid: EventTimeGrid<T>) -> Result<Self> {
        Ok(Self { grid })
    }

    /// Bins from the uncensored times of `cohort`.
    pub fn fit(cohort: &Cohort<T>, k: usize) -> Result<Self> {
        let times: Vec<T> = cohort
            .records()
            .iter()
            .filter(|r| !r.is_censored())
            .map(|r| r.time)
            .collect();
        discretize_times(&times, k)
    }

    pub fn grid(&self) -> &EventTimeGrid<T> {
        &self.grid
    }

    pub fn num_bins(&self) -> usize {
        self.grid.len()
    }

    pub fn label(&self, time: T, event: usize) -> TimeLabel {
        let kappa = if event == 0 {
            self.grid.index_before(time)
        } else {
            (self.grid.index_before(time) + 1).min(self.grid.len())
        };
        TimeLabel { kappa, event }
    }

    /// Labels every record and snaps its time to the representative time.
    pub fn preprocess(&self, cohort: &Cohort<T>) -> PreprocessedCohort<T> {
        let mut records = Vec::with_capacity(cohort.len());
        let mut labels = Vec::with_capacity(cohort.len());
        for r in cohort.records() {
            let lab = self.label(r.time, r.event);
            records.push(SubjectRecord::new(
                r.features.clone(),
                self.grid.time(lab.kappa),
                r.event,
            ));
            labels.push(lab);
        }
        PreprocessedCohort {
            cohort: Cohort::new(records, cohort.num_events()).expect("snapped cohort stays valid"),
            labels,
            num_bins: self.grid.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_times_is_identity() {
        let times: Vec<f64> = (1..=10).map(f64::from).collect();
        let map = discretize_times(&times, 0).unwrap();
        assert_eq!(map.grid().times(), times.as_slice());
        for &t in &times {
            assert_eq!(map.grid().time(map.label(t, 1).kappa), t);
        }
    }

    #[test]
    fn two_quantile_bins() {
        let map = discretize_times(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(map.grid().times(), &[2.0, 4.0]);
        assert_eq!(map.label(1.0, 1).kappa, 1);
        assert_eq!(map.label(3.0, 2).kappa, 2);
        assert_eq!(map.label(3.0, 0).kappa, 1);
        assert_eq!(map.label(1.5, 0).kappa, 0);
        assert_eq!(map.label(9.0, 1).kappa, 2);
    }

    #[test]
    fn requesting_more_bins_than_unique_times_dedups() {
        let times: Vec<f64> = (1..=30).map(f64::from).collect();
        assert_eq!(discretize_times(&times, 64).unwrap().num_bins(), 30);
        let tied = vec![1.0, 1.0, 1.0, 1.0, 2.0];
        assert_eq!(
            discretize_times(&tied, 4).unwrap().grid().times(),
            &[1.0, 2.0]
        );
    }

    #[test]
    fn caps_all_times_at_limit() {
        let times: Vec<f64> = (1..=2000).map(f64::from).collect();
        let map = discretize_times(&times, 0).unwrap();
        assert_eq!(map.num_bins(), MAX_TIME_STEPS);
        assert_eq!(map.grid().t_max(), 2000.0);
    }

    #[test]
    fn preprocess_on_full_grid_matches_breslow() {
        let c = crate::survival::test_support::d0();
        let map = DiscreteTimeMap::fit(&c, 0).unwrap();
        let grid = crate::survival::build_event_grid(&c).unwrap();
        assert_eq!(
            map.preprocess(&c),
            crate::survival::breslow_preprocess(&c, &grid)
        );
        assert!(matches!(
            discretize_times::<f64>(&[], 0),
            Err(DkajError::NoEvents)
        ));
    }
}
