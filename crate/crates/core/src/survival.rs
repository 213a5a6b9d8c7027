//! Right-censored competing-risks cohorts and the population-level
//! estimators built on them: Kaplan-Meier, the simplified Aalen-Johansen
//! CIF estimator and the piecewise-constant hazard MLE.
//!
//! Time indices follow one convention throughout the crate: a grid holds
//! event times `t_1 < ... < t_L` with an implicit `t_0 = 0`, and a subject's
//! time index `kappa` lies in `0..=L`, where `0` means "before `t_1`".
//! Event types are numbered `1..=m`; `0` marks censoring.

use crate::error::{DkajError, Result};
use crate::scalar::Scalar;

/// One observation: features, observed time and event indicator (0 = censored).
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord<T> {
    pub features: Vec<T>,
    pub time: T,
    pub event: usize,
}

impl<T: Scalar> SubjectRecord<T> {
    pub fn new(features: Vec<T>, time: T, event: usize) -> Self {
        Self {
            features,
            time,
            event,
        }
    }

    pub fn is_censored(&self) -> bool {
        self.event == 0
    }
}

/// A validated, nonempty set of records sharing feature dimension `p`, with
/// `m >= 1` event types.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort<T> {
    records: Vec<SubjectRecord<T>>,
    num_events: usize,
    num_features: usize,
}

impl<T: Scalar> Cohort<T> {
    pub fn new(records: Vec<SubjectRecord<T>>, num_events: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(DkajError::EmptyCohort);
        }
        if num_events == 0 {
            return Err(DkajError::InvalidConfig(
                "number of event types must be >= 1".into(),
            ));
        }
        let num_features = records[0].features.len();
        for (index, r) in records.iter().enumerate() {
            let reason = if r.features.len() != num_features {
                Some(format!(
                    "expected {num_features} features, got {}",
                    r.features.len()
                ))
            } else if !(r.time.is_finite() && r.time >= T::zero()) {
                Some(format!(
                    "time {} is not a finite nonnegative number",
                    r.time
                ))
            } else if r.event > num_events {
                Some(format!(
                    "event {} exceeds number of event types {num_events}",
                    r.event
                ))
            } else if r.features.iter().any(|v| !v.is_finite()) {
                Some("non-finite feature value".to_string())
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(DkajError::InvalidRecord { index, reason });
            }
        }
        Ok(Self {
            records,
            num_events,
            num_features,
        })
    }

    /// Builds a cohort whose number of event types is the largest observed event code.
    pub fn with_inferred_events(records: Vec<SubjectRecord<T>>) -> Result<Self> {
        let m = records.iter().map(|r| r.event).max().unwrap_or(0).max(1);
        Self::new(records, m)
    }

    pub fn records(&self) -> &[SubjectRecord<T>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_events(&self) -> usize {
        self.num_events
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn times(&self) -> impl Iterator<Item = T> + '_ {
        self.records.iter().map(|r| r.time)
    }

    pub fn events(&self) -> impl Iterator<Item = usize> + '_ {
        self.records.iter().map(|r| r.event)
    }

    /// Cohort restricted to the given record indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Self::new(records, self.num_events)
    }

    /// Feature rows as a flat row-major matrix (`len() x num_features()`).
    pub fn feature_matrix(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len() * self.num_features);
        for r in &self.records {
            out.extend_from_slice(&r.features);
        }
        out
    }
}

/// Strictly increasing, positive event times `t_1 < ... < t_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTimeGrid<T> {
    times: Vec<T>,
}

impl<T: Scalar> EventTimeGrid<T> {
    pub fn new(times: Vec<T>) -> Result<Self> {
        if times.is_empty() {
            return Err(DkajError::InvalidGrid("grid is empty".into()));
        }
        if !(times[0] > T::zero()) {
            return Err(DkajError::InvalidGrid(format!(
                "first time {} is not positive",
                times[0]
            )));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[0] < w[1])) {
            return Err(DkajError::InvalidGrid(format!(
                "times not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self { times })
    }

    /// Number of grid times `L`.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    /// `t_l` for `l` in `0..=L`, with `t_0 = 0`.
    pub fn time(&self, l: usize) -> T {
        if l == 0 {
            T::zero()
        } else {
            self.times[l - 1]
        }
    }

    pub fn t_max(&self) -> T {
        self.times[self.times.len() - 1]
    }

    /// Index `l` with `t_l == t` exactly, if any.
    pub fn exact_index(&self, t: T) -> Option<usize> {
        let i = self.times.partition_point(|&x| x < t);
        (i < self.times.len() && self.times[i] == t).then_some(i + 1)
    }

    /// `#{l : t_l < t}`, the time index of a censored observation at `t`.
    pub fn index_before(&self, t: T) -> usize {
        self.times.partition_point(|&x| x < t)
    }

    /// `#{l : t_l <= t}`.
    pub fn index_at_or_before(&self, t: T) -> usize {
        self.times.partition_point(|&x| x <= t)
    }
}

/// Right-continuous step function with forward-fill beyond the last knot.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCurve<T> {
    knots: Vec<T>,
    values: Vec<T>,
    initial: T,
}

impl<T: Scalar> StepCurve<T> {
    pub fn new(knots: Vec<T>, values: Vec<T>, initial: T) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(DkajError::ShapeMismatch {
                expected: knots.len(),
                got: values.len(),
            });
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(DkajError::InvalidGrid(
                "step curve knots not strictly increasing".into(),
            ));
        }
        Ok(Self {
            knots,
            values,
            initial,
        })
    }

    pub fn constant(value: T) -> Self {
        Self {
            knots: Vec::new(),
            values: Vec::new(),
            initial: value,
        }
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn initial(&self) -> T {
        self.initial
    }

    /// Value of the last knot `<= t`; the initial value before the first knot.
    pub fn eval(&self, t: T) -> T {
        match self.knots.partition_point(|&k| k <= t) {
            0 => self.initial,
            i => self.values[i - 1],
        }
    }

    /// Left limit `lim_{s -> t-} f(s)`.
    pub fn eval_left(&self, t: T) -> T {
        match self.knots.partition_point(|&k| k < t) {
            0 => self.initial,
            i => self.values[i - 1],
        }
    }

    /// Piecewise-linear interpolation through `(0, initial)` and every
    /// `(knot, value)`, held constant after the last knot.
    pub fn eval_linear(&self, t: T) -> T {
        if t <= T::zero() || self.knots.is_empty() {
            return self.initial;
        }
        let i = self.knots.partition_point(|&k| k <= t);
        if i == self.knots.len() {
            return self.values[i - 1];
        }
        let (t0, v0) = if i == 0 {
            (T::zero(), self.initial)
        } else {
            (self.knots[i - 1], self.values[i - 1])
        };
        let (t1, v1) = (self.knots[i], self.values[i]);
        if t1 <= t0 {
            return v1;
        }
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Value at the last knot (or the initial value when there are none).
    pub fn last_value(&self) -> T {
        self.values.last().copied().unwrap_or(self.initial)
    }
}

/// Survival curve plus one cumulative incidence curve per event type, all on
/// the same knots.
#[derive(Debug, Clone, PartialEq)]
pub struct CifSet<T> {
    pub survival: StepCurve<T>,
    pub cif: Vec<StepCurve<T>>,
}

impl<T: Scalar> CifSet<T> {
    pub fn num_events(&self) -> usize {
        self.cif.len()
    }

    /// CIF of event type `event` (1-based).
    pub fn event(&self, event: usize) -> &StepCurve<T> {
        &self.cif[event - 1]
    }

    /// Largest `|S(t) + sum_d F_d(t) - 1|` over the knots.
    pub fn conservation_error(&self) -> T {
        let mut worst = T::zero();
        for (k, &s) in self.survival.values().iter().enumerate() {
            let total = self.cif.iter().fold(s, |acc, c| acc + c.values()[k]);
            worst = worst.max((total - T::one()).abs());
        }
        worst
    }
}

/// Event and at-risk counts on a grid: `d[l][delta]` and `n[l]`.
///
/// Counts are reals so the same table carries integer counts, kernel-weighted
/// counts and fine-tuned pseudo-counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTable<T> {
    num_bins: usize,
    num_events: usize,
    events: Vec<T>,
    at_risk: Vec<T>,
}

/// Discretized outcome of one subject: time index `kappa` in `0..=L` and event code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeLabel {
    pub kappa: usize,
    pub event: usize,
}

impl<T: Scalar> EventTable<T> {
    pub fn zeros(num_bins: usize, num_events: usize) -> Self {
        Self {
            num_bins,
            num_events,
            events: vec![T::zero(); num_bins * num_events],
            at_risk: vec![T::zero(); num_bins],
        }
    }

    /// Builds a table from raw storage: `events` is `L x m` row-major.
    pub fn from_parts(
        num_bins: usize,
        num_events: usize,
        events: Vec<T>,
        at_risk: Vec<T>,
    ) -> Result<Self> {
        if events.len() != num_bins * num_events {
            return Err(DkajError::ShapeMismatch {
                expected: num_bins * num_events,
                got: events.len(),
            });
        }
        if at_risk.len() != num_bins {
            return Err(DkajError::ShapeMismatch {
                expected: num_bins,
                got: at_risk.len(),
            });
        }
        Ok(Self {
            num_bins,
            num_events,
            events,
            at_risk,
        })
    }

    /// Counts (optionally weighted) from discretized labels.
    ///
    /// `d[l][delta]` sums weights of subjects with `kappa == l` and event
    /// `delta`; `n[l]` sums weights of subjects with `kappa >= l`.
    pub fn from_labels(
        labels: &[TimeLabel],
        weights: Option<&[T]>,
        num_bins: usize,
        num_events: usize,
    ) -> Self {
        let mut table = Self::zeros(num_bins, num_events);
        let mut mass = vec![T::zero(); num_bins + 1];
        for (j, lab) in labels.iter().enumerate() {
            let w = weights.map_or(T::one(), |w| w[j]);
            let kappa = lab.kappa.min(num_bins);
            mass[kappa] += w;
            if lab.event > 0 && kappa > 0 {
                table.events[(kappa - 1) * num_events + lab.event - 1] += w;
            }
        }
        let mut running = T::zero();
        for l in (1..=num_bins).rev() {
            running += mass[l];
            table.at_risk[l - 1] = running;
        }
        table
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_events(&self) -> usize {
        self.num_events
    }

    /// `d_{delta,l}` with `l` in `1..=L` and `delta` in `1..=m`.
    pub fn d(&self, l: usize, delta: usize) -> T {
        self.events[(l - 1) * self.num_events + delta - 1]
    }

    /// `n_l` with `l` in `1..=L`.
    pub fn n(&self, l: usize) -> T {
        self.at_risk[l - 1]
    }

    /// Total events of any type at `l`.
    pub fn d_total(&self, l: usize) -> T {
        let row = &self.events[(l - 1) * self.num_events..l * self.num_events];
        row.iter().copied().sum()
    }

    pub fn events_raw(&self) -> &[T] {
        &self.events
    }

    pub fn at_risk_raw(&self) -> &[T] {
        &self.at_risk
    }

    /// `self += weight * other`.
    pub fn add_scaled(&mut self, other: &EventTable<T>, weight: T) {
        debug_assert_eq!(self.num_bins, other.num_bins);
        debug_assert_eq!(self.num_events, other.num_events);
        for (a, &b) in self.events.iter_mut().zip(&other.events) {
            *a += weight * b;
        }
        for (a, &b) in self.at_risk.iter_mut().zip(&other.at_risk) {
            *a += weight * b;
        }
    }

    /// Every entry multiplied by `c`.
    pub fn scaled(&self, c: T) -> Self {
        Self {
            num_bins: self.num_bins,
            num_events: self.num_events,
            events: self.events.iter().map(|&v| v * c).collect(),
            at_risk: self.at_risk.iter().map(|&v| v * c).collect(),
        }
    }
}

/// A cohort whose censored times were snapped to the preceding grid time,
/// together with every subject's time index.
///
/// Snapped times equal grid values exactly, so callers must not perturb them.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedCohort<T> {
    pub cohort: Cohort<T>,
    pub labels: Vec<TimeLabel>,
    pub num_bins: usize,
}

impl<T: Scalar> PreprocessedCohort<T> {
    /// Already on the grid: preprocessing again is the identity.
    pub fn breslow_preprocess(&self) -> Self {
        self.clone()
    }

    pub fn kappas(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().map(|l| l.kappa)
    }
}

/// Sorted, deduplicated times of uncensored records.
pub fn build_event_grid<T: Scalar>(cohort: &Cohort<T>) -> Result<EventTimeGrid<T>> {
    let mut times: Vec<T> = cohort
        .records()
        .iter()
        .filter(|r| !r.is_censored())
        .map(|r| r.time)
        .collect();
    if times.is_empty() {
        return Err(DkajError::NoEvents);
    }
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    times.dedup();
    EventTimeGrid::new(times)
}

/// Moves every censored time back to the latest grid time strictly before it
/// (or 0 when none exists). Uncensored times keep their value and get the
/// index of the last grid time at or before them.
pub fn breslow_preprocess<T: Scalar>(
    cohort: &Cohort<T>,
    grid: &EventTimeGrid<T>,
) -> PreprocessedCohort<T> {
    let mut records = Vec::with_capacity(cohort.len());
    let mut labels = Vec::with_capacity(cohort.len());
    for r in cohort.records() {
        let kappa = if r.is_censored() {
            grid.index_before(r.time)
        } else {
            grid.index_at_or_before(r.time)
        };
        let time = if r.is_censored() {
            grid.time(kappa)
        } else {
            r.time
        };
        records.push(SubjectRecord::new(r.features.clone(), time, r.event));
        labels.push(TimeLabel {
            kappa,
            event: r.event,
        });
    }
    PreprocessedCohort {
        cohort: Cohort {
            records,
            num_events: cohort.num_events(),
            num_features: cohort.num_features(),
        },
        labels,
        num_bins: grid.len(),
    }
}

/// Event counts `d` (L x m) and at-risk counts `n` (L) of a preprocessed cohort.
pub fn risk_event_counts<T: Scalar>(pre: &PreprocessedCohort<T>) -> EventTable<T> {
    EventTable::from_labels(&pre.labels, None, pre.num_bins, pre.cohort.num_events())
}

fn check_risk<T: Scalar>(table: &EventTable<T>) -> Result<()> {
    match (1..=table.num_bins()).find(|&l| !(table.n(l) > T::zero())) {
        Some(l) => Err(DkajError::DegenerateRisk(l)),
        None => Ok(()),
    }
}

/// Kaplan-Meier survival from grouped counts: `S(t) = prod_{t_l <= t} (1 - d_l / n_l)`.
pub fn kaplan_meier<T: Scalar>(
    table: &EventTable<T>,
    grid: &EventTimeGrid<T>,
) -> Result<StepCurve<T>> {
    check_risk(table)?;
    let mut s = T::one();
    let values = (1..=table.num_bins())
        .map(|l| {
            s *= T::one() - table.d_total(l) / table.n(l);
            s
        })
        .collect();
    StepCurve::new(grid.times().to_vec(), values, T::one())
}

/// Simplified Aalen-Johansen estimator; errors on any zero at-risk bin.
pub fn aalen_johansen<T: Scalar>(
    table: &EventTable<T>,
    grid: &EventTimeGrid<T>,
) -> Result<CifSet<T>> {
    check_risk(table)?;
    Ok(product_limit(table, grid))
}

/// Aalen-Johansen recursion where bins with no mass at risk contribute zero
/// hazard. Used for weighted tables, where such trailing bins are reachable.
pub fn product_limit<T: Scalar>(table: &EventTable<T>, grid: &EventTimeGrid<T>) -> CifSet<T> {
    let l_max = table.num_bins();
    let m = table.num_events();
    let mut surv = Vec::with_capacity(l_max);
    let mut cifs = vec![Vec::with_capacity(l_max); m];
    let mut s_prev = T::one();
    let mut acc = vec![T::zero(); m];
    for l in 1..=l_max {
        let n = table.n(l);
        let mut total_hazard = T::zero();
        for delta in 1..=m {
            let h = if n > T::zero() {
                table.d(l, delta) / n
            } else {
                T::zero()
            };
            acc[delta - 1] += h * s_prev;
            total_hazard += h;
        }
        s_prev *= T::one() - total_hazard;
        surv.push(s_prev);
        for (c, &a) in cifs.iter_mut().zip(&acc) {
            c.push(a);
        }
    }
    let knots = grid.times()[..l_max].to_vec();
    CifSet {
        survival: StepCurve {
            knots: knots.clone(),
            values: surv,
            initial: T::one(),
        },
        cif: cifs
            .into_iter()
            .map(|values| StepCurve {
                knots: knots.clone(),
                values,
                initial: T::zero(),
            })
            .collect(),
    }
}

/// Event-specific hazard rates, constant on each `(t_{l-1}, t_l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseHazard<T> {
    pub grid: EventTimeGrid<T>,
    rates: Vec<T>,
    num_events: usize,
}

impl<T: Scalar> PiecewiseHazard<T> {
    /// Rate for event `delta` on interval `l` (both 1-based).
    pub fn rate_on(&self, l: usize, delta: usize) -> T {
        self.rates[(l - 1) * self.num_events + delta - 1]
    }

    /// `lambda_delta(t)`; zero outside `(0, t_L]`.
    pub fn rate(&self, t: T, delta: usize) -> T {
        if t <= T::zero() || t > self.grid.t_max() {
            return T::zero();
        }
        self.rate_on(self.grid.index_before(t) + 1, delta)
    }

    /// `int_0^t lambda_delta(u) du`.
    pub fn cumulative(&self, t: T, delta: usize) -> T {
        let mut total = T::zero();
        for l in 1..=self.grid.len() {
            let (a, b) = (self.grid.time(l - 1), self.grid.time(l));
            if t <= a {
                break;
            }
            total += self.rate_on(l, delta) * (b.min(t) - a);
        }
        total
    }
}

/// Maximum-likelihood piecewise-constant hazard: `d_{delta,l} / ((t_l - t_{l-1}) n_l)`.
pub fn hazard_mle<T: Scalar>(
    table: &EventTable<T>,
    grid: &EventTimeGrid<T>,
) -> Result<PiecewiseHazard<T>> {
    check_risk(table)?;
    let m = table.num_events();
    let mut rates = Vec::with_capacity(table.num_bins() * m);
    for l in 1..=table.num_bins() {
        let width = grid.time(l) - grid.time(l - 1);
        for delta in 1..=m {
            rates.push(table.d(l, delta) / (width * table.n(l)));
        }
    }
    Ok(PiecewiseHazard {
        grid: grid.clone(),
        rates,
        num_events: m,
    })
}

/// Population AJ estimate for a raw cohort: grid, preprocessing, counts, estimator.
pub fn population_aalen_johansen<T: Scalar>(
    cohort: &Cohort<T>,
) -> Result<(EventTimeGrid<T>, CifSet<T>)> {
    let grid = build_event_grid(cohort)?;
    let pre = breslow_preprocess(cohort, &grid);
    let table = risk_event_counts(&pre);
    let cifs = aalen_johansen(&table, &grid)?;
    Ok((grid, cifs))
}
