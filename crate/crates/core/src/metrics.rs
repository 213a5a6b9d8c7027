//! Competing-risks evaluation: IPCW Brier score, its integral over a time
//! grid, and time-dependent concordance.

use rayon::prelude::*;

use crate::error::{DkajError, Result};
use crate::scalar::Scalar;
use crate::survival::{CifSet, Cohort, StepCurve};

/// Source of predicted cumulative incidences `F_delta(t | X_i)` for the
/// subjects of an evaluation cohort.
pub trait CifPredictor<T>: Sync {
    fn cif_at(&self, subject: usize, event: usize, t: T) -> T;
}

/// Step-function evaluation of per-subject curves.
impl<T: Scalar> CifPredictor<T> for [CifSet<T>] {
    fn cif_at(&self, subject: usize, event: usize, t: T) -> T {
        self[subject].event(event).eval(t)
    }
}

impl<T: Scalar> CifPredictor<T> for Vec<CifSet<T>> {
    fn cif_at(&self, subject: usize, event: usize, t: T) -> T {
        self[subject].event(event).eval(t)
    }
}

/// Linear interpolation between grid knots of per-subject curves.
pub struct LinearInterpolated<'a, T>(pub &'a [CifSet<T>]);

impl<T: Scalar> CifPredictor<T> for LinearInterpolated<'_, T> {
    fn cif_at(&self, subject: usize, event: usize, t: T) -> T {
        self.0[subject].event(event).eval_linear(t)
    }
}

/// Every subject receives the same curves.
pub struct Constant<'a, T>(pub &'a CifSet<T>);

impl<T: Scalar> CifPredictor<T> for Constant<'_, T> {
    fn cif_at(&self, _subject: usize, event: usize, t: T) -> T {
        self.0.event(event).eval_linear(t)
    }
}

/// Shared evaluation times: quantiles of observed event times from the
/// minimum up to a truncation percentile.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid<T> {
    pub times: Vec<T>,
    pub num_quantiles: usize,
    pub truncate_pct: f64,
}

/// Linear-interpolation quantile of sorted data at level `q` in `[0, 1]`.
fn quantile_sorted<T: Scalar>(sorted: &[T], q: f64) -> T {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::of(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// `k` evenly spaced quantile levels on `[0, pct/100]` of the event times,
/// deduplicated. With `k = 1` the grid is the truncation quantile alone.
pub fn build_eval_grid<T: Scalar>(
    event_times: &[T],
    k: usize,
    truncate_pct: f64,
) -> Result<EvalGrid<T>> {
    if event_times.is_empty() {
        return Err(DkajError::NoEvents);
    }
    if k == 0 || !(0.0..=100.0).contains(&truncate_pct) {
        return Err(DkajError::InvalidConfig(format!(
            "evaluation grid needs k >= 1 and a percentile in [0, 100], got k={k}, pct={truncate_pct}"
        )));
    }
    let mut sorted = event_times.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let top = truncate_pct / 100.0;
    let mut times: Vec<T> = if k == 1 {
        vec![quantile_sorted(&sorted, top)]
    } else {
        (0..k)
            .map(|j| quantile_sorted(&sorted, top * j as f64 / (k - 1) as f64))
            .collect()
    };
    times.dedup();
    Ok(EvalGrid {
        times,
        num_quantiles: k,
        truncate_pct,
    })
}

/// Kaplan-Meier estimate of the censoring distribution: censoring is the
/// "event" and any critical event counts as censoring.
pub fn censoring_survival<T: Scalar>(cohort: &Cohort<T>) -> StepCurve<T> {
    let mut obs: Vec<(T, bool)> = cohort
        .records()
        .iter()
        .map(|r| (r.time, r.is_censored()))
        .collect();
    obs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite times"));
    let n = obs.len();
    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut s = T::one();
    let mut i = 0;
    while i < n {
        let t = obs[i].0;
        let at_risk = n - i;
        let mut censored = 0usize;
        let mut j = i;
        while j < n && obs[j].0 == t {
            censored += usize::from(obs[j].1);
            j += 1;
        }
        if censored > 0 {
            s *= T::one() - T::of_usize(censored) / T::of_usize(at_risk);
            knots.push(t);
            values.push(s);
        }
        i = j;
    }
    StepCurve::new(knots, values, T::one()).expect("sorted unique censoring times")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrierScore<T> {
    pub score: T,
    /// Subjects dropped because a required censoring weight was zero.
    pub excluded: usize,
}

/// IPCW competing-risks Brier score for event `event` at time `t`.
///
/// Subjects with an event by `t` are weighted by `1 / G(Y_i-)` (left limit of
/// the censoring survival `G`), subjects still at risk by `1 / G(t)`, and
/// subjects censored by `t` contribute nothing. The sum is divided by the
/// full cohort size.
pub fn brier_score<T: Scalar, P: CifPredictor<T> + ?Sized>(
    preds: &P,
    cohort: &Cohort<T>,
    event: usize,
    t: T,
    censor: &StepCurve<T>,
) -> BrierScore<T> {
    let g_t = censor.eval(t);
    let mut total = T::zero();
    let mut excluded = 0;
    for (i, r) in cohort.records().iter().enumerate() {
        let f = preds.cif_at(i, event, t);
        let (residual, weight) = if r.time <= t && r.event != 0 {
            let target = if r.event == event {
                T::one()
            } else {
                T::zero()
            };
            (target - f, censor.eval_left(r.time))
        } else if r.time > t {
            (f, g_t)
        } else {
            continue;
        };
        if !(weight > T::zero()) {
            excluded += 1;
            continue;
        }
        total += residual * residual / weight;
    }
    BrierScore {
        score: total / T::of_usize(cohort.len()),
        excluded,
    }
}

/// Trapezoidal integral of a curve sampled at `times`, divided by the span.
pub fn integrated_brier<T: Scalar>(times: &[T], scores: &[T]) -> Result<T> {
    if times.len() < 2 || times.len() != scores.len() {
        return Err(DkajError::DegenerateGrid);
    }
    let span = times[times.len() - 1] - times[0];
    if !(span > T::zero()) {
        return Err(DkajError::DegenerateGrid);
    }
    let half = T::of(0.5);
    let area = times
        .windows(2)
        .zip(scores.windows(2))
        .fold(T::zero(), |acc, (t, s)| {
            acc + (t[1] - t[0]) * (s[0] + s[1]) * half
        });
    Ok(area / span)
}

/// Brier score curve over `grid` and its integral.
pub fn integrated_brier_score<T: Scalar, P: CifPredictor<T> + ?Sized>(
    preds: &P,
    cohort: &Cohort<T>,
    event: usize,
    grid: &[T],
    censor: &StepCurve<T>,
) -> Result<T> {
    let scores: Vec<T> = grid
        .iter()
        .map(|&t| brier_score(preds, cohort, event, t, censor).score)
        .collect();
    integrated_brier(grid, &scores)
}

/// Time-dependent concordance for event `event`, other events treated as
/// censoring.
///
/// Over pairs with `event_i == event` and `Y_i < Y_j` (and `Y_i <= horizon`
/// when given), a pair is concordant when `F(Y_i | X_i) > F(Y_i | X_j)`;
/// prediction ties count one half.
pub fn concordance_td<T: Scalar, P: CifPredictor<T> + ?Sized>(
    preds: &P,
    cohort: &Cohort<T>,
    event: usize,
    horizon: Option<T>,
) -> Result<T> {
    let recs = cohort.records();
    let (twice_concordant, pairs) = (0..recs.len())
        .into_par_iter()
        .map(|i| {
            let ri = &recs[i];
            if ri.event != event || horizon.is_some_and(|h| ri.time > h) {
                return (0u64, 0u64);
            }
            let own = preds.cif_at(i, event, ri.time);
            let mut conc = 0u64;
            let mut pairs = 0u64;
            for (j, rj) in recs.iter().enumerate() {
                if rj.time > ri.time {
                    pairs += 1;
                    let other = preds.cif_at(j, event, ri.time);
                    if own > other {
                        conc += 2;
                    } else if own == other {
                        conc += 1;
                    }
                }
            }
            (conc, pairs)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0u64, 0u64), |a, b| (a.0 + b.0, a.1 + b.1));
    if pairs == 0 {
        return Err(DkajError::NoComparablePairs(event));
    }
    Ok(T::of(twice_concordant as f64 / (2 * pairs) as f64))
}

/// One row of a metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub model: String,
    pub event: usize,
    pub metric: String,
    pub value: f64,
}

/// Per-event `C^td` and IBS for a predictor on the shared grid.
pub fn evaluate_predictor<T: Scalar, P: CifPredictor<T> + ?Sized>(
    model: &str,
    preds: &P,
    cohort: &Cohort<T>,
    grid: &EvalGrid<T>,
) -> Result<Vec<MetricRow>> {
    let censor = censoring_survival(cohort);
    let horizon = grid.times.last().copied();
    let mut rows = Vec::new();
    for event in 1..=cohort.num_events() {
        let ctd = concordance_td(preds, cohort, event, horizon)
            .map(Scalar::as_f64)
            .unwrap_or(f64::NAN);
        let ibs = integrated_brier_score(preds, cohort, event, &grid.times, &censor)?;
        rows.push(MetricRow {
            model: model.to_string(),
            event,
            metric: "ctd".into(),
            value: ctd,
        });
        rows.push(MetricRow {
            model: model.to_string(),
            event,
            metric: "ibs".into(),
            value: ibs.as_f64(),
        });
    }
    Ok(rows)
}
