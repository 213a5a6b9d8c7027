//! Kernel-weighted hazards, the leave-one-out negative log likelihood, the
//! pairwise ranking loss, and their exact gradients with respect to the
//! embeddings.
//!
//! Hazard tensors are laid out `rows x L x m`; CIF tensors `rows x m x (L+1)`
//! with a leading zero column for `t_0`.

use rayon::prelude::*;

use crate::embedding::squared_distance;
use crate::scalar::Scalar;
use crate::survival::TimeLabel;

/// Lower clamp applied to hazards inside logarithms.
pub const PSI_FLOOR: f64 = 1e-12;

/// Kernel-weighted discrete hazards `psi_{delta,l}` for a set of query rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardTensor<T> {
    rows: usize,
    num_bins: usize,
    num_events: usize,
    psi: Vec<T>,
    den: Vec<T>,
}

impl<T: Scalar> HazardTensor<T> {
    /// Hazards from explicit values (`rows x L x m`) and denominators (`rows x L`).
    pub fn from_parts(
        rows: usize,
        num_bins: usize,
        num_events: usize,
        psi: Vec<T>,
        den: Vec<T>,
    ) -> Self {
        assert_eq!(psi.len(), rows * num_bins * num_events);
        assert_eq!(den.len(), rows * num_bins);
        Self {
            rows,
            num_bins,
            num_events,
            psi,
            den,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_events(&self) -> usize {
        self.num_events
    }

    /// `psi` for row `i`, bin `l` in `1..=L`, event `delta` in `1..=m`.
    pub fn psi(&self, i: usize, l: usize, delta: usize) -> T {
        self.psi[(i * self.num_bins + l - 1) * self.num_events + delta - 1]
    }

    /// Weighted at-risk mass (denominator) for row `i`, bin `l`.
    pub fn at_risk(&self, i: usize, l: usize) -> T {
        self.den[i * self.num_bins + l - 1]
    }

    /// True where the denominator vanished and the hazard was set to zero.
    pub fn is_degenerate(&self, i: usize, l: usize) -> bool {
        !(self.at_risk(i, l) > T::zero())
    }

    fn row_psi(&self, i: usize) -> &[T] {
        let w = self.num_bins * self.num_events;
        &self.psi[i * w..(i + 1) * w]
    }
}

/// Full pairwise kernel matrix `exp(-||e_i - e_j||^2)` of `rows x dim` embeddings.
pub fn pairwise_kernel<T: Scalar>(emb: &[T], dim: usize) -> Vec<T> {
    let rows = emb.len() / dim.max(1);
    let mut k = vec![T::zero(); rows * rows];
    k.par_chunks_mut(rows.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            let ei = &emb[i * dim..(i + 1) * dim];
            for (j, kij) in row.iter_mut().enumerate() {
                *kij = (-squared_distance(ei, &emb[j * dim..(j + 1) * dim])).exp();
            }
        });
    k
}

/// Hazard numerators/denominators for one query from `(reference index, weight)` pairs.
fn accumulate_row<T: Scalar>(
    weights: impl Iterator<Item = (usize, T)>,
    labels: &[TimeLabel],
    num_bins: usize,
    num_events: usize,
    psi_out: &mut [T],
    den_out: &mut [T],
) {
    let mut mass = vec![T::zero(); num_bins + 1];
    psi_out.iter_mut().for_each(|v| *v = T::zero());
    for (j, w) in weights {
        let lab = labels[j];
        mass[lab.kappa] += w;
        if lab.event > 0 && lab.kappa > 0 {
            psi_out[(lab.kappa - 1) * num_events + lab.event - 1] += w;
        }
    }
    let mut running = T::zero();
    for l in (1..=num_bins).rev() {
        running += mass[l];
        den_out[l - 1] = running;
        let row = &mut psi_out[(l - 1) * num_events..l * num_events];
        if running > T::zero() {
            row.iter_mut().for_each(|v| *v /= running);
        } else {
            row.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// Leave-one-out hazards from a square kernel matrix whose diagonal is ignored.
///
/// `psi^{-i}_{delta,l} = sum_{j != i} 1{event_j = delta, kappa_j = l} K_ij /
/// sum_{j != i} 1{kappa_j >= l} K_ij`; a zero denominator yields a zero hazard
/// and is reported by [`HazardTensor::is_degenerate`].
pub fn loo_hazards_from_kernel<T: Scalar>(
    kmat: &[T],
    labels: &[TimeLabel],
    num_bins: usize,
    num_events: usize,
) -> HazardTensor<T> {
    let rows = labels.len();
    let width = num_bins * num_events;
    let mut psi = vec![T::zero(); rows * width];
    let mut den = vec![T::zero(); rows * num_bins];
    psi.par_chunks_mut(width.max(1))
        .zip(den.par_chunks_mut(num_bins.max(1)))
        .enumerate()
        .for_each(|(i, (p, d))| {
            let row = &kmat[i * rows..(i + 1) * rows];
            let weights = row.iter().copied().enumerate().filter(|&(j, _)| j != i);
            accumulate_row(weights, labels, num_bins, num_events, p, d);
        });
    HazardTensor {
        rows,
        num_bins,
        num_events,
        psi,
        den,
    }
}

/// Leave-one-out hazards of a minibatch of embeddings (`rows x dim`).
pub fn loo_hazards<T: Scalar>(
    emb: &[T],
    dim: usize,
    labels: &[TimeLabel],
    num_bins: usize,
    num_events: usize,
) -> HazardTensor<T> {
    loo_hazards_from_kernel(&pairwise_kernel(emb, dim), labels, num_bins, num_events)
}

/// Hazards of query embeddings against a fixed labelled reference set (no
/// exclusion). This is the estimator used at inference time with every
/// reference point as its own cluster and no distance cutoff.
pub fn reference_hazards<T: Scalar>(
    query: &[T],
    reference: &[T],
    dim: usize,
    ref_labels: &[TimeLabel],
    num_bins: usize,
    num_events: usize,
) -> HazardTensor<T> {
    let rows = query.len() / dim.max(1);
    let width = num_bins * num_events;
    let mut psi = vec![T::zero(); rows * width];
    let mut den = vec![T::zero(); rows * num_bins];
    psi.par_chunks_mut(width.max(1))
        .zip(den.par_chunks_mut(num_bins.max(1)))
        .enumerate()
        .for_each(|(i, (p, d))| {
            let qi = &query[i * dim..(i + 1) * dim];
            let weights = (0..ref_labels.len()).map(|j| {
                (
                    j,
                    (-squared_distance(qi, &reference[j * dim..(j + 1) * dim])).exp(),
                )
            });
            accumulate_row(weights, ref_labels, num_bins, num_events, p, d);
        });
    HazardTensor {
        rows,
        num_bins,
        num_events,
        psi,
        den,
    }
}

/// `-(1/n) sum_i sum_delta [1{event_i = delta} log psi_{delta,kappa_i} - sum_{l <= kappa_i} psi_{delta,l}]`,
/// with the hazard inside the logarithm clamped to `[PSI_FLOOR, 1]`.
pub fn loss_nll<T: Scalar>(hazards: &HazardTensor<T>, labels: &[TimeLabel]) -> T {
    let floor = T::of(PSI_FLOOR);
    let mut total = T::zero();
    for (i, lab) in labels.iter().enumerate() {
        let mut term = T::zero();
        if lab.event > 0 && lab.kappa > 0 {
            term += hazards
                .psi(i, lab.kappa, lab.event)
                .max(floor)
                .min(T::one())
                .ln();
        }
        let row = hazards.row_psi(i);
        let upto = lab.kappa.min(hazards.num_bins) * hazards.num_events;
        term -= row[..upto].iter().copied().sum::<T>();
        total += term;
    }
    -total / T::of_usize(labels.len().max(1))
}

/// Cumulative incidence curves `F_delta(t_l)` implied by each row's hazards,
/// with the matching survival values.
#[derive(Debug, Clone, PartialEq)]
pub struct CifTensor<T> {
    rows: usize,
    num_bins: usize,
    num_events: usize,
    cif: Vec<T>,
    surv: Vec<T>,
}

impl<T: Scalar> CifTensor<T> {
    /// `F_delta(t_l)` for row `i`, `delta` in `1..=m`, `l` in `0..=L`.
    pub fn cif(&self, i: usize, delta: usize, l: usize) -> T {
        self.cif[(i * self.num_events + delta - 1) * (self.num_bins + 1) + l]
    }

    /// `S(t_l)` for row `i`, `l` in `0..=L`.
    pub fn survival(&self, i: usize, l: usize) -> T {
        self.surv[i * (self.num_bins + 1) + l]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_events(&self) -> usize {
        self.num_events
    }

    /// Builds a tensor directly from per-row CIF values (`rows x m x (L+1)`).
    pub fn from_values(rows: usize, num_events: usize, num_bins: usize, cif: Vec<T>) -> Self {
        assert_eq!(cif.len(), rows * num_events * (num_bins + 1));
        let mut surv = vec![T::one(); rows * (num_bins + 1)];
        for i in 0..rows {
            for l in 0..=num_bins {
                let total: T = (1..=num_events)
                    .map(|d| cif[(i * num_events + d - 1) * (num_bins + 1) + l])
                    .sum();
                surv[i * (num_bins + 1) + l] = T::one() - total;
            }
        }
        Self {
            rows,
            num_bins,
            num_events,
            cif,
            surv,
        }
    }
}

/// Aalen-Johansen recursion applied row by row to a hazard tensor.
pub fn cifs_from_hazards<T: Scalar>(hazards: &HazardTensor<T>) -> CifTensor<T> {
    let (rows, nb, m) = (hazards.rows, hazards.num_bins, hazards.num_events);
    let mut cif = vec![T::zero(); rows * m * (nb + 1)];
    let mut surv = vec![T::zero(); rows * (nb + 1)];
    cif.par_chunks_mut((m * (nb + 1)).max(1))
        .zip(surv.par_chunks_mut(nb + 1))
        .enumerate()
        .for_each(|(i, (f, s))| {
            let psi = hazards.row_psi(i);
            s[0] = T::one();
            for l in 1..=nb {
                let h = &psi[(l - 1) * m..l * m];
                let mut total = T::zero();
                for (d, &hd) in h.iter().enumerate() {
                    f[d * (nb + 1) + l] = f[d * (nb + 1) + l - 1] + hd * s[l - 1];
                    total += hd;
                }
                s[l] = s[l - 1] * (T::one() - total);
            }
        });
    CifTensor {
        rows,
        num_bins: nb,
        num_events: m,
        cif,
        surv,
    }
}

/// Whether subject `i` experienced an event strictly before subject `j`'s
/// observed time, judged on discretized labels. A censored `j` in the same
/// bin counts, since censored times map to the bin preceding their raw time.
#[inline]
pub fn comparable(i: TimeLabel, j: TimeLabel) -> bool {
    i.event > 0 && (i.kappa < j.kappa || (i.kappa == j.kappa && j.event == 0))
}

/// `(1/n^2) sum_delta sum_i sum_j 1{event_i = delta, Y_i < Y_j} exp((F_delta(Y_i|X_j) - F_delta(Y_i|X_i)) / sigma)`.
pub fn loss_ranking<T: Scalar>(cifs: &CifTensor<T>, labels: &[TimeLabel], sigma: T) -> T {
    let n = labels.len();
    let mut total = T::zero();
    for (i, &li) in labels.iter().enumerate() {
        if li.event == 0 {
            continue;
        }
        let own = cifs.cif(i, li.event, li.kappa);
        for (j, &lj) in labels.iter().enumerate() {
            if comparable(li, lj) {
                total += ((cifs.cif(j, li.event, li.kappa) - own) / sigma).exp();
            }
        }
    }
    total / T::of_usize(n * n).max(T::one())
}

/// Convex combination `alpha * nll + (1 - alpha) * ranking`.
pub fn total_loss<T: Scalar>(alpha: T, nll: T, ranking: T) -> T {
    alpha * nll + (T::one() - alpha) * ranking
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub nll: T,
    pub ranking: T,
}

/// Loss of a minibatch and its gradient with respect to the embeddings.
///
/// Hazards are leave-one-out within the batch; the ranking term uses each
/// subject's own leave-one-out CIF. The ranking term is skipped entirely
/// when `alpha == 1`.
pub fn batch_loss_and_grad<T: Scalar>(
    emb: &[T],
    dim: usize,
    labels: &[TimeLabel],
    num_bins: usize,
    num_events: usize,
    alpha: T,
    sigma: T,
) -> (LossBreakdown<T>, Vec<T>) {
    let b = labels.len();
    let kmat = pairwise_kernel(emb, dim);
    let hz = loo_hazards_from_kernel(&kmat, labels, num_bins, num_events);
    let width = num_bins * num_events;
    let nll = loss_nll(&hz, labels);

    // d loss / d psi
    let mut gpsi = vec![T::zero(); b * width];
    if alpha > T::zero() {
        nll_hazard_grad(&hz, labels, alpha, &mut gpsi);
    }

    let mut ranking = T::zero();
    if alpha < T::one() {
        ranking = ranking_loss_and_hazard_grad(&hz, labels, sigma, T::one() - alpha, &mut gpsi);
    }

    let grad = hazard_grad_to_embedding(emb, dim, &kmat, &hz, labels, &gpsi);
    let total = total_loss(alpha, nll, ranking);
    (
        LossBreakdown {
            total,
            nll,
            ranking,
        },
        grad,
    )
}

/// Adds `weight * d loss_nll / d psi` into `gpsi` (`rows x L x m`).
pub fn nll_hazard_grad<T: Scalar>(
    hz: &HazardTensor<T>,
    labels: &[TimeLabel],
    weight: T,
    gpsi: &mut [T],
) {
    let (nb, m) = (hz.num_bins, hz.num_events);
    let scale = weight / T::of_usize(labels.len().max(1));
    let floor = T::of(PSI_FLOOR);
    gpsi.par_chunks_mut((nb * m).max(1))
        .enumerate()
        .for_each(|(i, g)| {
            let lab = labels[i];
            let upto = lab.kappa.min(nb) * m;
            g[..upto].iter_mut().for_each(|v| *v += scale);
            if lab.event > 0 && lab.kappa > 0 {
                let psi = hz.psi(i, lab.kappa, lab.event);
                if psi >= floor && psi <= T::one() {
                    g[(lab.kappa - 1) * m + lab.event - 1] -= scale / psi;
                }
            }
        });
}

/// Ranking loss of the CIFs implied by `hz`; adds `weight * d ranking / d psi`
/// into `gpsi` (`rows x L x m`).
pub fn ranking_loss_and_hazard_grad<T: Scalar>(
    hz: &HazardTensor<T>,
    labels: &[TimeLabel],
    sigma: T,
    weight: T,
    gpsi: &mut [T],
) -> T {
    let (b, nb, m) = (hz.rows, hz.num_bins, hz.num_events);
    let cifs = cifs_from_hazards(hz);
    let ranking = loss_ranking(&cifs, labels, sigma);
    let scale = weight / (T::of_usize(b * b) * sigma);
    let gcif = ranking_cif_grad(&cifs, labels, sigma, scale);
    let stride = m * (nb + 1);
    gpsi.par_chunks_mut((nb * m).max(1))
        .enumerate()
        .for_each(|(j, g)| {
            aj_backward(hz, &cifs, j, &gcif[j * stride..(j + 1) * stride], g);
        });
    ranking
}

/// `d loss / d F_delta(t_l)` for every row, scaled by `scale`.
fn ranking_cif_grad<T: Scalar>(
    cifs: &CifTensor<T>,
    labels: &[TimeLabel],
    sigma: T,
    scale: T,
) -> Vec<T> {
    let n = labels.len();
    let (m, nb) = (cifs.num_events, cifs.num_bins);
    // v[i][j] = Xi_{delta_i, i, j} for comparable pairs, else 0
    let mut v = vec![T::zero(); n * n];
    v.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        let li = labels[i];
        if li.event == 0 {
            return;
        }
        let own = cifs.cif(i, li.event, li.kappa);
        for (j, vij) in row.iter_mut().enumerate() {
            if comparable(li, labels[j]) {
                *vij = ((cifs.cif(j, li.event, li.kappa) - own) / sigma).exp();
            }
        }
    });
    let mut g = vec![T::zero(); n * m * (nb + 1)];
    g.par_chunks_mut((m * (nb + 1)).max(1))
        .enumerate()
        .for_each(|(r, gr)| {
            // as the "other" subject j = r in pairs (i, r)
            for (i, li) in labels.iter().enumerate() {
                let vir = v[i * n + r];
                if vir != T::zero() {
                    gr[(li.event - 1) * (nb + 1) + li.kappa] += scale * vir;
                }
            }
            // as the anchor subject i = r
            let lr = labels[r];
            if lr.event > 0 {
                let s: T = v[r * n..(r + 1) * n].iter().copied().sum();
                gr[(lr.event - 1) * (nb + 1) + lr.kappa] -= scale * s;
            }
        });
    g
}

/// Backpropagates `d loss / d F` of one row through the Aalen-Johansen
/// recursion, adding into that row's `d loss / d psi`.
fn aj_backward<T: Scalar>(
    hz: &HazardTensor<T>,
    cifs: &CifTensor<T>,
    row: usize,
    gcif: &[T],
    gpsi: &mut [T],
) {
    let (nb, m) = (hz.num_bins, hz.num_events);
    let psi = hz.row_psi(row);
    let mut carry = vec![T::zero(); m];
    let mut gs_next = T::zero();
    for l in (1..=nb).rev() {
        let s_prev = cifs.survival(row, l - 1);
        let h = &psi[(l - 1) * m..l * m];
        let total: T = h.iter().copied().sum();
        let mut gs_prev = gs_next * (T::one() - total);
        for d in 0..m {
            carry[d] += gcif[d * (nb + 1) + l];
            gpsi[(l - 1) * m + d] += carry[d] * s_prev - gs_next * s_prev;
            gs_prev += carry[d] * h[d];
        }
        gs_next = gs_prev;
    }
}

/// Chain rule from hazard gradients through the kernel matrix to embeddings.
fn hazard_grad_to_embedding<T: Scalar>(
    emb: &[T],
    dim: usize,
    kmat: &[T],
    hz: &HazardTensor<T>,
    labels: &[TimeLabel],
    gpsi: &[T],
) -> Vec<T> {
    let n = labels.len();
    let (nb, m) = (hz.num_bins, hz.num_events);
    // gk[i][j] = d loss / d K_ij through row i's hazards
    let mut gk = vec![T::zero(); n * n];
    gk.par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            let psi = hz.row_psi(i);
            let g = &gpsi[i * nb * m..(i + 1) * nb * m];
            let mut gnum = vec![T::zero(); nb * m];
            // prefix[l] = sum_{l' <= l} d loss / d den_{l'}
            let mut prefix = vec![T::zero(); nb + 1];
            for l in 1..=nb {
                let den = hz.at_risk(i, l);
                let mut gden = T::zero();
                if den > T::zero() {
                    for d in 0..m {
                        let idx = (l - 1) * m + d;
                        gnum[idx] = g[idx] / den;
                        gden -= g[idx] * psi[idx] / den;
                    }
                }
                prefix[l] = prefix[l - 1] + gden;
            }
            for (j, gij) in row.iter_mut().enumerate() {
                if j == i {
                    continue;
                }
                let lab = labels[j];
                let mut v = prefix[lab.kappa.min(nb)];
                if lab.event > 0 && lab.kappa > 0 {
                    v += gnum[(lab.kappa - 1) * m + lab.event - 1];
                }
                *gij = v;
            }
        });
    let two = T::of(2.0);
    let mut grad = vec![T::zero(); n * dim];
    grad.par_chunks_mut(dim.max(1))
        .enumerate()
        .for_each(|(i, gi)| {
            let ei = &emb[i * dim..(i + 1) * dim];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let coeff = (gk[i * n + j] + gk[j * n + i]) * kmat[i * n + j];
                if coeff == T::zero() {
                    continue;
                }
                let ej = &emb[j * dim..(j + 1) * dim];
                for k in 0..dim {
                    gi[k] -= two * coeff * (ei[k] - ej[k]);
                }
            }
        });
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lab(kappa: usize, event: usize) -> TimeLabel {
        TimeLabel { kappa, event }
    }

    #[test]
    fn identical_pair_gives_unit_hazard() {
        let emb = [0.3, -0.2, 0.3, -0.2];
        let labels = [lab(1, 0), lab(1, 1)];
        let hz = loo_hazards(&emb, 2, &labels, 1, 1);
        assert_abs_diff_eq!(hz.psi(0, 1, 1), 1.0, epsilon = 1e-15);
        // row 1 only sees a censored subject at risk
        assert_eq!(hz.psi(1, 1, 1), 0.0);
    }

    #[test]
    fn constant_embedding_gives_leave_one_out_counts() {
        let labels = [lab(1, 1), lab(2, 2), lab(2, 0), lab(1, 0), lab(2, 1)];
        let emb = vec![0.5; labels.len() * 3];
        let hz = loo_hazards(&emb, 3, &labels, 2, 2);
        for i in 0..labels.len() {
            for l in 1..=2 {
                let others: Vec<_> = labels
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &x)| x)
                    .collect();
                let n = others.iter().filter(|x| x.kappa >= l).count() as f64;
                for d in 1..=2 {
                    let c = others
                        .iter()
                        .filter(|x| x.kappa == l && x.event == d)
                        .count() as f64;
                    let want = if n > 0.0 { c / n } else { 0.0 };
                    assert_abs_diff_eq!(hz.psi(i, l, d), want, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn censored_before_first_time_is_degenerate() {
        let labels = [lab(1, 1), lab(0, 0)];
        let hz = loo_hazards(&[0.0f64, 1.0], 1, &labels, 1, 1);
        assert!(hz.is_degenerate(0, 1));
        assert_eq!(hz.psi(0, 1, 1), 0.0);
        // the event term is clamped, not -inf
        let loss = loss_nll(&hz, &labels);
        assert!(loss.is_finite());
        assert_abs_diff_eq!(loss, -(PSI_FLOOR.ln()) / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn two_subject_nll_by_hand() {
        // subject 0: event 1 at bin 2; subject 1: censored at bin 1; K_01 = e^-1
        let labels = [lab(2, 1), lab(1, 0)];
        let emb = [0.0, 1.0];
        let hz = loo_hazards(&emb, 1, &labels, 2, 1);
        // row 0 sees only subject 1: bin 1 has hazard 0/K, bin 2 has no mass
        assert_eq!(hz.psi(0, 1, 1), 0.0);
        assert!(hz.is_degenerate(0, 2));
        // row 1 sees only subject 0: bin 1 hazard 0 / K = 0
        assert_eq!(hz.psi(1, 1, 1), 0.0);
        let want = -(PSI_FLOOR.ln() - 0.0 + (0.0 - 0.0)) / 2.0;
        assert_abs_diff_eq!(loss_nll(&hz, &labels), want, epsilon = 1e-12);

        // three subjects, non-degenerate: evaluate the formula directly
        let labels = [lab(1, 1), lab(2, 1), lab(2, 0)];
        let emb = [0.0, 0.5, 1.5];
        let k = |a: f64, b: f64| (-(a - b) * (a - b)).exp();
        let hz = loo_hazards(&emb, 1, &labels, 2, 1);
        let psi0_1 = 0.0 / (k(0.0, 0.5) + k(0.0, 1.5));
        let psi1_1 = k(0.5, 0.0) / (k(0.5, 0.0) + k(0.5, 1.5));
        let psi1_2 = 0.0 / k(0.5, 1.5);
        let psi2_1 = k(1.5, 0.0) / (k(1.5, 0.0) + k(1.5, 0.5));
        let psi2_2 = k(1.5, 0.5) / k(1.5, 0.5);
        let ll = psi0_1.max(PSI_FLOOR).ln() - psi0_1
            + (psi1_2.max(PSI_FLOOR).ln() - psi1_1 - psi1_2)
            - (psi2_1 + psi2_2);
        assert_abs_diff_eq!(loss_nll(&hz, &labels), -ll / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn nll_invariant_to_kernel_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 9;
        let labels: Vec<_> = (0..n)
            .map(|_| lab(rng.random_range(0..=3), rng.random_range(0..=2)))
            .collect();
        let kmat: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.05..1.0)).collect();
        let scaled: Vec<f64> = kmat.iter().map(|v| v * 3.7).collect();
        let a = loo_hazards_from_kernel(&kmat, &labels, 3, 2);
        let b = loo_hazards_from_kernel(&scaled, &labels, 3, 2);
        assert_abs_diff_eq!(
            loss_nll(&a, &labels),
            loss_nll(&b, &labels),
            epsilon = 1e-12
        );
    }

    #[test]
    fn ranking_single_pair() {
        let labels = [lab(1, 1), lab(2, 0)];
        let cifs = CifTensor::from_values(2, 1, 2, vec![0.0, 0.4, 0.6, 0.0, 0.4, 0.6]);
        assert_abs_diff_eq!(loss_ranking(&cifs, &labels, 0.5), 0.25, epsilon = 1e-15);
        let tied = [lab(1, 1), lab(1, 1)];
        assert_eq!(loss_ranking(&cifs, &tied, 0.5), 0.0);
        // widening the gap in the right direction shrinks the loss
        let mut last = f64::INFINITY;
        for gap in [0.0, 0.1, 0.2, 0.4] {
            let c = CifTensor::from_values(2, 1, 2, vec![0.0, 0.5, 0.6, 0.0, 0.5 - gap, 0.6]);
            let v = loss_ranking(&c, &labels, 0.1);
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn loss_mixing() {
        assert_eq!(total_loss(1.0, 2.0, 4.0), 2.0);
        assert_eq!(total_loss(0.0, 2.0, 4.0), 4.0);
        assert_eq!(total_loss(0.5, 2.0, 4.0), 3.0);
    }

    pub(crate) fn fd_check(seed: u64, alpha: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(4..=12);
        let dim = rng.random_range(1..=3);
        let nb = rng.random_range(1..=4);
        let m = rng.random_range(1..=3);
        let labels: Vec<_> = (0..n)
            .map(|_| {
                let e = rng.random_range(0..=m);
                lab(
                    if e > 0 {
                        rng.random_range(1..=nb)
                    } else {
                        rng.random_range(0..=nb)
                    },
                    e,
                )
            })
            .collect();
        let emb: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sigma = 0.5;
        let (_, grad) = batch_loss_and_grad(&emb, dim, &labels, nb, m, alpha, sigma);
        let h = 1e-5;
        for k in 0..emb.len() {
            let mut e = emb.clone();
            e[k] += h;
            let (up, _) = batch_loss_and_grad(&e, dim, &labels, nb, m, alpha, sigma);
            e[k] -= 2.0 * h;
            let (down, _) = batch_loss_and_grad(&e, dim, &labels, nb, m, alpha, sigma);
            let numeric = (up.total - down.total) / (2.0 * h);
            let scale = numeric.abs().max(grad[k].abs()).max(1e-7);
            assert!(
                (numeric - grad[k]).abs() / scale <= 1e-4 || (numeric - grad[k]).abs() < 1e-9,
                "seed {seed} alpha {alpha} coord {k}: numeric {numeric} analytic {}",
                grad[k]
            );
        }
    }

    #[test]
    fn embedding_gradient_matches_finite_differences() {
        for seed in 0..12 {
            for alpha in [0.0, 0.5, 1.0] {
                fd_check(seed, alpha);
            }
        }
    }
}
