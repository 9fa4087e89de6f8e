//! Evaluation protocol: relative errors, distance-binned absolute errors,
//! percentile curves, paired Wilcoxon tests with Benjamini-Hochberg
//! adjustment, and the report files derived from them.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to evaluate")]
    Empty,
    #[error("paired samples differ in length ({0} vs {1})")]
    PairLength(usize, usize),
    #[error("p-value {0} outside [0, 1]")]
    BadPValue(f64),
    #[error("methods have misaligned prediction records")]
    Misaligned,
    #[error("method '{0}' has no records")]
    EmptyMethod(String),
}

/// One scored prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub method: String,
    pub bus_id: String,
    pub stop_index: usize,
    /// |dist - p_k| in meters: how far beyond the anchoring stop the
    /// prediction reaches.
    pub prediction_distance: f64,
    /// Observed cumulative travel time from the stop, minutes.
    pub actual: f64,
    /// Predicted cumulative travel time, minutes.
    pub predicted: f64,
}

impl PredictionRecord {
    pub fn abs_error(&self) -> f64 {
        (self.actual - self.predicted).abs()
    }

    pub fn rel_error(&self) -> f64 {
        self.abs_error() / self.actual
    }

    pub fn bin_km(&self) -> usize {
        (self.prediction_distance / 1000.0).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mare {
    pub value: f64,
    pub n_used: usize,
    pub n_rejected: usize,
}

/// Mean absolute relative error `(1/N) sum |T - That| / T`. Records with
/// non-positive actual time are rejected and counted.
pub fn mare(records: &[PredictionRecord]) -> Result<Mare, EvalError> {
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut rejected = 0usize;
    for r in records {
        if r.actual > 0.0 {
            sum += r.rel_error();
            used += 1;
        } else {
            rejected += 1;
        }
    }
    if used == 0 {
        return Err(EvalError::Empty);
    }
    Ok(Mare { value: sum / used as f64, n_used: used, n_rejected: rejected })
}

/// Absolute errors grouped into half-open one-kilometer bins [0,1), [1,2), ...
/// keyed by the bin's lower edge in km.
pub fn bin_by_distance(records: &[PredictionRecord]) -> BTreeMap<usize, Vec<f64>> {
    let mut bins: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        bins.entry(r.bin_km()).or_default().push(r.abs_error());
    }
    bins
}

/// Nearest-rank percentile: the ceil(q n)-th order statistic.
pub fn percentile_nearest_rank(values: &[f64], q: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn percentile95(values: &[f64]) -> f64 {
    percentile_nearest_rank(values, 0.95)
}

/// Two-sided paired Wilcoxon signed-rank test.
///
/// Zero differences are dropped before ranking; ties get average ranks. For
/// n <= 20 the p-value is exact by enumerating all sign assignments, beyond
/// that a normal approximation with continuity correction and tie-aware
/// variance is used. All differences zero gives p = 1.
pub fn wilcoxon_paired(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::PairLength(a.len(), b.len()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Ok(1.0);
    }
    let ranks = average_ranks(&diffs);
    let w_plus: f64 =
        diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| *r).sum();
    let n = diffs.len();
    if n <= 20 {
        Ok(exact_signed_rank_p(&ranks, w_plus))
    } else {
        Ok(approx_signed_rank_p(&ranks, w_plus))
    }
}

fn average_ranks(diffs: &[f64]) -> Vec<f64> {
    let n = diffs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).unwrap());
    let mut ranks = vec![0.0; n];
    let mut s = 0;
    while s < n {
        let mut e = s;
        while e + 1 < n && diffs[idx[e + 1]].abs() == diffs[idx[s]].abs() {
            e += 1;
        }
        let avg = (s + 1 + e + 1) as f64 / 2.0;
        for &i in &idx[s..=e] {
            ranks[i] = avg;
        }
        s = e + 1;
    }
    ranks
}

fn exact_signed_rank_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len();
    let total: f64 = ranks.iter().sum();
    let mu = total / 2.0;
    let dev = (w_plus - mu).abs();
    let mut count = 0u64;
    let masks = 1u64 << n;
    for mask in 0..masks {
        let mut w = 0.0;
        for (i, r) in ranks.iter().enumerate() {
            if mask & (1 << i) != 0 {
                w += r;
            }
        }
        if (w - mu).abs() >= dev - 1e-9 {
            count += 1;
        }
    }
    (count as f64 / masks as f64).min(1.0)
}

fn approx_signed_rank_p(ranks: &[f64], w_plus: f64) -> f64 {
    // Var(W+) = sum r_i^2 / 4 under random signs; with average ranks this is
    // exactly the tie-corrected variance. The distribution is symmetric but
    // platykurtic, so an Edgeworth kurtosis term sharpens the tail estimate.
    let mu: f64 = ranks.iter().sum::<f64>() / 2.0;
    let var: f64 = ranks.iter().map(|r| r * r).sum::<f64>() / 4.0;
    if var <= 0.0 {
        return 1.0;
    }
    let dev = w_plus - mu;
    let corrected = if dev.abs() <= 0.5 { 0.0 } else { dev.abs() - 0.5 };
    let z = corrected / var.sqrt();
    let sum_r4: f64 = ranks.iter().map(|r| r.powi(4)).sum();
    let sum_r2: f64 = ranks.iter().map(|r| r * r).sum();
    let excess_kurtosis = -2.0 * sum_r4 / (sum_r2 * sum_r2);
    let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let tail = normal_sf(z) + phi * (excess_kurtosis / 24.0) * (z * z * z - 3.0 * z);
    (2.0 * tail).clamp(0.0, 1.0)
}

/// Upper tail of the standard normal.
fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Complementary error function, absolute error below 1.2e-7.
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398
                                + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277))))))));
    let v = t * poly.exp();
    if x >= 0.0 {
        v
    } else {
        2.0 - v
    }
}

/// Benjamini-Hochberg step-up adjustment, returned in input order.
pub fn bh_adjust(pvalues: &[f64]) -> Result<Vec<f64>, EvalError> {
    for &p in pvalues {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(EvalError::BadPValue(p));
        }
    }
    let m = pvalues.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&i, &j| pvalues[i].partial_cmp(&pvalues[j]).unwrap());
    let mut adjusted = vec![0.0; m];
    let mut running_min = 1.0f64;
    for rank in (0..m).rev() {
        let i = idx[rank];
        let candidate = (pvalues[i] * m as f64 / (rank + 1) as f64).min(1.0);
        running_min = running_min.min(candidate);
        // max with the input guards the >= p invariant against the one-ulp
        // rounding of p * m / m.
        adjusted[i] = running_min.max(pvalues[i]);
    }
    Ok(adjusted)
}

/// Scope of one pairwise comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Overall,
    BinKm(usize),
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scope::Overall => write!(f, "overall"),
            Scope::BinKm(k) => write!(f, "bin_{k}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub method_a: String,
    pub method_b: String,
    pub scope: Scope,
    pub n_pairs: usize,
    pub p_raw: f64,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone)]
pub struct BinSummary {
    pub method: String,
    pub bin_km: usize,
    pub n: usize,
    pub mean_abs_err: f64,
    pub p95: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
}

#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub methods: Vec<String>,
    pub overall: BTreeMap<String, Mare>,
    pub bins: Vec<BinSummary>,
    pub comparisons: Vec<Comparison>,
}

/// Run the full protocol over per-method record sets.
///
/// Records must pair across methods: same (bus, stop, distance) triples in
/// the same multiset. Overall comparisons pair relative errors; per-bin
/// comparisons pair absolute errors. One Benjamini-Hochberg family covers
/// every reported comparison.
pub fn evaluate(
    records_by_method: &BTreeMap<String, Vec<PredictionRecord>>,
) -> Result<EvaluationReport, EvalError> {
    if records_by_method.is_empty() {
        return Err(EvalError::Empty);
    }
    let methods: Vec<String> = records_by_method.keys().cloned().collect();
    let mut sorted: BTreeMap<&str, Vec<&PredictionRecord>> = BTreeMap::new();
    for (m, recs) in records_by_method {
        if recs.is_empty() {
            return Err(EvalError::EmptyMethod(m.clone()));
        }
        let mut rs: Vec<&PredictionRecord> = recs.iter().collect();
        rs.sort_by(|a, b| {
            (&a.bus_id, a.stop_index, a.prediction_distance.to_bits())
                .cmp(&(&b.bus_id, b.stop_index, b.prediction_distance.to_bits()))
        });
        sorted.insert(m, rs);
    }
    let first = sorted.values().next().unwrap();
    for rs in sorted.values() {
        if rs.len() != first.len() {
            return Err(EvalError::Misaligned);
        }
        for (x, y) in rs.iter().zip(first.iter()) {
            if x.bus_id != y.bus_id
                || x.stop_index != y.stop_index
                || x.prediction_distance != y.prediction_distance
            {
                return Err(EvalError::Misaligned);
            }
        }
    }

    let mut overall = BTreeMap::new();
    let mut bins = Vec::new();
    for m in &methods {
        let recs: Vec<PredictionRecord> =
            sorted[m.as_str()].iter().map(|r| (*r).clone()).collect();
        overall.insert(m.clone(), mare(&recs)?);
        for (bin_km, errs) in bin_by_distance(&recs) {
            let n = errs.len();
            let mean = errs.iter().sum::<f64>() / n as f64;
            let q1 = percentile_nearest_rank(&errs, 0.25);
            let median = percentile_nearest_rank(&errs, 0.5);
            let q3 = percentile_nearest_rank(&errs, 0.75);
            let iqr = q3 - q1;
            let lo_fence = q1 - 1.5 * iqr;
            let hi_fence = q3 + 1.5 * iqr;
            let whisker_lo =
                errs.iter().copied().filter(|&e| e >= lo_fence).fold(f64::INFINITY, f64::min);
            let whisker_hi =
                errs.iter().copied().filter(|&e| e <= hi_fence).fold(f64::NEG_INFINITY, f64::max);
            bins.push(BinSummary {
                method: m.clone(),
                bin_km,
                n,
                mean_abs_err: mean,
                p95: percentile95(&errs),
                q1,
                median,
                q3,
                whisker_lo,
                whisker_hi,
            });
        }
    }

    // Pairwise Wilcoxon comparisons: overall plus every shared bin.
    let mut comparisons = Vec::new();
    for i in 0..methods.len() {
        for j in i + 1..methods.len() {
            let ra = &sorted[methods[i].as_str()];
            let rb = &sorted[methods[j].as_str()];
            let rel_a: Vec<f64> = ra.iter().map(|r| r.rel_error()).collect();
            let rel_b: Vec<f64> = rb.iter().map(|r| r.rel_error()).collect();
            comparisons.push(Comparison {
                method_a: methods[i].clone(),
                method_b: methods[j].clone(),
                scope: Scope::Overall,
                n_pairs: rel_a.len(),
                p_raw: wilcoxon_paired(&rel_a, &rel_b)?,
                p_adjusted: f64::NAN,
            });
            let mut by_bin: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
            for (x, y) in ra.iter().zip(rb.iter()) {
                let e = by_bin.entry(x.bin_km()).or_default();
                e.0.push(x.abs_error());
                e.1.push(y.abs_error());
            }
            for (bin_km, (ea, eb)) in by_bin {
                comparisons.push(Comparison {
                    method_a: methods[i].clone(),
                    method_b: methods[j].clone(),
                    scope: Scope::BinKm(bin_km),
                    n_pairs: ea.len(),
                    p_raw: wilcoxon_paired(&ea, &eb)?,
                    p_adjusted: f64::NAN,
                });
            }
        }
    }
    let raw: Vec<f64> = comparisons.iter().map(|c| c.p_raw).collect();
    if !raw.is_empty() {
        let adj = bh_adjust(&raw)?;
        for (c, p) in comparisons.iter_mut().zip(adj) {
            c.p_adjusted = p;
        }
    }

    Ok(EvaluationReport { methods, overall, bins, comparisons })
}

impl EvaluationReport {
    pub fn comparison(&self, a: &str, b: &str, scope: Scope) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| {
            c.scope == scope
                && ((c.method_a == a && c.method_b == b) || (c.method_a == b && c.method_b == a))
        })
    }

    /// Wide summary row mirroring the headline table: one MARE per method.
    pub fn summary_csv(&self, route: &str, window_days: usize) -> String {
        let mut out = String::from("route,window_days");
        for m in &self.methods {
            out.push(',');
            out.push_str(&m.to_lowercase());
        }
        out.push('\n');
        out.push_str(&format!("{route},{window_days}"));
        for m in &self.methods {
            out.push_str(&format!(",{:.6}", self.overall[m].value));
        }
        out.push('\n');
        out
    }

    pub fn bins_csv(&self, route: &str) -> String {
        let mut out = String::from("method,route,bin_km,n,mean_abs_err_min,p95_min\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6}\n",
                b.method, route, b.bin_km, b.n, b.mean_abs_err, b.p95
            ));
        }
        out
    }

    pub fn plot_data_csv(&self, route: &str) -> String {
        let mut out = String::from(
            "method,route,bin_km,n,q1_min,median_min,q3_min,whisker_lo_min,whisker_hi_min,p95_min\n",
        );
        for b in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                b.method,
                route,
                b.bin_km,
                b.n,
                b.q1,
                b.median,
                b.q3,
                b.whisker_lo,
                b.whisker_hi,
                b.p95
            ));
        }
        out
    }

    pub fn tests_csv(&self, route: &str) -> String {
        let mut out = String::from("method_a,method_b,route,scope,n_pairs,p_raw,p_adjusted\n");
        for c in &self.comparisons {
            out.push_str(&format!(
                "{},{},{},{},{},{:.6e},{:.6e}\n",
                c.method_a, c.method_b, route, c.scope, c.n_pairs, c.p_raw, c.p_adjusted
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rec(method: &str, bus: &str, k: usize, pd: f64, t: f64, that: f64) -> PredictionRecord {
        PredictionRecord {
            method: method.into(),
            bus_id: bus.into(),
            stop_index: k,
            prediction_distance: pd,
            actual: t,
            predicted: that,
        }
    }

    #[test]
    fn mare_examples() {
        let perfect = vec![rec("m", "a", 0, 100.0, 10.0, 10.0), rec("m", "b", 0, 100.0, 7.0, 7.0)];
        assert_eq!(mare(&perfect).unwrap().value, 0.0);
        let hand =
            vec![rec("m", "a", 0, 100.0, 10.0, 11.0), rec("m", "b", 0, 100.0, 20.0, 18.0)];
        assert!((mare(&hand).unwrap().value - 0.1).abs() < 1e-15);
        let with_bad = vec![rec("m", "a", 0, 100.0, 0.0, 1.0), rec("m", "b", 0, 100.0, 10.0, 11.0)];
        let m = mare(&with_bad).unwrap();
        assert_eq!(m.n_rejected, 1);
        assert_eq!(m.n_used, 1);
        assert!(mare(&[rec("m", "a", 0, 1.0, -3.0, 1.0)]).is_err());
    }

    #[test]
    fn mare_scale_invariant() {
        let mut rng = Rng::new(1);
        let recs: Vec<PredictionRecord> = (0..50)
            .map(|i| {
                let t = rng.range(5.0, 40.0);
                rec("m", &format!("b{i}"), 0, 500.0, t, t + rng.normal())
            })
            .collect();
        let base = mare(&recs).unwrap().value;
        let scaled: Vec<PredictionRecord> = recs
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.actual *= 3.7;
                r.predicted *= 3.7;
                r
            })
            .collect();
        assert!((mare(&scaled).unwrap().value - base).abs() < 1e-12);
    }

    #[test]
    fn binning_boundaries_and_partition() {
        let recs = vec![
            rec("m", "a", 0, 999.0, 10.0, 11.0),
            rec("m", "b", 0, 1000.0, 10.0, 12.0),
            rec("m", "c", 0, 0.0, 10.0, 13.0),
            rec("m", "d", 0, 2500.0, 10.0, 14.0),
        ];
        let bins = bin_by_distance(&recs);
        assert_eq!(bins[&0].len(), 2);
        assert_eq!(bins[&1], vec![2.0]);
        assert_eq!(bins[&2], vec![4.0]);

        let mut rng = Rng::new(2);
        let recs: Vec<PredictionRecord> = (0..100)
            .map(|i| rec("m", &format!("b{i}"), 0, rng.range(0.0, 9000.0), 10.0, 10.5))
            .collect();
        let bins = bin_by_distance(&recs);
        // Union of bins equals the record multiset.
        let total: usize = bins.values().map(Vec::len).sum();
        assert_eq!(total, 100);
        for (bin, errs) in &bins {
            let brute = recs
                .iter()
                .filter(|r| {
                    r.prediction_distance >= *bin as f64 * 1000.0
                        && r.prediction_distance < (*bin + 1) as f64 * 1000.0
                })
                .count();
            assert_eq!(errs.len(), brute);
        }
    }

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(percentile95(&v), 95.0);
        assert_eq!(percentile95(&[7.5]), 7.5);
        let mut rng = Rng::new(3);
        let v: Vec<f64> = (0..37).map(|_| rng.range(0.0, 10.0)).collect();
        let mut sorted = v.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle = sorted[(0.95f64 * 37.0).ceil() as usize - 1];
        assert_eq!(percentile95(&v), oracle);
    }

    #[test]
    fn wilcoxon_identical_and_all_positive() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(wilcoxon_paired(&a, &a).unwrap(), 1.0);
        // n = 6, all differences positive with distinct magnitudes:
        // two-sided exact p = 2/64.
        let a = [2.0, 3.0, 5.0, 8.0, 13.0, 21.0];
        let b = [1.0, 1.0, 2.0, 3.0, 5.0, 8.0];
        let p = wilcoxon_paired(&a, &b).unwrap();
        assert!((p - 0.03125).abs() < 1e-12, "p = {p}");
    }

    #[test]
    fn wilcoxon_two_sided_symmetry() {
        let mut rng = Rng::new(4);
        for n in [5usize, 12, 19, 40] {
            let a: Vec<f64> = (0..n).map(|_| rng.range(0.0, 10.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.range(0.0, 10.0)).collect();
            let p1 = wilcoxon_paired(&a, &b).unwrap();
            let p2 = wilcoxon_paired(&b, &a).unwrap();
            assert!((p1 - p2).abs() < 1e-12);
        }
    }

    #[test]
    fn wilcoxon_handles_ties_in_magnitudes() {
        let a = [3.0, 4.0, 6.0, 9.0, 1.0];
        let b = [1.0, 2.0, 4.0, 6.0, 4.0]; // diffs 2,2,2,3,-3: magnitude ties
        let p = wilcoxon_paired(&a, &b).unwrap();
        assert!(p > 0.0 && p <= 1.0);
        // Exact enumeration cross-check by brute force on the rank vector.
        let diffs = [2.0, 2.0, 2.0, 3.0, -3.0];
        let ranks = average_ranks(&diffs);
        let w_plus: f64 =
            diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| *r).sum();
        assert_eq!(p, exact_signed_rank_p(&ranks, w_plus));
    }

    #[test]
    fn normal_approx_close_to_exact_at_n15() {
        let mut rng = Rng::new(5);
        for _ in 0..10 {
            let n = 15;
            let diffs: Vec<f64> = (0..n).map(|_| rng.normal() + 0.4).collect();
            let diffs: Vec<f64> = diffs.into_iter().filter(|d| *d != 0.0).collect();
            let ranks = average_ranks(&diffs);
            let w_plus: f64 =
                diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| *r).sum();
            let exact = exact_signed_rank_p(&ranks, w_plus);
            let approx = approx_signed_rank_p(&ranks, w_plus);
            assert!((exact - approx).abs() < 0.01, "exact {exact} approx {approx}");
        }
    }

    #[test]
    fn erfc_reference_values() {
        // erfc(0) = 1, erfc(1) = 0.157299..., erfc(-1) = 1.842700...
        assert!((erfc(0.0) - 1.0).abs() < 1e-7);
        assert!((erfc(1.0) - 0.15729920705028513).abs() < 1.5e-7);
        assert!((erfc(-1.0) - 1.8427007929497148).abs() < 1.5e-7);
        assert!((normal_sf(1.96) - 0.024997895).abs() < 1e-6);
    }

    #[test]
    fn bh_examples_and_properties() {
        let adj = bh_adjust(&[0.01, 0.02, 0.03]).unwrap();
        for v in &adj {
            assert!((v - 0.03).abs() < 1e-12);
        }
        assert_eq!(bh_adjust(&[0.2]).unwrap(), vec![0.2]);
        let adj = bh_adjust(&[0.4, 0.4, 0.4, 0.4]).unwrap();
        for v in &adj {
            assert!((v - 0.4).abs() < 1e-12);
        }
        assert!(bh_adjust(&[1.1]).is_err());
        assert!(bh_adjust(&[-0.1]).is_err());

        let mut rng = Rng::new(6);
        let ps: Vec<f64> = (0..25).map(|_| rng.uniform()).collect();
        let adj = bh_adjust(&ps).unwrap();
        // Component-wise >= input, <= 1, order preserving on sorted inputs.
        for (p, a) in ps.iter().zip(&adj) {
            assert!(a >= p && *a <= 1.0);
        }
        let mut order: Vec<usize> = (0..ps.len()).collect();
        order.sort_by(|&i, &j| ps[i].partial_cmp(&ps[j]).unwrap());
        for w in order.windows(2) {
            assert!(adj[w[0]] <= adj[w[1]] + 1e-15);
        }
    }

    #[test]
    fn evaluate_identical_methods() {
        let mut rng = Rng::new(7);
        let mut by_method = BTreeMap::new();
        let base: Vec<PredictionRecord> = (0..30)
            .map(|i| {
                rec("x", &format!("b{i}"), i % 3, rng.range(0.0, 4000.0), rng.range(5.0, 30.0), rng.range(5.0, 30.0))
            })
            .collect();
        let mut as_a = base.clone();
        for r in &mut as_a {
            r.method = "A".into();
        }
        let mut as_b = base.clone();
        for r in &mut as_b {
            r.method = "B".into();
        }
        by_method.insert("A".to_string(), as_a);
        by_method.insert("B".to_string(), as_b);
        let report = evaluate(&by_method).unwrap();
        assert_eq!(report.overall["A"].value, report.overall["B"].value);
        for c in &report.comparisons {
            assert_eq!(c.p_raw, 1.0);
            assert_eq!(c.p_adjusted, 1.0);
        }
        let sum = report.summary_csv("r1", 30);
        assert!(sum.starts_with("route,window_days,a,b\n"));
        let bins = report.bins_csv("r1");
        assert!(bins.starts_with("method,route,bin_km,n,mean_abs_err_min,p95_min\n"));
        let plots = report.plot_data_csv("r1");
        assert!(plots.starts_with(
            "method,route,bin_km,n,q1_min,median_min,q3_min,whisker_lo_min,whisker_hi_min,p95_min\n"
        ));
        let tests = report.tests_csv("r1");
        assert!(tests.starts_with("method_a,method_b,route,scope,n_pairs,p_raw,p_adjusted\n"));
    }

    #[test]
    fn evaluate_rejects_misaligned_and_empty() {
        let mut by_method = BTreeMap::new();
        by_method.insert("A".to_string(), vec![rec("A", "b1", 0, 100.0, 10.0, 11.0)]);
        by_method.insert("B".to_string(), vec![rec("B", "b2", 0, 100.0, 10.0, 11.0)]);
        assert!(matches!(evaluate(&by_method), Err(EvalError::Misaligned)));
        let mut by_method = BTreeMap::new();
        by_method.insert("A".to_string(), vec![rec("A", "b1", 0, 100.0, 10.0, 11.0)]);
        by_method.insert("B".to_string(), Vec::new());
        assert!(matches!(evaluate(&by_method), Err(EvalError::EmptyMethod(_))));
    }
}
