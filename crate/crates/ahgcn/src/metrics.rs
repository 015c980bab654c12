//! Evaluation protocol: five-parameter logistic mapping, PLCC/SROCC/RMSE,
//! and the pair-based Krasula analysis.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

/// Parameters of the five-parameter logistic mapping.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LogisticParams {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub beta5: f64,
}

impl LogisticParams {
    fn from_slice(x: &[f64]) -> Self {
        LogisticParams {
            beta1: x[0],
            beta2: x[1],
            beta3: x[2],
            beta4: x[3],
            beta5: x[4],
        }
    }

}

/// `beta1 * (1/2 - 1/(1 + exp(beta2 (q - beta3)))) + beta4 q + beta5`.
pub fn logistic_map(q: f64, p: &LogisticParams) -> f64 {
    let z = p.beta2 * (q - p.beta3);
    // 1/(1+exp(z)) computed stably for large |z|.
    let sig = if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    };
    p.beta1 * (0.5 - sig) + p.beta4 * q + p.beta5
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

// ---------------------------------------------------------------------------
// Nelder-Mead simplex minimizer
// ---------------------------------------------------------------------------

fn simplex_diameter(simplex: &[Vec<f64>]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..simplex.len() {
        for j in (i + 1)..simplex.len() {
            let dist = simplex[i]
                .iter()
                .zip(&simplex[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d = d.max(dist);
        }
    }
    d
}

/// Downhill simplex; runs until the simplex diameter drops below `tol` or
/// the shared iteration budget is spent. Returns the best vertex.
fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    steps: &[f64],
    budget: &mut usize,
    tol: f64,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    while *budget > 0 && simplex_diameter(&simplex) >= tol {
        *budget -= 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        let mut centroid = vec![0.0; n];
        for &i in order.iter().take(n) {
            for (c, x) in centroid.iter_mut().zip(&simplex[i]) {
                *c += x / n as f64;
            }
        }
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&simplex[worst])
            .map(|(c, w)| c + (c - w))
            .collect();
        let fr = f(&reflect);
        if fr < values[best] {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + 2.0 * (c - w))
                .collect();
            let fe = f(&expand);
            if fe < fr {
                simplex[worst] = expand;
                values[worst] = fe;
            } else {
                simplex[worst] = reflect;
                values[worst] = fr;
            }
        } else if fr < values[second_worst] {
            simplex[worst] = reflect;
            values[worst] = fr;
        } else {
            let contract: Vec<f64> = centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + 0.5 * (w - c))
                .collect();
            let fc = f(&contract);
            if fc < values[worst] {
                simplex[worst] = contract;
                values[worst] = fc;
            } else {
                // Shrink toward the best vertex.
                let best_point = simplex[best].clone();
                for i in 0..=n {
                    if i == best {
                        continue;
                    }
                    for (x, b) in simplex[i].iter_mut().zip(&best_point) {
                        *x = b + 0.5 * (*x - b);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..=n {
        if values[i] < values[best] {
            best = i;
        }
    }
    (simplex[best].clone(), values[best])
}

/// Least-squares fit of the logistic mapping by Nelder-Mead, started from
/// the usual heuristic and from the best affine map (which the logistic
/// family contains at `beta1 = 0`).
pub fn fit_logistic(preds: &[f64], mos: &[f64]) -> Result<LogisticParams> {
    if preds.len() != mos.len() {
        return Err(Error::Shape(format!(
            "{} predictions against {} MOS values",
            preds.len(),
            mos.len()
        )));
    }
    if preds.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "logistic fit needs at least 5 points, got {}",
            preds.len()
        )));
    }
    let pred_std = std_dev(preds);
    if pred_std == 0.0 {
        return Err(Error::InvalidArgument(
            "logistic fit is undefined for constant predictions".into(),
        ));
    }
    let sse = |x: &[f64]| -> f64 {
        let p = LogisticParams::from_slice(x);
        preds
            .iter()
            .zip(mos)
            .map(|(&q, &g)| {
                let d = logistic_map(q, &p) - g;
                d * d
            })
            .sum()
    };

    let mos_range = mos.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - mos.iter().cloned().fold(f64::INFINITY, f64::min);
    let heuristic = vec![mos_range, 1.0 / pred_std, mean(preds), 0.0, mean(mos)];
    // Closed-form best affine map mos ~ a*pred + b.
    let mp = mean(preds);
    let mg = mean(mos);
    let cov: f64 = preds.iter().zip(mos).map(|(&q, &g)| (q - mp) * (g - mg)).sum();
    let var: f64 = preds.iter().map(|&q| (q - mp) * (q - mp)).sum();
    let a = cov / var;
    let affine = vec![0.0, 1.0 / pred_std, mp, a, mg - a * mp];

    let mut budget = 20_000usize;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in [heuristic, affine] {
        let mut current = start;
        let mut scale = 1.0;
        // A few restart rounds around the incumbent with shrinking steps.
        for _ in 0..4 {
            if budget == 0 {
                break;
            }
            let steps: Vec<f64> = current
                .iter()
                .map(|&x| scale * (0.25 * x.abs()).max(0.25))
                .collect();
            let (x, fx) = nelder_mead(&sse, &current, &steps, &mut budget, 1e-8);
            let improved = best.as_ref().map_or(true, |(_, b)| fx < *b);
            if improved {
                best = Some((x.clone(), fx));
            }
            if (sse(&current) - fx).abs() < 1e-15 {
                break;
            }
            current = x;
            scale *= 0.25;
        }
    }
    let (x, _) = best.expect("at least one start evaluated");
    Ok(LogisticParams::from_slice(&x))
}

// ---------------------------------------------------------------------------
// Correlation metrics
// ---------------------------------------------------------------------------

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "metric over lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument(
            "metric needs at least 2 samples".into(),
        ));
    }
    Ok(())
}

/// Pearson linear correlation coefficient.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument(
            "correlation is undefined for constant input".into(),
        ));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Root mean squared error.
pub fn rmse(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let ss: f64 = x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok((ss / x.len() as f64).sqrt())
}

/// 1-based ranks with ties assigned their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j share the value; average of ranks i+1..=j+1.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn srocc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    plcc(&average_ranks(x), &average_ranks(y))
}

// ---------------------------------------------------------------------------
// Krasula analysis
// ---------------------------------------------------------------------------

/// Significance label for an unordered sample pair `(i, j)` with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairClass {
    /// No significant quality difference.
    Similar,
    /// Significantly different; sample `i` is better.
    FirstBetter,
    /// Significantly different; sample `j` is better.
    SecondBetter,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct KrasulaReport {
    pub auc_ds: Option<f64>,
    pub auc_bw: Option<f64>,
    pub c0: Option<f64>,
    pub n_different: usize,
    pub n_similar: usize,
}

/// ROC area by the Mann-Whitney rank statistic; ties count one half.
fn mann_whitney_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut all: Vec<f64> = Vec::with_capacity(pos.len() + neg.len());
    all.extend_from_slice(pos);
    all.extend_from_slice(neg);
    let ranks = average_ranks(&all);
    let r_pos: f64 = ranks[..pos.len()].iter().sum();
    let np = pos.len() as f64;
    let nn = neg.len() as f64;
    (r_pos - np * (np + 1.0) / 2.0) / (np * nn)
}

/// Pair-based discrimination analysis. Pair significance comes from
/// `pair_labels` (canonical `(i, j), i < j` lexicographic order) when given,
/// otherwise from thresholding `|delta MOS|` at `mos_diff_threshold`.
pub fn krasula_analysis(
    preds: &[f64],
    mos: &[f64],
    pair_labels: Option<&[PairClass]>,
    mos_diff_threshold: f64,
) -> Result<KrasulaReport> {
    check_pair(preds, mos)?;
    let n = preds.len();
    let n_pairs = n * (n - 1) / 2;
    if let Some(labels) = pair_labels {
        if labels.len() != n_pairs {
            return Err(Error::Shape(format!(
                "{} pair labels for {n_pairs} pairs",
                labels.len()
            )));
        }
    }

    let mut ds_scores_different = Vec::new();
    let mut ds_scores_similar = Vec::new();
    let mut bw_oriented = Vec::new();
    let mut correct = 0usize;
    let mut pair_idx = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let class = match pair_labels {
                Some(labels) => labels[pair_idx],
                None => {
                    let d = mos[i] - mos[j];
                    if d.abs() > mos_diff_threshold {
                        if d > 0.0 {
                            PairClass::FirstBetter
                        } else {
                            PairClass::SecondBetter
                        }
                    } else {
                        PairClass::Similar
                    }
                }
            };
            pair_idx += 1;
            let dpred = preds[i] - preds[j];
            match class {
                PairClass::Similar => ds_scores_similar.push(dpred.abs()),
                PairClass::FirstBetter => {
                    ds_scores_different.push(dpred.abs());
                    bw_oriented.push(dpred);
                    if dpred > 0.0 {
                        correct += 1;
                    }
                }
                PairClass::SecondBetter => {
                    ds_scores_different.push(dpred.abs());
                    bw_oriented.push(-dpred);
                    if dpred < 0.0 {
                        correct += 1;
                    }
                }
            }
        }
    }

    let n_different = ds_scores_different.len();
    let n_similar = ds_scores_similar.len();
    let auc_ds = (n_different > 0 && n_similar > 0)
        .then(|| mann_whitney_auc(&ds_scores_different, &ds_scores_similar));
    let (auc_bw, c0) = if n_different > 0 {
        let mirrored: Vec<f64> = bw_oriented.iter().map(|&d| -d).collect();
        (
            Some(mann_whitney_auc(&bw_oriented, &mirrored)),
            Some(correct as f64 / n_different as f64),
        )
    } else {
        (None, None)
    };
    Ok(KrasulaReport {
        auc_ds,
        auc_bw,
        c0,
        n_different,
        n_similar,
    })
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SampleEval {
    pub id: String,
    pub mos: f64,
    pub raw_pred: f64,
    pub mapped_pred: f64,
}

/// The full evaluation protocol output for one dataset.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub plcc: f64,
    pub srocc: f64,
    pub rmse: f64,
    pub logistic: LogisticParams,
    pub krasula: KrasulaReport,
    pub samples: Vec<SampleEval>,
}

impl EvalReport {
    /// Fit the logistic mapping, apply it, and compute every metric.
    /// PLCC/RMSE use mapped predictions; SROCC and the Krasula analysis are
    /// rank/pair based and use the raw predictions.
    pub fn from_predictions(
        ids: &[String],
        preds: &[f64],
        mos: &[f64],
        mos_diff_threshold: f64,
        pair_labels: Option<&[PairClass]>,
    ) -> Result<Self> {
        if ids.len() != preds.len() {
            return Err(Error::Shape(format!(
                "{} ids for {} predictions",
                ids.len(),
                preds.len()
            )));
        }
        let logistic = fit_logistic(preds, mos)?;
        let mapped: Vec<f64> = preds.iter().map(|&q| logistic_map(q, &logistic)).collect();
        let report = EvalReport {
            plcc: plcc(&mapped, mos)?,
            srocc: srocc(preds, mos)?,
            rmse: rmse(&mapped, mos)?,
            logistic,
            krasula: krasula_analysis(preds, mos, pair_labels, mos_diff_threshold)?,
            samples: ids
                .iter()
                .zip(preds.iter().zip(mos))
                .enumerate()
                .map(|(i, (id, (&q, &g)))| SampleEval {
                    id: id.clone(),
                    mos: g,
                    raw_pred: q,
                    mapped_pred: mapped[i],
                })
                .collect(),
        };
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Scatter data (one row per sample) for external plotting.
    pub fn write_scatter_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "id,mos,raw_pred,mapped_pred")?;
        for s in &self.samples {
            writeln!(w, "{},{},{},{}", s.id, s.mos, s.raw_pred, s.mapped_pred)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn betas(b: [f64; 5]) -> LogisticParams {
        LogisticParams {
            beta1: b[0],
            beta2: b[1],
            beta3: b[2],
            beta4: b[3],
            beta5: b[4],
        }
    }

    #[test]
    fn logistic_map_reference_points() {
        let identity = betas([0.0, 1.0, 0.0, 1.0, 0.0]);
        for q in [-3.0, 0.0, 7.5] {
            assert_eq!(logistic_map(q, &identity), q);
        }
        let p = betas([3.0, 2.0, 1.5, 0.5, -1.0]);
        let at_center = logistic_map(1.5, &p);
        assert!((at_center - (0.5 * 1.5 - 1.0)).abs() < 1e-12);
        let sym = betas([2.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(logistic_map(0.0, &sym).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_exact_logistic_data() {
        let truth = betas([4.0, 0.8, 5.0, 0.3, 2.0]);
        let preds: Vec<f64> = (0..40).map(|i| i as f64 * 0.25).collect();
        let mos: Vec<f64> = preds.iter().map(|&q| logistic_map(q, &truth)).collect();
        let fit = fit_logistic(&preds, &mos).unwrap();
        let mapped: Vec<f64> = preds.iter().map(|&q| logistic_map(q, &fit)).collect();
        let err = rmse(&mapped, &mos).unwrap();
        assert!(err < 1e-6, "residual rmse {err}");
    }

    #[test]
    fn fit_handles_linear_data_exactly() {
        let preds: Vec<f64> = (0..20).map(|i| i as f64 * 0.5 - 3.0).collect();
        let mos: Vec<f64> = preds.iter().map(|&q| 2.0 * q + 1.0).collect();
        let fit = fit_logistic(&preds, &mos).unwrap();
        let mapped: Vec<f64> = preds.iter().map(|&q| logistic_map(q, &fit)).collect();
        assert!(rmse(&mapped, &mos).unwrap() < 1e-6);
    }

    #[test]
    fn fit_rejects_degenerate_inputs() {
        assert!(fit_logistic(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).is_err());
        let constant = vec![2.0; 8];
        let mos: Vec<f64> = (0..8).map(|i| i as f64).collect();
        assert!(fit_logistic(&constant, &mos).is_err());
    }

    #[test]
    fn perfect_prediction_metrics() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.7 - 2.0).collect();
        assert!((plcc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((srocc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rmse(&x, &x).unwrap(), 0.0);
        let rev: Vec<f64> = x.iter().rev().cloned().collect();
        assert!((srocc(&x, &rev).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn tied_ranks_match_brute_force_oracle() {
        let x = [1.0, 2.0, 2.0, 3.0];
        let y = [1.0, 3.0, 2.0, 4.0];
        assert_eq!(average_ranks(&x), vec![1.0, 2.5, 2.5, 4.0]);
        // Independent rank computation: rank = 1 + #less + (#equal - 1)/2.
        let brute = |vals: &[f64]| -> Vec<f64> {
            vals.iter()
                .map(|&v| {
                    let less = vals.iter().filter(|&&o| o < v).count() as f64;
                    let equal = vals.iter().filter(|&&o| o == v).count() as f64;
                    1.0 + less + (equal - 1.0) / 2.0
                })
                .collect()
        };
        let sx = srocc(&x, &y).unwrap();
        let oracle = plcc(&brute(&x), &brute(&y)).unwrap();
        assert!((sx - oracle).abs() < 1e-12);
    }

    #[test]
    fn constant_inputs_are_rejected_for_correlations() {
        let c = vec![1.0; 5];
        let x: Vec<f64> = (0..5).map(|i| i as f64).collect();
        assert!(plcc(&c, &x).is_err());
        assert!(srocc(&x, &c).is_err());
        assert!(rmse(&c, &x).is_ok());
    }

    #[test]
    fn krasula_perfect_and_inverted_orderings() {
        let mos: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let r = krasula_analysis(&mos, &mos, None, 0.0).unwrap();
        assert_eq!(r.auc_bw, Some(1.0));
        assert_eq!(r.c0, Some(1.0));
        assert_eq!(r.n_similar, 0);
        assert!(r.auc_ds.is_none());
        let neg: Vec<f64> = mos.iter().map(|&v| -v).collect();
        let r = krasula_analysis(&neg, &mos, None, 0.0).unwrap();
        assert_eq!(r.auc_bw, Some(0.0));
        assert_eq!(r.c0, Some(0.0));
    }

    #[test]
    fn krasula_flip_symmetry_and_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mos: Vec<f64> = (0..10).map(|_| rng.random_range(1.0..10.0)).collect();
        let preds: Vec<f64> = (0..10).map(|_| rng.random_range(1.0..10.0)).collect();
        let r = krasula_analysis(&preds, &mos, None, 2.0).unwrap();
        assert!(r.n_similar > 0 && r.n_different > 0);
        let flipped: Vec<f64> = preds.iter().map(|&p| -p).collect();
        let rf = krasula_analysis(&flipped, &mos, None, 2.0).unwrap();
        assert!((r.auc_bw.unwrap() + rf.auc_bw.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.auc_ds.unwrap(), rf.auc_ds.unwrap());
        for v in [r.auc_ds.unwrap(), r.auc_bw.unwrap(), r.c0.unwrap()] {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn krasula_accepts_external_labels() {
        let preds = [1.0, 2.0, 3.0];
        let mos = [1.0, 1.0, 1.0];
        // Canonical pair order: (0,1), (0,2), (1,2).
        let labels = [
            PairClass::Similar,
            PairClass::SecondBetter,
            PairClass::FirstBetter,
        ];
        let r = krasula_analysis(&preds, &mos, Some(&labels), 0.0).unwrap();
        assert_eq!(r.n_different, 2);
        assert_eq!(r.n_similar, 1);
        // (0,2): second better and pred agrees; (1,2): first better, pred
        // disagrees.
        assert_eq!(r.c0, Some(0.5));
        assert!(krasula_analysis(&preds, &mos, Some(&labels[..2]), 0.0).is_err());
    }

    #[test]
    fn no_different_pairs_reports_absent_values() {
        let preds = [1.0, 2.0, 3.0];
        let mos = [5.0, 5.1, 5.2];
        let r = krasula_analysis(&preds, &mos, None, 1.0).unwrap();
        assert!(r.auc_bw.is_none());
        assert!(r.c0.is_none());
        assert!(r.auc_ds.is_none());
        assert_eq!(r.n_similar, 3);
    }

    #[test]
    fn logistic_fit_beats_best_affine_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let preds: Vec<f64> = (0..15).map(|_| rng.random_range(0.0..5.0)).collect();
            let mos: Vec<f64> = preds
                .iter()
                .map(|&q| q.powi(2) * 0.3 + rng.random_range(-0.3..0.3))
                .collect();
            let fit = fit_logistic(&preds, &mos).unwrap();
            let mapped: Vec<f64> = preds.iter().map(|&q| logistic_map(q, &fit)).collect();
            let fit_rmse = rmse(&mapped, &mos).unwrap();
            // Closed-form affine optimum.
            let mp = mean(&preds);
            let mg = mean(&mos);
            let cov: f64 = preds.iter().zip(&mos).map(|(&q, &g)| (q - mp) * (g - mg)).sum();
            let var: f64 = preds.iter().map(|&q| (q - mp) * (q - mp)).sum();
            let a = cov / var;
            let b = mg - a * mp;
            let affine: Vec<f64> = preds.iter().map(|&q| a * q + b).collect();
            let affine_rmse = rmse(&affine, &mos).unwrap();
            assert!(
                fit_rmse <= affine_rmse + 1e-8,
                "logistic {fit_rmse} vs affine {affine_rmse}"
            );
        }
    }

    #[test]
    fn report_assembles_all_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mos: Vec<f64> = (0..8).map(|_| rng.random_range(1.0..10.0)).collect();
        let preds: Vec<f64> = mos.iter().map(|&g| g * 0.5 + rng.random_range(-0.2..0.2)).collect();
        let ids: Vec<String> = (0..8).map(|i| format!("img_{i}")).collect();
        let report = EvalReport::from_predictions(&ids, &preds, &mos, 0.5, None).unwrap();
        assert!(report.plcc > 0.9);
        assert!(report.srocc > 0.9);
        assert_eq!(report.samples.len(), 8);
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        for key in ["plcc", "srocc", "rmse", "logistic", "krasula", "samples"] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
        let mut csv = Vec::new();
        report.write_scatter_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.starts_with("id,mos,raw_pred,mapped_pred"));
    }

    proptest! {
        #[test]
        fn srocc_is_invariant_under_monotone_maps(
            xs in proptest::collection::vec(-50.0..50.0f64, 6..12),
            ys in proptest::collection::vec(-50.0..50.0f64, 6..12),
        ) {
            let n = xs.len().min(ys.len());
            let x = &xs[..n];
            let y = &ys[..n];
            // Skip degenerate constant vectors.
            prop_assume!(x.iter().any(|&v| v != x[0]));
            prop_assume!(y.iter().any(|&v| v != y[0]));
            let base = srocc(x, y).unwrap();
            let tx: Vec<f64> = x.iter().map(|&v| v.powi(3) + 2.0 * v).collect();
            let ty: Vec<f64> = y.iter().map(|&v| (v * 0.1).exp()).collect();
            prop_assert!((srocc(&tx, y).unwrap() - base).abs() < 1e-12);
            prop_assert!((srocc(x, &ty).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn plcc_is_invariant_under_positive_affine_maps(
            xs in proptest::collection::vec(-50.0..50.0f64, 5..10),
            ys in proptest::collection::vec(-50.0..50.0f64, 5..10),
            a in 0.1..10.0f64,
            b in -5.0..5.0f64,
        ) {
            let n = xs.len().min(ys.len());
            let x = &xs[..n];
            let y = &ys[..n];
            prop_assume!(x.iter().any(|&v| v != x[0]));
            prop_assume!(y.iter().any(|&v| v != y[0]));
            let base = plcc(x, y).unwrap();
            let tx: Vec<f64> = x.iter().map(|&v| a * v + b).collect();
            prop_assert!((plcc(&tx, y).unwrap() - base).abs() < 1e-9);
        }
    }
}
