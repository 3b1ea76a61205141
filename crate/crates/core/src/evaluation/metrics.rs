//! Classification and agreement statistics over three-valued labels.

use serde::{Deserialize, Serialize};

use crate::TriValue;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0} predictions vs {1} references")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("need at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("non-finite value in input")]
    NonFinite,
}

fn check_lengths(a: &[TriValue], b: &[TriValue]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Accuracy per gold class, in [`TriValue::ALL`] order; `None` for classes
/// absent from `golds`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerLabel {
    pub yes: Option<f64>,
    pub no: Option<f64>,
    pub nei: Option<f64>,
}

impl PerLabel {
    pub fn get(&self, v: TriValue) -> Option<f64> {
        match v {
            TriValue::Yes => self.yes,
            TriValue::No => self.no,
            TriValue::Nei => self.nei,
        }
    }

    fn set(&mut self, v: TriValue, x: Option<f64>) {
        match v {
            TriValue::Yes => self.yes = x,
            TriValue::No => self.no = x,
            TriValue::Nei => self.nei = x,
        }
    }
}

pub fn per_class_recall(preds: &[TriValue], golds: &[TriValue]) -> Result<PerLabel, MetricError> {
    check_lengths(preds, golds)?;
    let mut hits = [0usize; 3];
    let mut totals = [0usize; 3];
    for (p, g) in preds.iter().zip(golds) {
        totals[g.index()] += 1;
        if p == g {
            hits[g.index()] += 1;
        }
    }
    let mut out = PerLabel::default();
    for v in TriValue::ALL {
        let i = v.index();
        out.set(
            v,
            (totals[i] > 0).then(|| hits[i] as f64 / totals[i] as f64),
        );
    }
    Ok(out)
}

/// Unweighted mean of per-class recall over the classes present in `golds`.
pub fn macro_accuracy(preds: &[TriValue], golds: &[TriValue]) -> Result<f64, MetricError> {
    let per = per_class_recall(preds, golds)?;
    let present: Vec<f64> = TriValue::ALL.iter().filter_map(|v| per.get(*v)).collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Kendall rank correlation (tau-b) with its pair counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KendallTau {
    pub tau: f64,
    /// Two-sided p-value from the normal approximation with tie correction.
    pub p_value: f64,
    pub n: usize,
    pub concordant: u64,
    pub discordant: u64,
    /// Pairs tied in x (including pairs tied in both).
    pub ties_x: u64,
    /// Pairs tied in y (including pairs tied in both).
    pub ties_y: u64,
    pub ties_xy: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauOutcome {
    Value(KendallTau),
    /// Every x (or every y) is tied, so tau is undefined.
    Degenerate {
        all_x_tied: bool,
        all_y_tied: bool,
    },
}

impl TauOutcome {
    pub fn value(&self) -> Option<&KendallTau> {
        match self {
            TauOutcome::Value(k) => Some(k),
            TauOutcome::Degenerate { .. } => None,
        }
    }
}

/// Sizes of runs of equal values in an already sorted sequence.
fn tie_groups(sorted: &[f64]) -> Vec<u64> {
    let mut out = Vec::new();
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            if run > 1 {
                out.push(run);
            }
            run = 1;
        }
    }
    if run > 1 {
        out.push(run);
    }
    out
}

/// Counts strict inversions of `v` while merge-sorting it.
fn count_inversions(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = count_inversions(&mut v[..mid], buf) + count_inversions(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            inv += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    inv
}

/// Tau-b in O(n log n) (Knight's method).
pub fn kendall_tau(pairs: &[(f64, f64)]) -> Result<TauOutcome, MetricError> {
    let n = pairs.len();
    if n < 2 {
        return Err(MetricError::TooFewPairs(n));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let pairs_of = |t: u64| t * (t - 1) / 2;
    let n0 = pairs_of(n as u64);
    let xs: Vec<f64> = sorted.iter().map(|p| p.0).collect();
    let x_groups = tie_groups(&xs);
    let ties_x: u64 = x_groups.iter().map(|&t| pairs_of(t)).sum();

    let mut ties_xy = 0;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            ties_xy += pairs_of(run);
            run = 1;
        }
    }
    ties_xy += pairs_of(run);

    let mut ys: Vec<f64> = sorted.iter().map(|p| p.1).collect();
    let discordant = count_inversions(&mut ys, &mut Vec::with_capacity(n));
    // ys is now sorted
    let y_groups = tie_groups(&ys);
    let ties_y: u64 = y_groups.iter().map(|&t| pairs_of(t)).sum();

    if ties_x == n0 || ties_y == n0 {
        return Ok(TauOutcome::Degenerate {
            all_x_tied: ties_x == n0,
            all_y_tied: ties_y == n0,
        });
    }
    let concordant = n0 + ties_xy - ties_x - ties_y - discordant;
    let s = concordant as f64 - discordant as f64;
    let tau = s / ((n0 - ties_x) as f64 * (n0 - ties_y) as f64).sqrt();

    let nf = n as f64;
    let sum = |g: &[u64], f: &dyn Fn(f64) -> f64| g.iter().map(|&t| f(t as f64)).sum::<f64>();
    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let vt = sum(&x_groups, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = sum(&y_groups, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let v1 = sum(&x_groups, &|t| t * (t - 1.0)) * sum(&y_groups, &|t| t * (t - 1.0))
        / (2.0 * nf * (nf - 1.0));
    let v2 = if n > 2 {
        sum(&x_groups, &|t| t * (t - 1.0) * (t - 2.0))
            * sum(&y_groups, &|t| t * (t - 1.0) * (t - 2.0))
            / (9.0 * nf * (nf - 1.0) * (nf - 2.0))
    } else {
        0.0
    };
    let var_s = (v0 - vt - vu) / 18.0 + v1 + v2;
    let p_value = if var_s > 0.0 {
        let z = s.abs() / var_s.sqrt();
        statrs::function::erf::erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
    } else {
        1.0
    };

    Ok(TauOutcome::Value(KendallTau {
        tau: tau.clamp(-1.0, 1.0),
        p_value,
        n,
        concordant,
        discordant,
        ties_x,
        ties_y,
        ties_xy,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub value: f64,
    pub observed: f64,
    pub expected: f64,
    /// Chance agreement was 1, so the ratio is undefined; `value` is then 1
    /// when observed agreement is 1 and 0 otherwise.
    pub degenerate: bool,
}

/// Cohen's kappa with chance agreement from the product of marginals.
pub fn cohen_kappa(a: &[TriValue], b: &[TriValue]) -> Result<Kappa, MetricError> {
    check_lengths(a, b)?;
    let n = a.len() as f64;
    let mut ma = [0usize; 3];
    let mut mb = [0usize; 3];
    let mut agree = 0usize;
    for (x, y) in a.iter().zip(b) {
        ma[x.index()] += 1;
        mb[y.index()] += 1;
        if x == y {
            agree += 1;
        }
    }
    let observed = agree as f64 / n;
    let expected: f64 = (0..3)
        .map(|i| (ma[i] as f64 / n) * (mb[i] as f64 / n))
        .sum();
    if (1.0 - expected).abs() < 1e-12 {
        let value = if agree == a.len() { 1.0 } else { 0.0 };
        return Ok(Kappa {
            value,
            observed,
            expected,
            degenerate: true,
        });
    }
    Ok(Kappa {
        value: (observed - expected) / (1.0 - expected),
        observed,
        expected,
        degenerate: false,
    })
}
