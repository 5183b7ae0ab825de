//! Source-recovery and fit metrics.

use std::io::Write;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::contrast::{pairwise_sum, ContrastEstimate};
use crate::diffmath::linalg::Matrix;
use crate::error::{Error, Result};
use crate::flows::FlowModel;
use crate::mixing::{MixingFunction, SourcePrior};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(x: ArrayView1<f64>) -> Array1<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = Array1::zeros(x.len());
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn centered_ranks(a: ArrayView2<f64>, which: &'static str) -> Result<Vec<(Array1<f64>, f64)>> {
    a.columns()
        .into_iter()
        .enumerate()
        .map(|(j, col)| {
            let mut r = average_ranks(col);
            let mean = r.mean().expect("non-empty");
            r -= mean;
            let norm = r.dot(&r).sqrt();
            if norm == 0.0 {
                return Err(Error::ConstantColumn { matrix: which, column: j });
            }
            Ok((r, norm))
        })
        .collect()
}

/// Spearman correlations between the columns of `a` (rows of the result)
/// and the columns of `b`.
pub fn spearman_matrix(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Matrix> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            op: "spearman_matrix",
            lhs: a.dim(),
            rhs: b.dim(),
        });
    }
    if a.nrows() < 3 {
        return Err(Error::invalid("spearman correlation needs at least 3 rows"));
    }
    let ra = centered_ranks(a, "the first matrix")?;
    let rb = centered_ranks(b, "the second matrix")?;
    Ok(Matrix::from_shape_fn((a.ncols(), b.ncols()), |(i, j)| {
        (ra[i].0.dot(&rb[j].0) / (ra[i].1 * rb[j].1)).clamp(-1.0, 1.0)
    }))
}

/// Minimum-cost perfect matching on a square cost matrix. Returns the
/// column assigned to each row and the total cost.
pub fn hungarian(cost: ArrayView2<f64>) -> Result<(Vec<usize>, f64)> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(Error::ShapeMismatch {
            op: "hungarian",
            lhs: cost.dim(),
            rhs: (n, n),
        });
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("hungarian needs finite costs"));
    }
    // potentials method, 1-based with a sentinel column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    Ok((assignment, total))
}

/// Matching of true to recovered sources by absolute Spearman correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MccResult {
    pub mcc: f64,
    /// Recovered column matched to each true source.
    pub assignment: Vec<usize>,
    /// Absolute correlation of each matched pair.
    pub matched: Vec<f64>,
}

pub fn mcc(true_sources: ArrayView2<f64>, recovered: ArrayView2<f64>) -> Result<MccResult> {
    let rho = spearman_matrix(true_sources, recovered)?;
    let cost = rho.mapv(|r| -r.abs());
    let (assignment, _) = hungarian(cost.view())?;
    let matched: Vec<f64> = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| rho[[i, j]].abs())
        .collect();
    let mcc = matched.iter().sum::<f64>() / matched.len() as f64;
    Ok(MccResult {
        mcc,
        assignment,
        matched,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KldEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Monte-Carlo `E_x[log p_true(x) − log p_model(x)]` over samples of the
/// true generative process.
pub fn kld_estimate(
    mixing: &MixingFunction,
    prior: &SourcePrior,
    model: &FlowModel,
    sample_count: usize,
    seed: u64,
) -> Result<KldEstimate> {
    if sample_count < 100 {
        return Err(Error::invalid("kld_estimate needs at least 100 samples"));
    }
    if mixing.dim() != model.n || prior.n != model.n {
        return Err(Error::invalid("mixing, prior and model dimensions differ"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = prior.sample(sample_count, &mut rng);
    let x = mixing.forward_batch(s.view());
    let model_ll = model.log_likelihood_batch(x.view())?;
    let diffs = x
        .rows()
        .into_iter()
        .zip(model_ll.iter())
        .map(|(row, &ll)| Ok(mixing.true_log_density(prior, row)? - ll))
        .collect::<Result<Vec<f64>>>()?;
    let est = ContrastEstimate::from_samples(&diffs);
    debug_assert_eq!(est.value, pairwise_sum(&diffs) / diffs.len() as f64);
    Ok(KldEstimate {
        value: est.value,
        std_error: est.std_error,
    })
}

/// One row of a recovery-style results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub mixing_seed: u64,
    #[serde(rename = "L")]
    pub layers: usize,
    pub n: usize,
    pub reg_kind: String,
    pub strength: f64,
    pub run_seed: u64,
    pub mcc: f64,
    pub kld: f64,
    pub kld_se: f64,
    pub cima: f64,
    pub cima_se: f64,
    pub assignment: Vec<usize>,
    pub matched: Vec<f64>,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str = "mixing_seed,L,n,reg_kind,strength,run_seed,mcc,kld,kld_se,cima,cima_se";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.mixing_seed,
            self.layers,
            self.n,
            self.reg_kind,
            self.strength,
            self.run_seed,
            self.mcc,
            self.kld,
            self.kld_se,
            self.cima,
            self.cima_se
        )
    }

    pub fn write_csv<W: Write>(records: &[MetricsRecord], mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in records {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn ranks_average_ties() {
        let r = average_ranks(array![3.0, 1.0, 3.0, 2.0].view());
        assert_eq!(r, array![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_hand_cases() {
        let a = array![[1.0], [2.0], [3.0], [4.0]];
        let b = array![[8.0], [6.0], [4.0], [2.0]];
        assert_abs_diff_eq!(spearman_matrix(a.view(), b.view()).unwrap()[[0, 0]], -1.0, epsilon = 1e-15);
        let c = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        match spearman_matrix(c.view(), c.view()) {
            Err(Error::ConstantColumn { column: 1, .. }) => {}
            other => panic!("expected constant column error, got {other:?}"),
        }
        assert!(spearman_matrix(a.slice(ndarray::s![..2, ..]), b.slice(ndarray::s![..2, ..])).is_err());
    }

    #[test]
    fn hungarian_small_cases() {
        let (a, t) = hungarian(array![[0.0, 1.0], [1.0, 0.0]].view()).unwrap();
        assert_eq!((a, t), (vec![0, 1], 0.0));
        let (a, t) = hungarian(array![[1.0, 2.0], [2.0, 1.0]].view()).unwrap();
        assert_eq!((a, t), (vec![0, 1], 2.0));
        let (a, t) = hungarian(array![[5.0, 1.0, 9.0], [1.0, 7.0, 3.0], [2.0, 2.0, 0.5]].view()).unwrap();
        assert_eq!((a, t), (vec![1, 0, 2], 2.5));
        assert!(hungarian(array![[f64::NAN]].view()).is_err());
    }
}
