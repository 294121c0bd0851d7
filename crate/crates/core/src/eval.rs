//! Regression/classification metrics, silhouette score and PCA export.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::crystal::CrystalSystem;
use crate::{Error, Result};

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "mae: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

fn check_labels(preds: &[usize], targets: &[usize]) -> Result<()> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted labels vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if let Some(l) = preds
        .iter()
        .chain(targets)
        .find(|l| **l >= CrystalSystem::COUNT)
    {
        return Err(Error::InvalidArgument(format!(
            "class label {l} outside 0..{}",
            CrystalSystem::COUNT
        )));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], targets: &[usize]) -> Result<f64> {
    check_labels(preds, targets)?;
    let correct = preds.iter().zip(targets).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Accuracy within each target class; `None` for classes with no targets.
pub fn per_class_accuracy(
    preds: &[usize],
    targets: &[usize],
) -> Result<[Option<f64>; CrystalSystem::COUNT]> {
    check_labels(preds, targets)?;
    let mut correct = [0usize; CrystalSystem::COUNT];
    let mut total = [0usize; CrystalSystem::COUNT];
    for (p, t) in preds.iter().zip(targets) {
        total[*t] += 1;
        if p == t {
            correct[*t] += 1;
        }
    }
    let mut out = [None; CrystalSystem::COUNT];
    for k in 0..CrystalSystem::COUNT {
        if total[k] > 0 {
            out[k] = Some(correct[k] as f64 / total[k] as f64);
        }
    }
    Ok(out)
}

/// `matrix[target][pred]` counts.
pub fn confusion_matrix(
    preds: &[usize],
    targets: &[usize],
) -> Result<[[usize; CrystalSystem::COUNT]; CrystalSystem::COUNT]> {
    check_labels(preds, targets)?;
    let mut m = [[0; CrystalSystem::COUNT]; CrystalSystem::COUNT];
    for (p, t) in preds.iter().zip(targets) {
        m[*t][*p] += 1;
    }
    Ok(m)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean silhouette with Euclidean distance. Singleton clusters score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let n = points.len();
    if n != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "silhouette: {n} points vs {} labels",
            labels.len()
        )));
    }
    if n < 3 {
        return Err(Error::InvalidArgument(
            "silhouette needs at least 3 points".into(),
        ));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InvalidArgument(
            "silhouette needs at least two distinct labels".into(),
        ));
    }
    let slot = |l: usize| classes.binary_search(&l).unwrap();
    let mut sizes = vec![0usize; classes.len()];
    for l in labels {
        sizes[slot(*l)] += 1;
    }

    let mut total = 0.0;
    let mut sums = vec![0.0; classes.len()];
    for i in 0..n {
        let own = slot(labels[i]);
        if sizes[own] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[slot(labels[j])] += euclidean(&points[i], &points[j]);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..classes.len())
            .filter(|k| *k != own)
            .map(|k| sums[k] / sizes[k] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Projection of mean-centred rows onto the top three principal axes.
///
/// Each axis is oriented so its largest-magnitude component is positive.
/// Axes whose variance is below 1e-12 of the leading variance are
/// zero-filled.
pub fn pca3(points: &[Vec<f64>]) -> Result<Vec<[f64; 3]>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::InvalidArgument(
            "pca3 needs at least 3 points".into(),
        ));
    }
    let d = points[0].len();
    if d < 3 || points.iter().any(|p| p.len() != d) {
        return Err(Error::ShapeMismatch(format!(
            "pca3 needs rows of equal dimension >= 3 (first row has {d})"
        )));
    }
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|a, b| {
        eig.eigenvalues[*b]
            .total_cmp(&eig.eigenvalues[*a])
            .then(a.cmp(b))
    });
    let lead = eig.eigenvalues[order[0]].max(0.0);

    let mut axes: Vec<Option<Vec<f64>>> = Vec::with_capacity(3);
    for &k in order.iter().take(3) {
        if lead <= 0.0 || eig.eigenvalues[k] <= 1e-12 * lead {
            axes.push(None);
            continue;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        axes.push(Some(v));
    }
    Ok((0..n)
        .map(|i| {
            let mut out = [0.0; 3];
            for (k, axis) in axes.iter().enumerate() {
                if let Some(v) = axis {
                    out[k] = (0..d).map(|j| centred[(i, j)] * v[j]).sum();
                }
            }
            out
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub crystal_system: CrystalSystem,
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Metrics for one model on one split, in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub split: String,
    /// Å, averaged over a, b, c.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mae_lattice_lengths: Option<f64>,
    /// Degrees, averaged over α, β, γ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mae_lattice_angles: Option<f64>,
    /// eV/atom.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mae_formation_energy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    /// Present classes only, in cubic → triclinic order.
    #[serde(default)]
    pub per_class_accuracy: Vec<ClassAccuracy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<usize>>>,
    /// Silhouette of the head-input embeddings against crystal-system labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub silhouette: Option<f64>,
    /// Which space the silhouette was computed in.
    pub silhouette_space: String,
    pub n_evaluated: usize,
    pub counts: SplitCounts,
}

impl EvalReport {
    pub fn class_accuracy(&self, system: CrystalSystem) -> Option<f64> {
        self.per_class_accuracy
            .iter()
            .find(|c| c.crystal_system == system)
            .map(|c| c.accuracy)
    }
}
