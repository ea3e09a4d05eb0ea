//! K-means labelling and the purchase-like synthetic dataset.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{default_feature_names, Dataset, Record};
use crate::seed;

pub const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the {distinct} distinct rows")]
    TooFewRows { k: usize, distinct: usize },
    #[error("purchase-like parameters must be positive")]
    BadParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Vec<Record>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Nearest centroid, lowest index on ties.
fn nearest(r: &[f64], centroids: &[Record]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = dist2(r, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn distinct_rows(rows: &[Record]) -> usize {
    let mut v: Vec<&Record> = rows.iter().collect();
    v.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    v.dedup();
    v.len()
}

/// k-means++ seeding followed by Lloyd iterations until the assignment
/// stops changing or [`MAX_ITERATIONS`] is reached. A cluster left empty
/// is re-seeded at the point farthest from its current centroid.
pub fn kmeans(rows: &[Record], k: usize, seed_value: u64) -> Result<KMeans, ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    let distinct = distinct_rows(rows);
    if k > distinct {
        return Err(ClusterError::TooFewRows { k, distinct });
    }
    let mut rng = seed::rng(seed_value, &[]);
    let n = rows.len();
    let mut centroids: Vec<Record> = vec![rows[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| dist2(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut pick = rng.gen_range(0.0..total);
        let mut chosen = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && pick < d {
                chosen = i;
                break;
            }
            pick -= d;
        }
        while d2[chosen] == 0.0 {
            chosen -= 1;
        }
        centroids.push(rows[chosen].clone());
        for (i, r) in rows.iter().enumerate() {
            d2[i] = d2[i].min(dist2(r, &centroids[centroids.len() - 1]));
        }
    }

    let f = rows[0].len();
    let mut labels = vec![usize::MAX; n];
    let mut inertia = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut changed = false;
        let mut wcss = 0.0;
        for (i, r) in rows.iter().enumerate() {
            let (c, d) = nearest(r, &centroids);
            wcss += d;
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        inertia.push(wcss);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; f]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in rows.iter().zip(&labels) {
            counts[l] += 1;
            for j in 0..f {
                sums[l][j] += r[j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(&rows[a], &centroids[labels[a]])
                            .total_cmp(&dist2(&rows[b], &centroids[labels[b]]))
                            .then(b.cmp(&a))
                    })
                    .expect("rows are non-empty");
                centroids[c] = rows[far].clone();
            }
        }
    }
    Ok(KMeans {
        labels,
        centroids,
        inertia,
        iterations,
    })
}

pub fn kmeans_label(rows: &[Record], k: usize, seed_value: u64) -> Result<Vec<usize>, ClusterError> {
    Ok(kmeans(rows, k, seed_value)?.labels)
}

/// Shape of a purchase-like dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurchaseShape {
    pub users: usize,
    pub features: usize,
    pub classes: usize,
}

/// 30 binary features, 2 classes.
pub const PURCHASE_30F_2C: PurchaseShape = PurchaseShape {
    users: 1000,
    features: 30,
    classes: 2,
};

/// 20 binary features, 5 classes.
pub const PURCHASE_20F_5C: PurchaseShape = PurchaseShape {
    users: 1000,
    features: 20,
    classes: 5,
};

/// Binary user × product table drawn from `n_classes` Bernoulli profiles
/// (per-feature probabilities uniform on `[0.05, 0.95]`), then labelled by
/// k-means with `k = n_classes`.
pub fn make_purchase_like(
    n_users: usize,
    n_features: usize,
    n_classes: usize,
    seed_value: u64,
) -> Result<Dataset, ClusterError> {
    if n_users == 0 || n_features == 0 || n_classes == 0 {
        return Err(ClusterError::BadParams);
    }
    let mut rng = seed::rng(seed_value, &[0]);
    let profiles: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..n_features).map(|_| rng.gen_range(0.05..0.95)).collect())
        .collect();
    let rows: Vec<Record> = (0..n_users)
        .map(|_| {
            let p = &profiles[rng.gen_range(0..n_classes)];
            p.iter().map(|&q| if rng.gen::<f64>() < q { 1.0 } else { 0.0 }).collect()
        })
        .collect();
    let labels = kmeans_label(&rows, n_classes, seed::derive(seed_value, &[1]))?;
    Ok(Dataset::new(
        default_feature_names(n_features),
        (0..n_classes).map(|c| c.to_string()).collect(),
        rows,
        labels,
    )
    .expect("shapes agree"))
}

pub fn make_purchase(shape: PurchaseShape, seed_value: u64) -> Result<Dataset, ClusterError> {
    make_purchase_like(shape.users, shape.features, shape.classes, seed_value)
}
