use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// One agglomeration step. Node ids `0..n` are leaves; merge `i` creates node `n + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub labels: Vec<String>,
    pub merges: Vec<Merge>,
}

/// Average-linkage clustering on `1 - |r|`.
pub fn dendrogram(r: &DMatrix<f64>, labels: &[String]) -> Result<Dendrogram> {
    let n = r.nrows();
    if n < 2 || r.ncols() != n || labels.len() != n {
        return Err(Error::invalid("dendrogram needs a square matrix of at least 2 labelled items"));
    }
    let mut dist = DMatrix::from_fn(n, n, |i, j| 1.0 - r[(i, j)].abs().min(1.0));
    let mut active: Vec<Option<(usize, usize)>> = (0..n).map(|i| Some((i, 1))).collect();
    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if active[i].is_none() {
                continue;
            }
            for j in i + 1..n {
                if active[j].is_none() {
                    continue;
                }
                let d = dist[(i, j)];
                if best.map_or(true, |(_, _, bd)| d < bd - 1e-15) {
                    best = Some((i, j, d));
                }
            }
        }
        let (i, j, d) = best.expect("at least two active clusters");
        let (id_i, size_i) = active[i].unwrap();
        let (id_j, size_j) = active[j].unwrap();
        let size = size_i + size_j;
        for m in 0..n {
            if m == i || m == j || active[m].is_none() {
                continue;
            }
            let nd = (dist[(i, m)] * size_i as f64 + dist[(j, m)] * size_j as f64) / size as f64;
            dist[(i, m)] = nd;
            dist[(m, i)] = nd;
        }
        active[j] = None;
        active[i] = Some((n + step, size));
        merges.push(Merge {
            left: id_i.min(id_j),
            right: id_i.max(id_j),
            height: d,
            size,
        });
    }
    Ok(Dendrogram {
        labels: labels.to_vec(),
        merges,
    })
}

/// Dendrogram over the rows of a loading matrix, using the cosine between
/// loading rows as the similarity.
pub fn dendrogram_from_loadings(loadings: &DMatrix<f64>, labels: &[String]) -> Result<Dendrogram> {
    let p = loadings.nrows();
    let norms: Vec<f64> = (0..p).map(|i| loadings.row(i).norm().max(1e-300)).collect();
    let sim = DMatrix::from_fn(p, p, |i, j| {
        (loadings.row(i).dot(&loadings.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0)
    });
    dendrogram(&sim, labels)
}

impl Dendrogram {
    pub fn n_leaves(&self) -> usize {
        self.labels.len()
    }

    /// Leaves under a node id.
    pub fn leaves(&self, node: usize) -> BTreeSet<usize> {
        let n = self.n_leaves();
        let mut out = BTreeSet::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                out.insert(x);
            } else {
                let m = &self.merges[x - n];
                stack.push(m.left);
                stack.push(m.right);
            }
        }
        out
    }

    /// The two leaf sets joined by the final merge.
    pub fn top_split(&self) -> (BTreeSet<usize>, BTreeSet<usize>) {
        let last = self.merges.last().expect("at least one merge");
        (self.leaves(last.left), self.leaves(last.right))
    }

    /// Left-to-right leaf order for drawing.
    pub fn leaf_order(&self) -> Vec<usize> {
        let n = self.n_leaves();
        let mut out = Vec::with_capacity(n);
        let mut stack = vec![n + self.merges.len() - 1];
        while let Some(x) = stack.pop() {
            if x < n {
                out.push(x);
            } else {
                let m = &self.merges[x - n];
                stack.push(m.right);
                stack.push(m.left);
            }
        }
        out
    }

    /// Nested `{"height", "children": [...]}` / `{"label"}` object.
    pub fn to_nested_json(&self) -> Value {
        fn node(d: &Dendrogram, id: usize) -> Value {
            let n = d.n_leaves();
            if id < n {
                json!({"label": d.labels[id]})
            } else {
                let m = &d.merges[id - n];
                json!({
                    "height": m.height,
                    "size": m.size,
                    "children": [node(d, m.left), node(d, m.right)],
                })
            }
        }
        node(self, self.n_leaves() + self.merges.len() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{i}")).collect()
    }

    #[test]
    fn two_items_merge_at_their_distance() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, -0.4, -0.4, 1.0]);
        let d = dendrogram(&r, &labels(2)).unwrap();
        assert_eq!(d.merges.len(), 1);
        assert!((d.merges[0].height - 0.6).abs() < 1e-15);
    }

    #[test]
    fn closest_pair_merges_first() {
        let r = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, 0.0, 0.9, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let d = dendrogram(&r, &labels(3)).unwrap();
        assert_eq!((d.merges[0].left, d.merges[0].right), (0, 1));
        assert!(d.merges[1].height >= d.merges[0].height);
        assert_eq!(d.leaf_order().len(), 3);
        assert!(dendrogram(&DMatrix::identity(1, 1), &labels(1)).is_err());
    }
}
