//! Marginal statistics, screening, and the thresholded Gram graph restricted
//! to screening survivors, decomposed into connected components.
//!
//! The Gram matrix is only ever computed on survivor pairs; the full p x p
//! product never materializes.

use rayon::prelude::*;

use crate::matrix::{dot, Matrix};

/// Marginal inner products y_tilde_i = <X_col_i, Y>.
#[derive(Debug, Clone)]
pub struct MarginalStats {
    pub y_tilde: Vec<f64>,
}

pub fn marginal_stats(x: &Matrix, y: &[f64]) -> MarginalStats {
    assert_eq!(
        x.n_rows(),
        y.len(),
        "marginal_stats: X has {} rows, Y has {}",
        x.n_rows(),
        y.len()
    );
    let y_tilde: Vec<f64> = (0..x.n_cols())
        .into_par_iter()
        .map(|j| dot(x.col(j), y))
        .collect();
    MarginalStats { y_tilde }
}

/// Two-sided screening: indices with |y_tilde_i| > t1, ascending.
pub fn screen(stats: &MarginalStats, t1: f64) -> Vec<usize> {
    stats
        .y_tilde
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > t1)
        .map(|(i, _)| i)
        .collect()
}

/// The asymptotic Gram threshold 1 / ln(p)^2.
pub fn default_gram_threshold(p: usize) -> f64 {
    let lp = (p as f64).ln();
    1.0 / (lp * lp)
}

/// Finite-sample threshold: sample Gram entries of uncorrelated unit columns
/// have scale ~ 1/sqrt(n), so noise edges are suppressed at z0 / sqrt(n).
/// The asymptotic 1/ln(p)^2 dominates once p is large relative to n.
pub fn noise_floor_threshold(p: usize, n: usize, z0: f64) -> f64 {
    default_gram_threshold(p).max(z0 / (n as f64).sqrt())
}

/// Thresholded Gram graph over survivors with its connected components.
#[derive(Debug, Clone)]
pub struct ComponentGraph {
    /// Sorted survivor indices (into 1..=p of the original problem).
    pub survivors: Vec<usize>,
    /// Stored off-diagonal entries (local survivor positions, i < j) that
    /// passed the threshold; symmetric by construction.
    pub edges: Vec<(usize, usize, f64)>,
    /// Diagonal Gram entries for every survivor.
    pub diag: Vec<f64>,
    /// Connected components as sorted local survivor positions.
    pub components: Vec<Vec<usize>>,
    pub max_component_size: usize,
    pub threshold: f64,
}

impl ComponentGraph {
    pub fn component_global(&self, c: usize) -> Vec<usize> {
        self.components[c].iter().map(|&l| self.survivors[l]).collect()
    }

    /// Diagnostic dump: component_id,member_index (1-based member indices).
    pub fn components_csv(&self) -> String {
        let mut out = String::from("component_id,member_index\n");
        for (cid, comp) in self.components.iter().enumerate() {
            for &local in comp {
                out.push_str(&format!("{},{}\n", cid, self.survivors[local] + 1));
            }
        }
        out
    }
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

/// Compute the survivor-restricted Gram, threshold off-diagonals strictly at
/// `threshold`, and decompose into connected components.
pub fn restricted_gram(x: &Matrix, survivors: &[usize], threshold: f64) -> ComponentGraph {
    let m = survivors.len();
    debug_assert!(survivors.windows(2).all(|w| w[0] < w[1]));

    let diag: Vec<f64> = survivors
        .par_iter()
        .map(|&j| dot(x.col(j), x.col(j)))
        .collect();

    // Entries above threshold, computed per survivor pair.
    let edges: Vec<(usize, usize, f64)> = (0..m)
        .into_par_iter()
        .flat_map_iter(|a| {
            let col_a = x.col(survivors[a]);
            (a + 1..m).filter_map(move |b| {
                let v = dot(col_a, x.col(survivors[b]));
                if v.abs() > threshold {
                    Some((a, b, v))
                } else {
                    None
                }
            })
        })
        .collect();

    let mut uf = UnionFind::new(m);
    for &(a, b, _) in &edges {
        uf.union(a, b);
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for a in 0..m {
        let root = uf.find(a);
        groups.entry(root).or_default().push(a);
    }
    let components: Vec<Vec<usize>> = groups.into_values().collect();
    let max_component_size = components.iter().map(|c| c.len()).max().unwrap_or(0);

    ComponentGraph {
        survivors: survivors.to_vec(),
        edges,
        diag,
        components,
        max_component_size,
        threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::seeding::{replicate_rng, Stream};
    use rand::Rng;

    #[test]
    fn identity_design_returns_y() {
        let x = Matrix::identity(3);
        let stats = marginal_stats(&x, &[1.0, 2.0, 3.0]);
        assert_eq!(stats.y_tilde, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn ones_column_sums_y() {
        let x = Matrix::from_rows(&[&[1.0], &[1.0], &[1.0], &[1.0]]).unwrap();
        let stats = marginal_stats(&x, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(stats.y_tilde, vec![4.0]);
    }

    #[test]
    fn marginal_stats_matches_naive_loop() {
        let mut rng = replicate_rng(11, 0, Stream::Design);
        let n = 50;
        let p = 20;
        let mut x = Matrix::zeros(n, p);
        for j in 0..p {
            for i in 0..n {
                x.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let stats = marginal_stats(&x, &y);
        for j in 0..p {
            let mut s = 0.0;
            for i in 0..n {
                s += x.get(i, j) * y[i];
            }
            assert!((stats.y_tilde[j] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn screen_definition_and_sign() {
        let stats = MarginalStats {
            y_tilde: vec![3.0, 1.0, -4.0],
        };
        // 1-based {1, 3} = 0-based {0, 2}
        assert_eq!(screen(&stats, 2.5), vec![0, 2]);
        assert!(screen(&stats, f64::INFINITY).is_empty());
    }

    #[test]
    fn empty_survivors_empty_graph() {
        let x = Matrix::identity(4);
        let g = restricted_gram(&x, &[], 0.1);
        assert!(g.components.is_empty());
        assert_eq!(g.max_component_size, 0);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn orthogonal_columns_are_singletons() {
        // Two exactly orthogonal columns: zero off-diagonal falls below any
        // positive threshold.
        let x = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]).unwrap();
        let g = restricted_gram(&x, &[0, 1], 1e-12);
        assert_eq!(g.components.len(), 2);
        assert_eq!(g.max_component_size, 1);
    }

    /// Dense BFS over the full thresholded Gram; the independent oracle for
    /// component structure.
    fn dense_bfs_components(x: &Matrix, survivors: &[usize], threshold: f64) -> Vec<Vec<usize>> {
        let p = x.n_cols();
        let mut adj = vec![vec![false; p]; p];
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    let v = dot(x.col(i), x.col(j));
                    adj[i][j] = v.abs() > threshold;
                }
            }
        }
        let inset: std::collections::HashSet<usize> = survivors.iter().copied().collect();
        let mut seen = vec![false; p];
        let mut comps = Vec::new();
        for &s in survivors {
            if seen[s] {
                continue;
            }
            let mut queue = vec![s];
            let mut comp = Vec::new();
            seen[s] = true;
            while let Some(u) = queue.pop() {
                comp.push(u);
                for v in 0..p {
                    if !seen[v] && inset.contains(&v) && adj[u][v] {
                        seen[v] = true;
                        queue.push(v);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps.sort();
        comps
    }

    #[test]
    fn components_match_dense_bfs_oracle() {
        let mut rng = replicate_rng(12, 0, Stream::Design);
        let n = 30;
        let p = 10;
        let mut x = Matrix::zeros(n, p);
        for j in 0..p {
            for i in 0..n {
                let v: f64 = rng.gen_range(-1.0..1.0);
                x.set(i, j, v / (n as f64).sqrt());
            }
        }
        let survivors: Vec<usize> = (0..p).collect();
        let threshold = 0.05;
        let g = restricted_gram(&x, &survivors, threshold);
        let mut got: Vec<Vec<usize>> = g
            .components
            .iter()
            .map(|c| {
                let mut v: Vec<usize> = c.iter().map(|&l| g.survivors[l]).collect();
                v.sort_unstable();
                v
            })
            .collect();
        got.sort();
        let expected = dense_bfs_components(&x, &survivors, threshold);
        assert_eq!(got, expected);
    }

    #[test]
    fn restriction_soundness_on_subset() {
        // Components on a survivor subset equal the induced subgraph of the
        // full thresholded Gram.
        let mut rng = replicate_rng(13, 0, Stream::Design);
        let n = 40;
        let p = 12;
        let mut x = Matrix::zeros(n, p);
        for j in 0..p {
            for i in 0..n {
                let v: f64 = rng.gen_range(-1.0..1.0);
                x.set(i, j, v / (n as f64).sqrt());
            }
        }
        let survivors: Vec<usize> = vec![0, 2, 3, 7, 8, 11];
        let threshold = 0.04;
        let g = restricted_gram(&x, &survivors, threshold);
        let mut got: Vec<Vec<usize>> = g
            .components
            .iter()
            .map(|c| c.iter().map(|&l| g.survivors[l]).collect())
            .collect();
        got.sort();
        let expected = dense_bfs_components(&x, &survivors, threshold);
        assert_eq!(got, expected);
    }

    #[test]
    fn stored_edges_all_exceed_threshold() {
        let mut rng = replicate_rng(14, 0, Stream::Design);
        let n = 25;
        let p = 8;
        let mut x = Matrix::zeros(n, p);
        for j in 0..p {
            for i in 0..n {
                let v: f64 = rng.gen_range(-1.0..1.0);
                x.set(i, j, v / 5.0);
            }
        }
        let g = restricted_gram(&x, &(0..p).collect::<Vec<_>>(), 0.03);
        for &(a, b, v) in &g.edges {
            assert!(a < b);
            assert!(v.abs() > 0.03);
        }
        assert_eq!(g.diag.len(), p);
    }
}
