//! Small undirected-graph helpers over index sets.

use std::collections::VecDeque;

use nalgebra::DMatrix;

/// Laplacian of the communication graph induced on a set of active inverters.
#[derive(Debug, Clone, PartialEq)]
pub struct CommLaplacian {
    /// Active inverter indices in ascending order; row `k` belongs to `active[k]`.
    pub active: Vec<usize>,
    /// Surviving edges, as indices into the case bus list.
    pub edges: Vec<(usize, usize)>,
    pub matrix: DMatrix<f64>,
    pub connected: bool,
}

/// Builds the Laplacian of the subgraph induced on `active`.
///
/// Edges touching an inactive vertex are dropped.
pub fn laplacian(edges: &[(usize, usize)], active: &[usize]) -> CommLaplacian {
    let mut active = active.to_vec();
    active.sort_unstable();
    active.dedup();
    let pos = |v: usize| active.binary_search(&v).ok();
    let m = active.len();
    let mut l = DMatrix::zeros(m, m);
    let mut kept = Vec::new();
    for &(a, b) in edges {
        if let (Some(i), Some(j)) = (pos(a), pos(b)) {
            if i == j {
                continue;
            }
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
            kept.push((a.min(b), a.max(b)));
        }
    }
    let connected = is_connected(&active, &kept);
    CommLaplacian {
        active,
        edges: kept,
        matrix: l,
        connected,
    }
}

/// Connected components of the graph induced on `vertices`, each sorted, ordered by first vertex.
pub fn components(vertices: &[usize], edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut verts = vertices.to_vec();
    verts.sort_unstable();
    verts.dedup();
    let pos = |v: usize| verts.binary_search(&v).ok();
    let mut adj = vec![Vec::new(); verts.len()];
    for &(a, b) in edges {
        if let (Some(i), Some(j)) = (pos(a), pos(b)) {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    let mut seen = vec![false; verts.len()];
    let mut out = Vec::new();
    for s in 0..verts.len() {
        if seen[s] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([s]);
        seen[s] = true;
        while let Some(u) = queue.pop_front() {
            comp.push(verts[u]);
            for &w in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

pub fn is_connected(vertices: &[usize], edges: &[(usize, usize)]) -> bool {
    components(vertices, edges).len() <= 1
}

/// Breadth-first spanning forest over `0..n`: for each vertex its parent and
/// the index of the edge used to reach it (`None` at roots). Also returns the
/// visiting order.
pub fn spanning_tree(n: usize, edges: &[(usize, usize)]) -> (Vec<Option<(usize, usize)>>, Vec<usize>) {
    let mut adj = vec![Vec::new(); n];
    for (k, &(a, b)) in edges.iter().enumerate() {
        adj[a].push((b, k));
        adj[b].push((a, k));
    }
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(w, k) in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some((u, k));
                    queue.push_back(w);
                }
            }
        }
    }
    (parent, order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn path_graph() {
        let l = laplacian(&[(0, 1), (1, 2)], &[0, 1, 2]);
        let expect = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(l.matrix, expect);
        assert!(l.connected);
    }

    #[test]
    fn star_loses_its_center() {
        let edges = [(0, 1), (0, 2), (0, 3)];
        assert!(laplacian(&edges, &[0, 1, 2, 3]).connected);
        let l = laplacian(&edges, &[1, 2, 3]);
        assert!(!l.connected);
        assert_eq!(l.matrix, DMatrix::zeros(3, 3));
    }

    #[test]
    fn components_are_sorted() {
        let c = components(&[5, 1, 3, 7], &[(7, 1), (3, 5)]);
        assert_eq!(c, vec![vec![1, 7], vec![3, 5]]);
    }

    proptest! {
        #[test]
        fn laplacian_properties(n in 2usize..8, raw in proptest::collection::vec((0usize..8, 0usize..8), 0..20)) {
            let mut edges: Vec<(usize, usize)> = raw
                .into_iter()
                .filter(|&(a, b)| a < n && b < n && a != b)
                .map(|(a, b)| (a.min(b), a.max(b)))
                .collect();
            edges.sort_unstable();
            edges.dedup();
            let active: Vec<usize> = (0..n).collect();
            let l = laplacian(&edges, &active);
            let ones = nalgebra::DVector::from_element(n, 1.0);
            prop_assert_eq!(&l.matrix * ones, nalgebra::DVector::zeros(n));
            prop_assert_eq!(l.matrix.transpose(), l.matrix.clone());
            let eig = l.matrix.clone().symmetric_eigen();
            let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert!(ev[0] > -1e-12);
            if l.connected {
                prop_assert!(ev[1] > 1e-9);
            } else {
                prop_assert!(ev[1] < 1e-9);
            }
        }
    }
}
