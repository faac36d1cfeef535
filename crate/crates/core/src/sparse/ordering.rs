//! Fill-reducing orderings for the LDLᵀ factorization.
//!
//! The main ordering is an automatic nested dissection driven by breadth-first
//! level structures: a pseudo-peripheral start node is found, the level set
//! that splits the component roughly in half becomes the separator (trimmed to
//! the nodes that actually touch the next level), and both halves are ordered
//! recursively before the separator. Everything is index-driven, so the result
//! depends only on the sparsity pattern.

use super::csr::CsrMatrix;

const LEAF_SIZE: usize = 48;

/// Symmetric adjacency structure (no self loops).
struct Graph {
    ptr: Vec<usize>,
    adj: Vec<usize>,
}

impl Graph {
    /// Graph on the nodes with `keep[i]`, using the symmetrized pattern of `a`.
    fn from_pattern(a: &CsrMatrix, keep: &[bool]) -> Graph {
        let n = a.nrows();
        let mut deg = vec![0usize; n + 1];
        for i in 0..n {
            if !keep[i] {
                continue;
            }
            for &j in a.row(i).0 {
                if j != i && keep[j] {
                    deg[i + 1] += 1;
                    deg[j + 1] += 1;
                }
            }
        }
        for i in 0..n {
            deg[i + 1] += deg[i];
        }
        let mut next = deg.clone();
        let mut adj = vec![0usize; deg[n]];
        for i in 0..n {
            if !keep[i] {
                continue;
            }
            for &j in a.row(i).0 {
                if j != i && keep[j] {
                    adj[next[i]] = j;
                    next[i] += 1;
                    adj[next[j]] = i;
                    next[j] += 1;
                }
            }
        }
        // Deduplicate each list (both triangles were visited).
        let mut ptr = Vec::with_capacity(n + 1);
        let mut out = Vec::with_capacity(adj.len() / 2 + 1);
        ptr.push(0);
        for i in 0..n {
            let list = &mut adj[deg[i]..deg[i + 1]];
            list.sort_unstable();
            let mut last = usize::MAX;
            for &j in list.iter() {
                if j != last {
                    out.push(j);
                    last = j;
                }
            }
            ptr.push(out.len());
        }
        Graph { ptr, adj: out }
    }

    #[inline]
    fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[self.ptr[i]..self.ptr[i + 1]]
    }
}

struct Dissector<'g> {
    g: &'g Graph,
    /// Label of the subproblem each node currently belongs to.
    part: Vec<u32>,
    level: Vec<u32>,
    next_label: u32,
    order: Vec<usize>,
}

impl<'g> Dissector<'g> {
    /// BFS restricted to nodes labelled `label`; returns nodes grouped by level.
    fn bfs(&mut self, start: usize, label: u32) -> Vec<Vec<usize>> {
        let mut levels = vec![vec![start]];
        self.level[start] = 0;
        let visit = self.next_label;
        self.next_label += 1;
        // Temporarily relabel visited nodes, then restore.
        self.part[start] = visit;
        loop {
            let mut next = Vec::new();
            for &u in levels.last().unwrap() {
                for &v in self.g.neighbors(u) {
                    if self.part[v] == label {
                        self.part[v] = visit;
                        self.level[v] = levels.len() as u32;
                        next.push(v);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            levels.push(next);
        }
        for l in &levels {
            for &u in l {
                self.part[u] = label;
            }
        }
        levels
    }

    fn degree_in(&self, u: usize, label: u32) -> usize {
        self.g.neighbors(u).iter().filter(|&&v| self.part[v] == label).count()
    }

    fn pseudo_peripheral(&mut self, start: usize, label: u32) -> Vec<Vec<usize>> {
        let mut levels = self.bfs(start, label);
        for _ in 0..6 {
            let last = levels.last().unwrap();
            let cand = *last.iter().min_by_key(|&&u| (self.degree_in(u, label), u)).unwrap();
            let trial = self.bfs(cand, label);
            if trial.len() > levels.len() {
                levels = trial;
            } else {
                break;
            }
        }
        levels
    }

    /// Orders the nodes in `nodes` (all labelled `label`).
    fn dissect(&mut self, nodes: Vec<usize>, label: u32) {
        if nodes.len() <= LEAF_SIZE {
            self.order.extend(nodes);
            return;
        }
        // Split into connected components first.
        let mut components = Vec::new();
        for &s in &nodes {
            if self.part[s] != label {
                continue;
            }
            let levels = self.bfs(s, label);
            let comp_label = self.next_label;
            self.next_label += 1;
            let mut comp: Vec<usize> = levels.into_iter().flatten().collect();
            comp.sort_unstable();
            for &u in &comp {
                self.part[u] = comp_label;
            }
            components.push((comp, comp_label));
        }
        if components.len() > 1 {
            for (comp, l) in components {
                self.dissect(comp, l);
            }
            return;
        }
        let (comp, label) = components.pop().unwrap();
        if comp.len() <= LEAF_SIZE {
            self.order.extend(comp);
            return;
        }
        let levels = self.pseudo_peripheral(comp[0], label);
        if levels.len() < 3 {
            self.order.extend(comp);
            return;
        }
        for (k, l) in levels.iter().enumerate() {
            for &u in l {
                self.level[u] = k as u32;
            }
        }
        let half = comp.len() / 2;
        let mut acc = 0;
        let mut mid = 1;
        for (k, l) in levels.iter().enumerate() {
            acc += l.len();
            if acc >= half {
                mid = k;
                break;
            }
        }
        mid = mid.clamp(1, levels.len() - 2);

        let lower_label = self.next_label;
        let upper_label = self.next_label + 1;
        let sep_label = self.next_label + 2;
        self.next_label += 3;
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut sep = Vec::new();
        for (k, l) in levels.iter().enumerate() {
            for &u in l {
                if k < mid {
                    lower.push(u);
                } else if k > mid {
                    upper.push(u);
                } else {
                    let touches_upper = self
                        .g
                        .neighbors(u)
                        .iter()
                        .any(|&v| self.part[v] == label && self.level[v] as usize == mid + 1);
                    if touches_upper {
                        sep.push(u);
                    } else {
                        lower.push(u);
                    }
                }
            }
        }
        for &u in &lower {
            self.part[u] = lower_label;
        }
        for &u in &upper {
            self.part[u] = upper_label;
        }
        for &u in &sep {
            self.part[u] = sep_label;
        }
        lower.sort_unstable();
        upper.sort_unstable();
        sep.sort_unstable();
        self.dissect(lower, lower_label);
        self.dissect(upper, upper_label);
        self.order.extend(sep);
    }
}

/// Nested dissection ordering of the rows flagged in `keep` (others are
/// omitted from the result). Returns the elimination order as a list of rows.
pub fn nested_dissection(a: &CsrMatrix, keep: &[bool]) -> Vec<usize> {
    let g = Graph::from_pattern(a, keep);
    let n = a.nrows();
    let nodes: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    let mut d = Dissector {
        g: &g,
        part: vec![u32::MAX; n],
        level: vec![0; n],
        next_label: 1,
        order: Vec::with_capacity(nodes.len()),
    };
    for &u in &nodes {
        d.part[u] = 0;
    }
    d.dissect(nodes, 0);
    d.order
}

/// Ordering for symmetric matrices that may carry zero diagonal entries
/// (constraint rows of saddle-point systems). Rows with a nonzero diagonal are
/// ordered by nested dissection; each zero-diagonal row is then placed right
/// after the last of its neighbours, so it is only eliminated once all the
/// variables it constrains have been. Zero-diagonal rows with no neighbours go
/// last.
pub fn constrained_last(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let keep: Vec<bool> = (0..n).map(|i| a.get(i, i) != 0.0).collect();
    let primal = nested_dissection(a, &keep);
    if primal.len() == n {
        return primal;
    }
    let mut pos = vec![usize::MAX; n];
    for (k, &i) in primal.iter().enumerate() {
        pos[i] = k;
    }
    // Zero-diagonal rows bucketed by the position of their last neighbour.
    let mut after: Vec<Vec<usize>> = vec![Vec::new(); primal.len() + 1];
    for i in 0..n {
        if keep[i] {
            continue;
        }
        let last = a.row(i).0.iter().filter(|&&j| keep[j]).map(|&j| pos[j]).max();
        match last {
            Some(p) => after[p].push(i),
            None => after[primal.len()].push(i),
        }
    }
    let mut order = Vec::with_capacity(n);
    for (k, &i) in primal.iter().enumerate() {
        order.push(i);
        order.extend(after[k].iter().copied());
    }
    order.extend(after[primal.len()].iter().copied());
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::csr::TripletBuilder;

    fn grid_laplacian(k: usize) -> CsrMatrix {
        let n = k * k;
        let mut t = TripletBuilder::new(n, n);
        for j in 0..k {
            for i in 0..k {
                let u = i + k * j;
                t.push(u, u, 4.0);
                if i + 1 < k {
                    t.push(u, u + 1, -1.0);
                    t.push(u + 1, u, -1.0);
                }
                if j + 1 < k {
                    t.push(u, u + k, -1.0);
                    t.push(u + k, u, -1.0);
                }
            }
        }
        t.build()
    }

    #[test]
    fn nested_dissection_is_a_permutation() {
        let a = grid_laplacian(30);
        let order = nested_dissection(&a, &vec![true; a.nrows()]);
        let mut seen = order.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..a.nrows()).collect::<Vec<_>>());
        assert_eq!(order, nested_dissection(&a, &vec![true; a.nrows()]));
    }

    #[test]
    fn disconnected_graph_is_covered() {
        let mut t = TripletBuilder::new(200, 200);
        for i in 0..200 {
            t.push(i, i, 1.0);
        }
        let a = t.build();
        let order = nested_dissection(&a, &vec![true; 200]);
        assert_eq!(order.len(), 200);
    }

    #[test]
    fn zero_diagonal_rows_follow_their_neighbours() {
        let a = CsrMatrix::from_dense(&[vec![0.0, 1.0, 1.0], vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]]);
        let order = constrained_last(&a);
        assert_eq!(*order.last().unwrap(), 0);
    }
}
