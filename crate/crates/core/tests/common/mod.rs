//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, VecDeque};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use petgraph::graph::{NodeIndex, UnGraph};
use petgraph::visit::Dfs;
use rand::Rng;
use ustpile::forest::{Parent, SpanningForest};
use ustpile::lattice::{neighbors, Domain, Point};

/// Loop erasure by rescanning: `t_0` is the last visit to the start, and
/// `t_{i+1}` the last visit to the vertex right after `t_i`. Quadratic.
pub fn rescan_loop_erase<T: PartialEq + Copy>(p: &[T]) -> Vec<T> {
    if p.is_empty() {
        return Vec::new();
    }
    let m = p.len() - 1;
    let last = |v: T| (0..=m).rev().find(|&j| p[j] == v).unwrap();
    let mut t = last(p[0]);
    let mut out = vec![p[t]];
    while t < m {
        t = last(p[t + 1]);
        out.push(p[t]);
    }
    out
}

/// `G_K(x, y)` as expected visits of the walk killed on leaving `K`, divided
/// by `2d`. Dense Gauss-Jordan on `I - P` over the rationals.
pub fn absorbing_green(domain: &Domain, x: &Point, y: &Point) -> BigRational {
    let sites: Vec<Point> = domain.points().collect();
    let n = sites.len();
    let idx: HashMap<Point, usize> = sites.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    let deg = 2 * domain.dim();
    let step = BigRational::new(BigInt::one(), BigInt::from(deg));
    // augmented [I - P | e_y]
    let mut a = vec![vec![BigRational::zero(); n + 1]; n];
    for (i, p) in sites.iter().enumerate() {
        a[i][i] = BigRational::one();
        for q in neighbors(p) {
            if let Some(&j) = idx.get(&q) {
                a[i][j] -= step.clone();
            }
        }
    }
    let (xi, yi) = (idx[x], idx[y]);
    a[yi][n] = BigRational::one();
    // N = (I - P)^{-1}; column y of N gives N(i, y)
    for c in 0..n {
        let piv = (c..n).find(|&r| !a[r][c].is_zero()).expect("singular");
        a.swap(c, piv);
        let inv = BigRational::one() / a[c][c].clone();
        for k in c..=n {
            a[c][k] = a[c][k].clone() * inv.clone();
        }
        for r in 0..n {
            if r != c && !a[r][c].is_zero() {
                let f = a[r][c].clone();
                for k in c..=n {
                    let t = f.clone() * a[c][k].clone();
                    a[r][k] -= t;
                }
            }
        }
    }
    a[xi][n].clone() / BigRational::from_integer(BigInt::from(deg))
}

/// Stabilizes by toppling a uniformly chosen unstable site until none is left.
/// Heights and odometer are in lexicographic site order.
pub fn random_order_stabilize<R: Rng>(domain: &Domain, heights: &[u32], rng: &mut R) -> (Vec<u32>, Vec<u64>) {
    let sites: Vec<Point> = domain.points().collect();
    let idx: HashMap<Point, usize> = sites.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    let deg = 2 * domain.dim() as u32;
    let nb: Vec<Vec<usize>> = sites
        .iter()
        .map(|p| neighbors(p).iter().filter_map(|q| idx.get(q).copied()).collect())
        .collect();
    let mut h = heights.to_vec();
    let mut odo = vec![0u64; sites.len()];
    loop {
        let unstable: Vec<usize> = (0..h.len()).filter(|&i| h[i] >= deg).collect();
        if unstable.is_empty() {
            return (h, odo);
        }
        let v = unstable[rng.gen_range(0..unstable.len())];
        h[v] -= deg;
        odo[v] += 1;
        for &w in &nb[v] {
            h[w] += 1;
        }
    }
}

/// Undirected tree adjacency restricted to `set`.
fn tree_adjacency(f: &SpanningForest, set: &[Point]) -> HashMap<Point, Vec<Point>> {
    let members: BTreeSet<Point> = set.iter().copied().collect();
    let mut adj: HashMap<Point, Vec<Point>> = set.iter().map(|p| (*p, Vec::new())).collect();
    for p in set {
        if let Some(Parent::Site(q)) = f.parent(p) {
            if members.contains(&q) {
                adj.get_mut(p).unwrap().push(q);
                adj.get_mut(&q).unwrap().push(*p);
            }
        }
    }
    adj
}

/// Largest tree distance between two sites of `set`, by BFS from every site.
pub fn all_pairs_intrinsic_diameter(f: &SpanningForest, set: &[Point]) -> u32 {
    let adj = tree_adjacency(f, set);
    let mut best = 0;
    for s in set {
        let mut dist: HashMap<Point, u32> = HashMap::new();
        dist.insert(*s, 0);
        let mut q = VecDeque::from([*s]);
        while let Some(x) = q.pop_front() {
            let d = dist[&x];
            best = best.max(d);
            for y in &adj[&x] {
                if !dist.contains_key(y) {
                    dist.insert(*y, d + 1);
                    q.push_back(*y);
                }
            }
        }
        assert_eq!(dist.len(), set.len(), "set is not tree-connected");
    }
    best
}

/// Largest coordinate difference over all pairs.
pub fn pairwise_linf_diameter(set: &[Point]) -> u32 {
    let mut best = 0;
    for a in set {
        for b in set {
            let d = a.coords().iter().zip(b.coords()).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0);
            best = best.max(d);
        }
    }
    best
}

/// Past of the origin: delete the origin from the tree graph (root included
/// as a vertex), keep everything cut off from the root, add the origin back.
pub fn past_by_deletion(f: &SpanningForest) -> BTreeSet<Point> {
    let domain = f.domain();
    let origin = Point::origin(domain.dim());
    let sites: Vec<Point> = domain.points().collect();
    let mut g: UnGraph<Option<Point>, ()> = UnGraph::new_undirected();
    let root = g.add_node(None);
    let nodes: HashMap<Point, NodeIndex> = sites.iter().map(|p| (*p, g.add_node(Some(*p)))).collect();
    for p in &sites {
        if *p == origin {
            continue;
        }
        match f.parent(p).unwrap() {
            Parent::Site(q) if q == origin => {}
            Parent::Site(q) => {
                g.add_edge(nodes[p], nodes[&q], ());
            }
            Parent::Wired(_) | Parent::Root => {
                g.add_edge(nodes[p], root, ());
            }
        }
    }
    let mut reach = BTreeSet::new();
    let mut dfs = Dfs::new(&g, root);
    while let Some(n) = dfs.next(&g) {
        if let Some(p) = g[n] {
            reach.insert(p);
        }
    }
    sites.into_iter().filter(|p| !reach.contains(p) || *p == origin).collect()
}

/// Site set reached by following tree edges from `start`, in BFS order,
/// stopping at `limit` sites.
pub fn tree_ball(f: &SpanningForest, start: &Point, limit: usize) -> Vec<Point> {
    let all: Vec<Point> = f.domain().points().collect();
    let adj = tree_adjacency(f, &all);
    let mut seen = BTreeSet::from([*start]);
    let mut out = vec![*start];
    let mut q = VecDeque::from([*start]);
    while let Some(x) = q.pop_front() {
        for y in &adj[&x] {
            if out.len() >= limit {
                return out;
            }
            if seen.insert(*y) {
                out.push(*y);
                q.push_back(*y);
            }
        }
    }
    out
}

/// `z`-score of an observed count against a binomial expectation.
pub fn binomial_z(hits: u64, n: u64, p: f64) -> f64 {
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    (hits as f64 - n as f64 * p) / sd
}
