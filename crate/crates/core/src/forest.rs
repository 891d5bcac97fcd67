//! Spanning forests of wired domains: the wired UST and the 0-wired forest,
//! red/blue colouring, the past of the origin, the 0-tree, and tree
//! observables. Includes lazy explorers that attach only the sites needed
//! to determine the red cluster.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{linf_diameter, Direction, Domain, Point};
use crate::randwalk::RngSeed;
use crate::runner::run_replicas;
use crate::wilson::{Link, WilsonEngine, NO_DIR};

const UNSET: u8 = 0xFE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Roots {
    /// A single root: the wired boundary.
    Wired,
    /// Two roots: the origin and the wired boundary.
    ZeroWired,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Blue,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Parent {
    Site(Point),
    /// The wired root, through the parallel edge in this direction.
    Wired(Direction),
    /// The site is the root at the origin.
    Root,
}

/// Site ordering for Wilson's algorithm.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SiteOrder {
    Lexicographic,
    ReverseLexicographic,
    /// Listed sites first, then any remaining ones lexicographically.
    Explicit(Vec<Point>),
}

#[derive(Clone, Debug)]
pub struct SpanningForest {
    domain: Domain,
    roots: Roots,
    parent: Vec<u8>,
    red: Vec<bool>,
}

impl PartialEq for SpanningForest {
    fn eq(&self, other: &Self) -> bool {
        self.domain == other.domain && self.roots == other.roots && self.parent == other.parent && self.red == other.red
    }
}

impl SpanningForest {
    /// Builds a forest from explicit parent pointers and colours it.
    pub fn from_parents(domain: Domain, roots: Roots, parents: &[(Point, Parent)]) -> Result<Self> {
        let mut parent = vec![UNSET; domain.num_slots()];
        for (p, par) in parents {
            let s = domain.site_slot(p).ok_or(Error::OutsideDomain(*p))?;
            if parent[s] != UNSET {
                return Err(Error::InvalidForest(format!("site {p:?} has two parents")));
            }
            parent[s] = match par {
                Parent::Site(q) => {
                    let d = Direction::all(domain.dim())
                        .find(|&d| p.shifted(d) == *q)
                        .ok_or_else(|| Error::InvalidForest(format!("{q:?} is not a neighbour of {p:?}")))?;
                    if !domain.contains(q) {
                        return Err(Error::InvalidForest(format!("parent {q:?} lies outside the domain")));
                    }
                    d.0
                }
                Parent::Wired(d) => {
                    if domain.is_inside(domain.step(s, d.index())) {
                        return Err(Error::InvalidForest(format!("{p:?} has no wired edge {d}")));
                    }
                    d.0
                }
                Parent::Root => NO_DIR,
            };
        }
        let mut f = SpanningForest {
            red: vec![false; domain.num_slots()],
            domain,
            roots,
            parent,
        };
        f.validate()?;
        f.recolour();
        Ok(f)
    }

    /// Snapshot of a completed engine run.
    pub fn from_engine(engine: &WilsonEngine, roots: Roots) -> Result<Self> {
        let domain = engine.domain().clone();
        let mut parent = vec![UNSET; domain.num_slots()];
        let mut red = vec![false; domain.num_slots()];
        for s in domain.slots() {
            if !engine.in_tree(s) {
                return Err(Error::InvalidForest(format!("site {:?} was never attached", domain.point(s))));
            }
            parent[s] = engine.next_dir(s);
            red[s] = engine.is_red(s);
        }
        let f = SpanningForest {
            domain,
            roots,
            parent,
            red,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn roots(&self) -> Roots {
        self.roots
    }

    fn link(&self, slot: usize) -> Link {
        let d = self.parent[slot];
        if d == NO_DIR {
            return Link::Root;
        }
        let n = self.domain.step(slot, d as usize);
        if self.domain.is_inside(n) {
            Link::Site(n)
        } else {
            Link::Wired(d)
        }
    }

    pub fn parent(&self, p: &Point) -> Option<Parent> {
        let s = self.domain.site_slot(p)?;
        Some(match self.link(s) {
            Link::Site(n) => Parent::Site(self.domain.point(n)),
            Link::Wired(d) => Parent::Wired(Direction(d)),
            Link::Root => Parent::Root,
        })
    }

    /// Parent direction code per site, in lexicographic site order
    /// (`0xFF` marks the root at the origin).
    pub fn code(&self) -> Vec<u8> {
        self.domain.slots().map(|s| self.parent[s]).collect()
    }

    pub fn color(&self, p: &Point) -> Option<Color> {
        let s = self.domain.site_slot(p)?;
        Some(if self.red[s] { Color::Red } else { Color::Blue })
    }

    pub fn red_set(&self) -> BTreeSet<Point> {
        self.domain.slots().filter(|&s| self.red[s]).map(|s| self.domain.point(s)).collect()
    }

    fn validate(&self) -> Result<()> {
        let origin = Point::origin(self.domain.dim());
        for s in self.domain.slots() {
            let p = self.parent[s];
            if p == UNSET {
                return Err(Error::InvalidForest(format!("site {:?} has no parent", self.domain.point(s))));
            }
            if p == NO_DIR && (self.roots == Roots::Wired || self.domain.point(s) != origin) {
                return Err(Error::InvalidForest(format!("site {:?} cannot be a root", self.domain.point(s))));
            }
            if p != NO_DIR && p as usize >= self.domain.num_dirs() {
                return Err(Error::InvalidForest(format!("bad direction code {p}")));
            }
        }
        if self.roots == Roots::ZeroWired {
            match self.domain.site_slot(&origin) {
                Some(o) if self.parent[o] == NO_DIR => {}
                _ => return Err(Error::InvalidForest("origin must be a root".into())),
            }
        }
        // 0 = unvisited, 1 = on current chain, 2 = reaches a root
        let mut state = vec![0u8; self.domain.num_slots()];
        let mut chain = Vec::new();
        for s in self.domain.slots() {
            let mut c = s;
            chain.clear();
            loop {
                match state[c] {
                    2 => break,
                    1 => return Err(Error::InvalidForest(format!("cycle through {:?}", self.domain.point(c)))),
                    _ => {}
                }
                state[c] = 1;
                chain.push(c);
                match self.link(c) {
                    Link::Site(n) => c = n,
                    _ => break,
                }
            }
            for &x in &chain {
                state[x] = 2;
            }
        }
        Ok(())
    }

    /// Red iff the chain passes through the origin (wired roots) or ends at
    /// the origin root.
    fn recolour(&mut self) {
        let Some(o) = self.domain.site_slot(&Point::origin(self.domain.dim())) else {
            return;
        };
        // 0 = unknown, 1 = blue, 2 = red
        let mut mark = vec![0u8; self.domain.num_slots()];
        mark[o] = 2;
        let slots: Vec<usize> = self.domain.slots().collect();
        let mut chain = Vec::new();
        for &s in &slots {
            let mut c = s;
            chain.clear();
            let colour = loop {
                if mark[c] != 0 {
                    break mark[c];
                }
                chain.push(c);
                match self.link(c) {
                    Link::Site(n) => c = n,
                    _ => break 1,
                }
            };
            for &x in &chain {
                mark[x] = colour;
            }
        }
        for s in slots {
            self.red[s] = mark[s] == 2;
        }
    }

    /// Writes the versioned text dump.
    pub fn write_dump<W: Write>(&self, w: &mut W) -> Result<()> {
        let roots = match self.roots {
            Roots::Wired => "wired",
            Roots::ZeroWired => "zero-wired",
        };
        writeln!(w, "# ustpile-forest v1 dim {} roots {}", self.domain.dim(), roots)?;
        for s in self.domain.slots() {
            let p = self.domain.point(s);
            let coords: Vec<String> = p.coords().iter().map(|c| c.to_string()).collect();
            let colour = if self.red[s] { "red" } else { "blue" };
            match self.link(s) {
                Link::Site(n) => {
                    let q: Vec<String> = self.domain.point(n).coords().iter().map(|c| c.to_string()).collect();
                    writeln!(w, "{} -> {} {}", coords.join(" "), q.join(" "), colour)?
                }
                Link::Wired(d) => writeln!(w, "{} -> ROOTB {} {}", coords.join(" "), colour, d)?,
                Link::Root => writeln!(w, "{} -> ROOT0 {}", coords.join(" "), colour)?,
            }
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty forest dump".into()))??;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 7 || h[0] != "#" || h[1] != "ustpile-forest" || h[2] != "v1" || h[3] != "dim" || h[5] != "roots" {
            return Err(Error::Parse(format!("bad forest header {header:?}")));
        }
        let dim: usize = h[4].parse().map_err(|_| Error::Parse(format!("bad dimension {:?}", h[4])))?;
        let bad = |n: usize, l: &str| Error::Parse(format!("line {}: cannot parse {l:?}", n + 2));
        let roots = match h[6] {
            "wired" => Roots::Wired,
            "zero-wired" => Roots::ZeroWired,
            _ => return Err(Error::Parse(format!("bad roots in header {header:?}"))),
        };
        let mut entries = Vec::new();
        let mut colours = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (lhs, rhs) = line.split_once("->").ok_or_else(|| bad(n, &line))?;
            let coords: Vec<i32> = lhs
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(n, &line)))
                .collect::<Result<_>>()?;
            if coords.len() != dim {
                return Err(bad(n, &line));
            }
            let p = Point::new(&coords)?;
            let toks: Vec<&str> = rhs.split_whitespace().collect();
            let (par, colour) = match toks.as_slice() {
                ["ROOT0", c] => (Parent::Root, *c),
                ["ROOTB", c, d] => (Parent::Wired(Direction(d.parse().map_err(|_| bad(n, &line))?)), *c),
                t if t.len() == dim + 1 => {
                    let q: Vec<i32> = t[..dim]
                        .iter()
                        .map(|x| x.parse().map_err(|_| bad(n, &line)))
                        .collect::<Result<_>>()?;
                    (Parent::Site(Point::new(&q)?), t[dim])
                }
                _ => return Err(bad(n, &line)),
            };
            let colour = match colour {
                "red" => true,
                "blue" => false,
                _ => return Err(bad(n, &line)),
            };
            entries.push((p, par));
            colours.push((p, colour));
        }
        let pts: Vec<Point> = entries.iter().map(|e| e.0).collect();
        let domain = Domain::from_points(&pts)?;
        let f = SpanningForest::from_parents(domain, roots, &entries)?;
        for (p, c) in colours {
            if f.red[f.domain.site_slot(&p).expect("site")] != c {
                return Err(Error::Parse(format!("colour of {p:?} disagrees with its parent chain")));
            }
        }
        Ok(f)
    }
}

/// Exact wired-UST sample by Wilson's algorithm.
pub fn wilson_ust(domain: &Domain, order: &SiteOrder, seed: RngSeed) -> Result<SpanningForest> {
    if domain.num_sites() == 0 {
        return Err(Error::EmptyDomain);
    }
    let origin = domain.site_slot(&Point::origin(domain.dim()));
    let mut e = WilsonEngine::new(domain.clone());
    e.reset(seed, origin);
    match order {
        SiteOrder::Lexicographic => e.run_full(),
        SiteOrder::ReverseLexicographic => {
            let mut v: Vec<usize> = domain.slots().collect();
            v.reverse();
            e.run_order(&v);
        }
        SiteOrder::Explicit(pts) => {
            let mut v = Vec::with_capacity(domain.num_sites());
            for p in pts {
                v.push(domain.site_slot(p).ok_or(Error::OutsideDomain(*p))?);
            }
            e.run_order(&v);
            e.run_full();
        }
    }
    SpanningForest::from_engine(&e, Roots::Wired)
}

/// Exact 0-wired forest sample: the origin is promoted to a second root.
pub fn wilson_0wusf(domain: &Domain, seed: RngSeed) -> Result<SpanningForest> {
    let origin = Point::origin(domain.dim());
    let o = domain.site_slot(&origin).ok_or(Error::OutsideDomain(origin))?;
    let mut e = WilsonEngine::new(domain.clone());
    e.reset(seed, None);
    e.plant_root(o);
    e.run_full();
    SpanningForest::from_engine(&e, Roots::ZeroWired)
}

/// Sites whose parent chain passes through the origin, together with the origin.
pub fn past_of_origin(f: &SpanningForest) -> Result<BTreeSet<Point>> {
    if f.roots != Roots::Wired {
        return Err(Error::Precondition("the past is defined for the wired tree".into()));
    }
    let origin = Point::origin(f.domain.dim());
    let o = f.domain.site_slot(&origin).ok_or(Error::OutsideDomain(origin))?;
    let mut mark = vec![0u8; f.domain.num_slots()];
    mark[o] = 2;
    let mut chain = Vec::new();
    let mut out = BTreeSet::new();
    for s in f.domain.slots() {
        let mut c = s;
        chain.clear();
        let m = loop {
            if mark[c] != 0 {
                break mark[c];
            }
            chain.push(c);
            match f.link(c) {
                Link::Site(n) => c = n,
                _ => break 1,
            }
        };
        for &x in &chain {
            mark[x] = m;
        }
        if m == 2 {
            out.insert(f.domain.point(s));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeObservables {
    pub diam_ext: u32,
    pub diam_int: u32,
    pub volume: u64,
}

/// Diameters and volume of a site set that is connected through tree edges.
pub fn observables(f: &SpanningForest, s: &[Point]) -> Result<TreeObservables> {
    if s.is_empty() {
        return Err(Error::Precondition("empty site set".into()));
    }
    let d = &f.domain;
    let mut index: HashMap<usize, usize> = HashMap::with_capacity(s.len());
    for p in s {
        let slot = d.site_slot(p).ok_or(Error::OutsideDomain(*p))?;
        let k = index.len();
        index.entry(slot).or_insert(k);
    }
    let slots: Vec<usize> = {
        let mut v = vec![0; index.len()];
        for (&slot, &k) in &index {
            v[k] = slot;
        }
        v
    };
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); slots.len()];
    for (k, &slot) in slots.iter().enumerate() {
        if let Link::Site(n) = f.link(slot) {
            if let Some(&j) = index.get(&n) {
                adj[k].push(j);
                adj[j].push(k);
            }
        }
    }
    let bfs = |from: usize| -> (usize, u32, usize) {
        let mut dist = vec![u32::MAX; slots.len()];
        dist[from] = 0;
        let mut q = VecDeque::from([from]);
        let (mut far, mut seen) = (from, 0);
        while let Some(x) = q.pop_front() {
            seen += 1;
            if dist[x] > dist[far] {
                far = x;
            }
            for &y in &adj[x] {
                if dist[y] == u32::MAX {
                    dist[y] = dist[x] + 1;
                    q.push_back(y);
                }
            }
        }
        (far, dist[far], seen)
    };
    let (a, _, seen) = bfs(0);
    if seen != slots.len() {
        return Err(Error::NotConnected);
    }
    let (_, diam_int, _) = bfs(a);
    let pts: Vec<Point> = slots.iter().map(|&x| d.point(x)).collect();
    Ok(TreeObservables {
        diam_ext: linf_diameter(&pts),
        diam_int,
        volume: slots.len() as u64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterKind {
    /// Past of the origin in the wired UST.
    Past,
    /// Component of the origin in the 0-wired forest.
    ZeroTree,
}

/// Red cluster found by a lazy exploration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSample {
    pub obs: TreeObservables,
    /// The cluster contains a site adjacent to the wired boundary.
    pub touches_boundary: bool,
    /// Exploration stopped at the site cap; observables are lower bounds.
    pub capped: bool,
}

/// Lazy explorer of the past or the 0-tree.
///
/// Attaches the origin, then every neighbour of every red site, which is
/// exactly the set of sites whose colour is needed. The result equals the
/// red set of a full Wilson run with the same seed.
pub struct ClusterExplorer {
    engine: WilsonEngine,
    origin: usize,
    queue: VecDeque<usize>,
    red: Vec<usize>,
    height: HashMap<usize, u32>,
    max_sites: Option<u64>,
}

impl ClusterExplorer {
    pub fn new(domain: Domain) -> Result<Self> {
        let origin = Point::origin(domain.dim());
        let o = domain.site_slot(&origin).ok_or(Error::OutsideDomain(origin))?;
        Ok(ClusterExplorer {
            engine: WilsonEngine::new(domain),
            origin: o,
            queue: VecDeque::new(),
            red: Vec::new(),
            height: HashMap::new(),
            max_sites: None,
        })
    }

    /// Stops exploring once this many red sites are found.
    pub fn with_cap(mut self, max_sites: Option<u64>) -> Self {
        self.max_sites = max_sites;
        self
    }

    pub fn engine(&self) -> &WilsonEngine {
        &self.engine
    }

    /// Red slots of the last exploration.
    pub fn red_slots(&self) -> &[usize] {
        &self.red
    }

    fn enqueue_new_red(&mut self) {
        let e = &self.engine;
        for &s in e.last_path() {
            if e.is_red(s) {
                self.red.push(s);
                self.queue.push_back(s);
            }
        }
    }

    pub fn explore(&mut self, kind: ClusterKind, seed: RngSeed) -> ClusterSample {
        self.queue.clear();
        self.red.clear();
        let o = self.origin;
        match kind {
            ClusterKind::Past => {
                self.engine.reset(seed, Some(o));
                self.engine.attach(o);
                self.enqueue_new_red();
            }
            ClusterKind::ZeroTree => {
                self.engine.reset(seed, None);
                self.engine.plant_root(o);
                self.red.push(o);
                self.queue.push_back(o);
            }
        }
        let nd = self.engine.domain().num_dirs();
        let mut capped = false;
        'outer: while let Some(x) = self.queue.pop_front() {
            for dir in 0..nd {
                let n = self.engine.domain().step(x, dir);
                if self.engine.domain().is_inside(n) && !self.engine.in_tree(n) {
                    self.engine.attach(n);
                    self.enqueue_new_red();
                    if self.max_sites.is_some_and(|m| self.red.len() as u64 >= m) {
                        capped = true;
                        break 'outer;
                    }
                }
            }
        }
        self.summarise(capped)
    }

    fn summarise(&mut self, capped: bool) -> ClusterSample {
        let e = &self.engine;
        let d = e.domain();
        let pts: Vec<Point> = self.red.iter().map(|&s| d.point(s)).collect();
        let touches_boundary = self.red.iter().any(|&s| d.is_boundary_adjacent(s));
        // Longest path in the red subtree, children before parents.
        let mut order = self.red.clone();
        order.sort_unstable_by_key(|&s| std::cmp::Reverse(e.depth(s)));
        self.height.clear();
        let mut diam = 0;
        for &x in &order {
            let hx = self.height.get(&x).copied().unwrap_or(0);
            diam = diam.max(hx);
            if x == self.origin {
                continue;
            }
            if let Some(p) = e.parent_slot(x) {
                let hp = self.height.entry(p).or_insert(0);
                diam = diam.max(*hp + hx + 1);
                *hp = (*hp).max(hx + 1);
            }
        }
        ClusterSample {
            obs: TreeObservables {
                diam_ext: linf_diameter(&pts),
                diam_int: diam,
                volume: self.red.len() as u64,
            },
            touches_boundary,
            capped,
        }
    }
}

/// Per-λ frequencies of the three metric-comparison events.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub lambda: f64,
    /// `U_R` is not inside the intrinsic ball of radius `λ R^β`.
    pub ext_in_int: f64,
    /// The intrinsic ball of radius `R^β / λ` is not inside `B_R`.
    pub int_in_ext: f64,
    /// The intrinsic ball of radius `R` has at least `λ R^{3/β}` sites.
    pub int_volume: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub r: u32,
    pub beta: f64,
    pub box_radius: u32,
    pub reps: u64,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct ComparisonSample {
    /// Largest intrinsic distance from 0 inside `U_R`.
    max_int_in_ball: u32,
    /// Smallest intrinsic distance from 0 to a site outside `B_R`.
    exit_int: u32,
    /// Size of the intrinsic ball of radius `R`.
    int_ball_volume: u64,
}

struct TreeWalker {
    engine: WilsonEngine,
    origin: usize,
    dist: HashMap<usize, u32>,
    queue: VecDeque<usize>,
}

impl TreeWalker {
    /// Tree neighbours of a site: its parent (if a site) and its children.
    fn tree_neighbours(&mut self, x: usize, out: &mut Vec<usize>) {
        out.clear();
        if let Some(p) = self.engine.parent_slot(x) {
            out.push(p);
        }
        for dir in 0..self.engine.domain().num_dirs() {
            let n = self.engine.domain().step(x, dir);
            if !self.engine.domain().is_inside(n) {
                continue;
            }
            self.engine.attach(n);
            if self.engine.parent_slot(n) == Some(x) {
                out.push(n);
            }
        }
    }

    /// Breadth-first search from the origin over tree edges, restricted to
    /// sites accepted by `keep`, up to intrinsic distance `limit`. Calls
    /// `visit(slot, dist)`; stops early when it returns `false`.
    fn bfs(&mut self, limit: u32, keep: impl Fn(&Domain, usize) -> bool, mut visit: impl FnMut(&Domain, usize, u32) -> bool) {
        self.dist.clear();
        self.queue.clear();
        let o = self.origin;
        self.engine.attach(o);
        self.dist.insert(o, 0);
        self.queue.push_back(o);
        let mut nb = Vec::new();
        while let Some(x) = self.queue.pop_front() {
            let dx = self.dist[&x];
            if !visit(self.engine.domain(), x, dx) {
                return;
            }
            if dx == limit {
                continue;
            }
            self.tree_neighbours(x, &mut nb);
            for &y in &nb {
                if keep(self.engine.domain(), y) && !self.dist.contains_key(&y) {
                    self.dist.insert(y, dx + 1);
                    self.queue.push_back(y);
                }
            }
        }
    }

    fn sample(&mut self, seed: RngSeed, r: u32) -> ComparisonSample {
        self.engine.reset(seed, None);
        let mut out = ComparisonSample::default();
        let in_ball = move |d: &Domain, s: usize| d.point(s).linf_norm() <= r;
        self.bfs(u32::MAX, in_ball, |_, _, dist| {
            out.max_int_in_ball = out.max_int_in_ball.max(dist);
            true
        });
        let mut exit = u32::MAX;
        self.bfs(u32::MAX, |_, _| true, |d, s, dist| {
            if d.point(s).linf_norm() > r {
                exit = dist;
                return false;
            }
            true
        });
        out.exit_int = exit;
        let mut vol = 0;
        self.bfs(r, |_, _| true, |_, _, _| {
            vol += 1;
            true
        });
        out.int_ball_volume = vol;
        out
    }
}

/// Empirical frequencies of the metric-comparison events for the wired UST
/// in `Box(0, 4R)`, for each `λ` in `lambdas`, all from the same samples.
pub fn comparison_diagnostics(
    dim: usize,
    r: u32,
    lambdas: &[f64],
    beta: f64,
    reps: u64,
    seed: u64,
    workers: usize,
) -> Result<ComparisonReport> {
    if r < 2 || reps == 0 {
        return Err(Error::Precondition("need R >= 2 and reps >= 1".into()));
    }
    let box_radius = 4 * r;
    let domain = Domain::centered_box(dim, box_radius)?;
    let samples = run_replicas(
        reps,
        workers,
        || {
            let origin = domain.site_slot(&Point::origin(dim)).expect("origin");
            Ok(TreeWalker {
                engine: WilsonEngine::new(domain.clone()),
                origin,
                dist: HashMap::new(),
                queue: VecDeque::new(),
            })
        },
        Vec::new,
        |w, acc: &mut Vec<ComparisonSample>, i| {
            acc.push(w.sample(RngSeed::replica(seed, 7, i), r));
            Ok(())
        },
        |a, b| a.extend(b),
    )?;
    let rb = (r as f64).powf(beta);
    let rv = (r as f64).powf(3.0 / beta);
    let n = samples.len() as f64;
    let rows = lambdas
        .iter()
        .map(|&lambda| {
            let freq = |pred: &dyn Fn(&ComparisonSample) -> bool| samples.iter().filter(|s| pred(s)).count() as f64 / n;
            ComparisonRow {
                lambda,
                ext_in_int: freq(&|s| s.max_int_in_ball as f64 > lambda * rb),
                int_in_ext: freq(&|s| (s.exit_int as f64) <= rb / lambda),
                int_volume: freq(&|s| s.int_ball_volume as f64 >= lambda * rv),
            }
        })
        .collect();
    Ok(ComparisonReport {
        r,
        beta,
        box_radius,
        reps,
        rows,
    })
}
