//! Abelian sandpile on a finite domain with grains lost through wired edges:
//! toppling, stabilization, the burning test, the Majumdar–Dhar bijection
//! with wired spanning trees, stationary sampling, avalanches and waves.
//!
//! The bijection uses burn times. In a wired spanning tree the burn time of a
//! site is its depth (distance to the root). With `t = depth(x)`,
//! `u` = number of in-domain neighbours of depth `>= t`, and candidates =
//! in-domain neighbours of depth `t - 1` (or the wired edges when `t = 1`) in
//! neighbour order, the height is `u + j` where `j` is the index of the
//! parent edge among the candidates.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{wilson_ust, Parent, Roots, SiteOrder, SpanningForest};
use crate::lattice::{Direction, Domain, Point};
use crate::randwalk::RngSeed;
use crate::wilson::WilsonEngine;

#[derive(Clone, Debug, PartialEq)]
pub struct SandpileConfig {
    domain: Domain,
    height: Vec<u32>,
}

impl SandpileConfig {
    pub fn uniform(domain: Domain, h: u32) -> Self {
        let mut height = vec![0; domain.num_slots()];
        for s in domain.slots() {
            height[s] = h;
        }
        SandpileConfig { domain, height }
    }

    /// Heights listed in lexicographic site order.
    pub fn from_heights(domain: Domain, heights: &[u32]) -> Result<Self> {
        if heights.len() != domain.num_sites() {
            return Err(Error::Precondition(format!(
                "expected {} heights, got {}",
                domain.num_sites(),
                heights.len()
            )));
        }
        let mut height = vec![0; domain.num_slots()];
        for (s, &h) in domain.slots().zip(heights) {
            height[s] = h;
        }
        Ok(SandpileConfig { domain, height })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Heights in lexicographic site order.
    pub fn heights(&self) -> Vec<u32> {
        self.domain.slots().map(|s| self.height[s]).collect()
    }

    pub fn height(&self, p: &Point) -> Option<u32> {
        self.domain.site_slot(p).map(|s| self.height[s])
    }

    pub fn set_height(&mut self, p: &Point, h: u32) -> Result<()> {
        let s = self.domain.site_slot(p).ok_or(Error::OutsideDomain(*p))?;
        self.height[s] = h;
        Ok(())
    }

    pub fn add_grains(&mut self, p: &Point, n: u32) -> Result<()> {
        let s = self.domain.site_slot(p).ok_or(Error::OutsideDomain(*p))?;
        self.height[s] += n;
        Ok(())
    }

    #[cfg(test)]
    #[inline]
    pub(crate) fn slot_height(&self, slot: usize) -> u32 {
        self.height[slot]
    }

    fn threshold(&self) -> u32 {
        self.domain.num_dirs() as u32
    }

    pub fn is_stable(&self) -> bool {
        let t = self.threshold();
        self.domain.slots().all(|s| self.height[s] < t)
    }

    pub fn total_mass(&self) -> u64 {
        self.domain.slots().map(|s| self.height[s] as u64).sum()
    }

    /// Topples `v` once, returning the number of grains lost.
    pub fn topple_in_place(&mut self, v: &Point) -> Result<u32> {
        let s = self.domain.site_slot(v).ok_or(Error::OutsideDomain(*v))?;
        if self.height[s] < self.threshold() {
            return Err(Error::Precondition(format!("site {v:?} is stable")));
        }
        Ok(self.topple_slot(s, 1))
    }

    /// Topples slot `s` `k` times; returns the grains sent outside.
    #[inline]
    fn topple_slot(&mut self, s: usize, k: u32) -> u32 {
        let nd = self.domain.num_dirs();
        self.height[s] -= k * nd as u32;
        let mut lost = 0;
        for dir in 0..nd {
            let n = self.domain.step(s, dir);
            if self.domain.is_inside(n) {
                self.height[n] += k;
            } else {
                lost += k;
            }
        }
        lost
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "version": 1,
            "sites": self.domain.points().collect::<Vec<_>>(),
            "heights": self.heights(),
        })
    }
}

/// One toppling of `v`.
pub fn topple(c: &SandpileConfig, v: &Point) -> Result<SandpileConfig> {
    let mut out = c.clone();
    out.topple_in_place(v)?;
    Ok(out)
}

/// Per-site toppling counts and grains lost through wired edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Odometer {
    /// Counts in lexicographic site order.
    pub counts: Vec<u64>,
    pub lost: u64,
}

impl Odometer {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Stable configuration reached from `c`, with its odometer.
pub fn stabilize(c: &SandpileConfig) -> (SandpileConfig, Odometer) {
    let mut out = c.clone();
    let d = out.domain.clone();
    let t = out.threshold();
    let mut odo = vec![0u64; d.num_slots()];
    let mut queued = vec![false; d.num_slots()];
    let mut queue: VecDeque<usize> = d.slots().filter(|&s| out.height[s] >= t).collect();
    for &s in &queue {
        queued[s] = true;
    }
    let mut lost = 0u64;
    while let Some(s) = queue.pop_front() {
        queued[s] = false;
        let k = out.height[s] / t;
        if k == 0 {
            continue;
        }
        odo[s] += k as u64;
        lost += out.topple_slot(s, k) as u64;
        for dir in 0..d.num_dirs() {
            let n = d.step(s, dir);
            if d.is_inside(n) && !queued[n] && out.height[n] >= t {
                queued[n] = true;
                queue.push_back(n);
            }
        }
    }
    let counts = d.slots().map(|s| odo[s]).collect();
    (out, Odometer { counts, lost })
}

/// Burning test: repeatedly burn any site whose height is at least its
/// number of unburnt in-domain neighbours. Wired edges count as burnt.
pub fn is_recurrent(c: &SandpileConfig) -> Result<bool> {
    if !c.is_stable() {
        return Err(Error::Unstable);
    }
    Ok(burn_rounds(c).is_some())
}

/// Parallel burning. Returns the burn round of every slot, or `None` when
/// some site never burns.
fn burn_rounds(c: &SandpileConfig) -> Option<Vec<u32>> {
    let d = &c.domain;
    let nd = d.num_dirs();
    let mut round = vec![0u32; d.num_slots()];
    let mut unburnt_nb = vec![0u32; d.num_slots()];
    let mut queued = vec![false; d.num_slots()];
    let mut frontier = Vec::new();
    let mut remaining = 0;
    for s in d.slots() {
        remaining += 1;
        unburnt_nb[s] = (0..nd).filter(|&k| d.is_inside(d.step(s, k))).count() as u32;
        if c.height[s] >= unburnt_nb[s] {
            frontier.push(s);
        }
    }
    let mut t = 0;
    while !frontier.is_empty() {
        t += 1;
        for &s in &frontier {
            round[s] = t;
        }
        remaining -= frontier.len();
        for &s in &frontier {
            for k in 0..nd {
                let n = d.step(s, k);
                if d.is_inside(n) && round[n] == 0 {
                    unburnt_nb[n] -= 1;
                }
            }
        }
        let mut next = Vec::new();
        for &s in &frontier {
            for k in 0..nd {
                let n = d.step(s, k);
                if d.is_inside(n) && round[n] == 0 && !queued[n] && c.height[n] >= unburnt_nb[n] {
                    queued[n] = true;
                    next.push(n);
                }
            }
        }
        frontier = next;
    }
    (remaining == 0).then_some(round)
}

/// Height of `x` from the depths of `x` and its neighbours and the direction
/// of its parent edge.
#[inline]
pub(crate) fn md_height(domain: &Domain, x: usize, parent_dir: u8, depth: impl Fn(usize) -> u32) -> u32 {
    let t = depth(x);
    let (mut u, mut j, mut idx) = (0, u32::MAX, 0);
    for dir in 0..domain.num_dirs() {
        let n = domain.step(x, dir);
        let candidate = if domain.is_inside(n) {
            let dn = depth(n);
            if dn >= t {
                u += 1;
                false
            } else {
                t >= 2 && dn == t - 1
            }
        } else {
            t == 1
        };
        if candidate {
            if dir == parent_dir as usize {
                j = idx;
            }
            idx += 1;
        }
    }
    debug_assert!(j != u32::MAX, "parent edge is not a candidate");
    u + j
}

/// Recurrent configuration of a wired spanning tree.
pub fn md_bijection(t: &SpanningForest) -> Result<SandpileConfig> {
    if t.roots() != Roots::Wired {
        return Err(Error::Precondition("the bijection needs a wired spanning tree".into()));
    }
    let d = t.domain().clone();
    let code = t.code();
    let slots: Vec<usize> = d.slots().collect();
    let mut dir = vec![0u8; d.num_slots()];
    for (&s, &c) in slots.iter().zip(&code) {
        dir[s] = c;
    }
    // depths by memoised chain walks
    let mut depth = vec![0u32; d.num_slots()];
    let mut chain = Vec::new();
    for &s in &slots {
        let mut c = s;
        chain.clear();
        let base = loop {
            if depth[c] != 0 {
                break depth[c];
            }
            chain.push(c);
            let n = d.step(c, dir[c] as usize);
            if !d.is_inside(n) {
                break 0;
            }
            c = n;
        };
        for (i, &x) in chain.iter().rev().enumerate() {
            depth[x] = base + 1 + i as u32;
        }
    }
    let mut height = vec![0u32; d.num_slots()];
    for &s in &slots {
        height[s] = md_height(&d, s, dir[s], |x| depth[x]);
    }
    Ok(SandpileConfig { domain: d, height })
}

/// Wired spanning tree of a recurrent configuration.
pub fn md_inverse(c: &SandpileConfig) -> Result<SpanningForest> {
    if !c.is_stable() {
        return Err(Error::Unstable);
    }
    let round = burn_rounds(c).ok_or(Error::NotRecurrent)?;
    let d = &c.domain;
    let mut parents = Vec::with_capacity(d.num_sites());
    for s in d.slots() {
        let t = round[s];
        let mut u = 0;
        let mut cands = Vec::new();
        for dir in 0..d.num_dirs() {
            let n = d.step(s, dir);
            if d.is_inside(n) {
                if round[n] >= t {
                    u += 1;
                } else if round[n] == t - 1 {
                    cands.push(dir);
                }
            } else if t == 1 {
                cands.push(dir);
            }
        }
        let j = c.height[s].checked_sub(u).ok_or(Error::NotRecurrent)? as usize;
        let dir = *cands.get(j).ok_or(Error::NotRecurrent)?;
        let n = d.step(s, dir);
        let par = if d.is_inside(n) {
            Parent::Site(d.point(n))
        } else {
            Parent::Wired(Direction(dir as u8))
        };
        parents.push((d.point(s), par));
    }
    SpanningForest::from_parents(d.clone(), Roots::Wired, &parents)
}

/// Uniform recurrent configuration: the image of a wired UST sample.
pub fn sample_recurrent(domain: &Domain, seed: RngSeed) -> Result<SandpileConfig> {
    md_bijection(&wilson_ust(domain, &SiteOrder::Lexicographic, seed)?)
}

/// Height storage an avalanche can run on.
pub(crate) trait Heights {
    fn domain(&self) -> &Domain;
    fn get(&mut self, slot: usize) -> u32;
    fn set(&mut self, slot: usize, h: u32);
}

impl Heights for SandpileConfig {
    fn domain(&self) -> &Domain {
        &self.domain
    }
    fn get(&mut self, slot: usize) -> u32 {
        self.height[slot]
    }
    fn set(&mut self, slot: usize, h: u32) {
        self.height[slot] = h;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvalancheSummary {
    /// Total number of topplings.
    pub total: u64,
    /// Number of distinct sites that toppled.
    pub cluster_size: u64,
    /// L∞ diameter of the toppled set.
    pub diam_ext: u32,
    pub waves: u32,
    pub first_wave_size: u64,
    pub first_wave_diam: u32,
    /// Some toppled site is adjacent to the wired boundary.
    pub truncated: bool,
    /// Topplings of a site already toppled in the same wave.
    pub repeat_topplings: u64,
    /// The wave loop was cut short by `max_waves`.
    pub incomplete: bool,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AvalancheOptions {
    pub record_waves: bool,
    pub max_waves: Option<u32>,
}

/// Reusable per-slot avalanche state.
pub struct AvalancheScratch {
    odo: Vec<u32>,
    wave: Vec<u32>,
    touched: Vec<usize>,
    queue: Vec<usize>,
    waves: Vec<Vec<usize>>,
}

#[derive(Clone, Copy)]
struct Extent {
    lo: [i32; 4],
    hi: [i32; 4],
}

impl Extent {
    fn new() -> Self {
        Extent {
            lo: [i32::MAX; 4],
            hi: [i32::MIN; 4],
        }
    }
    fn add(&mut self, p: &Point) {
        for a in 0..p.dim() {
            self.lo[a] = self.lo[a].min(p.coord(a));
            self.hi[a] = self.hi[a].max(p.coord(a));
        }
    }
    fn diam(&self, dim: usize) -> u32 {
        (0..dim)
            .filter(|&a| self.hi[a] >= self.lo[a])
            .map(|a| (self.hi[a] - self.lo[a]) as u32)
            .max()
            .unwrap_or(0)
    }
}

impl AvalancheScratch {
    pub fn new(num_slots: usize) -> Self {
        AvalancheScratch {
            odo: vec![0; num_slots],
            wave: vec![0; num_slots],
            touched: Vec::new(),
            queue: Vec::new(),
            waves: Vec::new(),
        }
    }

    fn clear(&mut self) {
        for &s in &self.touched {
            self.odo[s] = 0;
            self.wave[s] = 0;
        }
        self.touched.clear();
        self.queue.clear();
        self.waves.clear();
    }

    /// Topplings at `slot` in the last avalanche.
    pub fn odometer(&self, slot: usize) -> u32 {
        self.odo[slot]
    }

    /// Toppled slots of the last avalanche, in order of first toppling.
    pub fn cluster(&self) -> &[usize] {
        &self.touched
    }

    /// Slots toppled in each wave (only with `record_waves`).
    pub fn waves(&self) -> &[Vec<usize>] {
        &self.waves
    }

    /// Adds a grain at `v` and runs the wave decomposition: topple `v` once,
    /// then stabilize everything else with `v` held fixed; repeat while `v`
    /// is unstable.
    pub(crate) fn run<H: Heights>(&mut self, h: &mut H, v: usize, opts: AvalancheOptions) -> AvalancheSummary {
        self.clear();
        let d = h.domain().clone();
        let nd = d.num_dirs();
        let thr = nd as u32;
        let mut sum = AvalancheSummary::default();
        let hv = h.get(v) + 1;
        h.set(v, hv);
        let mut k = 0u32;
        let mut first = Extent::new();
        while h.get(v) >= thr {
            if opts.max_waves.is_some_and(|m| k >= m) {
                sum.incomplete = true;
                break;
            }
            k += 1;
            if opts.record_waves {
                self.waves.push(Vec::new());
            }
            self.queue.push(v);
            let mut wave_size = 0u64;
            while let Some(x) = self.queue.pop() {
                let hx = h.get(x);
                if hx < thr || (x == v && self.wave[v] == k) {
                    continue;
                }
                h.set(x, hx - thr);
                if self.odo[x] == 0 {
                    self.touched.push(x);
                    if d.is_boundary_adjacent(x) {
                        sum.truncated = true;
                    }
                }
                self.odo[x] += 1;
                sum.total += 1;
                if self.wave[x] == k {
                    sum.repeat_topplings += 1;
                } else {
                    self.wave[x] = k;
                    wave_size += 1;
                    if opts.record_waves {
                        self.waves.last_mut().expect("wave").push(x);
                    }
                    if k == 1 {
                        first.add(&d.point(x));
                    }
                }
                for dir in 0..nd {
                    let n = d.step(x, dir);
                    if d.is_inside(n) {
                        let hn = h.get(n) + 1;
                        h.set(n, hn);
                        if hn >= thr && n != v {
                            self.queue.push(n);
                        }
                    }
                }
                if x != v && h.get(x) >= thr {
                    self.queue.push(x);
                }
            }
            if k == 1 {
                sum.first_wave_size = wave_size;
                sum.first_wave_diam = first.diam(d.dim());
            }
        }
        sum.waves = k;
        sum.cluster_size = self.touched.len() as u64;
        let mut ext = Extent::new();
        for &s in &self.touched {
            ext.add(&d.point(s));
        }
        sum.diam_ext = ext.diam(d.dim());
        sum
    }
}

/// Avalanche record with explicit site sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AvalancheResult {
    pub odometer: BTreeMap<Point, u64>,
    pub waves: Vec<BTreeSet<Point>>,
    pub cluster: BTreeSet<Point>,
    pub total: u64,
    pub truncated: bool,
    /// Largest L∞ distance from the addition site to a toppled site.
    pub cluster_radius: u32,
}

impl AvalancheResult {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "total": self.total,
            "waves": self.waves.iter().map(|w| w.len()).collect::<Vec<_>>(),
            "cluster_radius": self.cluster_radius,
            "truncated": self.truncated,
        })
    }
}

/// Adds a grain at `v` to a copy of `c` and decomposes the avalanche into waves.
pub fn avalanche(c: &SandpileConfig, v: &Point) -> Result<(SandpileConfig, AvalancheResult)> {
    if !c.is_stable() {
        return Err(Error::Unstable);
    }
    let s = c.domain.site_slot(v).ok_or(Error::OutsideDomain(*v))?;
    let mut out = c.clone();
    let mut scratch = AvalancheScratch::new(c.domain.num_slots());
    let sum = scratch.run(
        &mut out,
        s,
        AvalancheOptions {
            record_waves: true,
            max_waves: None,
        },
    );
    let d = &c.domain;
    let odometer: BTreeMap<Point, u64> = scratch.cluster().iter().map(|&x| (d.point(x), scratch.odometer(x) as u64)).collect();
    let waves = scratch
        .waves()
        .iter()
        .map(|w| w.iter().map(|&x| d.point(x)).collect())
        .collect();
    let cluster: BTreeSet<Point> = odometer.keys().copied().collect();
    let cluster_radius = cluster.iter().map(|p| p.sub(v).linf_norm()).max().unwrap_or(0);
    Ok((
        out,
        AvalancheResult {
            odometer,
            waves,
            cluster,
            total: sum.total,
            truncated: sum.truncated,
            cluster_radius,
        },
    ))
}

/// Uniform recurrent configuration whose heights are computed on demand.
///
/// A height needs the depths of the site and its neighbours, so only those
/// sites are attached. With the same seed the heights agree with
/// [`sample_recurrent`].
pub struct LazySandpile {
    engine: WilsonEngine,
    scratch: AvalancheScratch,
}

struct LazyHeights<'a>(&'a mut WilsonEngine);

impl LazyHeights<'_> {
    fn initial(&mut self, x: usize) -> u32 {
        let e = &mut *self.0;
        e.attach(x);
        for dir in 0..e.domain().num_dirs() {
            let n = e.domain().step(x, dir);
            if e.domain().is_inside(n) {
                e.attach(n);
            }
        }
        md_height(e.domain(), x, e.next_dir(x), |s| e.depth(s))
    }
}

impl Heights for LazyHeights<'_> {
    fn domain(&self) -> &Domain {
        self.0.domain()
    }
    fn get(&mut self, slot: usize) -> u32 {
        match self.0.cached_height(slot) {
            Some(h) => h as u32,
            None => {
                let h = self.initial(slot);
                self.0.set_cached_height(slot, h as u8);
                h
            }
        }
    }
    fn set(&mut self, slot: usize, h: u32) {
        if self.0.cached_height(slot).is_none() {
            // the tree must be known around every site before it changes
            self.get(slot);
        }
        debug_assert!(h < 256);
        self.0.set_cached_height(slot, h as u8);
    }
}

impl LazySandpile {
    pub fn new(domain: Domain) -> Self {
        let n = domain.num_slots();
        LazySandpile {
            engine: WilsonEngine::new(domain),
            scratch: AvalancheScratch::new(n),
        }
    }

    pub fn domain(&self) -> &Domain {
        self.engine.domain()
    }

    pub fn reset(&mut self, seed: RngSeed) {
        self.engine.reset(seed, None);
    }

    /// Current height at a slot.
    pub fn height(&mut self, slot: usize) -> u32 {
        LazyHeights(&mut self.engine).get(slot)
    }

    pub fn avalanche(&mut self, v: usize, opts: AvalancheOptions) -> AvalancheSummary {
        self.scratch.run(&mut LazyHeights(&mut self.engine), v, opts)
    }

    pub fn scratch(&self) -> &AvalancheScratch {
        &self.scratch
    }

    pub fn engine(&self) -> &WilsonEngine {
        &self.engine
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::plus_shape;

    fn o() -> Point {
        Point::origin(3)
    }

    fn single() -> Domain {
        Domain::centered_box(3, 0).unwrap()
    }

    #[test]
    fn topple_examples() {
        let c = SandpileConfig::from_heights(single(), &[6]).unwrap();
        let t = topple(&c, &o()).unwrap();
        assert_eq!(t.heights(), vec![0]);
        assert!(topple(&t, &o()).is_err());

        let d = Domain::centered_box(3, 1).unwrap();
        let mut c = SandpileConfig::uniform(d.clone(), 0);
        c.set_height(&o(), 6).unwrap();
        let t = topple(&c, &o()).unwrap();
        for n in crate::lattice::neighbors(&o()) {
            assert_eq!(t.height(&n), Some(1));
        }
        let corner = Point::xyz(1, 1, 1);
        let mut c = SandpileConfig::uniform(d, 0);
        c.set_height(&corner, 6).unwrap();
        let before = c.total_mass();
        let lost = c.topple_in_place(&corner).unwrap();
        assert_eq!(lost, 3);
        assert_eq!(c.total_mass(), before - 6 + 3);
    }

    #[test]
    fn stabilize_examples() {
        let c = SandpileConfig::from_heights(single(), &[3]).unwrap();
        let (s, odo) = stabilize(&c);
        assert_eq!(s, c);
        assert_eq!(odo.total(), 0);
        let c = SandpileConfig::from_heights(single(), &[7]).unwrap();
        let (s, odo) = stabilize(&c);
        assert_eq!(s.heights(), vec![1]);
        assert_eq!(odo.counts, vec![1]);
        assert_eq!(odo.lost, 6);
    }

    #[test]
    fn conservation() {
        let d = Domain::centered_box(3, 2).unwrap();
        let mut c = SandpileConfig::uniform(d, 5);
        c.add_grains(&o(), 40).unwrap();
        let before = c.total_mass();
        let (s, odo) = stabilize(&c);
        assert!(s.is_stable());
        assert_eq!(s.total_mass() + odo.lost, before);
    }

    #[test]
    fn burning_examples() {
        let d = Domain::centered_box(3, 2).unwrap();
        assert!(is_recurrent(&SandpileConfig::uniform(d.clone(), 5)).unwrap());
        assert!(is_recurrent(&SandpileConfig::uniform(d, 6)).is_err());
        for h in 0..6 {
            let c = SandpileConfig::from_heights(single(), &[h]).unwrap();
            assert!(is_recurrent(&c).unwrap());
        }
        let pair = Domain::from_points(&[o(), Point::xyz(1, 0, 0)]).unwrap();
        let c = SandpileConfig::from_heights(pair, &[0, 0]).unwrap();
        assert!(!is_recurrent(&c).unwrap());
        assert!(matches!(md_inverse(&c), Err(Error::NotRecurrent)));
    }

    #[test]
    fn single_site_bijection() {
        let d = single();
        let mut hs = BTreeSet::new();
        for dir in 0..6 {
            let f = SpanningForest::from_parents(d.clone(), Roots::Wired, &[(o(), Parent::Wired(Direction(dir)))]).unwrap();
            let c = md_bijection(&f).unwrap();
            hs.insert(c.heights()[0]);
            assert_eq!(md_inverse(&c).unwrap(), f);
        }
        assert_eq!(hs, (0..6).collect());
    }

    #[test]
    fn bijection_round_trips_on_samples() {
        let d = Domain::centered_box(3, 3).unwrap();
        for s in 0..30 {
            let t = wilson_ust(&d, &SiteOrder::Lexicographic, RngSeed::new(17, s)).unwrap();
            let c = md_bijection(&t).unwrap();
            assert!(is_recurrent(&c).unwrap());
            assert_eq!(md_inverse(&c).unwrap(), t);
        }
    }

    #[test]
    fn avalanche_examples() {
        let c = SandpileConfig::from_heights(single(), &[3]).unwrap();
        let (_, a) = avalanche(&c, &o()).unwrap();
        assert_eq!((a.total, a.waves.len()), (0, 0));
        assert!(a.cluster.is_empty());
        let c = SandpileConfig::from_heights(single(), &[5]).unwrap();
        let (after, a) = avalanche(&c, &o()).unwrap();
        assert_eq!(a.total, 1);
        assert_eq!(a.waves, vec![[o()].into_iter().collect()]);
        assert_eq!(after.heights(), vec![0]);
        assert!(a.truncated);
    }

    #[test]
    fn wave_loop_matches_plain_stabilization() {
        let d = Domain::centered_box(3, 3).unwrap();
        for s in 0..40 {
            let c = sample_recurrent(&d, RngSeed::new(23, s)).unwrap();
            let (after, a) = avalanche(&c, &o()).unwrap();
            let mut plus = c.clone();
            plus.add_grains(&o(), 1).unwrap();
            let (st, odo) = stabilize(&plus);
            assert_eq!(after, st);
            for (p, n) in d.points().zip(&odo.counts) {
                assert_eq!(a.odometer.get(&p).copied().unwrap_or(0), *n);
            }
            assert_eq!(a.waves.len() as u64, a.odometer.get(&o()).copied().unwrap_or(0));
            let union: BTreeSet<Point> = a.waves.iter().flatten().copied().collect();
            assert_eq!(union, a.cluster);
            assert_eq!(a.waves.iter().map(|w| w.len() as u64).sum::<u64>(), a.total);
        }
    }

    #[test]
    fn lazy_heights_match_full_sample() {
        let d = Domain::centered_box(3, 4).unwrap();
        let mut lazy = LazySandpile::new(d.clone());
        for s in 0..10 {
            let seed = RngSeed::new(31, s);
            let full = sample_recurrent(&d, seed).unwrap();
            lazy.reset(seed);
            for x in d.slots() {
                assert_eq!(lazy.height(x), full.slot_height(x));
            }
            lazy.reset(seed);
            let o = d.site_slot(&o()).unwrap();
            let sum = lazy.avalanche(o, AvalancheOptions::default());
            let (_, a) = avalanche(&full, &Point::origin(3)).unwrap();
            assert_eq!(sum.total, a.total);
            assert_eq!(sum.cluster_size, a.cluster.len() as u64);
        }
    }

    #[test]
    fn plus_shape_recurrent_samples_pass_burning() {
        let d = Domain::from_points(&plus_shape(3)).unwrap();
        for s in 0..100 {
            assert!(is_recurrent(&sample_recurrent(&d, RngSeed::new(2, s)).unwrap()).unwrap());
        }
    }
}
