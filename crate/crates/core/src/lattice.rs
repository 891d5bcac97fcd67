//! Lattice geometry on `Z^d`: points, L∞ boxes, the fixed neighbour order,
//! and [`Domain`], the padded slot layout shared by every sampler.
//!
//! A domain is a finite site set `K` embedded in its bounding box plus one
//! layer of padding. Every site of `K` therefore has all `2d` neighbours
//! inside the slot array, and a neighbour slot outside `K` stands for one of
//! the parallel edges to the wired root.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 4;

/// A site of `Z^d`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point {
    dim: u8,
    coords: [i32; MAX_DIM],
}

impl Point {
    pub fn new(coords: &[i32]) -> Result<Self> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(Error::InvalidDimension(coords.len()));
        }
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Point {
            dim: coords.len() as u8,
            coords: c,
        })
    }

    pub fn origin(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "unsupported dimension {dim}");
        Point {
            dim: dim as u8,
            coords: [0; MAX_DIM],
        }
    }

    pub fn xyz(x: i32, y: i32, z: i32) -> Self {
        Point {
            dim: 3,
            coords: [x, y, z, 0],
        }
    }

    /// `sign * e_axis`.
    pub fn unit(dim: usize, axis: usize, sign: i32) -> Self {
        let mut p = Point::origin(dim);
        p.coords[axis] = sign;
        p
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn coords(&self) -> &[i32] {
        &self.coords[..self.dim()]
    }

    pub fn coord(&self, axis: usize) -> i32 {
        self.coords[axis]
    }

    pub fn linf_norm(&self) -> u32 {
        self.coords().iter().map(|c| c.unsigned_abs()).max().unwrap_or(0)
    }

    pub fn shifted(&self, dir: Direction) -> Point {
        let mut p = *self;
        p.coords[dir.axis()] += dir.sign();
        p
    }

    pub fn add(&self, other: &Point) -> Point {
        debug_assert_eq!(self.dim, other.dim);
        let mut p = *self;
        for i in 0..self.dim() {
            p.coords[i] += other.coords[i];
        }
        p
    }

    pub fn sub(&self, other: &Point) -> Point {
        debug_assert_eq!(self.dim, other.dim);
        let mut p = *self;
        for i in 0..self.dim() {
            p.coords[i] -= other.coords[i];
        }
        p
    }

    pub fn is_adjacent(&self, other: &Point) -> bool {
        self.dim == other.dim && self.sub(other).coords().iter().map(|c| c.abs()).sum::<i32>() == 1
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.dim()))?;
        for c in self.coords() {
            seq.serialize_element(c)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct PointVisitor;
        impl<'de> Visitor<'de> for PointVisitor {
            type Value = Point;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "an array of 1 to {MAX_DIM} integers")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<Point, A::Error> {
                let mut coords = Vec::with_capacity(MAX_DIM);
                while let Some(c) = seq.next_element::<i32>()? {
                    coords.push(c);
                }
                Point::new(&coords).map_err(de::Error::custom)
            }
        }
        deserializer.deserialize_seq(PointVisitor)
    }
}

/// One of the `2d` unit steps, indexed `+e1, -e1, +e2, -e2, ...`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Direction(pub u8);

impl Direction {
    pub fn all(dim: usize) -> impl Iterator<Item = Direction> {
        (0..2 * dim as u8).map(Direction)
    }
    pub fn index(self) -> usize {
        self.0 as usize
    }
    pub fn axis(self) -> usize {
        (self.0 / 2) as usize
    }
    pub fn sign(self) -> i32 {
        if self.0 % 2 == 0 {
            1
        } else {
            -1
        }
    }
    pub fn reversed(self) -> Direction {
        Direction(self.0 ^ 1)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.sign() > 0 { '+' } else { '-' };
        write!(f, "{s}e{}", self.axis() + 1)
    }
}

/// The `2d` neighbours of `p` in the global order `+e1, -e1, ..., +ed, -ed`.
pub fn neighbors(p: &Point) -> Vec<Point> {
    Direction::all(p.dim()).map(|d| p.shifted(d)).collect()
}

/// L∞ distance between two points of the same dimension.
pub fn linf_dist(p: &Point, q: &Point) -> Result<u32> {
    if p.dim != q.dim {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: q.dim(),
        });
    }
    Ok(p.sub(q).linf_norm())
}

/// Extrinsic (L∞) diameter of a point set; zero for empty or singleton sets.
///
/// The supremum over pairs of a max over axes is the max over axes of the
/// coordinate range, so this is linear in the set size.
pub fn linf_diameter<'a>(points: impl IntoIterator<Item = &'a Point>) -> u32 {
    let mut lo = [i32::MAX; MAX_DIM];
    let mut hi = [i32::MIN; MAX_DIM];
    let mut dim = 0;
    for p in points {
        dim = p.dim();
        for a in 0..dim {
            lo[a] = lo[a].min(p.coords[a]);
            hi[a] = hi[a].max(p.coords[a]);
        }
    }
    (0..dim).map(|a| (hi[a] - lo[a]) as u32).max().unwrap_or(0)
}

/// The L∞ ball `B(center, radius)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeBox {
    pub center: Point,
    pub radius: u32,
}

impl LatticeBox {
    pub fn new(center: Point, radius: u32) -> Self {
        LatticeBox { center, radius }
    }

    pub fn centered(dim: usize, radius: u32) -> Self {
        LatticeBox::new(Point::origin(dim), radius)
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.dim() == self.dim() && p.sub(&self.center).linf_norm() <= self.radius
    }

    pub fn volume(&self) -> u64 {
        (2 * self.radius as u64 + 1).pow(self.dim() as u32)
    }

    /// Outer vertex boundary: sites outside the box with a neighbour inside.
    ///
    /// Such a site has exactly one coordinate at offset `±(radius + 1)` and
    /// all others within `radius`, so the faces are enumerated directly.
    pub fn boundary(&self) -> BTreeSet<Point> {
        let d = self.dim();
        let r = self.radius as i32;
        let mut out = BTreeSet::new();
        let side = (2 * r + 1) as usize;
        let face_count = side.pow(d as u32 - 1);
        for axis in 0..d {
            for sign in [1, -1] {
                for k in 0..face_count {
                    let mut p = self.center;
                    p.coords[axis] += sign * (r + 1);
                    let mut rem = k;
                    for other in (0..d).filter(|&a| a != axis) {
                        p.coords[other] += (rem % side) as i32 - r;
                        rem /= side;
                    }
                    out.insert(p);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Shape {
    Box(LatticeBox),
    Sites,
}

/// A finite site set with wired boundary, laid out in a padded slot array.
///
/// Slots are ordered lexicographically in the coordinates (first axis most
/// significant), so ascending slot order is lexicographic site order.
#[derive(Clone)]
pub struct Domain {
    dim: usize,
    lo: [i32; MAX_DIM],
    extent: [usize; MAX_DIM],
    stride: [usize; MAX_DIM],
    offsets: [isize; 2 * MAX_DIM],
    inside: Arc<Vec<u64>>,
    num_slots: usize,
    num_sites: usize,
    shape: Shape,
}

impl fmt::Debug for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Domain")
            .field("dim", &self.dim)
            .field("shape", &self.shape)
            .field("num_sites", &self.num_sites)
            .finish()
    }
}

impl PartialEq for Domain {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.lo == other.lo
            && self.extent == other.extent
            && (Arc::ptr_eq(&self.inside, &other.inside) || self.inside == other.inside)
    }
}

/// Slot arrays are indexed by `u32` in the hot loops.
const MAX_SLOTS: u64 = 1 << 31;

impl Domain {
    fn layout(dim: usize, lo_site: &[i32], hi_site: &[i32]) -> Result<Domain> {
        let mut lo = [0; MAX_DIM];
        let mut extent = [1usize; MAX_DIM];
        let mut total: u64 = 1;
        for a in 0..dim {
            lo[a] = lo_site[a] - 1;
            extent[a] = (hi_site[a] - lo_site[a] + 3) as usize;
            total = total.saturating_mul(extent[a] as u64);
        }
        if total > MAX_SLOTS {
            return Err(Error::ResourceLimit(format!(
                "domain needs {total} slots, limit is {MAX_SLOTS}"
            )));
        }
        let mut stride = [0usize; MAX_DIM];
        let mut s = 1;
        for a in (0..dim).rev() {
            stride[a] = s;
            s *= extent[a];
        }
        let mut offsets = [0isize; 2 * MAX_DIM];
        for a in 0..dim {
            offsets[2 * a] = stride[a] as isize;
            offsets[2 * a + 1] = -(stride[a] as isize);
        }
        Ok(Domain {
            dim,
            lo,
            extent,
            stride,
            offsets,
            inside: Arc::new(vec![0; (total as usize).div_ceil(64)]),
            num_slots: total as usize,
            num_sites: 0,
            shape: Shape::Sites,
        })
    }

    /// The wired box `B(center, radius)`.
    pub fn from_box(b: LatticeBox) -> Result<Domain> {
        let dim = b.dim();
        let r = b.radius as i32;
        let lo: Vec<i32> = b.center.coords().iter().map(|c| c - r).collect();
        let hi: Vec<i32> = b.center.coords().iter().map(|c| c + r).collect();
        let mut d = Domain::layout(dim, &lo, &hi)?;
        let (stride, extent) = (d.stride, d.extent);
        let inside = Arc::get_mut(&mut d.inside).expect("fresh domain");
        let mut count = 0;
        for slot in 0..d.num_slots {
            let mut rem = slot;
            let mut interior = true;
            for a in 0..dim {
                let c = rem / stride[a];
                rem %= stride[a];
                if c == 0 || c + 1 == extent[a] {
                    interior = false;
                }
            }
            if interior {
                inside[slot >> 6] |= 1 << (slot & 63);
                count += 1;
            }
        }
        d.num_sites = count;
        d.shape = Shape::Box(b);
        Ok(d)
    }

    /// `Box(0, radius)` in dimension `dim`.
    pub fn centered_box(dim: usize, radius: u32) -> Result<Domain> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidDimension(dim));
        }
        Domain::from_box(LatticeBox::centered(dim, radius))
    }

    /// An explicit finite site set.
    pub fn from_points(points: &[Point]) -> Result<Domain> {
        let first = points.first().ok_or(Error::EmptyDomain)?;
        let dim = first.dim();
        let mut lo = first.coords().to_vec();
        let mut hi = first.coords().to_vec();
        for p in points {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.dim(),
                });
            }
            for a in 0..dim {
                lo[a] = lo[a].min(p.coords[a]);
                hi[a] = hi[a].max(p.coords[a]);
            }
        }
        let mut d = Domain::layout(dim, &lo, &hi)?;
        let mut count = 0;
        {
            let slots: Vec<usize> = points.iter().map(|p| d.slot_unchecked(p)).collect();
            let inside = Arc::get_mut(&mut d.inside).expect("fresh domain");
            for s in slots {
                let (w, b) = (s >> 6, 1u64 << (s & 63));
                if inside[w] & b == 0 {
                    inside[w] |= b;
                    count += 1;
                }
            }
        }
        d.num_sites = count;
        Ok(d)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_dirs(&self) -> usize {
        2 * self.dim
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    fn slot_unchecked(&self, p: &Point) -> usize {
        (0..self.dim)
            .map(|a| (p.coords[a] - self.lo[a]) as usize * self.stride[a])
            .sum()
    }

    /// Slot of `p` if it lies in the padded bounding box.
    pub fn slot(&self, p: &Point) -> Option<usize> {
        if p.dim() != self.dim {
            return None;
        }
        for a in 0..self.dim {
            let c = p.coords[a] - self.lo[a];
            if c < 0 || c as usize >= self.extent[a] {
                return None;
            }
        }
        Some(self.slot_unchecked(p))
    }

    /// Slot of a site of the domain.
    pub fn site_slot(&self, p: &Point) -> Option<usize> {
        self.slot(p).filter(|&s| self.is_inside(s))
    }

    pub fn point(&self, slot: usize) -> Point {
        let mut p = Point::origin(self.dim);
        let mut rem = slot;
        for a in 0..self.dim {
            p.coords[a] = (rem / self.stride[a]) as i32 + self.lo[a];
            rem %= self.stride[a];
        }
        p
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.site_slot(p).is_some()
    }

    #[inline]
    pub fn is_inside(&self, slot: usize) -> bool {
        (self.inside[slot >> 6] >> (slot & 63)) & 1 == 1
    }

    /// Neighbour slot of an inside slot. The result may be a padding slot,
    /// i.e. the wired root reached through that particular edge.
    #[inline]
    pub fn step(&self, slot: usize, dir: usize) -> usize {
        (slot as isize + self.offsets[dir]) as usize
    }

    pub fn offsets(&self) -> &[isize] {
        &self.offsets[..2 * self.dim]
    }

    /// Inside slots in lexicographic site order.
    pub fn slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_slots).filter(|&s| self.is_inside(s))
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        self.slots().map(|s| self.point(s))
    }

    /// Number of wired (outside) edges at an inside slot.
    pub fn wired_degree(&self, slot: usize) -> usize {
        (0..self.num_dirs())
            .filter(|&d| !self.is_inside(self.step(slot, d)))
            .count()
    }

    pub fn is_boundary_adjacent(&self, slot: usize) -> bool {
        self.wired_degree(slot) > 0
    }

    /// Map from slot to compact site index (lexicographic), `u32::MAX` off-site.
    pub fn compact_index(&self) -> Vec<u32> {
        let mut idx = vec![u32::MAX; self.num_slots()];
        for (i, s) in self.slots().enumerate() {
            idx[s] = i as u32;
        }
        idx
    }

    /// Whether the sites form a single nearest-neighbour component.
    pub fn is_connected(&self) -> bool {
        let Some(start) = self.slots().next() else {
            return false;
        };
        let mut seen = vec![false; self.num_slots()];
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 0;
        while let Some(s) = stack.pop() {
            count += 1;
            for d in 0..self.num_dirs() {
                let n = self.step(s, d);
                if self.is_inside(n) && !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        count == self.num_sites
    }
}

/// The plus-shaped set `{0} ∪ {±e_i}`.
pub fn plus_shape(dim: usize) -> Vec<Point> {
    let o = Point::origin(dim);
    std::iter::once(o).chain(neighbors(&o)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbour_order_at_origin() {
        let got = neighbors(&Point::origin(3));
        let want = [
            Point::xyz(1, 0, 0),
            Point::xyz(-1, 0, 0),
            Point::xyz(0, 1, 0),
            Point::xyz(0, -1, 0),
            Point::xyz(0, 0, 1),
            Point::xyz(0, 0, -1),
        ];
        assert_eq!(got, want);
        assert_eq!(neighbors(&Point::origin(2)).len(), 4);
    }

    #[test]
    fn neighbours_are_translation_invariant() {
        let p = Point::xyz(5, 5, 5);
        for (n, m) in neighbors(&p).iter().zip(neighbors(&Point::origin(3))) {
            assert_eq!(n.sub(&p), m);
            assert_eq!(linf_dist(&p, n).unwrap(), 1);
        }
    }

    #[test]
    fn boundary_of_single_site() {
        let b = LatticeBox::centered(3, 0).boundary();
        let want: BTreeSet<Point> = neighbors(&Point::origin(3)).into_iter().collect();
        assert_eq!(b, want);
    }

    #[test]
    fn boundary_matches_brute_force() {
        for r in 0..3u32 {
            let bx = LatticeBox::centered(3, r);
            let ri = r as i32 + 1;
            let mut brute = BTreeSet::new();
            for x in -ri..=ri {
                for y in -ri..=ri {
                    for z in -ri..=ri {
                        let p = Point::xyz(x, y, z);
                        if !bx.contains(&p) && neighbors(&p).iter().any(|n| bx.contains(n)) {
                            brute.insert(p);
                        }
                    }
                }
            }
            assert_eq!(bx.boundary(), brute, "radius {r}");
        }
        let b1 = LatticeBox::centered(3, 1).boundary();
        assert_eq!(b1.len(), 54);
        assert!(b1.contains(&Point::xyz(2, 0, 0)));
        assert!(!b1.contains(&Point::xyz(2, 2, 2)));
    }

    #[test]
    fn linf_distance() {
        let o = Point::origin(3);
        assert_eq!(linf_dist(&o, &Point::xyz(3, -2, 1)).unwrap(), 3);
        assert_eq!(linf_dist(&o, &o).unwrap(), 0);
        assert!(linf_dist(&o, &Point::origin(2)).is_err());
    }

    #[test]
    fn diameter_matches_pair_scan() {
        let pts = [
            Point::xyz(0, 0, 0),
            Point::xyz(3, -1, 2),
            Point::xyz(-2, 4, 0),
            Point::xyz(1, 1, -5),
        ];
        let pair = pts
            .iter()
            .flat_map(|p| pts.iter().map(move |q| linf_dist(p, q).unwrap()))
            .max()
            .unwrap();
        assert_eq!(linf_diameter(&pts), pair);
        assert_eq!(linf_diameter(&pts[..1]), 0);
    }

    #[test]
    fn domain_slots_round_trip() {
        let d = Domain::centered_box(3, 2).unwrap();
        assert_eq!(d.num_sites(), 125);
        assert_eq!(d.num_slots(), 7 * 7 * 7);
        let pts: Vec<Point> = d.points().collect();
        let mut sorted = pts.clone();
        sorted.sort();
        assert_eq!(pts, sorted, "slot order is lexicographic");
        for p in &pts {
            let s = d.site_slot(p).unwrap();
            assert_eq!(d.point(s), *p);
            for (dir, n) in neighbors(p).iter().enumerate() {
                assert_eq!(d.point(d.step(s, dir)), *n);
                assert_eq!(d.is_inside(d.step(s, dir)), n.linf_norm() <= 2);
            }
        }
        let corner = d.site_slot(&Point::xyz(2, 2, 2)).unwrap();
        assert_eq!(d.wired_degree(corner), 3);
    }

    #[test]
    fn explicit_domains() {
        let plus = Domain::from_points(&plus_shape(3)).unwrap();
        assert_eq!(plus.num_sites(), 7);
        assert!(plus.is_connected());
        let o = plus.site_slot(&Point::origin(3)).unwrap();
        assert_eq!(plus.wired_degree(o), 0);
        let e1 = plus.site_slot(&Point::xyz(1, 0, 0)).unwrap();
        assert_eq!(plus.wired_degree(e1), 5);
        let split = Domain::from_points(&[Point::xyz(0, 0, 0), Point::xyz(2, 0, 0)]).unwrap();
        assert!(!split.is_connected());
        assert!(Domain::from_points(&[]).is_err());
    }

    #[test]
    fn point_json() {
        let p = Point::xyz(1, -2, 3);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, "[1,-2,3]");
        assert_eq!(serde_json::from_str::<Point>(&s).unwrap(), p);
        let b = LatticeBox::centered(3, 4);
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, r#"{"center":[0,0,0],"radius":4}"#);
    }
}
