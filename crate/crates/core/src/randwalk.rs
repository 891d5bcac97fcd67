//! Seeded simple random walks on wired domains and chronological loop erasure.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::io::{Read, Write};

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Direction, Domain, Point};

/// Key of one replica's randomness.
///
/// The ChaCha8 stream selected by `stream` under key `master` is the only
/// source of randomness for that replica.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub master: u64,
    pub stream: u64,
}

impl RngSeed {
    pub fn new(master: u64, stream: u64) -> Self {
        RngSeed { master, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }

    /// Seed of replica `index` of the experiment family `tag`.
    pub fn replica(master: u64, tag: u16, index: u64) -> Self {
        debug_assert!(index < 1 << 48);
        RngSeed::new(master, (tag as u64) << 48 | index)
    }

    /// 64-bit key for hashed (order-free) randomness.
    pub fn key(&self) -> u64 {
        self.rng().next_u64()
    }
}

/// Uniform draw from `0..n` for `n <= 2 * MAX_DIM`.
#[inline]
pub fn draw_dir<R: RngCore>(rng: &mut R, n: usize) -> usize {
    ((rng.next_u32() as u64 * n as u64) >> 32) as usize
}

/// A path vertex: a lattice site or the wired root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Vertex {
    Site(Point),
    Root,
}

impl Vertex {
    pub fn site(&self) -> Option<Point> {
        match self {
            Vertex::Site(p) => Some(*p),
            Vertex::Root => None,
        }
    }
}

impl Serialize for Vertex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Vertex::Site(p) => p.serialize(s),
            Vertex::Root => s.serialize_str("ROOT"),
        }
    }
}

impl<'de> Deserialize<'de> for Vertex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Site(Point),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Site(p) => Ok(Vertex::Site(p)),
            Raw::Tag(t) if t == "ROOT" => Ok(Vertex::Root),
            Raw::Tag(t) => Err(de::Error::custom(format!("unknown vertex tag {t:?}"))),
        }
    }
}

/// A nearest-neighbour trajectory, possibly ending at the wired root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Path {
    pub vertices: Vec<Vertex>,
}

impl Path {
    pub fn from_points(points: &[Point]) -> Self {
        Path {
            vertices: points.iter().map(|&p| Vertex::Site(p)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Number of steps.
    pub fn steps(&self) -> usize {
        self.vertices.len().saturating_sub(1)
    }

    pub fn first(&self) -> Option<Vertex> {
        self.vertices.first().copied()
    }

    pub fn last(&self) -> Option<Vertex> {
        self.vertices.last().copied()
    }

    pub fn is_self_avoiding(&self) -> bool {
        let mut seen = std::collections::HashSet::with_capacity(self.len());
        self.vertices.iter().all(|v| seen.insert(*v))
    }

    /// Checks that consecutive vertices are adjacent and that the root, if
    /// present, is the final vertex.
    pub fn is_nearest_neighbour(&self) -> bool {
        self.vertices.windows(2).enumerate().all(|(i, w)| match (w[0], w[1]) {
            (Vertex::Site(a), Vertex::Site(b)) => a.is_adjacent(&b),
            (Vertex::Site(_), Vertex::Root) => i + 2 == self.len(),
            (Vertex::Root, _) => false,
        })
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.vertices.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            match v {
                Vertex::Site(p) => write!(f, "{p:?}")?,
                Vertex::Root => write!(f, "ROOT")?,
            }
        }
        Ok(())
    }
}

/// Walks from `start` over domain slots until `stop(slot)` or the wired root.
///
/// Returns the final slot, or `None` when the walk left the domain. Every
/// visited slot is passed to `visit` (including `start`).
#[inline]
pub fn walk_slots<R: RngCore>(
    domain: &Domain,
    start: usize,
    rng: &mut R,
    mut stop: impl FnMut(usize) -> bool,
    mut visit: impl FnMut(usize, usize),
) -> Option<usize> {
    let nd = domain.num_dirs();
    let mut cur = start;
    if stop(cur) {
        return Some(cur);
    }
    loop {
        let dir = draw_dir(rng, nd);
        visit(cur, dir);
        cur = domain.step(cur, dir);
        if !domain.is_inside(cur) {
            return None;
        }
        if stop(cur) {
            return Some(cur);
        }
    }
}

/// Simple random walk from `start` until it first hits an absorbing site or
/// the wired root. Time 0 counts.
pub fn srw_until_hit(
    start: &Point,
    mut absorbing: impl FnMut(&Point) -> bool,
    domain: &Domain,
    seed: RngSeed,
) -> Result<Path> {
    let s = domain.site_slot(start).ok_or(Error::OutsideDomain(*start))?;
    let mut rng = seed.rng();
    let mut vertices = vec![Vertex::Site(*start)];
    let end = walk_slots(
        domain,
        s,
        &mut rng,
        |slot| absorbing(&domain.point(slot)),
        |from, dir| {
            let n = domain.step(from, dir);
            if domain.is_inside(n) {
                vertices.push(Vertex::Site(domain.point(n)));
            }
        },
    );
    if end.is_none() {
        vertices.push(Vertex::Root);
    }
    Ok(Path { vertices })
}

/// Chronological loop erasure of a sequence, single pass.
///
/// Keeps a stack of the current erased path and the stack position of each
/// vertex on it; a revisit truncates the stack back to that position.
pub fn loop_erase_seq<T: Copy + Eq + Hash>(seq: &[T]) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(seq.len());
    let mut pos: HashMap<T, usize> = HashMap::with_capacity(seq.len());
    for &v in seq {
        if let Some(&i) = pos.get(&v) {
            for w in out.drain(i + 1..) {
                pos.remove(&w);
            }
        } else {
            pos.insert(v, out.len());
            out.push(v);
        }
    }
    out
}

/// Chronological loop erasure of a path.
pub fn loop_erase(p: &Path) -> Path {
    Path {
        vertices: loop_erase_seq(&p.vertices),
    }
}

/// Loop-erased walk from the origin run to `∂B_n`, truncated at its first
/// vertex outside `B_r`. A proxy for the infinite loop-erased walk in `B_r`.
pub fn ilerw_truncated(dim: usize, r: u32, n: u32, seed: RngSeed) -> Result<Path> {
    if n < 4 * r {
        return Err(Error::Precondition(format!("need N >= 4R, got N={n}, R={r}")));
    }
    let origin = Point::origin(dim);
    if r == 0 {
        return Ok(Path::from_points(&[origin]));
    }
    let mut rng = seed.rng();
    let nd = 2 * dim;
    let mut last_exit: HashMap<Point, u8> = HashMap::new();
    let mut cur = origin;
    while cur.linf_norm() <= n {
        let dir = draw_dir(&mut rng, nd) as u8;
        last_exit.insert(cur, dir);
        cur = cur.shifted(Direction(dir));
    }
    let mut out = vec![origin];
    let mut cur = origin;
    while cur.linf_norm() <= r {
        cur = cur.shifted(Direction(last_exit[&cur]));
        out.push(cur);
    }
    Ok(Path::from_points(&out))
}

const TRACE_MAGIC: &[u8; 4] = b"LWTR";
const TRACE_VERSION: u8 = 1;
const TRACE_ROOT: u8 = 0xFF;

/// Writes a path as a compact binary trace: header, start point, then one
/// direction byte per step (`0xFF` for the final step to the root).
pub fn write_trace<W: Write>(p: &Path, w: &mut W) -> Result<()> {
    let start = p
        .first()
        .and_then(|v| v.site())
        .ok_or_else(|| Error::Precondition("trace needs a path starting at a site".into()))?;
    w.write_all(TRACE_MAGIC)?;
    w.write_all(&[TRACE_VERSION, start.dim() as u8])?;
    for c in start.coords() {
        w.write_all(&c.to_le_bytes())?;
    }
    w.write_all(&(p.steps() as u64).to_le_bytes())?;
    let mut bytes = Vec::with_capacity(p.steps());
    for win in p.vertices.windows(2) {
        let b = match (win[0], win[1]) {
            (Vertex::Site(a), Vertex::Site(b)) => {
                let d = Direction::all(a.dim())
                    .find(|&d| a.shifted(d) == b)
                    .ok_or_else(|| Error::Precondition(format!("{a:?} and {b:?} are not adjacent")))?;
                d.0
            }
            (Vertex::Site(_), Vertex::Root) => TRACE_ROOT,
            (Vertex::Root, _) => return Err(Error::Precondition("root must be the last vertex".into())),
        };
        bytes.push(b);
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_trace<R: Read>(r: &mut R) -> Result<Path> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head)?;
    if &head[..4] != TRACE_MAGIC {
        return Err(Error::Parse("not a walk trace".into()));
    }
    if head[4] != TRACE_VERSION {
        return Err(Error::Parse(format!("unsupported trace version {}", head[4])));
    }
    let dim = head[5] as usize;
    let mut coords = Vec::with_capacity(dim);
    for _ in 0..dim {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        coords.push(i32::from_le_bytes(b));
    }
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    let steps = u64::from_le_bytes(b) as usize;
    let mut dirs = vec![0u8; steps];
    r.read_exact(&mut dirs)?;
    let mut cur = Point::new(&coords).map_err(|e| Error::Parse(e.to_string()))?;
    let mut vertices = Vec::with_capacity(steps + 1);
    vertices.push(Vertex::Site(cur));
    for (i, &d) in dirs.iter().enumerate() {
        if d == TRACE_ROOT {
            if i + 1 != steps {
                return Err(Error::Parse("root step before end of trace".into()));
            }
            vertices.push(Vertex::Root);
        } else if (d as usize) < 2 * dim {
            cur = cur.shifted(Direction(d));
            vertices.push(Vertex::Site(cur));
        } else {
            return Err(Error::Parse(format!("bad direction byte {d}")));
        }
    }
    Ok(Path { vertices })
}
