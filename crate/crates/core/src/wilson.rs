//! Wilson's algorithm on a wired domain with per-site random stacks.
//!
//! The `k`-th departure from a site always uses the same hashed direction
//! (a function of the replica key, the slot and `k`). Under this coupling the
//! sampled tree does not depend on the order in which sites are attached, so
//! a lazily explored neighbourhood agrees exactly with a full run.
//!
//! State lives in a generation-stamped slot array, so one engine serves many
//! replicas without clearing memory between them.

use std::alloc::{self, Layout};

use crate::lattice::Domain;
use crate::randwalk::RngSeed;

/// `next` value of a site that is itself a root.
pub const NO_DIR: u8 = 0xFF;

const IN_TREE: u8 = 1;
const RED: u8 = 2;
const ROOT: u8 = 4;
const HEIGHT: u8 = 8;

#[derive(Clone, Copy, Default)]
#[repr(C)]
struct Slot {
    gen: u32,
    count: u32,
    depth: u32,
    next: u8,
    flags: u8,
    height: u8,
    _pad: u8,
}

/// Where a parent pointer leads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Link {
    Site(usize),
    /// The wired root, through the parallel edge in this direction.
    Wired(u8),
    /// The site is a planted root.
    Root,
}

#[inline]
fn splitmix_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn zeroed_slots(n: usize) -> Vec<Slot> {
    if n == 0 {
        return Vec::new();
    }
    let layout = Layout::array::<Slot>(n).expect("slot array layout");
    // SAFETY: `Slot` is a plain `repr(C)` struct of integers, for which the
    // all-zero bit pattern is valid. Zeroed allocation leaves untouched pages
    // unbacked, which matters for large sparse explorations.
    unsafe {
        let ptr = alloc::alloc_zeroed(layout) as *mut Slot;
        if ptr.is_null() {
            alloc::handle_alloc_error(layout);
        }
        Vec::from_raw_parts(ptr, n, n)
    }
}

pub struct WilsonEngine {
    domain: Domain,
    slots: Vec<Slot>,
    gen: u32,
    key: u64,
    origin: Option<usize>,
    path: Vec<usize>,
    steps: u64,
}

impl WilsonEngine {
    pub fn new(domain: Domain) -> Self {
        let n = domain.num_slots();
        WilsonEngine {
            domain,
            slots: zeroed_slots(n),
            gen: 0,
            key: 0,
            origin: None,
            path: Vec::new(),
            steps: 0,
        }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Starts a fresh replica. With `colour_through = Some(o)`, a path that
    /// passes through `o` colours `o` and everything before it red.
    pub fn reset(&mut self, seed: RngSeed, colour_through: Option<usize>) {
        if self.gen >= u32::MAX - 1 {
            self.slots.iter_mut().for_each(|s| *s = Slot::default());
            self.gen = 0;
        }
        self.gen += 1;
        self.key = seed.key();
        self.origin = colour_through;
        self.steps = 0;
    }

    /// Sites attached by the last call to [`attach`](Self::attach).
    pub fn last_path(&self) -> &[usize] {
        &self.path
    }

    /// Walk steps taken since the last reset.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    #[inline]
    fn fresh(&self, slot: usize) -> bool {
        self.slots[slot].gen != self.gen
    }

    #[inline]
    fn touch(&mut self, slot: usize) {
        if self.fresh(slot) {
            self.slots[slot] = Slot {
                gen: self.gen,
                ..Slot::default()
            };
        }
    }

    #[inline]
    fn choose(&self, slot: usize, count: u32) -> u8 {
        let idx = ((slot as u64) << 32) | count as u64;
        let h = splitmix_finalize(self.key.wrapping_add(idx.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        (((h >> 32) * self.domain.num_dirs() as u64) >> 32) as u8
    }

    /// Makes an inside slot a root of the forest (coloured red).
    pub fn plant_root(&mut self, slot: usize) {
        debug_assert!(self.domain.is_inside(slot));
        self.touch(slot);
        let s = &mut self.slots[slot];
        s.flags |= IN_TREE | RED | ROOT;
        s.depth = 0;
        s.next = NO_DIR;
    }

    #[inline]
    pub fn in_tree(&self, slot: usize) -> bool {
        !self.fresh(slot) && self.slots[slot].flags & IN_TREE != 0
    }

    #[inline]
    pub fn is_red(&self, slot: usize) -> bool {
        !self.fresh(slot) && self.slots[slot].flags & RED != 0
    }

    /// Tree distance to the root (the wired root has depth 0).
    #[inline]
    pub fn depth(&self, slot: usize) -> u32 {
        debug_assert!(self.in_tree(slot));
        self.slots[slot].depth
    }

    #[inline]
    pub fn next_dir(&self, slot: usize) -> u8 {
        debug_assert!(self.in_tree(slot));
        self.slots[slot].next
    }

    pub fn link(&self, slot: usize) -> Link {
        let d = self.next_dir(slot);
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

    /// Parent slot if the parent is a site.
    #[inline]
    pub fn parent_slot(&self, slot: usize) -> Option<usize> {
        match self.link(slot) {
            Link::Site(n) => Some(n),
            _ => None,
        }
    }

    /// Runs the loop-erased walk from `slot` until it hits the current tree
    /// and attaches it. Returns the newly attached sites, from `slot` onward.
    pub fn attach(&mut self, start: usize) -> &[usize] {
        self.path.clear();
        self.touch(start);
        if self.slots[start].flags & IN_TREE != 0 {
            return &self.path;
        }
        let gen = self.gen;
        let mut cur = start;
        let mut steps = 0u64;
        let (end_depth, end_red) = loop {
            let count = self.slots[cur].count;
            let dir = self.choose(cur, count);
            let s = &mut self.slots[cur];
            s.count = count + 1;
            s.next = dir;
            steps += 1;
            let n = self.domain.step(cur, dir as usize);
            let ns = self.slots[n];
            if ns.gen == gen {
                if ns.flags & IN_TREE != 0 {
                    break (ns.depth, ns.flags & RED != 0);
                }
            } else if !self.domain.is_inside(n) {
                break (0, false);
            } else {
                self.slots[n] = Slot {
                    gen,
                    ..Slot::default()
                };
            }
            cur = n;
        };
        self.steps += steps;

        let mut c = start;
        loop {
            self.path.push(c);
            let n = self.domain.step(c, self.slots[c].next as usize);
            if !self.domain.is_inside(n) || self.slots[n].flags & IN_TREE != 0 && self.slots[n].gen == gen {
                break;
            }
            c = n;
        }
        let red_upto = if end_red {
            self.path.len()
        } else {
            self.origin
                .and_then(|o| self.path.iter().position(|&s| s == o))
                .map_or(0, |k| k + 1)
        };
        let len = self.path.len() as u32;
        for (i, &s) in self.path.iter().enumerate() {
            let st = &mut self.slots[s];
            st.flags |= IN_TREE;
            if i < red_upto {
                st.flags |= RED;
            }
            st.depth = end_depth + len - i as u32;
        }
        &self.path
    }

    /// Attaches every site, in lexicographic order.
    pub fn run_full(&mut self) {
        let slots: Vec<usize> = self.domain.slots().collect();
        self.run_order(&slots);
    }

    /// Attaches every site in the given slot order.
    pub fn run_order(&mut self, order: &[usize]) {
        for &s in order {
            self.attach(s);
        }
    }

    /// Lazily computed sandpile height cached on a tree site.
    #[inline]
    pub(crate) fn cached_height(&self, slot: usize) -> Option<u8> {
        let s = &self.slots[slot];
        (s.gen == self.gen && s.flags & HEIGHT != 0).then_some(s.height)
    }

    #[inline]
    pub(crate) fn set_cached_height(&mut self, slot: usize, h: u8) {
        self.touch(slot);
        let s = &mut self.slots[slot];
        s.flags |= HEIGHT;
        s.height = h;
    }
}
