//! Toppling matrices and Green's functions.
//!
//! Normalization: `Δ_K = 2d·I − A_K` and `G_K = Δ_K^{-1}`, so for a single
//! site `G_K(0,0) = 1/(2d)`. The expected number of visits to `y` of a walk
//! started at `x` and killed on leaving `K` is `2d·G_K(x,y)`.
//!
//! Exact values come from banded elimination modulo many word-size primes
//! followed by Chinese remaindering up to the Hadamard bound; larger domains
//! use conjugate gradients.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Domain, Point};
use crate::randwalk::RngSeed;
use crate::runner::run_replicas;
use crate::sandpile::{AvalancheOptions, LazySandpile};

/// Largest domain for which Green's functions are computed exactly.
pub const EXACT_LIMIT: usize = 1000;

/// CG stopping threshold on the residual norm.
pub const CG_RESIDUAL: f64 = 1e-12;

/// `Δ_K` over the sites of a domain in lexicographic order.
#[derive(Clone, Debug)]
pub struct TopplingMatrix {
    sites: Vec<Point>,
    dim: usize,
    /// Neighbour indices within `K` for each site.
    adj: Vec<Vec<usize>>,
}

impl TopplingMatrix {
    pub fn new(domain: &Domain) -> Self {
        let idx = domain.compact_index();
        let slots: Vec<usize> = domain.slots().collect();
        let adj = slots
            .iter()
            .map(|&s| {
                (0..domain.num_dirs())
                    .map(|d| domain.step(s, d))
                    .filter(|&n| domain.is_inside(n))
                    .map(|n| idx[n] as usize)
                    .collect()
            })
            .collect();
        TopplingMatrix {
            sites: slots.iter().map(|&s| domain.point(s)).collect(),
            dim: domain.dim(),
            adj,
        }
    }

    pub fn sites(&self) -> &[Point] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn index_of(&self, p: &Point) -> Option<usize> {
        self.sites.binary_search(p).ok()
    }

    pub fn diagonal(&self) -> i64 {
        2 * self.dim as i64
    }

    /// Entry `(i, j)`.
    pub fn entry(&self, i: usize, j: usize) -> i64 {
        if i == j {
            self.diagonal()
        } else if self.adj[i].contains(&j) {
            -1
        } else {
            0
        }
    }

    fn bandwidth(&self) -> usize {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(i, a)| a.iter().map(move |&j| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    /// Bits of the Hadamard bound on `|det|` and on every cofactor.
    fn hadamard_bits(&self) -> f64 {
        let dg = self.diagonal() as f64;
        self.adj
            .iter()
            .map(|a| 0.5 * (dg * dg + a.len() as f64).log2())
            .sum()
    }

    pub fn determinant(&self) -> BigInt {
        self.exact_solve(None).0
    }

    /// `Δ_K^{-1}` column for site `y`, exactly.
    pub fn green_column_exact(&self, y: usize) -> Vec<BigRational> {
        let (det, nums) = self.exact_solve(Some(y));
        nums.into_iter().map(|n| BigRational::new(n, det.clone())).collect()
    }

    /// Determinant and, if requested, the adjugate column `det · Δ^{-1} e_y`.
    fn exact_solve(&self, y: Option<usize>) -> (BigInt, Vec<BigInt>) {
        let n = self.len();
        let need_bits = self.hadamard_bits() + 2.0;
        let band = self.bandwidth();
        let mut det_crt = Crt::new();
        let mut num_crt: Vec<Crt> = (0..if y.is_some() { n } else { 0 }).map(|_| Crt::new()).collect();
        let mut bits = 0.0;
        let mut p = 1u64 << 62;
        while bits < need_bits {
            p = prev_prime(p);
            let Some((det, sol)) = self.solve_mod(p, band, y) else {
                continue;
            };
            det_crt.add(det, p);
            for (c, v) in num_crt.iter_mut().zip(sol) {
                c.add(mul_mod(v, det, p), p);
            }
            bits += (p as f64).log2();
        }
        (det_crt.value(), num_crt.iter().map(|c| c.value()).collect())
    }

    /// Banded elimination without pivoting modulo `p`. `None` on a zero pivot.
    fn solve_mod(&self, p: u64, band: usize, y: Option<usize>) -> Option<(u64, Vec<u64>)> {
        let n = self.len();
        let w = 2 * band + 1;
        let mut a = vec![0u64; n * w];
        let at = |i: usize, j: usize| i * w + j + band - i;
        let dg = self.diagonal() as u64 % p;
        for i in 0..n {
            a[at(i, i)] = dg;
            for &j in &self.adj[i] {
                a[at(i, j)] = p - 1;
            }
        }
        let mut rhs = vec![0u64; if y.is_some() { n } else { 0 }];
        if let Some(y) = y {
            rhs[y] = 1;
        }
        let mut det = 1u64;
        for k in 0..n {
            let piv = a[at(k, k)];
            if piv == 0 {
                return None;
            }
            det = mul_mod(det, piv, p);
            let inv = pow_mod(piv, p - 2, p);
            let hi = (k + band + 1).min(n);
            for i in k + 1..hi {
                let aik = a[at(i, k)];
                if aik == 0 {
                    continue;
                }
                let f = mul_mod(aik, inv, p);
                for j in k..hi {
                    let akj = a[at(k, j)];
                    if akj != 0 {
                        let v = &mut a[i * w + j + band - i];
                        *v = sub_mod(*v, mul_mod(f, akj, p), p);
                    }
                }
                if !rhs.is_empty() {
                    rhs[i] = sub_mod(rhs[i], mul_mod(f, rhs[k], p), p);
                }
            }
        }
        if !rhs.is_empty() {
            for k in (0..n).rev() {
                let hi = (k + band + 1).min(n);
                let mut s = rhs[k];
                for j in k + 1..hi {
                    s = sub_mod(s, mul_mod(a[at(k, j)], rhs[j], p), p);
                }
                rhs[k] = mul_mod(s, pow_mod(a[at(k, k)], p - 2, p), p);
            }
        }
        Some((det, rhs))
    }

    /// `y = Δ x` on compact vectors.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let dg = self.diagonal() as f64;
        for (i, a) in self.adj.iter().enumerate() {
            out[i] = dg * x[i] - a.iter().map(|&j| x[j]).sum::<f64>();
        }
    }

    /// `Δ_K^{-1}` column for site `y` by conjugate gradients.
    pub fn green_column_cg(&self, y: usize) -> Result<Vec<f64>> {
        let mut b = vec![0.0; self.len()];
        b[y] = 1.0;
        conjugate_gradient(|x, out| self.apply(x, out), &b, CG_RESIDUAL)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let entries: Vec<(usize, usize, i64)> = (0..self.len())
            .flat_map(|i| {
                std::iter::once((i, i, self.diagonal())).chain(self.adj[i].iter().map(move |&j| (i, j, -1)))
            })
            .collect();
        serde_json::json!({ "sites": self.sites, "entries": entries })
    }
}

/// Solves `A x = b` for symmetric positive definite `A`, iterating until the
/// recomputed residual norm is below `tol`.
pub fn conjugate_gradient(apply: impl Fn(&[f64], &mut [f64]), b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let mut rr = dot(&r, &r);
    let max_iter = 20 * n + 1000;
    for _ in 0..max_iter {
        if rr.sqrt() < tol * 0.1 {
            apply(&x, &mut ap);
            let true_rr: f64 = b.iter().zip(&ap).map(|(b, a)| (b - a) * (b - a)).sum();
            if true_rr.sqrt() < tol {
                return Ok(x);
            }
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
            p.copy_from_slice(&r);
            rr = dot(&r, &r);
        }
        apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence(format!("CG did not reach residual {tol} in {max_iter} iterations")))
}

/// A Green's function value, exact when the domain is small enough.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenValue {
    pub exact: Option<BigRational>,
    pub value: f64,
}

impl GreenValue {
    fn from_exact(q: BigRational) -> Self {
        let value = ratio_to_f64(&q);
        GreenValue { exact: Some(q), value }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "exact": self.exact.as_ref().map(ratio_string),
            "value": self.value,
        })
    }
}

pub fn ratio_string(q: &BigRational) -> String {
    format!("{}/{}", q.numer(), q.denom())
}

pub fn ratio_to_f64(q: &BigRational) -> f64 {
    // scale to keep precision for huge numerators and denominators
    let shift = q.denom().bits() as i64 - 60;
    let (n, d) = if shift > 0 {
        (q.numer() >> shift as usize, q.denom() >> shift as usize)
    } else {
        (q.numer().clone(), q.denom().clone())
    };
    n.to_f64().unwrap_or(f64::NAN) / d.to_f64().unwrap_or(f64::NAN)
}

/// `G_K(x, y) = (Δ_K^{-1})_{xy}`.
pub fn green_finite(domain: &Domain, x: &Point, y: &Point) -> Result<GreenValue> {
    let m = TopplingMatrix::new(domain);
    let xi = m.index_of(x).ok_or(Error::OutsideDomain(*x))?;
    let yi = m.index_of(y).ok_or(Error::OutsideDomain(*y))?;
    if m.len() <= EXACT_LIMIT {
        let col = m.green_column_exact(yi);
        Ok(GreenValue::from_exact(col[xi].clone()))
    } else {
        let col = m.green_column_cg(yi)?;
        Ok(GreenValue {
            exact: None,
            value: col[xi],
        })
    }
}

/// `G_{Box(0,N)}(0,0)` by conjugate gradients, using slot-indexed vectors.
pub fn green_box_origin(dim: usize, n: u32) -> Result<f64> {
    let d = Domain::centered_box(dim, n)?;
    let slots: Vec<usize> = d.slots().collect();
    let m = d.num_slots();
    let nd = d.num_dirs();
    let offs: Vec<isize> = d.offsets().to_vec();
    let mask: Vec<f64> = (0..m).map(|s| if d.is_inside(s) { 1.0 } else { 0.0 }).collect();
    let mut b = vec![0.0; m];
    let o = d.site_slot(&Point::origin(dim)).expect("origin");
    b[o] = 1.0;
    let apply = |x: &[f64], out: &mut [f64]| {
        for &s in &slots {
            let mut acc = nd as f64 * x[s];
            for &off in &offs {
                acc -= x[(s as isize + off) as usize];
            }
            out[s] = acc * mask[s];
        }
    };
    let g = conjugate_gradient(apply, &b, CG_RESIDUAL)?;
    Ok(g[o])
}

/// Full-space `G(0,0)` from nested boxes `N = 2, 4, 8, ...`, extrapolated as
/// `2·G_{2N} − G_N` (the finite-volume error decays like `1/N`). Stops when
/// successive extrapolants differ by less than `tol`.
pub fn green_full_origin(dim: usize, tol: f64, max_radius: u32) -> Result<(f64, u32)> {
    if dim < 3 {
        return Err(Error::Precondition(format!(
            "the walk is recurrent in dimension {dim}; G(0,0) is infinite"
        )));
    }
    if tol <= 0.0 {
        return Err(Error::Precondition("tol must be positive".into()));
    }
    let mut n = 2;
    let mut prev_g = green_box_origin(dim, n)?;
    let mut prev_e: Option<f64> = None;
    while 2 * n <= max_radius {
        let g = green_box_origin(dim, 2 * n)?;
        let e = 2.0 * g - prev_g;
        if let Some(pe) = prev_e {
            if (e - pe).abs() < tol {
                return Ok((e, 2 * n));
            }
        }
        prev_e = Some(e);
        prev_g = g;
        n *= 2;
    }
    Err(Error::NonConvergence(format!("no convergence to {tol} up to radius {max_radius}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DharReport {
    pub v: Point,
    pub x: Point,
    pub reps: u64,
    pub mean: f64,
    pub stderr: f64,
    pub green: f64,
    pub green_exact: Option<String>,
    pub z: f64,
}

/// Mean topplings at `x` after adding a grain at `v` to a uniform recurrent
/// configuration, against `G_K(v, x)`.
pub fn dhar_check(domain: &Domain, v: &Point, x: &Point, reps: u64, seed: u64, workers: usize) -> Result<DharReport> {
    if reps == 0 {
        return Err(Error::Precondition("reps must be positive".into()));
    }
    let vs = domain.site_slot(v).ok_or(Error::OutsideDomain(*v))?;
    let xs = domain.site_slot(x).ok_or(Error::OutsideDomain(*x))?;
    let g = green_finite(domain, v, x)?;
    let (sum, sumsq) = run_replicas(
        reps,
        workers,
        || Ok(LazySandpile::new(domain.clone())),
        || (0u64, 0u128),
        |pile, acc, i| {
            pile.reset(RngSeed::replica(seed, 3, i));
            pile.avalanche(vs, AvalancheOptions::default());
            let n = pile.scratch().odometer(xs) as u64;
            acc.0 += n;
            acc.1 += (n as u128) * (n as u128);
            Ok(())
        },
        |a, b| {
            a.0 += b.0;
            a.1 += b.1;
        },
    )?;
    let r = reps as f64;
    let mean = sum as f64 / r;
    let var = (sumsq as f64 / r - mean * mean).max(0.0) * r / (r - 1.0).max(1.0);
    let stderr = (var / r).sqrt();
    let z = if stderr > 0.0 { (mean - g.value) / stderr } else { 0.0 };
    Ok(DharReport {
        v: *v,
        x: *x,
        reps,
        mean,
        stderr,
        green: g.value,
        green_exact: g.exact.as_ref().map(ratio_string),
        z,
    })
}

#[inline]
fn mul_mod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

#[inline]
fn sub_mod(a: u64, b: u64, p: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + (p - b)
    }
}

fn pow_mod(mut b: u64, mut e: u64, p: u64) -> u64 {
    let mut r = 1;
    b %= p;
    while e > 0 {
        if e & 1 == 1 {
            r = mul_mod(r, b, p);
        }
        b = mul_mod(b, b, p);
        e >>= 1;
    }
    r
}

/// Deterministic Miller–Rabin for 64-bit integers.
fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &b in &BASES {
        if n % b == 0 {
            return n == b;
        }
    }
    let (mut d, mut s) = (n - 1, 0);
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'base: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'base;
            }
        }
        return false;
    }
    true
}

fn prev_prime(mut n: u64) -> u64 {
    loop {
        n -= 1;
        if is_prime(n) {
            return n;
        }
    }
}

/// Incremental Chinese remaindering with a symmetric final range.
struct Crt {
    value: BigInt,
    modulus: BigInt,
}

impl Crt {
    fn new() -> Self {
        Crt {
            value: BigInt::zero(),
            modulus: BigInt::one(),
        }
    }

    fn add(&mut self, r: u64, p: u64) {
        let pb = BigInt::from(p);
        let cur = self.value.mod_floor(&pb).to_u64().expect("residue");
        let m = self.modulus.mod_floor(&pb).to_u64().expect("residue");
        let t = mul_mod(sub_mod(r, cur, p), pow_mod(m, p - 2, p), p);
        self.value += &self.modulus * BigInt::from(t);
        self.modulus *= pb;
    }

    fn value(&self) -> BigInt {
        let half: BigInt = &self.modulus >> 1usize;
        if self.value > half {
            &self.value - &self.modulus
        } else {
            self.value.clone()
        }
    }
}
