//! Monte Carlo tail estimation and log-log exponent fits.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{ClusterExplorer, ClusterKind};
use crate::greens::green_box_origin;
use crate::lattice::{Direction, Domain, Point};
use crate::randwalk::{draw_dir, walk_slots, RngSeed};
use crate::runner::run_replicas;
use crate::sandpile::{AvalancheOptions, LazySandpile};

pub const CURVE_VERSION: u32 = 1;
pub const DEFAULT_MIN_EXCEED: u64 = 50;
pub const MAX_CENSORING: f64 = 0.01;
/// Loop-erased walks run to `∂B_{8R}` before truncation at `R`.
pub const DEFAULT_WALK_FACTOR: u32 = 8;

const TAG_LERW: u16 = 11;
const TAG_ESCAPE_WALK: u16 = 12;
const TAG_PAST: u16 = 13;
const TAG_ZERO_TREE: u16 = 14;
const TAG_AVALANCHE: u16 = 15;
const TAG_FIRST_WAVE: u16 = 16;
const TAG_WAVE_TREE: u16 = 17;
const TAG_ONE_POINT: u16 = 18;

/// Exceedance counts over an ascending threshold grid.
///
/// A censored sample (its value is only a lower bound) counts as an
/// exceedance at thresholds up to its value and is dropped from both the
/// numerator and the denominator above it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub thresholds: Vec<u64>,
    pub counts: Vec<u64>,
    pub total: u64,
    pub censored: Vec<u64>,
}

impl SurvivalCurve {
    pub fn new(thresholds: Vec<u64>) -> Result<Self> {
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Precondition("thresholds must be strictly ascending".into()));
        }
        let n = thresholds.len();
        Ok(SurvivalCurve {
            thresholds,
            counts: vec![0; n],
            total: 0,
            censored: vec![0; n],
        })
    }

    pub fn record(&mut self, value: u64, censored: bool) {
        self.total += 1;
        for (i, &t) in self.thresholds.iter().enumerate() {
            if value >= t {
                self.counts[i] += 1;
            } else if censored {
                self.censored[i] += 1;
            } else {
                break;
            }
        }
    }

    pub fn merge(&mut self, other: &SurvivalCurve) {
        assert_eq!(self.thresholds, other.thresholds, "merging curves on different grids");
        self.total += other.total;
        for i in 0..self.counts.len() {
            self.counts[i] += other.counts[i];
            self.censored[i] += other.censored[i];
        }
    }

    /// Samples informative at threshold `i`.
    pub fn effective(&self, i: usize) -> u64 {
        self.total - self.censored[i]
    }

    pub fn frequency(&self, i: usize) -> f64 {
        let n = self.effective(i);
        if n == 0 {
            0.0
        } else {
            self.counts[i] as f64 / n as f64
        }
    }

    /// Largest censored fraction at thresholds in `[lo, hi]`.
    pub fn censoring_fraction(&self, lo: u64, hi: u64) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.thresholds
            .iter()
            .zip(&self.censored)
            .filter(|(&t, _)| t >= lo && t <= hi)
            .map(|(_, &c)| c as f64 / self.total as f64)
            .fold(0.0, f64::max)
    }

    /// Fails when more than `max` of the samples are censored in the window.
    pub fn check_censoring(&self, name: &str, lo: u64, hi: u64, max: f64) -> Result<()> {
        let f = self.censoring_fraction(lo, hi);
        if f > max {
            return Err(Error::Validation(format!(
                "{name}: censoring {:.3}% exceeds {:.1}% in [{lo}, {hi}]",
                100.0 * f,
                100.0 * max
            )));
        }
        Ok(())
    }

    pub fn to_csv(&self, name: &str) -> String {
        let mut s = format!("# ustpile-curve v{CURVE_VERSION} {name}\nthreshold,exceed,total,censored\n");
        for i in 0..self.thresholds.len() {
            let _ = writeln!(s, "{},{},{},{}", self.thresholds[i], self.counts[i], self.total, self.censored[i]);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let head = lines.next().unwrap_or("");
        if !head.starts_with(&format!("# ustpile-curve v{CURVE_VERSION}")) {
            return Err(Error::Parse(format!("bad curve header {head:?}")));
        }
        if lines.next() != Some("threshold,exceed,total,censored") {
            return Err(Error::Parse("bad curve columns".into()));
        }
        let mut c = SurvivalCurve::new(Vec::new())?;
        for (k, line) in lines.enumerate() {
            let f: Vec<u64> = line
                .split(',')
                .map(|x| x.parse::<u64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", k + 3)))?;
            if f.len() != 4 {
                return Err(Error::Parse(format!("line {}: expected 4 fields", k + 3)));
            }
            c.thresholds.push(f[0]);
            c.counts.push(f[1]);
            c.total = f[2];
            c.censored.push(f[3]);
        }
        Ok(c)
    }
}

/// Thresholds `round(lo · 2^(k/per_octave))` up to `hi`, deduplicated.
pub fn geometric_grid(lo: u64, hi: u64, per_octave: u32) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::new();
    let mut k = 0;
    loop {
        let t = (lo as f64 * 2f64.powf(k as f64 / per_octave as f64)).round() as u64;
        if t > hi {
            break;
        }
        if out.last() != Some(&t) {
            out.push(t);
        }
        k += 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub fit_range: (f64, f64),
    pub points: usize,
    pub target: Option<String>,
    pub target_value: Option<f64>,
}

impl ExponentFit {
    pub fn with_target(mut self, name: &str, value: f64) -> Self {
        self.target = Some(name.to_string());
        self.target_value = Some(value);
        self
    }

    /// `|slope − target| ≤ tol`; false without a target.
    pub fn within(&self, tol: f64) -> bool {
        self.target_value.is_some_and(|t| (self.slope - t).abs() <= tol)
    }
}

/// Weighted least squares of `y` on `x`.
fn wls(x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, f64, f64)> {
    let k = x.len();
    if k < 3 {
        return Err(Error::InsufficientData(format!("{k} usable points, need at least 3")));
    }
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mx) * (a - mx)).sum();
    let sxy: f64 = (0..k).map(|i| w[i] * (x[i] - mx) * (y[i] - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::InsufficientData("all points at one abscissa".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let chi2: f64 = (0..k)
        .map(|i| {
            let r = y[i] - intercept - slope * x[i];
            w[i] * r * r
        })
        .sum();
    let red = chi2 / (k - 2) as f64;
    Ok((slope, intercept, (red.max(1.0) / sxx).sqrt()))
}

/// One point of a log-log fit: value `y` at `x` with the standard error of
/// `ln y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogPoint {
    pub x: f64,
    pub y: f64,
    pub sigma_log: f64,
}

pub fn fit_log_points(points: &[LogPoint]) -> Result<ExponentFit> {
    let pts: Vec<&LogPoint> = points.iter().filter(|p| p.y > 0.0 && p.sigma_log > 0.0).collect();
    let x: Vec<f64> = pts.iter().map(|p| p.x.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.y.ln()).collect();
    let w: Vec<f64> = pts.iter().map(|p| 1.0 / (p.sigma_log * p.sigma_log)).collect();
    let (slope, intercept, stderr) = wls(&x, &y, &w)?;
    Ok(ExponentFit {
        slope,
        intercept,
        stderr,
        fit_range: (pts[0].x, pts[pts.len() - 1].x),
        points: pts.len(),
        target: None,
        target_value: None,
    })
}

/// Binomial log-point for `hits` successes in `n` trials.
pub fn binomial_point(x: f64, hits: u64, n: u64) -> LogPoint {
    let p = hits as f64 / n.max(1) as f64;
    let q = (1.0 - p).max(1.0 / n.max(1) as f64);
    LogPoint {
        x,
        y: p,
        sigma_log: if hits == 0 { 0.0 } else { (q / hits as f64).sqrt() },
    }
}

/// Fits `ln frequency` against `ln threshold` over thresholds in `[lo, hi]`
/// with at least `min_exceed` exceedances, weighting each point by its
/// binomial variance.
pub fn fit_exponent(curve: &SurvivalCurve, range: (u64, u64), min_exceed: u64) -> Result<ExponentFit> {
    let pts: Vec<LogPoint> = (0..curve.thresholds.len())
        .filter(|&i| {
            let t = curve.thresholds[i];
            t >= range.0 && t <= range.1 && t > 0 && curve.counts[i] >= min_exceed
        })
        .map(|i| binomial_point(curve.thresholds[i] as f64, curve.counts[i], curve.effective(i)))
        .collect();
    fit_log_points(&pts)
}

/// Loop-erased walk to `∂B_n` truncated at the first exit of `B_r`.
///
/// The truncated erasure only depends on the last exit direction of each
/// site of `B_r`, so only `B_r` is stored (a dense generation-stamped array)
/// while the walk itself runs out to `∂B_n`. Uses the random stream exactly
/// as [`crate::randwalk::ilerw_truncated`] does, so paths agree for equal seeds.
pub struct DenseIlerw {
    r: i32,
    side: usize,
    marks: Vec<u32>,
    gen: u32,
}

impl DenseIlerw {
    /// Workspace for truncation radii up to `r`.
    pub fn new(r: u32) -> Result<Self> {
        let side = 2 * r as usize + 1;
        let len = side
            .checked_pow(3)
            .filter(|&l| l <= 1 << 31)
            .ok_or_else(|| Error::ResourceLimit(format!("dense walk array for R={r}")))?;
        Ok(DenseIlerw {
            r: r as i32,
            side,
            marks: vec![0; len],
            gen: 0,
        })
    }

    #[inline]
    fn index(&self, c: [i32; 3]) -> usize {
        let s = self.side;
        (c[0] + self.r) as usize + s * ((c[1] + self.r) as usize + s * (c[2] + self.r) as usize)
    }

    /// Path from the origin to its first vertex outside `B_r`, into `out`.
    pub fn sample(&mut self, r: u32, n: u32, seed: RngSeed, out: &mut Vec<Point>) -> Result<()> {
        if n < 4 * r {
            return Err(Error::Precondition(format!("need N >= 4R, got N={n}, R={r}")));
        }
        if r as i32 > self.r {
            return Err(Error::Precondition(format!("workspace holds R <= {}, got {r}", self.r)));
        }
        out.clear();
        out.push(Point::origin(3));
        if r == 0 {
            return Ok(());
        }
        if self.gen == (1 << 24) - 1 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.gen = 0;
        }
        self.gen += 1;
        let tag = self.gen << 8;
        let (r, n) = (r as i32, n as i32);
        let mut rng = seed.rng();
        let mut c = [0i32; 3];
        loop {
            let norm = c[0].abs().max(c[1].abs()).max(c[2].abs());
            if norm > n {
                break;
            }
            let d = draw_dir(&mut rng, 6);
            if norm <= r {
                let i = self.index(c);
                self.marks[i] = tag | d as u32;
            }
            c[d / 2] += if d % 2 == 0 { 1 } else { -1 };
        }
        let mut p = Point::origin(3);
        while p.linf_norm() <= r as u32 {
            let m = self.marks[self.index([p.coord(0), p.coord(1), p.coord(2)])];
            debug_assert_eq!(m >> 8, self.gen);
            p = p.shifted(Direction((m & 0xFF) as u8));
            out.push(p);
        }
        Ok(())
    }
}

/// Escape and length statistics of the truncated loop-erased walk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LerwEstimate {
    pub radii: Vec<u64>,
    pub walk_radius: u32,
    /// Replicas where an independent walk from 0 avoids `γ` until leaving `B_R`.
    pub escape: SurvivalCurve,
    pub mean_length: Vec<f64>,
    pub length_stderr: Vec<f64>,
    pub alpha: ExponentFit,
    pub beta: ExponentFit,
}

#[derive(Clone)]
struct LerwAcc {
    escape: Vec<u64>,
    len_sum: Vec<u64>,
    len_sq: Vec<u128>,
    total: u64,
}

/// Estimates `P(γ ∩ S[1, τ_R] = ∅)` and `E[len γ_R]` for each `R`, from one
/// loop-erased walk (run to `∂B_{walk_factor · Rmax}`) and one independent
/// walk per replica.
pub fn lerw_exponents(radii: &[u64], walk_factor: u32, reps: u64, seed: u64, workers: usize) -> Result<LerwEstimate> {
    if reps == 0 {
        return Err(Error::Precondition("reps must be positive".into()));
    }
    if radii.is_empty() || radii.windows(2).any(|w| w[0] >= w[1]) || radii[0] == 0 {
        return Err(Error::Precondition("radii must be positive and strictly ascending".into()));
    }
    let rmax = *radii.last().expect("nonempty") as u32;
    let n = walk_factor * rmax;
    let k = radii.len();
    let acc = run_replicas(
        reps,
        workers,
        || Ok((DenseIlerw::new(rmax)?, Vec::new(), HashMap::new())),
        || LerwAcc {
            escape: vec![0; k],
            len_sum: vec![0; k],
            len_sq: vec![0; k],
            total: 0,
        },
        |(ws, path, index): &mut (DenseIlerw, Vec<Point>, HashMap<Point, u32>), acc, i| {
            ws.sample(rmax, n, RngSeed::replica(seed, TAG_LERW, i), path)?;
            // exit index of γ from each B_R
            let mut exit = vec![0u32; k];
            let mut j = 0;
            for (t, p) in path.iter().enumerate() {
                while j < k && p.linf_norm() as u64 > radii[j] {
                    exit[j] = t as u32;
                    j += 1;
                }
            }
            index.clear();
            for (t, p) in path.iter().enumerate() {
                index.insert(*p, t as u32);
            }
            let mut hit = vec![false; k];
            let mut rng = RngSeed::replica(seed, TAG_ESCAPE_WALK, i).rng();
            let mut c = Point::origin(3);
            let mut max_norm = 0u64;
            while max_norm <= rmax as u64 {
                c = c.shifted(Direction(draw_dir(&mut rng, 6) as u8));
                if let Some(&t) = index.get(&c) {
                    for r in 0..k {
                        if max_norm <= radii[r] && t <= exit[r] {
                            hit[r] = true;
                        }
                    }
                }
                max_norm = max_norm.max(c.linf_norm() as u64);
            }
            acc.total += 1;
            for r in 0..k {
                if !hit[r] {
                    acc.escape[r] += 1;
                }
                acc.len_sum[r] += exit[r] as u64;
                acc.len_sq[r] += (exit[r] as u128).pow(2);
            }
            Ok(())
        },
        |a, b| {
            a.total += b.total;
            for r in 0..k {
                a.escape[r] += b.escape[r];
                a.len_sum[r] += b.len_sum[r];
                a.len_sq[r] += b.len_sq[r];
            }
        },
    )?;
    let mut escape = SurvivalCurve::new(radii.to_vec())?;
    escape.total = acc.total;
    escape.counts = acc.escape.clone();
    let nf = acc.total as f64;
    let mean_length: Vec<f64> = acc.len_sum.iter().map(|&s| s as f64 / nf).collect();
    let length_stderr: Vec<f64> = (0..k)
        .map(|r| {
            let m = mean_length[r];
            let var = (acc.len_sq[r] as f64 / nf - m * m).max(0.0) * nf / (nf - 1.0).max(1.0);
            (var / nf).sqrt()
        })
        .collect();
    let alpha_fit = fit_exponent(&escape, (radii[0], rmax as u64), DEFAULT_MIN_EXCEED)?;
    let alpha = -alpha_fit.slope;
    let alpha_fit = alpha_fit.with_target("-alpha", -alpha);
    let pts: Vec<LogPoint> = (0..k)
        .map(|r| LogPoint {
            x: radii[r] as f64,
            y: mean_length[r],
            sigma_log: if mean_length[r] > 0.0 {
                length_stderr[r] / mean_length[r]
            } else {
                0.0
            },
        })
        .collect();
    let beta_fit = fit_log_points(&pts)?;
    let beta_fit = beta_fit.with_target("2-alpha", 2.0 - alpha);
    Ok(LerwEstimate {
        radii: radii.to_vec(),
        walk_radius: n,
        escape,
        mean_length,
        length_stderr,
        alpha: alpha_fit,
        beta: beta_fit,
    })
}

/// Intersection exponent `α` as minus the escape-probability slope.
pub fn estimate_alpha(radii: &[u64], reps: u64, seed: u64, workers: usize) -> Result<ExponentFit> {
    let e = lerw_exponents(radii, DEFAULT_WALK_FACTOR, reps, seed, workers)?;
    let a = -e.alpha.slope;
    Ok(ExponentFit {
        slope: a,
        intercept: e.alpha.intercept,
        stderr: e.alpha.stderr,
        fit_range: e.alpha.fit_range,
        points: e.alpha.points,
        target: Some("alpha".into()),
        target_value: Some(0.376),
    })
}

/// Growth exponent `β` as the slope of `ln E[len]` against `ln R`.
pub fn estimate_beta(radii: &[u64], reps: u64, seed: u64, workers: usize) -> Result<ExponentFit> {
    Ok(lerw_exponents(radii, DEFAULT_WALK_FACTOR, reps, seed, workers)?.beta)
}

/// Threshold grids of the three cluster observables.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TailGrids {
    pub diam_ext: Vec<u64>,
    pub diam_int: Vec<u64>,
    pub volume: Vec<u64>,
}

impl TailGrids {
    /// Half-octave grids reaching the box radius, its cube root scale and volume.
    pub fn for_box(radius: u32) -> Self {
        let r = radius as u64;
        TailGrids {
            diam_ext: geometric_grid(1, 2 * r, 2),
            diam_int: geometric_grid(1, 64 * r, 2),
            volume: geometric_grid(1, 4 * r * r * r, 2),
        }
    }
}

/// Default fit windows: diameters in `[8, box/4]`, intrinsic diameters in
/// `[32, 512]`, volumes in `[2^6, 2^14]` (avalanche totals up to `2^16`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitWindows {
    pub diam_ext: (u64, u64),
    pub diam_int: (u64, u64),
    pub volume: (u64, u64),
    pub total: (u64, u64),
}

impl FitWindows {
    pub fn for_box(radius: u32) -> Self {
        FitWindows {
            diam_ext: (8, (radius as u64 / 4).max(8)),
            diam_int: (32, 512),
            volume: (1 << 6, 1 << 14),
            total: (1 << 6, 1 << 16),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterTails {
    pub kind: ClusterKind,
    pub box_radius: u32,
    pub diam_ext: SurvivalCurve,
    pub diam_int: SurvivalCurve,
    pub volume: SurvivalCurve,
    /// Samples whose cluster touched the wired boundary or hit the site cap.
    pub censored_samples: u64,
}

fn cluster_tails(
    kind: ClusterKind,
    box_radius: u32,
    grids: &TailGrids,
    cap: Option<u64>,
    reps: u64,
    seed: u64,
    workers: usize,
) -> Result<ClusterTails> {
    if reps == 0 {
        return Err(Error::Precondition("reps must be positive".into()));
    }
    let domain = Domain::centered_box(3, box_radius)?;
    let tag = match kind {
        ClusterKind::Past => TAG_PAST,
        ClusterKind::ZeroTree => TAG_ZERO_TREE,
    };
    let empty = (
        SurvivalCurve::new(grids.diam_ext.clone())?,
        SurvivalCurve::new(grids.diam_int.clone())?,
        SurvivalCurve::new(grids.volume.clone())?,
        0u64,
    );
    let (de, di, vol, cens) = run_replicas(
        reps,
        workers,
        || Ok(ClusterExplorer::new(domain.clone())?.with_cap(cap)),
        || empty.clone(),
        |ex, acc, i| {
            let s = ex.explore(kind, RngSeed::replica(seed, tag, i));
            let c = s.touches_boundary || s.capped;
            acc.0.record(s.obs.diam_ext as u64, c);
            acc.1.record(s.obs.diam_int as u64, c);
            acc.2.record(s.obs.volume, c);
            acc.3 += c as u64;
            Ok(())
        },
        |a, b| {
            a.0.merge(&b.0);
            a.1.merge(&b.1);
            a.2.merge(&b.2);
            a.3 += b.3;
        },
    )?;
    Ok(ClusterTails {
        kind,
        box_radius,
        diam_ext: de,
        diam_int: di,
        volume: vol,
        censored_samples: cens,
    })
}

/// Tails of the past of the origin in the wired UST of `Box(0, box_radius)`.
pub fn past_tails(box_radius: u32, grids: &TailGrids, reps: u64, seed: u64, workers: usize) -> Result<ClusterTails> {
    cluster_tails(ClusterKind::Past, box_radius, grids, None, reps, seed, workers)
}

/// Tails of the 0-tree. Explorations stop at `cap` sites when given; such
/// samples are censored.
pub fn zero_tree_tails(
    box_radius: u32,
    grids: &TailGrids,
    cap: Option<u64>,
    reps: u64,
    seed: u64,
    workers: usize,
) -> Result<ClusterTails> {
    cluster_tails(ClusterKind::ZeroTree, box_radius, grids, cap, reps, seed, workers)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvalancheTails {
    pub box_radius: u32,
    pub diam_ext: SurvivalCurve,
    pub cluster_size: SurvivalCurve,
    pub total: SurvivalCurve,
    /// Avalanches that toppled a site next to the wired boundary.
    pub truncated: u64,
}

/// Avalanche tails for a grain added at the origin of a uniform recurrent
/// configuration on `Box(0, box_radius)`. Truncated avalanches are censored.
pub fn avalanche_tails(
    box_radius: u32,
    diam_grid: &[u64],
    size_grid: &[u64],
    total_grid: &[u64],
    reps: u64,
    seed: u64,
    workers: usize,
) -> Result<AvalancheTails> {
    if reps == 0 {
        return Err(Error::Precondition("reps must be positive".into()));
    }
    let domain = Domain::centered_box(3, box_radius)?;
    let o = domain.site_slot(&Point::origin(3)).expect("origin");
    let empty = (
        SurvivalCurve::new(diam_grid.to_vec())?,
        SurvivalCurve::new(size_grid.to_vec())?,
        SurvivalCurve::new(total_grid.to_vec())?,
        0u64,
    );
    let (de, cs, tot, trunc) = run_replicas(
        reps,
        workers,
        || Ok(LazySandpile::new(domain.clone())),
        || empty.clone(),
        |pile, acc, i| {
            pile.reset(RngSeed::replica(seed, TAG_AVALANCHE, i));
            let s = pile.avalanche(o, AvalancheOptions::default());
            acc.0.record(s.diam_ext as u64, s.truncated);
            acc.1.record(s.cluster_size, s.truncated);
            acc.2.record(s.total, s.truncated);
            acc.3 += s.truncated as u64;
            Ok(())
        },
        |a, b| {
            a.0.merge(&b.0);
            a.1.merge(&b.1);
            a.2.merge(&b.2);
            a.3 += b.3;
        },
    )?;
    Ok(AvalancheTails {
        box_radius,
        diam_ext: de,
        cluster_size: cs,
        total: tot,
        truncated: trunc,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub threshold: u64,
    pub p_wave: f64,
    pub p_tree: f64,
    /// `p_wave / (G · p_tree)`.
    pub ratio: f64,
    pub sigma: f64,
    pub z: f64,
    /// Both sides have at least the minimum number of exceedances.
    pub usable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstWaveComparison {
    pub box_radius: u32,
    pub green: f64,
    pub wave: SurvivalCurve,
    pub tree: SurvivalCurve,
    pub rows: Vec<RatioRow>,
}

impl FirstWaveComparison {
    /// Largest `|z|` over usable rows.
    pub fn max_abs_z(&self) -> f64 {
        self.rows.iter().filter(|r| r.usable).map(|r| r.z.abs()).fold(0.0, f64::max)
    }
}

/// Compares `P(diam_ext(W_1) ≥ R)` under the stationary sandpile with
/// `G_K(0,0) · P(diam_ext(T) ≥ R)` under the 0-wired forest, in the same box.
pub fn first_wave_vs_tree(
    thresholds: &[u64],
    box_radius: u32,
    reps: u64,
    seed: u64,
    workers: usize,
) -> Result<FirstWaveComparison> {
    if reps == 0 {
        return Err(Error::Precondition("reps must be positive".into()));
    }
    let domain = Domain::centered_box(3, box_radius)?;
    let o = domain.site_slot(&Point::origin(3)).expect("origin");
    let green = green_box_origin(3, box_radius)?;
    let curve = SurvivalCurve::new(thresholds.to_vec())?;
    let opts = AvalancheOptions {
        record_waves: false,
        max_waves: Some(1),
    };
    let wave = run_replicas(
        reps,
        workers,
        || Ok(LazySandpile::new(domain.clone())),
        || curve.clone(),
        |pile, acc, i| {
            pile.reset(RngSeed::replica(seed, TAG_FIRST_WAVE, i));
            let s = pile.avalanche(o, opts);
            let d = if s.first_wave_size == 0 { 0 } else { s.first_wave_diam as u64 };
            acc.record(d, false);
            Ok(())
        },
        |a, b| a.merge(&b),
    )?;
    let tree = run_replicas(
        reps,
        workers,
        || ClusterExplorer::new(domain.clone()),
        || curve.clone(),
        |ex, acc, i| {
            let s = ex.explore(ClusterKind::ZeroTree, RngSeed::replica(seed, TAG_WAVE_TREE, i));
            acc.record(s.obs.diam_ext as u64, false);
            Ok(())
        },
        |a, b| a.merge(&b),
    )?;
    let rows = (0..thresholds.len())
        .map(|i| {
            let (pw, pt) = (wave.frequency(i), tree.frequency(i));
            let nf = reps as f64;
            let ratio = if pt > 0.0 { pw / (green * pt) } else { f64::NAN };
            let rel = |p: f64| if p > 0.0 { (p * (1.0 - p) / nf).sqrt() / p } else { f64::INFINITY };
            let sigma = ratio * (rel(pw).powi(2) + rel(pt).powi(2)).sqrt();
            RatioRow {
                threshold: thresholds[i],
                p_wave: pw,
                p_tree: pt,
                ratio,
                sigma,
                z: (ratio - 1.0) / sigma,
                usable: wave.counts[i] >= DEFAULT_MIN_EXCEED && tree.counts[i] >= DEFAULT_MIN_EXCEED,
            }
        })
        .collect();
    Ok(FirstWaveComparison {
        box_radius,
        green,
        wave,
        tree,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnePointDecay {
    pub box_radius: u32,
    pub norms: Vec<u64>,
    pub hits: Vec<u64>,
    pub reps: u64,
    pub fit: ExponentFit,
}

/// `P(x ∈ T)` for `x = k·e1`, as the chance that a walk from `x` hits the
/// origin before the wired root (the first Wilson walk from `x` with roots
/// `{0, ∂}`).
pub fn zero_tree_one_point(norms: &[u64], box_radius: u32, reps: u64, seed: u64, workers: usize) -> Result<OnePointDecay> {
    if reps == 0 {
        return Err(Error::Precondition("reps must be positive".into()));
    }
    let domain = Domain::centered_box(3, box_radius)?;
    let o = domain.site_slot(&Point::origin(3)).expect("origin");
    let starts = norms
        .iter()
        .map(|&k| {
            let p = Point::xyz(k as i32, 0, 0);
            domain.site_slot(&p).ok_or(Error::OutsideDomain(p))
        })
        .collect::<Result<Vec<_>>>()?;
    let hits = run_replicas(
        reps,
        workers,
        || Ok(()),
        || vec![0u64; norms.len()],
        |_, acc, i| {
            let mut rng = RngSeed::replica(seed, TAG_ONE_POINT, i).rng();
            for (j, &s) in starts.iter().enumerate() {
                if walk_slots(&domain, s, &mut rng, |x| x == o, |_, _| {}).is_some() {
                    acc[j] += 1;
                }
            }
            Ok(())
        },
        |a, b| a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
    )?;
    let pts: Vec<LogPoint> = norms
        .iter()
        .zip(&hits)
        .map(|(&k, &h)| binomial_point(k as f64, h, reps))
        .collect();
    let fit = fit_log_points(&pts)?.with_target("-1", -1.0);
    Ok(OnePointDecay {
        box_radius,
        norms: norms.to_vec(),
        hits,
        reps,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randwalk::ilerw_truncated;

    #[test]
    fn record_and_censoring() {
        let mut c = SurvivalCurve::new(vec![1, 2, 4, 8]).unwrap();
        c.record(0, false);
        c.record(3, false);
        c.record(5, true);
        c.record(9, false);
        assert_eq!(c.counts, vec![3, 3, 2, 1]);
        assert_eq!(c.censored, vec![0, 0, 0, 1]);
        assert_eq!(c.total, 4);
        assert!((c.frequency(3) - 1.0 / 3.0).abs() < 1e-12);
        assert!((c.censoring_fraction(1, 8) - 0.25).abs() < 1e-12);
        assert!(c.check_censoring("x", 1, 4, 0.01).is_ok());
        assert!(c.check_censoring("x", 1, 8, 0.01).is_err());
        assert!(SurvivalCurve::new(vec![2, 2]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut c = SurvivalCurve::new(vec![1, 3]).unwrap();
        c.record(2, false);
        c.record(4, true);
        let s = c.to_csv("diam_ext");
        assert_eq!(
            s,
            "# ustpile-curve v1 diam_ext\nthreshold,exceed,total,censored\n1,2,2,0\n3,1,2,0\n"
        );
        assert_eq!(SurvivalCurve::from_csv(&s).unwrap(), c);
    }

    #[test]
    fn exact_power_law_fit() {
        let mut c = SurvivalCurve::new(vec![1, 2, 4, 8, 16]).unwrap();
        c.total = 25600;
        c.counts = vec![25600, 6400, 1600, 400, 100];
        let f = fit_exponent(&c, (1, 16), 50).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-12, "{f:?}");
        c.counts = vec![25600; 5];
        let f = fit_exponent(&c, (1, 16), 50).unwrap();
        assert!(f.slope.abs() < 1e-12);
        assert!(fit_exponent(&c, (1, 2), 50).is_err());
    }

    #[test]
    fn grid() {
        assert_eq!(geometric_grid(1, 8, 1), vec![1, 2, 4, 8]);
        assert_eq!(geometric_grid(1, 8, 2), vec![1, 2, 3, 4, 6, 8]);
    }

    #[test]
    fn dense_ilerw_matches_reference() {
        let mut ws = DenseIlerw::new(8).unwrap();
        let mut out = Vec::new();
        for s in 0..30 {
            let seed = RngSeed::new(4, s);
            let r = 1 + s as u32 % 8;
            ws.sample(r, 8 * r, seed, &mut out).unwrap();
            let reference = ilerw_truncated(3, r, 8 * r, seed).unwrap();
            assert_eq!(crate::randwalk::Path::from_points(&out), reference);
        }
        assert!(ws.sample(9, 36, RngSeed::new(0, 0), &mut out).is_err());
        assert!(ws.sample(8, 31, RngSeed::new(0, 0), &mut out).is_err());
    }

    #[test]
    fn lerw_small_run_is_deterministic() {
        let a = lerw_exponents(&[1, 2, 4, 8], 8, 400, 3, 1).unwrap();
        let b = lerw_exponents(&[1, 2, 4, 8], 8, 400, 3, 2).unwrap();
        assert_eq!(a.escape, b.escape);
        assert!(a.mean_length[0] >= 1.0);
        assert!(a.escape.counts.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn one_point_small_box() {
        let r = zero_tree_one_point(&[1, 2, 3], 6, 2000, 1, 1).unwrap();
        assert!(r.hits.windows(2).all(|w| w[0] >= w[1]));
        assert!(r.fit.slope < 0.0);
    }
}
