mod common;

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ustpile::greens::{dhar_check, green_box_origin, green_finite, green_full_origin, TopplingMatrix};
use ustpile::lattice::{neighbors, plus_shape, Domain, Point};
use ustpile::oracle::enumerate_trees;

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// A connected lattice animal grown from the origin.
fn random_animal(seed: u64, size: usize) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = BTreeSet::from([Point::origin(3)]);
    while set.len() < size {
        let v: Vec<Point> = set.iter().copied().collect();
        let p = v[rng.gen_range(0..v.len())];
        let n = neighbors(&p)[rng.gen_range(0..6)];
        set.insert(n);
    }
    set.into_iter().collect()
}

#[test]
fn single_site_green() {
    let d = Domain::centered_box(3, 0).unwrap();
    let o = Point::origin(3);
    assert_eq!(green_finite(&d, &o, &o).unwrap().exact, Some(q(1, 6)));
    assert_eq!(common::absorbing_green(&d, &o, &o), q(1, 6));
}

#[test]
fn plus_shape_matches_killed_walk() {
    let pts = plus_shape(3);
    let d = Domain::from_points(&pts).unwrap();
    for x in &pts {
        for y in &pts {
            let g = green_finite(&d, x, y).unwrap().exact.unwrap();
            assert_eq!(g, common::absorbing_green(&d, x, y), "{x:?} {y:?}");
        }
    }
    let o = Point::origin(3);
    assert_eq!(green_finite(&d, &o, &o).unwrap().exact, Some(q(1, 5)));
}

#[test]
fn determinant_counts_spanning_trees() {
    let d = Domain::from_points(&plus_shape(3)).unwrap();
    let m = TopplingMatrix::new(&d);
    assert_eq!(m.determinant(), BigInt::from(enumerate_trees(&d).unwrap().len()));
    assert_eq!(m.determinant(), BigInt::from(233_280));
}

#[test]
fn laplacian_inverts_green_on_box() {
    let d = Domain::centered_box(3, 1).unwrap();
    let m = TopplingMatrix::new(&d);
    let n = m.len();
    for y in [0, n / 2, n - 1] {
        let col = m.green_column_exact(y);
        for i in 0..n {
            let mut acc = BigRational::zero();
            for (j, g) in col.iter().enumerate() {
                let e = m.entry(i, j);
                if e != 0 {
                    acc += BigRational::from_integer(BigInt::from(e)) * g.clone();
                }
            }
            let want = if i == y { BigRational::one() } else { BigRational::zero() };
            assert_eq!(acc, want);
        }
        let cg = m.green_column_cg(y).unwrap();
        for (a, b) in col.iter().zip(&cg) {
            assert!((ustpile::greens::ratio_to_f64(a) - b).abs() < 1e-10);
        }
    }
}

#[test]
fn box_values_grow_with_the_box() {
    let mut prev = 0.0;
    for n in [0, 1, 2, 4, 8] {
        let g = green_box_origin(3, n).unwrap();
        assert!(g > prev);
        prev = g;
    }
    let exact = green_finite(&Domain::centered_box(3, 1).unwrap(), &Point::origin(3), &Point::origin(3)).unwrap();
    assert!((exact.value - green_box_origin(3, 1).unwrap()).abs() < 1e-10);
}

#[test]
fn full_space_value() {
    // lattice Green's function of the simple walk at the origin, divided by 2d
    let watson = 1.516_386_059_151_978 / 6.0;
    let (g, _) = green_full_origin(3, 1e-4, 128).unwrap();
    assert!((g - watson).abs() < 1e-3, "{g}");
    assert!(green_full_origin(2, 1e-3, 64).is_err());
}

#[test]
fn dhar_single_site_and_plus() {
    let o = Point::origin(3);
    let single = Domain::centered_box(3, 0).unwrap();
    let r = dhar_check(&single, &o, &o, 100_000, 1, 1).unwrap();
    assert!(r.z.abs() < 4.0, "{r:?}");
    assert_eq!(r.green_exact.as_deref(), Some("1/6"));

    let plus = Domain::from_points(&plus_shape(3)).unwrap();
    for x in [o, Point::xyz(1, 0, 0)] {
        let r = dhar_check(&plus, &o, &x, 100_000, 2, 1).unwrap();
        assert!(r.z.abs() < 4.0, "{r:?}");
    }
}

#[test]
fn dhar_off_diagonal_on_box() {
    let d = Domain::centered_box(3, 3).unwrap();
    let r = dhar_check(&d, &Point::xyz(0, 0, 0), &Point::xyz(1, 1, 0), 100_000, 3, 1).unwrap();
    assert!(r.z.abs() < 4.0, "{r:?}");
    assert!(dhar_check(&d, &Point::origin(3), &Point::xyz(9, 0, 0), 10, 3, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn green_matches_oracle_and_is_symmetric(seed in any::<u64>(), size in 1usize..16, a in 0usize..16, b in 0usize..16) {
        let pts = random_animal(seed, size);
        let d = Domain::from_points(&pts).unwrap();
        let x = pts[a % pts.len()];
        let y = pts[b % pts.len()];
        let gxy = green_finite(&d, &x, &y).unwrap().exact.unwrap();
        let gyx = green_finite(&d, &y, &x).unwrap().exact.unwrap();
        prop_assert_eq!(&gxy, &gyx);
        prop_assert!(gxy > BigRational::zero());
        prop_assert_eq!(gxy, common::absorbing_green(&d, &x, &y));
    }

    #[test]
    fn green_increases_with_the_domain(seed in any::<u64>(), size in 2usize..14) {
        let big = random_animal(seed, size);
        let o = Point::origin(3);
        let mut bigger = big.clone();
        let extra = neighbors(big.last().unwrap())
            .into_iter()
            .find(|p| !big.contains(p))
            .unwrap();
        bigger.push(extra);
        let g1 = green_finite(&Domain::from_points(&big).unwrap(), &o, &o).unwrap().exact.unwrap();
        let g2 = green_finite(&Domain::from_points(&bigger).unwrap(), &o, &o).unwrap().exact.unwrap();
        prop_assert!(g2 > g1);
    }
}
