mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use ustpile::lattice::{linf_diameter, linf_dist, neighbors, plus_shape, Domain, LatticeBox, Point};
use ustpile::Error;

fn brute_boundary(b: &LatticeBox) -> BTreeSet<Point> {
    let r = b.radius as i32 + 1;
    let c = b.center;
    let mut out = BTreeSet::new();
    for x in -r..=r {
        for y in -r..=r {
            for z in -r..=r {
                let p = c.add(&Point::xyz(x, y, z));
                if !b.contains(&p) && neighbors(&p).iter().any(|q| b.contains(q)) {
                    out.insert(p);
                }
            }
        }
    }
    out
}

#[test]
fn neighbours_of_a_far_point() {
    let n = neighbors(&Point::xyz(5, 5, 5));
    assert_eq!(n[0], Point::xyz(6, 5, 5));
    assert_eq!(n[5], Point::xyz(5, 5, 4));
    assert_eq!(neighbors(&Point::origin(2)).len(), 4);
}

#[test]
fn boundary_of_unit_box() {
    let b = LatticeBox::centered(3, 0);
    let want: BTreeSet<Point> = neighbors(&Point::origin(3)).into_iter().collect();
    assert_eq!(b.boundary(), want);
}

#[test]
fn boundary_of_radius_one() {
    let b = LatticeBox::centered(3, 1);
    let bd = b.boundary();
    assert_eq!(bd.len(), 6 * 9);
    assert!(bd.contains(&Point::xyz(2, 0, 0)));
    assert!(!bd.contains(&Point::xyz(2, 2, 2)));
    assert_eq!(bd, brute_boundary(&b));
}

#[test]
fn distances() {
    assert_eq!(linf_dist(&Point::xyz(1, -2, 3), &Point::xyz(0, 0, 0)).unwrap(), 3);
    assert_eq!(linf_dist(&Point::xyz(4, 4, 4), &Point::xyz(4, 4, 4)).unwrap(), 0);
    let err = linf_dist(&Point::new(&[1, 2]).unwrap(), &Point::origin(3)).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { .. }));
}

#[test]
fn linear_diameter_matches_pairs() {
    let pts = vec![Point::xyz(0, 0, 0), Point::xyz(3, -1, 0), Point::xyz(-2, 4, 1)];
    assert_eq!(linf_diameter(&pts), common::pairwise_linf_diameter(&pts));
    assert_eq!(linf_diameter(&[Point::origin(3)]), 0);
}

#[test]
fn domains() {
    let d = Domain::centered_box(3, 2).unwrap();
    assert_eq!(d.num_sites(), 125);
    assert!(d.is_connected());
    let p = Domain::from_points(&plus_shape(3)).unwrap();
    assert_eq!(p.num_sites(), 7);
    assert!(p.is_connected());
    let split = Domain::from_points(&[Point::xyz(0, 0, 0), Point::xyz(2, 0, 0)]).unwrap();
    assert!(!split.is_connected());
    assert!(Domain::from_points(&[]).is_err());
}

#[test]
fn slot_order_is_lexicographic() {
    let d = Domain::centered_box(3, 2).unwrap();
    let pts: Vec<Point> = d.points().collect();
    let mut sorted = pts.clone();
    sorted.sort();
    assert_eq!(pts, sorted);
}

fn point3() -> impl Strategy<Value = Point> {
    (-50i32..50, -50i32..50, -50i32..50).prop_map(|(x, y, z)| Point::xyz(x, y, z))
}

proptest! {
    #[test]
    fn neighbours_are_adjacent_and_distinct(p in point3()) {
        let n = neighbors(&p);
        prop_assert_eq!(n.len(), 6);
        let set: BTreeSet<Point> = n.iter().copied().collect();
        prop_assert_eq!(set.len(), 6);
        for q in &n {
            prop_assert_eq!(linf_dist(&p, q).unwrap(), 1);
            prop_assert!(p.is_adjacent(q));
        }
    }

    #[test]
    fn distance_is_a_metric(p in point3(), q in point3(), r in point3()) {
        let pq = linf_dist(&p, &q).unwrap();
        prop_assert_eq!(pq, linf_dist(&q, &p).unwrap());
        prop_assert_eq!(pq == 0, p == q);
        prop_assert!(pq <= linf_dist(&p, &r).unwrap() + linf_dist(&r, &q).unwrap());
    }

    #[test]
    fn boundary_matches_brute_force(c in point3(), r in 0u32..4) {
        let b = LatticeBox::new(c, r);
        let bd = b.boundary();
        for p in &bd {
            prop_assert_eq!(linf_dist(p, &c).unwrap(), r + 1);
        }
        prop_assert_eq!(bd, brute_boundary(&b));
    }

    #[test]
    fn point_and_box_serde(c in point3(), r in 0u32..1000) {
        let b = LatticeBox::new(c, r);
        let s = serde_json::to_string(&b).unwrap();
        let back: LatticeBox = serde_json::from_str(&s).unwrap();
        prop_assert_eq!(back, b);
    }

    #[test]
    fn linear_diameter_equals_pairwise(pts in prop::collection::vec(point3(), 1..30)) {
        prop_assert_eq!(linf_diameter(&pts), common::pairwise_linf_diameter(&pts));
    }

    #[test]
    fn box_domain_slots_round_trip(r in 0u32..4) {
        let d = Domain::centered_box(3, r).unwrap();
        prop_assert_eq!(d.num_sites() as u64, LatticeBox::centered(3, r).volume());
        for p in d.points() {
            let s = d.site_slot(&p).unwrap();
            prop_assert_eq!(d.point(s), p);
        }
    }
}
