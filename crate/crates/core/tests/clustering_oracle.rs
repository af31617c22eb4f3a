mod common;

use ambsc_core::channel::cn_vector;
use ambsc_core::clustering::{form_clusters, pairing_metrics};
use ambsc_core::{CVector, C64};
use common::rng;
use proptest::prelude::*;

fn v(parts: &[(f64, f64)]) -> CVector {
    CVector::from_iterator(parts.len(), parts.iter().map(|&(a, b)| C64::new(a, b)))
}

/// All ways to pair the far candidates with the given heads.
fn pairings(heads: &[usize], pool: &[usize]) -> Vec<Vec<(usize, usize)>> {
    if heads.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for (i, &far) in pool.iter().enumerate() {
        let rest: Vec<usize> = pool.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &u)| u).collect();
        for mut tail in pairings(&heads[1..], &rest) {
            tail.insert(0, (heads[0], far));
            out.push(tail);
        }
    }
    out
}

#[test]
fn aligned_pairing_matches_exhaustive_search() {
    let users = [
        v(&[(3.0, 0.0), (0.0, 0.0)]),
        v(&[(0.0, 0.0), (2.8, 0.0)]),
        v(&[(0.1, 0.0), (0.9, 0.1)]),
        v(&[(1.0, 0.1), (0.05, 0.0)]),
    ];
    let got = form_clusters(&users, 2, 0.7).unwrap();
    let best = pairings(&[0, 1], &[2, 3])
        .into_iter()
        .max_by(|a, b| {
            let score = |p: &Vec<(usize, usize)>| {
                p.iter().map(|&(h, f)| pairing_metrics(&users[h], &users[f]).unwrap().correlation).sum::<f64>()
            };
            score(a).total_cmp(&score(b))
        })
        .unwrap();
    let mut pairs: Vec<(usize, usize)> = got.clusters.iter().map(|p| (p.near, p.far)).collect();
    pairs.sort();
    let mut best = best;
    best.sort();
    assert_eq!(pairs, best);
}

#[test]
fn two_users_force_a_pair() {
    let got = form_clusters(&[v(&[(0.5, 0.0)]), v(&[(2.0, 0.0)])], 1, 0.7).unwrap();
    assert_eq!((got.clusters[0].near, got.clusters[0].far), (1, 0));
    assert!(got.unassigned.is_empty());
}

#[test]
fn identical_channels_break_ties_by_index() {
    let users = vec![v(&[(1.0, 1.0), (0.5, 0.0)]); 6];
    let got = form_clusters(&users, 2, 0.7).unwrap();
    let pairs: Vec<(usize, usize)> = got.clusters.iter().map(|p| (p.near, p.far)).collect();
    assert_eq!(pairs, vec![(0, 2), (1, 3)]);
    assert_eq!(got.unassigned, vec![4, 5]);
}

#[test]
fn too_few_users_is_a_config_error() {
    let users = vec![v(&[(1.0, 0.0)]); 3];
    assert!(matches!(form_clusters(&users, 2, 0.5), Err(ambsc_core::error::Error::Config(_))));
}

proptest! {
    #[test]
    fn assignment_invariants(seed in 0u64..500, k in 1usize..5, extra in 0usize..6, threshold in 0.0..1.0f64) {
        let mut r = rng(seed);
        let users: Vec<CVector> = (0..2 * k + extra).map(|_| cn_vector(4, &mut r)).collect();
        let got = form_clusters(&users, k, threshold).unwrap();
        prop_assert_eq!(got.len(), k);
        prop_assert_eq!(got.unassigned.len(), extra);
        let mut seen: Vec<usize> = got.clusters.iter().flat_map(|p| [p.near, p.far]).chain(got.unassigned.iter().copied()).collect();
        seen.sort();
        prop_assert_eq!(seen, (0..2 * k + extra).collect::<Vec<_>>());
        for p in &got.clusters {
            prop_assert!(users[p.near].norm_squared() >= users[p.far].norm_squared());
        }
        prop_assert_eq!(form_clusters(&users, k, threshold).unwrap(), got);
    }
}
