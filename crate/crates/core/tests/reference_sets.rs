//! Protection sets of the bundled 50-region layout at epsilon 1, E_m 0.15.

use plslab::pls::{pive_search_all, SearchParams, TieBreak};
use plslab::bundled_example;

/// (seed id, member ids, diameter rounded to 0.1 km)
const TABLE: &[(u32, &[u32], f64)] = &[
    (1, &[1, 2, 3], 1.4),
    (2, &[2, 3], 1.0),
    (3, &[2, 3], 1.0),
    (4, &[4, 5], 2.2),
    (5, &[5, 6], 2.0),
    (6, &[6, 7], 1.0),
    (7, &[6, 7], 1.0),
    (8, &[8, 9], 1.0),
    (9, &[9, 10], 1.0),
    (10, &[9, 10], 1.0),
    (11, &[10, 11], 2.0),
    (12, &[11, 12], 4.5),
    (13, &[11, 12, 13], 5.4),
    (14, &[13, 14], 5.8),
    (15, &[14, 15], 7.0),
    (16, &[16, 17], 7.0),
    (17, &[17, 18], 2.0),
    (18, &[18, 19], 2.0),
    (19, &[19, 20, 21], 2.0),
    (20, &[20, 21, 22], 1.4),
    (21, &[20, 21, 22], 1.4),
    (22, &[20, 21, 22], 1.4),
    (23, &[23, 24], 1.0),
    (24, &[23, 24], 1.0),
    (25, &[24, 25, 26], 1.4),
    (26, &[26, 27], 1.0),
    (27, &[27, 28], 1.0),
    (28, &[28, 29], 1.0),
    (29, &[29, 30], 1.0),
    (30, &[30, 31], 1.0),
    (31, &[30, 31], 1.0),
    (32, &[31, 32, 33], 1.4),
    (33, &[33, 34], 1.0),
    (34, &[34, 35], 1.0),
    (35, &[34, 35], 1.0),
    (36, &[36, 37], 1.4),
    (37, &[37, 38], 1.0),
    (38, &[37, 38], 1.0),
    (39, &[39, 40], 1.0),
    (40, &[40, 41], 1.0),
    (41, &[40, 41], 1.0),
    (42, &[41, 42], 2.2),
    (43, &[43, 44], 1.0),
    (44, &[43, 44], 1.0),
    (45, &[45, 46], 1.0),
    (46, &[46, 47], 1.0),
    (47, &[47, 48], 1.0),
    (48, &[47, 48], 1.0),
    (49, &[49, 50], 1.0),
    (50, &[49, 50], 1.0),
];

fn sets(tie: TieBreak, range: usize) -> Vec<(Vec<u32>, f64)> {
    let (d, p) = bundled_example();
    let params = SearchParams::new(1.0, 0.15, range).unwrap().with_tie_break(tie);
    let all = pive_search_all(&d, &p, &params).unwrap();
    TABLE
        .iter()
        .map(|&(id, _, _)| {
            let s = &all[d.index_of(id).unwrap()];
            (s.ids(&d), s.diameter_km)
        })
        .collect()
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

#[test]
fn most_rightmost_rule_reproduces_every_row() {
    for range in 2..=5 {
        for (&(id, members, diam), (got, got_d)) in TABLE.iter().zip(sets(TieBreak::MostRightmost, range)) {
            assert_eq!(got, members, "location {id}, range {range}");
            assert_eq!(round1(got_d), diam, "location {id}, range {range}");
        }
    }
}

#[test]
fn default_rule_keeps_every_diameter() {
    for (&(id, members, diam), (got, got_d)) in TABLE.iter().zip(sets(TieBreak::FewestLeftmost, 4)) {
        assert_eq!(round1(got_d), diam, "location {id}");
        if [5, 6, 15, 16].contains(&id) {
            assert_eq!(got, members, "location {id}");
        }
    }
}
