use plslab::audit::{check_dp_on_set, RELATIVE_SLACK};
use plslab::domain::{LocationDomain, PriorDistribution};
use plslab::hilbert::{hilbert_cell, hilbert_value};
use plslab::mechanism::{build_scheme, Scheme, SchemeConfig};
use plslab::metrics::{conditional_errors, dop_er, evidence, expected_error, piv_er, posterior, violation_mass};
use plslab::pls::{e_prime_score, e_score, partition_domain, pive_search, SearchParams};
use plslab::Error;
use proptest::prelude::*;

/// A random sparse domain on a 16x16 grid plus positive weights.
fn domain_strategy(max_n: usize) -> impl Strategy<Value = (LocationDomain, PriorDistribution)> {
    (2..=max_n)
        .prop_flat_map(|n| {
            (
                prop::sample::subsequence((0u32..256).collect::<Vec<_>>(), n),
                prop::collection::vec(0.01f64..0.03, n),
            )
        })
        .prop_map(|(cells, weights)| {
            let cells: Vec<_> = cells.iter().enumerate().map(|(i, c)| (i as u32 + 1, c % 16, c / 16)).collect();
            let d = LocationDomain::new(4, 1.0, &cells).unwrap();
            let p = PriorDistribution::from_weights(&d, &weights).unwrap();
            (d, p)
        })
}

/// Reference window search: every feasible window, smallest diameter first.
fn brute_min_diameter(d: &LocationDomain, p: &PriorDistribution, x: usize, params: &SearchParams) -> Option<f64> {
    let order = d.ranks().order();
    let r = d.ranks().rank(x);
    let mut best: Option<f64> = None;
    for lo in r.saturating_sub(params.range)..=r {
        for hi in r..=(r + params.range).min(order.len() - 1) {
            let w = &order[lo..=hi];
            let mass: f64 = w.iter().map(|&a| p.get(a)).sum();
            let e = w
                .iter()
                .map(|&g| w.iter().map(|&a| p.get(a) * d.dist(g, a)).sum::<f64>() / mass)
                .fold(f64::INFINITY, f64::min);
            if e >= params.threshold() {
                let diam = w.iter().flat_map(|&a| w.iter().map(move |&b| (a, b))).map(|(a, b)| d.dist(a, b)).fold(0.0, f64::max);
                best = Some(best.map_or(diam, |b: f64| b.min(diam)));
            }
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hilbert_round_trip(order in 1u32..=16, a in any::<u32>(), b in any::<u32>()) {
        let side = 1u32 << order;
        let (col, row) = (a % side, b % side);
        let v = hilbert_value(col, row, order).unwrap();
        prop_assert!(v.0 < 1u64 << (2 * order));
        prop_assert_eq!(hilbert_cell(v, order).unwrap(), (col, row));
    }

    #[test]
    fn scores_are_ordered((d, p) in domain_strategy(30), mask in any::<u64>()) {
        let members: Vec<usize> = (0..d.len()).filter(|i| mask >> i & 1 == 1).collect();
        prop_assume!(!members.is_empty());
        let (e, ep, diam) = (e_score(&members, &p, &d), e_prime_score(&members, &p, &d), d.diameter(&members));
        prop_assert!(0.0 <= ep);
        prop_assert!(ep <= e);
        prop_assert!(e <= diam + 1e-12);
    }

    #[test]
    fn window_search_is_minimal((d, p) in domain_strategy(24), eps in 0.2f64..2.0, e_m in 0.0f64..0.6, range in 1usize..6) {
        let params = SearchParams::new(eps, e_m, range).unwrap();
        for x in 0..d.len() {
            let brute = brute_min_diameter(&d, &p, x, &params);
            match pive_search(&d, &p, x, &params) {
                Ok(s) => {
                    prop_assert!(s.contains(x));
                    let ranks: Vec<usize> = s.members.iter().map(|&m| d.ranks().rank(m)).collect();
                    prop_assert!(ranks.windows(2).all(|w| w[1] == w[0] + 1));
                    prop_assert!(s.e_score >= params.threshold());
                    prop_assert_eq!(Some(s.diameter_km), brute);
                }
                Err(Error::NoFeasibleSet { .. }) => prop_assert!(brute.is_none()),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
    }

    #[test]
    fn partition_is_a_feasible_cover((d, p) in domain_strategy(40), eps in 0.2f64..2.0, e_m in 0.0f64..1.0) {
        let params = SearchParams::new(eps, e_m, 1).unwrap();
        let all: Vec<usize> = (0..d.len()).collect();
        match partition_domain(&d, &p, &params) {
            Ok(part) => {
                let mut next_rank = 0;
                for (k, g) in part.groups.iter().enumerate() {
                    prop_assert!(g.e_prime_score >= params.threshold());
                    for &x in &g.members {
                        prop_assert_eq!(d.ranks().rank(x), next_rank);
                        prop_assert_eq!(part.group_of(x), k);
                        next_rank += 1;
                    }
                }
                prop_assert_eq!(next_rank, d.len());
            }
            Err(Error::Infeasible { .. }) => prop_assert!(e_prime_score(&all, &p, &d) < params.threshold()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn matrices_are_stochastic_and_monotone((d, p) in domain_strategy(30), eps in 0.1f64..3.0) {
        let params = SearchParams::new(eps, 0.1, d.len()).unwrap();
        for scheme in Scheme::ALL {
            let Ok(built) = build_scheme(&d, &p, &SchemeConfig::new(scheme, params)) else { continue };
            let m = &built.matrix;
            for x in 0..d.len() {
                let sum: f64 = m.row(x).iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
                prop_assert!(m.row(x).iter().all(|&v| v >= 0.0));
                for a in 0..d.len() {
                    for b in 0..d.len() {
                        if d.dist(x, a) < d.dist(x, b) && m.sensitivity(x) > 0.0 {
                            prop_assert!(m.prob(x, a) > m.prob(x, b));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn adversary_identities((d, p) in domain_strategy(24), eps in 0.2f64..2.0) {
        let params = SearchParams::new(eps, 0.1, d.len()).unwrap();
        let built = build_scheme(&d, &p, &SchemeConfig::new(Scheme::Pive, params)).unwrap();
        let m = &built.matrix;
        let exp_er = conditional_errors(m, &p, &d).unwrap();
        let mut via_conditionals = 0.0;
        for (xp, err) in exp_er.iter().enumerate() {
            let post = posterior(m, &p, &d, xp).unwrap();
            prop_assert!((post.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            via_conditionals += evidence(m, &p, xp) * err;
        }
        prop_assert!((expected_error(m, &p, &d) - via_conditionals).abs() <= 1e-9);
        let sets: Vec<_> = (0..d.len()).map(|x| built.protection.set_of(x).clone()).collect();
        let mass = violation_mass(m, &p, &d, &sets).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&mass));
    }

    #[test]
    fn restricted_guess_never_helps((d, p) in domain_strategy(24), mask in any::<u32>(), xp in any::<prop::sample::Index>()) {
        let members: Vec<usize> = (0..d.len()).filter(|i| mask >> i & 1 == 1).collect();
        prop_assume!(!members.is_empty());
        let params = SearchParams::new(1.0, 0.1, d.len()).unwrap();
        let built = build_scheme(&d, &p, &SchemeConfig::new(Scheme::Uniform, params)).unwrap();
        let xp = xp.index(d.len());
        prop_assert!(piv_er(&members, &built.matrix, &p, &d, xp).unwrap() >= dop_er(&members, &built.matrix, &p, &d, xp).unwrap());
    }

    #[test]
    fn audit_report_invariants((d, p) in domain_strategy(20), eps in 0.1f64..2.0, audit_eps in 0.0f64..3.0) {
        let params = SearchParams::new(eps, 0.1, d.len()).unwrap();
        for scheme in Scheme::ALL {
            let Ok(built) = build_scheme(&d, &p, &SchemeConfig::new(scheme, params)) else { continue };
            for s in built.protection.sets() {
                let r = check_dp_on_set(&built.matrix, &d, &s.members, audit_eps);
                prop_assert_eq!(r.pass, r.max_ratio <= r.bound * (1.0 + RELATIVE_SLACK));
                prop_assert_eq!(r.witnesses.is_empty(), r.pass);
            }
        }
    }

    #[test]
    fn certified_sets_keep_chain_bound((d, p) in domain_strategy(24), eps in 0.2f64..2.0) {
        // on any set where the matrix is eps-DP, PivEr >= e^-eps E(set)
        let params = SearchParams::new(eps, 0.1, d.len()).unwrap();
        let built = build_scheme(&d, &p, &SchemeConfig::new(Scheme::Uniform, params)).unwrap();
        for s in built.protection.sets() {
            prop_assert!(check_dp_on_set(&built.matrix, &d, &s.members, eps).pass);
            for xp in 0..d.len() {
                let piv = piv_er(&s.members, &built.matrix, &p, &d, xp).unwrap();
                prop_assert!(piv >= (-eps).exp() * s.e_score - 1e-9);
            }
        }
    }
}

#[test]
fn metric_axioms_on_bundled_domain() {
    let (d, _) = plslab::bundled_example();
    let n = d.len();
    for a in 0..n {
        assert_eq!(d.dist(a, a), 0.0);
        for b in 0..n {
            assert_eq!(d.dist(a, b), d.dist(b, a));
            if a != b {
                assert!(d.dist(a, b) > 0.0);
            }
            for c in 0..n {
                assert!(d.dist(a, c) <= d.dist(a, b) + d.dist(b, c) + 1e-12);
            }
        }
    }
}

#[test]
fn two_clusters_split_between_them() {
    // two aligned 2x2 blocks, far apart, equal weights
    let cells = [(1, 0, 0), (2, 0, 1), (3, 1, 1), (4, 1, 0), (5, 6, 6), (6, 6, 7), (7, 7, 7), (8, 7, 6)];
    let d = LocationDomain::new(3, 1.0, &cells).unwrap();
    let p = PriorDistribution::uniform(&d).unwrap();
    let params = SearchParams::new(1.0, 0.27, 1).unwrap();
    let order = d.ranks().order();
    let feasible = |s: &[usize]| e_prime_score(s, &p, &d) >= params.threshold();
    let splits: Vec<usize> = (1..order.len()).filter(|&k| feasible(&order[..k]) && feasible(&order[k..])).collect();
    assert_eq!(splits, vec![4]);

    let part = partition_domain(&d, &p, &params).unwrap();
    assert_eq!(part.len(), 2);
    let mut first = part.groups[0].ids(&d);
    first.sort_unstable();
    let cluster_a: Vec<u32> = if first.contains(&1) { vec![1, 2, 3, 4] } else { vec![5, 6, 7, 8] };
    assert_eq!(first, cluster_a);
}

#[test]
fn prior_constructions_normalize() {
    let (d, p) = plslab::bundled_example();
    for probs in [p.probs().to_vec(), PriorDistribution::uniform(&d).unwrap().probs().to_vec()] {
        assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
    for seed in 0..20 {
        let r = plslab::domain::random_prior(&d, 0.01, 0.03, seed).unwrap();
        assert!((r.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}
