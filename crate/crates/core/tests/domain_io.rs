use plslab::domain::{load_domain, load_domain_json, DomainDump};
use plslab::{bundled_example, LocationDomain, PriorDistribution};

#[test]
fn bundled_ids_follow_hilbert_rank() {
    let (d, p) = bundled_example();
    assert_eq!(d.len(), 50);
    for r in 0..d.len() {
        assert_eq!(d.id(d.ranks().at(r)), r as u32 + 1);
    }
    assert!((p.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    assert_eq!(d.dist(d.index_of(5).unwrap(), d.index_of(6).unwrap()), 2.0);
}

#[test]
fn json_round_trip_is_bit_identical() {
    let (d, p) = bundled_example();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("domain.json");
    let first = d.to_json(Some(&p)).unwrap();
    std::fs::write(&path, &first).unwrap();
    let (d2, p2) = load_domain_json(&path).unwrap();
    let p2 = p2.unwrap();
    assert_eq!(d2.to_json(Some(&p2)).unwrap(), first);
    assert!(p.probs().iter().zip(p2.probs()).all(|(a, b)| a.to_bits() == b.to_bits()));
    for a in 0..d.len() {
        for b in 0..d.len() {
            assert_eq!(d.dist(a, b).to_bits(), d2.dist(a, b).to_bits());
        }
    }
}

#[test]
fn csv_file_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("regions.csv");
    std::fs::write(&csv, "id,col,row,weight\n10,0,0,1\n20,3,0,3\n30,3,3,4\n").unwrap();
    let (d, p) = load_domain(&csv, 0.5, 2).unwrap();
    let p = p.unwrap();
    assert_eq!(p.probs(), &[0.125, 0.375, 0.5]);
    assert_eq!(d.dist(0, 1), 1.5);
    let dump: DomainDump = serde_json::from_str(&d.to_json(Some(&p)).unwrap()).unwrap();
    let (d2, p2) = dump.into_domain().unwrap();
    assert_eq!(d2.locations(), d.locations());
    assert_eq!(p2.unwrap(), p);
}

#[test]
fn json_without_prior_and_bad_prior() {
    let d = LocationDomain::new(1, 1.0, &[(1, 0, 0), (2, 1, 1)]).unwrap();
    let text = d.to_json(None).unwrap();
    assert!(!text.contains("prior"));
    let dump: DomainDump = serde_json::from_str(&text).unwrap();
    assert!(dump.into_domain().unwrap().1.is_none());
    let bad = r#"{"order":1,"cell_size_km":1.0,"locations":[{"id":1,"col":0,"row":0}],"prior":[0.5]}"#;
    assert!(serde_json::from_str::<DomainDump>(bad).unwrap().into_domain().is_err());
    assert!(PriorDistribution::new(&d, vec![0.5, 0.5]).is_ok());
}

#[test]
fn missing_file_reports_path() {
    let err = load_domain(std::path::Path::new("/nonexistent/regions.csv"), 1.0, 3).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/regions.csv"));
}
