use super::*;

#[test]
fn percentile_examples() {
    let v: Vec<f64> = (1..=100).map(f64::from).collect();
    assert!((percentile(&v, 50.0) - 50.5).abs() < 1e-12);
    assert!((percentile(&v, 90.0) - 90.1).abs() < 1e-12);
    assert_eq!(percentile(&[3.0; 7], 99.0), 3.0);
    assert_eq!(percentile(&[2.0], 10.0), 2.0);
    assert!(percentile(&[], 50.0).is_nan());
}

#[test]
fn tiers_split_thirty_forty_thirty() {
    let errors: Vec<f64> = (0..10).rev().map(f64::from).collect();
    let t = assign_tiers(&errors);
    assert_eq!(t.iter().filter(|x| **x == Tier::Easy).count(), 3);
    assert_eq!(t.iter().filter(|x| **x == Tier::Hard).count(), 3);
    assert_eq!(t[9], Tier::Easy);
    assert_eq!(t[0], Tier::Hard);
    let equal = assign_tiers(&[1.0; 10]);
    assert_eq!(&equal[..3], &[Tier::Easy; 3]);
    assert_eq!(&equal[7..], &[Tier::Hard; 3]);
}

#[test]
fn uniformity_examples() {
    assert_eq!(uniformity(&[0.25; 4]).unwrap(), 1.0);
    assert_eq!(uniformity(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
    let u = uniformity(&[0.4, 0.3, 0.2, 0.1]).unwrap();
    assert!((u - 0.9232).abs() < 5e-5);
    assert!(matches!(uniformity(&[0.5, 0.6]), Err(ReportError::SimplexViolation { .. })));
}

#[test]
fn cdf_reaches_one() {
    let c = cdf(&[3.0, 1.0, 2.0, 4.0]);
    assert_eq!(c, vec![(1.0, 0.25), (2.0, 0.5), (3.0, 0.75), (4.0, 1.0)]);
}

#[test]
fn comparison_examples() {
    let base = PercentileTable::from_values("test", 250, [100.0, 100.0, 100.0, 100.0, 100.0]);
    let ours = PercentileTable::from_values("test", 250, [50.0, 50.0, 50.0, 50.0, 50.0]);
    let c = compare(&base, &ours).unwrap();
    assert!(c.rows.iter().all(|r| r.delta_pct == 50.0));
    assert!(compare(&base, &base).unwrap().rows.iter().all(|r| r.delta_pct == 0.0));
    let other = PercentileTable { split: "val".into(), ..ours.clone() };
    assert!(matches!(compare(&base, &other), Err(ReportError::SplitMismatch { .. })));
    assert!(c.to_csv().starts_with("metric,base_cm,ours_cm,delta_pct,split,n\nMedian,100,50,50,test,250\n"));
}

fn report(errors: &[f64]) -> LocalizationReport {
    let truth: Vec<Point2<f64>> = errors.iter().map(|_| Point2::new(1.0, 1.0)).collect();
    let predicted = errors.iter().map(|e| Point2::new(1.0 + e, 1.0)).collect();
    let aps = crate::scenario::Scenario::default().aps;
    let alpha = Some(errors.iter().map(|_| vec![0.4, 0.3, 0.2, 0.1]).collect());
    LocalizationReport::new("test", (0..errors.len()).collect(), truth, predicted, alpha, aps).unwrap()
}

#[test]
fn report_table_and_files() {
    let r = report(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
    let t = r.table();
    assert_eq!(t.rows.iter().map(|(m, _)| m.as_str()).collect::<Vec<_>>(), TABLE_METRICS);
    let v: Vec<f64> = t.rows.iter().map(|(_, v)| *v).collect();
    assert!((v[0] - 55.0).abs() < 1e-9 && (v[1] - 55.0).abs() < 1e-9);
    let s = r.tier_summary();
    assert_eq!(s.iter().map(|x| x.1).collect::<Vec<_>>(), vec![3, 4, 3]);
    let u = r.uniformity().unwrap().unwrap();
    assert!((u - 0.9232).abs() < 5e-5);

    let dir = tempfile::tempdir().unwrap();
    r.write_dir(dir.path()).unwrap();
    let tiers = std::fs::read_to_string(dir.path().join("tiers.csv")).unwrap();
    assert_eq!(tiers.lines().filter(|l| l.starts_with("sample,")).count(), 10);
    assert_eq!(tiers.lines().filter(|l| l.starts_with("ap,")).count(), 4);
    let alpha = std::fs::read_to_string(dir.path().join("alpha_stats.csv")).unwrap();
    assert!(alpha.starts_with("ap,q1,median,q3,mean\n0,0.4,0.4,0.4,0.4\n"));
    let back = PercentileTable::parse_csv(&std::fs::read_to_string(dir.path().join("report.csv")).unwrap()).unwrap();
    assert_eq!(back.n, 10);
}

#[test]
fn empty_report_is_rejected() {
    let aps = crate::scenario::Scenario::default().aps;
    assert!(matches!(
        LocalizationReport::new("test", vec![], vec![], vec![], None, aps),
        Err(ReportError::EmptySplit(_))
    ));
}
