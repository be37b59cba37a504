use airisk_core::estimators::EstimatorKind;
use airisk_core::io::report_csv;
use airisk_core::preset::reference_portfolio;
use airisk_core::risk::{compute_ccar, exceedance_curve, risk_report, solve_car, variance_reduction_factor, RiskQuery};
use airisk_core::PortfolioModel;

fn reference() -> PortfolioModel {
    PortfolioModel::new(reference_portfolio()).unwrap()
}

const LEVELS: [f64; 3] = [0.05, 0.01, 0.001];

#[test]
fn report_levels_and_variance_reduction() {
    let m = reference();
    let sis = risk_report(&m, &LEVELS, EstimatorKind::Sis, 100_000, 1, "h").unwrap();
    let is = risk_report(&m, &LEVELS, EstimatorKind::Is, 100_000, 1, "h").unwrap();
    for rep in [&sis, &is] {
        for w in rep.rows.windows(2) {
            assert!(w[1].car > w[0].car);
            assert!(w[1].ccar.estimate > w[0].ccar.estimate);
        }
        for r in &rep.rows {
            assert!(r.ccar.estimate >= r.car);
        }
    }
    let (s, i) = (&sis.rows, &is.rows);
    assert!((239.32 * 0.985..=239.32 * 1.015).contains(&s[0].car), "{}", s[0].car);
    assert!((352.03 * 0.985..=352.03 * 1.015).contains(&s[1].car), "{}", s[1].car);
    assert!((315.34 * 0.985..=315.34 * 1.015).contains(&s[0].ccar.estimate));
    assert!((791.60 * 0.97..=791.60 * 1.03).contains(&s[2].ccar.estimate), "{}", s[2].ccar.estimate);
    assert!((5.0..=80.0).contains(&i[0].vr), "IS VR {}", i[0].vr);
    assert!((50.0..=800.0).contains(&s[0].vr), "SIS VR {}", s[0].vr);
    assert!(i[1].vr >= 5.0 && s[1].vr >= 50.0);
    for (a, b) in s.iter().zip(i) {
        assert!(a.vr > b.vr, "alpha {}: {} vs {}", a.alpha, a.vr, b.vr);
    }
}

#[test]
fn exceedance_at_car_is_the_level() {
    let m = reference();
    for alpha in [0.05, 0.01] {
        let q = RiskQuery {
            alpha,
            estimator: EstimatorKind::Sis,
            budget: 50_000,
            seed: 3,
        };
        let car = solve_car(&m, &q).unwrap().car;
        let p = &exceedance_curve(&m, &[car], EstimatorKind::Sis, 100_000, 4).unwrap()[0];
        assert!((p.ep - alpha).abs() <= 3.0 * p.halfwidth95 / 1.96, "alpha {alpha}: {}", p.ep);
    }
}

#[test]
fn reports_are_reproducible() {
    let m = reference();
    let a = risk_report(&m, &[0.05, 0.01], EstimatorKind::Sis, 5000, 9, "h").unwrap();
    let b = risk_report(&m, &[0.05, 0.01], EstimatorKind::Sis, 5000, 9, "h").unwrap();
    assert_eq!(report_csv(&a, &[]), report_csv(&b, &[]));
    let c = risk_report(&m, &[0.05, 0.01], EstimatorKind::Sis, 5000, 10, "h").unwrap();
    assert_ne!(report_csv(&a, &[]), report_csv(&c, &[]));
}

#[test]
fn report_rejects_bad_levels() {
    let m = reference();
    assert!(risk_report(&m, &[0.01, 0.05], EstimatorKind::Naive, 5000, 1, "h").is_err());
    assert!(risk_report(&m, &[0.6], EstimatorKind::Naive, 5000, 1, "h").is_err());
    assert!(risk_report(&m, &[0.05], EstimatorKind::Naive, 10, 1, "h").is_err());
    assert!(risk_report(&m, &[], EstimatorKind::Naive, 5000, 1, "h").is_err());
}

#[test]
fn unreachable_tail_is_flagged() {
    let m = reference();
    let q = RiskQuery {
        alpha: 0.05,
        estimator: EstimatorKind::Naive,
        budget: 1000,
        seed: 1,
    };
    let ce = compute_ccar(&m, &q, 5000.0).unwrap();
    assert!(ce.empty_tail);
    let other = compute_ccar(&m, &q, 150.0).unwrap();
    assert!(!other.empty_tail);
    assert!(variance_reduction_factor(&other, &ce).is_infinite());
}

#[test]
fn curve_needs_an_increasing_grid() {
    let m = reference();
    assert!(exceedance_curve(&m, &[200.0, 100.0], EstimatorKind::Sis, 2000, 1).is_err());
    assert!(exceedance_curve(&m, &[], EstimatorKind::Sis, 2000, 1).is_err());
    let pts = exceedance_curve(&m, &[100.0, 239.32, 400.0], EstimatorKind::Sis, 20_000, 2).unwrap();
    assert!(pts.windows(2).all(|w| w[0].ep >= w[1].ep));
    assert!((pts[1].ep - 0.05).abs() < 0.005, "{}", pts[1].ep);
}
