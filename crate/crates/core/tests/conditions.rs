use biaffine_core::conditions::*;
use biaffine_core::ensembles::EnsembleSpec;
use biaffine_core::stats::RunningMoments;

#[test]
fn gaussian_overlap_second_moment() {
    let template = EnsembleSpec::gaussian(2, 0);
    for n in [8usize, 32] {
        let mut acc = RunningMoments::new();
        for r in 0..300 {
            let rec = condition_record(&template, n, r, 99).unwrap();
            acc.push(rec.report.overlap0 * rec.report.overlap0);
        }
        // ||b||^2 ||c||^2 with two unit entries each
        assert!((acc.mean() - 4.0).abs() <= 4.0 * acc.stderr(), "n={n}: {acc:?}");
    }
}

#[test]
fn flat_svd_family_has_exact_half_exponent() {
    let template = EnsembleSpec::svd(2, 0.5, 0);
    let study = condition_study(&template, &[16, 32, 64], 2, 7).unwrap();
    let fit = study.fits.iter().find(|f| f.quantity == "inv_norm2").unwrap();
    assert!((fit.slope - 0.5).abs() < 1e-12);
    assert!(study.records.iter().all(|r| !r.report.degenerate || r.report.grad_core_sq == 0.0));
}

#[test]
fn study_records_are_sorted_and_reproducible() {
    let template = EnsembleSpec::gaussian(2, 0);
    let a = condition_study(&template, &[8, 16, 32], 3, 1).unwrap();
    let b = condition_study(&template, &[8, 16, 32], 3, 1).unwrap();
    assert_eq!(a, b);
    assert!(a.records.windows(2).all(|w| (w[0].n, w[0].replica) < (w[1].n, w[1].replica)));
    assert_eq!(a.fits.len(), FITTED_QUANTITIES.len());
    for r in &a.records {
        assert!(r.report.values().iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
