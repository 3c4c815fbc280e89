use biaffine_core::ensembles::{sample_haar_orthogonal, stream};
use biaffine_core::stats::RunningMoments;
use biaffine_core::weingarten::*;
use proptest::prelude::*;

#[test]
fn haar_entry_moments() {
    // E[R_11^2] = 1/d and E[R_11^4] = 3/(d(d+2)) for Haar O(d)
    let d = 6;
    let mut rng = stream(21);
    let mut second = RunningMoments::new();
    let mut fourth = RunningMoments::new();
    for _ in 0..40_000 {
        let r = sample_haar_orthogonal(d, &mut rng);
        let x = r.get(2, 3);
        second.push(x * x);
        fourth.push(x * x * x * x);
    }
    let df = d as f64;
    assert!((second.mean() - 1.0 / df).abs() <= 4.0 * second.stderr());
    let exact4 = 3.0 / (df * (df + 2.0));
    assert!((fourth.mean() - exact4).abs() <= 4.0 * fourth.stderr());
}

#[test]
fn haar_fourth_entry_moment_from_table() {
    // E[R_11^4] = sum over pairings of Wg, all deltas equal to one
    for d in [4usize, 7] {
        let t = weingarten_table(2, d).unwrap();
        let total: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| t.wg(i, j)).sum();
        let df = d as f64;
        assert!((total - 3.0 / (df * (df + 2.0))).abs() < 1e-14);
    }
}

#[test]
fn haar_determinant_signs_balanced() {
    let mut rng = stream(5);
    let mut pos = 0;
    let draws = 4000;
    for _ in 0..draws {
        let r = sample_haar_orthogonal(2, &mut rng);
        if r.get(0, 0) * r.get(1, 1) - r.get(0, 1) * r.get(1, 0) > 0.0 {
            pos += 1;
        }
    }
    let frac = pos as f64 / draws as f64;
    assert!((frac - 0.5).abs() < 0.04, "fraction {frac}");
}

#[test]
fn second_moment_matches_mc_at_several_sizes() {
    for (d, seed) in [(4usize, 1u64), (8, 2), (16, 3)] {
        let v: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * i as f64).collect();
        let mut b = vec![0.0; d];
        b[0] = 1.0;
        b[d - 1] = -0.5;
        let c: Vec<f64> = (0..d).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let est = mc_orthogonal_moment(&v, &b, &c, MomentOrder::Second, 20_000, &mut stream(seed)).unwrap();
        let exact = second_moment_closed(&v, &b, &c).unwrap();
        assert!(est.agrees_with(exact), "d={d}: {est:?} vs {exact}");
    }
}

#[test]
fn fourth_moment_matches_mc_small() {
    let d = 4;
    let v = vec![1.0, 0.5, 2.0, 1.5];
    let b = vec![1.0, 0.0, -1.0, 0.0];
    let c = vec![0.0, 1.0, 1.0, 0.5];
    let est = mc_orthogonal_moment(&v, &b, &c, MomentOrder::Fourth, 50_000, &mut stream(8)).unwrap();
    let exact = fourth_moment_pairing_sum(&v, &b, &c).unwrap();
    assert_eq!(v.len(), d);
    assert!(est.agrees_with(exact), "{est:?} vs {exact}");
}

#[test]
fn stderr_halves_when_samples_quadruple() {
    let v = vec![1.0; 5];
    let b = vec![1.0, 0.0, 0.0, 0.0, 0.0];
    let c = vec![0.0, 1.0, 0.0, 0.0, 0.0];
    let small = mc_orthogonal_moment(&v, &b, &c, MomentOrder::Second, 10_000, &mut stream(1)).unwrap();
    let large = mc_orthogonal_moment(&v, &b, &c, MomentOrder::Second, 40_000, &mut stream(2)).unwrap();
    let ratio = small.stderr / large.stderr;
    assert!((ratio - 2.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn gaussian_disjoint_supports_agree_with_both_formulas() {
    let b = vec![1.0, 0.0, 0.0, 0.0];
    let c = vec![0.0, 0.0, 1.0, -1.0];
    let r = gaussian_moment_suite(&b, &c, 40_000, &mut stream(3)).unwrap();
    assert_eq!(r.product_printed, r.product_alternative);
    assert!(r.printed_agrees() && r.alternative_agrees(), "{r:?}");
    assert!(r.overlap_agrees());
}

#[test]
fn leading_order_scaling_is_flat() {
    let ratio = |d: usize| {
        let v = vec![1.0; d];
        let mut b = vec![0.0; d];
        b[0] = 1.0;
        let mut c = vec![0.0; d];
        c[1] = 1.0;
        let val = fourth_moment_pairing_sum(&v, &b, &c).unwrap();
        val * (d as f64).powi(3) / ((d * d) as f64)
    };
    let rs: Vec<f64> = [8, 16, 32].iter().map(|&d| ratio(d)).collect();
    let (lo, hi) = rs.iter().fold((f64::MAX, f64::MIN), |(l, h), r| (l.min(*r), h.max(*r)));
    assert!(hi / lo < 1.25, "{rs:?}");
}

fn pairing_strategy() -> impl Strategy<Value = Pairing> {
    (1usize..=4)
        .prop_flat_map(|k| (Just(k), 0..enumerate_pairings(2 * k).unwrap().len()))
        .prop_map(|(k, i)| enumerate_pairings(2 * k).unwrap()[i].clone())
}

proptest! {
    #[test]
    fn canonical_form_is_order_free(p in pairing_strategy(), rot in 0usize..8, flip in any::<bool>()) {
        let mut pairs: Vec<(usize, usize)> = p.pairs().to_vec();
        let len = pairs.len();
        pairs.rotate_left(rot % len);
        if flip {
            pairs.iter_mut().for_each(|(a, b)| core::mem::swap(a, b));
        }
        prop_assert_eq!(Pairing::new(pairs).unwrap(), p);
    }

    #[test]
    fn loop_is_symmetric(k in 1usize..=4, i in 0usize..105, j in 0usize..105) {
        let ps = enumerate_pairings(2 * k).unwrap();
        let (a, b) = (&ps[i % ps.len()], &ps[j % ps.len()]);
        prop_assert_eq!(loop_count(a, b).unwrap(), loop_count(b, a).unwrap());
        prop_assert_eq!(loop_count(a, a).unwrap(), k);
        prop_assert!(loop_count(a, b).unwrap() >= 1);
    }

    #[test]
    fn fourth_moment_symmetric_in_b_c(
        v in prop::collection::vec(-2.0..2.0f64, 5),
        b in prop::collection::vec(-2.0..2.0f64, 5),
        c in prop::collection::vec(-2.0..2.0f64, 5),
    ) {
        let x = fourth_moment_pairing_sum(&v, &b, &c).unwrap();
        let y = fourth_moment_pairing_sum(&v, &c, &b).unwrap();
        let z = fourth_moment_closed(&v, &b, &c).unwrap();
        prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
        prop_assert!((x - z).abs() <= 1e-10 * (1.0 + x.abs()));
        prop_assert!(x >= -1e-12);
    }
}
