use pgnkit_core::metrics::*;
use proptest::prelude::*;

proptest! {
    #[test]
    fn ar_is_monotone_in_each_argument(
        d in 0.0f64..1.0, a in 0.0f64..1.0, p in 0.0f64..100.0,
        bump in 0.0f64..1.0,
    ) {
        let w = ArWeights::default();
        let base = ar(d, a, p, &w).unwrap();
        prop_assert!(ar((d + bump).min(1.0), a, p, &w).unwrap() >= base);
        prop_assert!(ar(d, (a + bump).min(1.0), p, &w).unwrap() >= base);
        prop_assert!(ar(d, a, p + bump, &w).unwrap() >= base);
    }

    #[test]
    fn psnr_strictly_decreases_with_mse(e1 in 1e-6f64..0.5, factor in 1.01f64..10.0) {
        let x = [0.0f64];
        let p1 = psnr(&x, &[e1.sqrt()], 1.0).unwrap();
        let p2 = psnr(&x, &[(e1 * factor).sqrt()], 1.0).unwrap();
        prop_assert!(p2 < p1);
    }

    #[test]
    fn acr_and_delta_r_stay_in_unit_interval(
        total in 1usize..1000, same_frac in 0.0f64..=1.0,
        r_min in -50.0f64..0.0, span in 0.1f64..100.0, attacked in -200.0f64..200.0,
    ) {
        let same = ((total as f64) * same_frac) as usize;
        let a = acr(same, total).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let d = delta_r(r_min + span, attacked, r_min).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
    }
}

/// Independent recomputation of the published AR cells.
#[test]
fn bundled_ar_cells_match_oracle() {
    let games = [("Pong", 21.0, -21.0), ("MsPacman", 2155.0, 0.0), ("SpaceInvaders", 719.0, 0.0), ("Qbert", 5460.0, 0.0)];
    let t = ReferenceTables::bundled();
    let checks = verify_ar(&t, &ArWeights::default(), AR_TOLERANCE).unwrap();
    assert_eq!(checks.len(), 20);
    for c in &checks {
        let row = t.rows.iter().find(|r| r.method == c.method && r.game == c.game).unwrap();
        let (_, normal, min) = games.iter().find(|g| g.0 == c.game).unwrap();
        let d = ((normal - row.reward) / (normal - min)).clamp(0.0, 1.0);
        let oracle = 0.5 * d + 0.49 * row.acr.unwrap() + 0.01 * row.psnr.unwrap();
        assert!((c.computed - oracle).abs() < 1e-12);
        assert!(c.passed, "{}/{}: {} vs {}", c.method, c.game, c.computed, c.expected);
    }
}

#[test]
fn spot_anchors() {
    let checks = verify_ar(&ReferenceTables::bundled(), &ArWeights::default(), AR_TOLERANCE).unwrap();
    let get = |m: &str, g: &str| {
        checks.iter().find(|c| c.method == m && c.game == g).unwrap().computed
    };
    assert!((get("CW", "Pong") - 0.56).abs() <= 0.01);
    assert!((get("T-PGNA", "Pong") - 0.70).abs() <= 0.01);
    assert!((get("PGD", "MsPacman") - 0.53).abs() <= 0.01);
}

#[test]
fn tolerance_is_enforced() {
    let mut t = ReferenceTables::bundled();
    let row = t.rows.iter_mut().find(|r| r.method == "PGD" && r.game == "Qbert").unwrap();
    row.ar = Some(0.7);
    let checks = verify_ar(&t, &ArWeights::default(), AR_TOLERANCE).unwrap();
    assert_eq!(checks.iter().filter(|c| !c.passed).count(), 1);
}

#[test]
fn reference_parse_errors() {
    assert!(ReferenceTables::parse("nope\n").is_err());
    let header = "method,game,min_return,reward,acr_percent,psnr,ar\n";
    assert!(ReferenceTables::parse(&format!("{header}CW,Pong,-21\n")).is_err());
    assert!(ReferenceTables::parse(&format!("{header}CW,Pong,-21,x,0,1,1\n")).is_err());
}
