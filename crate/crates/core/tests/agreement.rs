mod common;

use common::*;
use fundus_curator::agreement::{
    confusion, pair_metrics, pair_metrics_masks, report, weighted_confusion_masks, ProtocolThresholds, Verdict,
};
use fundus_curator::manifest::DatasetManifest;
use fundus_curator::pipeline::cmd_agree;
use fundus_curator::{Annotation, LesionMask, LesionType, Mask};
use proptest::prelude::*;

fn mask_strategy() -> impl Strategy<Value = (Mask, Mask)> {
    (1u32..24, 1u32..24).prop_flat_map(|(w, h)| {
        let n = (w * h) as usize;
        (prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n))
            .prop_map(move |(a, b)| (Mask::from_bits(w, h, a).unwrap(), Mask::from_bits(w, h, b).unwrap()))
    })
}

fn weight() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0]
}

// brute force straight from the indicator sums
fn brute(i: &Mask, pi: f64, j: &Mask, pj: f64) -> (f64, f64) {
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in i.bits().iter().zip(j.bits()) {
        let (wi, wj) = (if x { pi } else { 0.0 }, if y { pj } else { 0.0 });
        match (wi > 0.0, wj > 0.0) {
            (true, true) => a += wi * wj,
            (true, false) => b += wi,
            (false, true) => c += wj,
            (false, false) => d += 1.0,
        }
    }
    let t = a + b + c + d;
    let p = (a + d) / t;
    let pe = ((a + b) * (a + c) + (c + d) * (b + d)) / (t * t);
    let k = if 1.0 - pe == 0.0 {
        if b == 0.0 && c == 0.0 { 1.0 } else { 0.0 }
    } else {
        (p - pe) / (1.0 - pe)
    };
    let den = 2.0 * a + b + c;
    (k, if den == 0.0 { 1.0 } else { 2.0 * a / den })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_in_range_and_symmetric((i, j) in mask_strategy(), pi in weight(), pj in weight()) {
        let m = pair_metrics_masks(&i, pi, &j, pj).unwrap();
        let r = pair_metrics_masks(&j, pj, &i, pi).unwrap();
        for k in [m.kappa, m.w_kappa] {
            prop_assert!((-1.0..=1.0).contains(&k));
        }
        for d in [m.dsc, m.w_dsc] {
            prop_assert!((0.0..=1.0).contains(&d));
        }
        prop_assert_eq!(m.kappa, r.kappa);
        prop_assert_eq!(m.dsc, r.dsc);
        prop_assert!((m.w_kappa - r.w_kappa).abs() <= 1e-12);
        prop_assert!((m.w_dsc - r.w_dsc).abs() <= 1e-12);
    }
}

proptest! {
    #[test]
    fn matches_brute_force((i, j) in mask_strategy(), pi in weight(), pj in weight()) {
        let m = pair_metrics_masks(&i, pi, &j, pj).unwrap();
        let (k, d) = brute(&i, pi, &j, pj);
        prop_assert!((m.w_kappa - k).abs() <= 1e-9, "{} vs {}", m.w_kappa, k);
        prop_assert!((m.w_dsc - d).abs() <= 1e-9);
        let (k1, d1) = brute(&i, 1.0, &j, 1.0);
        prop_assert!((m.kappa - k1).abs() <= 1e-9);
        prop_assert!((m.dsc - d1).abs() <= 1e-9);
    }

    #[test]
    fn unit_weights_reduce_to_plain((i, j) in mask_strategy()) {
        prop_assert_eq!(weighted_confusion_masks(&i, 1.0, &j, 1.0).unwrap(), confusion(&i, &j).unwrap());
        let m = pair_metrics_masks(&i, 1.0, &j, 1.0).unwrap();
        prop_assert_eq!(m.kappa, m.w_kappa);
        prop_assert_eq!(m.dsc, m.w_dsc);
    }

    #[test]
    fn confusion_sums((i, j) in mask_strategy(), pi in weight(), pj in weight()) {
        let s = confusion(&i, &j).unwrap();
        prop_assert_eq!(s.total(), i.len() as f64);
        let w = weighted_confusion_masks(&i, pi, &j, pj).unwrap();
        prop_assert!(w.a >= 0.0 && w.b >= 0.0 && w.c >= 0.0 && w.d >= 0.0);
        prop_assert!(w.a <= s.a * pi * pj + 1e-12);
        prop_assert!(w.b <= s.a + s.b && w.c <= s.a + s.c);
    }

    #[test]
    fn fractional_weights_lower_dsc((i, j) in mask_strategy(), pi in 0.01f64..0.99, pj in 0.01f64..0.99) {
        let s = confusion(&i, &j).unwrap();
        prop_assume!(s.a > 0.0 && s.b + s.c > 0.0);
        let m = pair_metrics_masks(&i, pi, &j, pj).unwrap();
        prop_assert!(m.w_dsc < m.dsc);
    }

    #[test]
    fn pixel_order_does_not_matter((i, j) in mask_strategy(), pi in weight(), pj in weight(), seed: u64) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut order: Vec<usize> = (0..i.len()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let permute = |m: &Mask| {
            Mask::from_bits(m.width(), m.height(), order.iter().map(|&k| m.bits()[k]).collect()).unwrap()
        };
        let a = pair_metrics_masks(&i, pi, &j, pj).unwrap();
        let b = pair_metrics_masks(&permute(&i), pi, &permute(&j), pj).unwrap();
        prop_assert_eq!(a.kappa, b.kappa);
        prop_assert_eq!(a.dsc, b.dsc);
        prop_assert!((a.w_kappa - b.w_kappa).abs() <= 1e-12);
        prop_assert!((a.w_dsc - b.w_dsc).abs() <= 1e-12);
    }

    #[test]
    fn report_averages_are_row_means(seed: u64, n in 2usize..5) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut anns = Vec::new();
        for lesion in [LesionType::EX, LesionType::MA, LesionType::SE] {
            for a in 0..n {
                let bits: Vec<bool> = (0..144).map(|_| rng.gen_bool(0.3)).collect();
                let grid = Mask::from_bits(12, 12, bits).unwrap();
                anns.push(Annotation::new(format!("a{a}"), "img", LesionMask { lesion, grid }, rng.gen(), rng.gen()).unwrap());
            }
        }
        let r = report("img", &anns, &ProtocolThresholds::default()).unwrap();
        let avg = r.average.unwrap();
        let mean = |f: fn(&fundus_curator::agreement::ReportRow) -> f64| {
            r.rows.iter().map(f).sum::<f64>() / r.rows.len() as f64
        };
        prop_assert!((avg.kappa - mean(|x| x.kappa)).abs() <= 1e-12);
        prop_assert!((avg.w_kappa - mean(|x| x.w_kappa)).abs() <= 1e-12);
        prop_assert!((avg.dsc - mean(|x| x.dsc)).abs() <= 1e-12);
        prop_assert!((avg.w_dsc - mean(|x| x.w_dsc)).abs() <= 1e-12);
        for row in &r.rows {
            prop_assert!((-1.0..=1.0).contains(&row.kappa) && (0.0..=1.0).contains(&row.w_dsc));
        }
        prop_assert_eq!(r.verdict == Verdict::Discard, r.score.unwrap() < 0.4);
    }
}

#[test]
fn expert_resident_fixture_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = DatasetManifest::load(write_dataset(dir.path(), &small_corpus(4, 40, 3))).unwrap();
    let anns = ds.load_annotations("img000").unwrap();
    assert_eq!(anns.len(), 4);
    let ex: Vec<_> = anns.iter().filter(|a| a.lesion() == LesionType::EX).collect();
    let m = pair_metrics(ex[0], ex[1]).unwrap();
    assert!(m.w_dsc < m.dsc && m.w_kappa < m.kappa);

    let out = tempfile::tempdir().unwrap();
    let (stage, summary) = cmd_agree(&ds, out.path(), &ProtocolThresholds::default()).unwrap();
    assert_eq!(stage.exit_code(), 0);
    assert_eq!(summary.images.len(), 4);
    assert_eq!(summary.kept + summary.discarded + summary.insufficient, 4);
    let text = std::fs::read_to_string(out.path().join("agree/img000.agreement.txt")).unwrap();
    assert!(text.contains("EX") && text.contains("HA"));
}

#[test]
fn one_annotator_is_insufficient_and_zero_weight_is_empty() {
    let grid = rect(10, 10, 2, 2, 6, 6);
    let one = vec![Annotation::new("a", "img", LesionMask { lesion: LesionType::HA, grid: grid.clone() }, 0.9, 1.0).unwrap()];
    let r = report("img", &one, &ProtocolThresholds::default()).unwrap();
    assert_eq!(r.verdict, Verdict::Insufficient);
    assert!(r.score.is_none() && r.rows.is_empty());

    // a zero-confidence annotation counts as an empty mask
    let m = pair_metrics_masks(&grid, 0.0, &Mask::empty(10, 10), 1.0).unwrap();
    assert_eq!((m.w_kappa, m.w_dsc), (1.0, 1.0));
    assert_eq!(m.dsc, 0.0);
}
