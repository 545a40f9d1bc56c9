use proptest::prelude::*;

use pws_core::analysis::{diversity_counts, metrics};
use pws_core::calibration::CalibrationWeights;
use pws_core::data::{read_vote_matrix, write_vote_matrix};
use pws_core::label_model::{fit_dawid_skene, infer, DawidSkeneConfig};
use pws_core::prompt::{extract_vote, MapTarget};
use pws_core::{LabelMap, PromptTemplate, PromptedLF, Vote, VoteMatrix};

/// Vote codes for an `n × m` matrix over `k` classes, `-1` abstaining.
fn codes(n: usize, m: usize, k: usize) -> impl Strategy<Value = Vec<Vec<i64>>> {
    prop::collection::vec(prop::collection::vec(-1..k as i64, m), n)
}

fn matrix(codes: &[Vec<i64>]) -> VoteMatrix {
    let m = codes.first().map_or(0, Vec::len);
    let names: Vec<String> = (0..m).map(|j| format!("lf{j}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    VoteMatrix::from_codes(&refs, codes).unwrap()
}

fn binary_lf(threshold: f64) -> PromptedLF {
    PromptedLF::new(
        "lf",
        PromptTemplate::parse("[TEXT]").unwrap(),
        LabelMap::new([("yes", MapTarget::Class(1)), ("no", MapTarget::Class(0))]).unwrap(),
        "mock",
    )
    .with_threshold(threshold)
}

fn scored(p: &[f64]) -> Vec<(String, f64)> {
    ["yes", "no"]
        .iter()
        .map(|s| s.to_string())
        .zip(p.iter().copied())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vote_matrix_survives_the_file_format(
        rows in (1usize..20, 1usize..6).prop_flat_map(|(n, m)| codes(n, m, 3)),
        conf in prop::collection::vec(0.0f64..=1.0, 120),
    ) {
        let mut x = matrix(&rows);
        for (i, row) in x.rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                v.confidence = conf[(i * 6 + j) % conf.len()];
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("votes.csv");
        write_vote_matrix(&x, &path).unwrap();
        prop_assert_eq!(read_vote_matrix(&path).unwrap(), x);
    }

    #[test]
    fn filling_an_abstention_never_lowers_coverage(
        rows in (1usize..30, 1usize..5).prop_flat_map(|(n, m)| codes(n, m, 2)),
        pick in any::<prop::sample::Index>(),
        class in 0usize..2,
    ) {
        let before = matrix(&rows);
        let mut after = before.clone();
        let cells: Vec<(usize, usize)> = (0..before.n())
            .flat_map(|i| (0..before.m()).map(move |j| (i, j)))
            .collect();
        let (i, j) = cells[pick.index(cells.len())];
        if after.rows[i][j].is_abstain() {
            after.rows[i][j] = Vote::class(class, 1.0);
        }
        for lf in 0..before.m() {
            prop_assert!(after.coverage(lf).unwrap() >= before.coverage(lf).unwrap());
        }
    }

    #[test]
    fn extraction_ignores_probability_scale(
        p in 0.001f64..0.999,
        scale in 1e-3f64..1e3,
        tau in 0.0f64..1.0,
    ) {
        let lf = binary_lf(tau);
        let a = extract_vote(&lf, &scored(&[p, 1.0 - p])).unwrap();
        let b = extract_vote(&lf, &scored(&[p * scale, (1.0 - p) * scale])).unwrap();
        prop_assume!((p.max(1.0 - p) - tau).abs() > 1e-9);
        prop_assert_eq!(a.label, b.label);
        prop_assert!((a.confidence - b.confidence).abs() <= 1e-12);
    }

    #[test]
    fn raising_the_threshold_only_abstains(
        p in 0.0f64..=1.0,
        lo in 0.0f64..1.0,
        hi in 0.0f64..1.0,
    ) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let low = extract_vote(&binary_lf(lo), &scored(&[p, 1.0 - p])).unwrap();
        let high = extract_vote(&binary_lf(hi), &scored(&[p, 1.0 - p])).unwrap();
        if let Some(h) = high.label {
            prop_assert_eq!(low.label, Some(h));
        }
        prop_assert!(!binary_lf(0.0).label_map.polarity().is_empty());
        prop_assert!(extract_vote(&binary_lf(0.0), &scored(&[p, 1.0 - p])).unwrap().label.is_some());
    }

    #[test]
    fn uniform_calibration_is_the_identity(raw in prop::collection::vec(1e-6f64..1.0, 2..8)) {
        let total: f64 = raw.iter().sum();
        let q = CalibrationWeights::uniform("lf", "mock", raw.len()).apply(&raw).unwrap();
        for (x, r) in q.iter().zip(&raw) {
            prop_assert!((x - r / total).abs() <= 1e-12);
        }
    }

    /// A two-candidate decision flips exactly when the raw ratio lies
    /// strictly between the content-free ratio and 1.
    #[test]
    fn calibration_flips_between_the_ratios(p in 0.001f64..0.999, c in 0.001f64..0.999) {
        let raw_ratio = p / (1.0 - p);
        let cf_ratio = c / (1.0 - c);
        prop_assume!((raw_ratio - 1.0).abs() > 1e-9 && (raw_ratio - cf_ratio).abs() > 1e-9);
        let w = CalibrationWeights { lf: "lf".into(), backend: "mock".into(), p_cf: vec![c, 1.0 - c], estimated_at: 0 };
        let q = w.apply(&[p, 1.0 - p]).unwrap();
        let raw_yes = p > 1.0 - p;
        let cal_yes = q[0] > q[1];
        let between = (raw_ratio - cf_ratio) * (raw_ratio - 1.0) < 0.0;
        prop_assert_eq!(raw_yes != cal_yes, between);
    }

    #[test]
    fn em_log_likelihood_never_decreases(
        rows in (2usize..40, 1usize..5).prop_flat_map(|(n, m)| codes(n, m, 2)),
        full in any::<bool>(),
    ) {
        let x = matrix(&rows);
        let cfg = DawidSkeneConfig { full_confusion: full, ..Default::default() };
        let fit = fit_dawid_skene(&x, 2, &cfg).unwrap();
        for w in fit.log_likelihood.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * (1.0 + w[0].abs()), "{:?}", w);
        }
    }

    #[test]
    fn permuting_labelers_permutes_parameters(
        rows in (5usize..40, 2usize..5).prop_flat_map(|(n, m)| codes(n, m, 2)),
        perm_seed in any::<u64>(),
    ) {
        let x = matrix(&rows);
        let m = x.m();
        let mut perm: Vec<usize> = (0..m).collect();
        // Deterministic shuffle from the seed.
        for i in (1..m).rev() {
            perm.swap(i, (perm_seed as usize).wrapping_mul(i + 7) % (i + 1));
        }
        let mut y = x.clone();
        y.lf_names = perm.iter().map(|&j| x.lf_names[j].clone()).collect();
        for (row, orig) in y.rows.iter_mut().zip(&x.rows) {
            *row = perm.iter().map(|&j| orig[j]).collect();
        }
        let cfg = DawidSkeneConfig::default();
        let fx = fit_dawid_skene(&x, 2, &cfg).unwrap();
        let fy = fit_dawid_skene(&y, 2, &cfg).unwrap();
        for (jy, &jx) in perm.iter().enumerate() {
            prop_assert!((fy.params.alpha[jy] - fx.params.alpha[jx]).abs() < 1e-6);
        }
        let (sx, sy) = (infer(&fx.params, &x).unwrap(), infer(&fy.params, &y).unwrap());
        for (a, b) in sx.rows.iter().zip(&sy.rows) {
            for (p, q) in a.iter().zip(b) {
                prop_assert!((p - q).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn diversity_is_symmetric(
        rows in (1usize..30, 2usize..5).prop_flat_map(|(n, m)| codes(n, m, 3)),
        gold_seed in prop::collection::vec(0usize..3, 30),
    ) {
        let x = matrix(&rows);
        let gold: Vec<usize> = (0..x.n()).map(|i| gold_seed[i]).collect();
        for i in 0..x.m() {
            for j in 0..x.m() {
                if i == j {
                    continue;
                }
                let a = diversity_counts(&x, &gold, i, j).unwrap();
                let b = diversity_counts(&x, &gold, j, i).unwrap();
                prop_assert_eq!((a.n00, a.n11, a.n10, a.n01), (b.n00, b.n11, b.n01, b.n10));
            }
        }
    }

    #[test]
    fn metrics_ignore_example_order(
        pairs in prop::collection::vec((0usize..2, 0usize..2), 1..60),
        rotate in 0usize..60,
    ) {
        let (pred, gold): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        shuffled.rotate_left(rotate % pairs.len());
        shuffled.reverse();
        let (pred2, gold2): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
        prop_assert_eq!(metrics(&pred, &gold, 1).unwrap(), metrics(&pred2, &gold2, 1).unwrap());
    }
}
