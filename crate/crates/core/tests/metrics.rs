use std::path::PathBuf;

use latent_he::metrics::{self, auroc, auroc_binary, f1, Averaging, ScoreMatrix, DEFAULT_THRESHOLD};
use latent_he::Error;
use proptest::prelude::*;

const ALL: [Averaging; 3] = [Averaging::Micro, Averaging::Macro, Averaging::Weighted];

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// Fraction of positive/negative pairs ranked correctly, ties counting one half.
fn pairwise(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0usize);
    for (i, &p) in scores.iter().enumerate() {
        for (j, &n) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1;
                wins += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

fn matrix(scores: &[&[f64]], labels: &[&[u8]]) -> ScoreMatrix {
    ScoreMatrix::unnamed(
        scores.iter().map(|r| r.to_vec()).collect(),
        labels.iter().map(|r| r.to_vec()).collect(),
    )
    .unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

#[test]
fn auroc_examples() {
    assert_eq!(auroc_binary(&[0.9, 0.2], &[1, 0]), Some(1.0));
    assert_eq!(auroc_binary(&[0.5, 0.5], &[1, 0]), Some(0.5));
    assert_eq!(auroc_binary(&[0.1, 0.2], &[1, 1]), None);
    let sm = matrix(&[&[0.9], &[0.2]], &[&[1], &[0]]);
    for avg in ALL {
        assert_eq!(auroc(&sm, avg).unwrap(), 1.0);
    }
}

#[test]
fn auroc_matches_pairwise_oracle() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
    for _ in 0..20 {
        // coarse scores so that ties occur
        let scores: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..3).map(|_| rng.gen_range(0..8) as f64 / 8.0).collect())
            .collect();
        let labels: Vec<Vec<u8>> = (0..10).map(|_| (0..3).map(|_| rng.gen_range(0..2)).collect()).collect();
        let sm = ScoreMatrix::unnamed(scores, labels).unwrap();
        let valid: Vec<usize> = (0..3).filter(|&c| sm.is_valid_class(c)).collect();
        if valid.is_empty() {
            continue;
        }
        let per: Vec<f64> = valid
            .iter()
            .map(|&c| {
                let (s, l) = sm.column(c);
                let a = auroc_binary(&s, &l).unwrap();
                assert_eq!(a, pairwise(&s, &l).unwrap());
                a
            })
            .collect();
        let macro_ = per.iter().sum::<f64>() / per.len() as f64;
        assert!(close(auroc(&sm, Averaging::Macro).unwrap(), macro_));
        let pos: Vec<f64> = valid
            .iter()
            .map(|&c| sm.labels.iter().filter(|r| r[c] == 1).count() as f64)
            .collect();
        let weighted = per.iter().zip(&pos).map(|(a, p)| a * p).sum::<f64>() / pos.iter().sum::<f64>();
        assert!(close(auroc(&sm, Averaging::Weighted).unwrap(), weighted));
        let flat_s: Vec<f64> = sm.scores.concat();
        let flat_l: Vec<u8> = sm.labels.concat();
        assert_eq!(auroc(&sm, Averaging::Micro).ok(), pairwise(&flat_s, &flat_l));
    }
}

#[test]
fn undefined_auroc_is_an_error() {
    let sm = matrix(&[&[0.9, 0.1], &[0.2, 0.3]], &[&[1, 0], &[1, 0]]);
    assert!(matches!(auroc(&sm, Averaging::Macro), Err(Error::Metric(_))));
    let all_zero = matrix(&[&[0.9], &[0.2]], &[&[0], &[0]]);
    assert!(auroc(&all_zero, Averaging::Micro).is_err());
}

#[test]
fn f1_examples() {
    let perfect = matrix(&[&[0.9, 0.1], &[0.2, 0.8]], &[&[1, 0], &[0, 1]]);
    for avg in ALL {
        assert_eq!(f1(&perfect, 0.5, avg).unwrap(), 1.0);
    }
    // predicts nothing on a class that has positives
    let silent = matrix(&[&[0.1, 0.9], &[0.2, 0.1]], &[&[1, 1], &[0, 0]]);
    let c = metrics::confusion(&silent, 0, 0.5);
    assert_eq!((c.tp, c.fp, c.fn_), (0, 0, 1));
    assert_eq!(c.f1(), 0.0);
    assert_eq!(metrics::Confusion::default().f1(), 0.0);
    assert!(f1(&silent, 0.0, Averaging::Micro).is_err());
    assert!(f1(&silent, 1.0, Averaging::Micro).is_err());
}

#[test]
fn hand_computed_f1() {
    // class 0: predictions 1,1,0,0 vs labels 1,0,1,0 -> tp 1 fp 1 fn 1 -> 1/2
    // class 1: predictions 1,1,0,0 vs labels 1,1,0,1 -> tp 2 fp 0 fn 1 -> 4/5
    let sm = matrix(
        &[&[0.9, 0.7], &[0.6, 0.8], &[0.4, 0.1], &[0.2, 0.3]],
        &[&[1, 1], &[0, 1], &[1, 0], &[0, 1]],
    );
    assert!(close(f1(&sm, 0.5, Averaging::Micro).unwrap(), 6.0 / 9.0));
    assert!(close(f1(&sm, 0.5, Averaging::Macro).unwrap(), 0.65));
    assert!(close(f1(&sm, 0.5, Averaging::Weighted).unwrap(), (0.5 * 2.0 + 0.8 * 3.0) / 5.0));
}

#[test]
fn golden_csv_report() {
    let sm = ScoreMatrix::read_csv(&data("scores.csv"), &data("labels.csv")).unwrap();
    assert_eq!(sm.class_names, ["Atelectasis", "Edema", "Hernia"]);
    let r = metrics::report(&sm, DEFAULT_THRESHOLD).unwrap();
    assert_eq!(r.samples, 4);
    assert_eq!(r.excluded_classes, ["Hernia"]);
    // Atelectasis ranks 3 of 4 pairs, Edema all 3
    assert!(close(r.auroc_macro, 0.875));
    assert!(close(r.auroc_weighted, (0.75 * 2.0 + 3.0) / 5.0));
    // micro pools Hernia's false positive: tp 3, fp 2, fn 2
    assert!(close(r.f1_micro, 0.6));
    assert!(close(r.f1_macro, 0.65));
    assert!(close(r.f1_weighted, 0.68));
    let flat_s: Vec<f64> = sm.scores.concat();
    let flat_l: Vec<u8> = sm.labels.concat();
    assert!(close(r.auroc_micro, pairwise(&flat_s, &flat_l).unwrap()));
    let text = r.to_string();
    assert!(text.contains("AUROC") && text.contains("excluded: Hernia"), "{text}");
}

#[test]
fn csv_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "Atelectasis,Edema,Hernia\n1,2,0\n0,1,0\n1,0,0\n0,1,0\n").unwrap();
    assert!(ScoreMatrix::read_csv(&data("scores.csv"), &bad).is_err());
    std::fs::write(&bad, "A,B,C\n1,1,0\n0,1,0\n1,0,0\n0,1,0\n").unwrap();
    assert!(ScoreMatrix::read_csv(&data("scores.csv"), &bad).is_err());
    std::fs::write(&bad, "Atelectasis,Edema,Hernia\n0.1,x,0\n").unwrap();
    assert!(ScoreMatrix::read_csv(&bad, &data("labels.csv")).is_err());
    assert!(matches!(
        ScoreMatrix::read_csv(&dir.path().join("none.csv"), &data("labels.csv")),
        Err(Error::Io(_))
    ));
}

#[test]
fn shape_checks() {
    assert!(ScoreMatrix::unnamed(vec![vec![0.1, 0.2]], vec![vec![1]]).is_err());
    assert!(ScoreMatrix::unnamed(vec![vec![f64::NAN]], vec![vec![1]]).is_err());
    assert!(ScoreMatrix::unnamed(vec![vec![0.1]], vec![vec![2]]).is_err());
    assert!(ScoreMatrix::unnamed(vec![vec![0.1]], vec![]).is_err());
}

fn column_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (4usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(0u8..2, n).prop_filter("both labels", |l| l.contains(&0) && l.contains(&1)),
        )
    })
}

proptest! {
    #[test]
    fn auroc_invariant_under_monotone_maps((s, l) in column_strategy()) {
        let a = auroc_binary(&s, &l).unwrap();
        let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
        prop_assert_eq!(auroc_binary(&t, &l).unwrap(), a);
        prop_assert_eq!(a, pairwise(&s, &l).unwrap());
    }

    #[test]
    fn auroc_of_flipped_scores_is_complement((s, l) in column_strategy()) {
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[0] < w[1]));
        let flipped: Vec<f64> = s.iter().map(|x| 1.0 - x).collect();
        let sum = auroc_binary(&s, &l).unwrap() + auroc_binary(&flipped, &l).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_columns_agree_across_averagings((s, l) in column_strategy(), k in 1usize..5) {
        let scores: Vec<Vec<f64>> = s.iter().map(|&x| vec![x; k]).collect();
        let labels: Vec<Vec<u8>> = l.iter().map(|&y| vec![y; k]).collect();
        let sm = ScoreMatrix::unnamed(scores, labels).unwrap();
        let a = auroc(&sm, Averaging::Macro).unwrap();
        prop_assert!(close(auroc(&sm, Averaging::Micro).unwrap(), a));
        prop_assert!(close(auroc(&sm, Averaging::Weighted).unwrap(), a));
        let f = f1(&sm, 0.5, Averaging::Macro).unwrap();
        prop_assert!(close(f1(&sm, 0.5, Averaging::Micro).unwrap(), f));
        prop_assert!(close(f1(&sm, 0.5, Averaging::Weighted).unwrap(), f));
    }
}
