use std::collections::{BTreeMap, HashSet};

use fbpick::gather::{
    decode_gather, encode_gather, load_gather, make_split, save_gather, Gather, Polarity, Regime,
    RegimeKind, FINETUNE_TRAIN_COUNT,
};
use ndarray::Array2;
use proptest::prelude::*;

fn arb_gather(max_t: usize, max_n: usize) -> impl Strategy<Value = Gather> {
    (1..=max_t, 1..=max_n).prop_flat_map(|(t, n)| {
        (
            prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), t * n),
            0.01f64..10.0,
            prop::collection::vec(0.0f64..1e4, n),
            prop::collection::vec(-1i32..t as i32, n),
            any::<bool>(),
        )
            .prop_map(move |(amps, dt, offsets, labels, trough)| {
                let pol = if trough { Polarity::Trough } else { Polarity::Peak };
                Gather::new(Array2::from_shape_vec((t, n), amps).unwrap(), dt, offsets, labels, pol, "")
                    .unwrap()
            })
    })
}

proptest! {
    #[test]
    fn bytes_round_trip(g in arb_gather(40, 12)) {
        let bytes = encode_gather(&g);
        let back = decode_gather(&bytes).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(encode_gather(&back), bytes);
    }
}

#[test]
fn file_round_trip_wide_and_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.fbg");
    let zero = Gather::new(Array2::zeros((8, 3)), 2.0, vec![0.0; 3], vec![-1; 3], Polarity::Peak, "")
        .unwrap();
    save_gather(&zero, &path).unwrap();
    assert_eq!(load_gather(&path).unwrap(), zero);

    let (t, n) = (16, 1024);
    let amps = Array2::from_shape_fn((t, n), |(i, j)| ((i * 31 + j * 17) % 97) as f32 * 0.37 - 11.0);
    let offsets = (0..n).map(|j| j as f64 * 12.5).collect();
    let labels = (0..n).map(|j| (j % (t + 1)) as i32 - 1).collect();
    let wide = Gather::new(amps, 1.0, offsets, labels, Polarity::Trough, "").unwrap();
    save_gather(&wide, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let back = load_gather(&path).unwrap();
    assert_eq!(back, wide);
    save_gather(&back, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}

fn corpus(sizes: &[(&str, usize)]) -> BTreeMap<String, Vec<String>> {
    sizes
        .iter()
        .map(|(id, n)| (id.to_string(), (0..*n).map(|k| format!("{id}/{k:04}.fbg")).collect()))
        .collect()
}

fn assert_disjoint(parts: [&Vec<String>; 3]) {
    let mut seen = HashSet::new();
    for id in parts.iter().flat_map(|p| p.iter()) {
        assert!(seen.insert(id.clone()), "{id} repeated");
    }
}

#[test]
fn single_survey_sizes_and_determinism() {
    let c = corpus(&[("H", 10)]);
    let r = Regime::SingleSurvey { survey: "H".into() };
    let s = make_split(&c, &r, 7).unwrap();
    assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (6, 2, 2));
    assert_eq!(s.regime, RegimeKind::SingleSurvey);
    assert_eq!(make_split(&c, &r, 7).unwrap(), s);
    assert_disjoint([&s.train, &s.validation, &s.test]);

    let c = corpus(&[("H", 37)]);
    let a = make_split(&c, &r, 1).unwrap();
    let b = make_split(&c, &r, 2).unwrap();
    assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (22, 7, 8));
    assert_eq!((b.train.len(), b.validation.len(), b.test.len()), (22, 7, 8));
    assert_ne!(a.train, b.train);

    let err = make_split(&corpus(&[("H", 4)]), &r, 0).unwrap_err().to_string();
    assert!(err.contains("at least 5"), "{err}");
}

#[test]
fn cross_survey_uses_whole_surveys() {
    let c = corpus(&[("B", 3), ("L", 4), ("S", 2), ("H", 5)]);
    let r = Regime::CrossSurvey { train: vec!["B".into(), "L".into()], validation: "S".into(), test: "H".into() };
    let s = make_split(&c, &r, 0).unwrap();
    let mut want: Vec<String> = c["B"].iter().chain(&c["L"]).cloned().collect();
    let mut got = s.train.clone();
    want.sort();
    got.sort();
    assert_eq!(got, want);
    assert_eq!(s.validation, c["S"]);
    assert_eq!(s.test, c["H"]);

    let same = Regime::CrossSurvey { train: vec!["B".into()], validation: "B".into(), test: "H".into() };
    assert!(make_split(&c, &same, 0).is_err());
    let missing = Regime::CrossSurvey { train: vec!["X".into()], validation: "S".into(), test: "H".into() };
    assert!(make_split(&c, &missing, 0).is_err());
}

#[test]
fn pretraining_and_finetuning() {
    let c = corpus(&[("B", 10), ("L", 20), ("S", 5), ("H", 200)]);
    let p = make_split(&c, &Regime::Pretraining { sources: vec!["B".into(), "L".into(), "S".into()] }, 3)
        .unwrap();
    assert_eq!(p.train.len(), 6 + 12 + 3);
    assert_eq!(p.validation.len(), 2 + 4 + 1);
    assert!(p.test.is_empty());
    assert!(p.train.iter().chain(&p.validation).all(|g| !g.starts_with("H/")));

    let r = Regime::Finetuning { target: "H".into() };
    let f = make_split(&c, &r, 3).unwrap();
    assert_eq!(f.train.len(), FINETUNE_TRAIN_COUNT);
    assert_eq!((f.validation.len(), f.test.len()), (40, 40));
    assert_eq!(f.regime, RegimeKind::PretrainFinetune);
    assert_disjoint([&f.train, &f.validation, &f.test]);
    // The 50 come from the same 60% pool the single-survey split would use.
    let full = make_split(&c, &Regime::SingleSurvey { survey: "H".into() }, 3).unwrap();
    assert!(f.train.iter().all(|g| full.train.contains(g)));
    assert_eq!(f.test, full.test);

    let err = make_split(&corpus(&[("H", 83)]), &r, 0).unwrap_err().to_string();
    assert!(err.contains("84"), "{err}");
    assert!(make_split(&corpus(&[("H", 84)]), &r, 0).is_ok());
}

proptest! {
    #[test]
    fn splits_are_disjoint_and_sized(n in 5usize..300, seed in any::<u64>()) {
        let c = corpus(&[("H", n)]);
        let s = make_split(&c, &Regime::SingleSurvey { survey: "H".into() }, seed).unwrap();
        prop_assert_eq!(s.train.len(), n * 6 / 10);
        prop_assert_eq!(s.validation.len(), n * 2 / 10);
        prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), n);
        let all: HashSet<_> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
        prop_assert_eq!(all.len(), n);
    }
}
