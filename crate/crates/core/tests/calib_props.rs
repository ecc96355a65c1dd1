mod common;

use maca_core::calib::{
    ingest_corpus, read_tensor_file, write_tensor_file, CorpusOptions, LengthSchedule, SyntheticGenerator, Tensor,
    TensorData, TokenCorpus, ToyFeatureMap,
};
use maca_core::metrics::calibrate;
use maca_core::{AggregationMode, SyntheticSpec};
use proptest::prelude::*;

#[test]
fn multi_lengths_are_uniform_over_seeds() {
    let set = vec![16, 32, 64, 128, 256];
    let mut counts = [0usize; 5];
    for seed in 0..1000u64 {
        let drawn = LengthSchedule::multi(set.clone(), 4096, seed).draw().unwrap();
        for &l in &drawn.lengths[..drawn.untruncated] {
            counts[set.iter().position(|&s| s == l).unwrap()] += 1;
        }
    }
    let n: usize = counts.iter().sum();
    let expected = n as f64 / 5.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 4 degrees of freedom, p = 0.001.
    assert!(chi2 < 18.467, "chi2 {chi2}, counts {counts:?}");
}

#[test]
fn fixed_schedule_layout() {
    let d = LengthSchedule::fixed(100, 350, 1).draw().unwrap();
    assert_eq!(d.lengths, vec![100, 100, 100, 50]);
    assert_eq!(d.truncated(), Some(50));
    let d = LengthSchedule::fixed(100, 300, 1).draw().unwrap();
    assert_eq!(d.lengths, vec![100, 100, 100]);
    assert_eq!(d.truncated(), None);
}

#[test]
fn synthetic_regimes_separate() {
    let spec = SyntheticSpec::default();
    let mut g = SyntheticGenerator::new(spec.clone(), 3).unwrap();
    let short = g.samples(&[16; 64]).unwrap();
    let long = g.samples(&[512; 4]).unwrap();
    let hs = calibrate(AggregationMode::SampleNormalized, spec.dim, &short)
        .unwrap()
        .diagonal()
        .unwrap();
    let hl = calibrate(AggregationMode::SampleNormalized, spec.dim, &long)
        .unwrap()
        .diagonal()
        .unwrap();
    for c in spec.short_channels.clone() {
        assert!(hs[c] / hl[c] >= 50.0, "short channel {c}: {} vs {}", hs[c], hl[c]);
    }
    for c in spec.long_channels.clone() {
        assert!(hl[c] / hs[c] >= 50.0, "long channel {c}: {} vs {}", hl[c], hs[c]);
    }
}

#[test]
fn corpus_ingest_follows_schedule() {
    let text: Vec<u8> = (0..20_000u32).map(|i| (i * 31 % 97) as u8).collect();
    let corpus = TokenCorpus::from_text(&text);
    let schedule = LengthSchedule::multi(vec![32, 64, 128], 4000, 5);
    let fmap = ToyFeatureMap::new(12, 9);
    let samples: Vec<_> = ingest_corpus(&corpus, &schedule, &fmap, CorpusOptions::default())
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap();
    let lengths: Vec<usize> = samples.iter().map(|s| s.len()).collect();
    assert_eq!(lengths, schedule.draw().unwrap().lengths);
    assert!(samples.iter().all(|s| s.dim() == 12));
    let small = TokenCorpus::from_text(&text[..100]);
    assert!(ingest_corpus(&small, &schedule, &fmap, CorpusOptions::default()).is_err());
}

fn dims_strategy() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(0u64..5, 0..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn budget_is_exact(
        set in prop::collection::vec(1usize..300, 1..6),
        extra in 0usize..5000,
        seed in any::<u64>(),
    ) {
        let budget = set.iter().copied().max().unwrap() + extra;
        let d = LengthSchedule::multi(set.clone(), budget, seed).draw().unwrap();
        prop_assert_eq!(d.total(), budget);
        prop_assert!(d.lengths[..d.untruncated].iter().all(|l| set.contains(l)));
        prop_assert!(d.lengths.len() - d.untruncated <= 1);
        prop_assert_eq!(&d, &LengthSchedule::multi(set, budget, seed).draw().unwrap());
    }

    #[test]
    fn tensor_round_trip_f64(dims in dims_strategy(), seed in any::<u64>()) {
        let n: u64 = dims.iter().product();
        let data: Vec<f64> = (0..n).map(|i| f64::from_bits(maca_core::rng::mix64(seed ^ i) >> 2)).collect();
        let t = Tensor::new(dims.clone(), TensorData::F64(data)).unwrap();
        let bytes = t.encode();
        prop_assert_eq!(Tensor::decode(&bytes).unwrap(), t.clone());
        prop_assert_eq!(Tensor::decode(&bytes).unwrap().encode(), bytes);
    }

    #[test]
    fn tensor_round_trip_f32_i32(dims in dims_strategy(), seed in any::<u64>()) {
        let n: u64 = dims.iter().product();
        let f: Vec<f32> = (0..n).map(|i| (maca_core::rng::mix64(seed ^ i) % 1000) as f32 * 0.25 - 100.0).collect();
        let q: Vec<i32> = (0..n).map(|i| maca_core::rng::mix64(seed.wrapping_add(i)) as i32).collect();
        for t in [
            Tensor::new(dims.clone(), TensorData::F32(f)).unwrap(),
            Tensor::new(dims.clone(), TensorData::I32(q)).unwrap(),
        ] {
            prop_assert_eq!(Tensor::decode(&t.encode()).unwrap(), t);
        }
    }

    #[test]
    fn token_round_trip(tokens in prop::collection::vec(any::<u32>(), 0..200)) {
        let c = TokenCorpus::new(tokens);
        let bytes = c.encode();
        prop_assert_eq!(TokenCorpus::decode(&bytes).unwrap(), c);
    }
}

#[test]
fn tensor_file_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.tensor");
    for t in [
        Tensor::new(vec![], TensorData::F64(vec![2.5])).unwrap(),
        Tensor::new(vec![0, 3], TensorData::I32(vec![])).unwrap(),
        Tensor::new(vec![2, 2], TensorData::F32(vec![1.0, -0.0, f32::MIN_POSITIVE, 7.5])).unwrap(),
    ] {
        write_tensor_file(&path, &t).unwrap();
        let back = read_tensor_file(&path).unwrap();
        assert_eq!(back.encode(), t.encode());
    }
}
