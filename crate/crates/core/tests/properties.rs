use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zslforge::dataio::{generate_synthetic, SynthConfig};
use zslforge::diffcore::{Tape, Tensor};
use zslforge::losses::{adversarial_d_loss, sr_loss, SimilarityFn, SrBatch, SrTerm};
use zslforge::networks::{init_params, NetConfig, Parameters};
use zslforge::trainer::Checkpoint;
use zslforge::zsleval::{exact_gamma_grid, seen_unseen_curve, ScoredSet};

const SEEN: [usize; 2] = [0, 1];
const UNSEEN: [usize; 2] = [2, 3];
const LABELS: [usize; 4] = [0, 1, 2, 3];

fn auc(scores: &Tensor, truth: &[usize]) -> f64 {
    let set = ScoredSet {
        scores,
        label_space: &LABELS,
        truth,
        seen: &SEEN,
        unseen: &UNSEEN,
    };
    seen_unseen_curve(&set, &exact_gamma_grid(&set).unwrap(), 1).unwrap().auc
}

fn scored_instance() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (
        prop::collection::vec(-2.0f64..2.0, 32),
        prop::collection::vec(0usize..2, 4),
        prop::collection::vec(2usize..4, 4),
    )
        .prop_map(|(scores, seen_truth, unseen_truth)| {
            let truth = seen_truth.into_iter().chain(unseen_truth).collect();
            (scores, truth)
        })
}

fn permuted(t: &Tensor, perm: &[usize]) -> Tensor {
    t.select_rows(perm)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_is_bounded_and_grows_with_correct_scores(
        (scores, truth) in scored_instance(),
        sample in 0usize..8,
        bump in 0.0f64..3.0,
    ) {
        let base = Tensor::new(8, 4, scores).unwrap();
        let a = auc(&base, &truth);
        prop_assert!((0.0..=1.0).contains(&a));
        let mut raised = base.clone();
        let c = truth[sample];
        raised.set(sample, c, raised.get(sample, c) + bump);
        prop_assert!(auc(&raised, &truth) >= a - 1e-12);
    }

    #[test]
    fn cosine_is_symmetric_and_bounded(
        a in prop::collection::vec(-5.0f64..5.0, 6),
        b in prop::collection::vec(-5.0f64..5.0, 6),
    ) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row_vector(&a));
        let y = tape.constant(Tensor::row_vector(&b));
        let xy = tape.cosine_sim(x, y).unwrap();
        let yx = tape.cosine_sim(y, x).unwrap();
        let v = tape.value(xy).unwrap().item().unwrap();
        prop_assert_eq!(v, tape.value(yx).unwrap().item().unwrap());
        prop_assert!((-1.0..=1.0).contains(&v));
    }

    #[test]
    fn losses_ignore_batch_row_order(seed in 0u64..1000, perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
        let cfg = NetConfig::new(3, 2, 4, 3).with_hidden(vec![5], vec![5], vec![4, 4]);
        let mut params = init_params(&cfg, seed).unwrap();
        // keeps every regressor output off the zero vector
        params.regressor.layers[2].bias.data_mut().fill(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats = Tensor::from_fn(5, 4, |_, _| rng.random_range(0.0..1.0));
        let reps = Tensor::from_fn(5, 3, |_, _| rng.random_range(0.05..1.0));
        let logits = Tensor::from_fn(5, 1, |_, _| rng.random_range(-1.0..1.0));
        let fake = Tensor::from_fn(5, 1, |_, _| rng.random_range(-1.0..1.0));

        let value = |f: &Tensor, r: &Tensor, l: &Tensor, k: &Tensor| {
            let mut tape = Tape::new();
            let s = params.regressor.bind(&mut tape, false);
            let term = SrTerm { features: tape.constant(f.clone()), reps: tape.constant(r.clone()) };
            let batch = SrBatch { real: Some(term), ..SrBatch::default() };
            let sr = sr_loss(&mut tape, &batch, &s, SimilarityFn::Cosine).unwrap();
            let (lv, kv) = (tape.constant(l.clone()), tape.constant(k.clone()));
            let adv = adversarial_d_loss(&mut tape, lv, kv).unwrap();
            (tape.value(sr).unwrap().item().unwrap(), tape.value(adv).unwrap().item().unwrap())
        };
        let (sr0, adv0) = value(&feats, &reps, &logits, &fake);
        let (sr1, adv1) = value(
            &permuted(&feats, &perm),
            &permuted(&reps, &perm),
            &permuted(&logits, &perm),
            &permuted(&fake, &perm),
        );
        prop_assert!((sr0 - sr1).abs() <= 1e-12);
        prop_assert!((adv0 - adv1).abs() <= 1e-12);
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(
        seed in 0u64..1000,
        values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 8),
    ) {
        let cfg = NetConfig::new(2, 2, 3, 2).with_hidden(vec![3], vec![3], vec![2, 2]);
        let mut params = init_params(&cfg, seed).unwrap();
        for (t, v) in params.generator.tensors_mut().into_iter().zip(&values) {
            t.data_mut()[0] = *v;
        }
        let ckpt = Checkpoint {
            iteration: seed as usize,
            config_hash: "h".into(),
            noise_dim: 2,
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let text = ckpt.to_text().unwrap();
        let back = Checkpoint::parse(std::path::Path::new("mem"), &text).unwrap();
        prop_assert_eq!(&back, &ckpt);
        for (a, b) in back.params.named_tensors().iter().zip(ckpt.params.named_tensors()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a.1), bits(b.1));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthetic_splits_hold_their_invariants(
        seed in 0u64..10_000,
        k in 5usize..14,
        unseen in 1usize..3,
        per_class in 5usize..12,
    ) {
        let cfg = SynthConfig { k_classes: k, n_unseen: unseen, samples_per_class: per_class, seed, ..SynthConfig::default() };
        let ds = generate_synthetic(&cfg).unwrap();
        let sp = ds.splits();
        prop_assert!(sp.seen.iter().all(|c| !sp.unseen.contains(c)));
        prop_assert_eq!(sp.seen.len() + sp.unseen.len(), k);
        let train_classes = sp.train_classes();
        prop_assert!(sp.train.iter().all(|&i| train_classes.contains(&ds.label(i))));
        prop_assert!(sp.val.iter().all(|i| !sp.test.contains(i)));
        prop_assert!(sp.train.iter().all(|i| !sp.test.contains(i) && !sp.val.contains(i)));
        prop_assert!(sp.test.iter().any(|&i| sp.unseen.contains(&ds.label(i))));
        prop_assert!(sp.test.iter().any(|&i| sp.seen.contains(&ds.label(i))));
        prop_assert!(sp.val_pseudo_unseen.iter().all(|c| sp.seen.contains(c)));
        prop_assert!(!sp.val_pseudo_unseen.is_empty());
    }
}
