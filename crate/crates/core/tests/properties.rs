use fewshot_dml::eval::macro_f1;
use fewshot_dml::harness::folds::stratified_quotas;
use fewshot_dml::losses::{
    cce_from_logits, combined_loss, triplet_loss, EmbeddingBatch, LossConfig, LossKind, LossRegistry, Triplet,
};
use fewshot_dml::numeric::{euclidean, softmax, Mat, Rng};
use fewshot_dml::proxy_bank::init_proxies;
use proptest::prelude::*;

const DIM: usize = 4;

/// Six rows, two per class, so mined pairs and triplets are fully determined.
fn batch_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<usize>, Vec<usize>)> {
    (
        prop::collection::vec(-3.0f64..3.0, 6 * DIM),
        Just(vec![0usize, 0, 1, 1, 2, 2]).prop_shuffle(),
        Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
    )
}

fn batch(values: Vec<f64>, labels: Vec<usize>) -> EmbeddingBatch {
    EmbeddingBatch::new(Mat::from_vec(6, DIM, values).unwrap(), labels, 3).unwrap()
}

fn kind_strategy() -> impl Strategy<Value = LossKind> {
    prop::sample::select(LossKind::DML.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_ignore_batch_order(kind in kind_strategy(), (vals, labels, order) in batch_strategy(), seed in any::<u64>()) {
        let cfg = LossConfig::new(kind);
        let loss = LossRegistry::default().build(&cfg).unwrap().unwrap();
        let bank = cfg.proxy_layout().map(|l| init_proxies(3, l.per_class, DIM, &mut Rng::new(seed)).unwrap());
        let b = batch(vals, labels);
        let v = loss.evaluate(&b, bank.as_ref(), &mut Rng::new(seed)).unwrap().value;
        let w = loss.evaluate(&b.permuted(&order).unwrap(), bank.as_ref(), &mut Rng::new(seed)).unwrap().value;
        prop_assert!((v - w).abs() < 1e-10, "{kind:?}: {v} vs {w}");
    }

    #[test]
    fn bounded_below_by_zero(kind in kind_strategy(), (vals, labels, _) in batch_strategy(), seed in any::<u64>()) {
        prop_assume!(kind != LossKind::ProxyNca);
        let cfg = LossConfig::new(kind);
        let loss = LossRegistry::default().build(&cfg).unwrap().unwrap();
        let bank = cfg.proxy_layout().map(|l| init_proxies(3, l.per_class, DIM, &mut Rng::new(seed)).unwrap());
        let out = loss.evaluate(&batch(vals, labels), bank.as_ref(), &mut Rng::new(seed)).unwrap();
        prop_assert!(out.value >= -1e-12);
        prop_assert!(out.is_finite());
    }

    #[test]
    fn cce_nonnegative_and_order_free((vals, labels, order) in batch_strategy()) {
        let b = batch(vals, labels);
        let v = cce_from_logits(b.embeddings(), b.labels()).unwrap().value;
        let p = b.permuted(&order).unwrap();
        let w = cce_from_logits(p.embeddings(), p.labels()).unwrap().value;
        prop_assert!(v >= 0.0);
        prop_assert!((v - w).abs() < 1e-10);
    }

    #[test]
    fn softmax_is_a_distribution(x in prop::collection::vec(-500.0f64..500.0, 1..20)) {
        let p = softmax(&x).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn euclidean_triangle(a in prop::collection::vec(-10.0f64..10.0, DIM),
                          b in prop::collection::vec(-10.0f64..10.0, DIM),
                          c in prop::collection::vec(-10.0f64..10.0, DIM)) {
        let ab = euclidean(&a, &b).unwrap();
        let bc = euclidean(&b, &c).unwrap();
        let ac = euclidean(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn triplet_translation_invariant(vals in prop::collection::vec(-3.0f64..3.0, 3 * DIM),
                                     shift in prop::collection::vec(-50.0f64..50.0, DIM),
                                     margin in 0.0f64..2.0) {
        let rows: Vec<&[f64]> = vals.chunks(DIM).collect();
        let moved: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&shift).map(|(x, s)| x + s).collect()).collect();
        let t = [Triplet::new(0, 1, 2)];
        let a = triplet_loss(&EmbeddingBatch::from_rows(&rows, &[0, 0, 1], 2).unwrap(), &t, margin).unwrap().value;
        let b = triplet_loss(&EmbeddingBatch::from_rows(&moved, &[0, 0, 1], 2).unwrap(), &t, margin).unwrap().value;
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn combined_is_affine_in_beta(kind in kind_strategy(), (vals, labels, _) in batch_strategy(), seed in any::<u64>()) {
        let cfg = LossConfig::new(kind);
        let loss = LossRegistry::default().build(&cfg).unwrap().unwrap();
        let bank = cfg.proxy_layout().map(|l| init_proxies(3, l.per_class, DIM, &mut Rng::new(seed)).unwrap());
        let b = batch(vals, labels);
        let dml = loss.evaluate(&b, bank.as_ref(), &mut Rng::new(seed)).unwrap();
        let cce = cce_from_logits(b.embeddings(), b.labels()).unwrap();
        let at = |beta: f64| combined_loss(&cce, &dml, beta).unwrap().value;
        let (l0, l1) = (at(0.0), at(1.0));
        for beta in [0.1, 0.25, 0.5, 0.9] {
            let expected = beta * l1 + (1.0 - beta) * l0;
            prop_assert!((at(beta) - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn macro_f1_bounded_and_joint_order_free(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60), seed in any::<u64>()) {
        let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let r = macro_f1(&preds, &labels, 4).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.macro_f1));
        let mut shuffled = pairs.clone();
        Rng::new(seed).shuffle(&mut shuffled);
        let (p2, l2): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
        prop_assert_eq!(macro_f1(&p2, &l2, 4).unwrap().macro_f1, r.macro_f1);
    }

    #[test]
    fn quotas_fill_the_shot(counts in prop::collection::vec(0usize..50, 2..6), frac in 0.0f64..1.0) {
        let n: usize = counts.iter().sum();
        let total = (frac * n as f64) as usize;
        let q = stratified_quotas(&counts, total);
        prop_assert_eq!(q.iter().sum::<usize>(), total);
        prop_assert!(q.iter().zip(&counts).all(|(a, b)| a <= b));
        if total >= counts.iter().filter(|&&c| c > 0).count() {
            prop_assert!(q.iter().zip(&counts).all(|(&a, &b)| b == 0 || a >= 1));
        }
    }
}
