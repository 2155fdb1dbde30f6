//! Cross-module properties over randomly drawn configurations.

use fgcnn::classifier::{ClassifierConfig, ClassifierKind};
use fgcnn::data::{generate_synthetic, Batch, SchemaLayout, SyntheticSpec};
use fgcnn::embedding::{assemble_from_weights, backward_embedding};
use fgcnn::featgen::FeatureGenConfig;
use fgcnn::model::{Model, ModelConfig, Variant};
use fgcnn::tensor::Tensor;
use fgcnn::train::checkpoint::{decode_checkpoint, encode_checkpoint};
use fgcnn::train::complexity_report;
use fgcnn::train::metrics::auc;
use fgcnn::train::predict;
use proptest::prelude::*;

fn layout(cards: &[usize]) -> SchemaLayout {
    SchemaLayout {
        field_names: (0..cards.len()).map(|i| format!("f{i}")).collect(),
        cardinalities: cards.to_vec(),
        digest: "test".into(),
    }
}

fn uniform_table(rows: usize, k: usize, seed: u64) -> Tensor<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(&[rows, k], (0..rows * k).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Divisible feature-generation configs: `n_f = h_p^n_c · c`.
fn divisible_config() -> impl Strategy<Value = (ModelConfig, Vec<usize>)> {
    (1usize..=3, 2usize..=3, 1usize..=3, 1usize..=4, any::<bool>(), 0usize..4, any::<bool>())
        .prop_flat_map(|(n_c, h_p, c, k, bn, kind, two_hidden)| {
            let n_f = h_p.pow(n_c as u32) * c;
            (
                Just((h_p, k, bn, kind, two_hidden)),
                prop::collection::vec(1usize..=n_f.min(5), n_c),
                prop::collection::vec(1usize..=4, n_c),
                prop::collection::vec(1usize..=3, n_c),
                prop::collection::vec(2usize..=5, n_f),
            )
        })
        .prop_map(|((h_p, k, bn, kind, two_hidden), heights, maps, new, cards)| {
            let fg = FeatureGenConfig {
                kernel_heights: heights,
                feature_maps: maps,
                new_maps: new,
                pool_height: h_p,
                batch_norm: bn,
            };
            let hidden = if two_hidden { vec![7, 3] } else { vec![5] };
            let mut clf = ClassifierConfig::new(ClassifierKind::ALL[kind], hidden);
            clf.batch_norm = bn;
            (
                ModelConfig {
                    embedding_size: k,
                    variant: Variant::Full,
                    feature_generation: fg,
                    classifier: clf,
                },
                cards,
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn formula_counts_equal_allocated_counts((cfg, cards) in divisible_config()) {
        let lay = layout(&cards);
        let r = complexity_report(&cfg, &lay).unwrap();
        prop_assert!(r.divisible);
        prop_assert!(r.consistent(), "{}", r);
        let t_f: usize = cards.iter().sum();
        prop_assert_eq!(r.s0, 2 * t_f * cfg.embedding_size);
        let fg = &cfg.feature_generation;
        let n_f = cards.len();
        let n: usize = (0..fg.n_rounds())
            .map(|i| n_f / fg.pool_height.pow(i as u32 + 1) * fg.new_maps[i])
            .sum();
        prop_assert_eq!(r.t, n_f + n);
        if cfg.classifier.kind == ClassifierKind::Ipnn {
            let t = r.t;
            let h1 = cfg.classifier.hidden_sizes[0];
            let first = r.components.iter().find(|c| c.component == "classifier.hidden1").unwrap();
            let bias_or_bn = if cfg.classifier.batch_norm { 2 * h1 } else { h1 };
            prop_assert_eq!(first.enumerated, (t * (t - 1) / 2 + t * cfg.embedding_size) * h1 + bias_or_bn);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_identity_on_predictions(seed in 0u64..1000, variant in 0usize..5) {
        let spec = SyntheticSpec::planted(6, 3, (0, 3), 2.0, 0.0, 1, seed).unwrap();
        let data = generate_synthetic(&spec, 40).unwrap();
        let mut cfg = ModelConfig::desk_default().with_variant(Variant::ALL[variant]);
        cfg.embedding_size = 3;
        cfg.classifier.hidden_sizes = vec![6];
        let m = Model::<f32>::new(&cfg, &data.schema.layout(), seed).unwrap();
        let bytes = encode_checkpoint(&m, None).unwrap();
        let back = decode_checkpoint::<f32>(&bytes, Some(&data.schema.digest())).unwrap();
        let a = predict(&m, &data.instances, 16).unwrap();
        let b = predict(&back.model, &data.instances, 16).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn assembly_is_linear_and_backward_is_its_adjoint(
        cards in prop::collection::vec(1usize..5, 1..5),
        k in 1usize..4,
        alpha in -2.0f64..2.0,
        seed in 0u64..500,
    ) {
        let lay = layout(&cards);
        let rows: usize = cards.iter().sum();
        let spec_cards = cards.clone();
        let insts: Vec<fgcnn::data::Instance> = (0..4)
            .map(|b| fgcnn::data::Instance {
                fields: spec_cards.iter().enumerate().map(|(f, &c)| {
                    let v = ((b * 7 + f * 3 + seed as usize) % c) as u32;
                    if f == 0 && c > 1 { vec![v, (v + 1) % c as u32] } else { vec![v] }
                }).collect(),
                label: (b % 2) as u8,
            })
            .collect();
        let batch = Batch::from_instances(&insts.iter().collect::<Vec<_>>()).unwrap();
        let t1 = uniform_table(rows, k, seed);
        let t2 = uniform_table(rows, k, seed + 1);
        let mut mix = t1.clone();
        mix.scale(alpha);
        mix.add_assign(&t2).unwrap();
        let lhs = assemble_from_weights(&batch, &mix, &lay).unwrap();
        let mut rhs = assemble_from_weights(&batch, &t1, &lay).unwrap();
        rhs.scale(alpha);
        rhs.add_assign(&assemble_from_weights(&batch, &t2, &lay).unwrap()).unwrap();
        for (a, b) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let g = uniform_table(4 * cards.len(), k, seed + 2).reshape(&[4, cards.len(), k]).unwrap();
        let back = backward_embedding(&g, &batch, &lay).unwrap().to_dense(rows).unwrap();
        let lhs = g.dot(&assemble_from_weights(&batch, &t1, &lay).unwrap());
        prop_assert!((lhs - back.dot(&t1)).abs() < 1e-10);
    }

    #[test]
    fn auc_ignores_strictly_increasing_transforms(
        data in prop::collection::vec((-3.0f64..3.0, 0u8..2), 2..100),
    ) {
        let (scores, labels): (Vec<f64>, Vec<u8>) = data.into_iter().unzip();
        let squashed: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + s).collect();
        prop_assert_eq!(auc(&scores, &labels), auc(&squashed, &labels));
    }
}
