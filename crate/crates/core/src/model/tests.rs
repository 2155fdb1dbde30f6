use super::*;
use crate::classifier::loss_and_grad;
use crate::testutil::{layout, random_batch, rng};
use crate::verify::{composite_check, tiny_model_config, GRAD_TOLERANCE};
use std::collections::BTreeSet;

fn names(m: &Model<f32>) -> BTreeSet<String> {
    m.parameter_inventory().into_iter().map(|(n, _)| n).collect()
}

fn diff(a: &BTreeSet<String>, b: &BTreeSet<String>) -> (Vec<String>, Vec<String>) {
    (
        a.difference(b).cloned().collect(),
        b.difference(a).cloned().collect(),
    )
}

#[test]
fn full_model_gradients_ipnn() {
    let cfg = tiny_model_config(ClassifierKind::Ipnn, Variant::Full, false);
    for seed in 0..3 {
        let r = composite_check(&cfg, seed).unwrap();
        assert!(r.max_rel_error < GRAD_TOLERANCE, "{r:?}");
        assert!(r.checked > 100);
    }
}

#[test]
fn every_variant_and_classifier_has_exact_gradients() {
    for variant in Variant::ALL {
        for kind in ClassifierKind::ALL {
            for bn in [false, true] {
                let cfg = tiny_model_config(kind, variant, bn);
                let r = composite_check(&cfg, 11).unwrap();
                assert!(r.max_rel_error < GRAD_TOLERANCE, "{r:?}");
            }
        }
    }
}

#[test]
fn variant_inventories_differ_only_structurally() {
    let lay = layout(&[10; 8]);
    let base = ModelConfig::desk_default();
    let build = |v: Variant| Model::<f32>::new(&base.with_variant(v), &lay, 1).unwrap();
    let full = names(&build(Variant::Full));

    let (gone, added) = diff(&full, &names(&build(Variant::RemoveNew)));
    assert!(added.is_empty());
    assert!(gone.iter().all(|n| n == GEN_TABLE || n.starts_with("featgen.")));
    assert!(gone.contains(&GEN_TABLE.to_string()));
    assert!(gone.iter().any(|n| n.ends_with("conv.weight")));

    let (gone, added) = diff(&full, &names(&build(Variant::RemoveRaw)));
    assert_eq!(gone, vec![CLF_TABLE.to_string()]);
    assert!(added.is_empty());

    let (gone, added) = diff(&full, &names(&build(Variant::NoRecombination)));
    assert!(added.is_empty());
    assert_eq!(gone.len(), 4);
    assert!(gone.iter().all(|n| n.contains(".recomb.")));

    let (gone, added) = diff(&full, &names(&build(Variant::MlpFeatgen)));
    assert!(gone.iter().all(|n| n.contains(".conv.") || n.contains(".recomb.")));
    assert!(added.iter().all(|n| n.contains(".mlp.")));
    assert_eq!(added.len(), 8);
}

#[test]
fn remove_new_is_plain_ipnn() {
    let lay = layout(&[10; 8]);
    let base = ModelConfig::desk_default();
    let m = Model::<f32>::new(&base.with_variant(Variant::RemoveNew), &lay, 1).unwrap();
    let want: BTreeSet<String> = [
        CLF_TABLE,
        "classifier.hidden1.weight",
        "classifier.hidden1.bias",
        "classifier.hidden2.weight",
        "classifier.hidden2.bias",
        "classifier.output.weight",
        "classifier.output.bias",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    assert_eq!(names(&m), want);
    let inv = m.parameter_inventory();
    // IPNN over 8 raw fields only: 28 pairs + 64 flattened entries
    assert_eq!(inv[1].1, vec![28 + 64, 64]);
}

#[test]
fn generated_counts_per_variant() {
    let lay = layout(&[10; 8]);
    let base = ModelConfig::desk_default();
    for v in [Variant::Full, Variant::MlpFeatgen, Variant::NoRecombination, Variant::RemoveRaw] {
        let m = Model::<f32>::new(&base.with_variant(v), &lay, 1).unwrap();
        assert_eq!(m.n_generated(), 18, "{v:?}");
    }
    let mut bad = base.with_variant(Variant::NoRecombination);
    bad.feature_generation.new_maps = vec![2, 2];
    assert!(Model::<f32>::new(&bad, &lay, 1).is_err());
}

#[test]
fn shared_tensors_start_identical_across_variants() {
    let lay = layout(&[10; 8]);
    let base = ModelConfig::desk_default();
    let full = Model::<f32>::new(&base, &lay, 3).unwrap();
    let pooled = Model::<f32>::new(&base.with_variant(Variant::NoRecombination), &lay, 3).unwrap();
    for name in [GEN_TABLE, CLF_TABLE, "featgen.round1.conv.weight", "featgen.round2.conv.weight"] {
        let a = full.params().get(full.params().find(name).unwrap());
        let b = pooled.params().get(pooled.params().find(name).unwrap());
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let lay = layout(&[5, 6, 7, 4]);
    let mut r = rng(4);
    let batch = random_batch(&[5, 6, 7, 4], 16, &mut r);
    let cfg = tiny_model_config(ClassifierKind::Ipnn, Variant::Full, false);
    let m = Model::<f32>::new(&cfg, &lay, 2).unwrap();
    let a = m.forward(&batch, BnMode::Infer, None).unwrap();
    let b = m.forward(&batch, BnMode::Infer, None).unwrap();
    assert_eq!(a.logits, b.logits);
    assert!(a.probs.iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn classifier_only_gradients_leave_generation_tables_alone() {
    let lay = layout(&[5, 6, 7, 4]);
    let mut r = rng(5);
    let batch = random_batch(&[5, 6, 7, 4], 8, &mut r);
    let cfg = tiny_model_config(ClassifierKind::Ipnn, Variant::RemoveNew, false);
    let m = Model::<f64>::new(&cfg, &lay, 2).unwrap();
    let pass = m.forward(&batch, BnMode::Train, None).unwrap();
    let (_, dl, _) = loss_and_grad(&pass.probs, &batch.labels).unwrap();
    let g = m.backward(&batch, &pass, &dl).unwrap();
    assert!(g.find(GEN_TABLE).is_none());
    // Untouched embedding rows get exactly zero gradient.
    let table = g.get(g.find(CLF_TABLE).unwrap());
    let offsets = lay.offsets();
    for f in 0..4 {
        for local in 0..lay.cardinalities[f] {
            let used = (0..8).any(|b| batch.values(b, f).any(|v| v as usize == local));
            if !used {
                assert!(table.row(offsets[f] + local).iter().all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn bn_statistics_move_only_on_commit() {
    let lay = layout(&[5, 6, 7, 4]);
    let mut r = rng(6);
    let batch = random_batch(&[5, 6, 7, 4], 8, &mut r);
    let cfg = tiny_model_config(ClassifierKind::Ipnn, Variant::Full, true);
    let mut m = Model::<f64>::new(&cfg, &lay, 2).unwrap();
    let before = m.state().clone();
    let pass = m.forward(&batch, BnMode::Train, None).unwrap();
    assert_eq!(m.state(), &before);
    m.commit_bn(&pass);
    assert_ne!(m.state(), &before);
    // Infer mode never needs a backward cache, and backward refuses one without it.
    let infer = m.forward(&batch, BnMode::Infer, None).unwrap();
    let dl = vec![0.1; 8];
    assert!(m.backward(&batch, &infer, &dl).is_err());
}
