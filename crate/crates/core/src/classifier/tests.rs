use super::*;
use crate::nn::gradcheck::{grad_check, GradCheckOptions, Probe};
use crate::testutil::{layout, random, random_batch, rng};
use proptest::prelude::*;
use rand::Rng;

struct Rig {
    clf: Classifier,
    params: TensorStore<f64>,
    state: TensorStore<f64>,
    layout: SchemaLayout,
    batch: Batch,
    e: Tensor<f64>,
}

fn rig(config: &ClassifierConfig, t: usize, k: usize, bsz: usize, seed: u64) -> Rig {
    let cards = [3, 4, 2];
    let lay = layout(&cards);
    let mut params = TensorStore::new();
    let mut state = TensorStore::new();
    let clf = Classifier::new(config, t, k, lay.total_features(), &mut params, &mut state, seed)
        .unwrap();
    let mut r = rng(seed + 1);
    for p in params.tensors_mut() {
        for v in p.data_mut() {
            *v += r.gen_range(-0.5..0.5);
        }
    }
    let batch = random_batch(&cards, bsz, &mut r);
    let e = random(&[bsz, t, k], &mut r);
    Rig {
        clf,
        params,
        state,
        layout: lay,
        batch,
        e,
    }
}

impl Rig {
    fn logits(&self, params: &TensorStore<f64>, e: &Tensor<f64>) -> (Vec<f64>, ClassifierCache<f64>) {
        self.clf
            .forward(params, &self.state, e, &self.batch, &self.layout, BnMode::Train, None)
            .unwrap()
    }

    fn get(&self, name: &str) -> &Tensor<f64> {
        self.params.get(self.params.find(name).unwrap())
    }
}

fn pair_oracle(e: &Tensor<f64>, b: usize) -> Vec<f64> {
    let (t, k) = (e.dim(1), e.dim(2));
    let at = |i: usize, q: usize| e.data()[(b * t + i) * k + q];
    let mut out = Vec::new();
    for i in 0..t {
        for j in 0..t {
            if i < j {
                out.push((0..k).map(|q| at(i, q) * at(j, q)).sum());
            }
        }
    }
    out
}

// Straight-line evaluation of the MLP from the named tensors, no batch norm.
fn mlp_oracle(r: &Rig, input: &[f64]) -> f64 {
    let mut x = input.to_vec();
    let n = r.clf.config().hidden_sizes.len();
    for i in 1..=n {
        let w = r.get(&format!("classifier.hidden{i}.weight"));
        let b = r.get(&format!("classifier.hidden{i}.bias"));
        let (d_in, d_out) = (w.dim(0), w.dim(1));
        assert_eq!(d_in, x.len());
        x = (0..d_out)
            .map(|o| {
                let z = b.data()[o] + (0..d_in).map(|j| x[j] * w.data()[j * d_out + o]).sum::<f64>();
                z.max(0.0)
            })
            .collect();
    }
    let w = r.get("classifier.output.weight");
    r.get("classifier.output.bias").data()[0] + x.iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()
}

fn fm_oracle(r: &Rig, b: usize) -> f64 {
    let lin = r.get("classifier.fm.linear");
    let offsets = r.layout.offsets();
    let mut s = r.get("classifier.fm.bias").data()[0];
    for f in 0..r.batch.n_fields {
        for v in r.batch.values(b, f) {
            s += lin.data()[offsets[f] + v as usize];
        }
    }
    s + pair_oracle(&r.e, b).iter().sum::<f64>()
}

fn flat_row(e: &Tensor<f64>, b: usize) -> Vec<f64> {
    let w = e.dim(1) * e.dim(2);
    e.data()[b * w..(b + 1) * w].to_vec()
}

#[test]
fn fm_layer_counts_and_values() {
    let mut r = rng(1);
    let e = random(&[2, 6, 3], &mut r);
    let out = fm_layer(&e).unwrap();
    assert_eq!(out.shape(), &[2, 15]);
    for b in 0..2 {
        for (a, o) in out.row(b).iter().zip(pair_oracle(&e, b)) {
            assert!((a - o).abs() < 1e-12);
        }
    }
    assert_eq!(fm_layer(&Tensor::<f64>::zeros(&[1, 5, 2])).unwrap().dim(1), 10);
    let ortho = Tensor::from_vec(&[1, 3, 3], vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, -1.0]).unwrap();
    assert!(fm_layer(&ortho).unwrap().data().iter().all(|&v| v == 0.0));
    assert!(fm_layer(&Tensor::<f64>::zeros(&[1, 1, 2])).is_err());
}

#[test]
fn fm_layer_adjoint() {
    let mut r = rng(2);
    let e = random(&[3, 5, 2], &mut r);
    let d = random(&[3, 10], &mut r);
    let dir = random(e.shape(), &mut r);
    let de = fm_layer_backward(&e, &d).unwrap();
    // fm_layer is quadratic, so the central difference is exact up to rounding.
    let h = 1e-4;
    let mut ep = e.clone();
    let mut em = e.clone();
    for ((p, m), dv) in ep.data_mut().iter_mut().zip(em.data_mut()).zip(dir.data()) {
        *p += h * dv;
        *m -= h * dv;
    }
    let fp = fm_layer(&ep).unwrap();
    let fmn = fm_layer(&em).unwrap();
    let mut num = 0.0;
    for ((a, b), g) in fp.data().iter().zip(fmn.data()).zip(d.data()) {
        num += g * (a - b) / (2.0 * h);
    }
    assert!((num - de.dot(&dir)).abs() < 1e-8);
}

#[test]
fn zero_parameters_predict_one_half() {
    for kind in ClassifierKind::ALL {
        let cfg = ClassifierConfig::new(kind, vec![4, 3]);
        let mut r = rig(&cfg, 4, 2, 3, 0);
        for t in r.params.tensors_mut() {
            t.fill(0.0);
        }
        // FM pairwise terms vanish for orthogonal rows.
        let mut e = Tensor::zeros(&[3, 4, 2]);
        for b in 0..3 {
            e.data_mut()[(b * 4) * 2] = 1.0;
            e.data_mut()[(b * 4 + 1) * 2 + 1] = -2.0;
        }
        r.e = e;
        let (logits, _) = r.logits(&r.params, &r.e);
        for p in predict(&logits) {
            assert_eq!(p, 0.5, "{kind:?}");
        }
    }
}

#[test]
fn ipnn_input_width() {
    let cfg = ClassifierConfig::new(ClassifierKind::Ipnn, vec![7]);
    assert_eq!(cfg.input_width(5, 2), 20);
    let r = rig(&cfg, 5, 2, 2, 0);
    assert_eq!(r.get("classifier.hidden1.weight").shape(), &[20, 7]);
    let dnn = ClassifierConfig::new(ClassifierKind::Dnn, vec![7]);
    assert_eq!(dnn.input_width(5, 2), 10);
}

#[test]
fn ipnn_matches_dense_oracle() {
    let cfg = ClassifierConfig::new(ClassifierKind::Ipnn, vec![5, 3]);
    for seed in 0..3 {
        let r = rig(&cfg, 4, 3, 4, seed);
        let (logits, _) = r.logits(&r.params, &r.e);
        for b in 0..4 {
            let mut input = pair_oracle(&r.e, b);
            input.extend(flat_row(&r.e, b));
            assert!((logits[b] - mlp_oracle(&r, &input)).abs() < 1e-12);
        }
    }
}

#[test]
fn dnn_is_ipnn_without_pair_inputs() {
    let ipnn_cfg = ClassifierConfig::new(ClassifierKind::Ipnn, vec![4]);
    let dnn_cfg = ClassifierConfig::new(ClassifierKind::Dnn, vec![4]);
    let mut ipnn = rig(&ipnn_cfg, 4, 2, 3, 5);
    let mut dnn = rig(&dnn_cfg, 4, 2, 3, 5);
    dnn.e = ipnn.e.clone();
    let np = n_pairs(4);
    // Zero the pair rows of the IPNN first layer; copy the rest into the DNN.
    let w_ipnn = ipnn.params.find("classifier.hidden1.weight").unwrap();
    for v in &mut ipnn.params.get_mut(w_ipnn).data_mut()[..np * 4] {
        *v = 0.0;
    }
    let tail = ipnn.params.get(w_ipnn).data()[np * 4..].to_vec();
    let w_dnn = dnn.params.find("classifier.hidden1.weight").unwrap();
    dnn.params.get_mut(w_dnn).data_mut().copy_from_slice(&tail);
    for name in ["classifier.hidden1.bias", "classifier.output.weight", "classifier.output.bias"] {
        let src = ipnn.get(name).clone();
        let h = dnn.params.find(name).unwrap();
        *dnn.params.get_mut(h) = src;
    }
    let (a, _) = ipnn.logits(&ipnn.params, &ipnn.e);
    let (b, _) = dnn.logits(&dnn.params, &dnn.e);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn fm_single_pair_closed_form() {
    let cfg = ClassifierConfig::new(ClassifierKind::Fm, vec![]);
    let mut r = rig(&cfg, 2, 2, 1, 0);
    for t in r.params.tensors_mut() {
        t.fill(0.0);
    }
    r.e = Tensor::from_vec(&[1, 2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
    let (logits, _) = r.logits(&r.params, &r.e);
    assert!((predict(&logits)[0] - 0.880_797).abs() < 1e-6);
}

#[test]
fn fm_matches_brute_force() {
    let cfg = ClassifierConfig::new(ClassifierKind::Fm, vec![]);
    for seed in 0..3 {
        let r = rig(&cfg, 5, 3, 4, seed);
        let (logits, _) = r.logits(&r.params, &r.e);
        for b in 0..4 {
            assert!((logits[b] - fm_oracle(&r, b)).abs() < 1e-12);
        }
    }
}

#[test]
fn deepfm_is_mlp_plus_fm() {
    let cfg = ClassifierConfig::new(ClassifierKind::Deepfm, vec![3]);
    let fm_cfg = ClassifierConfig::new(ClassifierKind::Fm, vec![]);
    for seed in 0..3 {
        let mut r = rig(&cfg, 4, 2, 3, seed);
        let (logits, _) = r.logits(&r.params, &r.e);
        for b in 0..3 {
            let want = mlp_oracle(&r, &flat_row(&r.e, b)) + fm_oracle(&r, b);
            assert!((logits[b] - want).abs() < 1e-12);
        }
        // Zeroing the MLP's output layer leaves exactly the FM model.
        for name in ["classifier.output.weight", "classifier.output.bias"] {
            let h = r.params.find(name).unwrap();
            r.params.get_mut(h).fill(0.0);
        }
        let (deep, _) = r.logits(&r.params, &r.e);
        let mut fm = rig(&fm_cfg, 4, 2, 3, seed);
        fm.e = r.e.clone();
        fm.batch = r.batch.clone();
        for name in ["classifier.fm.linear", "classifier.fm.bias"] {
            let src = r.get(name).clone();
            let h = fm.params.find(name).unwrap();
            *fm.params.get_mut(h) = src;
        }
        let (shallow, _) = fm.logits(&fm.params, &fm.e);
        assert_eq!(predict(&deep), predict(&shallow));
    }
}

#[test]
fn loss_values() {
    let (l, g, c) = loss_and_grad(&[0.5f64], &[1.0]).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(g, vec![-0.5]);
    assert_eq!(c, 0);
    let (l, _, c) = loss_and_grad(&[1e-12f64], &[0.0]).unwrap();
    assert!(l < 1e-6);
    assert_eq!(c, 1);
    let mut r = rng(3);
    let probs: Vec<f64> = (0..50).map(|_| r.gen_range(0.01..0.99)).collect();
    let labels: Vec<f64> = (0..50).map(|i| (i % 3 == 0) as u8 as f64).collect();
    let (l, g, _) = loss_and_grad(&probs, &labels).unwrap();
    let want: f64 = probs
        .iter()
        .zip(&labels)
        .map(|(p, y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
        .sum::<f64>()
        / 50.0;
    assert!((l - want).abs() < 1e-12);
    for ((gi, p), y) in g.iter().zip(&probs).zip(&labels) {
        assert!((gi - (p - y) / 50.0).abs() < 1e-15);
    }
}

fn classifier_grad_error(cfg: &ClassifierConfig, seed: u64) -> f64 {
    let (t, k, bsz) = (4, 3, 4);
    let r = rig(cfg, t, k, bsz, seed);
    let labels = r.batch.labels.clone();
    let (logits, cache) = r.logits(&r.params, &r.e);
    let (_, dlogits, _) = loss_and_grad(&predict(&logits), &labels).unwrap();
    let mut grads = r.params.zeros_like();
    let de = r
        .clf
        .backward(&r.params, &mut grads, &cache, &r.e, &r.batch, &r.layout, &dlogits)
        .unwrap();
    let mut point = r.params.flatten();
    let np = point.len();
    point.extend_from_slice(r.e.data());
    let mut analytic = grads.flatten();
    analytic.extend_from_slice(de.data());
    let mut params = r.params.clone();
    let f = |x: &[f64]| {
        params.load_flat(&x[..np]).unwrap();
        let e = Tensor::from_vec(&[bsz, t, k], x[np..].to_vec()).unwrap();
        let (logits, cache) = r.logits(&params, &e);
        let (loss, _, _) = loss_and_grad(&predict(&logits), &labels).unwrap();
        let mut h = PatternHasher::default();
        cache.push_pattern(&mut h);
        Probe {
            value: loss,
            pattern: h.finish(),
        }
    };
    let opts = GradCheckOptions::default();
    grad_check(f, &point, &analytic, &opts).unwrap().max_rel_error
}

#[test]
fn gradients_match_finite_differences() {
    for kind in ClassifierKind::ALL {
        for bn in [false, true] {
            let mut cfg = ClassifierConfig::new(kind, vec![5, 3]);
            cfg.batch_norm = bn;
            for seed in 0..3 {
                let err = classifier_grad_error(&cfg, seed);
                assert!(err < 1e-4, "{kind:?} bn={bn} seed {seed}: {err}");
            }
        }
    }
}

#[test]
fn dropout_needs_a_stream_and_is_inert_at_inference() {
    let mut cfg = ClassifierConfig::new(ClassifierKind::Ipnn, vec![6]);
    cfg.dropout_keep = 0.5;
    let r = rig(&cfg, 3, 2, 4, 1);
    let train = r
        .clf
        .forward(&r.params, &r.state, &r.e, &r.batch, &r.layout, BnMode::Train, None);
    assert!(train.is_err());
    let infer = |p: &TensorStore<f64>| {
        r.clf
            .forward(p, &r.state, &r.e, &r.batch, &r.layout, BnMode::Infer, None)
            .unwrap()
            .0
    };
    let mut plain = cfg.clone();
    plain.dropout_keep = 1.0;
    let mut ps = TensorStore::<f64>::new();
    let mut ss = TensorStore::<f64>::new();
    let undropped = Classifier::new(&plain, 3, 2, r.layout.total_features(), &mut ps, &mut ss, 0).unwrap();
    let plain_out = undropped
        .forward(&r.params, &r.state, &r.e, &r.batch, &r.layout, BnMode::Infer, None)
        .unwrap()
        .0;
    assert_eq!(infer(&r.params), plain_out);
    let mut s1 = crate::testutil::rng(9);
    let mut s2 = crate::testutil::rng(9);
    let a = r
        .clf
        .forward(&r.params, &r.state, &r.e, &r.batch, &r.layout, BnMode::Train, Some(&mut s1))
        .unwrap()
        .0;
    let b = r
        .clf
        .forward(&r.params, &r.state, &r.e, &r.batch, &r.layout, BnMode::Train, Some(&mut s2))
        .unwrap()
        .0;
    assert_eq!(a, b);
}

#[test]
fn config_validation() {
    assert!(ClassifierConfig::new(ClassifierKind::Ipnn, vec![]).validate().is_err());
    assert!(ClassifierConfig::new(ClassifierKind::Fm, vec![]).validate().is_ok());
    let mut c = ClassifierConfig::new(ClassifierKind::Dnn, vec![3]);
    c.dropout_keep = 0.0;
    assert!(c.validate().is_err());
    assert_eq!(ClassifierKind::parse("deepfm").unwrap(), ClassifierKind::Deepfm);
    assert!(ClassifierKind::parse("pin").is_err());
}

proptest! {
    #[test]
    fn fm_output_length(t in 2usize..=64, k in 1usize..4) {
        let e = Tensor::<f64>::zeros(&[1, t, k]);
        prop_assert_eq!(fm_layer(&e).unwrap().dim(1), t * (t - 1) / 2);
    }

    #[test]
    fn fm_pair_set_invariant_under_row_swap(t in 2usize..10, a in 0usize..10, b in 0usize..10, seed in 0u64..1000) {
        let (a, b) = (a % t, b % t);
        let k = 3;
        let mut r = rng(seed);
        let e = random(&[1, t, k], &mut r);
        let mut swapped = e.clone();
        for q in 0..k {
            swapped.data_mut().swap(a * k + q, b * k + q);
        }
        let orig = fm_layer(&e).unwrap();
        let sw = fm_layer(&swapped).unwrap();
        // The swap permutes pair positions: pair (i, j) moves to (σi, σj) sorted.
        let sigma = |i: usize| if i == a { b } else if i == b { a } else { i };
        let pos = |i: usize, j: usize| {
            let (i, j) = if i < j { (i, j) } else { (j, i) };
            i * t - i * (i + 1) / 2 + (j - i - 1)
        };
        for i in 0..t {
            for j in i + 1..t {
                prop_assert_eq!(orig.data()[pos(i, j)], sw.data()[pos(sigma(i), sigma(j))]);
            }
        }
    }

    #[test]
    fn predictions_stay_in_unit_interval(seed in 0u64..500, scale in 0.0f64..3.0) {
        let cfg = ClassifierConfig::new(ClassifierKind::Ipnn, vec![4]);
        let r = rig(&cfg, 3, 2, 3, seed);
        let e = r.e.map(|v| v * scale);
        let (logits, _) = r.logits(&r.params, &e);
        let probs = predict(&logits);
        prop_assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
        let (loss, _, _) = loss_and_grad(&probs, &r.batch.labels).unwrap();
        prop_assert!(loss >= 0.0);
        let (again, _) = r.logits(&r.params, &e);
        prop_assert_eq!(again, logits);
    }
}
