//! Finite-difference verification of every hand-derived gradient, run at
//! 64-bit precision. Each check returns the worst relative error it saw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::classifier::{fm_layer, fm_layer_backward, loss_and_grad, ClassifierConfig, ClassifierKind};
use crate::data::{Batch, Instance, SchemaLayout};
use crate::embedding::{assemble_from_weights, backward_embedding};
use crate::error::Result;
use crate::featgen::{
    conv_forward, conv_linear_backward, pool_backward, pool_forward, recombine_forward,
    FeatureGenConfig,
};
use crate::model::{Model, ModelConfig, Variant};
use crate::nn::activation::{sigmoid, tanh_grad_from_output};
use crate::nn::batchnorm::{batchnorm_backward, batchnorm_train, BnMode, BN_EPS};
use crate::nn::dense::{affine, affine_backward};
use crate::nn::dropout::{dropout_backward, dropout_forward};
use crate::nn::gradcheck::{grad_check, GradCheckOptions, GradCheckReport, PatternHasher, Probe};
use crate::tensor::Tensor;

pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub seed: u64,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

impl CheckOutcome {
    fn new(name: &str, seed: u64, r: GradCheckReport) -> Self {
        CheckOutcome {
            name: name.to_string(),
            seed,
            max_rel_error: r.max_rel_error,
            checked: r.checked,
            skipped_kinks: r.skipped_kinks,
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < GRAD_TOLERANCE
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sized")
}

fn toy_layout(cards: &[usize]) -> SchemaLayout {
    SchemaLayout {
        field_names: (0..cards.len()).map(|i| format!("f{i}")).collect(),
        cardinalities: cards.to_vec(),
        digest: String::new(),
    }
}

fn toy_batch(cards: &[usize], n: usize, multivalent: bool, rng: &mut ChaCha8Rng) -> Batch {
    let inst: Vec<Instance> = (0..n)
        .map(|i| Instance {
            fields: cards
                .iter()
                .enumerate()
                .map(|(f, &c)| {
                    let mut v = vec![rng.gen_range(0..c as u32)];
                    if multivalent && f == 0 {
                        v.push((v[0] + 1) % c as u32);
                    }
                    v
                })
                .collect(),
            label: (i % 2) as u8,
        })
        .collect();
    Batch::from_instances(&inst.iter().collect::<Vec<_>>()).expect("non-empty")
}

/// `⟨g, f(x)⟩` against the analytic vector-Jacobian product.
fn check_vjp<F>(name: &str, seed: u64, x: &[f64], vjp: &[f64], f: F, opts: &GradCheckOptions) -> Result<CheckOutcome>
where
    F: FnMut(&[f64]) -> Probe,
{
    Ok(CheckOutcome::new(name, seed, grad_check(f, x, vjp, opts)?))
}

/// Per-layer checks for one seed.
pub fn layer_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // embedding gather, including a multivalent field
    let cards = [3, 4, 2];
    let lay = toy_layout(&cards);
    let batch = toy_batch(&cards, 3, true, &mut rng);
    let w = random(&[9, 2], &mut rng);
    let g = random(&[3, 3, 2], &mut rng);
    let vjp = backward_embedding(&g, &batch, &lay)?.to_dense(9)?;
    out.push(check_vjp("embedding", seed, w.data(), vjp.data(), |x| {
        let t = Tensor::from_vec(&[9, 2], x.to_vec()).expect("sized");
        Probe::smooth(g.dot(&assemble_from_weights(&batch, &t, &lay).expect("valid")))
    }, &opts)?);

    // convolution with tanh, gradient w.r.t. input and kernel together
    let x = random(&[2, 5, 3, 2], &mut rng);
    let w = random(&[3, 1, 2, 2], &mut rng);
    let g = random(&[2, 5, 3, 2], &mut rng);
    let y = conv_forward(&x, &w)?;
    let dpre = {
        let mut d = g.clone();
        for (v, &o) in d.data_mut().iter_mut().zip(y.data()) {
            *v *= tanh_grad_from_output(o);
        }
        d
    };
    let (dx, dw) = conv_linear_backward(&x, &w, &dpre)?;
    let point: Vec<f64> = x.data().iter().chain(w.data()).copied().collect();
    let vjp: Vec<f64> = dx.data().iter().chain(dw.data()).copied().collect();
    let nx = x.len();
    out.push(check_vjp("conv", seed, &point, &vjp, |p| {
        let xs = Tensor::from_vec(x.shape(), p[..nx].to_vec()).expect("sized");
        let ws = Tensor::from_vec(w.shape(), p[nx..].to_vec()).expect("sized");
        Probe::smooth(g.dot(&conv_forward(&xs, &ws).expect("valid")))
    }, &opts)?);

    // max-pooling with a partial last window
    let x = random(&[2, 5, 2, 2], &mut rng);
    let pooled = pool_forward(&x, 2)?;
    let g = random(pooled.out.shape(), &mut rng);
    let vjp = pool_backward(&g, &pooled.argmax, x.shape())?;
    out.push(check_vjp("max_pool", seed, x.data(), vjp.data(), |p| {
        let xs = Tensor::from_vec(x.shape(), p.to_vec()).expect("sized");
        let pr = pool_forward(&xs, 2).expect("valid");
        let mut h = PatternHasher::default();
        pr.argmax.iter().for_each(|&a| h.push(a as u64));
        Probe {
            value: g.dot(&pr.out),
            pattern: h.finish(),
        }
    }, &opts)?);

    // recombination: tanh(flatten(S)·WR + BR)
    let s = random(&[2, 2, 2, 3], &mut rng);
    let wr = random(&[12, 4], &mut rng);
    let br = random(&[4], &mut rng);
    let g = random(&[2, 2, 2], &mut rng);
    let r = recombine_forward(&s, &wr, &br, 2)?;
    let mut dz = g.clone().reshape(&[2, 4])?;
    for (v, &o) in dz.data_mut().iter_mut().zip(r.data()) {
        *v *= tanh_grad_from_output(o);
    }
    let flat = s.clone().reshape(&[2, 12])?;
    let ag = affine_backward(&flat, &wr, &dz)?;
    let point: Vec<f64> = s.data().iter().chain(wr.data()).chain(br.data()).copied().collect();
    let vjp: Vec<f64> = ag.dx.data().iter().chain(ag.dw.data()).chain(ag.db.data()).copied().collect();
    out.push(check_vjp("recombination", seed, &point, &vjp, |p| {
        let ss = Tensor::from_vec(s.shape(), p[..24].to_vec()).expect("sized");
        let ws = Tensor::from_vec(wr.shape(), p[24..72].to_vec()).expect("sized");
        let bs = Tensor::from_vec(br.shape(), p[72..].to_vec()).expect("sized");
        Probe::smooth(g.dot(&recombine_forward(&ss, &ws, &bs, 2).expect("valid")))
    }, &opts)?);

    // FM layer
    let e = random(&[2, 5, 3], &mut rng);
    let g = random(&[2, 10], &mut rng);
    let vjp = fm_layer_backward(&e, &g)?;
    out.push(check_vjp("fm_layer", seed, e.data(), vjp.data(), |p| {
        let es = Tensor::from_vec(e.shape(), p.to_vec()).expect("sized");
        Probe::smooth(g.dot(&fm_layer(&es).expect("valid")))
    }, &opts)?);

    // affine
    let x = random(&[3, 4], &mut rng);
    let w = random(&[4, 2], &mut rng);
    let b = random(&[2], &mut rng);
    let g = random(&[3, 2], &mut rng);
    let ag = affine_backward(&x, &w, &g)?;
    let point: Vec<f64> = x.data().iter().chain(w.data()).chain(b.data()).copied().collect();
    let vjp: Vec<f64> = ag.dx.data().iter().chain(ag.dw.data()).chain(ag.db.data()).copied().collect();
    out.push(check_vjp("affine", seed, &point, &vjp, |p| {
        let xs = Tensor::from_vec(&[3, 4], p[..12].to_vec()).expect("sized");
        let ws = Tensor::from_vec(&[4, 2], p[12..20].to_vec()).expect("sized");
        let bs = Tensor::from_vec(&[2], p[20..].to_vec()).expect("sized");
        Probe::smooth(g.dot(&affine(&xs, &ws, &bs).expect("valid")))
    }, &opts)?);

    // batch normalization, train mode
    let x = random(&[4, 3], &mut rng);
    let gamma = random(&[3], &mut rng);
    let beta = random(&[3], &mut rng);
    let g = random(&[4, 3], &mut rng);
    let (_, cache) = batchnorm_train(&x, &gamma, &beta, BN_EPS)?;
    let bg = batchnorm_backward(&g, &cache, &gamma)?;
    let point: Vec<f64> = x.data().iter().chain(gamma.data()).chain(beta.data()).copied().collect();
    let vjp: Vec<f64> = bg.dx.data().iter().chain(bg.dgamma.data()).chain(bg.dbeta.data()).copied().collect();
    out.push(check_vjp("batchnorm", seed, &point, &vjp, |p| {
        let xs = Tensor::from_vec(&[4, 3], p[..12].to_vec()).expect("sized");
        let gs = Tensor::from_vec(&[3], p[12..15].to_vec()).expect("sized");
        let bs = Tensor::from_vec(&[3], p[15..].to_vec()).expect("sized");
        Probe::smooth(g.dot(&batchnorm_train(&xs, &gs, &bs, BN_EPS).expect("valid").0))
    }, &opts)?);

    // dropout with keep = 1 is the identity path
    let x = random(&[3, 4], &mut rng);
    let g = random(&[3, 4], &mut rng);
    let mut probe_rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = dropout_forward(&mut x.clone(), 1.0, &mut probe_rng);
    let mut vjp = g.clone();
    dropout_backward(&mut vjp, mask.as_deref());
    out.push(check_vjp("dropout_off", seed, x.data(), vjp.data(), |p| {
        let mut xs = Tensor::from_vec(&[3, 4], p.to_vec()).expect("sized");
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        dropout_forward(&mut xs, 1.0, &mut r);
        Probe::smooth(g.dot(&xs))
    }, &opts)?);

    // loss against logits
    let logits: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let labels: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
    let probs: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
    let (_, dl, _) = loss_and_grad(&probs, &labels)?;
    out.push(check_vjp("loss", seed, &logits, &dl, |p| {
        let probs: Vec<f64> = p.iter().map(|&l| sigmoid(l)).collect();
        Probe::smooth(loss_and_grad(&probs, &labels).expect("valid").0)
    }, &opts)?);

    Ok(out)
}

/// Mean log loss over `batch` as a function of every model parameter.
pub fn model_grad_check(model: &Model<f64>, batch: &Batch, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let pass = model.forward(batch, BnMode::Train, None)?;
    let (_, dl, _) = loss_and_grad(&pass.probs, &batch.labels)?;
    let grads = model.backward(batch, &pass, &dl)?;
    let point = model.params().flatten();
    let analytic = grads.flatten();
    let mut probe = model.clone();
    let f = |x: &[f64]| {
        probe.params_mut().load_flat(x).expect("sized");
        let pass = probe.forward(batch, BnMode::Train, None).expect("valid");
        let (loss, _, _) = loss_and_grad(&pass.probs, &batch.labels).expect("valid");
        Probe {
            value: loss,
            pattern: pass.pattern(),
        }
    };
    grad_check(f, &point, &analytic, opts)
}

/// The tiny composite configuration: 4 fields, k = 3, one round, one hidden layer of 5.
pub fn tiny_model_config(kind: ClassifierKind, variant: Variant, batch_norm: bool) -> ModelConfig {
    let mut fg = FeatureGenConfig::uniform(1, 2, 2, 2, 2);
    fg.batch_norm = batch_norm;
    let mut clf = ClassifierConfig::new(kind, vec![5]);
    clf.batch_norm = batch_norm;
    ModelConfig {
        embedding_size: 3,
        variant,
        feature_generation: fg,
        classifier: clf,
    }
}

/// Full-model check on the tiny configuration for one seed.
pub fn composite_check(config: &ModelConfig, seed: u64) -> Result<CheckOutcome> {
    let cards = [3, 2, 4, 3];
    let lay = toy_layout(&cards);
    let model = Model::<f64>::new(config, &lay, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let batch = toy_batch(&cards, 6, false, &mut rng);
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    let report = model_grad_check(&model, &batch, &opts)?;
    let name = format!(
        "model:{}+{}{}",
        config.variant.name(),
        config.classifier.kind.name(),
        if config.classifier.batch_norm { "+bn" } else { "" }
    );
    Ok(CheckOutcome::new(&name, seed, report))
}

/// Every layer plus the composite FGCNN+IPNN model over the given seeds.
pub fn full_suite(seeds: &[u64]) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for &seed in seeds {
        out.extend(layer_checks(seed)?);
        out.push(composite_check(
            &tiny_model_config(ClassifierKind::Ipnn, Variant::Full, false),
            seed,
        )?);
    }
    Ok(out)
}
