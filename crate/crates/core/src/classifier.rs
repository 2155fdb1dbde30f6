//! Deep classifiers over the augmented matrix `[batch, T, k]`.
//!
//! * `ipnn`: MLP over `concat(R_fm, flatten(𝔼))`, where `R_fm` holds the
//!   `T(T-1)/2` pairwise inner products in lexicographic `i < j` order.
//! * `dnn`: MLP over `flatten(𝔼)`.
//! * `fm`: `bias + Σ linear + Σ_{i<j} ⟨𝔼_i, 𝔼_j⟩`.
//! * `deepfm`: the `dnn` logit plus every `fm` term.
//!
//! Hidden layers are `affine → [BN] → relu → [dropout]`; the output layer is
//! a single affine logit. Linear FM terms are per one-hot feature.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, SchemaLayout};
use crate::error::{FgcnnError, Result};
use crate::nn::activation::{relu, sigmoid};
use crate::nn::batchnorm::{BnCache, BnMode};
use crate::nn::dropout::{dropout_backward, dropout_forward};
use crate::nn::gradcheck::PatternHasher;
use crate::nn::site::{BnSite, DenseSite};
use crate::store::{Handle, TensorStore};
use crate::tensor::{Real, Tensor};
use crate::train::metrics::log_loss_single;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Ipnn,
    Dnn,
    Fm,
    Deepfm,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 4] = [
        ClassifierKind::Fm,
        ClassifierKind::Dnn,
        ClassifierKind::Deepfm,
        ClassifierKind::Ipnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Ipnn => "ipnn",
            ClassifierKind::Dnn => "dnn",
            ClassifierKind::Fm => "fm",
            ClassifierKind::Deepfm => "deepfm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| FgcnnError::Config(format!("unknown classifier kind `{s}`")))
    }

    pub fn has_mlp(self) -> bool {
        self != ClassifierKind::Fm
    }

    pub fn has_fm_terms(self) -> bool {
        matches!(self, ClassifierKind::Fm | ClassifierKind::Deepfm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    #[serde(default)]
    pub hidden_sizes: Vec<usize>,
    #[serde(default)]
    pub batch_norm: bool,
    #[serde(default = "one")]
    pub dropout_keep: f64,
}

fn one() -> f64 {
    1.0
}

impl ClassifierConfig {
    pub fn new(kind: ClassifierKind, hidden_sizes: Vec<usize>) -> Self {
        ClassifierConfig {
            kind,
            hidden_sizes,
            batch_norm: false,
            dropout_keep: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.has_mlp() && self.hidden_sizes.is_empty() {
            return Err(FgcnnError::Config(format!(
                "classifier `{}` needs at least one hidden layer",
                self.kind.name()
            )));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(FgcnnError::Config("hidden layer sizes must be positive".into()));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(FgcnnError::Config(format!(
                "dropout keep probability {} is outside (0, 1]",
                self.dropout_keep
            )));
        }
        Ok(())
    }

    /// Width of the first MLP input for `T` fields of size `k`.
    pub fn input_width(&self, t: usize, k: usize) -> usize {
        match self.kind {
            ClassifierKind::Ipnn => t * (t.saturating_sub(1)) / 2 + t * k,
            _ => t * k,
        }
    }
}

pub fn n_pairs(t: usize) -> usize {
    t * t.saturating_sub(1) / 2
}

/// Pairwise inner products `⟨𝔼_i, 𝔼_j⟩`, `i < j`, row-major: `[batch, T(T-1)/2]`.
pub fn fm_layer<T: Real>(e: &Tensor<T>) -> Result<Tensor<T>> {
    if e.ndim() != 3 || e.dim(1) < 2 {
        return Err(FgcnnError::shape(
            "fm_layer",
            format!("input {:?} needs at least 2 fields", e.shape()),
        ));
    }
    let (bsz, t, k) = (e.dim(0), e.dim(1), e.dim(2));
    let np = n_pairs(t);
    let mut out = Tensor::zeros(&[bsz, np]);
    for b in 0..bsz {
        let rows = &e.data()[b * t * k..(b + 1) * t * k];
        let mut p = 0;
        for i in 0..t {
            let ei = &rows[i * k..(i + 1) * k];
            for j in i + 1..t {
                let ej = &rows[j * k..(j + 1) * k];
                out.data_mut()[b * np + p] = ei.iter().zip(ej).map(|(&a, &c)| a * c).sum();
                p += 1;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`fm_layer`] at `e`.
pub fn fm_layer_backward<T: Real>(e: &Tensor<T>, d: &Tensor<T>) -> Result<Tensor<T>> {
    let (bsz, t, k) = (e.dim(0), e.dim(1), e.dim(2));
    if d.shape() != [bsz, n_pairs(t)] {
        return Err(FgcnnError::shape(
            "fm_layer_backward",
            format!("grad {:?} for input {:?}", d.shape(), e.shape()),
        ));
    }
    let np = n_pairs(t);
    let mut de = Tensor::zeros(e.shape());
    for b in 0..bsz {
        let base = b * t * k;
        let mut p = 0;
        for i in 0..t {
            for j in i + 1..t {
                let g = d.data()[b * np + p];
                p += 1;
                if g == T::zero() {
                    continue;
                }
                for q in 0..k {
                    let (ei, ej) = (e.data()[base + i * k + q], e.data()[base + j * k + q]);
                    de.data_mut()[base + i * k + q] += g * ej;
                    de.data_mut()[base + j * k + q] += g * ei;
                }
            }
        }
    }
    Ok(de)
}

/// `Σ_{i<j} ⟨𝔼_i, 𝔼_j⟩` per row via `(‖Σ e‖² − Σ ‖e‖²) / 2`.
fn fm_pair_sum<T: Real>(e: &Tensor<T>) -> Vec<T> {
    let (bsz, t, k) = (e.dim(0), e.dim(1), e.dim(2));
    let half = T::lit(0.5);
    (0..bsz)
        .map(|b| {
            let rows = &e.data()[b * t * k..(b + 1) * t * k];
            let mut total = T::zero();
            for q in 0..k {
                let mut s = T::zero();
                let mut sq = T::zero();
                for i in 0..t {
                    let v = rows[i * k + q];
                    s += v;
                    sq += v * v;
                }
                total += s * s - sq;
            }
            total * half
        })
        .collect()
}

/// Mean binary cross entropy over the batch with the fused gradient
/// `(ŷ - y) / B` against each logit. Also returns how many probabilities
/// had to be clamped.
pub fn loss_and_grad<T: Real>(probs: &[T], labels: &[f64]) -> Result<(f64, Vec<T>, usize)> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(FgcnnError::shape(
            "loss_and_grad",
            format!("{} predictions for {} labels", probs.len(), labels.len()),
        ));
    }
    let n = probs.len() as f64;
    let mut total = 0.0;
    let mut clamped = 0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.iter().zip(labels) {
        let (l, c) = log_loss_single(p.as_f64(), y as u8);
        total += l;
        clamped += usize::from(c);
        grad.push((p - T::lit(y)) / T::lit(n));
    }
    Ok((total / n, grad, clamped))
}

#[derive(Debug, Clone)]
struct Hidden {
    dense: DenseSite,
    bn: Option<BnSite>,
}

#[derive(Debug, Clone)]
pub struct Classifier {
    config: ClassifierConfig,
    n_inputs: usize,
    k: usize,
    hidden: Vec<Hidden>,
    output: Option<DenseSite>,
    fm_linear: Option<Handle>,
    fm_bias: Option<Handle>,
}

#[derive(Debug, Clone)]
struct HiddenCache<T> {
    input: Tensor<T>,
    pre: Tensor<T>,
    bn: Option<BnCache<T>>,
    mask: Option<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct ClassifierCache<T> {
    hidden: Vec<HiddenCache<T>>,
    last: Option<Tensor<T>>,
}

impl<T: Real> ClassifierCache<T> {
    /// Relu on/off pattern of every hidden unit.
    pub fn push_pattern(&self, h: &mut PatternHasher) {
        for layer in &self.hidden {
            for &v in layer.pre.data() {
                h.push_bool(v > T::zero());
            }
        }
    }
}

impl Classifier {
    /// Allocates the classifier for `n_inputs` fields of size `k` over a
    /// one-hot space of `t_f` features.
    pub fn new<T: Real>(
        config: &ClassifierConfig,
        n_inputs: usize,
        k: usize,
        t_f: usize,
        params: &mut TensorStore<T>,
        state: &mut TensorStore<T>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if config.kind != ClassifierKind::Dnn && n_inputs < 2 {
            return Err(FgcnnError::Config(format!(
                "classifier `{}` needs at least 2 input fields, got {n_inputs}",
                config.kind.name()
            )));
        }
        let mut hidden = Vec::new();
        let mut output = None;
        if config.kind.has_mlp() {
            let mut d_in = config.input_width(n_inputs, k);
            for (i, &h) in config.hidden_sizes.iter().enumerate() {
                let p = format!("classifier.hidden{}", i + 1);
                let dense = DenseSite::alloc(params, &p, d_in, h, !config.batch_norm, seed);
                let bn = config
                    .batch_norm
                    .then(|| BnSite::alloc(params, state, &format!("{p}.bn"), h));
                hidden.push(Hidden { dense, bn });
                d_in = h;
            }
            output = Some(DenseSite::alloc(params, "classifier.output", d_in, 1, true, seed));
        }
        let (fm_linear, fm_bias) = if config.kind.has_fm_terms() {
            (
                Some(params.push("classifier.fm.linear", Tensor::zeros(&[t_f]))),
                Some(params.push("classifier.fm.bias", Tensor::zeros(&[1]))),
            )
        } else {
            (None, None)
        };
        Ok(Classifier {
            config: config.clone(),
            n_inputs,
            k,
            hidden,
            output,
            fm_linear,
            fm_bias,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    fn check_input<T: Real>(&self, e: &Tensor<T>) -> Result<()> {
        if e.ndim() != 3 || e.dim(1) != self.n_inputs || e.dim(2) != self.k {
            return Err(FgcnnError::shape(
                "classifier",
                format!("input {:?}, expected [batch, {}, {}]", e.shape(), self.n_inputs, self.k),
            ));
        }
        Ok(())
    }

    fn mlp_input<T: Real>(&self, e: &Tensor<T>) -> Result<Tensor<T>> {
        let bsz = e.dim(0);
        let flat = e.clone().reshape(&[bsz, self.n_inputs * self.k])?;
        if self.config.kind != ClassifierKind::Ipnn {
            return Ok(flat);
        }
        let fm = fm_layer(e)?;
        let (np, w) = (fm.dim(1), flat.dim(1));
        let mut data = Vec::with_capacity(bsz * (np + w));
        for b in 0..bsz {
            data.extend_from_slice(&fm.data()[b * np..(b + 1) * np]);
            data.extend_from_slice(&flat.data()[b * w..(b + 1) * w]);
        }
        Tensor::from_vec(&[bsz, np + w], data)
    }

    /// Logits `[batch]`. Dropout is drawn from `rng` in train mode only.
    pub fn forward<T: Real>(
        &self,
        params: &TensorStore<T>,
        state: &TensorStore<T>,
        e: &Tensor<T>,
        batch: &Batch,
        layout: &SchemaLayout,
        mode: BnMode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<T>, ClassifierCache<T>)> {
        self.check_input(e)?;
        let bsz = e.dim(0);
        let mut logits = vec![T::zero(); bsz];
        let mut cache = ClassifierCache {
            hidden: Vec::new(),
            last: None,
        };
        if let Some(out) = &self.output {
            let mut x = self.mlp_input(e)?;
            for layer in &self.hidden {
                let z = layer.dense.forward(params, &x)?;
                let (pre, bn) = match &layer.bn {
                    Some(site) => site.forward(params, state, &z, mode)?,
                    None => (z, None),
                };
                let mut a = pre.map(relu);
                let mask = match (mode, rng.as_deref_mut()) {
                    (BnMode::Train, Some(r)) => dropout_forward(&mut a, self.config.dropout_keep, r),
                    (BnMode::Train, None) if self.config.dropout_keep < 1.0 => {
                        return Err(FgcnnError::Config(
                            "dropout in train mode needs a random stream".into(),
                        ))
                    }
                    _ => None,
                };
                cache.hidden.push(HiddenCache {
                    input: x,
                    pre,
                    bn,
                    mask,
                });
                x = a;
            }
            let y = out.forward(params, &x)?;
            for (l, &v) in logits.iter_mut().zip(y.data()) {
                *l += v;
            }
            cache.last = Some(x);
        }
        if let (Some(lin), Some(bias)) = (self.fm_linear, self.fm_bias) {
            let w = params.get(lin).data();
            let b0 = params.get(bias).data()[0];
            let offsets = layout.offsets();
            let pairs = fm_pair_sum(e);
            for (b, l) in logits.iter_mut().enumerate() {
                let mut s = b0 + pairs[b];
                for f in 0..batch.n_fields {
                    for local in batch.values(b, f) {
                        s += w[offsets[f] + local as usize];
                    }
                }
                *l += s;
            }
        }
        Ok((logits, cache))
    }

    /// Accumulates parameter gradients and returns `dL/d𝔼`.
    pub fn backward<T: Real>(
        &self,
        params: &TensorStore<T>,
        grads: &mut TensorStore<T>,
        cache: &ClassifierCache<T>,
        e: &Tensor<T>,
        batch: &Batch,
        layout: &SchemaLayout,
        dlogits: &[T],
    ) -> Result<Tensor<T>> {
        self.check_input(e)?;
        let bsz = e.dim(0);
        if dlogits.len() != bsz {
            return Err(FgcnnError::shape(
                "classifier_backward",
                format!("{} logit grads for batch {bsz}", dlogits.len()),
            ));
        }
        let mut de = Tensor::zeros(e.shape());
        if let Some(out) = &self.output {
            let last = cache.last.as_ref().ok_or(FgcnnError::MissingCache("classifier output"))?;
            if cache.hidden.len() != self.hidden.len() {
                return Err(FgcnnError::MissingCache("classifier hidden layers"));
            }
            let dy = Tensor::from_vec(&[bsz, 1], dlogits.to_vec())?;
            let mut dx = out.backward(params, grads, last, &dy)?;
            for (layer, hc) in self.hidden.iter().zip(&cache.hidden).rev() {
                dropout_backward(&mut dx, hc.mask.as_deref());
                for (g, &z) in dx.data_mut().iter_mut().zip(hc.pre.data()) {
                    if z <= T::zero() {
                        *g = T::zero();
                    }
                }
                if let Some(site) = &layer.bn {
                    let bc = hc
                        .bn
                        .as_ref()
                        .ok_or(FgcnnError::MissingCache("batch-norm statistics (infer-mode pass)"))?;
                    dx = site.backward(params, grads, &dx, bc)?;
                }
                dx = layer.dense.backward(params, grads, &hc.input, &dx)?;
            }
            let (t, k) = (self.n_inputs, self.k);
            if self.config.kind == ClassifierKind::Ipnn {
                let np = n_pairs(t);
                let w = dx.dim(1);
                let mut dfm = Tensor::zeros(&[bsz, np]);
                for b in 0..bsz {
                    dfm.row_mut(b).copy_from_slice(&dx.data()[b * w..b * w + np]);
                    de.data_mut()[b * t * k..(b + 1) * t * k]
                        .copy_from_slice(&dx.data()[b * w + np..(b + 1) * w]);
                }
                de.add_assign(&fm_layer_backward(e, &dfm)?)?;
            } else {
                de.add_assign(&dx.reshape(e.shape())?)?;
            }
        }
        if let (Some(lin), Some(bias)) = (self.fm_linear, self.fm_bias) {
            let (t, k) = (self.n_inputs, self.k);
            let offsets = layout.offsets();
            for b in 0..bsz {
                let g = dlogits[b];
                grads.get_mut(bias).data_mut()[0] += g;
                for f in 0..batch.n_fields {
                    for local in batch.values(b, f) {
                        grads.get_mut(lin).data_mut()[offsets[f] + local as usize] += g;
                    }
                }
                // d/de_iq of Σ_{i<j} ⟨e_i, e_j⟩ is (Σ_j e_jq) - e_iq
                let rows = &e.data()[b * t * k..(b + 1) * t * k];
                for q in 0..k {
                    let s: T = (0..t).map(|i| rows[i * k + q]).sum();
                    for i in 0..t {
                        de.data_mut()[b * t * k + i * k + q] += g * (s - rows[i * k + q]);
                    }
                }
            }
        }
        Ok(de)
    }

    pub fn commit_bn<T: Real>(&self, state: &mut TensorStore<T>, cache: &ClassifierCache<T>) {
        for (layer, hc) in self.hidden.iter().zip(&cache.hidden) {
            if let (Some(site), Some(bc)) = (&layer.bn, &hc.bn) {
                site.commit(state, bc);
            }
        }
    }
}

/// Elementwise sigmoid of a logit vector.
pub fn predict<T: Real>(logits: &[T]) -> Vec<T> {
    logits.iter().map(|&l| sigmoid(l)).collect()
}

#[cfg(test)]
mod tests;
