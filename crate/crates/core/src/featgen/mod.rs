//! Feature generation: `n_c` rounds of convolution, max-pooling and
//! recombination turning the field-embedding matrix `[batch, n_f, k]` into
//! `N` new field embeddings `[batch, N, k]`.
//!
//! Round `i` consumes `rows_{i-1}` fields and pools them down to
//! `rows_i = ceil(rows_{i-1} / h_p)`; its recombination emits
//! `N_i = rows_i · m_r^i` new fields. The pooled maps of round `i` are the
//! input of round `i + 1`.

pub mod conv;
pub mod pool;
pub mod recombine;

use serde::{Deserialize, Serialize};

use crate::error::{FgcnnError, Result};
use crate::nn::activation::{tanh, tanh_grad_from_output};
use crate::nn::batchnorm::{BnCache, BnMode};
use crate::nn::gradcheck::PatternHasher;
use crate::nn::init::glorot;
use crate::nn::site::{BnSite, DenseSite};
use crate::store::{Handle, TensorStore};
use crate::tensor::{Real, Tensor};

pub use conv::{conv_forward, conv_linear, conv_linear_backward};
pub use pool::{pool_backward, pool_forward, pooled_rows, Pooled};
pub use recombine::{fields_to_maps, maps_to_fields, recombine_forward};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureGenConfig {
    pub kernel_heights: Vec<usize>,
    pub feature_maps: Vec<usize>,
    pub new_maps: Vec<usize>,
    pub pool_height: usize,
    /// Batch normalization before each tanh of the stack.
    #[serde(default)]
    pub batch_norm: bool,
}

impl FeatureGenConfig {
    pub fn uniform(n_c: usize, h: usize, m_c: usize, m_r: usize, h_p: usize) -> Self {
        FeatureGenConfig {
            kernel_heights: vec![h; n_c],
            feature_maps: vec![m_c; n_c],
            new_maps: vec![m_r; n_c],
            pool_height: h_p,
            batch_norm: false,
        }
    }

    pub fn n_rounds(&self) -> usize {
        self.kernel_heights.len()
    }

    pub fn validate(&self, n_fields: usize) -> Result<()> {
        let n_c = self.n_rounds();
        let bad = |msg: String| Err(FgcnnError::Config(format!("feature generation: {msg}")));
        if n_c == 0 {
            return bad("at least one round is required".into());
        }
        if self.feature_maps.len() != n_c || self.new_maps.len() != n_c {
            return bad(format!(
                "{} kernel heights, {} feature-map counts and {} new-map counts must agree",
                n_c,
                self.feature_maps.len(),
                self.new_maps.len()
            ));
        }
        if self.pool_height < 2 {
            return bad(format!("pool height {} must be at least 2", self.pool_height));
        }
        for i in 0..n_c {
            if self.kernel_heights[i] == 0 || self.feature_maps[i] == 0 || self.new_maps[i] == 0 {
                return bad(format!("round {} has a zero-sized kernel or map count", i + 1));
            }
            if self.kernel_heights[i] > n_fields {
                return bad(format!(
                    "round {} kernel height {} exceeds the {n_fields} input fields",
                    i + 1,
                    self.kernel_heights[i]
                ));
            }
        }
        Ok(())
    }

    /// `rows_0 = n_f`, `rows_i = ceil(rows_{i-1} / h_p)`; length `n_c + 1`.
    pub fn rows_chain(&self, n_fields: usize) -> Vec<usize> {
        let mut rows = vec![n_fields];
        for _ in 0..self.n_rounds() {
            let last = *rows.last().expect("non-empty");
            rows.push(pooled_rows(last, self.pool_height));
        }
        rows
    }

    /// `N_i = rows_i · m_r^i` per round.
    pub fn generated_per_round(&self, n_fields: usize) -> Vec<usize> {
        let rows = self.rows_chain(n_fields);
        self.new_maps
            .iter()
            .enumerate()
            .map(|(i, &m_r)| rows[i + 1] * m_r)
            .collect()
    }

    pub fn total_generated(&self, n_fields: usize) -> usize {
        self.generated_per_round(n_fields).iter().sum()
    }

    fn in_maps(&self, round: usize) -> usize {
        if round == 0 {
            1
        } else {
            self.feature_maps[round - 1]
        }
    }
}

/// How the new features of each round are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Convolution, pooling and recombination.
    Cnn,
    /// Convolution and pooling; pooled maps are read directly as fields.
    PooledOnly,
    /// A dense tanh stack whose hidden widths follow the pooled conv widths,
    /// with a per-round readout producing the same number of fields.
    Mlp,
}

#[derive(Debug, Clone)]
struct CnnRound {
    conv: Handle,
    conv_bn: Option<BnSite>,
    recomb: Option<(DenseSite, Option<BnSite>)>,
}

#[derive(Debug, Clone)]
struct MlpRound {
    hidden: DenseSite,
    hidden_bn: Option<BnSite>,
    readout: DenseSite,
    readout_bn: Option<BnSite>,
}

#[derive(Debug, Clone)]
enum Rounds {
    Cnn(Vec<CnnRound>),
    Mlp(Vec<MlpRound>),
}

/// Parameters are owned by the model's store; this keeps handles and shapes.
#[derive(Debug, Clone)]
pub struct FeatureGenerator {
    config: FeatureGenConfig,
    kind: GeneratorKind,
    n_fields: usize,
    k: usize,
    rounds: Rounds,
}

#[derive(Debug, Clone)]
enum RoundCache<T> {
    Cnn {
        x: Tensor<T>,
        c: Tensor<T>,
        conv_bn: Option<BnCache<T>>,
        argmax: Vec<u32>,
        s: Tensor<T>,
        r: Option<Tensor<T>>,
        recomb_bn: Option<BnCache<T>>,
    },
    Mlp {
        x: Tensor<T>,
        h: Tensor<T>,
        hidden_bn: Option<BnCache<T>>,
        r: Tensor<T>,
        readout_bn: Option<BnCache<T>>,
    },
}

/// Activations saved by [`FeatureGenerator::forward`].
#[derive(Debug, Clone)]
pub struct GenCache<T> {
    rounds: Vec<RoundCache<T>>,
    batch: usize,
}

impl<T: Real> GenCache<T> {
    /// Pool argmax choices of every round, the only discrete branches here.
    pub fn push_pattern(&self, h: &mut PatternHasher) {
        for r in &self.rounds {
            if let RoundCache::Cnn { argmax, .. } = r {
                for &a in argmax {
                    h.push(a as u64);
                }
            }
        }
    }
}

fn wrap<T>(round: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| FgcnnError::Round {
        round: round + 1,
        source: Box::new(e),
    })
}

fn tanh_backward<T: Real>(dy: &Tensor<T>, y: &Tensor<T>) -> Tensor<T> {
    let mut d = dy.clone();
    for (g, &o) in d.data_mut().iter_mut().zip(y.data()) {
        *g *= tanh_grad_from_output(o);
    }
    d
}

fn optional_bn<T: Real>(
    site: Option<&BnSite>,
    params: &TensorStore<T>,
    state: &TensorStore<T>,
    z: Tensor<T>,
    mode: BnMode,
) -> Result<(Tensor<T>, Option<BnCache<T>>)> {
    match site {
        Some(bn) => bn.forward(params, state, &z, mode),
        None => Ok((z, None)),
    }
}

fn optional_bn_backward<T: Real>(
    site: Option<&BnSite>,
    cache: Option<&BnCache<T>>,
    params: &TensorStore<T>,
    grads: &mut TensorStore<T>,
    dz: Tensor<T>,
) -> Result<Tensor<T>> {
    match (site, cache) {
        (Some(bn), Some(c)) => bn.backward(params, grads, &dz, c),
        (Some(_), None) => Err(FgcnnError::MissingCache("batch-norm statistics (infer-mode pass)")),
        (None, _) => Ok(dz),
    }
}

/// Applies `f` to a `[rows, d]` view of a tensor and restores its shape.
fn with_rows<T: Real>(
    x: Tensor<T>,
    d: usize,
    f: impl FnOnce(Tensor<T>) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    let shape = x.shape().to_vec();
    let rows = x.len() / d;
    f(x.reshape(&[rows, d])?)?.reshape(&shape)
}

impl FeatureGenerator {
    /// Allocates this generator's tensors into `params` (and BN running
    /// statistics into `state`), initialized from `seed`.
    pub fn new<T: Real>(
        config: &FeatureGenConfig,
        kind: GeneratorKind,
        n_fields: usize,
        k: usize,
        params: &mut TensorStore<T>,
        state: &mut TensorStore<T>,
        seed: u64,
    ) -> Result<Self> {
        config.validate(n_fields)?;
        if k == 0 {
            return Err(FgcnnError::Config("embedding size k must be at least 1".into()));
        }
        if kind == GeneratorKind::PooledOnly && config.feature_maps != config.new_maps {
            return Err(FgcnnError::Config(format!(
                "reading pooled maps as new features needs feature maps {:?} to equal new maps {:?}",
                config.feature_maps, config.new_maps
            )));
        }
        let rows = config.rows_chain(n_fields);
        let bn = config.batch_norm;
        let rounds = match kind {
            GeneratorKind::Cnn | GeneratorKind::PooledOnly => {
                let mut out = Vec::new();
                for i in 0..config.n_rounds() {
                    let p = format!("featgen.round{}", i + 1);
                    let (h, m_in, m_out) =
                        (config.kernel_heights[i], config.in_maps(i), config.feature_maps[i]);
                    let name = format!("{p}.conv.weight");
                    let conv = params.push(
                        name.clone(),
                        glorot(&[h, 1, m_in, m_out], h * m_in, h * m_out, seed, &name),
                    );
                    let conv_bn = bn.then(|| BnSite::alloc(params, state, &format!("{p}.conv.bn"), m_out));
                    let recomb = (kind == GeneratorKind::Cnn).then(|| {
                        let d_in = rows[i + 1] * k * m_out;
                        let d_out = rows[i + 1] * k * config.new_maps[i];
                        let dense = DenseSite::alloc(params, &format!("{p}.recomb"), d_in, d_out, !bn, seed);
                        let rbn = bn.then(|| BnSite::alloc(params, state, &format!("{p}.recomb.bn"), d_out));
                        (dense, rbn)
                    });
                    out.push(CnnRound { conv, conv_bn, recomb });
                }
                Rounds::Cnn(out)
            }
            GeneratorKind::Mlp => {
                let mut out = Vec::new();
                let mut d_in = n_fields * k;
                for i in 0..config.n_rounds() {
                    let p = format!("featgen.round{}.mlp", i + 1);
                    let width = rows[i + 1] * k * config.feature_maps[i];
                    let n_out = rows[i + 1] * config.new_maps[i] * k;
                    let hidden = DenseSite::alloc(params, &format!("{p}.hidden"), d_in, width, !bn, seed);
                    let hidden_bn = bn.then(|| BnSite::alloc(params, state, &format!("{p}.hidden.bn"), width));
                    let readout = DenseSite::alloc(params, &format!("{p}.readout"), width, n_out, !bn, seed);
                    let readout_bn = bn.then(|| BnSite::alloc(params, state, &format!("{p}.readout.bn"), n_out));
                    out.push(MlpRound { hidden, hidden_bn, readout, readout_bn });
                    d_in = width;
                }
                Rounds::Mlp(out)
            }
        };
        Ok(FeatureGenerator {
            config: config.clone(),
            kind,
            n_fields,
            k,
            rounds,
        })
    }

    pub fn config(&self) -> &FeatureGenConfig {
        &self.config
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    pub fn generated_per_round(&self) -> Vec<usize> {
        let rows = self.config.rows_chain(self.n_fields);
        (0..self.config.n_rounds())
            .map(|i| match self.kind {
                GeneratorKind::PooledOnly => rows[i + 1] * self.config.feature_maps[i],
                _ => rows[i + 1] * self.config.new_maps[i],
            })
            .collect()
    }

    pub fn n_generated(&self) -> usize {
        self.generated_per_round().iter().sum()
    }

    /// `E: [batch, n_f, k]` to `R: [batch, N, k]`.
    pub fn forward<T: Real>(
        &self,
        params: &TensorStore<T>,
        state: &TensorStore<T>,
        e: &Tensor<T>,
        mode: BnMode,
    ) -> Result<(Tensor<T>, GenCache<T>)> {
        if e.ndim() != 3 || e.dim(1) != self.n_fields || e.dim(2) != self.k {
            return Err(FgcnnError::shape(
                "generate",
                format!("input {:?}, expected [batch, {}, {}]", e.shape(), self.n_fields, self.k),
            ));
        }
        let bsz = e.dim(0);
        let k = self.k;
        let mut outputs = Vec::with_capacity(self.config.n_rounds());
        let mut caches = Vec::with_capacity(self.config.n_rounds());
        match &self.rounds {
            Rounds::Cnn(rounds) => {
                let mut x = e.clone().reshape(&[bsz, self.n_fields, k, 1])?;
                for (i, r) in rounds.iter().enumerate() {
                    let m_c = self.config.feature_maps[i];
                    let step = || -> Result<_> {
                        let pre = conv_linear(&x, params.get(r.conv))?;
                        let (pre, conv_bn) = match &r.conv_bn {
                            Some(bn) => {
                                let mut cache = None;
                                let y = with_rows(pre, m_c, |v| {
                                    let (y, c) = bn.forward(params, state, &v, mode)?;
                                    cache = c;
                                    Ok(y)
                                })?;
                                (y, cache)
                            }
                            None => (pre, None),
                        };
                        let c = pre.map(tanh);
                        let Pooled { out: s, argmax } = pool_forward(&c, self.config.pool_height)?;
                        let (fields, r_act, recomb_bn) = match &r.recomb {
                            Some((dense, rbn)) => {
                                let z = dense.forward(params, &recombine::flatten_maps(&s)?)?;
                                let (z, bc) = optional_bn(rbn.as_ref(), params, state, z, mode)?;
                                let act = z.map(tanh);
                                (recombine::units_to_fields(act.clone(), k)?, Some(act), bc)
                            }
                            None => (maps_to_fields(&s), None, None),
                        };
                        Ok((fields, c, conv_bn, argmax, s, r_act, recomb_bn))
                    };
                    let (fields, c, conv_bn, argmax, s, r_act, recomb_bn) = wrap(i, step())?;
                    outputs.push(fields);
                    let next = s.clone();
                    caches.push(RoundCache::Cnn {
                        x,
                        c,
                        conv_bn,
                        argmax,
                        s,
                        r: r_act,
                        recomb_bn,
                    });
                    x = next;
                }
            }
            Rounds::Mlp(rounds) => {
                let mut x = e.clone().reshape(&[bsz, self.n_fields * k])?;
                for (i, r) in rounds.iter().enumerate() {
                    let step = || -> Result<_> {
                        let z = r.hidden.forward(params, &x)?;
                        let (z, hidden_bn) = optional_bn(r.hidden_bn.as_ref(), params, state, z, mode)?;
                        let h = z.map(tanh);
                        let z = r.readout.forward(params, &h)?;
                        let (z, readout_bn) =
                            optional_bn(r.readout_bn.as_ref(), params, state, z, mode)?;
                        let out = z.map(tanh);
                        Ok((h, hidden_bn, out, readout_bn))
                    };
                    let (h, hidden_bn, out, readout_bn) = wrap(i, step())?;
                    outputs.push(wrap(i, recombine::units_to_fields(out.clone(), k))?);
                    let next = h.clone();
                    caches.push(RoundCache::Mlp {
                        x,
                        h,
                        hidden_bn,
                        r: out,
                        readout_bn,
                    });
                    x = next;
                }
            }
        }
        let refs: Vec<&Tensor<T>> = outputs.iter().collect();
        Ok((
            concat_fields(&refs)?,
            GenCache {
                rounds: caches,
                batch: bsz,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dE`.
    pub fn backward<T: Real>(
        &self,
        params: &TensorStore<T>,
        grads: &mut TensorStore<T>,
        cache: &GenCache<T>,
        d_r: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let per_round = self.generated_per_round();
        let bsz = cache.batch;
        let k = self.k;
        if d_r.shape() != [bsz, per_round.iter().sum(), k] || cache.rounds.len() != per_round.len() {
            return Err(FgcnnError::shape(
                "generate_backward",
                format!("grad {:?} for {} generated fields", d_r.shape(), self.n_generated()),
            ));
        }
        let d_rounds = split_fields(d_r, &per_round)?;
        // Gradient flowing into the input of round i + 1, i.e. round i's pooled maps.
        let mut d_next: Option<Tensor<T>> = None;
        match &self.rounds {
            Rounds::Cnn(rounds) => {
                for i in (0..rounds.len()).rev() {
                    let r = &rounds[i];
                    let RoundCache::Cnn { x, c, conv_bn, argmax, s, r: r_act, recomb_bn } =
                        &cache.rounds[i]
                    else {
                        return Err(FgcnnError::MissingCache("convolutional round"));
                    };
                    let mut step = || -> Result<Tensor<T>> {
                        let mut ds = match &r.recomb {
                            Some((dense, rbn)) => {
                                let act = r_act.as_ref().ok_or(FgcnnError::MissingCache("recombination"))?;
                                let dz = tanh_backward(&d_rounds[i].clone().reshape(act.shape())?, act);
                                let dz = optional_bn_backward(rbn.as_ref(), recomb_bn.as_ref(), params, grads, dz)?;
                                let flat = recombine::flatten_maps(s)?;
                                dense.backward(params, grads, &flat, &dz)?.reshape(s.shape())?
                            }
                            None => fields_to_maps(&d_rounds[i], s.shape())?,
                        };
                        if let Some(d) = d_next.take() {
                            ds.add_assign(&d)?;
                        }
                        let dc = pool_backward(&ds, argmax, c.shape())?;
                        let mut dpre = tanh_backward(&dc, c);
                        if let Some(bn) = &r.conv_bn {
                            let bc = conv_bn
                                .as_ref()
                                .ok_or(FgcnnError::MissingCache("batch-norm statistics (infer-mode pass)"))?;
                            dpre = with_rows(dpre, bn.dim, |v| bn.backward(params, grads, &v, bc))?;
                        }
                        let (dx, dw) = conv_linear_backward(x, params.get(r.conv), &dpre)?;
                        grads.get_mut(r.conv).add_assign(&dw)?;
                        Ok(dx)
                    };
                    d_next = Some(wrap(i, step())?);
                }
            }
            Rounds::Mlp(rounds) => {
                for i in (0..rounds.len()).rev() {
                    let r = &rounds[i];
                    let RoundCache::Mlp { x, h, hidden_bn, r: out, readout_bn } = &cache.rounds[i]
                    else {
                        return Err(FgcnnError::MissingCache("dense round"));
                    };
                    let mut step = || -> Result<Tensor<T>> {
                        let dz = tanh_backward(&d_rounds[i].clone().reshape(out.shape())?, out);
                        let dz = optional_bn_backward(r.readout_bn.as_ref(), readout_bn.as_ref(), params, grads, dz)?;
                        let mut dh = r.readout.backward(params, grads, h, &dz)?;
                        if let Some(d) = d_next.take() {
                            dh.add_assign(&d)?;
                        }
                        let dz = tanh_backward(&dh, h);
                        let dz = optional_bn_backward(r.hidden_bn.as_ref(), hidden_bn.as_ref(), params, grads, dz)?;
                        r.hidden.backward(params, grads, x, &dz)
                    };
                    d_next = Some(wrap(i, step())?);
                }
            }
        }
        d_next
            .expect("at least one round")
            .reshape(&[bsz, self.n_fields, k])
    }

    /// Folds train-mode batch statistics into the running statistics.
    pub fn commit_bn<T: Real>(&self, state: &mut TensorStore<T>, cache: &GenCache<T>) {
        let commit = |state: &mut TensorStore<T>, site: &Option<BnSite>, c: &Option<BnCache<T>>| {
            if let (Some(s), Some(c)) = (site, c) {
                s.commit(state, c);
            }
        };
        match &self.rounds {
            Rounds::Cnn(rounds) => {
                for (r, rc) in rounds.iter().zip(&cache.rounds) {
                    if let RoundCache::Cnn { conv_bn, recomb_bn, .. } = rc {
                        commit(state, &r.conv_bn, conv_bn);
                        if let Some((_, rbn)) = &r.recomb {
                            commit(state, rbn, recomb_bn);
                        }
                    }
                }
            }
            Rounds::Mlp(rounds) => {
                for (r, rc) in rounds.iter().zip(&cache.rounds) {
                    if let RoundCache::Mlp { hidden_bn, readout_bn, .. } = rc {
                        commit(state, &r.hidden_bn, hidden_bn);
                        commit(state, &r.readout_bn, readout_bn);
                    }
                }
            }
        }
    }
}

/// Concatenates `[batch, n_i, k]` tensors along the field axis.
pub fn concat_fields<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or(FgcnnError::Empty("field concatenation"))?;
    let (bsz, k) = (first.dim(0), first.dim(2));
    for p in parts {
        if p.ndim() != 3 || p.dim(0) != bsz || p.dim(2) != k {
            return Err(FgcnnError::shape(
                "concat_fields",
                format!("{:?} against [{bsz}, _, {k}]", p.shape()),
            ));
        }
    }
    let total: usize = parts.iter().map(|p| p.dim(1)).sum();
    let mut data = Vec::with_capacity(bsz * total * k);
    for b in 0..bsz {
        for p in parts {
            let w = p.dim(1) * k;
            data.extend_from_slice(&p.data()[b * w..(b + 1) * w]);
        }
    }
    Tensor::from_vec(&[bsz, total, k], data)
}

/// Inverse of [`concat_fields`] given the per-part field counts.
pub fn split_fields<T: Real>(x: &Tensor<T>, counts: &[usize]) -> Result<Vec<Tensor<T>>> {
    if x.ndim() != 3 || counts.iter().sum::<usize>() != x.dim(1) {
        return Err(FgcnnError::shape(
            "split_fields",
            format!("{:?} into {counts:?}", x.shape()),
        ));
    }
    let (bsz, total, k) = (x.dim(0), x.dim(1), x.dim(2));
    let mut out = Vec::with_capacity(counts.len());
    let mut start = 0;
    for &n in counts {
        let mut data = Vec::with_capacity(bsz * n * k);
        for b in 0..bsz {
            let base = (b * total + start) * k;
            data.extend_from_slice(&x.data()[base..base + n * k]);
        }
        out.push(Tensor::from_vec(&[bsz, n, k], data)?);
        start += n;
    }
    Ok(out)
}

/// The augmented matrix: raw fields first, then generated ones.
pub fn augment<T: Real>(e_prime: &Tensor<T>, r: &Tensor<T>) -> Result<Tensor<T>> {
    if e_prime.ndim() != 3 || r.ndim() != 3 || e_prime.dim(2) != r.dim(2) {
        return Err(FgcnnError::shape(
            "augment",
            format!("raw {:?}, generated {:?}", e_prime.shape(), r.shape()),
        ));
    }
    concat_fields(&[e_prime, r])
}
