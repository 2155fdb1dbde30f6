//! The assembled CTR model: dual embeddings, optional feature generation and
//! a deep classifier over the augmented matrix.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{predict, Classifier, ClassifierCache, ClassifierConfig, ClassifierKind};
use crate::data::{Batch, SchemaLayout};
use crate::embedding::{assemble_from_weights, backward_embedding, CLF_TABLE, GEN_TABLE};
use crate::error::{FgcnnError, Result};
use crate::featgen::{augment, split_fields, FeatureGenConfig, FeatureGenerator, GenCache, GeneratorKind};
use crate::nn::batchnorm::BnMode;
use crate::nn::gradcheck::PatternHasher;
use crate::nn::init::glorot;
use crate::store::{Handle, TensorStore};
use crate::tensor::{Real, Tensor};

/// Structural variants compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Only generated features reach the classifier.
    RemoveRaw,
    /// No feature generation; the classifier sees raw embeddings only.
    RemoveNew,
    /// Dense tanh layers instead of convolution, pooling and recombination.
    MlpFeatgen,
    /// Pooled maps serve as the new features directly.
    NoRecombination,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::RemoveRaw,
        Variant::RemoveNew,
        Variant::MlpFeatgen,
        Variant::NoRecombination,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::RemoveRaw => "remove_raw",
            Variant::RemoveNew => "remove_new",
            Variant::MlpFeatgen => "mlp_featgen",
            Variant::NoRecombination => "no_recombination",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| FgcnnError::Config(format!("unknown variant `{s}`")))
    }

    fn generator(self) -> Option<GeneratorKind> {
        match self {
            Variant::Full | Variant::RemoveRaw => Some(GeneratorKind::Cnn),
            Variant::MlpFeatgen => Some(GeneratorKind::Mlp),
            Variant::NoRecombination => Some(GeneratorKind::PooledOnly),
            Variant::RemoveNew => None,
        }
    }

    fn uses_raw(self) -> bool {
        self != Variant::RemoveRaw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding_size: usize,
    pub variant: Variant,
    pub feature_generation: FeatureGenConfig,
    pub classifier: ClassifierConfig,
}

impl ModelConfig {
    /// Small FGCNN+IPNN configuration for 8-field synthetic data.
    pub fn desk_default() -> Self {
        ModelConfig {
            embedding_size: 8,
            variant: Variant::Full,
            feature_generation: FeatureGenConfig::uniform(2, 3, 3, 3, 2),
            classifier: ClassifierConfig::new(ClassifierKind::Ipnn, vec![64, 32]),
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        ModelConfig {
            variant,
            ..self.clone()
        }
    }

    pub fn with_classifier(&self, kind: ClassifierKind) -> Self {
        let mut c = self.clone();
        c.classifier.kind = kind;
        c
    }

    /// Fields reaching the classifier: `n_f` raw (unless removed) plus `N` generated.
    pub fn classifier_fields(&self, n_fields: usize) -> usize {
        let raw = if self.variant.uses_raw() { n_fields } else { 0 };
        let generated = match self.variant.generator() {
            None => 0,
            Some(GeneratorKind::PooledOnly) => {
                let rows = self.feature_generation.rows_chain(n_fields);
                (0..self.feature_generation.n_rounds())
                    .map(|i| rows[i + 1] * self.feature_generation.feature_maps[i])
                    .sum()
            }
            Some(_) => self.feature_generation.total_generated(n_fields),
        };
        raw + generated
    }
}

/// Parameters live in one ordered store; running BN statistics in another.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    layout: SchemaLayout,
    params: TensorStore<T>,
    state: TensorStore<T>,
    gen_table: Option<Handle>,
    clf_table: Option<Handle>,
    generator: Option<FeatureGenerator>,
    classifier: Classifier,
}

#[derive(Debug, Clone)]
struct ModelCache<T> {
    gen: Option<GenCache<T>>,
    aug: Tensor<T>,
    clf: ClassifierCache<T>,
    n_raw: usize,
    n_gen: usize,
}

/// Output of one forward pass, keeping what the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub logits: Vec<T>,
    pub probs: Vec<T>,
    cache: ModelCache<T>,
}

impl<T: Real> ForwardPass<T> {
    /// Fingerprint of every relu sign and pooling choice taken.
    pub fn pattern(&self) -> u64 {
        let mut h = PatternHasher::default();
        if let Some(g) = &self.cache.gen {
            g.push_pattern(&mut h);
        }
        self.cache.clf.push_pattern(&mut h);
        h.finish()
    }
}

fn table<T: Real>(params: &mut TensorStore<T>, layout: &SchemaLayout, k: usize, seed: u64, name: &str) -> Handle {
    let t_f = layout.total_features();
    params.push(name, glorot(&[t_f, k], t_f, k, seed, name))
}

impl<T: Real> Model<T> {
    pub fn new(config: &ModelConfig, layout: &SchemaLayout, seed: u64) -> Result<Self> {
        let k = config.embedding_size;
        if k == 0 {
            return Err(FgcnnError::Config("embedding size k must be at least 1".into()));
        }
        let n_f = layout.n_fields();
        if n_f == 0 {
            return Err(FgcnnError::Empty("schema fields"));
        }
        let mut params = TensorStore::new();
        let mut state = TensorStore::new();
        let kind = config.variant.generator();
        let gen_table = kind.map(|_| table(&mut params, layout, k, seed, GEN_TABLE));
        let clf_table = config
            .variant
            .uses_raw()
            .then(|| table(&mut params, layout, k, seed, CLF_TABLE));
        let generator = match kind {
            Some(kind) => Some(FeatureGenerator::new(
                &config.feature_generation,
                kind,
                n_f,
                k,
                &mut params,
                &mut state,
                seed,
            )?),
            None => None,
        };
        let t = config.classifier_fields(n_f);
        let classifier = Classifier::new(
            &config.classifier,
            t,
            k,
            layout.total_features(),
            &mut params,
            &mut state,
            seed,
        )?;
        Ok(Model {
            config: config.clone(),
            layout: layout.clone(),
            params,
            state,
            gen_table,
            clf_table,
            generator,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &SchemaLayout {
        &self.layout
    }

    pub fn params(&self) -> &TensorStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut TensorStore<T> {
        &mut self.params
    }

    pub fn state(&self) -> &TensorStore<T> {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut TensorStore<T> {
        &mut self.state
    }

    /// Handles of the embedding tables present in this variant.
    pub fn embedding_tables(&self) -> Vec<Handle> {
        self.gen_table.into_iter().chain(self.clf_table).collect()
    }

    pub fn n_generated(&self) -> usize {
        self.generator.as_ref().map_or(0, FeatureGenerator::n_generated)
    }

    /// `(name, shape)` for every learnable tensor, in allocation order.
    pub fn parameter_inventory(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    /// Same model at another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.cast(),
            state: self.state.cast(),
            gen_table: self.gen_table,
            clf_table: self.clf_table,
            generator: self.generator.clone(),
            classifier: self.classifier.clone(),
        }
    }

    pub fn forward(
        &self,
        batch: &Batch,
        mode: BnMode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardPass<T>> {
        let k = self.config.embedding_size;
        let raw = match self.clf_table {
            Some(h) => assemble_from_weights(batch, self.params.get(h), &self.layout)?,
            None => Tensor::zeros(&[batch.size, 0, k]),
        };
        let (generated, gen_cache) = match (&self.generator, self.gen_table) {
            (Some(g), Some(h)) => {
                let e = assemble_from_weights(batch, self.params.get(h), &self.layout)?;
                let (r, c) = g.forward(&self.params, &self.state, &e, mode)?;
                (r, Some(c))
            }
            _ => (Tensor::zeros(&[batch.size, 0, k]), None),
        };
        let (n_raw, n_gen) = (raw.dim(1), generated.dim(1));
        let aug = augment(&raw, &generated)?;
        let (logits, clf) = self.classifier.forward(
            &self.params,
            &self.state,
            &aug,
            batch,
            &self.layout,
            mode,
            rng,
        )?;
        Ok(ForwardPass {
            probs: predict(&logits),
            logits,
            cache: ModelCache {
                gen: gen_cache,
                aug,
                clf,
                n_raw,
                n_gen,
            },
        })
    }

    /// Gradients of the loss for `dlogits = dL/dlogit` per row, in a store
    /// shaped like [`Model::params`].
    pub fn backward(&self, batch: &Batch, pass: &ForwardPass<T>, dlogits: &[T]) -> Result<TensorStore<T>> {
        let c = &pass.cache;
        let mut grads = self.params.zeros_like();
        let d_aug = self.classifier.backward(
            &self.params,
            &mut grads,
            &c.clf,
            &c.aug,
            batch,
            &self.layout,
            dlogits,
        )?;
        let parts = split_fields(&d_aug, &[c.n_raw, c.n_gen])?;
        if let Some(h) = self.clf_table {
            backward_embedding(&parts[0], batch, &self.layout)?.add_to(grads.get_mut(h))?;
        }
        if let (Some(g), Some(h), Some(gc)) = (&self.generator, self.gen_table, &c.gen) {
            let de = g.backward(&self.params, &mut grads, gc, &parts[1])?;
            backward_embedding(&de, batch, &self.layout)?.add_to(grads.get_mut(h))?;
        }
        Ok(grads)
    }

    /// Folds a train-mode pass's batch statistics into the running statistics.
    pub fn commit_bn(&mut self, pass: &ForwardPass<T>) {
        if let (Some(g), Some(gc)) = (&self.generator, &pass.cache.gen) {
            g.commit_bn(&mut self.state, gc);
        }
        self.classifier.commit_bn(&mut self.state, &pass.cache.clf);
    }

    /// Click probabilities in inference mode, batch by batch.
    pub fn predict(&self, batches: &[Batch]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for b in batches {
            let pass = self.forward(b, BnMode::Infer, None)?;
            out.extend(pass.probs.iter().map(|p| p.as_f64()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
