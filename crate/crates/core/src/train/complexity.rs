//! Closed-form parameter and multiply counts, checked against the tensors a
//! constructed model actually allocates.

use std::fmt;

use serde::Serialize;

use crate::classifier::ClassifierKind;
use crate::data::SchemaLayout;
use crate::error::Result;
use crate::model::{Model, ModelConfig, Variant};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComponentCount {
    /// Name prefix of the tensors this row accounts for.
    pub component: String,
    pub formula: usize,
    pub enumerated: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComplexityReport {
    pub n_fields: usize,
    pub t_f: usize,
    pub k: usize,
    /// Every pooled row count divides exactly.
    pub divisible: bool,
    pub generated_per_round: Vec<usize>,
    /// Fields reaching the classifier.
    pub t: usize,
    pub components: Vec<ComponentCount>,
    /// Embedding, feature-generation and classifier parameters by formula.
    pub s0: usize,
    pub s1: usize,
    pub s2: usize,
    pub enumerated_total: usize,
    /// Per-instance multiplies in feature generation and in the classifier.
    pub t1: usize,
    pub t2: usize,
}

impl ComplexityReport {
    pub fn consistent(&self) -> bool {
        self.components.iter().all(|c| c.formula == c.enumerated)
            && self.s0 + self.s1 + self.s2 == self.enumerated_total
    }
}

/// Pooled rows per round. Divisible configs use `n_f / h_p^i` directly.
fn pooled_rows(n_f: usize, h_p: usize, n_c: usize) -> (Vec<usize>, bool) {
    let divisible = (1..=n_c).all(|i| n_f % h_p.pow(i as u32) == 0);
    let rows = if divisible {
        (0..=n_c).map(|i| n_f / h_p.pow(i as u32)).collect()
    } else {
        let mut r = vec![n_f];
        for i in 0..n_c {
            r.push(r[i].div_ceil(h_p));
        }
        r
    };
    (rows, divisible)
}

pub fn complexity_report(config: &ModelConfig, layout: &SchemaLayout) -> Result<ComplexityReport> {
    let model = Model::<f32>::new(config, layout, 0)?;
    let k = config.embedding_size;
    let n_f = layout.n_fields();
    let t_f = layout.total_features();
    let fg = &config.feature_generation;
    let n_c = fg.n_rounds();
    let (rows, divisible) = pooled_rows(n_f, fg.pool_height, n_c);
    let variant = config.variant;
    let has_gen = variant != Variant::RemoveNew;
    let bn_affine = |dim: usize, bn: bool| if bn { 2 * dim } else { dim };

    let mut components = Vec::new();
    let mut push = |name: String, formula: usize| components.push((name, formula));

    let tables = match variant {
        Variant::Full | Variant::MlpFeatgen | Variant::NoRecombination => 2,
        Variant::RemoveRaw | Variant::RemoveNew => 1,
    };
    let s0 = tables * t_f * k;
    push("embedding".into(), s0);

    let mut generated = Vec::new();
    let (mut s1, mut t1) = (0, 0);
    if has_gen {
        let mut d_in = n_f * k;
        for i in 0..n_c {
            let p = format!("featgen.round{}", i + 1);
            let (h, m_c, m_r) = (fg.kernel_heights[i], fg.feature_maps[i], fg.new_maps[i]);
            let m_prev = if i == 0 { 1 } else { fg.feature_maps[i - 1] };
            let bn = fg.batch_norm;
            match variant {
                Variant::MlpFeatgen => {
                    let n_i = rows[i + 1] * m_r;
                    let width = rows[i + 1] * k * m_c;
                    let c = d_in * width + bn_affine(width, bn) + width * n_i * k + bn_affine(n_i * k, bn);
                    push(format!("{p}.mlp"), c);
                    s1 += c;
                    t1 += d_in * width + width * n_i * k;
                    d_in = width;
                    generated.push(n_i);
                }
                _ => {
                    let conv = h * m_prev * m_c + if bn { 2 * m_c } else { 0 };
                    push(format!("{p}.conv"), conv);
                    s1 += conv;
                    // convolution over the unpooled rows, then pooling
                    t1 += rows[i] * k * m_c * h * m_prev + rows[i] * k * m_c;
                    if variant == Variant::NoRecombination {
                        generated.push(rows[i + 1] * m_c);
                    } else {
                        let n_i = rows[i + 1] * m_r;
                        let weights = n_i * n_i * k * k * m_c / m_r;
                        let c = weights + bn_affine(n_i * k, bn);
                        push(format!("{p}.recomb"), c);
                        s1 += c;
                        t1 += weights;
                        generated.push(n_i);
                    }
                }
            }
        }
    }

    let raw = if variant == Variant::RemoveRaw { 0 } else { n_f };
    let t = raw + generated.iter().sum::<usize>();
    let clf = &config.classifier;
    let (mut s2, mut t2) = (0, 0);
    if clf.kind == ClassifierKind::Ipnn || clf.kind.has_fm_terms() {
        t2 += t * t.saturating_sub(1) / 2 * k;
    }
    if clf.kind.has_mlp() {
        let first = match clf.kind {
            ClassifierKind::Ipnn => t * t.saturating_sub(1) / 2 + t * k,
            _ => t * k,
        };
        let mut d_in = first;
        for (j, &h) in clf.hidden_sizes.iter().enumerate() {
            let weights = d_in * h;
            let c = weights + bn_affine(h, clf.batch_norm);
            push(format!("classifier.hidden{}", j + 1), c);
            s2 += c;
            t2 += weights;
            d_in = h;
        }
        push("classifier.output".into(), d_in + 1);
        s2 += d_in + 1;
        t2 += d_in;
    }
    if clf.kind.has_fm_terms() {
        push("classifier.fm".into(), t_f + 1);
        s2 += t_f + 1;
    }

    let inventory = model.parameter_inventory();
    let mut matched = vec![false; inventory.len()];
    let mut components: Vec<ComponentCount> = components
        .into_iter()
        .map(|(name, formula)| {
            let mut enumerated = 0;
            for (i, (n, shape)) in inventory.iter().enumerate() {
                if n.strip_prefix(name.as_str()).is_some_and(|rest| rest.starts_with('.')) {
                    matched[i] = true;
                    enumerated += shape.iter().product::<usize>();
                }
            }
            ComponentCount {
                component: name,
                formula,
                enumerated,
            }
        })
        .collect();
    components.extend(
        inventory
            .iter()
            .zip(&matched)
            .filter(|(_, &m)| !m)
            .map(|((n, shape), _)| ComponentCount {
                component: n.clone(),
                formula: 0,
                enumerated: shape.iter().product(),
            }),
    );

    Ok(ComplexityReport {
        n_fields: n_f,
        t_f,
        k,
        divisible,
        generated_per_round: generated,
        t,
        components,
        s0,
        s1,
        s2,
        enumerated_total: model.num_parameters(),
        t1,
        t2,
    })
}

impl fmt::Display for ComplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "n_f = {}  t_f = {}  k = {}  T = {}  N per round = {:?}{}",
            self.n_fields,
            self.t_f,
            self.k,
            self.t,
            self.generated_per_round,
            if self.divisible { "" } else { "  (ceil pooling)" }
        )?;
        writeln!(f, "{:<28} {:>14} {:>14}", "component", "formula", "allocated")?;
        for c in &self.components {
            let flag = if c.formula == c.enumerated { "" } else { "  MISMATCH" };
            writeln!(f, "{:<28} {:>14} {:>14}{flag}", c.component, c.formula, c.enumerated)?;
        }
        writeln!(f, "s0 (embedding)          {:>14}", self.s0)?;
        writeln!(f, "s1 (feature generation) {:>14}", self.s1)?;
        writeln!(f, "s2 (classifier)         {:>14}", self.s2)?;
        writeln!(
            f,
            "total                   {:>14} (allocated {})",
            self.s0 + self.s1 + self.s2,
            self.enumerated_total
        )?;
        writeln!(f, "t1 multiplies/instance  {:>14}", self.t1)?;
        write!(f, "t2 multiplies/instance  {:>14}", self.t2)
    }
}
