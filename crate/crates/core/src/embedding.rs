//! Embedding tables over the flat one-hot feature space.
//!
//! Row `offset(field) + local_index` holds a feature's vector. A field's
//! embedding is its feature's row, or the sum of rows for a multivalent
//! field. The model keeps two tables of identical shape: one feeding feature
//! generation, one feeding the classifier's raw-feature input.

use std::collections::HashMap;

use crate::data::{Batch, SchemaLayout};
use crate::error::{FgcnnError, Result};
use crate::nn::init;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    pub weights: Tensor<T>,
}

impl<T: Real> EmbeddingTable<T> {
    /// Glorot-uniform over the whole `[t_f, k]` table.
    pub fn glorot(layout: &SchemaLayout, k: usize, seed: u64, name: &str) -> Result<Self> {
        if k < 1 {
            return Err(FgcnnError::Config("embedding size must be at least 1".into()));
        }
        let t_f = layout.total_features();
        Ok(EmbeddingTable {
            weights: init::glorot(&[t_f, k], t_f, k, seed, name),
        })
    }

    pub fn k(&self) -> usize {
        self.weights.dim(1)
    }

    pub fn rows(&self) -> usize {
        self.weights.dim(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualEmbeddings<T> {
    pub gen_table: EmbeddingTable<T>,
    pub clf_table: EmbeddingTable<T>,
}

pub const GEN_TABLE: &str = "embedding.gen";
pub const CLF_TABLE: &str = "embedding.clf";

pub fn init_embeddings<T: Real>(layout: &SchemaLayout, k: usize, seed: u64) -> Result<DualEmbeddings<T>> {
    Ok(DualEmbeddings {
        gen_table: EmbeddingTable::glorot(layout, k, seed, GEN_TABLE)?,
        clf_table: EmbeddingTable::glorot(layout, k, seed, CLF_TABLE)?,
    })
}

struct EmbeddingView<'a, T> {
    weights: &'a Tensor<T>,
}

impl<T: Real> EmbeddingView<'_, T> {
    fn k(&self) -> usize {
        self.weights.dim(1)
    }

    fn rows(&self) -> usize {
        self.weights.dim(0)
    }
}

fn global_row(layout: &SchemaLayout, offsets: &[usize], field: usize, local: u32) -> Result<usize> {
    let card = layout.cardinalities[field];
    if local as usize >= card {
        return Err(FgcnnError::Lookup {
            field: layout.field_names[field].clone(),
            index: local,
            cardinality: card,
        });
    }
    Ok(offsets[field] + local as usize)
}

/// `[batch, n_f, k]` field embeddings; masked slots contribute nothing.
pub fn assemble_embedding_matrix<T: Real>(
    batch: &Batch,
    table: &EmbeddingTable<T>,
    layout: &SchemaLayout,
) -> Result<Tensor<T>> {
    assemble_from_weights(batch, &table.weights, layout)
}

/// As [`assemble_embedding_matrix`] over a bare `[t_f, k]` weight tensor.
pub fn assemble_from_weights<T: Real>(
    batch: &Batch,
    weights: &Tensor<T>,
    layout: &SchemaLayout,
) -> Result<Tensor<T>> {
    let table = EmbeddingView { weights };
    if batch.n_fields != layout.n_fields() {
        return Err(FgcnnError::shape(
            "assemble_embedding_matrix",
            format!("batch has {} fields, schema {}", batch.n_fields, layout.n_fields()),
        ));
    }
    if table.rows() != layout.total_features() {
        return Err(FgcnnError::shape(
            "assemble_embedding_matrix",
            format!("table has {} rows, schema {}", table.rows(), layout.total_features()),
        ));
    }
    let k = table.k();
    let n_f = batch.n_fields;
    let offsets = layout.offsets();
    let mut out = Tensor::zeros(&[batch.size, n_f, k]);
    let w = table.weights.data();
    let od = out.data_mut();
    for b in 0..batch.size {
        for f in 0..n_f {
            let dst = &mut od[(b * n_f + f) * k..(b * n_f + f + 1) * k];
            for local in batch.values(b, f) {
                let row = global_row(layout, &offsets, f, local)?;
                for (o, &v) in dst.iter_mut().zip(&w[row * k..(row + 1) * k]) {
                    *o += v;
                }
            }
        }
    }
    Ok(out)
}

/// Gradient restricted to the table rows a batch touched, in first-touch order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRowGrad<T> {
    pub k: usize,
    pub rows: Vec<usize>,
    /// `rows.len() * k` values.
    pub values: Vec<T>,
}

impl<T: Real> SparseRowGrad<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn add_to(&self, dense: &mut Tensor<T>) -> Result<()> {
        if dense.ndim() != 2 || dense.dim(1) != self.k {
            return Err(FgcnnError::shape("SparseRowGrad::add_to", format!("{:?}", dense.shape())));
        }
        let k = self.k;
        let dd = dense.data_mut();
        for (i, &r) in self.rows.iter().enumerate() {
            for (d, &g) in dd[r * k..(r + 1) * k].iter_mut().zip(self.row(i)) {
                *d += g;
            }
        }
        Ok(())
    }

    pub fn to_dense(&self, n_rows: usize) -> Result<Tensor<T>> {
        let mut t = Tensor::zeros(&[n_rows, self.k]);
        self.add_to(&mut t)?;
        Ok(t)
    }
}

/// Adjoint of [`assemble_embedding_matrix`].
pub fn backward_embedding<T: Real>(
    grad_output: &Tensor<T>,
    batch: &Batch,
    layout: &SchemaLayout,
) -> Result<SparseRowGrad<T>> {
    if grad_output.ndim() != 3
        || grad_output.dim(0) != batch.size
        || grad_output.dim(1) != batch.n_fields
        || batch.n_fields != layout.n_fields()
    {
        return Err(FgcnnError::shape(
            "backward_embedding",
            format!(
                "grad {:?} for batch of {} x {} fields",
                grad_output.shape(),
                batch.size,
                batch.n_fields
            ),
        ));
    }
    let k = grad_output.dim(2);
    let n_f = batch.n_fields;
    let offsets = layout.offsets();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut grad = SparseRowGrad {
        k,
        rows: Vec::new(),
        values: Vec::new(),
    };
    let g = grad_output.data();
    for b in 0..batch.size {
        for f in 0..n_f {
            let src = &g[(b * n_f + f) * k..(b * n_f + f + 1) * k];
            for local in batch.values(b, f) {
                let row = global_row(layout, &offsets, f, local)?;
                let i = *slot.entry(row).or_insert_with(|| {
                    grad.rows.push(row);
                    grad.values.extend(std::iter::repeat(T::zero()).take(k));
                    grad.rows.len() - 1
                });
                for (d, &s) in grad.values[i * k..(i + 1) * k].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Instance;
    use crate::nn::gradcheck::{grad_check, GradCheckOptions, Probe};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layout(cards: &[usize]) -> SchemaLayout {
        SchemaLayout {
            field_names: (0..cards.len()).map(|i| format!("f{i}")).collect(),
            cardinalities: cards.to_vec(),
            digest: String::new(),
        }
    }

    fn random_table(rows: usize, k: usize, seed: u64) -> EmbeddingTable<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingTable {
            weights: Tensor::from_vec(&[rows, k], (0..rows * k).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap(),
        }
    }

    fn batch(rows: &[Vec<Vec<u32>>]) -> Batch {
        let inst: Vec<Instance> = rows
            .iter()
            .map(|f| Instance {
                fields: f.clone(),
                label: 0,
            })
            .collect();
        Batch::from_instances(&inst.iter().collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn univalent_lookup_copies_row() {
        let lay = layout(&[3, 4]);
        let table = random_table(7, 2, 1);
        let out = assemble_embedding_matrix(&batch(&[vec![vec![2], vec![1]]]), &table, &lay).unwrap();
        assert_eq!(&out.data()[0..2], table.weights.row(2));
        assert_eq!(&out.data()[2..4], table.weights.row(3 + 1));
    }

    #[test]
    fn multivalent_field_sums_rows() {
        let lay = layout(&[3, 4]);
        let table = random_table(7, 2, 2);
        let out = assemble_embedding_matrix(&batch(&[vec![vec![0], vec![1, 3]]]), &table, &lay).unwrap();
        for q in 0..2 {
            let expected = table.weights.row(4)[q] + table.weights.row(6)[q];
            assert_eq!(out.data()[2 + q], expected);
        }
    }

    #[test]
    fn zero_table_gives_zero_output() {
        let lay = layout(&[3, 4]);
        let table = EmbeddingTable {
            weights: Tensor::<f64>::zeros(&[7, 3]),
        };
        let out = assemble_embedding_matrix(&batch(&[vec![vec![2], vec![1, 2]]]), &table, &lay).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_index_names_field() {
        let lay = layout(&[3, 4]);
        let table = random_table(7, 2, 3);
        match assemble_embedding_matrix(&batch(&[vec![vec![0], vec![4]]]), &table, &lay) {
            Err(FgcnnError::Lookup { field, index, .. }) => {
                assert_eq!(field, "f1");
                assert_eq!(index, 4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn backward_copies_and_accumulates() {
        let lay = layout(&[3, 4]);
        let b = batch(&[vec![vec![1], vec![2]], vec![vec![1], vec![0]]]);
        let g = Tensor::from_vec(&[2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let sparse = backward_embedding(&g, &b, &lay).unwrap();
        assert_eq!(sparse.rows, vec![1, 5, 3]);
        // row 1 is shared by both instances
        assert_eq!(sparse.row(0), &[6.0, 8.0]);
        assert_eq!(sparse.row(1), &[3.0, 4.0]);
        let dense = sparse.to_dense(7).unwrap();
        assert_eq!(dense.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn backward_is_adjoint_and_assemble_is_linear() {
        let lay = layout(&[3, 4, 2]);
        let b = batch(&[
            vec![vec![1], vec![2, 3], vec![0]],
            vec![vec![2], vec![0], vec![1]],
            vec![vec![1], vec![3, 1], vec![1]],
        ]);
        let t1 = random_table(9, 3, 4);
        let t2 = random_table(9, 3, 5);
        let (alpha, beta) = (0.3, -1.7);
        let mix = EmbeddingTable {
            weights: Tensor::from_vec(
                &[9, 3],
                t1.weights.data().iter().zip(t2.weights.data()).map(|(a, b)| alpha * a + beta * b).collect(),
            )
            .unwrap(),
        };
        let lhs = assemble_embedding_matrix(&b, &mix, &lay).unwrap();
        let r1 = assemble_embedding_matrix(&b, &t1, &lay).unwrap();
        let r2 = assemble_embedding_matrix(&b, &t2, &lay).unwrap();
        for ((l, u), v) in lhs.data().iter().zip(r1.data()).zip(r2.data()) {
            assert!((l - (alpha * u + beta * v)).abs() < 1e-12);
        }

        let gout = random_table(9, 3, 6).weights.reshape(&[3, 3, 3]).unwrap();
        let back = backward_embedding(&gout, &b, &lay).unwrap().to_dense(9).unwrap();
        assert!((gout.dot(&r1) - back.dot(&t1.weights)).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let lay = layout(&[2, 3, 2]);
        let b = batch(&[vec![vec![1], vec![2], vec![0]], vec![vec![0], vec![2], vec![1]]]);
        let table = random_table(7, 2, 7);
        let weights = random_table(6, 2, 8).weights.reshape(&[2, 3, 2]).unwrap();
        let loss = |w: &[f64]| {
            let t = EmbeddingTable {
                weights: Tensor::from_vec(&[7, 2], w.to_vec()).unwrap(),
            };
            let e = assemble_embedding_matrix(&b, &t, &lay).unwrap();
            e.data().iter().zip(weights.data()).map(|(a, c)| (a * c).sin()).sum::<f64>()
        };
        let e = assemble_embedding_matrix(&b, &table, &lay).unwrap();
        let upstream = Tensor::from_vec(
            &[2, 3, 2],
            e.data().iter().zip(weights.data()).map(|(a, c)| c * (a * c).cos()).collect(),
        )
        .unwrap();
        let analytic = backward_embedding(&upstream, &b, &lay).unwrap().to_dense(7).unwrap();
        let report = grad_check(
            |p| Probe::smooth(loss(p)),
            table.weights.data(),
            analytic.data(),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn init_is_seeded_glorot() {
        let lay = layout(&[1000, 1000, 500]);
        let a: DualEmbeddings<f64> = init_embeddings(&lay, 40, 3).unwrap();
        let b: DualEmbeddings<f64> = init_embeddings(&lay, 40, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.gen_table.weights.shape(), &[2500, 40]);
        assert_ne!(a.gen_table, a.clf_table);
        let lim = (6.0f64 / 2540.0).sqrt();
        let data = a.gen_table.weights.data();
        assert!(data.iter().all(|v| v.abs() <= lim));
        // uniform on [-l, l]: sd of the mean over n entries is l / sqrt(3n)
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * lim / (3.0 * n).sqrt());
    }
}
