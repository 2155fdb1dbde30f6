use super::schema::{DatasetSchema, Instance};
use crate::error::{FgcnnError, Result};

/// Field reordering: position `j` of the output takes field `order[j]` of
/// the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || seen[i] {
                return Err(FgcnnError::Config(format!(
                    "{order:?} is not a permutation of 0..{}",
                    order.len()
                )));
            }
            seen[i] = true;
        }
        Ok(Permutation(order))
    }

    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(j, &i)| i == j)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (j, &i) in self.0.iter().enumerate() {
            inv[i] = j;
        }
        Permutation(inv)
    }

    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        self.0.iter().map(|&i| items[i].clone()).collect()
    }
}

pub fn permute_fields(
    instances: &[Instance],
    permutation: &Permutation,
    schema: &DatasetSchema,
) -> Result<(Vec<Instance>, DatasetSchema)> {
    if permutation.len() != schema.n_fields() {
        return Err(FgcnnError::Config(format!(
            "permutation over {} fields applied to a {}-field schema",
            permutation.len(),
            schema.n_fields()
        )));
    }
    let data = instances
        .iter()
        .map(|inst| {
            if inst.fields.len() != permutation.len() {
                return Err(FgcnnError::shape(
                    "permute_fields",
                    format!("instance has {} fields", inst.fields.len()),
                ));
            }
            Ok(Instance {
                fields: permutation.apply(&inst.fields),
                label: inst.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let schema = DatasetSchema {
        fields: permutation.apply(&schema.fields),
        min_count: schema.min_count,
    };
    Ok((data, schema))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::FieldSchema;
    use proptest::prelude::*;

    fn fixture(n_f: usize) -> (Vec<Instance>, DatasetSchema) {
        let schema = DatasetSchema {
            fields: (0..n_f)
                .map(|f| FieldSchema::new(format!("f{f}"), vec![format!("t{f}")], false))
                .collect(),
            min_count: 1,
        };
        let data = (0..6)
            .map(|i| Instance {
                fields: (0..n_f).map(|f| vec![((i * 7 + f) % 2) as u32]).collect(),
                label: (i % 2) as u8,
            })
            .collect();
        (data, schema)
    }

    #[test]
    fn identity_is_noop() {
        let (data, schema) = fixture(4);
        let (d, s) = permute_fields(&data, &Permutation::identity(4), &schema).unwrap();
        assert_eq!(d, data);
        assert_eq!(s, schema);
    }

    #[test]
    fn reversal_moves_field_zero_to_end() {
        let (data, schema) = fixture(4);
        let rev = Permutation::new(vec![3, 2, 1, 0]).unwrap();
        let (d, s) = permute_fields(&data, &rev, &schema).unwrap();
        assert_eq!(s.fields[3].name, "f0");
        for (a, b) in d.iter().zip(&data) {
            assert_eq!(a.fields[3], b.fields[0]);
        }
    }

    #[test]
    fn rejects_non_bijection() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
    }

    proptest! {
        #[test]
        fn inverse_restores_data_and_schema(perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle()) {
            let (data, schema) = fixture(6);
            let p = Permutation::new(perm).unwrap();
            let (d, s) = permute_fields(&data, &p, &schema).unwrap();
            let (d2, s2) = permute_fields(&d, &p.inverse(), &s).unwrap();
            prop_assert_eq!(d2, data);
            prop_assert_eq!(s2.digest(), schema.digest());
        }
    }
}
