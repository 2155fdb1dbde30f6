use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FgcnnError, Result};

/// Index reserved in every field for tokens below the frequency threshold
/// and for tokens never seen at fit time.
pub const DUMMY_INDEX: u32 = 0;
pub const DUMMY_TOKEN: &str = "other";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRow {
    /// One entry per field; multivalent fields may carry several tokens.
    pub values: Vec<Vec<String>>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    pub field_names: Vec<String>,
    pub rows: Vec<RawRow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSchema {
    pub name: String,
    /// Retained tokens; token `tokens[i]` has index `i + 1`.
    pub tokens: Vec<String>,
    pub token_to_index: HashMap<String, u32>,
    pub multivalent: bool,
}

impl FieldSchema {
    pub fn new(name: impl Into<String>, tokens: Vec<String>, multivalent: bool) -> Self {
        let token_to_index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32 + 1))
            .collect();
        FieldSchema {
            name: name.into(),
            tokens,
            token_to_index,
            multivalent,
        }
    }

    /// Retained tokens plus the dummy.
    pub fn cardinality(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn encode(&self, token: &str) -> u32 {
        self.token_to_index.get(token).copied().unwrap_or(DUMMY_INDEX)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSchema {
    pub fields: Vec<FieldSchema>,
    pub min_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    /// Field-local feature indices, one non-empty list per field.
    pub fields: Vec<Vec<u32>>,
    pub label: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub rows: usize,
    pub unknown_tokens: usize,
    pub truncated_values: usize,
}

/// The part of a schema a model depends on: field order and sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaLayout {
    pub field_names: Vec<String>,
    pub cardinalities: Vec<usize>,
    pub digest: String,
}

impl SchemaLayout {
    pub fn n_fields(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn total_features(&self) -> usize {
        self.cardinalities.iter().sum()
    }

    /// Global row of field `f`'s local index 0.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.cardinalities
            .iter()
            .map(|&c| {
                let o = acc;
                acc += c;
                o
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    format: String,
    version: u32,
    min_count: usize,
    fields: Vec<FieldFile>,
}

#[derive(Serialize, Deserialize)]
struct FieldFile {
    name: String,
    multivalent: bool,
    tokens: Vec<String>,
}

const SCHEMA_FORMAT: &str = "fgcnn-schema";
const SCHEMA_VERSION: u32 = 1;

impl DatasetSchema {
    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn total_features(&self) -> usize {
        self.fields.iter().map(FieldSchema::cardinality).sum()
    }

    pub fn offsets(&self) -> Vec<usize> {
        self.layout().offsets()
    }

    pub fn layout(&self) -> SchemaLayout {
        SchemaLayout {
            field_names: self.fields.iter().map(|f| f.name.clone()).collect(),
            cardinalities: self.fields.iter().map(FieldSchema::cardinality).collect(),
            digest: self.digest(),
        }
    }

    /// Hex SHA-256 of the canonical sidecar text.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_sidecar().as_bytes()))
    }

    /// Versioned JSON sidecar: field order, per-field tokens in index order
    /// (the dummy at index 0 is implicit) and the `min_count` used.
    pub fn to_sidecar(&self) -> String {
        let file = SchemaFile {
            format: SCHEMA_FORMAT.into(),
            version: SCHEMA_VERSION,
            min_count: self.min_count,
            fields: self
                .fields
                .iter()
                .map(|f| FieldFile {
                    name: f.name.clone(),
                    multivalent: f.multivalent,
                    tokens: f.tokens.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("schema serializes")
    }

    pub fn from_sidecar(text: &str) -> Result<Self> {
        let file: SchemaFile = serde_json::from_str(text)?;
        if file.format != SCHEMA_FORMAT || file.version != SCHEMA_VERSION {
            return Err(FgcnnError::Format {
                line: 1,
                detail: format!(
                    "expected {SCHEMA_FORMAT} v{SCHEMA_VERSION}, found {} v{}",
                    file.format, file.version
                ),
            });
        }
        Ok(DatasetSchema {
            fields: file
                .fields
                .into_iter()
                .map(|f| FieldSchema::new(f.name, f.tokens, f.multivalent))
                .collect(),
            min_count: file.min_count,
        })
    }

    /// Encodes one raw row. Multivalent lists longer than `max_vals` are
    /// truncated; the overflow is counted in `stats`.
    pub fn encode_row(&self, row: &RawRow, max_vals: usize, stats: &mut IngestStats) -> Result<Instance> {
        if row.values.len() != self.fields.len() {
            return Err(FgcnnError::Format {
                line: stats.rows + 2,
                detail: format!("expected {} fields, found {}", self.fields.len(), row.values.len()),
            });
        }
        let mut fields = Vec::with_capacity(self.fields.len());
        for (field, tokens) in self.fields.iter().zip(&row.values) {
            if tokens.is_empty() {
                return Err(FgcnnError::Format {
                    line: stats.rows + 2,
                    detail: format!("field `{}` has no value", field.name),
                });
            }
            let cap = if field.multivalent { max_vals.max(1) } else { 1 };
            if tokens.len() > cap {
                stats.truncated_values += tokens.len() - cap;
            }
            let idx: Vec<u32> = tokens
                .iter()
                .take(cap)
                .map(|t| {
                    let i = field.encode(t);
                    if i == DUMMY_INDEX && !field.token_to_index.contains_key(t.as_str()) {
                        stats.unknown_tokens += 1;
                    }
                    i
                })
                .collect();
            fields.push(idx);
        }
        stats.rows += 1;
        Ok(Instance {
            fields,
            label: row.label,
        })
    }

    pub fn encode_table(&self, table: &RawTable, max_vals: usize) -> Result<(Vec<Instance>, IngestStats)> {
        let mut stats = IngestStats::default();
        let instances = table
            .rows
            .iter()
            .map(|r| self.encode_row(r, max_vals, &mut stats))
            .collect::<Result<Vec<_>>>()?;
        Ok((instances, stats))
    }

    /// Validates an encoded instance against this schema.
    pub fn check_instance(&self, inst: &Instance) -> Result<()> {
        if inst.fields.len() != self.fields.len() {
            return Err(FgcnnError::shape(
                "instance",
                format!("{} fields, schema has {}", inst.fields.len(), self.fields.len()),
            ));
        }
        for (field, idx) in self.fields.iter().zip(&inst.fields) {
            if idx.is_empty() || (!field.multivalent && idx.len() != 1) {
                return Err(FgcnnError::shape(
                    "instance",
                    format!("field `{}` carries {} indices", field.name, idx.len()),
                ));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i as usize >= field.cardinality()) {
                return Err(FgcnnError::Lookup {
                    field: field.name.clone(),
                    index: bad,
                    cardinality: field.cardinality(),
                });
            }
        }
        Ok(())
    }
}

/// Fits per-field vocabularies. Tokens seen fewer than `min_count` times map
/// to the dummy index; the rest are numbered from 1 in first-seen order.
pub fn build_vocab(table: &RawTable, min_count: usize) -> Result<DatasetSchema> {
    if table.rows.is_empty() || table.field_names.is_empty() {
        return Err(FgcnnError::Empty("cannot build a vocabulary from an empty table"));
    }
    if min_count < 1 {
        return Err(FgcnnError::Config("min_count must be at least 1".into()));
    }
    let n_f = table.field_names.len();
    let mut counts: Vec<HashMap<&str, usize>> = vec![HashMap::new(); n_f];
    let mut order: Vec<Vec<&str>> = vec![Vec::new(); n_f];
    let mut multivalent = vec![false; n_f];
    for (r, row) in table.rows.iter().enumerate() {
        if row.values.len() != n_f {
            return Err(FgcnnError::Format {
                line: r + 2,
                detail: format!("expected {n_f} fields, found {}", row.values.len()),
            });
        }
        for (f, tokens) in row.values.iter().enumerate() {
            if tokens.len() > 1 {
                multivalent[f] = true;
            }
            for t in tokens {
                let c = counts[f].entry(t.as_str()).or_insert(0);
                if *c == 0 {
                    order[f].push(t.as_str());
                }
                *c += 1;
            }
        }
    }
    let fields = table
        .field_names
        .iter()
        .enumerate()
        .map(|(f, name)| {
            let kept = order[f]
                .iter()
                .filter(|t| counts[f][*t] >= min_count)
                .map(|t| t.to_string())
                .collect();
            FieldSchema::new(name.clone(), kept, multivalent[f])
        })
        .collect();
    Ok(DatasetSchema { fields, min_count })
}
