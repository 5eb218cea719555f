//! Labeled SMILES datasets: CSV ingestion, splits, label statistics and a
//! synthetic generator.

mod split;
mod synthetic;

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::cil::co_occurrence_matrix;
use crate::molgraph::parse_smiles;
use crate::ndiff::Tensor;

pub use split::{split, Split, DEFAULT_FRACTIONS};
pub use synthetic::{synthetic_dataset, synthetic_label_probabilities, FRAGMENTS, MAX_SYNTHETIC_LABELS};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("CSV must start with a `smiles,labels` header")]
    MissingHeader,
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("none of the {0} rows has a parseable SMILES")]
    AllRowsInvalid(usize),
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("bad generator parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledDataset {
    pub smiles: Vec<String>,
    /// Sorted label ids per molecule.
    pub labels: Vec<Vec<usize>>,
    pub vocab: Vec<String>,
    /// Rows dropped during loading because the SMILES did not parse.
    pub skipped: usize,
    /// Rows dropped as exact duplicates.
    pub duplicates: usize,
}

impl LabeledDataset {
    /// Builds a dataset from `(smiles, label names)` rows. The vocabulary is
    /// sorted; unparseable rows and repeated `(smiles, labels)` pairs drop.
    pub fn from_rows<S, L, I>(rows: I) -> Result<Self, DataError>
    where
        S: AsRef<str>,
        L: AsRef<str>,
        I: IntoIterator<Item = (S, Vec<L>)>,
    {
        let mut raw: Vec<(String, BTreeSet<String>)> = Vec::new();
        let mut total = 0;
        let mut skipped = 0;
        for (smi, labels) in rows {
            total += 1;
            let smi = smi.as_ref().trim();
            if parse_smiles(smi).is_err() {
                skipped += 1;
                continue;
            }
            let set = labels
                .iter()
                .map(|l| l.as_ref().trim().to_string())
                .filter(|l| !l.is_empty())
                .collect();
            raw.push((smi.to_string(), set));
        }
        if total == 0 {
            return Err(DataError::EmptyDataset);
        }
        if raw.is_empty() {
            return Err(DataError::AllRowsInvalid(total));
        }
        let vocab: Vec<String> = raw
            .iter()
            .flat_map(|(_, s)| s.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut seen = HashSet::new();
        let mut ds = LabeledDataset {
            vocab,
            skipped,
            ..Default::default()
        };
        for (smi, set) in raw {
            let ids: Vec<usize> = set
                .iter()
                .map(|l| ds.vocab.binary_search(l).expect("label in vocab"))
                .collect();
            if !seen.insert((smi.clone(), ids.clone())) {
                ds.duplicates += 1;
                continue;
            }
            ds.smiles.push(smi);
            ds.labels.push(ids);
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.smiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.smiles.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.vocab.len()
    }

    /// Multi-hot label matrix, `N x M`.
    pub fn y(&self) -> Tensor {
        self.y_for(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn y_for(&self, rows: &[usize]) -> Tensor {
        let mut y = Tensor::zeros(rows.len(), self.num_labels());
        for (r, &i) in rows.iter().enumerate() {
            for &l in &self.labels[i] {
                y.set(r, l, 1.0);
            }
        }
        y
    }

    /// Rows at `indices`, keeping the full vocabulary.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            smiles: indices.iter().map(|&i| self.smiles[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
            vocab: self.vocab.clone(),
            skipped: 0,
            duplicates: 0,
        }
    }

    pub fn label_names(&self, i: usize) -> Vec<&str> {
        self.labels[i].iter().map(|&l| self.vocab[l].as_str()).collect()
    }
}

pub fn read_csv(reader: impl std::io::Read) -> Result<LabeledDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let (Some(si), Some(li)) = (col("smiles"), col("labels")) else {
        return Err(DataError::MissingHeader);
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let smi = rec.get(si).unwrap_or("").to_string();
        let labels: Vec<String> = rec
            .get(li)
            .unwrap_or("")
            .split(';')
            .map(str::to_string)
            .collect();
        rows.push((smi, labels));
    }
    LabeledDataset::from_rows(rows)
}

/// The `smiles` column of a CSV, in file order; other columns are ignored.
pub fn read_smiles_column(reader: impl std::io::Read) -> Result<Vec<String>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let Some(si) = rdr.headers()?.iter().position(|h| h.trim().eq_ignore_ascii_case("smiles")) else {
        return Err(DataError::MissingHeader);
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        out.push(rec?.get(si).unwrap_or("").trim().to_string());
    }
    Ok(out)
}

pub fn load_csv(path: &Path) -> Result<LabeledDataset, DataError> {
    read_csv(std::fs::File::open(path)?)
}

pub fn write_csv(ds: &LabeledDataset, writer: impl std::io::Write) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["smiles", "labels"])?;
    for i in 0..ds.len() {
        w.write_record([ds.smiles[i].as_str(), &ds.label_names(i).join(";")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(ds: &LabeledDataset, path: &Path) -> Result<(), DataError> {
    write_csv(ds, std::fs::File::create(path)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct LabelCount {
    pub label: String,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LabelStats {
    pub molecules: usize,
    /// Descending by count, ties by label.
    pub counts: Vec<LabelCount>,
    pub total_assignments: usize,
    /// Most frequent count over the median count.
    pub long_tail_ratio: f64,
    pub labels: Vec<String>,
    pub co_occurrence: Vec<Vec<u64>>,
}

impl LabelStats {
    pub fn pair(&self, a: &str, b: &str) -> Option<u64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        Some(self.co_occurrence[i][j])
    }

    pub fn counts_csv(&self) -> Result<String, DataError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "count"])?;
        for c in &self.counts {
            w.write_record([c.label.clone(), c.count.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("utf-8"))
    }
}

pub fn label_stats(ds: &LabeledDataset) -> Result<LabelStats, DataError> {
    if ds.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let co = co_occurrence_matrix(&ds.y());
    let mut counts: Vec<LabelCount> = ds
        .vocab
        .iter()
        .enumerate()
        .map(|(j, l)| LabelCount {
            label: l.clone(),
            count: co[j][j] as usize,
        })
        .collect();
    counts.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.label.cmp(&b.label)));
    let total = counts.iter().map(|c| c.count).sum();
    let mut sorted: Vec<usize> = counts.iter().map(|c| c.count).collect();
    sorted.sort_unstable();
    let median = match sorted.len() {
        0 => 0.0,
        n if n % 2 == 1 => sorted[n / 2] as f64,
        n => (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0,
    };
    let top = sorted.last().copied().unwrap_or(0) as f64;
    Ok(LabelStats {
        molecules: ds.len(),
        counts,
        total_assignments: total,
        long_tail_ratio: if median > 0.0 { top / median } else { f64::INFINITY },
        labels: ds.vocab.clone(),
        co_occurrence: co,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_ROWS: &str = "smiles,labels\nCCO,fruity;sweet\nc1ccccc1,floral\n";

    #[test]
    fn two_row_example() {
        let ds = read_csv(TWO_ROWS.as_bytes()).unwrap();
        assert_eq!(ds.vocab, ["floral", "fruity", "sweet"]);
        assert_eq!(ds.y().to_rows(), vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 0.0]]);
        let st = label_stats(&ds).unwrap();
        assert!(st.counts.iter().all(|c| c.count == 1));
        assert_eq!(st.total_assignments, 3);
    }

    #[test]
    fn empty_and_invalid() {
        assert!(matches!(read_csv("smiles,labels\n".as_bytes()), Err(DataError::EmptyDataset)));
        assert!(matches!(read_csv("foo,bar\nC,x\n".as_bytes()), Err(DataError::MissingHeader)));
        assert!(matches!(
            read_csv("smiles,labels\nC(,x\nQ,y\n".as_bytes()),
            Err(DataError::AllRowsInvalid(2))
        ));
        let ds = read_csv("smiles,labels\nC(,x\nCC,y\n".as_bytes()).unwrap();
        assert_eq!((ds.len(), ds.skipped), (1, 1));
    }

    #[test]
    fn empty_labels_kept() {
        let ds = read_csv("smiles,labels\nCC,\nCO,a\n".as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.labels[0].is_empty());
    }

    #[test]
    fn duplicates_dropped() {
        let ds = read_csv("smiles,labels\nCC,a\nCC,a\nCC,b\n".as_bytes()).unwrap();
        assert_eq!((ds.len(), ds.duplicates), (2, 1));
    }
}
