//! File formats shared by the CLI and external scripts.
//!
//! * population CSV: header `f_0,...,f_{d-1},label`, labels in `{-1,1}`;
//! * inclusion-probability CSV: header `index,pi`;
//! * canonical-parameter CSV: header `index,p`;
//! * sample-indicator CSV: header `index,epsilon`, one row per unit;
//! * design JSON: the serde form of [`DesignSpec`];
//! * model JSON: a linear model (`theta`, `b`, `degree`, ...) or a tree
//!   (nested node objects), distinguished structurally.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::designs::{DesignSpec, SampleIndicator};
use crate::estimators::Population;
use crate::experiment::{ExperimentReport, ReplicationRow};
use crate::learners::{LinearModel, TreeModel};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("schema violation: {0}")]
    Schema(String),
}

pub fn read_population_csv(path: impl AsRef<Path>) -> Result<Population<f64>, IoError> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let dim = headers.len().saturating_sub(1);
    if dim == 0 || headers.iter().next_back() != Some("label") {
        return Err(IoError::Schema(
            "expected columns f_0,...,f_{d-1},label".into(),
        ));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != dim + 1 {
            return Err(IoError::Schema(format!(
                "row has {} fields, expected {}",
                record.len(),
                dim + 1
            )));
        }
        for i in 0..dim {
            let v: f64 = record[i]
                .trim()
                .parse()
                .map_err(|_| IoError::Schema(format!("bad feature value {:?}", &record[i])))?;
            features.push(v);
        }
        let label: f64 = record[dim]
            .trim()
            .parse()
            .map_err(|_| IoError::Schema(format!("bad label {:?}", &record[dim])))?;
        labels.push(label as i8);
    }
    let n = labels.len();
    Population::from_flat(features, n, dim, labels)
        .map_err(|e| IoError::Schema(e.to_string()))
}

pub fn write_population_csv(
    path: impl AsRef<Path>,
    pop: &Population<f64>,
) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<String> = (0..pop.dim()).map(|i| format!("f_{i}")).collect();
    header.push("label".into());
    writer.write_record(&header)?;
    for i in 0..pop.len() {
        let mut row: Vec<String> = pop.row(i).iter().map(|v| v.to_string()).collect();
        row.push(pop.label(i).to_string());
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

fn read_indexed_column(path: &Path, value_column: &str) -> Result<Vec<f64>, IoError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "index" || &headers[1] != value_column {
        return Err(IoError::Schema(format!(
            "expected columns index,{value_column}"
        )));
    }
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let idx: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| IoError::Schema(format!("bad index {:?}", &record[0])))?;
        let v: f64 = record[1]
            .trim()
            .parse()
            .map_err(|_| IoError::Schema(format!("bad value {:?}", &record[1])))?;
        entries.push((idx, v));
    }
    entries.sort_by_key(|&(i, _)| i);
    for (k, &(i, _)) in entries.iter().enumerate() {
        if i != k {
            return Err(IoError::Schema(format!(
                "indices must cover 0..N-1; missing or duplicate index near {i}"
            )));
        }
    }
    Ok(entries.into_iter().map(|(_, v)| v).collect())
}

fn write_indexed_column(
    path: &Path,
    value_column: &str,
    values: &[f64],
) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([ "index", value_column ])?;
    for (i, v) in values.iter().enumerate() {
        writer.write_record([i.to_string(), v.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_pi_csv(path: impl AsRef<Path>) -> Result<Vec<f64>, IoError> {
    read_indexed_column(path.as_ref(), "pi")
}

pub fn write_pi_csv(path: impl AsRef<Path>, pi: &[f64]) -> Result<(), IoError> {
    write_indexed_column(path.as_ref(), "pi", pi)
}

pub fn read_p_csv(path: impl AsRef<Path>) -> Result<Vec<f64>, IoError> {
    read_indexed_column(path.as_ref(), "p")
}

pub fn write_p_csv(path: impl AsRef<Path>, p: &[f64]) -> Result<(), IoError> {
    write_indexed_column(path.as_ref(), "p", p)
}

pub fn read_sample_csv(path: impl AsRef<Path>) -> Result<SampleIndicator, IoError> {
    let eps = read_indexed_column(path.as_ref(), "epsilon")?;
    let bits = eps
        .into_iter()
        .map(|v| {
            if v == 0.0 {
                Ok(false)
            } else if v == 1.0 {
                Ok(true)
            } else {
                Err(IoError::Schema(format!("epsilon must be 0 or 1, got {v}")))
            }
        })
        .collect::<Result<Vec<bool>, _>>()?;
    Ok(SampleIndicator::from_bits(bits))
}

pub fn write_sample_csv(path: impl AsRef<Path>, sample: &SampleIndicator) -> Result<(), IoError> {
    let values: Vec<f64> = sample.bits().iter().map(|&b| b as u8 as f64).collect();
    write_indexed_column(path.as_ref(), "epsilon", &values)
}

/// Enumerated-design export: columns `subset_bitmask,probability`.
pub fn write_enumerated_csv(
    path: impl AsRef<Path>,
    design: &crate::designs::EnumeratedDesign<f64>,
) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    writer.write_record(["subset_bitmask", "probability"])?;
    for (mask, mass) in design.support() {
        writer.write_record([mask.to_string(), mass.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_design_json(path: impl AsRef<Path>) -> Result<DesignSpec<f64>, IoError> {
    let file = File::open(path.as_ref())?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

pub fn write_design_json(path: impl AsRef<Path>, spec: &DesignSpec<f64>) -> Result<(), IoError> {
    write_json(path, spec)
}

/// Either trained model, distinguished by shape: linear models carry
/// `theta`, trees carry `root`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelFile {
    Svm(LinearModel<f64>),
    Tree(TreeModel<f64>),
}

pub fn read_model_json(path: impl AsRef<Path>) -> Result<ModelFile, IoError> {
    let file = File::open(path.as_ref())?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

pub fn write_model_json(path: impl AsRef<Path>, model: &ModelFile) -> Result<(), IoError> {
    write_json(path, model)
}

pub fn write_json<S: Serialize>(path: impl AsRef<Path>, value: &S) -> Result<(), IoError> {
    let file = File::create(path.as_ref())?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

/// Per-replication rows of an experiment report, one CSV line per
/// replication.
pub fn write_experiment_csv(path: impl AsRef<Path>, report: &ExperimentReport) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec!["rep".to_string()];
    header.extend(ReplicationRow::columns().iter().map(|s| s.to_string()));
    header.push("error".into());
    writer.write_record(&header)?;
    for row in &report.rows {
        let mut record = vec![row.rep.to_string()];
        for column in ReplicationRow::columns() {
            record.push(
                row.get(column)
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
            );
        }
        record.push(row.error.clone().unwrap_or_default());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::TreeNode;

    #[test]
    fn population_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pop.csv");
        let pop = Population::new(
            vec![vec![0.25, -1.5], vec![3.0, 0.125]],
            vec![1, -1],
        )
        .unwrap();
        write_population_csv(&path, &pop).unwrap();
        let back = read_population_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.dim(), 2);
        assert_eq!(back.row(0), pop.row(0));
        assert_eq!(back.label(1), -1);
    }

    #[test]
    fn sample_csv_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sample.csv");
        let sample = SampleIndicator::from_included(5, &[1, 4]);
        write_sample_csv(&path, &sample).unwrap();
        let back = read_sample_csv(&path).unwrap();
        assert_eq!(back, sample);

        std::fs::write(&path, "index,epsilon\n0,0.5\n").unwrap();
        assert!(matches!(read_sample_csv(&path), Err(IoError::Schema(_))));
    }

    #[test]
    fn pi_csv_requires_contiguous_indices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pi.csv");
        std::fs::write(&path, "index,pi\n0,0.5\n2,0.25\n").unwrap();
        assert!(matches!(read_pi_csv(&path), Err(IoError::Schema(_))));
        std::fs::write(&path, "index,pi\n1,0.25\n0,0.5\n").unwrap();
        assert_eq!(read_pi_csv(&path).unwrap(), vec![0.5, 0.25]);
    }

    #[test]
    fn model_json_distinguishes_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let svm_path = dir.path().join("svm.json");
        let tree_path = dir.path().join("tree.json");
        write_model_json(
            &svm_path,
            &ModelFile::Svm(LinearModel {
                theta: vec![1.0, 2.0],
                b: 0.5,
                degree: 1,
                lambda: 0.01,
                dim: 2,
            }),
        )
        .unwrap();
        write_model_json(
            &tree_path,
            &ModelFile::Tree(TreeModel {
                root: TreeNode::Leaf { label: 1 },
                dim: 2,
                max_depth: 8,
                min_leaf_weight: 1.0,
            }),
        )
        .unwrap();
        assert!(matches!(read_model_json(&svm_path).unwrap(), ModelFile::Svm(_)));
        assert!(matches!(read_model_json(&tree_path).unwrap(), ModelFile::Tree(_)));
    }
}
