//! RKRD dataset files.
//!
//! Layout: the magic `RKRD`, a little-endian `u32` header length, a JSON
//! header, then `count·prod(input_shape)` little-endian `f32` inputs,
//! `count` little-endian `u32` labels and, when declared, a
//! `rows·dim` `f32` class-embedding table.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RkrError};
use crate::gzsl::GzslTask;
use crate::tensor::{Scalar, Tensor};
use crate::train::{Split, TaskDataset};

use super::io::write_atomic;

pub const DATASET_MAGIC: &[u8; 4] = b"RKRD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: u32,
    pub task_id: usize,
    /// `train`, `test`, `test_seen` or `test_unseen`.
    pub split: String,
    pub count: usize,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    /// Global class ids, in local-label order.
    pub classes: Vec<usize>,
    /// Number of leading entries of `classes` that are seen classes (GZSL only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seen_classes: Option<usize>,
    /// `[rows, dim]` of the class-embedding table, if present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<[usize; 2]>,
}

impl DatasetHeader {
    fn example_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    fn payload_len(&self) -> usize {
        let emb = self.embedding.map_or(0, |[r, d]| r * d);
        4 * (self.count * self.example_len() + self.count + emb)
    }
}

/// One decoded dataset file.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    /// `[count, input_shape...]`.
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub embeddings: Option<Tensor>,
}

fn fmt_err(msg: impl Into<String>) -> RkrError {
    RkrError::Format(msg.into())
}

impl DatasetFile {
    pub fn new(task_id: usize, split: &str, data: &Split, classes: &[usize]) -> Result<Self> {
        let header = DatasetHeader {
            version: DATASET_VERSION,
            task_id,
            split: split.into(),
            count: data.len(),
            input_shape: data.example_shape().to_vec(),
            num_classes: classes.len(),
            classes: classes.to_vec(),
            seen_classes: None,
            embedding: None,
        };
        let file = Self { header, inputs: data.inputs.clone(), labels: data.labels.clone(), embeddings: None };
        file.validate()?;
        Ok(file)
    }

    pub fn with_embeddings(mut self, table: Tensor, seen: usize) -> Result<Self> {
        if table.ndim() != 2 {
            return Err(fmt_err(format!("embedding table must be 2-D, got {:?}", table.shape())));
        }
        self.header.embedding = Some([table.shape()[0], table.shape()[1]]);
        self.header.seen_classes = Some(seen);
        self.embeddings = Some(table);
        self.validate()?;
        Ok(self)
    }

    pub fn split(&self) -> Result<Split> {
        Split::new(self.inputs.clone(), self.labels.clone())
    }

    fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.version != DATASET_VERSION {
            return Err(fmt_err(format!("unsupported dataset version {}", h.version)));
        }
        if h.input_shape.is_empty() || h.input_shape.contains(&0) {
            return Err(fmt_err(format!("degenerate input shape {:?}", h.input_shape)));
        }
        if h.num_classes != h.classes.len() {
            return Err(fmt_err(format!("header declares {} classes but lists {}", h.num_classes, h.classes.len())));
        }
        let mut expected = vec![h.count];
        expected.extend(&h.input_shape);
        if self.inputs.shape() != expected.as_slice() || self.labels.len() != h.count {
            return Err(fmt_err(format!(
                "inputs {:?} and {} labels do not match the header ({:?})",
                self.inputs.shape(),
                self.labels.len(),
                expected
            )));
        }
        if let Some(l) = self.labels.iter().find(|l| !h.classes.contains(l) || **l > u32::MAX as usize) {
            return Err(fmt_err(format!("label {l} is not among the declared classes")));
        }
        match (&h.embedding, &self.embeddings) {
            (None, None) => {}
            (Some([r, d]), Some(t)) if t.shape() == [*r, *d] && *r == h.num_classes => {}
            _ => return Err(fmt_err("embedding table does not match the header")),
        }
        if h.seen_classes.is_some_and(|s| s > h.num_classes) {
            return Err(fmt_err("more seen classes than classes"));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = serde_json::to_vec(&self.header)?;
        let header_len = u32::try_from(header.len()).map_err(|_| fmt_err("header too large"))?;
        let mut out = Vec::with_capacity(8 + header.len() + self.header.payload_len());
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&header);
        let put = |out: &mut Vec<u8>, t: &Tensor| {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        };
        put(&mut out, &self.inputs);
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        if let Some(t) = &self.embeddings {
            put(&mut out, t);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != DATASET_MAGIC {
            return Err(fmt_err("missing RKRD magic"));
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(8..8 + header_len).ok_or_else(|| fmt_err("truncated header"))?;
        let header: DatasetHeader =
            serde_json::from_slice(body).map_err(|e| fmt_err(format!("bad header: {e}")))?;
        let payload = &bytes[8 + header_len..];
        if payload.len() != header.payload_len() {
            return Err(fmt_err(format!(
                "payload is {} bytes, header declares {}",
                payload.len(),
                header.payload_len()
            )));
        }
        let mut words = payload.chunks_exact(4).map(|c| c.try_into().expect("4 bytes"));
        let mut floats = |n: usize| -> Vec<Scalar> {
            words.by_ref().take(n).map(|w| f32::from_le_bytes(w) as Scalar).collect()
        };
        let mut shape = vec![header.count];
        shape.extend(&header.input_shape);
        let inputs = Tensor::new(&shape, floats(header.count * header.example_len()))?;
        let labels: Vec<usize> = payload[4 * header.count * header.example_len()..]
            .chunks_exact(4)
            .take(header.count)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        let embeddings = match header.embedding {
            Some([r, d]) => {
                let start = 4 * (header.count * header.example_len() + header.count);
                let data: Vec<Scalar> = payload[start..]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as Scalar)
                    .collect();
                Some(Tensor::new(&[r, d], data)?)
            }
            None => None,
        };
        let file = Self { header, inputs, labels, embeddings };
        file.validate()?;
        Ok(file)
    }
}

pub fn write_dataset(path: &Path, file: &DatasetFile) -> Result<()> {
    write_atomic(path, &file.to_bytes()?)
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    let bytes = fs::read(path)?;
    DatasetFile::from_bytes(&bytes).map_err(|e| match e {
        RkrError::Format(m) => RkrError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn task_file(dir: &Path, task_id: usize, split: &str) -> PathBuf {
    dir.join(format!("task_{task_id}_{split}.rkrd"))
}

/// Writes `task_<t>_train.rkrd` and `task_<t>_test.rkrd` for every task.
pub fn save_tasks(dir: &Path, tasks: &[TaskDataset]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for t in tasks {
        for (name, split) in [("train", &t.train), ("test", &t.test)] {
            let path = task_file(dir, t.task_id, name);
            write_dataset(&path, &DatasetFile::new(t.task_id, name, split, &t.classes)?)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Task ids `1..` present in `dir`, stopping at the first missing train file.
fn discover(dir: &Path, count: Option<usize>) -> Result<usize> {
    match count {
        Some(n) => Ok(n),
        None => {
            let n = (1..).take_while(|&t| task_file(dir, t, "train").exists()).count();
            if n == 0 {
                return Err(RkrError::Config(format!("no task_1_train.rkrd in {}", dir.display())));
            }
            Ok(n)
        }
    }
}

pub fn load_tasks(dir: &Path, count: Option<usize>) -> Result<Vec<TaskDataset>> {
    (1..=discover(dir, count)?)
        .map(|t| {
            let train = read_dataset(&task_file(dir, t, "train"))?;
            let test = read_dataset(&task_file(dir, t, "test"))?;
            TaskDataset::new(t, train.split()?, test.split()?)
        })
        .collect()
}

/// Writes a GZSL task as `train` (with the embedding table), `test_seen` and `test_unseen` files.
pub fn save_gzsl_tasks(dir: &Path, tasks: &[GzslTask]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for t in tasks {
        let train = DatasetFile::new(t.task_id, "train", &t.train, &t.classes)?
            .with_embeddings(t.embeddings.clone(), t.seen.len())?;
        for (name, file) in [
            ("train", train),
            ("test_seen", DatasetFile::new(t.task_id, "test_seen", &t.test_seen, &t.classes)?),
            ("test_unseen", DatasetFile::new(t.task_id, "test_unseen", &t.test_unseen, &t.classes)?),
        ] {
            let path = task_file(dir, t.task_id, name);
            write_dataset(&path, &file)?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn load_gzsl_tasks(dir: &Path, count: Option<usize>) -> Result<Vec<GzslTask>> {
    (1..=discover(dir, count)?)
        .map(|t| {
            let train = read_dataset(&task_file(dir, t, "train"))?;
            let (table, seen) = match (train.embeddings.clone(), train.header.seen_classes) {
                (Some(e), Some(s)) => (e, s),
                _ => return Err(fmt_err(format!("task {t}: train file has no embedding table"))),
            };
            let classes = &train.header.classes;
            let test_seen = read_dataset(&task_file(dir, t, "test_seen"))?;
            let test_unseen = read_dataset(&task_file(dir, t, "test_unseen"))?;
            GzslTask::new(
                t,
                classes[..seen].to_vec(),
                classes[seen..].to_vec(),
                table,
                train.split()?,
                test_seen.split()?,
                test_unseen.split()?,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DatasetFile {
        let inputs = Tensor::new(&[3, 2, 2, 1], (0..12).map(|i| i as Scalar * 0.25 - 1.0).collect()).unwrap();
        DatasetFile::new(2, "train", &Split::new(inputs, vec![4, 5, 4]).unwrap(), &[4, 5]).unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let f = sample();
        let bytes = f.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"RKRD");
        assert_eq!(DatasetFile::from_bytes(&bytes).unwrap(), f);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes.push(0);
        assert!(matches!(DatasetFile::from_bytes(&bytes), Err(RkrError::Format(_))));
        bytes.truncate(bytes.len() - 5);
        assert!(matches!(DatasetFile::from_bytes(&bytes), Err(RkrError::Format(_))));
        assert!(DatasetFile::from_bytes(b"RKRX\0\0\0\0").is_err());
    }

    #[test]
    fn embeddings_round_trip() {
        let table = Tensor::new(&[2, 3], vec![0.5, -0.25, 1.0, 2.0, 0.0, -3.5]).unwrap();
        let f = sample().with_embeddings(table, 1).unwrap();
        assert_eq!(DatasetFile::from_bytes(&f.to_bytes().unwrap()).unwrap(), f);
    }

    #[test]
    fn foreign_label_is_rejected() {
        let inputs = Tensor::zeros(&[1, 2]);
        assert!(DatasetFile::new(1, "train", &Split::new(inputs, vec![9]).unwrap(), &[0, 1]).is_err());
    }
}
