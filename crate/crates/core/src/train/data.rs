use std::collections::BTreeSet;

use crate::error::{dim_err, Result, RkrError};
use crate::tensor::Tensor;

/// Examples `[N, ...]` with global class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.shape().first() != Some(&labels.len()) {
            return Err(dim_err(format!("{:?} inputs for {} labels", inputs.shape(), labels.len())));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one example.
    pub fn example_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// First `n` examples (all when fewer).
    pub fn head(&self, n: usize) -> Split {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn subset(&self, idx: &[usize]) -> Split {
        Split {
            inputs: self.inputs.gather_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// One task: a class set disjoint from every other task's, with train and test data.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub task_id: usize,
    /// Sorted global class ids; the local label of a class is its position here.
    pub classes: Vec<usize>,
    pub train: Split,
    pub test: Split,
}

impl TaskDataset {
    /// Validates labels against the class set.
    pub fn new(task_id: usize, train: Split, test: Split) -> Result<Self> {
        let classes: Vec<usize> = train
            .labels
            .iter()
            .chain(&test.labels)
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if train.example_shape() != test.example_shape() {
            return Err(dim_err(format!(
                "task {task_id}: train examples {:?} vs test examples {:?}",
                train.example_shape(),
                test.example_shape()
            )));
        }
        Ok(Self { task_id, classes, train, test })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn local_label(&self, global: usize) -> Result<usize> {
        self.classes
            .binary_search(&global)
            .map_err(|_| RkrError::Index(format!("class {global} is not part of task {}", self.task_id)))
    }

    pub fn local_labels(&self, split: &Split) -> Result<Vec<usize>> {
        split.labels.iter().map(|&g| self.local_label(g)).collect()
    }
}

/// Errors unless the class sets of all tasks are pairwise disjoint.
pub fn check_disjoint(tasks: &[TaskDataset]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for t in tasks {
        for &c in &t.classes {
            if !seen.insert(c) {
                return Err(RkrError::Config(format!("class {c} appears in more than one task (task {})", t.task_id)));
            }
        }
    }
    Ok(())
}
