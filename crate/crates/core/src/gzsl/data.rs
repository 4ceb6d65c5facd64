//! GZSL tasks and their synthetic generator.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result, RkrError};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};
use crate::train::Split;

/// One GZSL task: seen classes with training features, unseen classes known
/// only through their embeddings, and test features for both.
#[derive(Clone, Debug, PartialEq)]
pub struct GzslTask {
    pub task_id: usize,
    /// Global class ids, seen classes first.
    pub classes: Vec<usize>,
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
    /// `[classes.len(), embedding_dim]`; row `i` belongs to `classes[i]`.
    pub embeddings: Tensor,
    pub train: Split,
    pub test_seen: Split,
    pub test_unseen: Split,
}

impl GzslTask {
    pub fn new(
        task_id: usize,
        seen: Vec<usize>,
        unseen: Vec<usize>,
        embeddings: Tensor,
        train: Split,
        test_seen: Split,
        test_unseen: Split,
    ) -> Result<Self> {
        let classes: Vec<usize> = seen.iter().chain(&unseen).copied().collect();
        if embeddings.ndim() != 2 || embeddings.shape()[0] != classes.len() {
            return Err(dim_err(format!(
                "task {task_id}: embedding table {:?} for {} classes",
                embeddings.shape(),
                classes.len()
            )));
        }
        let check = |split: &Split, allowed: &[usize], what: &str| -> Result<()> {
            match split.labels.iter().find(|l| !allowed.contains(l)) {
                Some(l) => Err(RkrError::Config(format!("task {task_id}: {what} label {l} is not in its class list"))),
                None => Ok(()),
            }
        };
        check(&train, &seen, "training")?;
        check(&test_seen, &seen, "seen test")?;
        check(&test_unseen, &unseen, "unseen test")?;
        Ok(Self { task_id, classes, seen, unseen, embeddings, train, test_seen, test_unseen })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.train.example_shape().iter().product()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embeddings.shape()[1]
    }

    pub fn local(&self, global: usize) -> Result<usize> {
        self.classes
            .iter()
            .position(|&c| c == global)
            .ok_or_else(|| RkrError::Index(format!("class {global} is not part of task {}", self.task_id)))
    }

    /// Embedding rows for a list of global labels.
    pub fn embeddings_for(&self, labels: &[usize]) -> Result<Tensor> {
        let rows: Vec<usize> = labels.iter().map(|&l| self.local(l)).collect::<Result<_>>()?;
        Ok(self.embeddings.gather_rows(&rows))
    }
}

fn default_noise() -> f64 {
    0.5
}

/// Parameters of a synthetic GZSL sequence.
///
/// Class embeddings are random unit vectors. Task `t` draws its own random
/// linear map `A_t` and produces features `A_t·c + noise`, so unseen classes
/// are predictable from their embeddings while tasks disagree about how
/// features relate to embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GzslSynthSpec {
    pub tasks: usize,
    pub seen_per_task: usize,
    pub unseen_per_task: usize,
    pub feature_dim: usize,
    pub embedding_dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GzslSynthSpec {
    fn default() -> Self {
        Self {
            tasks: 3,
            seen_per_task: 20,
            unseen_per_task: 4,
            feature_dim: 64,
            embedding_dim: 16,
            train_per_class: 50,
            test_per_class: 30,
            noise: 0.5,
            seed: 0,
        }
    }
}

fn unit_vector(d: usize, rng: &mut SeededRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal() as f64).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn features(map: &[f64], emb: &[f64], fd: usize, count: usize, label: usize, noise: f64, rng: &mut SeededRng, out: &mut Vec<Scalar>, labels: &mut Vec<usize>) {
    let ed = emb.len();
    for _ in 0..count {
        for i in 0..fd {
            let clean: f64 = (0..ed).map(|j| map[i * ed + j] * emb[j]).sum();
            out.push((clean + noise * rng.normal() as f64) as f32 as Scalar);
        }
        labels.push(label);
    }
}

pub fn generate_gzsl_tasks(spec: &GzslSynthSpec) -> Result<Vec<GzslTask>> {
    if spec.tasks == 0 || spec.seen_per_task < 2 || spec.unseen_per_task == 0 {
        return Err(RkrError::Config("need ≥1 task, ≥2 seen and ≥1 unseen classes per task".into()));
    }
    if spec.feature_dim == 0 || spec.embedding_dim == 0 || spec.train_per_class == 0 || spec.test_per_class == 0 {
        return Err(RkrError::Config("degenerate GZSL geometry".into()));
    }
    if !(spec.noise >= 0.0) {
        return Err(RkrError::Config("noise must be non-negative".into()));
    }
    let root = SeededRng::new(spec.seed);
    let per_task = spec.seen_per_task + spec.unseen_per_task;
    let (fd, ed) = (spec.feature_dim, spec.embedding_dim);
    let mut tasks = Vec::with_capacity(spec.tasks);
    for t in 0..spec.tasks {
        let mut rng = root.fork(1 + t as u64);
        let first = t * per_task;
        let seen: Vec<usize> = (first..first + spec.seen_per_task).collect();
        let unseen: Vec<usize> = (first + spec.seen_per_task..first + per_task).collect();
        let embs: Vec<Vec<f64>> = (0..per_task).map(|_| unit_vector(ed, &mut rng)).collect();
        let map: Vec<f64> = (0..fd * ed).map(|_| rng.normal() as f64).collect();
        let make = |classes: &[usize], count: usize, rng: &mut SeededRng| -> Result<Split> {
            let (mut data, mut labels) = (Vec::new(), Vec::new());
            for &c in classes {
                features(&map, &embs[c - first], fd, count, c, spec.noise, rng, &mut data, &mut labels);
            }
            Split::new(Tensor::new(&[labels.len(), fd], data)?, labels)
        };
        let train = make(&seen, spec.train_per_class, &mut rng)?;
        let test_seen = make(&seen, spec.test_per_class, &mut rng)?;
        let test_unseen = make(&unseen, spec.test_per_class, &mut rng)?;
        let table: Vec<Scalar> = embs.iter().flatten().map(|&v| v as f32 as Scalar).collect();
        let embeddings = Tensor::new(&[per_task, ed], table)?;
        tasks.push(GzslTask::new(t + 1, seen, unseen, embeddings, train, test_seen, test_unseen)?);
    }
    Ok(tasks)
}
