//! Gaussian-cluster task generators.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RkrError};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};
use crate::train::{Split, TaskDataset};

fn default_true() -> bool {
    true
}
fn default_nuisance() -> f64 {
    2.0
}

/// Parameters of a synthetic task sequence.
///
/// Every class is an isotropic unit-variance Gaussian. Within a task the
/// class means lie on mutually orthogonal directions at pairwise distance
/// `separation`. With `conflict_mode`, all tasks' directions are mutually
/// orthogonal and every later task's examples carry large random offsets
/// along the first task's directions, so a shared feature extractor fitted to
/// a later task has to suppress exactly what the first task relies on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub tasks: usize,
    pub classes_per_task: usize,
    /// Shape of one example, e.g. `[d]` or `[H, W, C]`.
    pub input_shape: Vec<usize>,
    /// Distance between class means in units of the noise standard deviation.
    pub separation: f64,
    #[serde(default = "default_true")]
    pub conflict_mode: bool,
    /// Standard deviation of conflict offsets, as a multiple of `separation`.
    #[serde(default = "default_nuisance")]
    pub nuisance: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    fn validate(&self) -> Result<()> {
        if self.tasks == 0 {
            return Err(RkrError::Config("need at least one task".into()));
        }
        if self.classes_per_task < 2 {
            return Err(RkrError::Config("need at least two classes per task".into()));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(RkrError::Config(format!("degenerate input shape {:?}", self.input_shape)));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) || !(self.nuisance >= 0.0) {
            return Err(RkrError::Config("separation must be positive and nuisance non-negative".into()));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(RkrError::Config("need at least one train and one test example per class".into()));
        }
        let needed = if self.conflict_mode { self.tasks * self.classes_per_task } else { self.classes_per_task };
        if self.input_dim() < needed {
            return Err(RkrError::Config(format!(
                "input dimension {} cannot hold {needed} orthogonal class directions",
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// `n` orthonormal vectors in `R^d` by Gram-Schmidt on Gaussian draws.
pub(crate) fn orthonormal(n: usize, d: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal() as f64).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Values are rounded through f32 so dataset files round-trip exactly.
fn sample_split(
    means: &[Vec<f64>],
    nuisance_dirs: &[Vec<f64>],
    nuisance_std: f64,
    per_class: usize,
    first_class: usize,
    shape: &[usize],
    rng: &mut SeededRng,
) -> Result<Split> {
    let d = means[0].len();
    let mut data = Vec::with_capacity(means.len() * per_class * d);
    let mut labels = Vec::with_capacity(means.len() * per_class);
    for _ in 0..per_class {
        for (c, mean) in means.iter().enumerate() {
            let mut x: Vec<f64> = mean.iter().map(|m| m + rng.normal() as f64).collect();
            for dir in nuisance_dirs {
                let a = nuisance_std * rng.normal() as f64;
                x.iter_mut().zip(dir).for_each(|(v, u)| *v += a * u);
            }
            data.extend(x.into_iter().map(|v| v as f32 as Scalar));
            labels.push(first_class + c);
        }
    }
    let mut full_shape = vec![labels.len()];
    full_shape.extend_from_slice(shape);
    Split::new(Tensor::new(&full_shape, data)?, labels)
}

/// Builds the task sequence. Task `t` (1-based) owns global classes
/// `(t−1)·C .. t·C`.
pub fn generate_synthetic_tasks(spec: &SynthSpec) -> Result<Vec<TaskDataset>> {
    spec.validate()?;
    let d = spec.input_dim();
    let c = spec.classes_per_task;
    let root = SeededRng::new(spec.seed);
    let radius = spec.separation / std::f64::consts::SQRT_2;
    let shared = if spec.conflict_mode { orthonormal(spec.tasks * c, d, &mut root.fork(0)) } else { Vec::new() };
    let mut tasks = Vec::with_capacity(spec.tasks);
    for t in 0..spec.tasks {
        let mut rng = root.fork(1 + t as u64);
        let dirs = if spec.conflict_mode { shared[t * c..(t + 1) * c].to_vec() } else { orthonormal(c, d, &mut rng) };
        let means: Vec<Vec<f64>> = dirs.iter().map(|u| u.iter().map(|x| radius * x).collect()).collect();
        let nuisance_dirs = if spec.conflict_mode && t > 0 { &shared[..c] } else { &[][..] };
        let nuisance_std = spec.nuisance * spec.separation;
        let train = sample_split(&means, nuisance_dirs, nuisance_std, spec.train_per_class, t * c, &spec.input_shape, &mut rng)?;
        let test = sample_split(&means, nuisance_dirs, nuisance_std, spec.test_per_class, t * c, &spec.input_shape, &mut rng)?;
        tasks.push(TaskDataset::new(t + 1, train, test)?);
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SynthSpec {
        SynthSpec {
            tasks: 3,
            classes_per_task: 2,
            input_shape: vec![4, 4, 1],
            separation: 6.0,
            conflict_mode: true,
            nuisance: 1.0,
            train_per_class: 10,
            test_per_class: 5,
            seed: 3,
        }
    }

    #[test]
    fn shapes_and_class_ids() {
        let tasks = generate_synthetic_tasks(&spec()).unwrap();
        assert_eq!(tasks.len(), 3);
        assert_eq!(tasks[2].classes, vec![4, 5]);
        assert_eq!(tasks[0].train.inputs.shape(), &[20, 4, 4, 1]);
        assert_eq!(tasks[1].test.len(), 10);
        crate::train::check_disjoint(&tasks).unwrap();
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic_tasks(&spec()).unwrap();
        let b = generate_synthetic_tasks(&spec()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_geometry_rejected() {
        let mut s = spec();
        s.input_shape = vec![5];
        assert!(matches!(generate_synthetic_tasks(&s), Err(RkrError::Config(_))));
        s.conflict_mode = false;
        assert!(generate_synthetic_tasks(&s).is_ok());
        s.classes_per_task = 1;
        assert!(generate_synthetic_tasks(&s).is_err());
    }

    #[test]
    fn orthonormal_vectors() {
        let b = orthonormal(4, 6, &mut SeededRng::new(1));
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = b[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
