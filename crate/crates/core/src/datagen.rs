//! Synthetic classification data and Dirichlet non-IID client shards.
//!
//! Classes are isotropic unit-variance Gaussians whose means sit on a
//! scaled orthonormal simplex (`separation · u_c`), so every pair of class
//! means is `separation·√2` apart. Client shards follow the usual
//! proportion-per-client recipe: draw class proportions from
//! `Dirichlet(α)`, round them to a fixed sample budget, then take samples
//! without replacement from shuffled per-class pools.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub num_classes: usize,
    pub dim: usize,
    /// Norm of each class mean.
    pub separation: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            num_classes: 4,
            dim: 16,
            separation: 3.0,
            train_size: 40_000,
            val_size: 400,
            test_size: 3_600,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        if self.dim < self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "feature dim {} cannot hold {} orthogonal class means",
                self.dim, self.num_classes
            )));
        }
        let smallest = self.train_size.min(self.val_size).min(self.test_size);
        if smallest < self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "every split needs at least {} samples",
                self.num_classes
            )));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::InvalidArgument(
                "separation must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Feature rows with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn class_histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut h = vec![0; num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub num_classes: usize,
    pub dim: usize,
    pub means: Vec<Vec<f64>>,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl SyntheticTask {
    /// Fresh samples from the task distribution, e.g. a pretraining pool.
    pub fn draw(&self, n: usize, rng: &mut Rng) -> Dataset {
        draw_samples(&self.means, n, rng)
    }
}

pub fn generate_task(spec: &TaskSpec, rng: &mut Rng) -> Result<SyntheticTask> {
    spec.validate()?;
    let means = simplex_means(spec.num_classes, spec.dim, spec.separation, rng);
    let train = draw_samples(&means, spec.train_size, rng);
    let val = draw_samples(&means, spec.val_size, rng);
    let test = draw_samples(&means, spec.test_size, rng);
    Ok(SyntheticTask {
        num_classes: spec.num_classes,
        dim: spec.dim,
        means,
        train,
        val,
        test,
    })
}

/// Gram-Schmidt on Gaussian vectors, scaled to `separation`.
fn simplex_means(c: usize, d: usize, separation: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(c);
    while basis.len() < c {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal(0.0, 1.0)).collect();
        for u in &basis {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        basis.push(v.into_iter().map(|x| x / norm).collect());
    }
    basis
        .into_iter()
        .map(|u| u.into_iter().map(|x| x * separation).collect())
        .collect()
}

fn draw_samples(means: &[Vec<f64>], n: usize, rng: &mut Rng) -> Dataset {
    let d = means[0].len();
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let label = rng.below(means.len());
        labels.push(label);
        for &mu in &means[label] {
            data.push(mu + rng.normal(0.0, 1.0));
        }
    }
    Dataset {
        features: Matrix::new(n, d, data).expect("sized above"),
        labels,
    }
}

/// One draw from `Dirichlet(alpha, …, alpha)` over `c` classes.
pub fn dirichlet_proportions(alpha: f64, c: usize, rng: &mut Rng) -> Vec<f64> {
    assert!(alpha > 0.0, "Dirichlet concentration must be positive");
    loop {
        let draws: Vec<f64> = (0..c).map(|_| rng.gamma(alpha)).collect();
        let total: f64 = draws.iter().sum();
        // All-zero draws only happen through underflow at tiny alpha.
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quality {
    High,
    Low,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub hq_fraction: f64,
    pub alpha_hq: f64,
    pub alpha_lq: f64,
    /// HQ clients get exactly uniform class counts instead of a Dirichlet draw.
    pub hq_balanced: bool,
    pub samples_per_client: usize,
    pub max_retries: usize,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec {
            hq_fraction: 0.1,
            alpha_hq: 5.0,
            alpha_lq: 1.0,
            hq_balanced: false,
            samples_per_client: 320,
            max_retries: 100,
        }
    }
}

impl PartitionSpec {
    /// One perfectly balanced client among `num_clients`, the rest drawn
    /// at `alpha = 0.6`.
    pub fn lone_hq(num_clients: usize, samples_per_client: usize) -> Self {
        PartitionSpec {
            hq_fraction: 1.0 / num_clients as f64,
            alpha_hq: 5.0,
            alpha_lq: 0.6,
            hq_balanced: true,
            samples_per_client,
            max_retries: 100,
        }
    }

    pub fn validate(&self, num_clients: usize) -> Result<()> {
        if !(self.hq_fraction >= 0.0 && self.hq_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "hq_fraction must lie in [0, 1), got {}",
                self.hq_fraction
            )));
        }
        if !(self.alpha_hq > 0.0 && self.alpha_lq > 0.0) {
            return Err(Error::InvalidArgument(
                "Dirichlet alphas must be positive".into(),
            ));
        }
        if num_clients == 0 || self.samples_per_client == 0 {
            return Err(Error::InvalidArgument(
                "need at least one client and one sample per client".into(),
            ));
        }
        Ok(())
    }

    pub fn num_hq(&self, num_clients: usize) -> usize {
        (self.hq_fraction * num_clients as f64).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub quality: Quality,
    /// Indices into the task's training split.
    pub indices: Vec<usize>,
    pub histogram: Vec<usize>,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Shannon entropy (nats) of the shard's class distribution.
    pub fn label_entropy(&self) -> f64 {
        let total = self.len() as f64;
        self.histogram
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.ln()
            })
            .sum()
    }
}

/// Rounds `props · budget` to integers summing to `budget` by largest
/// remainder; ties go to the lower class index.
fn allocate(props: &[f64], budget: usize) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * budget as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&i, &j| {
        let fi = raw[i] - raw[i].floor();
        let fj = raw[j] - raw[j].floor();
        fj.total_cmp(&fi).then(i.cmp(&j))
    });
    for &i in order.iter().take(budget.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

pub fn partition(
    task: &SyntheticTask,
    num_clients: usize,
    spec: &PartitionSpec,
    rng: &mut Rng,
) -> Result<Vec<ClientShard>> {
    spec.validate(num_clients)?;
    let c = task.num_classes;
    let budget = num_clients * spec.samples_per_client;
    if budget > task.train.len() {
        return Err(Error::InvalidArgument(format!(
            "{num_clients} clients x {} samples exceed the {} training samples",
            spec.samples_per_client,
            task.train.len()
        )));
    }

    let mut hq = rng.sample_indices(num_clients, spec.num_hq(num_clients));
    hq.sort_unstable();

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &l) in task.train.labels.iter().enumerate() {
        pools[l].push(i);
    }
    for pool in &mut pools {
        rng.shuffle(pool);
    }

    let uniform = vec![1.0 / c as f64; c];
    let mut shards = Vec::with_capacity(num_clients);
    for client_id in 0..num_clients {
        let quality = if hq.binary_search(&client_id).is_ok() {
            Quality::High
        } else {
            Quality::Low
        };
        let mut attempt = 0;
        let counts = loop {
            let props = match quality {
                Quality::High if spec.hq_balanced => uniform.clone(),
                Quality::High => dirichlet_proportions(spec.alpha_hq, c, rng),
                Quality::Low => dirichlet_proportions(spec.alpha_lq, c, rng),
            };
            let counts = allocate(&props, spec.samples_per_client);
            match (0..c).find(|&k| counts[k] > pools[k].len()) {
                None => break counts,
                Some(class) => {
                    attempt += 1;
                    // A balanced request cannot change on retry.
                    if attempt > spec.max_retries || (quality == Quality::High && spec.hq_balanced)
                    {
                        return Err(Error::InsufficientSamples {
                            client: client_id,
                            class,
                            retries: attempt,
                        });
                    }
                }
            }
        };
        let mut indices = Vec::with_capacity(spec.samples_per_client);
        for (k, &n) in counts.iter().enumerate() {
            let at = pools[k].len() - n;
            indices.extend(pools[k].drain(at..));
        }
        indices.sort_unstable();
        shards.push(ClientShard {
            client_id,
            quality,
            indices,
            histogram: counts,
        });
    }
    Ok(shards)
}

/// Dumps every split as CSV: `split,client_id,label,f0,…`. Training rows
/// carry their owning client (or -1); validation and test rows carry -1.
pub fn write_dataset_csv(task: &SyntheticTask, shards: &[ClientShard], path: &Path) -> Result<()> {
    let mut owner = vec![-1i64; task.train.len()];
    for s in shards {
        for &i in &s.indices {
            owner[i] = s.client_id as i64;
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut header = String::from("split,client_id,label");
    for j in 0..task.dim {
        header.push_str(&format!(",f{j}"));
    }
    let mut lines = vec![header];
    let mut push = |split: &str, ds: &Dataset, owners: Option<&[i64]>| {
        for i in 0..ds.len() {
            let id = owners.map_or(-1, |o| o[i]);
            let mut line = format!("{split},{id},{}", ds.labels[i]);
            for v in ds.features.row(i) {
                line.push_str(&format!(",{v}"));
            }
            lines.push(line);
        }
    };
    push("train", &task.train, Some(&owner));
    push("val", &task.val, None);
    push("test", &task.test, None);
    for line in lines {
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
