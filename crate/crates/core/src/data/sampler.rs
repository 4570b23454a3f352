use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Style,
    Composition,
}

/// Index into the dataset of `task`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TaskSample {
    pub task: Task,
    pub index: usize,
}

/// Mixed style/composition mini-batches with equal per-task contribution.
///
/// Each epoch visits every sample of the larger dataset once. The smaller
/// dataset is also visited once and then topped up with draws with
/// replacement until both tasks contribute the same number of samples.
/// The tagged stream is shuffled and cut into batches; the last batch may
/// be short.
#[derive(Clone, Debug)]
pub struct BalancedBatches {
    n_style: usize,
    n_comp: usize,
    batch_size: usize,
    rng: Rng,
}

impl BalancedBatches {
    pub fn new(n_style: usize, n_comp: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n_style == 0 || n_comp == 0 {
            return Err(Error::Invalid(format!(
                "balanced sampling needs two non-empty datasets, got {n_style} and {n_comp}"
            )));
        }
        if batch_size < 2 {
            return Err(Error::Config(format!("batch size must be >= 2, got {batch_size}")));
        }
        Ok(BalancedBatches {
            n_style,
            n_comp,
            batch_size,
            rng: rng::stream(seed, "balanced-batches"),
        })
    }

    pub fn samples_per_task(&self) -> usize {
        self.n_style.max(self.n_comp)
    }

    pub fn next_epoch(&mut self) -> Vec<Vec<TaskSample>> {
        let per_task = self.samples_per_task();
        let mut stream = Vec::with_capacity(2 * per_task);
        for (task, n) in [(Task::Style, self.n_style), (Task::Composition, self.n_comp)] {
            stream.extend((0..n).map(|index| TaskSample { task, index }));
            for _ in n..per_task {
                let index = self.rng.random_range(0..n);
                stream.push(TaskSample { task, index });
            }
        }
        stream.shuffle(&mut self.rng);
        stream.chunks(self.batch_size).map(<[_]>::to_vec).collect()
    }
}

/// Shuffled single-dataset batches, for runs that train one task only.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[_]>::to_vec).collect()
}
