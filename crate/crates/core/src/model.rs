//! Multinomial logistic regression over flattened MNIST images, plus the
//! partition view of its parameter vector that gossip messages carry.
//!
//! Parameters are laid out as ten class rows of 785 values: 784 pixel weights
//! followed by the class bias. Training and scoring skip zero pixels, which
//! is exact and roughly five times cheaper on MNIST.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{Dataset, Sample, CLASSES, PIXELS};
use crate::error::{Error, Result};

pub const ROW: usize = PIXELS + 1;
pub const PARAMS: usize = CLASSES * ROW;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparams {
    /// Learning rate.
    pub eta: f64,
    /// L2 coefficient on the weights (biases are not regularized).
    pub lambda: f64,
    pub batch_size: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self { eta: 1.0, lambda: 0.0, batch_size: 10 }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

type ClassVec = [f64; CLASSES];

/// Model parameters.
///
/// The canonical flat view (what [`ParamVector::values`] returns and what
/// partitions slice) is class-major: `values[c * 785 + j]` is the weight of
/// pixel `j` for class `c`, and `values[c * 785 + 784]` is the bias of `c`.
/// Internally the weights are stored pixel-major so that the ten class
/// scores of one pixel sit next to each other.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    weights: Vec<ClassVec>,
    bias: ClassVec,
    /// Number of local updates reflected in this model.
    pub age: u64,
}

impl Default for ParamVector {
    fn default() -> Self {
        Self::zeros()
    }
}

impl ParamVector {
    pub fn zeros() -> Self {
        Self { weights: vec![[0.0; CLASSES]; PIXELS], bias: [0.0; CLASSES], age: 0 }
    }

    pub fn from_values(values: Vec<f64>, age: u64) -> Result<Self> {
        if values.len() != PARAMS {
            return Err(Error::Config(format!("expected {PARAMS} parameters, got {}", values.len())));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Diverged { index });
        }
        let mut p = Self::zeros();
        p.age = age;
        for (k, v) in values.into_iter().enumerate() {
            *p.at_mut(k) = v;
        }
        Ok(p)
    }

    fn at(&self, k: usize) -> f64 {
        let (c, j) = (k / ROW, k % ROW);
        if j == PIXELS {
            self.bias[c]
        } else {
            self.weights[j][c]
        }
    }

    fn at_mut(&mut self, k: usize) -> &mut f64 {
        let (c, j) = (k / ROW, k % ROW);
        if j == PIXELS {
            &mut self.bias[c]
        } else {
            &mut self.weights[j][c]
        }
    }

    /// The canonical class-major flat vector.
    pub fn values(&self) -> Vec<f64> {
        (0..PARAMS).map(|k| self.at(k)).collect()
    }

    pub fn weight(&self, class: usize, pixel: usize) -> f64 {
        self.weights[pixel][class]
    }

    pub fn bias(&self, class: usize) -> f64 {
        self.bias[class]
    }

    pub fn set_bias(&mut self, class: usize, value: f64) {
        self.bias[class] = value;
    }

    /// Class scores for a dense pixel vector.
    pub fn logits(&self, pixels: &[f64]) -> ClassVec {
        debug_assert_eq!(pixels.len(), PIXELS);
        let mut z = self.bias;
        for (w, &x) in self.weights.iter().zip(pixels) {
            if x != 0.0 {
                for c in 0..CLASSES {
                    z[c] += w[c] * x;
                }
            }
        }
        z
    }

    fn sample_logits(&self, s: &Sample) -> ClassVec {
        let pixels = s.pixels();
        let mut z = self.bias;
        for &j in s.support() {
            let (w, x) = (&self.weights[j as usize], pixels[j as usize]);
            for c in 0..CLASSES {
                z[c] += w[c] * x;
            }
        }
        z
    }

    fn check_finite(&self) -> Result<()> {
        if self.weights.iter().flatten().chain(&self.bias).all(|v| v.is_finite()) {
            return Ok(());
        }
        let index = (0..PARAMS).find(|&k| !self.at(k).is_finite()).expect("a non-finite value");
        Err(Error::Diverged { index })
    }

    /// One epoch of minibatch SGD over a fresh shuffle of `shard`.
    pub fn train_epoch<R: Rng + ?Sized>(
        &mut self,
        shard: &[Sample],
        h: &Hyperparams,
        rng: &mut R,
    ) -> Result<()> {
        if shard.is_empty() {
            return Err(Error::Empty);
        }
        let mut order: Vec<usize> = (0..shard.len()).collect();
        order.shuffle(rng);
        let mut coeffs: Vec<ClassVec> = Vec::with_capacity(h.batch_size);
        for batch in order.chunks(h.batch_size) {
            // Residuals are taken at the pre-step parameters for the whole batch.
            let step = h.eta / batch.len() as f64;
            coeffs.clear();
            for &i in batch {
                let s = &shard[i];
                let mut p = softmax(&self.sample_logits(s));
                p[s.label() as usize] -= 1.0;
                coeffs.push(p.map(|r| r * step));
            }
            if h.lambda > 0.0 {
                let decay = 1.0 - h.eta * h.lambda;
                self.weights.iter_mut().flatten().for_each(|w| *w *= decay);
            }
            for (&i, g) in batch.iter().zip(&coeffs) {
                let s = &shard[i];
                let pixels = s.pixels();
                for &j in s.support() {
                    let (w, x) = (&mut self.weights[j as usize], pixels[j as usize]);
                    for c in 0..CLASSES {
                        w[c] -= g[c] * x;
                    }
                }
                for (b, gc) in self.bias.iter_mut().zip(g) {
                    *b -= gc;
                }
            }
        }
        self.age += 1;
        self.check_finite()
    }

    /// Overwrites the slice `[start, end)` with the midpoint of the local and
    /// incoming values; the age becomes the larger of the two.
    pub fn merge(&mut self, msg: &PartitionMsg, partitions: usize) -> Result<()> {
        if msg.total_partitions != partitions {
            return Err(Error::PartitionMismatch {
                message: msg.total_partitions,
                receiver: partitions,
            });
        }
        let (start, end) = slice_bounds(msg.partition_index, partitions, PARAMS)?;
        if msg.values.len() != end - start {
            return Err(Error::MalformedMessage(format!(
                "partition {} of {} carries {} values, expected {}",
                msg.partition_index,
                partitions,
                msg.values.len(),
                end - start
            )));
        }
        for (k, &incoming) in (start..end).zip(&msg.values) {
            let local = self.at_mut(k);
            *local = (*local + incoming) / 2.0;
        }
        self.age = self.age.max(msg.age);
        Ok(())
    }

    /// Writes the raw little-endian parameters (canonical order) to `path` and
    /// a one-line `age=<age> partitions=<S>` header to `<path>.header`.
    pub fn write_snapshot(&self, path: impl AsRef<Path>, partitions: usize) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self.values().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        let header = header_path(path);
        fs::write(&header, format!("age={} partitions={}\n", self.age, partitions))
            .map_err(|e| Error::io(&header, e))
    }

    /// Reads a snapshot written by [`ParamVector::write_snapshot`]; returns
    /// the parameters and the partition count.
    pub fn read_snapshot(path: impl AsRef<Path>) -> Result<(Self, usize)> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() != PARAMS * 8 {
            return Err(Error::Truncated { expected: PARAMS * 8, found: bytes.len() });
        }
        let values = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let header = header_path(path);
        let text = fs::read_to_string(&header).map_err(|e| Error::io(&header, e))?;
        let mut age = None;
        let mut partitions = None;
        for field in text.split_whitespace() {
            match field.split_once('=') {
                Some(("age", v)) => age = v.parse().ok(),
                Some(("partitions", v)) => partitions = v.parse().ok(),
                _ => {}
            }
        }
        let (Some(age), Some(partitions)) = (age, partitions) else {
            return Err(Error::Config(format!("malformed snapshot header {}", header.display())));
        };
        Ok((Self::from_values(values, age)?, partitions))
    }
}

fn header_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".header");
    name.into()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64; CLASSES]) -> [f64; CLASSES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.map(|z| (z - max).exp());
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(logits: &[f64; CLASSES]) -> usize {
    let mut best = 0;
    for c in 1..CLASSES {
        if logits[c] > logits[best] {
            best = c;
        }
    }
    best
}

pub fn predict(p: &ParamVector, pixels: &[f64]) -> usize {
    argmax(&p.logits(pixels))
}

pub fn predict_sample(p: &ParamVector, s: &Sample) -> usize {
    argmax(&p.sample_logits(s))
}

/// Mean cross-entropy plus `lambda/2 * |w|^2`, and its exact gradient in
/// the canonical layout.
pub fn loss_and_gradient(p: &ParamVector, batch: &[Sample], h: &Hyperparams) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty);
    }
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; PARAMS];
    for s in batch {
        let logits = p.sample_logits(s);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_total = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
        loss -= (logits[s.label() as usize] - log_total) * inv;
        let mut r = softmax(&logits);
        r[s.label() as usize] -= 1.0;
        let pixels = s.pixels();
        for (row, &rc) in grad.chunks_exact_mut(ROW).zip(&r) {
            for &j in s.support() {
                row[j as usize] += rc * pixels[j as usize] * inv;
            }
            row[PIXELS] += rc * inv;
        }
    }
    if h.lambda > 0.0 {
        for (c, row) in grad.chunks_exact_mut(ROW).enumerate() {
            for (j, g) in row[..PIXELS].iter_mut().enumerate() {
                let w = p.weight(c, j);
                loss += 0.5 * h.lambda * w * w;
                *g += h.lambda * w;
            }
        }
    }
    Ok((loss, grad))
}

/// Returns a copy of `p` after one local training epoch on `shard`.
pub fn local_update<R: Rng + ?Sized>(
    p: &ParamVector,
    shard: &Dataset,
    h: &Hyperparams,
    rng: &mut R,
) -> Result<ParamVector> {
    let mut next = p.clone();
    next.train_epoch(&shard.samples, h, rng)?;
    Ok(next)
}

/// Half-open bounds of partition `i` when `total` values are cut into
/// `partitions` contiguous slices of near-equal size.
pub fn slice_bounds(i: usize, partitions: usize, total: usize) -> Result<(usize, usize)> {
    if partitions == 0 || partitions > total || i >= partitions {
        return Err(Error::PartitionOutOfRange { index: i, total: partitions });
    }
    Ok((i * total / partitions, (i + 1) * total / partitions))
}

/// A parameter slice in flight.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionMsg {
    pub partition_index: usize,
    pub total_partitions: usize,
    pub values: Vec<f64>,
    pub age: u64,
    pub sender: usize,
}

pub fn extract_partition(p: &ParamVector, i: usize, partitions: usize, sender: usize) -> Result<PartitionMsg> {
    let (start, end) = slice_bounds(i, partitions, PARAMS)?;
    Ok(PartitionMsg {
        partition_index: i,
        total_partitions: partitions,
        values: (start..end).map(|k| p.at(k)).collect(),
        age: p.age,
        sender,
    })
}

pub fn merge_partition(p: &ParamVector, msg: &PartitionMsg, partitions: usize) -> Result<ParamVector> {
    let mut next = p.clone();
    next.merge(msg, partitions)?;
    Ok(next)
}

/// Fraction of samples whose prediction equals the stored label.
pub fn accuracy(p: &ParamVector, eval: &Dataset) -> Result<f64> {
    if eval.is_empty() {
        return Err(Error::Empty);
    }
    let correct = eval
        .samples
        .iter()
        .filter(|s| predict_sample(p, s) == s.label() as usize)
        .count();
    Ok(correct as f64 / eval.len() as f64)
}
