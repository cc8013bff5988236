//! MNIST-format data: IDX parsing, i.i.d. sharding, trigger poisoning and
//! the clean/backdoor evaluation sets.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 28;
pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const CLASSES: usize = 10;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Size of the draw from the test set that is split into the two evaluation halves.
pub const EVAL_DRAW: usize = 2000;

/// One labeled 28x28 grayscale image with intensities in `[0, 1]`.
///
/// Pixel storage is shared, so cloning a sample (or a whole shard) is cheap.
/// The indices of non-zero pixels are kept alongside; the learner only ever
/// touches those.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pixels: Arc<[f64]>,
    support: Arc<[u16]>,
    label: u8,
}

impl Sample {
    pub fn new(pixels: Vec<f64>, label: u8) -> Result<Self> {
        if pixels.len() != PIXELS {
            return Err(Error::InvalidSample(format!(
                "expected {PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidSample(format!(
                "pixel {i} = {} is outside [0, 1]",
                pixels[i]
            )));
        }
        if label as usize >= CLASSES {
            return Err(Error::InvalidSample(format!("label {label} is not a digit")));
        }
        Ok(Self::from_valid(pixels.into(), label))
    }

    fn from_valid(pixels: Arc<[f64]>, label: u8) -> Self {
        let support = pixels
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i as u16)
            .collect();
        Self { pixels, support, label }
    }

    fn from_bytes(bytes: &[u8], label: u8) -> Self {
        Self::from_valid(bytes.iter().map(|&b| normalize(b)).collect(), label)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Indices of the non-zero pixels, ascending.
    pub fn support(&self) -> &[u16] {
        &self.support
    }

    pub fn label(&self) -> u8 {
        self.label
    }

    pub fn with_label(mut self, label: u8) -> Self {
        assert!((label as usize) < CLASSES, "label {label} is not a digit");
        self.label = label;
        self
    }
}

/// Byte intensity to `[0, 1]`.
pub fn normalize(byte: u8) -> f64 {
    byte as f64 / 255.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Origin {
    Training,
    Test,
    LocalShard,
    EvalClean,
    EvalBackdoor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub origin: Origin,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, origin: Origin) -> Self {
        Self { samples, origin }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_histogram(&self) -> [usize; CLASSES] {
        let mut hist = [0; CLASSES];
        for s in &self.samples {
            hist[s.label as usize] += 1;
        }
        hist
    }
}

// ---------------------------------------------------------------------------
// IDX container
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IdxKind {
    Images,
    Labels,
}

impl IdxKind {
    pub fn magic(self) -> u32 {
        match self {
            IdxKind::Images => IMAGES_MAGIC,
            IdxKind::Labels => LABELS_MAGIC,
        }
    }
}

/// Raw image payload of an IDX file. Pixels are exposed normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    bytes: Vec<u8>,
}

impl IdxImages {
    pub fn len(&self) -> usize {
        self.bytes.len() / (self.rows * self.cols).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn raw(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.bytes[i * size..(i + 1) * size]
    }

    pub fn pixels(&self, i: usize) -> Vec<f64> {
        self.raw(i).iter().map(|&b| normalize(b)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IdxFragment {
    Images(IdxImages),
    Labels(Vec<u8>),
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated { expected: at + 4, found: bytes.len() })
}

pub fn parse_idx(bytes: &[u8], kind: IdxKind) -> Result<IdxFragment> {
    let magic = read_u32(bytes, 0)?;
    if magic != kind.magic() {
        return Err(Error::BadMagic { found: magic, expected: kind.magic() });
    }
    let count = read_u32(bytes, 4)? as usize;
    match kind {
        IdxKind::Labels => {
            let payload = &bytes[8..];
            if payload.len() != count {
                return Err(Error::Truncated { expected: 8 + count, found: bytes.len() });
            }
            if let Some(&bad) = payload.iter().find(|&&l| l as usize >= CLASSES) {
                return Err(Error::InvalidSample(format!("label byte {bad} is not a digit")));
            }
            Ok(IdxFragment::Labels(payload.to_vec()))
        }
        IdxKind::Images => {
            let rows = read_u32(bytes, 8)? as usize;
            let cols = read_u32(bytes, 12)? as usize;
            if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
                return Err(Error::BadGeometry { rows, cols });
            }
            let payload = &bytes[16..];
            let expected = count * rows * cols;
            if payload.len() != expected {
                return Err(Error::Truncated { expected: 16 + expected, found: bytes.len() });
            }
            Ok(IdxFragment::Images(IdxImages { rows, cols, bytes: payload.to_vec() }))
        }
    }
}

pub fn load_idx(path: impl AsRef<Path>, kind: IdxKind) -> Result<IdxFragment> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, kind)
}

/// Serializes a fragment back into the IDX container.
pub fn encode_idx(fragment: &IdxFragment) -> Vec<u8> {
    match fragment {
        IdxFragment::Labels(labels) => {
            let mut out = Vec::with_capacity(8 + labels.len());
            out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
            out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
            out.extend_from_slice(labels);
            out
        }
        IdxFragment::Images(images) => {
            let mut out = Vec::with_capacity(16 + images.bytes.len());
            out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
            out.extend_from_slice(&(images.len() as u32).to_be_bytes());
            out.extend_from_slice(&(images.rows as u32).to_be_bytes());
            out.extend_from_slice(&(images.cols as u32).to_be_bytes());
            out.extend_from_slice(&images.bytes);
            out
        }
    }
}

/// Zips an image fragment with a label fragment.
pub fn pair(images: &IdxImages, labels: &[u8], origin: Origin) -> Result<Dataset> {
    if images.len() != labels.len() {
        return Err(Error::CountMismatch { images: images.len(), labels: labels.len() });
    }
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| Sample::from_bytes(images.raw(i), label))
        .collect();
    Ok(Dataset::new(samples, origin))
}

fn load_pair(dir: &Path, images: &str, labels: &str, origin: Origin) -> Result<Dataset> {
    let IdxFragment::Images(images) = load_idx(dir.join(images), IdxKind::Images)? else {
        unreachable!("image parse yields images")
    };
    let IdxFragment::Labels(labels) = load_idx(dir.join(labels), IdxKind::Labels)? else {
        unreachable!("label parse yields labels")
    };
    pair(&images, &labels, origin)
}

/// The canonical training and test sets.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub training: Dataset,
    pub test: Dataset,
}

impl Corpus {
    /// Loads the four canonical MNIST files from `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            training: load_pair(dir, TRAIN_IMAGES, TRAIN_LABELS, Origin::Training)?,
            test: load_pair(dir, TEST_IMAGES, TEST_LABELS, Origin::Test)?,
        })
    }
}

// ---------------------------------------------------------------------------
// Sharding
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShardAssignment {
    pub shards: Vec<Vec<usize>>,
}

impl ShardAssignment {
    pub fn materialize(&self, training: &Dataset, node: usize) -> Dataset {
        let samples = self.shards[node].iter().map(|&i| training.samples[i].clone()).collect();
        Dataset::new(samples, Origin::LocalShard)
    }
}

/// Splits `n * shard_size` training indices, drawn uniformly without
/// replacement, into `n` disjoint shards.
pub fn shard_iid<R: Rng + ?Sized>(
    training_len: usize,
    n: usize,
    shard_size: usize,
    rng: &mut R,
) -> Result<ShardAssignment> {
    let needed = n
        .checked_mul(shard_size)
        .ok_or(Error::DatasetTooSmall { needed: usize::MAX, available: training_len })?;
    if needed > training_len {
        return Err(Error::DatasetTooSmall { needed, available: training_len });
    }
    let drawn = index::sample(rng, training_len, needed).into_vec();
    let shards = if shard_size == 0 {
        vec![Vec::new(); n]
    } else {
        drawn.chunks(shard_size).map(<[usize]>::to_vec).collect()
    };
    Ok(ShardAssignment { shards })
}

// ---------------------------------------------------------------------------
// Backdoor
// ---------------------------------------------------------------------------

/// Pixels stamped to full intensity by the backdoor trigger.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TriggerPattern {
    pixels: Vec<usize>,
}

impl Default for TriggerPattern {
    /// 3x3 block in the bottom-right corner (rows 25..=27, cols 25..=27).
    fn default() -> Self {
        Self::block(25, 25, 3).expect("default trigger fits the image")
    }
}

impl TriggerPattern {
    /// A `size` x `size` square whose top-left pixel is at (`row`, `col`).
    pub fn block(row: usize, col: usize, size: usize) -> Result<Self> {
        if size == 0 || row + size > IMAGE_SIDE || col + size > IMAGE_SIDE {
            return Err(Error::Config(format!(
                "trigger block {size}x{size} at ({row}, {col}) does not fit a {IMAGE_SIDE}x{IMAGE_SIDE} image"
            )));
        }
        let pixels = (row..row + size)
            .flat_map(|r| (col..col + size).map(move |c| r * IMAGE_SIDE + c))
            .collect();
        Ok(Self { pixels })
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    /// Copy of `s` with every trigger pixel set to 1.0. The label is untouched.
    pub fn apply(&self, s: &Sample) -> Sample {
        let mut pixels = s.pixels.to_vec();
        for &i in &self.pixels {
            pixels[i] = 1.0;
        }
        Sample::from_valid(pixels.into(), s.label)
    }
}

/// Stamps the default trigger.
pub fn apply_trigger(s: &Sample) -> Sample {
    TriggerPattern::default().apply(s)
}

/// What Byzantine nodes do to their data.
#[derive(Clone, Debug, PartialEq)]
pub struct Backdoor {
    pub trigger: TriggerPattern,
    pub fraction: f64,
    pub target_label: u8,
}

impl Default for Backdoor {
    fn default() -> Self {
        Self { trigger: TriggerPattern::default(), fraction: 0.2, target_label: 0 }
    }
}

impl Backdoor {
    /// Number of samples poisoned in a shard of `len` samples.
    pub fn poisoned_count(&self, len: usize) -> usize {
        (self.fraction * len as f64).round() as usize
    }

    /// Stamps the trigger on `round(fraction * |shard|)` uniformly chosen
    /// samples and relabels them to the target. Order is preserved.
    pub fn poison_shard<R: Rng + ?Sized>(&self, shard: &Dataset, rng: &mut R) -> Dataset {
        assert!((0.0..=1.0).contains(&self.fraction), "poison fraction must lie in [0, 1]");
        let count = self.poisoned_count(shard.len());
        let mut samples = shard.samples.clone();
        for i in index::sample(rng, shard.len(), count) {
            samples[i] = self.trigger.apply(&samples[i]).with_label(self.target_label);
        }
        Dataset::new(samples, shard.origin)
    }

    /// Draws 2000 test samples; the first half is the clean evaluation set.
    /// The second half loses every sample already of the target class, and
    /// the rest are stamped and relabeled to the target, so accuracy on it
    /// is the attack success rate.
    pub fn build_eval_sets<R: Rng + ?Sized>(
        &self,
        test: &Dataset,
        rng: &mut R,
    ) -> Result<(Dataset, Dataset)> {
        if test.len() < EVAL_DRAW {
            return Err(Error::DatasetTooSmall { needed: EVAL_DRAW, available: test.len() });
        }
        let drawn = index::sample(rng, test.len(), EVAL_DRAW).into_vec();
        let (clean_idx, backdoor_idx) = drawn.split_at(EVAL_DRAW / 2);
        let clean = clean_idx.iter().map(|&i| test.samples[i].clone()).collect();
        let backdoor = backdoor_idx
            .iter()
            .map(|&i| &test.samples[i])
            .filter(|s| s.label != self.target_label)
            .map(|s| self.trigger.apply(s).with_label(self.target_label))
            .collect();
        Ok((Dataset::new(clean, Origin::EvalClean), Dataset::new(backdoor, Origin::EvalBackdoor)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn blank(label: u8) -> Sample {
        Sample::new(vec![0.0; PIXELS], label).unwrap()
    }

    fn labels_file(labels: &[u8]) -> Vec<u8> {
        encode_idx(&IdxFragment::Labels(labels.to_vec()))
    }

    fn images_file(count: usize, fill: u8) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        out.extend_from_slice(&(count as u32).to_be_bytes());
        out.extend_from_slice(&28u32.to_be_bytes());
        out.extend_from_slice(&28u32.to_be_bytes());
        out.extend(std::iter::repeat_n(fill, count * PIXELS));
        out
    }

    #[test]
    fn decodes_label_bytes() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 3, 7, 2, 1];
        assert_eq!(parse_idx(&bytes, IdxKind::Labels).unwrap(), IdxFragment::Labels(vec![7, 2, 1]));
    }

    #[test]
    fn normalization_endpoints() {
        let mut bytes = images_file(1, 0);
        bytes[16] = 255;
        let IdxFragment::Images(img) = parse_idx(&bytes, IdxKind::Images).unwrap() else { panic!() };
        let px = img.pixels(0);
        assert_eq!(px[0], 1.0);
        assert_eq!(px[1], 0.0);
    }

    #[test]
    fn errors_are_distinct() {
        let wrong_magic = labels_file(&[1, 2]);
        assert!(matches!(
            parse_idx(&wrong_magic, IdxKind::Images),
            Err(Error::BadMagic { found: LABELS_MAGIC, expected: IMAGES_MAGIC })
        ));

        let mut short = images_file(2, 3);
        short.truncate(short.len() - 1);
        assert!(matches!(parse_idx(&short, IdxKind::Images), Err(Error::Truncated { .. })));
        assert!(matches!(parse_idx(&[0, 0, 8], IdxKind::Labels), Err(Error::Truncated { .. })));

        let IdxFragment::Images(img) = parse_idx(&images_file(2, 0), IdxKind::Images).unwrap() else {
            panic!()
        };
        assert!(matches!(
            pair(&img, &[1, 2, 3], Origin::Training),
            Err(Error::CountMismatch { images: 2, labels: 3 })
        ));
    }

    #[test]
    fn sample_validation() {
        assert!(Sample::new(vec![0.0; 783], 1).is_err());
        assert!(Sample::new(vec![1.5; PIXELS], 1).is_err());
        assert!(Sample::new(vec![0.0; PIXELS], 10).is_err());
        let mut px = vec![0.0; PIXELS];
        px[3] = 0.5;
        px[700] = 1.0;
        assert_eq!(Sample::new(px, 4).unwrap().support(), &[3, 700]);
    }

    #[test]
    fn trigger_sets_nine_pixels() {
        let s = apply_trigger(&blank(4));
        assert_eq!(s.pixels().iter().filter(|&&v| v == 1.0).count(), 9);
        assert_eq!(s.label(), 4);
        for r in 25..28 {
            for c in 25..28 {
                assert_eq!(s.pixels()[r * 28 + c], 1.0);
            }
        }
        assert_eq!(apply_trigger(&s), s);
    }

    #[test]
    fn trigger_block_must_fit() {
        assert!(TriggerPattern::block(26, 0, 3).is_err());
        assert!(TriggerPattern::block(0, 0, 0).is_err());
        assert_eq!(TriggerPattern::block(0, 0, 3).unwrap().pixels(), &[0, 1, 2, 28, 29, 30, 56, 57, 58]);
    }

    #[test]
    fn shard_errors_when_too_large() {
        let mut rng = rng_from_seed(1);
        assert!(matches!(
            shard_iid(100, 3, 50, &mut rng),
            Err(Error::DatasetTooSmall { needed: 150, available: 100 })
        ));
    }

    #[test]
    fn single_full_shard_is_everything() {
        let mut rng = rng_from_seed(1);
        let a = shard_iid(500, 1, 500, &mut rng).unwrap();
        let mut idx = a.shards[0].clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..500).collect::<Vec<_>>());
    }

    #[test]
    fn poison_counts() {
        let shard = Dataset::new((0..250).map(|i| blank((i % 10) as u8)).collect(), Origin::LocalShard);
        let bd = Backdoor::default();
        let mut rng = rng_from_seed(3);
        let poisoned = bd.poison_shard(&shard, &mut rng);
        let stamped = poisoned.samples.iter().filter(|s| s.pixels()[783] == 1.0).count();
        assert_eq!(stamped, 50);
        for (a, b) in shard.samples.iter().zip(&poisoned.samples) {
            if b.pixels()[783] == 1.0 {
                assert_eq!(b.label(), 0);
            } else {
                assert_eq!(a, b);
            }
        }

        let none = Backdoor { fraction: 0.0, ..Backdoor::default() }.poison_shard(&shard, &mut rng);
        assert_eq!(none, shard);

        let all = Backdoor { fraction: 1.0, ..Backdoor::default() }.poison_shard(&shard, &mut rng);
        assert!(all.samples.iter().all(|s| s.label() == 0 && s.pixels()[783] == 1.0));
    }

    #[test]
    fn eval_sets_need_enough_data() {
        let tiny = Dataset::new(vec![blank(1); 1999], Origin::Test);
        let mut rng = rng_from_seed(0);
        assert!(Backdoor::default().build_eval_sets(&tiny, &mut rng).is_err());
    }
}
