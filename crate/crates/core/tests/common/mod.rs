#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use gossip_poison::data::{Corpus, Dataset, Origin, Sample, CLASSES, PIXELS};
use gossip_poison::rng::rng_from_seed;
use rand::Rng;

/// Directory holding the MNIST IDX files: `GOSSIP_POISON_DATA_DIR` if set,
/// otherwise `data/mnist` at the workspace root.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("GOSSIP_POISON_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

/// The real MNIST corpus, loaded once per test binary.
pub fn mnist() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let dir = mnist_dir();
        Corpus::load(&dir).unwrap_or_else(|e| {
            panic!("MNIST is required at {} (or set GOSSIP_POISON_DATA_DIR): {e}", dir.display())
        })
    })
}

/// A sparse image whose lit pixels depend on the label, so that the classes
/// are learnable.
pub fn synthetic_sample<R: Rng>(label: u8, rng: &mut R) -> Sample {
    let mut px = vec![0.0; PIXELS];
    let band = 60 * label as usize;
    for _ in 0..25 {
        px[band + rng.gen_range(0..60)] = rng.gen_range(0.5..1.0);
    }
    for _ in 0..10 {
        px[rng.gen_range(0..PIXELS)] = rng.gen_range(0.0..1.0);
    }
    Sample::new(px, label).unwrap()
}

pub fn synthetic_dataset(len: usize, seed: u64, origin: Origin) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let samples = (0..len).map(|_| synthetic_sample(rng.gen_range(0..CLASSES as u8), &mut rng)).collect();
    Dataset::new(samples, origin)
}

/// Small learnable corpus for engine-level tests.
pub fn synthetic_corpus(training: usize) -> Corpus {
    Corpus {
        training: synthetic_dataset(training, 11, Origin::Training),
        test: synthetic_dataset(2000, 12, Origin::Test),
    }
}
