use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Position of a draw in the training run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct StreamId {
    pub epoch: u64,
    pub batch: u64,
    pub draw: u64,
}

/// Seed plus stream coordinates for one counter-based random stream.
///
/// Identical `(seed, stream)` pairs produce identical draws. Child streams
/// are derived by hashing, so a sampler that consumes a variable number of
/// values (rejection sampling) never shifts the draws of its siblings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BaseNoise {
    pub seed: u64,
    pub stream: StreamId,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl BaseNoise {
    pub fn new(seed: u64, epoch: u64, batch: u64) -> Self {
        Self {
            seed,
            stream: StreamId {
                epoch,
                batch,
                draw: 0,
            },
        }
    }

    /// A distinct stream keyed by `index` under this one.
    pub fn child(&self, index: u64) -> Self {
        let mut stream = self.stream;
        stream.draw = splitmix64(stream.draw ^ splitmix64(index.wrapping_add(1)));
        Self {
            seed: self.seed,
            stream,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let key = splitmix64(
            splitmix64(splitmix64(self.stream.epoch) ^ self.stream.batch) ^ self.stream.draw,
        );
        rng.set_stream(key);
        rng
    }
}
