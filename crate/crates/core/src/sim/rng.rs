use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream handed to a single replication.
pub type SimRng = ChaCha8Rng;

/// Counter-based splitting of a master seed into independent streams.
///
/// Stream `k` is the ChaCha keystream of the master seed at stream id `k`,
/// so replications never share randomness and the sequence is reproducible
/// regardless of how replications are scheduled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplicationStreams {
    seed: u64,
    next: u64,
}

impl ReplicationStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed, next: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of streams handed out so far.
    pub fn issued(&self) -> u64 {
        self.next
    }

    pub fn stream(&self, index: u64) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    pub fn next_stream(&mut self) -> SimRng {
        let rng = self.stream(self.next);
        self.next += 1;
        rng
    }
}
