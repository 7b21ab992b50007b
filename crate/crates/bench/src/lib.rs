//! Shared fixtures for the benchmarks.

use mgff_core::graphs::AdjacencySet;
use mgff_core::model::{ModelConfig, ModelParams};
use mgff_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub model: ModelParams,
    pub adj: AdjacencySet,
    pub queries: Vec<Matrix>,
    pub proposals: Vec<Matrix>,
}

/// A default-architecture model over `d`-dim features with a batch of `b`
/// random `t`-step pairs.
pub fn fixture(d: usize, t: usize, b: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = ModelParams::init(ModelConfig::new(d), &mut rng).expect("valid config");
    let adj = AdjacencySet::build(t, &[1, 2, 3]).expect("valid strides");
    let mut clip =
        || Matrix::from_vec(t, d, (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let queries = (0..b).map(|_| clip()).collect();
    let proposals = (0..b).map(|_| clip()).collect();
    Fixture {
        model,
        adj,
        queries,
        proposals,
    }
}

impl Fixture {
    pub fn batch(&self) -> (Vec<&Matrix>, Vec<&Matrix>) {
        (self.queries.iter().collect(), self.proposals.iter().collect())
    }
}
