//! Seeded, treatment-stratified fold assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Independent RNG stream `stream` under master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Partition of `0..n` into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    k: usize,
    seed: u64,
    assignments: Vec<usize>,
}

impl FoldPlan {
    /// Shuffles each stratum with the seed, concatenates the strata and deals
    /// subjects round-robin, so fold sizes differ by at most one and each
    /// stratum is spread evenly.
    pub fn stratified(strata: &[bool], k: usize, seed: u64) -> Result<Self> {
        let n = strata.len();
        if k < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
        }
        if k > n {
            return Err(Error::InvalidConfig(format!("{k} folds for {n} subjects")));
        }
        let mut rng = stream_rng(seed, 0x666f6c64);
        let mut ones: Vec<usize> = (0..n).filter(|&i| strata[i]).collect();
        let mut zeros: Vec<usize> = (0..n).filter(|&i| !strata[i]).collect();
        ones.shuffle(&mut rng);
        zeros.shuffle(&mut rng);
        let mut assignments = vec![0; n];
        for (pos, &i) in ones.iter().chain(zeros.iter()).enumerate() {
            assignments[i] = pos % k;
        }
        Ok(Self {
            k,
            seed,
            assignments,
        })
    }

    /// Builds a plan from explicit assignments.
    pub fn from_assignments(assignments: Vec<usize>, k: usize) -> Result<Self> {
        if k < 2 || assignments.iter().any(|&a| a >= k) {
            return Err(Error::InvalidConfig("invalid fold assignments".into()));
        }
        Ok(Self {
            k,
            seed: 0,
            assignments,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    /// In-fold indices of fold `j`, ascending.
    pub fn in_fold(&self, j: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignments[i] == j).collect()
    }

    /// Out-of-fold indices of fold `j`, ascending.
    pub fn out_of_fold(&self, j: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignments[i] != j).collect()
    }

    /// Errors unless every out-of-fold set contains both values of `strata`.
    pub fn check_both_classes(&self, strata: &[bool]) -> Result<()> {
        for j in 0..self.k {
            let out = self.out_of_fold(j);
            let ones = out.iter().filter(|&&i| strata[i]).count();
            if ones == 0 || ones == out.len() {
                return Err(Error::SingleClassFold);
            }
        }
        Ok(())
    }
}
