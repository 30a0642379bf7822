//! Seeding and fan-out for independent replicas.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

/// Generator used by every simulator (period 2^256 − 1).
pub type SimRng = Xoshiro256PlusPlus;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replica `index` under `master`.
pub fn replica_seed(master: u64, index: u64) -> u64 {
    master ^ splitmix64(index)
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Runs `job(index, seed)` for every replica and returns results in index
/// order. `jobs = None` uses rayon's global pool.
pub fn run_replicas<T, F>(master_seed: u64, count: usize, jobs: Option<usize>, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, u64) -> T + Sync + Send,
{
    let work = || {
        (0..count)
            .into_par_iter()
            .map(|r| job(r, replica_seed(master_seed, r as u64)))
            .collect()
    };
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(work),
        None => work(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference generator seeded with 0.
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
        assert_eq!(
            splitmix64(0x9e37_79b9_7f4a_7c15),
            0x6e78_9e6a_a1b9_65f4
        );
    }

    #[test]
    fn results_come_back_in_index_order() {
        let out = run_replicas(7, 64, Some(4), |r, seed| (r, seed));
        for (k, (r, seed)) in out.iter().enumerate() {
            assert_eq!(*r, k);
            assert_eq!(*seed, replica_seed(7, k as u64));
        }
    }
}
