//! Monte Carlo layer: sampled trees, the oriented update rule, and
//! prevalence counts.
//!
//! Sampling is exact: child counts and initial states come from uniform
//! draws below the weights' common denominator, compared against exact
//! cumulative numerators, so the realized law is the requested rational
//! law with no rounding. Everything is deterministic given the seed;
//! independent samples use independent RNG substreams keyed by sample
//! index, so results do not depend on scheduling.

use std::mem;

use fixedbitset::FixedBitSet;
use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::offspring::OffspringDistribution;
use crate::ratpoly::Rat;

/// Generator recorded in serialized output for reproducibility.
pub const RNG_ALGO: &str = "chacha8";

/// Refuse to sample when the expected node count exceeds this.
pub const DEFAULT_NODE_CAP: u64 = 50_000_000;

/// Inverse CDF over a finite rational law: a uniform integer below the
/// common denominator, compared against exact cumulative numerators.
struct ExactSampler {
    outcomes: Vec<u32>,
    /// Cumulative weight numerators over the common denominator; the last
    /// entry equals the denominator.
    cumulative: Vec<BigUint>,
    denom: BigUint,
    /// Fast path when the denominator fits in a machine word.
    small: Option<(Vec<u64>, u64)>,
}

impl ExactSampler {
    fn new(weights: &[(u32, Rat)]) -> Self {
        let denom: num_bigint::BigInt = weights
            .iter()
            .fold(num_bigint::BigInt::one(), |acc, (_, w)| acc.lcm(w.denom()));
        let mut outcomes = Vec::with_capacity(weights.len());
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = num_bigint::BigInt::zero();
        for (k, w) in weights {
            acc += w.numer() * (&denom / w.denom());
            outcomes.push(*k);
            cumulative.push(acc.magnitude().clone());
        }
        let denom = denom.magnitude().clone();
        debug_assert_eq!(cumulative.last(), Some(&denom), "weights must sum to 1");
        let small = denom
            .to_u64()
            .map(|d| (cumulative.iter().map(|c| c.to_u64().unwrap()).collect(), d));
        ExactSampler {
            outcomes,
            cumulative,
            denom,
            small,
        }
    }

    /// Outcome 1 with probability `p`, else 0.
    fn bernoulli(p: &Rat) -> Self {
        ExactSampler::new(&[(1, p.clone()), (0, Rat::one() - p)])
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> u32 {
        match &self.small {
            Some((cum, d)) => {
                let u = rng.gen_range(0..*d);
                self.outcomes[cum.partition_point(|c| *c <= u)]
            }
            None => {
                let u = uniform_below(&self.denom, rng);
                self.outcomes[self.cumulative.partition_point(|c| c <= &u)]
            }
        }
    }
}

/// Uniform BigUint in [0, bound) by rejection on the bit width.
fn uniform_below(bound: &BigUint, rng: &mut ChaCha8Rng) -> BigUint {
    let bits = bound.bits();
    let words = bits.div_ceil(32) as usize;
    let top_mask = if bits.is_multiple_of(32) {
        u32::MAX
    } else {
        (1u32 << (bits % 32)) - 1
    };
    loop {
        let mut digits = vec![0u32; words];
        for d in digits.iter_mut() {
            *d = rng.gen();
        }
        digits[words - 1] &= top_mask;
        let candidate = BigUint::new(digits);
        if &candidate < bound {
            return candidate;
        }
    }
}

/// The root's state after a given number of update steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeState {
    Infected,
    Healthy,
}

impl NodeState {
    pub fn is_infected(self) -> bool {
        self == NodeState::Infected
    }
}

/// One sampled tree with its initial infection pattern, stored as layered
/// flat arrays: per-node child counts (internal layers) and one bit of
/// initial state per node.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledTree {
    xi: OffspringDistribution,
    depth: u32,
    seed: Option<u64>,
    /// `layer_offsets[d]..layer_offsets[d+1]` indexes layer d; one past
    /// the last layer closes the range, so the length is depth + 2.
    layer_offsets: Vec<usize>,
    /// Child counts for nodes in layers 0..depth (leaves store none).
    child_counts: Vec<u32>,
    init_infected: FixedBitSet,
}

impl SampledTree {
    pub fn xi(&self) -> &OffspringDistribution {
        &self.xi
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Seed the tree was sampled with; `None` for hand-built trees.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn node_count(&self) -> usize {
        *self.layer_offsets.last().unwrap()
    }

    pub fn layer_size(&self, d: u32) -> usize {
        let d = d as usize;
        self.layer_offsets[d + 1] - self.layer_offsets[d]
    }

    /// Number of vertices within distance `radius` of the root.
    pub fn ball_size(&self, radius: u32) -> u64 {
        assert!(radius <= self.depth, "ball radius exceeds sampled depth");
        self.layer_offsets[radius as usize + 1] as u64
    }

    pub fn initially_infected_count(&self) -> usize {
        self.init_infected.count_ones(..)
    }

    /// Builds a tree from explicit per-layer child counts and initial
    /// states, for constructing exact test fixtures.
    pub fn from_parts(
        xi: OffspringDistribution,
        child_counts: Vec<Vec<u32>>,
        infected: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let r = xi.r();
        let depth = child_counts.len();
        if infected.len() != depth + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} state layers for {} child-count layers (need one more)",
                infected.len(),
                depth
            )));
        }
        if infected[0].len() != 1 {
            return Err(Error::InvalidArgument("layer 0 must hold the root".into()));
        }
        let mut layer_offsets = vec![0usize, 1];
        let mut flat_counts = Vec::new();
        for d in 0..depth {
            let expected = layer_offsets[d + 1] - layer_offsets[d];
            if child_counts[d].len() != expected {
                return Err(Error::InvalidArgument(format!(
                    "layer {d} has {expected} nodes but {} child counts",
                    child_counts[d].len()
                )));
            }
            let mut next = 0usize;
            for &c in &child_counts[d] {
                if c < r {
                    return Err(Error::InvalidArgument(format!(
                        "child count {c} below r={r}"
                    )));
                }
                next += c as usize;
                flat_counts.push(c);
            }
            if infected[d + 1].len() != next {
                return Err(Error::InvalidArgument(format!(
                    "layer {} has {} states but child counts sum to {next}",
                    d + 1,
                    infected[d + 1].len()
                )));
            }
            layer_offsets.push(layer_offsets[d + 1] + next);
        }
        let total = *layer_offsets.last().unwrap();
        let mut init = FixedBitSet::with_capacity(total);
        let mut idx = 0;
        for layer in &infected {
            for &b in layer {
                init.set(idx, b);
                idx += 1;
            }
        }
        Ok(SampledTree {
            xi,
            depth: depth as u32,
            seed: None,
            layer_offsets,
            child_counts: flat_counts,
            init_infected: init,
        })
    }

    /// Root state after `t` update steps, by one bottom-up pass over the
    /// depth-`t` cone: layer d carries its state at time t-d, so only
    /// layers 0..=t are ever read.
    pub fn root_state_at(&self, t: u32) -> Result<NodeState> {
        if t > self.depth {
            return Err(Error::InsufficientDepth {
                depth: self.depth as usize,
                t: t as usize,
            });
        }
        let r = self.xi.r() as usize;
        let t = t as usize;
        let mut below: Vec<bool> = (self.layer_offsets[t]..self.layer_offsets[t + 1])
            .map(|v| self.init_infected.contains(v))
            .collect();
        for d in (0..t).rev() {
            let lo = self.layer_offsets[d];
            let hi = self.layer_offsets[d + 1];
            let mut cur = Vec::with_capacity(hi - lo);
            let mut cpos = 0usize;
            for v in lo..hi {
                let cc = self.child_counts[v] as usize;
                let state = self.init_infected.contains(v)
                    || below[cpos..cpos + cc].iter().filter(|&&b| b).count() >= r;
                cur.push(state);
                cpos += cc;
            }
            below = cur;
        }
        Ok(if below[0] {
            NodeState::Infected
        } else {
            NodeState::Healthy
        })
    }

    /// States of every node after `t` steps: full double-buffer sweeps,
    /// one per step, stopping early at a fixed point (updates are
    /// monotone, so a quiet sweep is final).
    pub fn states_at(&self, t: u32) -> Result<FixedBitSet> {
        if t > self.depth {
            return Err(Error::InsufficientDepth {
                depth: self.depth as usize,
                t: t as usize,
            });
        }
        let r = self.xi.r() as usize;
        let mut cur = self.init_infected.clone();
        if t == 0 {
            return Ok(cur);
        }
        let mut next = cur.clone();
        for _ in 0..t {
            let mut changed = false;
            for d in 0..self.depth as usize {
                let lo = self.layer_offsets[d];
                let hi = self.layer_offsets[d + 1];
                let mut cpos = hi;
                for v in lo..hi {
                    let cc = self.child_counts[v] as usize;
                    let was = cur.contains(v);
                    let state = was || {
                        let mut seen = 0;
                        for c in cpos..cpos + cc {
                            if cur.contains(c) {
                                seen += 1;
                                if seen >= r {
                                    break;
                                }
                            }
                        }
                        seen >= r
                    };
                    next.set(v, state);
                    changed |= state != was;
                    cpos += cc;
                }
            }
            mem::swap(&mut cur, &mut next);
            if !changed {
                break;
            }
        }
        Ok(cur)
    }

    /// Infected fraction over the ball of the given radius (or the
    /// annulus of width `w` inside it) after `t` steps, with the region
    /// size.
    fn infected_fraction(&self, radius: u32, w: Option<u32>, t: u32) -> Result<(f64, u64)> {
        let states = self.states_at(t)?;
        let from_layer = match w {
            Some(w) => (radius - w + 1) as usize,
            None => 0,
        };
        let lo = self.layer_offsets[from_layer];
        let hi = self.layer_offsets[radius as usize + 1];
        let region = (hi - lo) as u64;
        let infected = states.count_ones(lo..hi) as u64;
        Ok((infected as f64 / region as f64, region))
    }
}

/// Expected node count of a depth-`depth` sample, `Σ_{d<=depth} μ^d`.
/// Refused for infinite-mean laws.
pub fn expected_node_count(xi: &OffspringDistribution, depth: u32) -> Result<f64> {
    let mu = xi.mean().ok_or_else(|| {
        Error::Refused("offspring mean is infinite; tree sampling would not terminate".into())
    })?;
    let mu = mu.to_f64().unwrap();
    let mut total = 0.0;
    let mut pow = 1.0;
    for _ in 0..=depth {
        total += pow;
        pow *= mu;
    }
    Ok(total)
}

fn check_q(q: &Rat) -> Result<()> {
    if q.is_negative() || q > &Rat::one() {
        return Err(Error::InvalidArgument(format!("need 0 <= q <= 1, got {q}")));
    }
    Ok(())
}

/// Guard shared by every sampling entry point.
fn admit(xi: &OffspringDistribution, q: &Rat, depth: u32, node_cap: u64) -> Result<()> {
    check_q(q)?;
    let expected = expected_node_count(xi, depth)?;
    if expected > node_cap as f64 {
        return Err(Error::Refused(format!(
            "expected node count {expected:.3e} exceeds the cap of {node_cap} \
             (depth {depth}, mean offspring {:.4})",
            xi.mean().unwrap().to_f64().unwrap()
        )));
    }
    Ok(())
}

/// The construction itself; callers have already run `admit`. Actual
/// sizes can overshoot the expectation, so a hard stop at 4x the cap
/// bounds memory regardless of the draw.
fn build_tree(
    xi: &OffspringDistribution,
    q: &Rat,
    depth: u32,
    mut rng: ChaCha8Rng,
    seed: Option<u64>,
    node_cap: u64,
) -> Result<SampledTree> {
    let weights: Vec<(u32, Rat)> = xi
        .finite_weights()
        .expect("admitted laws have finite support")
        .iter()
        .map(|(&k, w)| (k, w.clone()))
        .collect();
    let child_sampler = ExactSampler::new(&weights);
    let healthy_sampler = ExactSampler::bernoulli(q);
    let hard_cap = (node_cap as usize).saturating_mul(4);

    let mut layer_offsets = vec![0usize, 1];
    let mut child_counts = Vec::new();
    let mut init_bits: Vec<bool> = Vec::new();
    for d in 0..=depth {
        let lo = layer_offsets[d as usize];
        let hi = layer_offsets[d as usize + 1];
        let mut next = 0usize;
        for _ in lo..hi {
            if d < depth {
                let c = child_sampler.draw(&mut rng);
                child_counts.push(c);
                next += c as usize;
            }
            init_bits.push(healthy_sampler.draw(&mut rng) == 0);
        }
        if d < depth {
            if hi + next > hard_cap {
                return Err(Error::Refused(format!(
                    "sampled tree reached {} nodes, past the hard cap of {hard_cap}",
                    hi + next
                )));
            }
            layer_offsets.push(hi + next);
        }
    }
    let mut init = FixedBitSet::with_capacity(init_bits.len());
    for (i, b) in init_bits.into_iter().enumerate() {
        init.set(i, b);
    }
    Ok(SampledTree {
        xi: xi.clone(),
        depth,
        seed,
        layer_offsets,
        child_counts,
        init_infected: init,
    })
}

/// Samples a depth-`depth` tree with i.i.d. child counts from ξ and
/// i.i.d. initial states (healthy with probability q), deterministically
/// from the seed. Refused when the expected node count exceeds the cap.
pub fn sample_tree(
    xi: &OffspringDistribution,
    q: &Rat,
    depth: u32,
    seed: u64,
) -> Result<SampledTree> {
    sample_tree_with_cap(xi, q, depth, seed, DEFAULT_NODE_CAP)
}

pub fn sample_tree_with_cap(
    xi: &OffspringDistribution,
    q: &Rat,
    depth: u32,
    seed: u64,
    node_cap: u64,
) -> Result<SampledTree> {
    admit(xi, q, depth, node_cap)?;
    build_tree(xi, q, depth, ChaCha8Rng::seed_from_u64(seed), Some(seed), node_cap)
}

/// Monte Carlo estimate of the healthy-root probability.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PhiEstimate {
    pub value: f64,
    /// `sqrt(v(1-v)/n)`, the binomial scale of the estimate.
    pub std_error: f64,
    pub n_trees: u64,
    pub t: u32,
}

/// Estimates φ_t as the healthy-root fraction over independent samples of
/// depth t. Sample i uses RNG substream i of the seed, so the estimate is
/// deterministic regardless of thread scheduling.
pub fn estimate_phi(
    xi: &OffspringDistribution,
    q: &Rat,
    t: u32,
    n_trees: u64,
    seed: u64,
) -> Result<PhiEstimate> {
    if n_trees == 0 {
        return Err(Error::InvalidArgument("need n_trees >= 1".into()));
    }
    admit(xi, q, t, DEFAULT_NODE_CAP)?;
    let healthy: u64 = (0..n_trees)
        .into_par_iter()
        .map(|i| -> Result<u64> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let tree = build_tree(xi, q, t, rng, Some(seed), DEFAULT_NODE_CAP)?;
            Ok(u64::from(!tree.root_state_at(t)?.is_infected()))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let value = healthy as f64 / n_trees as f64;
    Ok(PhiEstimate {
        value,
        std_error: (value * (1.0 - value) / n_trees as f64).sqrt(),
        n_trees,
        t,
    })
}

/// Infected fraction over a ball (or annulus) of one sampled tree.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PrevalenceEstimate {
    pub r_ball: u32,
    pub w: Option<u32>,
    pub t: u32,
    pub value: f64,
    pub ball_size: u64,
    pub n_trees: u64,
    /// Binomial scale over the counted region; dependence between sites
    /// makes this an indication, not a confidence radius.
    pub std_error: f64,
    pub seed: u64,
}

/// Counts the infected fraction over `B(R)` (or over `B(R) \ B(R-w)` when
/// an annulus width is given) at time `t`, on a single tree sampled to
/// depth `R + t` so every counted vertex has its full dependency cone.
/// The count within the tree is exact.
pub fn prevalence(
    xi: &OffspringDistribution,
    q: &Rat,
    radius: u32,
    t: u32,
    w: Option<u32>,
    seed: u64,
    node_cap: Option<u64>,
) -> Result<PrevalenceEstimate> {
    if let Some(w) = w {
        if w < 1 || w > radius {
            return Err(Error::InvalidArgument(format!(
                "annulus width must satisfy 1 <= w <= R, got w={w}, R={radius}"
            )));
        }
    }
    let cap = node_cap.unwrap_or(DEFAULT_NODE_CAP);
    let tree = sample_tree_with_cap(xi, q, radius + t, seed, cap)?;
    let (value, region) = tree.infected_fraction(radius, w, t)?;
    Ok(PrevalenceEstimate {
        r_ball: radius,
        w,
        t,
        value,
        ball_size: tree.ball_size(radius),
        n_trees: 1,
        std_error: (value * (1.0 - value) / region as f64).sqrt(),
        seed,
    })
}

/// How often single-tree prevalence lands within `tolerance` of the
/// recursion value `1 - φ_t`, over consecutive seeds.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AgreementReport {
    pub trials: u32,
    pub successes: u32,
    pub rate: f64,
    /// The recursion value 1 - φ_t the runs are compared against.
    pub reference: f64,
    pub tolerance: f64,
}

/// Runs `prevalence` over `trials` consecutive seeds and reports how many
/// landed within `tol` of `1 - φ_t` from the exact recursion.
#[allow(clippy::too_many_arguments)]
pub fn prevalence_agreement(
    xi: &OffspringDistribution,
    q: &Rat,
    radius: u32,
    t: u32,
    w: Option<u32>,
    seed0: u64,
    trials: u32,
    tol: f64,
) -> Result<AgreementReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need trials >= 1".into()));
    }
    let trace = crate::dynamics::iterate(
        xi,
        q,
        crate::dynamics::StopRule::max_steps(u64::from(t)),
        crate::precision::Precision::F64,
    )?;
    let reference = 1.0 - trace.last();
    let successes: u32 = (0..trials)
        .into_par_iter()
        .map(|i| -> Result<u32> {
            let p = prevalence(xi, q, radius, t, w, seed0 + u64::from(i), None)?;
            Ok(u32::from((p.value - reference).abs() < tol))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(AgreementReport {
        trials,
        successes,
        rate: f64::from(successes) / f64::from(trials),
        reference,
        tolerance: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratpoly::rat;
    use std::collections::BTreeMap;

    fn fin(r: u32, pairs: &[(u32, (i64, i64))]) -> OffspringDistribution {
        let w: BTreeMap<u32, Rat> = pairs.iter().map(|&(k, (n, d))| (k, rat(n, d))).collect();
        OffspringDistribution::finite(r, w).unwrap()
    }

    fn dirac2() -> OffspringDistribution {
        OffspringDistribution::dirac(2, 2).unwrap()
    }

    fn half_half() -> OffspringDistribution {
        fin(2, &[(2, (1, 2)), (3, (1, 2))])
    }

    #[test]
    fn dirac_tree_is_full_binary() {
        let tree = sample_tree(&dirac2(), &rat(1, 2), 3, 7).unwrap();
        assert_eq!(tree.node_count(), 15);
        assert_eq!(tree.depth(), 3);
        for d in 0..=3 {
            assert_eq!(tree.layer_size(d), 1 << d);
        }
        assert_eq!(tree.ball_size(2), 7);
    }

    #[test]
    fn sampling_is_deterministic_in_the_seed() {
        let a = sample_tree(&half_half(), &rat(3, 4), 4, 42).unwrap();
        let b = sample_tree(&half_half(), &rat(3, 4), 4, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn layer_one_mean_matches_offspring_mean() {
        // Root child count is uniform on {2, 3}: mean 2.5, sd 0.5.
        let xi = half_half();
        let n = 100_000u64;
        let total: u64 = (0..n)
            .into_par_iter()
            .map(|s| sample_tree(&xi, &rat(1, 2), 1, s).unwrap().layer_size(1) as u64)
            .sum();
        let mean = total as f64 / n as f64;
        let three_sigma = 3.0 * 0.5 / (n as f64).sqrt();
        assert!((mean - 2.5).abs() < three_sigma, "mean {mean}");
    }

    #[test]
    fn exact_sampler_handles_wide_denominators() {
        // Denominator 2^70 exercises the big-integer rejection path.
        let big: num_bigint::BigInt = num_bigint::BigInt::from(1u8) << 70u32;
        let w1 = Rat::new((num_bigint::BigInt::from(1u8) << 69u32) + 1, big.clone());
        let w2 = Rat::one() - &w1;
        let xi = OffspringDistribution::finite(2, BTreeMap::from([(2, w1), (3, w2)])).unwrap();
        let n = 10_000u64;
        let total: u64 = (0..n)
            .into_par_iter()
            .map(|s| sample_tree(&xi, &rat(1, 2), 1, s).unwrap().layer_size(1) as u64)
            .sum();
        let mean = total as f64 / n as f64;
        assert!(
            (mean - 2.5).abs() < 3.0 * 0.5 / (n as f64).sqrt(),
            "mean {mean}"
        );
    }

    fn hand_tree(counts: Vec<Vec<u32>>, infected: Vec<Vec<bool>>) -> SampledTree {
        SampledTree::from_parts(dirac2(), counts, infected).unwrap()
    }

    #[test]
    fn update_rule_spot_checks() {
        // All initially infected: infected already at t=0.
        let t0 = hand_tree(vec![vec![2]], vec![vec![true], vec![true, true]]);
        assert_eq!(t0.root_state_at(0).unwrap(), NodeState::Infected);

        // Healthy root, both children infected: flips at t=1.
        let t1 = hand_tree(vec![vec![2]], vec![vec![false], vec![true, true]]);
        assert_eq!(t1.root_state_at(0).unwrap(), NodeState::Healthy);
        assert_eq!(t1.root_state_at(1).unwrap(), NodeState::Infected);

        // One infected child is below r=2: never flips.
        let t2 = hand_tree(vec![vec![2]], vec![vec![false], vec![true, false]]);
        assert_eq!(t2.root_state_at(1).unwrap(), NodeState::Healthy);

        // Infection climbs one layer per step from the grandchildren.
        let t3 = hand_tree(
            vec![vec![2], vec![2, 2]],
            vec![vec![false], vec![false, false], vec![true; 4]],
        );
        assert_eq!(t3.root_state_at(1).unwrap(), NodeState::Healthy);
        assert_eq!(t3.root_state_at(2).unwrap(), NodeState::Infected);

        // Depth guard.
        assert!(matches!(
            t3.root_state_at(3),
            Err(Error::InsufficientDepth { depth: 2, t: 3 })
        ));
    }

    #[test]
    fn cone_pass_and_full_sweeps_agree() {
        let xi = half_half();
        for seed in 0..30 {
            let tree = sample_tree(&xi, &rat(7, 10), 6, seed).unwrap();
            for t in 0..=6 {
                let cone = tree.root_state_at(t).unwrap().is_infected();
                let full = tree.states_at(t).unwrap().contains(0);
                assert_eq!(cone, full, "seed {seed}, t {t}");
            }
        }
    }

    #[test]
    fn infection_is_monotone_in_time() {
        let xi = half_half();
        for seed in 0..20 {
            let tree = sample_tree(&xi, &rat(3, 5), 6, seed).unwrap();
            let mut was = false;
            for t in 0..=6 {
                let now = tree.root_state_at(t).unwrap().is_infected();
                assert!(!was || now, "seed {seed} flipped back at t={t}");
                was = now;
            }
        }
    }

    #[test]
    fn estimate_phi_at_time_zero_is_q() {
        let e = estimate_phi(&half_half(), &rat(2, 3), 0, 20_000, 5).unwrap();
        assert!((e.value - 2.0 / 3.0).abs() < 3.0 * e.std_error, "{e:?}");
    }

    #[test]
    fn estimate_phi_matches_recursion_after_one_step() {
        // Closed forms: q^2(3-2q) at q=9/10 is 0.891 for the binary tree;
        // the (3/4, 1/4) law at q=2/3 gives 46/81.
        let e = estimate_phi(&dirac2(), &rat(9, 10), 1, 100_000, 11).unwrap();
        assert!((e.value - 0.891).abs() < 3.0 * e.std_error, "{e:?}");

        let xi = fin(2, &[(2, (3, 4)), (3, (1, 4))]);
        let e = estimate_phi(&xi, &rat(2, 3), 1, 100_000, 12).unwrap();
        assert!((e.value - 46.0 / 81.0).abs() < 3.0 * e.std_error, "{e:?}");
    }

    #[test]
    fn infinite_support_is_refused() {
        let xi = OffspringDistribution::claim39(2).unwrap();
        assert!(matches!(
            estimate_phi(&xi, &rat(1, 2), 1, 10, 0),
            Err(Error::Refused(_))
        ));
        assert!(matches!(
            sample_tree(&xi, &rat(1, 2), 2, 0),
            Err(Error::Refused(_))
        ));
    }

    #[test]
    fn memory_guard_refuses_oversize_requests() {
        let e = sample_tree(&dirac2(), &rat(1, 2), 40, 0).unwrap_err();
        match e {
            Error::Refused(msg) => assert!(msg.contains("cap"), "{msg}"),
            other => panic!("expected Refused, got {other:?}"),
        }
    }

    #[test]
    fn prevalence_at_time_zero_matches_initial_density() {
        let p = prevalence(&dirac2(), &rat(4, 5), 8, 0, None, 3, None).unwrap();
        assert_eq!(p.ball_size, 511);
        let sigma = (0.2f64 * 0.8 / 511.0).sqrt();
        assert!((p.value - 0.2).abs() < 4.0 * sigma, "{p:?}");
    }

    #[test]
    fn annulus_of_full_width_drops_only_the_root() {
        let full = prevalence(&dirac2(), &rat(9, 10), 9, 1, None, 17, None).unwrap();
        let ann = prevalence(&dirac2(), &rat(9, 10), 9, 1, Some(9), 17, None).unwrap();
        // Same seed, same tree: the counts differ by the root alone.
        assert!(
            (full.value - ann.value).abs() <= 1.0 / 1022.0,
            "{full:?} {ann:?}"
        );
    }

    #[test]
    fn balls_double_per_layer() {
        let xi = half_half();
        for seed in [1u64, 2, 3] {
            let tree = sample_tree(&xi, &rat(1, 2), 8, seed).unwrap();
            for w in 1..=8u32 {
                for radius in w..=8 {
                    let inner = tree.ball_size(radius - w) as f64;
                    let outer = tree.ball_size(radius) as f64;
                    assert!(inner <= outer / 2f64.powi(w as i32));
                }
            }
        }
    }

    #[test]
    fn single_tree_prevalence_tracks_the_recursion() {
        let report =
            prevalence_agreement(&dirac2(), &rat(9, 10), 12, 2, None, 100, 20, 0.01).unwrap();
        assert!(
            report.rate >= 0.9,
            "only {}/{} within 0.01 of {}",
            report.successes,
            report.trials,
            report.reference
        );
    }
}
