//! Link budget and Monte Carlo model of a multimode repeater chain built
//! from heralded segments and memory-assisted swaps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Speed of light in fibre, km/s.
pub const FIBER_LIGHT_SPEED: f64 = 2e5;

/// χ² critical value for 3 degrees of freedom at 1 % significance.
pub const CHI2_3DOF_1PCT: f64 = 11.344866730144373;

fn check_attenuation(a: f64) -> Result<()> {
    ensure(a >= 0.0 && a.is_finite(), "attenuation", || {
        format!("attenuation must be non-negative, got {a} dB/km")
    })
}

fn check_length(name: &'static str, l: f64) -> Result<()> {
    ensure(l >= 0.0 && l.is_finite(), name, || format!("length must be non-negative, got {l} km"))
}

fn check_probability(name: &'static str, p: f64) -> Result<()> {
    ensure((0.0..=1.0).contains(&p), name, || format!("probability must lie in [0, 1], got {p}"))
}

/// 10^(−aL/10).
pub fn channel_transmission(attenuation: f64, length: f64) -> Result<f64> {
    check_attenuation(attenuation)?;
    check_length("length", length)?;
    Ok(10f64.powf(-attenuation * length / 10.0))
}

/// L₀ / c in seconds.
pub fn min_storage_time(segment_length: f64, speed: f64) -> Result<f64> {
    check_length("segment_length", segment_length)?;
    ensure(speed > 0.0 && speed.is_finite(), "speed", || format!("signal speed must be positive, got {speed}"))?;
    Ok(segment_length / speed)
}

/// 10^(−aL₀/20): the transmission from a node to the segment midpoint.
pub fn min_efficiency(attenuation: f64, segment_length: f64) -> Result<f64> {
    check_attenuation(attenuation)?;
    check_length("segment_length", segment_length)?;
    Ok(10f64.powf(-attenuation * segment_length / 20.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Usefulness {
    pub useful: bool,
    /// ε² over the direct transmission of one segment.
    pub margin: f64,
}

/// A memory helps when ε² beats the direct segment transmission strictly;
/// margins within rounding of one count as equality.
pub fn memory_usefulness(efficiency: f64, attenuation: f64, segment_length: f64) -> Result<Usefulness> {
    check_probability("efficiency", efficiency)?;
    let direct = channel_transmission(attenuation, segment_length)?;
    let margin = efficiency * efficiency / direct;
    Ok(Usefulness {
        useful: margin > 1.0 + 1e-12,
        margin,
    })
}

/// 1 − (1 − p)^N.
pub fn segment_success_prob(p_link: f64, modes: u64) -> Result<f64> {
    check_probability("p_link", p_link)?;
    ensure(modes >= 1, "modes", || "need at least one mode".into())?;
    // ln_1p/exp_m1 keep precision for tiny p_link.
    Ok(-(modes as f64 * (-p_link).ln_1p()).exp_m1())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    /// dB/km.
    pub attenuation: f64,
    /// Segment length L₀ in km.
    pub segment_length: f64,
    /// Total length L in km.
    pub total_length: f64,
    /// km/s.
    #[serde(default = "default_speed")]
    pub speed: f64,
}

fn default_speed() -> f64 {
    FIBER_LIGHT_SPEED
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        check_attenuation(self.attenuation)?;
        ensure(self.segment_length > 0.0, "segment_length", || {
            format!("segment length must be positive, got {}", self.segment_length)
        })?;
        ensure(
            self.total_length >= self.segment_length && self.total_length.is_finite(),
            "total_length",
            || format!("total length {} is shorter than a segment", self.total_length),
        )?;
        ensure(self.speed > 0.0 && self.speed.is_finite(), "speed", || {
            format!("signal speed must be positive, got {}", self.speed)
        })
    }

    /// Number of segments, L / L₀, which must be a whole number.
    pub fn segments(&self) -> Result<u32> {
        self.validate()?;
        let n = self.total_length / self.segment_length;
        let r = n.round();
        ensure((n - r).abs() <= 1e-9 * n, "total_length", || {
            format!("total length must be a whole number of segments, got {n}")
        })?;
        Ok(r as u32)
    }

    /// Duration of one attempt: light to the midpoint and the herald back.
    pub fn round_time(&self) -> f64 {
        self.segment_length / self.speed
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeaterConfig {
    pub channel: ChannelSpec,
    pub modes: u64,
    pub memory_efficiency: f64,
    /// Storage lifetime in seconds; infinite means no loss while waiting.
    #[serde(default = "infinite")]
    pub memory_lifetime: f64,
    #[serde(default = "one")]
    pub p_swap: f64,
    #[serde(default = "one")]
    pub p_pair: f64,
    /// Midpoint Bell measurement success; 0.5 for linear optics.
    #[serde(default = "half")]
    pub p_bsm_mid: f64,
    /// Trials still waiting after this many rounds count as failures.
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u64,
}

fn infinite() -> f64 {
    f64::INFINITY
}
fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn default_max_rounds() -> u64 {
    1_000_000
}

impl RepeaterConfig {
    pub fn new(channel: ChannelSpec, modes: u64, memory_efficiency: f64) -> Self {
        Self {
            channel,
            modes,
            memory_efficiency,
            memory_lifetime: f64::INFINITY,
            p_swap: 1.0,
            p_pair: 1.0,
            p_bsm_mid: 0.5,
            max_rounds: default_max_rounds(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.channel.segments()?;
        ensure(self.modes >= 1, "modes", || "need at least one mode".into())?;
        check_probability("memory_efficiency", self.memory_efficiency)?;
        check_probability("p_swap", self.p_swap)?;
        check_probability("p_pair", self.p_pair)?;
        check_probability("p_bsm_mid", self.p_bsm_mid)?;
        ensure(self.memory_lifetime > 0.0, "memory_lifetime", || {
            format!("memory lifetime must be positive, got {}", self.memory_lifetime)
        })?;
        ensure(self.max_rounds >= 1, "max_rounds", || "need at least one round".into())
    }

    /// Heralded entanglement probability of one mode in one segment.
    pub fn p_link(&self) -> f64 {
        let half = 10f64.powf(-self.channel.attenuation * self.channel.segment_length / 20.0);
        self.p_pair * half * half * self.p_bsm_mid
    }

    pub fn p_segment(&self) -> Result<f64> {
        segment_success_prob(self.p_link(), self.modes)
    }

    /// Probability that the swap chain succeeds once every segment is ready:
    /// each of the (segments − 1) swaps reads two memories.
    pub fn p_chain(&self) -> Result<f64> {
        let swaps = self.channel.segments()?.saturating_sub(1) as i32;
        Ok((self.memory_efficiency * self.memory_efficiency * self.p_swap).powi(swaps))
    }

    /// Whole rounds a stored pair survives.
    pub fn lifetime_rounds(&self) -> u64 {
        let r = self.memory_lifetime / self.channel.round_time();
        if r.is_infinite() || r >= u64::MAX as f64 {
            u64::MAX
        } else {
            // Guard against 0.75e-3 / 0.75e-3 landing just below 1.
            (r * (1.0 + 1e-12)).floor() as u64
        }
    }
}

/// The four maximally entangled two-qubit states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BellState {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

impl BellState {
    pub const ALL: [BellState; 4] = [Self::PhiPlus, Self::PhiMinus, Self::PsiPlus, Self::PsiMinus];

    fn from_bits(bits: u8) -> Self {
        Self::ALL[(bits & 3) as usize]
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeaterOutcome {
    pub rounds: u64,
    /// rounds × round time, in seconds.
    pub time: f64,
    pub success: bool,
    pub bell_state: Option<BellState>,
    /// Rounds in which every segment was ready and the swaps were attempted.
    pub chain_attempts: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeaterSummary {
    pub trials: u64,
    pub successes: u64,
    pub success_fraction: f64,
    /// Set when success is impossible; no trials are run then.
    pub zero_probability: bool,
    pub mean_rounds: f64,
    pub std_err_rounds: f64,
    pub mean_time: f64,
    pub median_time: f64,
    /// Successes per second of elapsed time over all trials.
    pub rate: f64,
    /// Successful chains per chain attempt.
    pub chain_success_fraction: f64,
    pub bell_counts: [u64; 4],
    pub round_time: f64,
    pub p_link: f64,
    pub p_segment: f64,
    pub p_chain: f64,
}

impl RepeaterSummary {
    /// Pearson χ² of the Bell labels against a uniform distribution.
    pub fn bell_chi_squared(&self) -> f64 {
        bell_chi_squared(&self.bell_counts)
    }
}

pub fn bell_chi_squared(counts: &[u64; 4]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let e = total as f64 / 4.0;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

/// One trial. Every round draws the same number of uniforms (one per
/// segment plus one for the swap chain) so runs with different parameters
/// but the same stream stay coupled.
fn run_trial(cfg: &RepeaterConfig, segments: usize, p_seg: f64, p_chain: f64, rng: &mut ChaCha8Rng) -> RepeaterOutcome {
    let life = cfg.lifetime_rounds();
    // Age of the stored pair in each segment, in rounds; None while waiting.
    let mut age: Vec<Option<u64>> = vec![None; segments];
    let mut chain_attempts = 0;
    for round in 1..=cfg.max_rounds {
        for a in age.iter_mut() {
            let u: f64 = rng.random();
            *a = match *a {
                Some(k) if k < life => Some(k + 1),
                _ if u < p_seg => Some(1),
                _ => None,
            };
        }
        let u_chain: f64 = rng.random();
        if age.iter().all(Option::is_some) {
            chain_attempts += 1;
            if u_chain < p_chain {
                // The final state is the product of every Bell measurement's
                // Pauli frame: midpoint measurements plus swaps.
                let mut bits = 0u8;
                for _ in 0..(2 * segments - 1) {
                    bits ^= rng.random_range(0..4u8);
                }
                return RepeaterOutcome {
                    rounds: round,
                    time: round as f64 * cfg.channel.round_time(),
                    success: true,
                    bell_state: Some(BellState::from_bits(bits)),
                    chain_attempts,
                };
            }
            age.iter_mut().for_each(|a| *a = None);
        }
    }
    RepeaterOutcome {
        rounds: cfg.max_rounds,
        time: cfg.max_rounds as f64 * cfg.channel.round_time(),
        success: false,
        bell_state: None,
        chain_attempts,
    }
}

/// Runs `trials` independent trials; trial i uses stream i of the root seed,
/// so results do not depend on scheduling.
pub fn simulate_repeater(cfg: &RepeaterConfig, trials: u64, seed: u64) -> Result<(RepeaterSummary, Vec<RepeaterOutcome>)> {
    cfg.validate()?;
    ensure(trials >= 1, "trials", || "need at least one trial".into())?;
    let segments = cfg.channel.segments()? as usize;
    let p_seg = cfg.p_segment()?;
    let p_chain = cfg.p_chain()?;
    let round_time = cfg.channel.round_time();
    let impossible = p_seg == 0.0 || p_chain == 0.0 || cfg.lifetime_rounds() == 0;
    let base = RepeaterSummary {
        trials,
        successes: 0,
        success_fraction: 0.0,
        zero_probability: impossible,
        mean_rounds: f64::NAN,
        std_err_rounds: f64::NAN,
        mean_time: f64::NAN,
        median_time: f64::NAN,
        rate: 0.0,
        chain_success_fraction: 0.0,
        bell_counts: [0; 4],
        round_time,
        p_link: cfg.p_link(),
        p_segment: p_seg,
        p_chain,
    };
    if impossible {
        return Ok((base, Vec::new()));
    }
    let outcomes: Vec<RepeaterOutcome> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            run_trial(cfg, segments, p_seg, p_chain, &mut rng)
        })
        .collect();
    let n = trials as f64;
    let successes = outcomes.iter().filter(|o| o.success).count() as u64;
    let mean_rounds = outcomes.iter().map(|o| o.rounds as f64).sum::<f64>() / n;
    let var = outcomes.iter().map(|o| (o.rounds as f64 - mean_rounds).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let mut times: Vec<f64> = outcomes.iter().map(|o| o.time).collect();
    times.sort_by(f64::total_cmp);
    let median_time = if times.len() % 2 == 1 {
        times[times.len() / 2]
    } else {
        0.5 * (times[times.len() / 2 - 1] + times[times.len() / 2])
    };
    let total_time: f64 = times.iter().sum();
    let attempts: u64 = outcomes.iter().map(|o| o.chain_attempts).sum();
    let mut bell_counts = [0u64; 4];
    for b in outcomes.iter().filter_map(|o| o.bell_state) {
        bell_counts[b.index()] += 1;
    }
    let summary = RepeaterSummary {
        successes,
        success_fraction: successes as f64 / n,
        mean_rounds,
        std_err_rounds: (var / n).sqrt(),
        mean_time: mean_rounds * round_time,
        median_time,
        rate: successes as f64 / total_time,
        chain_success_fraction: if attempts > 0 { successes as f64 / attempts as f64 } else { 0.0 },
        bell_counts,
        ..base
    };
    Ok((summary, outcomes))
}

/// (rounds, count) pairs in increasing order of rounds.
pub fn rounds_histogram(outcomes: &[RepeaterOutcome]) -> Vec<(u64, u64)> {
    let mut map = std::collections::BTreeMap::new();
    for o in outcomes {
        *map.entry(o.rounds).or_insert(0u64) += 1;
    }
    map.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn channel(l0: f64, segments: f64) -> ChannelSpec {
        ChannelSpec {
            attenuation: 0.2,
            segment_length: l0,
            total_length: l0 * segments,
            speed: FIBER_LIGHT_SPEED,
        }
    }

    #[test]
    fn closed_forms() {
        assert_eq!(channel_transmission(0.2, 0.0).unwrap(), 1.0);
        assert_relative_eq!(min_storage_time(100.0, 2e5).unwrap(), 5e-4, max_relative = 1e-15);
        assert_eq!(min_storage_time(0.0, 2e5).unwrap(), 0.0);
        assert_eq!(min_efficiency(0.0, 300.0).unwrap(), 1.0);
        assert!(channel_transmission(-0.1, 1.0).is_err());
        assert!(channel_transmission(0.1, -1.0).is_err());
        assert_relative_eq!(segment_success_prob(0.1, 44).unwrap(), 0.990302, epsilon = 1e-6);
        assert_eq!(segment_success_prob(0.1, 1).unwrap(), 0.1);
        assert_eq!(segment_success_prob(0.0, 7).unwrap(), 0.0);
    }

    #[test]
    fn usefulness_boundaries() {
        let u = memory_usefulness(0.5, 0.2, 40.0).unwrap();
        assert!(u.useful);
        assert_relative_eq!(u.margin, 0.25 / 10f64.powf(-0.8), max_relative = 1e-12);
        assert_relative_eq!(u.margin, 1.58, epsilon = 0.01);
        let eps = min_efficiency(0.2, 40.0).unwrap();
        assert!(!memory_usefulness(eps, 0.2, 40.0).unwrap().useful);
        let u = memory_usefulness(1.0, 0.0, 40.0).unwrap();
        assert!(!u.useful);
        assert_eq!(u.margin, 1.0);
    }

    #[test]
    fn segments_must_tile_the_link() {
        let mut c = channel(100.0, 3.0);
        assert_eq!(c.segments().unwrap(), 3);
        c.total_length = 250.0;
        assert!(c.segments().is_err());
    }

    #[test]
    fn two_segments_with_many_modes_finish_at_once() {
        let mut cfg = RepeaterConfig::new(channel(50.0, 2.0), 200, 1.0);
        cfg.p_bsm_mid = 1.0;
        assert!(cfg.p_segment().unwrap() > 0.99);
        let (s, out) = simulate_repeater(&cfg, 20_000, 3).unwrap();
        let first = out.iter().filter(|o| o.rounds == 1).count() as f64 / 20_000.0;
        let expect = cfg.p_segment().unwrap().powi(2);
        assert!(first >= 0.98);
        assert!((first - expect).abs() < 3.0 * (expect * (1.0 - expect) / 20_000.0).sqrt() + 1e-12);
        assert_eq!(s.successes, 20_000);
    }

    #[test]
    fn chain_success_matches_readout_product() {
        let mut cfg = RepeaterConfig::new(channel(50.0, 3.0), 50, 0.9);
        cfg.p_bsm_mid = 1.0;
        let (s, _) = simulate_repeater(&cfg, 40_000, 11).unwrap();
        let p = 0.9f64.powi(4);
        assert_relative_eq!(cfg.p_chain().unwrap(), p, max_relative = 1e-12);
        let attempts = s.successes as f64 / s.chain_success_fraction;
        let se = (p * (1.0 - p) / attempts).sqrt();
        assert!((s.chain_success_fraction - p).abs() < 3.0 * se, "{} vs {p}", s.chain_success_fraction);
    }

    #[test]
    fn impossible_configurations_report_zero() {
        let mut cfg = RepeaterConfig::new(channel(50.0, 2.0), 1, 0.0);
        let (s, out) = simulate_repeater(&cfg, 10, 0).unwrap();
        assert!(s.zero_probability && out.is_empty());
        cfg.memory_efficiency = 0.9;
        cfg.memory_lifetime = 0.5 * cfg.channel.round_time();
        assert!(simulate_repeater(&cfg, 10, 0).unwrap().0.zero_probability);
    }

    #[test]
    fn reproducible_for_fixed_seed() {
        let cfg = RepeaterConfig::new(channel(100.0, 2.0), 5, 0.8);
        let a = simulate_repeater(&cfg, 2000, 42).unwrap();
        let b = simulate_repeater(&cfg, 2000, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_repeater(&cfg, 2000, 43).unwrap();
        assert_ne!(a.0.mean_rounds, c.0.mean_rounds);
    }

    #[test]
    fn finite_lifetime_is_slower() {
        let mut cfg = RepeaterConfig::new(channel(100.0, 2.0), 2, 1.0);
        let (free, _) = simulate_repeater(&cfg, 5000, 9).unwrap();
        cfg.memory_lifetime = 2.0 * cfg.channel.round_time();
        let (short, _) = simulate_repeater(&cfg, 5000, 9).unwrap();
        assert!(short.mean_rounds > free.mean_rounds);
    }

    proptest! {
        #[test]
        fn transmission_is_multiplicative(a in 0.0..1.0f64, l1 in 0.0..500.0f64, l2 in 0.0..500.0f64) {
            let lhs = channel_transmission(a, l1 + l2).unwrap();
            let rhs = channel_transmission(a, l1).unwrap() * channel_transmission(a, l2).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1e-300));
        }

        #[test]
        fn segment_probability_monotone_in_modes(p in 0.0..1.0f64, n in 1u64..1000) {
            let a = segment_success_prob(p, n).unwrap();
            let b = segment_success_prob(p, n + 1).unwrap();
            prop_assert!(b >= a && (0.0..=1.0).contains(&a));
        }
    }
}
