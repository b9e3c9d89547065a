//! Packet-level model of the three-subband access design.
//!
//! Control messages are split by class across three subbands of
//! `M_i * delta_f` Hz. Grant-free subbands resolve access by uniform random
//! codeword choice: a transmission succeeds when no other contender in the
//! same slot picked its codeword, otherwise it retries in the next slot.
//! Grant-based subbands pay a fixed request/grant round trip instead.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{MessageClass, Position, RoadNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subband {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "3")]
    Three,
}

impl Subband {
    pub const ALL: [Subband; 3] = [Subband::One, Subband::Two, Subband::Three];

    /// 1-based subband number.
    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn index(self) -> usize {
        match self {
            Subband::One => 0,
            Subband::Two => 1,
            Subband::Three => 2,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Subband::One),
            2 => Some(Subband::Two),
            3 => Some(Subband::Three),
            _ => None,
        }
    }
}

/// ATMs ride subband 1, PSMs subband 2, infotainment subband 3.
pub fn assign_subband(class: MessageClass) -> Subband {
    match class {
        MessageClass::Atm => Subband::One,
        MessageClass::Psm => Subband::Two,
        MessageClass::Infotainment => Subband::Three,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubbandConfig {
    /// Subcarrier spacing in Hz.
    pub delta_f: f64,
    /// Subcarrier counts (M1, M2, M3).
    pub widths: [u32; 3],
    /// Maximum contenders scheduled per slot (K1, K2, K3).
    pub loads: [u32; 3],
    /// Codewords available per subband.
    pub codebook_size: u32,
    /// Slot duration in seconds.
    pub slot: f64,
    pub grant_free: [bool; 3],
    /// Grant request/response round trip for grant-based access.
    pub grant_rtt: f64,
    /// bit/s per Hz used for capacity accounting.
    pub spectral_efficiency: f64,
}

impl Default for SubbandConfig {
    fn default() -> Self {
        Self {
            delta_f: 15_000.0,
            widths: [72, 144, 600],
            loads: [4, 4, 64],
            codebook_size: 8,
            slot: 0.001,
            grant_free: [true, true, false],
            grant_rtt: 0.010,
            spectral_efficiency: 1.0,
        }
    }
}

impl SubbandConfig {
    /// Human-readable problems; empty when the plan is usable.
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        let [m1, m2, m3] = self.widths;
        if !(m1 <= m2 && m2 <= m3) {
            issues.push(format!(
                "subband widths must satisfy M1 <= M2 <= M3, got ({m1}, {m2}, {m3})"
            ));
        }
        if self.widths.iter().any(|&m| m == 0) {
            issues.push("subband widths must be positive".into());
        }
        if self.loads.iter().any(|&k| k == 0) {
            issues.push("subband loads K1..K3 must be positive".into());
        }
        if self.codebook_size == 0 {
            issues.push("codebook_size must be at least 1".into());
        }
        for sb in Subband::ALL {
            let k = self.loads[sb.index()];
            if self.grant_free[sb.index()] && k > self.codebook_size {
                issues.push(format!(
                    "grant-free subband {} schedules K={} contenders on only C={} codewords",
                    sb.number(),
                    k,
                    self.codebook_size
                ));
            }
        }
        if !(self.delta_f > 0.0) || !(self.slot > 0.0) || !(self.spectral_efficiency > 0.0) {
            issues.push("delta_f, slot and spectral_efficiency must be positive".into());
        }
        if !(self.grant_rtt >= 0.0) {
            issues.push("grant_rtt must be non-negative".into());
        }
        issues
    }

    /// Capacity of a subband in bit/s.
    pub fn capacity_bps(&self, subband: Subband) -> f64 {
        f64::from(self.widths[subband.index()]) * self.delta_f * self.spectral_efficiency
    }

    pub fn is_grant_free(&self, subband: Subband) -> bool {
        self.grant_free[subband.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContentionOutcome {
    Success,
    CodewordCollision,
}

/// One contention slot: each of `k` contenders picks one of `c` codewords
/// uniformly; see [`resolve_picks`].
pub fn grant_free_contend<R: Rng + ?Sized>(k: usize, c: u32, rng: &mut R) -> Vec<ContentionOutcome> {
    assert!(c >= 1, "codebook must hold at least one codeword");
    let picks: Vec<u32> = (0..k).map(|_| rng.gen_range(0..c)).collect();
    resolve_picks(&picks, c)
}

/// A contender succeeds iff nobody else picked the same codeword.
pub fn resolve_picks(picks: &[u32], c: u32) -> Vec<ContentionOutcome> {
    let mut counts = vec![0u32; c as usize];
    for &p in picks {
        counts[p as usize] += 1;
    }
    picks
        .iter()
        .map(|&p| {
            if counts[p as usize] == 1 {
                ContentionOutcome::Success
            } else {
                ContentionOutcome::CodewordCollision
            }
        })
        .collect()
}

/// Analytic per-contender collision probability `1 - (1 - 1/C)^(K-1)`.
pub fn collision_probability(k: usize, c: u32) -> f64 {
    if k <= 1 {
        return 0.0;
    }
    1.0 - (1.0 - 1.0 / f64::from(c)).powi(k as i32 - 1)
}

/// Access delay for a message on `subband`. Grant-free access costs one slot
/// per contention round up to and including the successful one; grant-based
/// access costs the grant round trip plus one slot.
pub fn access_latency(cfg: &SubbandConfig, subband: Subband, slots_until_success: u32) -> f64 {
    if cfg.is_grant_free(subband) {
        f64::from(slots_until_success) * cfg.slot
    } else {
        cfg.grant_rtt + cfg.slot
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccessResult {
    /// Delay from generation until the successful slot ends.
    pub latency: f64,
    /// Contention rounds taken, including the successful one. Zero for
    /// grant-based access.
    pub attempts: u32,
}

/// Per-subband FIFO slot scheduler. Each slot admits at most `K_i` queued
/// transmissions; colliding ones go back to the head of the queue.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandScheduler {
    cfg: SubbandConfig,
    busy_until: [f64; 3],
}

impl SubbandScheduler {
    pub fn new(cfg: SubbandConfig) -> Self {
        Self {
            cfg,
            busy_until: [0.0; 3],
        }
    }

    pub fn config(&self) -> &SubbandConfig {
        &self.cfg
    }

    /// Schedules `n` transmissions generated together at `now`, in the given
    /// order. Results are returned in the same order.
    pub fn schedule<R: Rng + ?Sized>(
        &mut self,
        subband: Subband,
        now: f64,
        n: usize,
        rng: &mut R,
    ) -> Vec<AccessResult> {
        let idx = subband.index();
        if n == 0 {
            return vec![];
        }
        if !self.cfg.is_grant_free(subband) {
            let latency = access_latency(&self.cfg, subband, 1);
            return vec![
                AccessResult {
                    latency,
                    attempts: 0
                };
                n
            ];
        }

        let slot = self.cfg.slot;
        let k_max = self.cfg.loads[idx].max(1) as usize;
        // Queue drains from where the previous batch left off.
        let start = self.busy_until[idx].max(now);
        let wait = start - now;
        let mut queue: std::collections::VecDeque<usize> = (0..n).collect();
        let mut attempts = vec![0u32; n];
        let mut results = vec![
            AccessResult {
                latency: 0.0,
                attempts: 0
            };
            n
        ];
        let mut slots = 0u32;
        while !queue.is_empty() {
            slots += 1;
            let k = k_max.min(queue.len());
            let contenders: Vec<usize> = queue.drain(..k).collect();
            let outcomes = grant_free_contend(k, self.cfg.codebook_size, rng);
            let mut retry = Vec::new();
            for (&m, outcome) in contenders.iter().zip(outcomes) {
                attempts[m] += 1;
                match outcome {
                    ContentionOutcome::Success => {
                        results[m] = AccessResult {
                            latency: wait + access_latency(&self.cfg, subband, slots),
                            attempts: attempts[m],
                        };
                    }
                    ContentionOutcome::CodewordCollision => retry.push(m),
                }
            }
            for m in retry.into_iter().rev() {
                queue.push_front(m);
            }
        }
        self.busy_until[idx] = start + f64::from(slots) * slot;
        results
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    V2v,
    V2f,
    V2b,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkModel {
    pub kind: LinkKind,
    /// Meters; ignored for V2B.
    #[serde(default)]
    pub range: f64,
    pub base_per: f64,
    #[serde(default)]
    pub base_latency: f64,
}

impl LinkModel {
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if !(0.0..=1.0).contains(&self.base_per) {
            issues.push(format!("{:?} base_per must lie in [0, 1]", self.kind));
        }
        if self.kind != LinkKind::V2b && !(self.range > 0.0) {
            issues.push(format!("{:?} range must be positive", self.kind));
        }
        if !(self.base_latency >= 0.0) {
            issues.push(format!("{:?} base_latency must be non-negative", self.kind));
        }
        issues
    }

    pub fn in_range(&self, distance: f64) -> bool {
        self.kind == LinkKind::V2b || distance <= self.range
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkOutcome {
    Delivered,
    Lost,
}

/// Out of range is lost without drawing; in range is lost with probability
/// `base_per`. V2B ignores range.
pub fn link_deliver<R: Rng + ?Sized>(
    link: &LinkModel,
    network: &RoadNetwork,
    sender: &Position,
    receiver: &Position,
    rng: &mut R,
) -> LinkOutcome {
    let distance = if link.kind == LinkKind::V2b {
        0.0
    } else {
        network.radio_distance(sender, receiver)
    };
    deliver_at_distance(link, distance, rng)
}

pub fn deliver_at_distance<R: Rng + ?Sized>(link: &LinkModel, distance: f64, rng: &mut R) -> LinkOutcome {
    if !link.in_range(distance) {
        return LinkOutcome::Lost;
    }
    if rng.gen::<f64>() < link.base_per {
        LinkOutcome::Lost
    } else {
        LinkOutcome::Delivered
    }
}

/// Capacity-capped service of one subband. Bits that do not fit in a window
/// are carried to the next one.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ThroughputMeter {
    pub capacity_bps: f64,
    pub backlog_bits: f64,
    pub served_bits: f64,
    pub offered_bits: f64,
}

impl ThroughputMeter {
    pub fn new(capacity_bps: f64) -> Self {
        Self {
            capacity_bps,
            ..Self::default()
        }
    }

    /// Serves `offered_bits` plus backlog over `window` seconds and returns
    /// the achieved throughput in bit/s.
    pub fn serve(&mut self, offered_bits: f64, window: f64) -> f64 {
        assert!(window > 0.0, "throughput window must be positive");
        self.offered_bits += offered_bits;
        let pending = self.backlog_bits + offered_bits;
        let served = pending.min(self.capacity_bps * window);
        self.backlog_bits = pending - served;
        self.served_bits += served;
        served / window
    }
}

/// Throughput of `subband` when `offered_bits` arrive in one window on top
/// of an existing backlog. Returns (bit/s, backlog after the window).
pub fn subband_throughput(
    cfg: &SubbandConfig,
    subband: Subband,
    offered_bits: f64,
    backlog_bits: f64,
    window: f64,
) -> (f64, f64) {
    let mut meter = ThroughputMeter {
        backlog_bits,
        ..ThroughputMeter::new(cfg.capacity_bps(subband))
    };
    let bps = meter.serve(offered_bits, window);
    (bps, meter.backlog_bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn classes_map_to_fixed_subbands() {
        assert_eq!(assign_subband(MessageClass::Atm).number(), 1);
        assert_eq!(assign_subband(MessageClass::Psm).number(), 2);
        assert_eq!(assign_subband(MessageClass::Infotainment).number(), 3);
    }

    #[test]
    fn single_contender_always_succeeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(grant_free_contend(1, 8, &mut rng), vec![ContentionOutcome::Success]);
        }
    }

    #[test]
    fn pigeonhole_forces_a_collision() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let out = grant_free_contend(9, 8, &mut rng);
            let collided = out
                .iter()
                .filter(|o| **o == ContentionOutcome::CodewordCollision)
                .count();
            assert!(collided >= 2);
        }
    }

    #[test]
    fn two_contenders_collide_with_probability_one_eighth_by_enumeration() {
        // All 64 codeword assignments of two contenders over C = 8.
        let c = 8u32;
        let mut collisions = 0;
        for a in 0..c {
            for b in 0..c {
                if resolve_picks(&[a, b], c)[0] == ContentionOutcome::CodewordCollision {
                    collisions += 1;
                }
            }
        }
        assert_eq!(collisions, 8);
        assert_eq!(f64::from(collisions) / 64.0, 0.125);
        assert!((collision_probability(2, 8) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn latency_defaults() {
        let cfg = SubbandConfig::default();
        assert!((access_latency(&cfg, Subband::One, 1) - 0.001).abs() < 1e-15);
        assert!((access_latency(&cfg, Subband::Three, 1) - 0.011).abs() < 1e-15);
    }

    #[test]
    fn mean_latency_matches_geometric_mean_for_two_contenders() {
        // Two contenders either both succeed or both collide, so slots until
        // success is geometric with p = 7/8 and mean slot / (1 - 1/8).
        let cfg = SubbandConfig {
            loads: [2, 2, 64],
            ..SubbandConfig::default()
        };
        let mut sched = SubbandScheduler::new(cfg.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 50_000;
        let mut total = 0.0;
        for i in 0..trials {
            let now = i as f64;
            let r = sched.schedule(Subband::One, now, 2, &mut rng);
            total += r[0].latency;
        }
        let mean = total / trials as f64;
        let expected = cfg.slot / (1.0 - 1.0 / 8.0);
        // Geometric variance (1-p)/p^2 slots^2; 4 sigma band.
        let p: f64 = 7.0 / 8.0;
        let sigma = cfg.slot * ((1.0 - p).sqrt() / p) / (trials as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * sigma, "mean {mean} vs {expected}");
        assert!((expected - 0.001_142_857).abs() < 1e-9);
    }

    #[test]
    fn scheduler_respects_per_slot_load_and_queues_excess() {
        let cfg = SubbandConfig {
            codebook_size: 1_000_000,
            loads: [4, 4, 64],
            ..SubbandConfig::default()
        };
        let mut sched = SubbandScheduler::new(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Collisions are practically impossible with a huge codebook, so ten
        // messages take ceil(10/4) = 3 slots.
        let r = sched.schedule(Subband::Two, 0.0, 10, &mut rng);
        let max = r.iter().map(|a| a.latency).fold(0.0, f64::max);
        assert!((max - 0.003).abs() < 1e-12);
        // A batch arriving before the queue drained waits for it.
        let r2 = sched.schedule(Subband::Two, 0.001, 1, &mut rng);
        assert!((r2[0].latency - 0.003).abs() < 1e-12);
    }

    #[test]
    fn grant_based_subband_pays_round_trip() {
        let mut sched = SubbandScheduler::new(SubbandConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = sched.schedule(Subband::Three, 0.0, 3, &mut rng);
        assert!(r.iter().all(|a| (a.latency - 0.011).abs() < 1e-15 && a.attempts == 0));
    }

    fn link(per: f64) -> LinkModel {
        LinkModel {
            kind: LinkKind::V2v,
            range: 100.0,
            base_per: per,
            base_latency: 0.0,
        }
    }

    #[test]
    fn out_of_range_is_lost_and_zero_per_is_delivered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(deliver_at_distance(&link(0.0), 150.0, &mut rng), LinkOutcome::Lost);
        assert_eq!(deliver_at_distance(&link(0.0), 50.0, &mut rng), LinkOutcome::Delivered);
        let v2b = LinkModel {
            kind: LinkKind::V2b,
            range: 0.0,
            base_per: 0.0,
            base_latency: 0.0,
        };
        assert_eq!(deliver_at_distance(&v2b, 1e9, &mut rng), LinkOutcome::Delivered);
    }

    #[test]
    fn loss_fraction_matches_per() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let l = link(0.3);
        let lost = (0..10_000)
            .filter(|_| deliver_at_distance(&l, 10.0, &mut rng) == LinkOutcome::Lost)
            .count();
        let frac = lost as f64 / 10_000.0;
        assert!((frac - 0.3).abs() < 0.02, "loss fraction {frac}");
    }

    #[test]
    fn subband_three_capacity_is_nine_megabit() {
        let cfg = SubbandConfig::default();
        assert_eq!(cfg.widths[2], 600);
        assert!((cfg.capacity_bps(Subband::Three) - 9.0e6).abs() < 1e-6);
    }

    #[test]
    fn throughput_caps_and_backlog_grows_linearly() {
        let cfg = SubbandConfig::default();
        assert_eq!(subband_throughput(&cfg, Subband::Three, 0.0, 0.0, 0.1), (0.0, 0.0));
        let cap = cfg.capacity_bps(Subband::Three);
        let mut meter = ThroughputMeter::new(cap);
        for step in 1..=10 {
            let bps = meter.serve(2.0 * cap * 0.1, 0.1);
            assert!((bps - cap).abs() < 1e-6);
            assert!((meter.backlog_bits - cap * 0.1 * step as f64).abs() < 1e-3);
        }
    }

    #[test]
    fn subband_ordering_is_validated() {
        let cfg = SubbandConfig {
            widths: [200, 100, 600],
            ..SubbandConfig::default()
        };
        let issues = cfg.validate();
        assert_eq!(issues.len(), 1);
        assert!(issues[0].contains("M1 <= M2 <= M3"));
        assert!(SubbandConfig::default().validate().is_empty());
    }
}
