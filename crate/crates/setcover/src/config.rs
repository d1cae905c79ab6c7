//! Engine configuration and the precomputed numeric tables derived from it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tunable parameters of an engine instance.
///
/// `epsilon` is the approximation knob; `cost_ratio_c` bounds set costs to
/// `[1/C, 1]`; `capacity_n` is a hard upper bound on the number of live
/// elements and fixes the depth of the level hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub epsilon: f64,
    pub cost_ratio_c: u32,
    pub max_frequency_f: u32,
    pub capacity_n: u32,
    pub deterministic: bool,
    pub rng_seed: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("epsilon must lie in (0, 1], got {0}")]
    BadEpsilon(f64),
    #[error("cost ratio C must be >= 1, got {0}")]
    BadCostRatio(u32),
    #[error("max frequency f must be >= 1, got {0}")]
    BadFrequency(u32),
    #[error("capacity must be >= 1, got {0}")]
    BadCapacity(u32),
    #[error("set cost {cost} outside [{lo}, 1] for set {set_id}")]
    BadCost { set_id: u32, cost: f64, lo: f64 },
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        // The analysis regime is epsilon in (0, 0.1]; anything up to 1 keeps
        // the machinery well defined and is accepted for experimentation.
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(ConfigError::BadEpsilon(self.epsilon));
        }
        if self.cost_ratio_c < 1 {
            return Err(ConfigError::BadCostRatio(self.cost_ratio_c));
        }
        if self.max_frequency_f < 1 {
            return Err(ConfigError::BadFrequency(self.max_frequency_f));
        }
        if self.capacity_n < 1 {
            return Err(ConfigError::BadCapacity(self.capacity_n));
        }
        Ok(())
    }
}

/// Smallest integer `t >= 0` with `(1+eps)^t >= x`, i.e. `ceil(log_{1+eps} x)`
/// for `x >= 1`. Computed by repeated multiplication so that every call site
/// agrees bit for bit with [`PowerTable::pow_pos`].
pub fn ceil_log_scan(epsilon: f64, x: f64) -> u32 {
    let b = 1.0 + epsilon;
    let mut t = 0u32;
    let mut p = 1.0f64;
    while p < x {
        p *= b;
        t += 1;
        assert!(t < 1 << 24, "ceil_log_scan diverged for x = {x}");
    }
    t
}

/// Precomputed powers of `1+eps`, both signs of the exponent.
///
/// All level arithmetic goes through this table; floating-point logarithms
/// never participate in control flow.
#[derive(Debug, Clone)]
pub struct PowerTable {
    neg: Vec<f64>,
    pos: Vec<f64>,
}

impl PowerTable {
    pub fn new(epsilon: f64, neg_len: usize, pos_target: f64) -> Self {
        let b = 1.0 + epsilon;
        let mut neg = Vec::with_capacity(neg_len);
        let mut v = 1.0f64;
        for _ in 0..neg_len {
            neg.push(v);
            v /= b;
        }
        let mut pos = vec![1.0f64];
        while *pos.last().unwrap() < pos_target {
            let nxt = pos.last().unwrap() * b;
            pos.push(nxt);
        }
        // a little headroom for probes just past the target
        for _ in 0..4 {
            let nxt = pos.last().unwrap() * b;
            pos.push(nxt);
        }
        PowerTable { neg, pos }
    }

    /// `(1+eps)^{-i}`
    #[inline]
    pub fn neg(&self, i: u32) -> f64 {
        self.neg[i as usize]
    }

    /// `(1+eps)^{i}`
    #[inline]
    pub fn pos(&self, i: u32) -> f64 {
        self.pos[i as usize]
    }

    pub fn neg_len(&self) -> u32 {
        self.neg.len() as u32
    }

    /// `ceil(log_{1+eps} x)`: smallest `t` with `(1+eps)^t >= x`. For `x <= 1`
    /// this is 0.
    pub fn ceil_log(&self, x: f64) -> u32 {
        assert!(
            x <= *self.pos.last().unwrap(),
            "ceil_log probe {x} beyond table range"
        );
        let idx = self.pos.partition_point(|&p| p < x);
        idx as u32
    }

    /// Base level of a cost: largest `b >= 0` with `(1+eps)^b <= 1/c`, found
    /// as the largest `b` with `neg[b] >= c`.
    pub fn base_level(&self, cost: f64) -> u32 {
        debug_assert!(cost > 0.0 && cost <= 1.0);
        let idx = self.neg.partition_point(|&p| p >= cost);
        (idx as u32).saturating_sub(1)
    }

    /// Smallest `h` in `[lo, hi]` with `neg[h] < gap`, if any.
    pub fn smallest_below(&self, lo: u32, hi: u32, gap: f64) -> Option<u32> {
        if lo > hi {
            return None;
        }
        let slice = &self.neg[lo as usize..=hi as usize];
        let off = slice.partition_point(|&p| p >= gap);
        if off == slice.len() {
            None
        } else {
            Some(lo + off as u32)
        }
    }
}

/// Per-gap lookup row for the randomized dirty-element handler.
#[derive(Debug, Clone, Copy)]
pub struct EtaEntry {
    pub eta: u32,
    /// `(5log)^{(eta)} f`
    pub five_log_eta: f64,
    pub sample_budget: u32,
    /// multiplier for the probe weight: `delta = delta_mult * (1+eps)^{-k-1}`
    pub delta_mult: f64,
    /// witness-count threshold `((5log)^{(eta)} f)^2`
    pub small_witness_cap: f64,
    /// target gap after a small-witness fix: `ceil(log_{1+eps} max{((5log)^{(eta)}f)^4, (2C/eps)^2})`
    pub d_hat: u32,
}

/// Iterated-log schedule for the randomized handler, precomputed per config.
#[derive(Debug, Clone)]
pub struct RandSchedule {
    /// `y_0 = f`, `y_{j+1} = 5 log_{1+eps} y_j`, stopping once `y <= 200/eps^2`.
    pub iterates: Vec<f64>,
    by_gap: Vec<Option<EtaEntry>>,
}

impl RandSchedule {
    pub fn new(cfg: &Config, pow: &PowerTable, max_gap: u32) -> Self {
        let eps = cfg.epsilon;
        let f = cfg.max_frequency_f as f64;
        let ln_b = (1.0 + eps).ln();
        // Iterate the 5log map down to its fixpoint, not just to the 200/eps^2
        // handoff floor, so eta lookups resolve for every gap the table can be
        // asked about.
        let mut iterates = vec![f];
        while iterates.len() < 64 {
            let y = *iterates.last().unwrap();
            if y <= 1.0 {
                break;
            }
            let nxt = 5.0 * (y.ln() / ln_b);
            if nxt >= y {
                break;
            }
            iterates.push(nxt);
        }
        let two_c_over_eps = 2.0 * cfg.cost_ratio_c as f64 / eps;
        let mut by_gap = Vec::with_capacity(max_gap as usize + 1);
        for g in 0..=max_gap {
            by_gap.push(Self::entry_for_gap(cfg, pow, &iterates, g, two_c_over_eps));
        }
        RandSchedule { iterates, by_gap }
    }

    fn entry_for_gap(
        cfg: &Config,
        pow: &PowerTable,
        iterates: &[f64],
        gap: u32,
        two_c_over_eps: f64,
    ) -> Option<EtaEntry> {
        let g = gap as f64;
        if g <= 0.0 {
            return None;
        }
        // smallest eta with y_{eta+1} <= g
        let eta = (0..iterates.len().saturating_sub(1))
            .find(|&j| iterates[j + 1] <= g)?;
        let y = iterates[eta];
        if y < 1.0 {
            return None;
        }
        let f = cfg.max_frequency_f as f64;
        let inv = 1.0 / y;
        let delta_mult = (inv * inv * inv * inv).min((cfg.epsilon / (2.0 * cfg.cost_ratio_c as f64)).powi(2));
        let sample_budget = 50 * (f / y).ceil().max(1.0) as u32;
        let d_hat = pow.ceil_log((y * y * y * y).max(two_c_over_eps * two_c_over_eps));
        Some(EtaEntry {
            eta: eta as u32,
            five_log_eta: y,
            sample_budget,
            delta_mult,
            small_witness_cap: y * y,
            d_hat,
        })
    }

    pub fn lookup(&self, gap: u32) -> Option<EtaEntry> {
        self.by_gap.get(gap as usize).copied().flatten()
    }
}

/// A validated config plus everything derived from it once at construction.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub cfg: Config,
    /// top level `L = ceil(log_{1+eps}(C*N)) + 1`
    pub l_max: u32,
    /// `ceil(log_{1+eps} max{f, 2C/eps})`; bounds the lazy-to-intrinsic gap
    pub gap_bound: u32,
    /// `ceil(log_{1+eps} C) + 1`; levels at or below are scanned densely
    pub low_cutoff: u32,
    /// highest intrinsic level any element can occupy
    pub max_ilev: u32,
    pub pow: PowerTable,
    pub sched: RandSchedule,
    /// dirty elements with gap at or below this go through the deterministic handler
    pub rand_gap_threshold: f64,
    /// `f <= 2C/eps`: the randomized mode routes everything deterministically
    pub route_all_det: bool,
    pub log2_c: f64,
}

impl Resolved {
    pub fn new(cfg: Config) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let eps = cfg.epsilon;
        let c = cfg.cost_ratio_c as f64;
        let f = cfg.max_frequency_f as f64;
        let n = cfg.capacity_n as f64;
        let l_max = ceil_log_scan(eps, c * n) + 1;
        let gap_bound = ceil_log_scan(eps, f.max(2.0 * c / eps));
        let low_cutoff = ceil_log_scan(eps, c) + 1;
        let max_ilev = l_max + gap_bound;
        // The positive table must reach every ceil_log probe the engine makes.
        let y1 = 5.0 * (f.max(2.0) .ln() / (1.0 + eps).ln());
        let pos_target = (c * n)
            .max(2.0 * c * n / eps)
            .max((f.max(y1).max(2.0 * c / eps)).powi(4))
            .max(4.0);
        let pow = PowerTable::new(eps, max_ilev as usize + 8, pos_target);
        let sched = RandSchedule::new(&cfg, &pow, max_ilev + 1);
        let rand_gap_threshold = (200.0 / (eps * eps))
            .max(1.0 + 2.0 * ceil_log_scan(eps, 2.0 * c / eps) as f64);
        let route_all_det = f <= 2.0 * c / eps;
        Ok(Resolved {
            cfg,
            l_max,
            gap_bound,
            low_cutoff,
            max_ilev,
            pow,
            sched,
            rand_gap_threshold,
            route_all_det,
            log2_c: c.log2(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(epsilon: f64, c: u32, f: u32, n: u32) -> Config {
        Config {
            epsilon,
            cost_ratio_c: c,
            max_frequency_f: f,
            capacity_n: n,
            deterministic: true,
            rng_seed: 0,
        }
    }

    #[test]
    fn power_table_monotone_and_anchored() {
        let r = Resolved::new(cfg(0.5, 1, 2, 100)).unwrap();
        assert_eq!(r.pow.neg(0), 1.0);
        for i in 1..r.pow.neg_len() {
            assert!(r.pow.neg(i) < r.pow.neg(i - 1));
            let ratio = r.pow.neg(i - 1) / 1.5;
            assert!((r.pow.neg(i) - ratio).abs() <= f64::EPSILON * ratio);
        }
    }

    #[test]
    fn element_weight_examples() {
        let r = Resolved::new(cfg(0.5, 1, 2, 100)).unwrap();
        assert_eq!(r.pow.neg(0), 1.0);
        assert!((r.pow.neg(4) - 16.0 / 81.0).abs() < 1e-12);
        assert!((r.pow.neg(2) - 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn base_level_examples() {
        let r = Resolved::new(cfg(0.5, 4, 2, 100)).unwrap();
        assert_eq!(r.pow.base_level(1.0), 0);
        assert_eq!(r.pow.base_level(0.3), 2);
        let r2 = Resolved::new(cfg(1.0, 8, 2, 100)).unwrap();
        assert_eq!(r2.pow.base_level(1.0 / 8.0), 3);
    }

    #[test]
    fn level_count_is_positive_and_finite() {
        let r = Resolved::new(cfg(0.2, 4, 8, 200)).unwrap();
        // smallest t with 1.2^t >= 800 is 37, plus one
        assert_eq!(r.l_max, 38);
        assert_eq!(r.low_cutoff, ceil_log_scan(0.2, 4.0) + 1);
        assert!(r.gap_bound >= 1);
        let tiny = Resolved::new(cfg(1.0, 1, 1, 1)).unwrap();
        assert!(tiny.l_max >= 1);
    }

    #[test]
    fn gap_bound_example() {
        // eps=0.5, C=1, f=2: ceil(log_1.5 max{2, 4}) = 4
        let r = Resolved::new(cfg(0.5, 1, 2, 100)).unwrap();
        assert_eq!(r.gap_bound, 4);
    }

    #[test]
    fn smallest_below_search() {
        let r = Resolved::new(cfg(0.5, 1, 2, 100)).unwrap();
        // smallest h >= 1 with 1.5^{-h} < 0.2 is 4
        assert_eq!(r.pow.smallest_below(1, 5, 0.2), Some(4));
        // nothing below 0.0
        assert_eq!(r.pow.smallest_below(0, 5, 0.0), None);
        // degenerate range
        assert_eq!(r.pow.smallest_below(3, 2, 1.0), None);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(Resolved::new(cfg(0.0, 1, 1, 1)).is_err());
        assert!(Resolved::new(cfg(1.5, 1, 1, 1)).is_err());
        assert!(Resolved::new(cfg(0.2, 0, 1, 1)).is_err());
        assert!(Resolved::new(cfg(0.2, 1, 0, 1)).is_err());
        assert!(Resolved::new(cfg(0.2, 1, 1, 0)).is_err());
    }

    #[test]
    fn eta_schedule_example() {
        // eps=0.5, C=1, f=1024, gap 60:
        // (5log)^(1) f = 85.475..., (5log)^(2) f = 54.85... => eta = 1,
        // budget 50*ceil(1024/85.475) = 600, delta_mult = (1/85.475)^4
        let r = Resolved::new(cfg(0.5, 1, 1024, 100)).unwrap();
        let sched = RandSchedule::new(&r.cfg, &r.pow, 64);
        let e = sched.lookup(60).expect("entry for gap 60");
        assert_eq!(e.eta, 1);
        assert!((e.five_log_eta - 85.4755).abs() < 1e-3);
        assert_eq!(e.sample_budget, 600);
        assert!((e.delta_mult - (1.0 / e.five_log_eta).powi(4)).abs() < 1e-18);
        let y2 = sched.iterates[2];
        assert!((y2 - 54.853).abs() < 1e-2);
        assert!(y2 <= 60.0 && 60.0 <= e.five_log_eta);
    }

    #[test]
    fn ceil_log_agrees_with_scan() {
        let r = Resolved::new(cfg(0.2, 4, 8, 200)).unwrap();
        for x in [1.0, 1.5, 4.0, 40.0, 799.9, 800.0] {
            assert_eq!(r.pow.ceil_log(x), ceil_log_scan(0.2, x), "x={x}");
        }
    }
}
