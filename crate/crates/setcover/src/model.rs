//! Core state: per-set and per-element records, updates, and engine errors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type SetId = u32;
pub type ElemId = u64;

/// One element update in a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Update {
    Insert { elem: ElemId, members: Vec<SetId> },
    Delete { elem: ElemId },
}

/// Sets that entered or left the maintained cover during one update.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CoverDelta {
    pub entered: Vec<SetId>,
    pub left: Vec<SetId>,
}

#[derive(Debug, Error, PartialEq)]
pub enum UpdateError {
    #[error("element {0} is not live")]
    UnknownElement(ElemId),
    #[error("element {0} is already live")]
    DuplicateElement(ElemId),
    #[error("element {elem} has {got} memberships, max frequency is {max}")]
    FrequencyExceeded { elem: ElemId, got: usize, max: u32 },
    #[error("live element count is at capacity {0}")]
    CapacityExceeded(u32),
    #[error("unknown set id {0}")]
    UnknownSet(SetId),
    #[error("set {0} listed twice in a membership")]
    DuplicateMember(SetId),
    #[error("membership list is empty")]
    EmptyMembership,
}

/// A bucket entry: the element plus which of its membership slots points back
/// at the owning set, so a swap-removed neighbour can be re-indexed in O(1).
#[derive(Debug, Clone, Copy)]
pub(crate) struct BktEntry {
    pub elem: u32,
    pub slot: u16,
}

/// Per-set record. `lev`, `phi`, and `tm` are interpreted through the
/// zero-clock: when `tm` is at or before the last bulk zeroing of the stored
/// level, the effective state is level 0 with no dead weight.
#[derive(Debug, Clone)]
pub(crate) struct SetData {
    pub cost: f64,
    /// `cost / (1+eps)`, the tightness threshold
    pub tight_thr: f64,
    pub base: u32,
    pub lev: u32,
    pub omega: f64,
    pub phi: f64,
    pub tm: u64,
    /// composite weight at or above the threshold (valid while fresh)
    pub tight: bool,
    /// plain weight alone at or above the threshold (always valid)
    pub omega_tight: bool,
    /// incremental writes to `omega` since the last exact resummation
    pub writes: u32,
    pub resum_queued: bool,
    /// `A_i(s)`: active member elements whose level is `i`
    pub bkt_a: Vec<Vec<BktEntry>>,
    /// `P_i(s)`: passive member elements whose intrinsic level is `i`
    pub bkt_p: Vec<Vec<BktEntry>>,
    /// scratch stamp for per-rebuild set collections
    pub stamp: u64,
    /// scratch slot index, valid while `stamp` matches the current pass
    pub scratch: u32,
    /// position in the per-level list of sets tight only through dead weight,
    /// or `u32::MAX` when not in that state
    pub carried_pos: u32,
}

impl SetData {
    pub fn new(cost: f64, tight_thr: f64, base: u32, levels: usize) -> Self {
        SetData {
            cost,
            tight_thr,
            base,
            lev: 0,
            omega: 0.0,
            phi: 0.0,
            tm: 0,
            tight: false,
            omega_tight: false,
            writes: 0,
            resum_queued: false,
            bkt_a: vec![Vec::new(); levels],
            bkt_p: vec![Vec::new(); levels],
            stamp: 0,
            scratch: 0,
            carried_pos: u32::MAX,
        }
    }

    #[inline]
    pub fn phi_carried(&self) -> bool {
        self.carried_pos != u32::MAX
    }
}

/// Per-element record. `members` is fixed at insertion and supports O(1)
/// uniform sampling; `bucket_pos[j]` is the element's index within its current
/// bucket of `members[j]`.
#[derive(Debug, Clone)]
pub(crate) struct ElemData {
    pub ext_id: ElemId,
    pub members: Box<[SetId]>,
    pub bucket_pos: Box<[u32]>,
    pub active: bool,
    pub zlev: u32,
    pub ilev: u32,
    /// index within the per-level lazy-level registry list
    pub zpos: u32,
    /// how many rebuilds have processed this element as dirty
    pub dirty_rebuilds: u32,
    /// eta at the last small-/empty-witness event, for schedule diagnostics
    pub last_eta: Option<u32>,
}

/// Monotone counters and optional per-subroutine wall-clock accumulators.
#[derive(Debug, Clone, Default, Serialize)]
pub struct EngineStats {
    pub inserts: u64,
    pub deletes: u64,
    pub rejected: u64,
    pub rebuild_count: u64,
    pub rebuild_k_histogram: Vec<u64>,
    pub fixlevel_calls: u64,
    pub fixlevel_while_iterations: u64,
    pub activated_elements: u64,
    pub water_filling_calls: u64,
    pub water_filling_violations: u64,
    pub clean_processed: u64,
    pub dirty_processed: u64,
    pub dirty_via_det: u64,
    pub dirty_via_rand_core: u64,
    pub dirty_skipped_active: u64,
    pub dec_ilev_calls: u64,
    pub sample_rounds: u64,
    pub sample_hits: u64,
    pub rand_witness_empty: u64,
    pub rand_witness_small: u64,
    pub rand_witness_large: u64,
    pub gap_violations: u64,
    pub eta_order_violations: u64,
    pub max_dirty_rebuilds_per_element: u32,
    pub exact_resummations: u64,
    pub timing: TimingStats,
}

/// Wall-clock nanoseconds per subroutine; populated only when the engine is
/// constructed with timing enabled, since reading the clock inside the hot
/// path distorts benchmarks.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TimingStats {
    pub insert_ns: u64,
    pub delete_ns: u64,
    pub rebuild_ns: u64,
    pub fixlevel_ns: u64,
    pub water_filling_ns: u64,
    pub find_k_ns: u64,
}
