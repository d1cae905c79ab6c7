//! The dynamic set cover engine: element insertion and deletion, level
//! repair, prefix rebuilds with deterministic or randomized dirty-element
//! handling, and the water-filling placement pass.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Config, ConfigError, Resolved};
use crate::levels::LevelIndex;
use crate::model::{
    BktEntry, CoverDelta, ElemData, ElemId, EngineStats, SetData, SetId, Update, UpdateError,
};

/// Exact resummation of a set's weight after this many incremental writes.
const RESUM_INTERVAL: u32 = 65_536;

/// Read-only snapshot of one set's effective state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetView {
    pub cost: f64,
    pub base: u32,
    pub lev: u32,
    pub omega: f64,
    pub phi: f64,
    pub tight: bool,
}

/// Read-only snapshot of one element's state.
#[derive(Debug, Clone, PartialEq)]
pub struct ElemView {
    pub elem: ElemId,
    pub members: Vec<SetId>,
    pub active: bool,
    pub zlev: u32,
    pub ilev: u32,
}

struct RebuildCtx {
    k: u32,
    stamp: u64,
    touched_sets: Vec<SetId>,
    activated: Vec<u32>,
}

pub struct Engine {
    pub(crate) res: Resolved,
    pub(crate) sets: Vec<SetData>,
    pub(crate) elems: Vec<Option<ElemData>>,
    free: Vec<u32>,
    pub(crate) by_ext: HashMap<ElemId, u32>,
    pub(crate) live: u32,
    pub(crate) ix: LevelIndex,
    /// `E_i`: elements whose lazy level is `i`
    pub(crate) e_lists: Vec<Vec<u32>>,
    /// per-level lists of sets that are tight only through dead weight;
    /// drained eagerly when their level is bulk-zeroed
    carried: Vec<Vec<SetId>>,
    rng: ChaCha8Rng,
    pub stats: EngineStats,
    stamp: u64,
    delta_pre: HashMap<SetId, bool>,
    resum_due: Vec<SetId>,
    /// dirty elements with gap at or below this go deterministic; tests lower
    /// it to drive the sampling path on small instances
    pub(crate) rand_gap_threshold: f64,
    timing: bool,
}

impl Engine {
    pub fn new(cfg: Config, costs: &[f64]) -> Result<Self, ConfigError> {
        let res = Resolved::new(cfg)?;
        let lo = 1.0 / cfg.cost_ratio_c as f64;
        let levels = res.max_ilev as usize + 2;
        let mut sets = Vec::with_capacity(costs.len());
        for (i, &c) in costs.iter().enumerate() {
            if !(c >= lo && c <= 1.0) {
                return Err(ConfigError::BadCost {
                    set_id: i as SetId,
                    cost: c,
                    lo,
                });
            }
            let thr = c / (1.0 + cfg.epsilon);
            let base = res.pow.base_level(c);
            sets.push(SetData::new(c, thr, base, levels));
        }
        let ix = LevelIndex::new(res.l_max, res.low_cutoff);
        let mut stats = EngineStats::default();
        stats.rebuild_k_histogram = vec![0; res.l_max as usize + 1];
        let rand_gap_threshold = res.rand_gap_threshold;
        Ok(Engine {
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            e_lists: vec![Vec::new(); res.l_max as usize + 1],
            carried: vec![Vec::new(); res.l_max as usize + 1],
            res,
            elems: Vec::new(),
            free: Vec::new(),
            by_ext: HashMap::new(),
            live: 0,
            ix,
            sets,
            stats,
            stamp: 0,
            delta_pre: HashMap::new(),
            resum_due: Vec::new(),
            rand_gap_threshold,
            timing: false,
        })
    }

    /// Enable per-subroutine wall-clock accumulators (off by default; the
    /// clock reads would distort benchmark timings).
    pub fn set_timing(&mut self, on: bool) {
        self.timing = on;
    }

    pub fn config(&self) -> &Config {
        &self.res.cfg
    }

    pub fn gap_bound(&self) -> u32 {
        self.res.gap_bound
    }

    pub fn top_level(&self) -> u32 {
        self.res.l_max
    }

    pub fn set_count(&self) -> usize {
        self.sets.len()
    }

    pub fn live_count(&self) -> u32 {
        self.live
    }

    // ── effective per-set reads ────────────────────────────────────────────

    #[inline]
    pub(crate) fn stale(&self, s: SetId) -> bool {
        let d = &self.sets[s as usize];
        self.ix.is_stale(d.tm, d.lev)
    }

    #[inline]
    pub(crate) fn eff_lev(&self, s: SetId) -> u32 {
        if self.stale(s) {
            0
        } else {
            self.sets[s as usize].lev
        }
    }

    #[inline]
    pub(crate) fn eff_phi(&self, s: SetId) -> f64 {
        if self.stale(s) {
            0.0
        } else {
            self.sets[s as usize].phi
        }
    }

    #[inline]
    pub(crate) fn eff_tight(&self, s: SetId) -> bool {
        let d = &self.sets[s as usize];
        if self.ix.is_stale(d.tm, d.lev) {
            d.omega_tight
        } else {
            d.tight
        }
    }

    /// Materialize a set swept by a bulk zeroing: level 0, no dead weight.
    /// Aggregates were already transferred when the zeroing happened, so only
    /// the record itself is rewritten. Idempotent.
    fn touch(&mut self, s: SetId) {
        if !self.stale(s) {
            return;
        }
        let tm = self.ix.bump();
        let d = &mut self.sets[s as usize];
        debug_assert!(!d.phi_carried(), "carried sets are drained at zeroing");
        let was = d.tight;
        d.lev = 0;
        d.phi = 0.0;
        d.tm = tm;
        d.tight = d.omega_tight;
        let now = d.tight;
        if was != now {
            self.record_flip(s, was);
        }
    }

    fn record_flip(&mut self, s: SetId, pre: bool) {
        self.delta_pre.entry(s).or_insert(pre);
    }

    /// Reclassify tightness after a weight or dead-weight write. The set must
    /// be fresh.
    fn reclassify(&mut self, s: SetId) {
        let d = &mut self.sets[s as usize];
        let nt = d.omega + d.phi >= d.tight_thr;
        let ntw = d.omega >= d.tight_thr;
        let (was_t, was_tw) = (d.tight, d.omega_tight);
        if nt == was_t && ntw == was_tw {
            return;
        }
        d.tight = nt;
        d.omega_tight = ntw;
        let (lev, cost) = (d.lev, d.cost);
        let was_pc = was_t && !was_tw;
        let now_pc = nt && !ntw;
        self.ix.reclass(lev, cost, was_t, nt, was_tw, ntw);
        if was_t != nt {
            self.record_flip(s, was_t);
        }
        if was_pc != now_pc {
            if now_pc {
                self.carried_add(s, lev);
            } else {
                self.carried_remove(s, lev);
            }
        }
    }

    fn carried_add(&mut self, s: SetId, lev: u32) {
        let pos = self.carried[lev as usize].len() as u32;
        self.carried[lev as usize].push(s);
        self.sets[s as usize].carried_pos = pos;
    }

    fn carried_remove(&mut self, s: SetId, lev: u32) {
        let pos = self.sets[s as usize].carried_pos as usize;
        let list = &mut self.carried[lev as usize];
        list.swap_remove(pos);
        if pos < list.len() {
            let moved = list[pos];
            self.sets[moved as usize].carried_pos = pos as u32;
        }
        self.sets[s as usize].carried_pos = u32::MAX;
    }

    fn add_omega(&mut self, s: SetId, delta: f64) {
        self.touch(s);
        let d = &mut self.sets[s as usize];
        d.omega += delta;
        d.writes += 1;
        if d.writes >= RESUM_INTERVAL && !d.resum_queued {
            d.resum_queued = true;
            self.resum_due.push(s);
        }
        self.reclassify(s);
    }

    fn set_omega_abs(&mut self, s: SetId, value: f64) {
        self.touch(s);
        let d = &mut self.sets[s as usize];
        d.omega = value;
        d.writes = 0;
        self.reclassify(s);
    }

    fn set_phi(&mut self, s: SetId, value: f64) {
        self.touch(s);
        let tm = self.ix.bump();
        let d = &mut self.sets[s as usize];
        let (old, lev) = (d.phi, d.lev);
        d.phi = value;
        d.tm = tm;
        self.ix.phi_write(lev, old, value);
        self.reclassify(s);
    }

    fn set_lev(&mut self, s: SetId, new_lev: u32) {
        self.touch(s);
        let tm = self.ix.bump();
        let d = &mut self.sets[s as usize];
        let old = d.lev;
        if old != new_lev {
            assert!(new_lev <= self.res.l_max, "level {new_lev} out of range");
            let (cost, phi, t, tw) = (d.cost, d.phi, d.tight, d.omega_tight);
            d.lev = new_lev;
            d.tm = tm;
            self.ix.move_set(old, new_lev, cost, phi, t, tw);
            if self.sets[s as usize].phi_carried() {
                self.carried_remove(s, old);
                self.carried_add(s, new_lev);
            }
        } else {
            d.tm = tm;
        }
    }

    /// Bulk-reset levels `[lo, hi]`. Sets that were tight only through dead
    /// weight leave the cover; they are drained eagerly so the cover delta of
    /// the current update stays exact. Everything else catches up lazily.
    fn zero_levels(&mut self, lo: u32, hi: u32) {
        self.ix.zero_levels(lo, hi);
        for i in lo..=hi {
            let list = std::mem::take(&mut self.carried[i as usize]);
            for s in list {
                self.sets[s as usize].carried_pos = u32::MAX;
                debug_assert!(self.stale(s));
                self.touch(s);
            }
        }
    }

    fn exact_resum(&mut self, s: SetId) {
        self.stats.exact_resummations += 1;
        let d = &self.sets[s as usize];
        let mut total = 0.0;
        for (i, b) in d.bkt_a.iter().enumerate() {
            if !b.is_empty() {
                total += b.len() as f64 * self.res.pow.neg(i as u32);
            }
        }
        for (i, b) in d.bkt_p.iter().enumerate() {
            if !b.is_empty() {
                total += b.len() as f64 * self.res.pow.neg(i as u32);
            }
        }
        self.sets[s as usize].resum_queued = false;
        self.set_omega_abs(s, total);
    }

    // ── element bookkeeping ────────────────────────────────────────────────

    #[inline]
    fn elem(&self, e: u32) -> &ElemData {
        self.elems[e as usize].as_ref().expect("live element")
    }

    #[inline]
    fn elem_mut(&mut self, e: u32) -> &mut ElemData {
        self.elems[e as usize].as_mut().expect("live element")
    }

    fn elem_weight(&self, e: u32) -> f64 {
        self.res.pow.neg(self.elem(e).ilev)
    }

    fn register_zlev(&mut self, e: u32) {
        let (zlev, w) = {
            let el = self.elem(e);
            (el.zlev, self.res.pow.neg(el.ilev))
        };
        let pos = self.e_lists[zlev as usize].len() as u32;
        self.e_lists[zlev as usize].push(e);
        self.elem_mut(e).zpos = pos;
        self.ix.elem_arrive(zlev, w);
    }

    fn unregister_zlev(&mut self, e: u32) {
        let (zlev, zpos, w) = {
            let el = self.elem(e);
            (el.zlev, el.zpos, self.res.pow.neg(el.ilev))
        };
        let list = &mut self.e_lists[zlev as usize];
        list.swap_remove(zpos as usize);
        if (zpos as usize) < list.len() {
            let moved = list[zpos as usize];
            self.elems[moved as usize].as_mut().unwrap().zpos = zpos;
        }
        self.ix.elem_depart(zlev, w);
    }

    fn move_zlev(&mut self, e: u32, new_zlev: u32) {
        if self.elem(e).zlev == new_zlev {
            return;
        }
        self.unregister_zlev(e);
        self.elem_mut(e).zlev = new_zlev;
        self.register_zlev(e);
    }

    fn set_ilev(&mut self, e: u32, new_ilev: u32) {
        let el = self.elem(e);
        let (zlev, old) = (el.zlev, el.ilev);
        if old == new_ilev {
            return;
        }
        let (wo, wn) = (self.res.pow.neg(old), self.res.pow.neg(new_ilev));
        self.ix.elem_reweigh(zlev, wo, wn);
        self.elem_mut(e).ilev = new_ilev;
    }

    /// Remove `e` from its bucket in every member set.
    fn bucket_remove_all(&mut self, e: u32) {
        let el = self.elem(e);
        let (members, active, ilev) = (el.members.clone(), el.active, el.ilev);
        for (slot, &s) in members.iter().enumerate() {
            let pos = self.elem(e).bucket_pos[slot] as usize;
            let sd = &mut self.sets[s as usize];
            let bkt = if active {
                &mut sd.bkt_a[ilev as usize]
            } else {
                &mut sd.bkt_p[ilev as usize]
            };
            bkt.swap_remove(pos);
            if pos < bkt.len() {
                let moved = bkt[pos];
                self.elems[moved.elem as usize].as_mut().unwrap().bucket_pos
                    [moved.slot as usize] = pos as u32;
            }
        }
    }

    /// Insert `e` into the bucket matching its current status and intrinsic
    /// level, in every member set.
    fn bucket_insert_all(&mut self, e: u32) {
        let el = self.elem(e);
        let (members, active, ilev) = (el.members.clone(), el.active, el.ilev);
        for (slot, &s) in members.iter().enumerate() {
            let sd = &mut self.sets[s as usize];
            let bkt = if active {
                &mut sd.bkt_a[ilev as usize]
            } else {
                &mut sd.bkt_p[ilev as usize]
            };
            let pos = bkt.len() as u32;
            bkt.push(BktEntry {
                elem: e,
                slot: slot as u16,
            });
            self.elem_mut(e).bucket_pos[slot] = pos;
        }
    }

    /// Turn a passive element whose intrinsic level equals `lev` active.
    fn activate(&mut self, e: u32, lev: u32) {
        debug_assert!(!self.elem(e).active && self.elem(e).ilev == lev);
        self.stats.activated_elements += 1;
        self.bucket_remove_all(e);
        self.elem_mut(e).active = true;
        self.move_zlev(e, lev);
        self.bucket_insert_all(e);
    }

    /// Activate every passive member of `s` whose intrinsic level is `lev`.
    fn activate_bucket(&mut self, s: SetId, lev: u32) {
        while let Some(&entry) = self.sets[s as usize].bkt_p[lev as usize].last() {
            self.activate(entry.elem, lev);
        }
    }

    /// Equation-(2) frontier weight: the weight `s` would have one level up.
    #[inline]
    fn weight_next_level(&self, s: SetId) -> f64 {
        let lev = self.eff_lev(s);
        let d = &self.sets[s as usize];
        let a = d.bkt_a[lev as usize].len() as f64;
        d.omega - a * self.res.cfg.epsilon * self.res.pow.neg(lev + 1)
    }

    // ── top-level update path ──────────────────────────────────────────────

    /// Apply one update: dispatch, then rebuild prefixes until the global
    /// dead-weight bound holds again. Returns the cover recourse.
    pub fn apply_update(&mut self, u: &Update) -> Result<CoverDelta, UpdateError> {
        self.apply_staged(u)?;
        self.settle();
        Ok(self.take_cover_delta())
    }

    /// Validate and apply the raw insertion or deletion without running the
    /// rebuild loop. Pair with [`Engine::settle`]; exists so diagnostics can
    /// snapshot the state between the two phases.
    pub fn apply_staged(&mut self, u: &Update) -> Result<(), UpdateError> {
        match u {
            Update::Insert { elem, members } => {
                if self.by_ext.contains_key(elem) {
                    self.stats.rejected += 1;
                    return Err(UpdateError::DuplicateElement(*elem));
                }
                if members.is_empty() {
                    self.stats.rejected += 1;
                    return Err(UpdateError::EmptyMembership);
                }
                if members.len() > self.res.cfg.max_frequency_f as usize {
                    self.stats.rejected += 1;
                    return Err(UpdateError::FrequencyExceeded {
                        elem: *elem,
                        got: members.len(),
                        max: self.res.cfg.max_frequency_f,
                    });
                }
                if self.live >= self.res.cfg.capacity_n {
                    self.stats.rejected += 1;
                    return Err(UpdateError::CapacityExceeded(self.res.cfg.capacity_n));
                }
                for (i, &s) in members.iter().enumerate() {
                    if s as usize >= self.sets.len() {
                        self.stats.rejected += 1;
                        return Err(UpdateError::UnknownSet(s));
                    }
                    if members[..i].contains(&s) {
                        self.stats.rejected += 1;
                        return Err(UpdateError::DuplicateMember(s));
                    }
                }
                let t0 = self.timing.then(Instant::now);
                self.insert_internal(*elem, members);
                if let Some(t) = t0 {
                    self.stats.timing.insert_ns += t.elapsed().as_nanos() as u64;
                }
                self.stats.inserts += 1;
                Ok(())
            }
            Update::Delete { elem } => {
                let Some(&idx) = self.by_ext.get(elem) else {
                    self.stats.rejected += 1;
                    return Err(UpdateError::UnknownElement(*elem));
                };
                let t0 = self.timing.then(Instant::now);
                self.delete_internal(idx);
                if let Some(t) = t0 {
                    self.stats.timing.delete_ns += t.elapsed().as_nanos() as u64;
                }
                self.stats.deletes += 1;
                Ok(())
            }
        }
    }

    /// Run the rebuild loop until the global dead-weight invariant holds.
    /// Returns how many rebuilds ran.
    pub fn settle(&mut self) -> u32 {
        let mut n = 0u32;
        let mut last_k: Option<u32> = None;
        loop {
            let t0 = self.timing.then(Instant::now);
            let k = self
                .ix
                .find_rebuild_k(self.res.cfg.epsilon, self.res.cfg.max_frequency_f);
            if let Some(t) = t0 {
                self.stats.timing.find_k_ns += t.elapsed().as_nanos() as u64;
            }
            let Some(k) = k else { break };
            assert!(
                last_k.map_or(true, |p| k > p),
                "rebuild frontier must rise within one update"
            );
            last_k = Some(k);
            let t0 = self.timing.then(Instant::now);
            self.rebuild(k);
            if let Some(t) = t0 {
                self.stats.timing.rebuild_ns += t.elapsed().as_nanos() as u64;
            }
            n += 1;
        }
        if !self.resum_due.is_empty() {
            let due = std::mem::take(&mut self.resum_due);
            for s in due {
                self.exact_resum(s);
            }
        }
        n
    }

    /// Net cover recourse accumulated since the last call.
    pub fn take_cover_delta(&mut self) -> CoverDelta {
        let mut delta = CoverDelta::default();
        let pre = std::mem::take(&mut self.delta_pre);
        let mut items: Vec<_> = pre.into_iter().collect();
        items.sort_unstable();
        for (s, was) in items {
            let now = self.eff_tight(s);
            if was != now {
                if now {
                    delta.entered.push(s);
                } else {
                    delta.left.push(s);
                }
            }
        }
        delta
    }

    /// All currently tight sets: the maintained cover.
    pub fn query_cover(&self) -> Vec<SetId> {
        (0..self.sets.len() as SetId)
            .filter(|&s| self.eff_tight(s))
            .collect()
    }

    pub fn query_cover_cost(&self) -> f64 {
        (0..self.sets.len() as SetId)
            .filter(|&s| self.eff_tight(s))
            .map(|s| self.sets[s as usize].cost)
            .sum()
    }

    pub fn set_view(&self, s: SetId) -> SetView {
        let d = &self.sets[s as usize];
        SetView {
            cost: d.cost,
            base: d.base,
            lev: self.eff_lev(s),
            omega: d.omega,
            phi: self.eff_phi(s),
            tight: self.eff_tight(s),
        }
    }

    pub fn elem_view(&self, elem: ElemId) -> Option<ElemView> {
        let &idx = self.by_ext.get(&elem)?;
        let el = self.elem(idx);
        Some(ElemView {
            elem,
            members: el.members.to_vec(),
            active: el.active,
            zlev: el.zlev,
            ilev: el.ilev,
        })
    }

    pub fn live_elems(&self) -> Vec<ElemId> {
        let mut v: Vec<ElemId> = self.by_ext.keys().copied().collect();
        v.sort_unstable();
        v
    }

    // ── deletion ───────────────────────────────────────────────────────────

    fn delete_internal(&mut self, e: u32) {
        let w = self.elem_weight(e);
        let members = self.elem(e).members.clone();
        for &s in members.iter() {
            self.touch(s);
            let was_tight = self.sets[s as usize].tight;
            self.add_omega(s, -w);
            if was_tight {
                let phi = self.sets[s as usize].phi;
                self.set_phi(s, phi + w);
            }
        }
        self.bucket_remove_all(e);
        self.unregister_zlev(e);
        let el = self.elems[e as usize].take().unwrap();
        self.by_ext.remove(&el.ext_id);
        self.free.push(e);
        self.live -= 1;
    }

    // ── insertion ──────────────────────────────────────────────────────────

    fn alloc_elem(&mut self, ext: ElemId, members: &[SetId], zlev: u32, ilev: u32) -> u32 {
        let n = members.len();
        let data = ElemData {
            ext_id: ext,
            members: members.to_vec().into_boxed_slice(),
            bucket_pos: vec![0; n].into_boxed_slice(),
            active: false,
            zlev,
            ilev,
            zpos: 0,
            dirty_rebuilds: 0,
            last_eta: None,
        };
        let idx = match self.free.pop() {
            Some(i) => {
                self.elems[i as usize] = Some(data);
                i
            }
            None => {
                self.elems.push(Some(data));
                (self.elems.len() - 1) as u32
            }
        };
        self.by_ext.insert(ext, idx);
        self.live += 1;
        idx
    }

    fn insert_internal(&mut self, ext: ElemId, members: &[SetId]) {
        let zlev = members.iter().map(|&s| self.eff_lev(s)).max().unwrap();
        let l = zlev + self.res.gap_bound;
        let wl = self.res.pow.neg(l);
        let blocked = members
            .iter()
            .any(|&s| self.sets[s as usize].omega + wl >= self.sets[s as usize].cost);
        if !blocked {
            // room below l: place at the lowest feasible intrinsic level
            let min_gap = members
                .iter()
                .map(|&s| self.sets[s as usize].cost - self.sets[s as usize].omega)
                .fold(f64::INFINITY, f64::min);
            let h = self
                .res
                .pow
                .smallest_below(zlev, l, min_gap)
                .expect("l always qualifies when no set is blocked");
            let e = self.alloc_elem(ext, members, zlev, h);
            self.elem_mut(e).active = h == zlev;
            self.register_zlev(e);
            let w = self.res.pow.neg(h);
            for &s in members {
                self.add_omega(s, w);
            }
            self.bucket_insert_all(e);
        } else {
            let e = self.alloc_elem(ext, members, zlev, l);
            self.register_zlev(e);
            self.fix_level(e, l, true);
        }
    }

    // ── level repair ───────────────────────────────────────────────────────

    /// Re-target `e`'s intrinsic level to `l`, then raise its member sets
    /// until the frontier bound holds again, keeping the lazy-to-intrinsic
    /// gap constant throughout. `fresh` marks a newly inserted element whose
    /// weight was not yet part of any set.
    fn fix_level(&mut self, e: u32, l: u32, fresh: bool) {
        let ilev_old = self.elem(e).ilev;
        debug_assert!(fresh || (self.elem(e).zlev < l && l <= ilev_old));
        if !fresh && ilev_old == l {
            return; // re-targeting to the current level changes nothing
        }
        let t0 = self.timing.then(Instant::now);
        self.stats.fixlevel_calls += 1;
        let w_old = if fresh { 0.0 } else { self.res.pow.neg(ilev_old) };
        let members = self.elem(e).members.clone();
        let eps = self.res.cfg.epsilon;

        if !fresh {
            self.bucket_remove_all(e);
            self.set_ilev(e, l);
        }
        let wl = self.res.pow.neg(l);
        for &s in members.iter() {
            self.add_omega(s, wl - w_old);
        }
        let over: Vec<bool> = members
            .iter()
            .map(|&s| self.sets[s as usize].omega >= self.sets[s as usize].cost)
            .collect();
        let d = l - self.elem(e).zlev;
        let mut recorded = vec![0u32; members.len()];

        for (slot, &s) in members.iter().enumerate() {
            // fold e's current weight into this set before testing it
            let w_cur = self.res.pow.neg(self.elem(e).ilev);
            self.add_omega(s, w_cur - wl);

            let target = self.sets[s as usize].base.min(self.elem(e).zlev);
            if self.eff_lev(s) < target
                && self.weight_next_level(s) >= self.sets[s as usize].cost
            {
                self.set_phi(s, 0.0);
                self.set_lev(s, target);
                self.activate_bucket(s, target);
            }
            while self.weight_next_level(s) >= self.sets[s as usize].cost {
                self.stats.fixlevel_while_iterations += 1;
                self.set_phi(s, 0.0);
                let k = self.eff_lev(s);
                self.set_lev(s, k + 1);
                while let Some(&entry) = self.sets[s as usize].bkt_a[k as usize].last() {
                    self.raise_active(entry.elem, k, s);
                }
                if self.elem(e).zlev == k {
                    self.move_zlev(e, k + 1);
                    self.set_ilev(e, k + 1 + d);
                    self.add_omega(s, -(eps * self.res.pow.neg(k + 1 + d)));
                }
                self.activate_bucket(s, k + 1);
            }
            recorded[slot] = self.elem(e).ilev;
        }

        let w_fin = self.res.pow.neg(self.elem(e).ilev);
        for (slot, &s) in members.iter().enumerate() {
            let wr = self.res.pow.neg(recorded[slot]);
            self.add_omega(s, w_fin - wr);
            if over[slot] {
                let phi = self.eff_phi(s);
                self.set_phi(s, phi + (wr - w_fin));
            }
        }
        debug_assert!(self.elem(e).ilev - self.elem(e).zlev == d);
        self.elem_mut(e).active = false;
        self.bucket_insert_all(e);
        if let Some(t) = t0 {
            self.stats.timing.fixlevel_ns += t.elapsed().as_nanos() as u64;
        }
    }

    /// Raise an active element from level `k` to `k+1` because `raising` went
    /// up. Every other member set is compensated with dead weight.
    fn raise_active(&mut self, e2: u32, k: u32, raising: SetId) {
        debug_assert!(self.elem(e2).active && self.elem(e2).ilev == k);
        let eps = self.res.cfg.epsilon;
        let step = eps * self.res.pow.neg(k + 1);
        self.bucket_remove_all(e2);
        self.move_zlev(e2, k + 1);
        self.set_ilev(e2, k + 1);
        self.bucket_insert_all(e2);
        let members = self.elem(e2).members.clone();
        for &s2 in members.iter() {
            self.add_omega(s2, -step);
            if s2 != raising {
                let phi = self.eff_phi(s2);
                self.set_phi(s2, phi + step);
            }
        }
    }

    // ── rebuilding ─────────────────────────────────────────────────────────

    fn rebuild(&mut self, k: u32) {
        self.stats.rebuild_count += 1;
        self.stats.rebuild_k_histogram[k as usize] += 1;
        let frontier = k + 1;

        // snapshot: everything at lazy level <= k, split clean/dirty
        let mut clean: Vec<u32> = Vec::new();
        let mut dirty: Vec<u32> = Vec::new();
        for i in 0..=k {
            for &e in &self.e_lists[i as usize] {
                let el = self.elem(e);
                if !el.active && el.ilev > frontier {
                    dirty.push(e);
                } else {
                    clean.push(e);
                }
            }
        }

        self.zero_levels(0, k);

        self.stamp += 1;
        let mut ctx = RebuildCtx {
            k,
            stamp: self.stamp,
            touched_sets: Vec::new(),
            activated: Vec::new(),
        };

        // clean elements rise to the frontier together with their sets
        let w_front = self.res.pow.neg(frontier);
        for &e in &clean {
            self.stats.clean_processed += 1;
            let w_old = self.elem_weight(e);
            let members = self.elem(e).members.clone();
            self.bucket_remove_all(e);
            for &s in members.iter() {
                debug_assert!(self.eff_lev(s) <= frontier);
                self.mark_touched(s, &mut ctx);
                self.set_lev(s, frontier);
                self.add_omega(s, w_front - w_old);
            }
            self.move_zlev(e, frontier);
            self.set_ilev(e, frontier);
            self.elem_mut(e).active = true;
            self.bucket_insert_all(e);
        }

        // dirty elements
        let deterministic = self.res.cfg.deterministic;
        for &e in &dirty {
            if self.elem(e).active {
                // activated by an earlier dirty element's level repair
                self.stats.dirty_skipped_active += 1;
                continue;
            }
            self.stats.dirty_processed += 1;
            {
                let gb = self.res.gap_bound;
                let el = self.elem_mut(e);
                el.dirty_rebuilds += 1;
                let dr = el.dirty_rebuilds;
                if dr > self.stats.max_dirty_rebuilds_per_element {
                    self.stats.max_dirty_rebuilds_per_element = dr;
                }
                let _ = gb;
            }
            let gap_before = self.elem(e).ilev - self.elem(e).zlev;
            if deterministic || self.res.route_all_det {
                self.handle_det(e, &mut ctx);
            } else {
                self.handle_rand(e, &mut ctx);
            }
            let el = self.elem(e);
            let gap_after = if el.active { 0 } else { el.ilev - el.zlev };
            if gap_after >= gap_before {
                self.stats.gap_violations += 1;
            }
        }

        // post-processing: collect uncovered frontier elements
        let mut e_hat: Vec<u32> = Vec::new();
        for &e in clean.iter().chain(ctx.activated.iter()) {
            let covered = self
                .elem(e)
                .members
                .iter()
                .any(|&s| self.eff_tight(s));
            if !covered {
                e_hat.push(e);
            }
        }
        for &s in &ctx.touched_sets {
            if !self.eff_tight(s) && self.eff_lev(s) != 0 {
                self.set_lev(s, 0);
            }
        }
        if e_hat.is_empty() {
            return;
        }
        self.stamp += 1;
        let st = self.stamp;
        let mut s_hat: Vec<SetId> = Vec::new();
        for &e in &e_hat {
            let members = self.elem(e).members.clone();
            for &s in members.iter() {
                if self.sets[s as usize].stamp != st {
                    self.sets[s as usize].stamp = st;
                    s_hat.push(s);
                }
            }
        }
        let c = self.res.cfg.cost_ratio_c as f64;
        let eps = self.res.cfg.epsilon;
        let k_hat = frontier.min(
            self.res
                .pow
                .ceil_log(2.0 * c * e_hat.len() as f64 / eps),
        );
        for &s in &s_hat {
            self.set_lev(s, k_hat);
        }
        if k_hat != frontier {
            let w_hat = self.res.pow.neg(k_hat);
            for &e in &e_hat {
                let members = self.elem(e).members.clone();
                self.bucket_remove_all(e);
                for &s in members.iter() {
                    self.add_omega(s, w_hat - w_front);
                }
                self.move_zlev(e, k_hat);
                self.set_ilev(e, k_hat);
                self.bucket_insert_all(e);
            }
        }
        self.water_filling(k_hat, &s_hat, &e_hat);
    }

    fn mark_touched(&mut self, s: SetId, ctx: &mut RebuildCtx) {
        if self.sets[s as usize].stamp != ctx.stamp {
            self.sets[s as usize].stamp = ctx.stamp;
            ctx.touched_sets.push(s);
        }
    }

    /// Deterministic dirty-element handler: hook onto a tight member, or push
    /// the intrinsic level down as far as the weights allow.
    fn handle_det(&mut self, e: u32, ctx: &mut RebuildCtx) {
        self.stats.dirty_via_det += 1;
        let members = self.elem(e).members.clone();
        if let Some(&s) = members.iter().find(|&&s| self.eff_tight(s)) {
            let lv = self.eff_lev(s).max(ctx.k + 1);
            self.set_lev(s, lv);
            self.move_zlev(e, lv);
        } else {
            self.dec_ilev(e, ctx);
        }
    }

    /// Lower `e`'s intrinsic level as far as the member weight bounds allow,
    /// then hook onto a tight member or activate `e` at the frontier.
    fn dec_ilev(&mut self, e: u32, ctx: &mut RebuildCtx) {
        self.stats.dec_ilev_calls += 1;
        let members = self.elem(e).members.clone();
        debug_assert!(members
            .iter()
            .all(|&s| self.sets[s as usize].omega < self.sets[s as usize].cost));
        let frontier = ctx.k + 1;
        let l = members
            .iter()
            .map(|&s| self.eff_lev(s))
            .max()
            .unwrap()
            .max(frontier);
        let ilev0 = self.elem(e).ilev;
        let w0 = self.res.pow.neg(ilev0);
        let min_gap = members
            .iter()
            .map(|&s| self.sets[s as usize].cost - (self.sets[s as usize].omega - w0))
            .fold(f64::INFINITY, f64::min);
        let h = self
            .res
            .pow
            .smallest_below(l, ilev0, min_gap)
            .expect("the current intrinsic level always qualifies");
        let wh = self.res.pow.neg(h);
        self.bucket_remove_all(e);
        for &s in members.iter() {
            self.add_omega(s, wh - w0);
        }
        self.set_ilev(e, h);
        if members.iter().all(|&s| !self.eff_tight(s)) {
            assert_eq!(
                h, frontier,
                "descent lands at the frontier when every member stays slack"
            );
            for &s in members.iter() {
                self.mark_touched(s, ctx);
                self.set_lev(s, frontier);
            }
            self.move_zlev(e, frontier);
            self.elem_mut(e).active = true;
            ctx.activated.push(e);
        } else {
            let &s = members.iter().find(|&&s| self.eff_tight(s)).unwrap();
            let lv = self.eff_lev(s).max(frontier);
            self.set_lev(s, lv);
            let zl = members.iter().map(|&s| self.eff_lev(s)).max().unwrap();
            self.move_zlev(e, zl);
            if self.elem(e).ilev == zl {
                self.elem_mut(e).active = true;
            }
        }
        self.bucket_insert_all(e);
    }

    /// Randomized dirty-element handler: sample members for a witness set
    /// that would overflow if `e`'s weight rose to the probe value; fall back
    /// to exact witness counting, and for few witnesses buy a large gap
    /// reduction through a level repair.
    fn handle_rand(&mut self, e: u32, ctx: &mut RebuildCtx) {
        let gap = self.elem(e).ilev - ctx.k - 1;
        if (gap as f64) <= self.rand_gap_threshold {
            self.handle_det(e, ctx);
            return;
        }
        self.handle_rand_core(e, ctx)
    }

    fn handle_rand_core(&mut self, e: u32, ctx: &mut RebuildCtx) {
        self.stats.dirty_via_rand_core += 1;
        let frontier = ctx.k + 1;
        let gap = self.elem(e).ilev - frontier;
        let entry = self
            .res
            .sched
            .lookup(gap)
            .expect("schedule entry for an in-range gap");
        let delta = entry.delta_mult * self.res.pow.neg(frontier);
        let w = self.elem_weight(e);
        let members = self.elem(e).members.clone();
        for _ in 0..entry.sample_budget {
            self.stats.sample_rounds += 1;
            let s = members[self.rng.random_range(0..members.len())];
            if self.sets[s as usize].omega - w + delta >= self.sets[s as usize].cost {
                self.stats.sample_hits += 1;
                let lv = self.eff_lev(s).max(frontier);
                self.set_lev(s, lv);
                self.move_zlev(e, lv);
                return;
            }
        }
        let witnesses: Vec<SetId> = members
            .iter()
            .copied()
            .filter(|&s| self.sets[s as usize].omega - w + delta >= self.sets[s as usize].cost)
            .collect();
        if witnesses.is_empty() {
            self.stats.rand_witness_empty += 1;
            self.note_eta_event(e, entry.eta);
            self.dec_ilev(e, ctx);
        } else if (witnesses.len() as f64) <= entry.small_witness_cap {
            self.stats.rand_witness_small += 1;
            self.note_eta_event(e, entry.eta);
            for &s in members.iter() {
                if self.eff_tight(s) {
                    let lv = self.eff_lev(s).max(frontier);
                    self.set_lev(s, lv);
                }
            }
            let zl = members.iter().map(|&s| self.eff_lev(s)).max().unwrap();
            self.move_zlev(e, zl);
            let l = self.elem(e).ilev.min(zl + entry.d_hat);
            self.fix_level(e, l, false);
            self.zero_levels(0, 0);
        } else {
            self.stats.rand_witness_large += 1;
            let s = witnesses[0];
            let lv = self.eff_lev(s).max(frontier);
            self.set_lev(s, lv);
            self.move_zlev(e, lv);
        }
    }

    fn note_eta_event(&mut self, e: u32, eta: u32) {
        let prev = self.elem(e).last_eta;
        if prev.is_some_and(|p| eta <= p) {
            self.stats.eta_order_violations += 1;
        }
        self.elem_mut(e).last_eta = Some(eta);
    }

    // ── water filling ──────────────────────────────────────────────────────

    /// Synchronized descent: all of `s_hat` and `e_hat` start at `k_hat`;
    /// level by level, a set freezes where dropping one more level would push
    /// its weight to its cost, freezing its floating elements with it.
    /// Everything still floating at the bottom lands on level 0.
    fn water_filling(&mut self, k_hat: u32, s_hat: &[SetId], e_hat: &[u32]) {
        let t0 = self.timing.then(Instant::now);
        self.stats.water_filling_calls += 1;
        let powv: Vec<f64> = (0..=k_hat).map(|i| self.res.pow.neg(i)).collect();
        let pow = |i: u32| powv[i as usize];

        struct Wf {
            set: SetId,
            cost: f64,
            floating: f64,
            mass: f64,
            frozen_at: Option<u32>,
            queued_at: u32,
            elems: Vec<u32>, // indices into e_hat
        }
        self.stamp += 1;
        let st = self.stamp;
        let mut wf: Vec<Wf> = Vec::with_capacity(s_hat.len());
        for (i, &s) in s_hat.iter().enumerate() {
            debug_assert!(self.sets[s as usize].omega < self.sets[s as usize].cost);
            debug_assert_eq!(self.eff_phi(s), 0.0);
            debug_assert_eq!(self.eff_lev(s), k_hat);
            self.sets[s as usize].stamp = st;
            self.sets[s as usize].scratch = i as u32;
            wf.push(Wf {
                set: s,
                cost: self.sets[s as usize].cost,
                floating: 0.0,
                mass: 0.0,
                frozen_at: None,
                queued_at: 0,
                elems: Vec::new(),
            });
        }
        for (ei, &e) in e_hat.iter().enumerate() {
            debug_assert!(self.elem(e).active && self.elem(e).ilev == k_hat);
            for &s in self.elem(e).members.iter() {
                let wi = self.sets[s as usize].scratch as usize;
                wf[wi].floating += 1.0;
                wf[wi].elems.push(ei as u32);
            }
        }
        for (i, &s) in s_hat.iter().enumerate() {
            wf[i].mass = self.sets[s as usize].omega - wf[i].floating * pow(k_hat);
        }

        // bucket queue of candidate freeze levels
        let mut queue: Vec<Vec<u32>> = vec![Vec::new(); k_hat as usize + 1];
        let threshold = |w: &Wf| -> Option<u32> {
            if w.floating == 0.0 {
                // weight no longer changes; cannot reach its cost by dropping
                return None;
            }
            let gap = (w.cost - w.mass) / w.floating;
            // largest t with pow(t) >= gap
            if powv[0] < gap {
                return None;
            }
            let mut lo = 0u32;
            let mut hi = k_hat;
            while lo < hi {
                let mid = (lo + hi + 1) / 2;
                if powv[mid as usize] >= gap {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            Some(lo)
        };
        for (i, w) in wf.iter_mut().enumerate() {
            if let Some(t) = threshold(w) {
                let q = (t + 1).min(k_hat);
                w.queued_at = q;
                queue[q as usize].push(i as u32);
            }
        }
        let mut e_frozen: Vec<Option<u32>> = vec![None; e_hat.len()];
        for j in (1..=k_hat).rev() {
            while let Some(wi) = queue[j as usize].pop() {
                let wi = wi as usize;
                if wf[wi].frozen_at.is_some() || wf[wi].queued_at != j {
                    continue;
                }
                if wf[wi].mass + wf[wi].floating * pow(j - 1) >= wf[wi].cost {
                    wf[wi].frozen_at = Some(j);
                    let elems = std::mem::take(&mut wf[wi].elems);
                    for ei in elems {
                        let ei = ei as usize;
                        if e_frozen[ei].is_some() {
                            continue;
                        }
                        e_frozen[ei] = Some(j);
                        let e = e_hat[ei];
                        let members = self.elem(e).members.clone();
                        for &s2 in members.iter() {
                            let w2 = self.sets[s2 as usize].scratch as usize;
                            if w2 == wi || wf[w2].frozen_at.is_some() {
                                continue;
                            }
                            wf[w2].floating -= 1.0;
                            wf[w2].mass += pow(j);
                            if let Some(t) = threshold(&wf[w2]) {
                                let q = (t + 1).min(j);
                                wf[w2].queued_at = q;
                                queue[q as usize].push(w2 as u32);
                            } else {
                                wf[w2].queued_at = 0;
                            }
                        }
                    }
                } else if let Some(t) = threshold(&wf[wi]) {
                    let q = t + 1;
                    debug_assert!(q < j);
                    wf[wi].queued_at = q;
                    queue[q as usize].push(wi as u32);
                } else {
                    wf[wi].queued_at = 0;
                }
            }
        }

        // land everything and write the final placement back
        for (ei, &e) in e_hat.iter().enumerate() {
            let to = e_frozen[ei].unwrap_or(0);
            if to != k_hat {
                self.bucket_remove_all(e);
                self.move_zlev(e, to);
                self.set_ilev(e, to);
                self.bucket_insert_all(e);
            }
        }
        for w in &wf {
            let to = w.frozen_at.unwrap_or(0);
            self.set_lev(w.set, to);
            self.set_omega_abs(w.set, w.mass + w.floating * pow(to));
        }
        for w in &wf {
            let s = w.set;
            let d = &self.sets[s as usize];
            let ok = d.omega < d.cost
                && self.eff_phi(s) == 0.0
                && (self.eff_lev(s) == 0 || d.omega >= d.tight_thr);
            if !ok {
                self.stats.water_filling_violations += 1;
                debug_assert!(ok, "water filling contract violated for set {s}");
            }
        }
        if let Some(t) = t0 {
            self.stats.timing.water_filling_ns += t.elapsed().as_nanos() as u64;
        }
    }

    // ── test support ───────────────────────────────────────────────────────

    /// Force a set into a given state, keeping the registries consistent.
    /// Only for white-box tests of individual operations.
    #[cfg(test)]
    pub(crate) fn force_set_state(&mut self, s: SetId, lev: u32, omega: f64, phi: f64) {
        self.touch(s);
        self.set_lev(s, lev);
        self.set_omega_abs(s, omega);
        self.set_phi(s, phi);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(epsilon: f64, c: u32, f: u32, n: u32, det: bool) -> Config {
        Config {
            epsilon,
            cost_ratio_c: c,
            max_frequency_f: f,
            capacity_n: n,
            deterministic: det,
            rng_seed: 7,
        }
    }

    fn ins(elem: ElemId, members: &[SetId]) -> Update {
        Update::Insert {
            elem,
            members: members.to_vec(),
        }
    }

    fn del(elem: ElemId) -> Update {
        Update::Delete { elem }
    }

    #[test]
    fn composite_weight_and_tightness() {
        let mut en = Engine::new(cfg(0.5, 1, 2, 10, true), &[1.0, 1.0]).unwrap();
        en.force_set_state(0, 0, 0.6, 0.07);
        let v = en.set_view(0);
        assert!((v.omega + v.phi - 0.67).abs() < 1e-12);
        assert!(v.tight); // 0.67 >= 1/1.5
        en.force_set_state(1, 0, 0.5, 0.0);
        assert!(!en.set_view(1).tight); // 0.5 < 0.66667
        en.force_set_state(1, 0, 1.0, 0.0);
        assert!(en.set_view(1).tight); // omega = cost is always tight
    }

    #[test]
    fn weight_at_frontier_examples() {
        // set at level 2 with three active members at 2 and one passive at 4
        let mut en = Engine::new(cfg(0.5, 1, 1, 10, true), &[1.0]).unwrap();
        for e in 0..3 {
            en.apply_update(&ins(e, &[0])).unwrap();
        }
        // shape the state by hand: actives at level 2
        for e in 0..3 {
            let idx = en.by_ext[&e];
            en.bucket_remove_all(idx);
            en.move_zlev(idx, 2);
            en.set_ilev(idx, 2);
            en.elem_mut(idx).active = true;
            en.bucket_insert_all(idx);
        }
        en.apply_staged(&ins(3, &[0])).unwrap();
        let idx = en.by_ext[&3];
        en.bucket_remove_all(idx);
        en.move_zlev(idx, 2);
        en.set_ilev(idx, 4);
        en.elem_mut(idx).active = false;
        en.bucket_insert_all(idx);
        en.force_set_state(0, 2, 3.0 * (4.0 / 9.0) + 16.0 / 81.0, 0.0);
        assert!((en.set_view(0).omega - 124.0 / 81.0).abs() < 1e-9);
        let up = en.weight_next_level(0);
        assert!((up - 88.0 / 81.0).abs() < 1e-9, "got {up}");
    }

    #[test]
    fn first_insert_covers_and_delete_clears() {
        let mut en = Engine::new(cfg(0.5, 1, 1, 10, true), &[1.0]).unwrap();
        let delta = en.apply_update(&ins(1, &[0])).unwrap();
        // the smallest feasible intrinsic level keeps omega strictly below
        // cost, so the element lands passive one level up with weight 2/3
        let ev = en.elem_view(1).unwrap();
        assert!(!ev.active);
        assert_eq!(ev.zlev, 0);
        assert_eq!(ev.ilev, 1);
        let v = en.set_view(0);
        assert!((v.omega - 2.0 / 3.0).abs() < 1e-12);
        assert!(v.tight, "weight 2/3 meets the threshold 1/1.5 inclusively");
        assert_eq!(delta.entered, vec![0]);
        assert_eq!(en.query_cover(), vec![0]);
        assert!((en.query_cover_cost() - 1.0).abs() < 1e-12);

        let delta = en.apply_update(&del(1)).unwrap();
        assert_eq!(delta.left, vec![0]);
        let v = en.set_view(0);
        assert_eq!(v.omega, 0.0);
        assert_eq!(v.phi, 0.0);
        assert_eq!(v.lev, 0);
        assert!(en.query_cover().is_empty());
        assert!(en.stats.rebuild_count >= 1);
    }

    #[test]
    fn update_errors_leave_state_unchanged() {
        let mut en = Engine::new(cfg(0.5, 1, 2, 1, true), &[1.0, 1.0]).unwrap();
        assert_eq!(
            en.apply_update(&del(9)),
            Err(UpdateError::UnknownElement(9))
        );
        en.apply_update(&ins(1, &[0])).unwrap();
        assert_eq!(
            en.apply_update(&ins(1, &[1])),
            Err(UpdateError::DuplicateElement(1))
        );
        assert_eq!(
            en.apply_update(&ins(2, &[0, 1, 0])),
            Err(UpdateError::FrequencyExceeded {
                elem: 2,
                got: 3,
                max: 2
            })
        );
        assert_eq!(
            en.apply_update(&ins(2, &[0])),
            Err(UpdateError::CapacityExceeded(1))
        );
        let mut en2 = Engine::new(cfg(0.5, 1, 4, 8, true), &[1.0, 1.0]).unwrap();
        assert_eq!(
            en2.apply_update(&ins(1, &[0, 0])),
            Err(UpdateError::DuplicateMember(0))
        );
        assert_eq!(en2.apply_update(&ins(1, &[5])), Err(UpdateError::UnknownSet(5)));
        assert_eq!(
            en2.apply_update(&ins(1, &[])),
            Err(UpdateError::EmptyMembership)
        );
        assert_eq!(en2.live_count(), 0);
    }

    #[test]
    fn delete_from_tight_set_moves_weight_to_dead_weight() {
        // a passive element leaves a tight set (c=1, omega=0.9): its weight
        // moves to dead weight and the set stays tight
        let mut en = Engine::new(cfg(0.5, 1, 1, 10, true), &[1.0]).unwrap();
        en.apply_update(&ins(1, &[0])).unwrap();
        let idx = en.by_ext[&1];
        en.bucket_remove_all(idx);
        en.set_ilev(idx, 4); // weight ~0.1975
        en.elem_mut(idx).active = false;
        en.bucket_insert_all(idx);
        let w = en.elem_weight(idx);
        en.force_set_state(0, 0, 0.9, 0.0);
        en.apply_staged(&del(1)).unwrap();
        let v = en.set_view(0);
        assert!((v.omega - (0.9 - w)).abs() < 1e-12);
        assert!((v.phi - w).abs() < 1e-12);
        assert!(v.tight);
    }

    #[test]
    fn delete_from_slack_set_leaves_phi_alone() {
        let mut en = Engine::new(cfg(0.5, 1, 1, 10, true), &[1.0]).unwrap();
        en.apply_update(&ins(1, &[0])).unwrap();
        en.force_set_state(0, 0, 0.5, 0.0); // slack now
        en.apply_staged(&del(1)).unwrap();
        assert_eq!(en.set_view(0).phi, 0.0);
    }

    #[test]
    fn insert_places_passive_above_crowded_sets() {
        // s1 (c=1, omega=0.8, lev 0), s2 (c=1, omega=0.2, lev 1):
        // zlev=1, l=5, no member blocked, min gap 0.2 => h=4, passive
        let mut en = Engine::new(cfg(0.5, 1, 2, 10, true), &[1.0, 1.0]).unwrap();
        en.force_set_state(0, 0, 0.8, 0.0);
        en.force_set_state(1, 1, 0.2, 0.0);
        en.apply_staged(&ins(7, &[0, 1])).unwrap();
        let ev = en.elem_view(7).unwrap();
        assert_eq!(ev.zlev, 1);
        assert_eq!(ev.ilev, 4);
        assert!(!ev.active);
        assert!((en.set_view(0).omega - 0.99753).abs() < 1e-4);
    }

    #[test]
    fn insert_with_blocked_member_goes_through_fix_level() {
        let mut en = Engine::new(cfg(0.5, 1, 2, 10, true), &[1.0, 1.0]).unwrap();
        let l = en.res.gap_bound; // zlev will be 0
        let wl = en.res.pow.neg(l);
        en.force_set_state(0, 0, 1.0 - wl / 2.0, 0.0);
        en.apply_staged(&ins(7, &[0])).unwrap();
        assert_eq!(en.stats.fixlevel_calls, 1);
        let ev = en.elem_view(7).unwrap();
        assert!(!ev.active);
        assert!(ev.ilev >= l);
    }

    #[test]
    fn fix_level_single_while_iteration() {
        // c=1, eps=0.5, set at level 1 holding two active level-1 elements:
        // a blocked fresh insert raises the set once, both actives rise to
        // level 2, and the final weight matches the per-element recount
        let mut en = Engine::new(cfg(0.5, 1, 1, 10, true), &[1.0]).unwrap();
        for e in 0..2 {
            en.apply_update(&ins(e, &[0])).unwrap();
            let idx = en.by_ext[&e];
            en.bucket_remove_all(idx);
            en.move_zlev(idx, 1);
            en.set_ilev(idx, 1);
            en.elem_mut(idx).active = true;
            en.bucket_insert_all(idx);
        }
        en.force_set_state(0, 1, 2.0 * (2.0 / 3.0), 0.0);
        en.apply_staged(&ins(9, &[0])).unwrap();
        assert_eq!(en.stats.fixlevel_calls, 1);
        assert_eq!(en.stats.fixlevel_while_iterations, 1);
        assert_eq!(en.set_view(0).lev, 2);
        for e in 0..2 {
            let ev = en.elem_view(e).unwrap();
            assert!(ev.active);
            assert_eq!(ev.ilev, 2);
        }
        let ev = en.elem_view(9).unwrap();
        assert!(!ev.active);
        assert_eq!(ev.zlev, 2);
        assert_eq!(ev.ilev, 6); // gap 4 preserved
        let expect = 2.0 * en.res.pow.neg(2) + en.res.pow.neg(6);
        assert!((en.set_view(0).omega - expect).abs() < 1e-9);
        assert!(en.set_view(0).tight);
        let up = en.weight_next_level(0);
        assert!(up < 1.0);
    }

    #[test]
    fn fix_level_retarget_to_current_level_is_a_noop() {
        let mut en = Engine::new(cfg(0.5, 1, 2, 10, true), &[1.0, 1.0]).unwrap();
        en.apply_update(&ins(1, &[0, 1])).unwrap();
        let idx = en.by_ext[&1];
        let before = (
            en.elem_view(1).unwrap(),
            en.set_view(0),
            en.set_view(1),
        );
        let il = en.elem(idx).ilev;
        en.fix_level(idx, il, false);
        assert_eq!(before.0, en.elem_view(1).unwrap());
        assert_eq!(before.1, en.set_view(0));
        assert_eq!(before.2, en.set_view(1));
    }

    #[test]
    fn stale_reads_resolve_to_level_zero() {
        let mut en = Engine::new(cfg(0.5, 1, 1, 10, true), &[1.0]).unwrap();
        en.force_set_state(0, 5, 0.0, 0.2);
        en.zero_levels(0, 5);
        let v = en.set_view(0);
        assert_eq!((v.lev, v.phi), (0, 0.0));
        // a second read is identical and does not disturb anything
        let v2 = en.set_view(0);
        assert_eq!(v, v2);
    }

    #[test]
    fn zeroing_outside_range_is_inert() {
        let mut en = Engine::new(cfg(0.5, 1, 1, 10, true), &[1.0]).unwrap();
        en.force_set_state(0, 5, 0.9, 0.3);
        en.zero_levels(0, 2);
        let v = en.set_view(0);
        assert_eq!(v.lev, 5);
        assert!((v.phi - 0.3).abs() < 1e-12);
    }

    #[test]
    fn singleton_window_churn_stays_consistent() {
        let mut en = Engine::new(cfg(0.2, 1, 1, 4, true), &[1.0]).unwrap();
        for round in 0..200u64 {
            en.apply_update(&ins(round, &[0])).unwrap();
            en.apply_update(&del(round)).unwrap();
        }
        assert_eq!(en.live_count(), 0);
        assert!(en.query_cover().is_empty());
    }

    #[test]
    fn dec_ilev_power_search_example() {
        // eps=0.5, single member c=1, omega - w = 0.7, frontier 2:
        // smallest h >= 2 with 1.5^{-h} < 0.3 is 3
        let en = Engine::new(cfg(0.5, 1, 1, 10, true), &[1.0]).unwrap();
        assert_eq!(en.res.pow.smallest_below(2, 10, 0.3), Some(3));
    }

    #[test]
    fn cover_delta_round_trip() {
        let mut en = Engine::new(cfg(0.5, 2, 2, 10, true), &[1.0, 0.5]).unwrap();
        let d1 = en.apply_update(&ins(1, &[0, 1])).unwrap();
        assert!(!d1.entered.is_empty());
        let d2 = en.apply_update(&del(1)).unwrap();
        assert_eq!(d2.entered, Vec::<SetId>::new());
        assert!(!d2.left.is_empty());
    }

    #[test]
    fn deterministic_mode_ignores_seed() {
        let mk = |seed| {
            let mut c = cfg(0.2, 2, 3, 50, true);
            c.rng_seed = seed;
            let mut en = Engine::new(c, &[1.0, 0.5, 0.75, 1.0]).unwrap();
            for e in 0..30u64 {
                en.apply_update(&ins(e, &[(e % 4) as SetId, ((e + 1) % 4) as SetId]))
                    .unwrap();
                if e % 3 == 0 {
                    en.apply_update(&del(e)).unwrap();
                }
            }
            (en.query_cover(), en.query_cover_cost())
        };
        assert_eq!(mk(1), mk(999));
    }
}
