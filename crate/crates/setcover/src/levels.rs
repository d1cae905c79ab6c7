//! Per-level aggregate registries, the nonempty-level index, and the
//! zero-clock used for bulk lazy resets of set levels and dead weights.

/// Aggregate bookkeeping per level plus the zeroing clock.
///
/// Per level `i` this tracks: total effective dead weight `phi[i]`, the tight
/// sets (`n_t`, `cost_t`), the sets that are tight on plain weight alone
/// (`n_tw`, `cost_tw` — what survives a dead-weight wipe), and the elements
/// whose lazy level is `i` (`n_e`, `omega_e`). Individual set records are
/// reconciled lazily against `aux` through their timestamps.
#[derive(Debug, Clone)]
pub(crate) struct LevelIndex {
    pub now: u64,
    pub aux: Vec<u64>,
    pub phi: Vec<f64>,
    /// sets at the level with nonzero stored dead weight; lets `phi` snap to
    /// an exact 0.0 when the last one clears, so accumulated rounding residue
    /// cannot leave a stray negative total behind
    pub n_phi: Vec<u32>,
    pub n_t: Vec<u32>,
    pub cost_t: Vec<f64>,
    pub n_tw: Vec<u32>,
    pub cost_tw: Vec<f64>,
    pub n_e: Vec<u32>,
    pub omega_e: Vec<f64>,
    nonempty: Vec<u64>,
    pub low_cutoff: u32,
    pub l_max: u32,
}

impl LevelIndex {
    pub fn new(l_max: u32, low_cutoff: u32) -> Self {
        let n = l_max as usize + 1;
        LevelIndex {
            now: 0,
            aux: vec![0; n],
            phi: vec![0.0; n],
            n_phi: vec![0; n],
            n_t: vec![0; n],
            cost_t: vec![0.0; n],
            n_tw: vec![0; n],
            cost_tw: vec![0.0; n],
            n_e: vec![0; n],
            omega_e: vec![0.0; n],
            nonempty: vec![0; n / 64 + 1],
            low_cutoff,
            l_max,
        }
    }

    #[inline]
    pub fn bump(&mut self) -> u64 {
        self.now += 1;
        self.now
    }

    /// Whether a set whose stored level is `lev` and whose last explicit write
    /// happened at `tm` has been swept by a later bulk zeroing.
    #[inline]
    pub fn is_stale(&self, tm: u64, lev: u32) -> bool {
        tm <= self.aux[lev as usize]
    }

    /// Bulk-reset levels `[lo, hi]`: every set there moves to level 0 with no
    /// dead weight. Sets that were tight on plain weight stay tight; the rest
    /// leave the cover. Runs in O(hi - lo + 1); individual set records catch
    /// up through the timestamp check.
    pub fn zero_levels(&mut self, lo: u32, hi: u32) {
        debug_assert!(lo <= hi && hi <= self.l_max);
        let t = self.bump();
        if lo == 0 {
            self.phi[0] = 0.0;
            self.n_phi[0] = 0;
            self.n_t[0] = self.n_tw[0];
            self.cost_t[0] = self.cost_tw[0];
            self.aux[0] = t;
        }
        for i in lo.max(1)..=hi {
            let i = i as usize;
            self.n_t[0] += self.n_tw[i];
            self.cost_t[0] += self.cost_tw[i];
            self.n_tw[0] += self.n_tw[i];
            self.cost_tw[0] += self.cost_tw[i];
            self.phi[i] = 0.0;
            self.n_phi[i] = 0;
            self.n_t[i] = 0;
            self.cost_t[i] = 0.0;
            self.n_tw[i] = 0;
            self.cost_tw[i] = 0.0;
            self.aux[i] = t;
            self.refresh_bit(i as u32);
        }
    }

    #[inline]
    fn refresh_bit(&mut self, i: u32) {
        let occupied = self.n_t[i as usize] > 0 || self.n_e[i as usize] > 0;
        let (w, b) = (i as usize / 64, i as usize % 64);
        if occupied {
            self.nonempty[w] |= 1 << b;
        } else {
            self.nonempty[w] &= !(1 << b);
        }
    }

    /// Account for a set's tightness classification changing at level `lev`.
    pub fn reclass(
        &mut self,
        lev: u32,
        cost: f64,
        was_tight: bool,
        now_tight: bool,
        was_wtight: bool,
        now_wtight: bool,
    ) {
        let i = lev as usize;
        if was_tight != now_tight {
            if now_tight {
                self.n_t[i] += 1;
                self.cost_t[i] += cost;
            } else {
                self.n_t[i] -= 1;
                self.cost_t[i] = if self.n_t[i] == 0 {
                    0.0
                } else {
                    self.cost_t[i] - cost
                };
            }
            self.refresh_bit(lev);
        }
        if was_wtight != now_wtight {
            if now_wtight {
                self.n_tw[i] += 1;
                self.cost_tw[i] += cost;
            } else {
                self.n_tw[i] -= 1;
                self.cost_tw[i] = if self.n_tw[i] == 0 {
                    0.0
                } else {
                    self.cost_tw[i] - cost
                };
            }
        }
    }

    /// Move a set's aggregate contributions between levels.
    pub fn move_set(
        &mut self,
        old_lev: u32,
        new_lev: u32,
        cost: f64,
        phi: f64,
        tight: bool,
        wtight: bool,
    ) {
        if old_lev == new_lev {
            return;
        }
        let (o, n) = (old_lev as usize, new_lev as usize);
        if phi != 0.0 {
            self.n_phi[o] -= 1;
            self.phi[o] = if self.n_phi[o] == 0 {
                0.0
            } else {
                self.phi[o] - phi
            };
            self.n_phi[n] += 1;
            self.phi[n] += phi;
        }
        if tight {
            self.n_t[o] -= 1;
            self.cost_t[o] = if self.n_t[o] == 0 {
                0.0
            } else {
                self.cost_t[o] - cost
            };
            self.n_t[n] += 1;
            self.cost_t[n] += cost;
        }
        if wtight {
            self.n_tw[o] -= 1;
            self.cost_tw[o] = if self.n_tw[o] == 0 {
                0.0
            } else {
                self.cost_tw[o] - cost
            };
            self.n_tw[n] += 1;
            self.cost_tw[n] += cost;
        }
        self.refresh_bit(old_lev);
        self.refresh_bit(new_lev);
    }

    pub fn phi_write(&mut self, lev: u32, old: f64, new: f64) {
        let i = lev as usize;
        if old == 0.0 && new != 0.0 {
            self.n_phi[i] += 1;
        } else if old != 0.0 && new == 0.0 {
            self.n_phi[i] -= 1;
        }
        self.phi[i] = if self.n_phi[i] == 0 {
            0.0
        } else {
            self.phi[i] + (new - old)
        };
    }

    pub fn elem_arrive(&mut self, zlev: u32, w: f64) {
        self.n_e[zlev as usize] += 1;
        self.omega_e[zlev as usize] += w;
        self.refresh_bit(zlev);
    }

    pub fn elem_depart(&mut self, zlev: u32, w: f64) {
        let i = zlev as usize;
        self.n_e[i] -= 1;
        self.omega_e[i] = if self.n_e[i] == 0 {
            0.0
        } else {
            self.omega_e[i] - w
        };
        self.refresh_bit(zlev);
    }

    /// An element's weight changed while its lazy level stayed put.
    pub fn elem_reweigh(&mut self, zlev: u32, old_w: f64, new_w: f64) {
        self.omega_e[zlev as usize] += new_w - old_w;
    }

    /// Next level strictly above `i` that holds tight sets or lazy-level
    /// elements, if any.
    pub fn next_occupied_above(&self, i: u32) -> Option<u32> {
        let mut w = (i as usize + 1) / 64;
        if w >= self.nonempty.len() {
            return None;
        }
        let mut word = self.nonempty[w] & (!0u64 << ((i as usize + 1) % 64));
        loop {
            if word != 0 {
                let lev = (w * 64 + word.trailing_zeros() as usize) as u32;
                return if lev <= self.l_max { Some(lev) } else { None };
            }
            w += 1;
            if w >= self.nonempty.len() {
                return None;
            }
            word = self.nonempty[w];
        }
    }

    /// Smallest `k` whose prefix dead weight exceeds `eps * (c(T_{<=k}) +
    /// f * omega(E_{<=k}))`, or `None` when the global bound holds. Levels up
    /// to the cutoff are scanned densely, the rest via the occupancy index.
    pub fn find_rebuild_k(&self, epsilon: f64, f: u32) -> Option<u32> {
        let f = f as f64;
        let mut acc_phi = 0.0;
        let mut acc_ct = 0.0;
        let mut acc_we = 0.0;
        let dense_hi = self.low_cutoff.min(self.l_max);
        for i in 0..=dense_hi {
            let iu = i as usize;
            acc_phi += self.phi[iu];
            acc_ct += self.cost_t[iu];
            acc_we += self.omega_e[iu];
            if acc_phi > epsilon * (acc_ct + f * acc_we) {
                return Some(i);
            }
        }
        let mut i = dense_hi;
        while let Some(j) = self.next_occupied_above(i) {
            let ju = j as usize;
            debug_assert!(
                self.only_occupied_levels_carry_phi(i, j),
                "dead weight on an unindexed level"
            );
            acc_phi += self.phi[ju];
            acc_ct += self.cost_t[ju];
            acc_we += self.omega_e[ju];
            if acc_phi > epsilon * (acc_ct + f * acc_we) {
                return Some(j);
            }
            i = j;
        }
        None
    }

    #[cfg(debug_assertions)]
    fn only_occupied_levels_carry_phi(&self, lo: u32, hi: u32) -> bool {
        (lo + 1..hi).all(|i| self.phi[i as usize] == 0.0)
    }
    #[cfg(not(debug_assertions))]
    fn only_occupied_levels_carry_phi(&self, _lo: u32, _hi: u32) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_index_reports_no_rebuild() {
        let ix = LevelIndex::new(10, 2);
        assert_eq!(ix.find_rebuild_k(0.5, 2), None);
    }

    #[test]
    fn rebuild_k_at_level_zero() {
        // level 0: one tight set (c=1, phi=0.9) and one element of weight 0.1
        // 0.9 > 0.5 * (1 + 2*0.1) = 0.6  =>  k = 0
        let mut ix = LevelIndex::new(10, 2);
        ix.reclass(0, 1.0, false, true, false, true);
        ix.phi_write(0, 0.0, 0.9);
        ix.elem_arrive(0, 0.1);
        assert_eq!(ix.find_rebuild_k(0.5, 2), Some(0));
    }

    #[test]
    fn rebuild_k_at_level_one() {
        // level 0 as above but phi=0.5 (0.5 <= 0.6); level 1 adds a tight set
        // (c=1, phi=0.7): 1.2 > 0.5 * (2 + 0.2) = 1.1  =>  k = 1
        let mut ix = LevelIndex::new(10, 2);
        ix.reclass(0, 1.0, false, true, false, true);
        ix.phi_write(0, 0.0, 0.5);
        ix.elem_arrive(0, 0.1);
        ix.reclass(1, 1.0, false, true, false, true);
        ix.phi_write(1, 0.0, 0.7);
        assert_eq!(ix.find_rebuild_k(0.5, 2), Some(1));
    }

    #[test]
    fn zero_levels_wipes_phi_and_demotes_dead_tight_sets() {
        let mut ix = LevelIndex::new(10, 2);
        // a set at level 2, tight only through dead weight
        ix.reclass(2, 1.0, false, true, false, false);
        ix.phi_write(2, 0.0, 0.4);
        // a set at level 1, tight on plain weight
        ix.reclass(1, 0.5, false, true, false, true);
        ix.zero_levels(0, 2);
        assert_eq!(ix.phi[1] + ix.phi[2], 0.0);
        assert_eq!(ix.n_t[1] + ix.n_t[2], 0);
        // the weight-tight set survives at level 0, the dead one does not
        assert_eq!(ix.n_t[0], 1);
        assert_eq!(ix.cost_t[0], 0.5);
    }

    #[test]
    fn zeroing_outside_range_leaves_levels_alone() {
        let mut ix = LevelIndex::new(10, 2);
        ix.reclass(5, 0.7, false, true, false, true);
        ix.phi_write(5, 0.0, 0.2);
        ix.zero_levels(0, 2);
        assert_eq!(ix.n_t[5], 1);
        assert_eq!(ix.phi[5], 0.2);
        assert!(!ix.is_stale(0, 5) || ix.aux[5] == 0);
    }

    #[test]
    fn staleness_follows_the_clock() {
        let mut ix = LevelIndex::new(10, 2);
        // spec'd readings: tm=10 vs aux=3 fresh; tm=3 vs aux=10 stale
        ix.aux[4] = 3;
        assert!(!ix.is_stale(10, 4));
        ix.aux[4] = 10;
        assert!(ix.is_stale(3, 4));
        // freshly initialized: everything stale, i.e. level 0 / phi 0
        let ix2 = LevelIndex::new(10, 2);
        assert!(ix2.is_stale(0, 7));
    }

    #[test]
    fn occupancy_walk_skips_gaps() {
        let mut ix = LevelIndex::new(200, 2);
        ix.elem_arrive(120, 0.25);
        ix.reclass(77, 1.0, false, true, false, true);
        assert_eq!(ix.next_occupied_above(2), Some(77));
        assert_eq!(ix.next_occupied_above(77), Some(120));
        assert_eq!(ix.next_occupied_above(120), None);
        ix.elem_depart(120, 0.25);
        assert_eq!(ix.next_occupied_above(77), None);
    }
}
