//! Monomorphic per-call-site inline caches.
//!
//! A slot remembers the first callee observed at its site. Compiled code for
//! that callee is looked up lazily, so a slot may be cached before its target
//! has been compiled.

use std::collections::HashMap;

use serde::Serialize;

use crate::value::MethodId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CallSite {
    pub method: MethodId,
    pub pc: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheState {
    Empty,
    Cached(MethodId),
}

#[derive(Debug, Clone)]
pub struct InlineCacheSlot {
    pub site: CallSite,
    pub state: CacheState,
    /// Recorder hits: `record_type` saw the cached callee again.
    pub hits: u64,
    /// Recorder misses: `record_type` saw a different callee.
    pub misses: u64,
    /// Calls that took the guarded direct path.
    pub direct: u64,
    /// Calls that took the dynamically resolved path.
    pub indirect: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SiteStats {
    pub site: String,
    pub hits: u64,
    pub misses: u64,
    pub direct: u64,
    pub indirect: u64,
}

#[derive(Debug, Clone, Default)]
pub struct InlineCacheStore {
    slots: Vec<InlineCacheSlot>,
    by_site: HashMap<CallSite, usize>,
}

impl InlineCacheStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// The slot index for `site`, creating an empty slot on first use.
    pub fn slot_for(&mut self, site: CallSite) -> usize {
        if let Some(&i) = self.by_site.get(&site) {
            return i;
        }
        let i = self.slots.len();
        self.slots.push(InlineCacheSlot {
            site,
            state: CacheState::Empty,
            hits: 0,
            misses: 0,
            direct: 0,
            indirect: 0,
        });
        self.by_site.insert(site, i);
        i
    }

    pub fn lookup(&self, site: CallSite) -> Option<usize> {
        self.by_site.get(&site).copied()
    }

    pub fn slot(&self, i: usize) -> &InlineCacheSlot {
        &self.slots[i]
    }

    pub fn slot_mut(&mut self, i: usize) -> &mut InlineCacheSlot {
        &mut self.slots[i]
    }

    pub fn slots(&self) -> &[InlineCacheSlot] {
        &self.slots
    }

    /// Records the callee observed on a slow-path call. The first callee
    /// wins; later different callees only count as misses.
    pub fn record_type(&mut self, slot: usize, callee: MethodId) {
        let s = &mut self.slots[slot];
        match s.state {
            CacheState::Empty => s.state = CacheState::Cached(callee),
            CacheState::Cached(expected) if expected == callee => s.hits += 1,
            CacheState::Cached(_) => s.misses += 1,
        }
    }

    #[inline]
    pub fn check_type(&self, slot: usize, callee: MethodId) -> bool {
        self.slots[slot].state == CacheState::Cached(callee)
    }

    pub fn stats(&self, method_name: impl Fn(MethodId) -> String) -> Vec<SiteStats> {
        let mut out: Vec<SiteStats> = self
            .slots
            .iter()
            .map(|s| SiteStats {
                site: format!("{}@{}", method_name(s.site.method), s.site.pc),
                hits: s.hits,
                misses: s.misses,
                direct: s.direct,
                indirect: s.indirect,
            })
            .collect();
        out.sort_by(|a, b| a.site.cmp(&b.site));
        out
    }
}
