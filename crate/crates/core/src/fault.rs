//! Per-kind fault toggles for exercising each contract kind on purpose.

use crate::contracts::ContractKind;

/// Which faults are armed and how often periodic ones fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultPlan {
    mask: u16,
    /// Periodic faults fire on cycles `start`, `start + every`, ...
    pub every: u64,
    pub start: u64,
}

impl Default for FaultPlan {
    fn default() -> Self {
        Self::none()
    }
}

impl FaultPlan {
    pub const fn none() -> Self {
        FaultPlan { mask: 0, every: 100, start: 0 }
    }

    pub fn only(kind: ContractKind) -> Self {
        Self::none().with(kind)
    }

    pub fn with(mut self, kind: ContractKind) -> Self {
        self.mask |= kind.bit();
        self
    }

    pub fn every(mut self, every: u64) -> Self {
        self.every = every.max(1);
        self
    }

    pub fn starting_at(mut self, start: u64) -> Self {
        self.start = start;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }

    pub fn armed(&self, kind: ContractKind) -> bool {
        self.mask & kind.bit() != 0
    }

    pub fn kinds(&self) -> impl Iterator<Item = ContractKind> + '_ {
        ContractKind::ALL.into_iter().filter(|k| self.armed(*k))
    }

    /// True if `kind` is armed and `cycle` is one of its firing cycles.
    pub fn fires(&self, kind: ContractKind, cycle: u64) -> bool {
        self.armed(kind) && cycle >= self.start && (cycle - self.start) % self.every == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nothing_armed_by_default() {
        let p = FaultPlan::default();
        assert!(p.is_empty());
        assert!(ContractKind::ALL.iter().all(|k| !p.armed(*k)));
    }

    #[test]
    fn periodic_firing() {
        let p = FaultPlan::only(ContractKind::Jitter).every(10).starting_at(5);
        assert!(!p.fires(ContractKind::Jitter, 4));
        assert!(p.fires(ContractKind::Jitter, 5));
        assert!(!p.fires(ContractKind::Jitter, 6));
        assert!(p.fires(ContractKind::Jitter, 25));
        assert!(!p.fires(ContractKind::CycleTime, 5));
        assert_eq!(p.kinds().collect::<Vec<_>>(), vec![ContractKind::Jitter]);
    }
}
