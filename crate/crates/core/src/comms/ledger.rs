use std::fmt::Write as _;

use serde::Serialize;

use crate::comms::MessageKind;
use crate::error::ParamError;
use crate::grid::AgentId;

/// `log2` of a byte count.
pub fn comm_volume(bytes: u64) -> Result<f64, ParamError> {
    if bytes == 0 {
        return Err(ParamError::ZeroBytes);
    }
    Ok((bytes as f64).log2())
}

/// Volume of a dense `h x w x c` float32 map.
pub fn dense_volume(h: u64, w: u64, c: u64) -> Result<f64, ParamError> {
    comm_volume(h * w * c * 32 / 8)
}

/// Percentage of bytes saved going from `baseline_log2` to `ours_log2`.
pub fn reduction_vs(baseline_log2: f64, ours_log2: f64) -> f64 {
    100.0 * (1.0 - (ours_log2 - baseline_log2).exp2())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub round: u8,
    pub sender: AgentId,
    pub receiver: AgentId,
    pub kind: MessageKind,
    pub scale: u8,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropRecord {
    pub sender: AgentId,
    pub receiver: AgentId,
    pub kind: MessageKind,
    pub scale: u8,
    /// Bytes the dropped item would have cost.
    pub bytes: u64,
    pub reason: String,
}

/// Byte-exact record of every delivered message plus the drops made to
/// respect the budget.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CommLedger {
    pub budget: Option<u64>,
    entries: Vec<LedgerEntry>,
    drops: Vec<DropRecord>,
}

impl CommLedger {
    pub fn new(budget: Option<u64>) -> Self {
        CommLedger { budget, entries: Vec::new(), drops: Vec::new() }
    }

    pub fn record(&mut self, e: LedgerEntry) {
        self.entries.push(e);
    }

    pub fn record_drop(&mut self, d: DropRecord) {
        self.drops.push(d);
    }

    /// Put entries in (round, sender, receiver, kind, scale) order.
    pub fn sort(&mut self) {
        self.entries
            .sort_by_key(|e| (e.round, e.sender, e.receiver, e.kind, e.scale));
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn drops(&self) -> &[DropRecord] {
        &self.drops
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.bytes).sum()
    }

    pub fn total_for(&self, kind: MessageKind) -> u64 {
        self.entries.iter().filter(|e| e.kind == kind).map(|e| e.bytes).sum()
    }

    /// Bytes received by `agent`.
    pub fn total_into(&self, agent: AgentId) -> u64 {
        self.entries.iter().filter(|e| e.receiver == agent).map(|e| e.bytes).sum()
    }

    pub fn volume(&self) -> Option<f64> {
        comm_volume(self.total()).ok()
    }

    pub fn within_budget(&self) -> bool {
        self.budget.is_none_or(|b| self.total() <= b)
    }

    /// Plain-text table: one row per message, then per-kind totals and drops.
    pub fn to_table(&self) -> String {
        let log2 = |b: u64| comm_volume(b).map(|v| format!("{v:.2}")).unwrap_or_else(|_| "-".into());
        let mut s = String::new();
        let _ = writeln!(s, "{:<9} {:<18} {:>5} {:>5} {:>10} {:>6}", "link", "kind", "round", "scale", "bytes", "log2");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{:<9} {:<18} {:>5} {:>5} {:>10} {:>6}",
                format!("{}->{}", e.sender, e.receiver),
                e.kind.name(),
                e.round,
                e.scale,
                e.bytes,
                log2(e.bytes)
            );
        }
        let _ = writeln!(s);
        for k in MessageKind::ALL {
            let b = self.total_for(k);
            let _ = writeln!(s, "total {:<18} {:>10} {:>6}", k.name(), b, log2(b));
        }
        let _ = writeln!(s, "total {:<18} {:>10} {:>6}", "all", self.total(), log2(self.total()));
        match self.budget {
            Some(b) => {
                let _ = writeln!(s, "budget {b}");
            }
            None => {
                let _ = writeln!(s, "budget unlimited");
            }
        }
        for d in &self.drops {
            let _ = writeln!(
                s,
                "dropped {}->{} {} scale {} ({} bytes): {}",
                d.sender,
                d.receiver,
                d.kind.name(),
                d.scale,
                d.bytes,
                d.reason
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_map_volume() {
        assert!((dense_volume(256, 256, 64).unwrap() - 24.0).abs() < 1e-12);
        assert_eq!(comm_volume(8).unwrap(), 3.0);
        assert!((comm_volume(5120).unwrap() - 12.32).abs() < 0.005);
        assert_eq!(comm_volume(0), Err(ParamError::ZeroBytes));
    }

    #[test]
    fn volume_is_monotone() {
        let mut prev = comm_volume(1).unwrap();
        for b in 2..5000u64 {
            let v = comm_volume(b).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn reduction_examples() {
        assert_eq!(reduction_vs(24.0, 24.0), 0.0);
        assert!((reduction_vs(24.0, 23.0) - 50.0).abs() < 1e-12);
        let r = reduction_vs(23.18, 20.16);
        assert!((r - 87.68).abs() < 0.05, "{r}");
        assert!((r - 87.98).abs() < 1.0);
    }

    #[test]
    fn totals_and_table() {
        let mut l = CommLedger::new(Some(100));
        l.record(LedgerEntry { round: 2, sender: 1, receiver: 0, kind: MessageKind::HeatmapShare, scale: 0, bytes: 40 });
        l.record(LedgerEntry { round: 1, sender: 0, receiver: 1, kind: MessageKind::VoxelPrior, scale: 0, bytes: 24 });
        l.sort();
        assert_eq!(l.entries()[0].kind, MessageKind::VoxelPrior);
        assert_eq!(l.total(), 64);
        assert_eq!(l.total_into(0), 40);
        assert!(l.within_budget());
        let t = l.to_table();
        assert!(t.contains("1->0"));
        assert!(t.contains("total all                        64   6.00"));
    }
}
