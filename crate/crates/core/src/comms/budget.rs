//! Closed-form budget planning.
//!
//! Every message size is known before any payload exists, so the planner
//! decides up front which messages (and how many instance entries) fit.
//! Drop order when over budget:
//!
//! 1. broadcast entries, lowest heat first, across all links and scales;
//! 2. the completion count `K_IC`, uniformly on every link; at zero the
//!    heatmap shares serve no query and go too;
//! 3. voxel priors, last link first.
//!
//! Whatever slack the coarse steps leave is then refilled in reverse order.

use std::cmp::Reverse;

use crate::comms::{instance_message_len, query_message_len, DropRecord, MessageKind};
use crate::grid::AgentId;

/// Directed link `(sender, receiver)`.
pub type Link = (AgentId, AgentId);

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetInput {
    pub channels: usize,
    pub k_ic: usize,
    /// Voxel priors per directed link with their encoded size.
    pub voxel: Vec<(Link, u64)>,
    /// Heatmap shares per `(link, scale)` with their encoded size; each
    /// carries a query (receiver to sender) and a reply when `K_IC > 0`.
    pub heat: Vec<(Link, u8, u64)>,
    /// Broadcast candidates per `(link, scale)`, heat in descending order.
    pub broadcast: Vec<(Link, u8, Vec<f32>)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetPlan {
    pub voxel: Vec<bool>,
    pub heat: Vec<bool>,
    pub k_ic: usize,
    /// Leading entries kept of each broadcast candidate list.
    pub broadcast_keep: Vec<usize>,
}

impl BudgetInput {
    pub fn full_plan(&self) -> BudgetPlan {
        BudgetPlan {
            voxel: vec![true; self.voxel.len()],
            heat: vec![true; self.heat.len()],
            k_ic: self.k_ic,
            broadcast_keep: self.broadcast.iter().map(|b| b.2.len()).collect(),
        }
    }

    fn exchange_bytes(&self, k: usize) -> u64 {
        if k == 0 {
            0
        } else {
            (query_message_len(k) + instance_message_len(k, self.channels)) as u64
        }
    }

    fn broadcast_bytes(&self, n: usize) -> u64 {
        if n == 0 {
            0
        } else {
            instance_message_len(n, self.channels) as u64
        }
    }

    pub fn cost(&self, p: &BudgetPlan) -> u64 {
        let vox: u64 = self.voxel.iter().zip(&p.voxel).filter(|x| *x.1).map(|x| x.0 .1).sum();
        let heat: u64 = self
            .heat
            .iter()
            .zip(&p.heat)
            .filter(|x| *x.1)
            .map(|x| x.0 .2 + self.exchange_bytes(p.k_ic))
            .sum();
        let bc: u64 = p.broadcast_keep.iter().map(|&n| self.broadcast_bytes(n)).sum();
        vox + heat + bc
    }

    /// Bytes of plan `p` per message kind, in [`MessageKind::ALL`] order.
    pub fn cost_by_kind(&self, p: &BudgetPlan) -> [u64; 5] {
        let mut out = [0u64; 5];
        out[0] = self.voxel.iter().zip(&p.voxel).filter(|x| *x.1).map(|x| x.0 .1).sum();
        let shares = p.heat.iter().filter(|&&h| h).count() as u64;
        out[1] = self.heat.iter().zip(&p.heat).filter(|x| *x.1).map(|x| x.0 .2).sum();
        if p.k_ic > 0 {
            out[2] = shares * query_message_len(p.k_ic) as u64;
            out[3] = shares * instance_message_len(p.k_ic, self.channels) as u64;
        }
        out[4] = p.broadcast_keep.iter().map(|&n| self.broadcast_bytes(n)).sum();
        out
    }

    /// Fit the exchange under `budget`; returns the plan and what it dropped.
    pub fn plan(&self, budget: Option<u64>) -> (BudgetPlan, Vec<DropRecord>) {
        let full = self.full_plan();
        let Some(b) = budget else { return (full, Vec::new()) };
        if self.cost(&full) <= b {
            return (full, Vec::new());
        }
        let mut p = full.clone();

        let mut order: Vec<(usize, usize)> = self
            .broadcast
            .iter()
            .enumerate()
            .flat_map(|(m, x)| (0..x.2.len()).map(move |r| (m, r)))
            .collect();
        order.sort_by(|&(ma, ra), &(mb, rb)| {
            let (la, sa, ha) = (&self.broadcast[ma].0, self.broadcast[ma].1, self.broadcast[ma].2[ra]);
            let (lb, sb, hb) = (&self.broadcast[mb].0, self.broadcast[mb].1, self.broadcast[mb].2[rb]);
            ha.total_cmp(&hb)
                .then((Reverse(sa), Reverse(la), Reverse(ra)).cmp(&(Reverse(sb), Reverse(lb), Reverse(rb))))
        });
        let mut dropped = 0;
        let mut cost = self.cost(&p);
        for &(m, r) in &order {
            if cost <= b {
                break;
            }
            debug_assert_eq!(p.broadcast_keep[m], r + 1);
            let before = self.broadcast_bytes(p.broadcast_keep[m]);
            p.broadcast_keep[m] = r;
            cost = cost - before + self.broadcast_bytes(r);
            dropped += 1;
        }

        while cost > b && p.k_ic > 0 {
            p.k_ic -= 1;
            if p.k_ic == 0 {
                p.heat.iter_mut().for_each(|h| *h = false);
            }
            cost = self.cost(&p);
        }

        for i in (0..self.voxel.len()).rev() {
            if cost <= b {
                break;
            }
            p.voxel[i] = false;
            cost -= self.voxel[i].1;
        }

        // refill the slack left by the coarse steps
        if p.k_ic < full.k_ic {
            for k in (p.k_ic + 1..=full.k_ic).rev() {
                let q = BudgetPlan { k_ic: k, heat: full.heat.clone(), ..p.clone() };
                if self.cost(&q) <= b {
                    p = q;
                    break;
                }
            }
            cost = self.cost(&p);
        }
        for &(m, r) in order[..dropped].iter().rev() {
            let next = cost - self.broadcast_bytes(p.broadcast_keep[m]) + self.broadcast_bytes(r + 1);
            if next > b {
                break;
            }
            p.broadcast_keep[m] = r + 1;
            cost = next;
        }
        debug_assert!(self.cost(&p) <= b);
        let drops = self.diff(&full, &p);
        (p, drops)
    }

    fn diff(&self, full: &BudgetPlan, p: &BudgetPlan) -> Vec<DropRecord> {
        let mut out = Vec::new();
        for (i, &((s, r), bytes)) in self.voxel.iter().enumerate() {
            if !p.voxel[i] {
                out.push(DropRecord {
                    sender: s,
                    receiver: r,
                    kind: MessageKind::VoxelPrior,
                    scale: 0,
                    bytes,
                    reason: "budget: voxel prior dropped".into(),
                });
            }
        }
        for (i, &((s, r), scale, bytes)) in self.heat.iter().enumerate() {
            if !p.heat[i] {
                out.push(DropRecord {
                    sender: s,
                    receiver: r,
                    kind: MessageKind::HeatmapShare,
                    scale,
                    bytes,
                    reason: "budget: no completion queries left".into(),
                });
            }
            let k_now = if p.heat[i] { p.k_ic } else { 0 };
            if k_now < full.k_ic {
                let reason = format!("budget: K_IC {} -> {}", full.k_ic, k_now);
                let q = |k: usize| if k == 0 { 0 } else { query_message_len(k) as u64 };
                let rp = |k: usize| if k == 0 { 0 } else { instance_message_len(k, self.channels) as u64 };
                out.push(DropRecord {
                    sender: r,
                    receiver: s,
                    kind: MessageKind::InstanceQuery,
                    scale,
                    bytes: q(full.k_ic) - q(k_now),
                    reason: reason.clone(),
                });
                out.push(DropRecord {
                    sender: s,
                    receiver: r,
                    kind: MessageKind::InstanceReply,
                    scale,
                    bytes: rp(full.k_ic) - rp(k_now),
                    reason,
                });
            }
        }
        for (i, ((s, r), scale, heats)) in self.broadcast.iter().enumerate() {
            let keep = p.broadcast_keep[i];
            if keep < heats.len() {
                out.push(DropRecord {
                    sender: *s,
                    receiver: *r,
                    kind: MessageKind::InstanceBroadcast,
                    scale: *scale,
                    bytes: self.broadcast_bytes(heats.len()) - self.broadcast_bytes(keep),
                    reason: format!("budget: kept {keep} of {} instances, lowest heat dropped", heats.len()),
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comms::HEADER_LEN;

    fn input() -> BudgetInput {
        BudgetInput {
            channels: 4,
            k_ic: 3,
            voxel: vec![((0, 1), 500), ((1, 0), 500)],
            heat: vec![((0, 1), 0, 100), ((1, 0), 0, 100)],
            broadcast: vec![((0, 1), 0, vec![0.9, 0.5, 0.1]), ((1, 0), 0, vec![0.8, 0.3])],
        }
    }

    #[test]
    fn unlimited_keeps_everything() {
        let inp = input();
        let (p, d) = inp.plan(None);
        assert_eq!(p, inp.full_plan());
        assert!(d.is_empty());
        let entry = (8 + 16 + 4) as u64;
        let hdr = HEADER_LEN as u64;
        let expect = 1000 + 2 * (100 + (hdr + 24) + (hdr + 3 * entry)) + (hdr + 3 * entry) + (hdr + 2 * entry);
        assert_eq!(inp.cost(&p), expect);
    }

    #[test]
    fn lowest_heat_goes_first() {
        let inp = input();
        let full = inp.cost(&inp.full_plan());
        let (p, d) = inp.plan(Some(full - 1));
        assert_eq!(p.broadcast_keep, vec![2, 2]);
        assert_eq!(p.k_ic, 3);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, MessageKind::InstanceBroadcast);
    }

    #[test]
    fn budget_law_over_many_budgets() {
        let inp = input();
        let full = inp.cost(&inp.full_plan());
        for b in (0..=full + 10).step_by(7) {
            let (p, _) = inp.plan(Some(b));
            assert!(inp.cost(&p) <= b, "budget {b}");
        }
        let (p, d) = inp.plan(Some(0));
        assert_eq!(inp.cost(&p), 0);
        assert!(p.voxel.iter().all(|v| !v) && p.heat.iter().all(|h| !h) && p.k_ic == 0);
        assert!(!d.is_empty());
    }

    #[test]
    fn per_kind_costs_add_up() {
        let inp = input();
        for b in [None, Some(700), Some(1500)] {
            let (p, _) = inp.plan(b);
            assert_eq!(inp.cost_by_kind(&p).iter().sum::<u64>(), inp.cost(&p));
        }
        assert_eq!(MessageKind::ALL[0], MessageKind::VoxelPrior);
        assert_eq!(MessageKind::ALL[4], MessageKind::InstanceBroadcast);
    }

    #[test]
    fn slack_is_refilled() {
        let inp = input();
        // room for one voxel prior and a bit more
        let (p, _) = inp.plan(Some(700));
        assert_eq!(p.voxel, vec![true, false]);
        assert!(inp.cost(&p) <= 700);
        assert!(inp.cost(&p) > 500);
    }
}
