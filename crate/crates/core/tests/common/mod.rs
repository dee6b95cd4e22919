#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mrv_core::dag::CreatorId;
use mrv_core::exporter::{EventLog, RunConfig};
use mrv_core::simulator::{generate, SimPlan, Strategy};

pub const SIZES_N: [u32; 3] = [4, 7, 10];
pub const SIZES_W: [u64; 3] = [2, 4, 8];

pub struct Instance {
    pub label: String,
    pub plan: SimPlan,
    pub log: EventLog,
}

impl Instance {
    pub fn config(&self) -> RunConfig {
        self.plan.config
    }

    pub fn vertex_count(&self) -> usize {
        self.log
            .events()
            .iter()
            .map(|e| match e {
                mrv_core::exporter::ExporterEvent::RoundCommitted { canonical, .. } => {
                    canonical.len()
                }
                _ => 0,
            })
            .sum()
    }
}

fn byzantine(n: u32, f: u32) -> Vec<CreatorId> {
    (n - f..n).map(CreatorId).collect()
}

/// Strategy mix for the `variant`-th plan of a parameter cell.
pub fn strategies(variant: u64, n: u32, f: u32) -> (BTreeMap<CreatorId, Strategy>, bool) {
    let bad = byzantine(n, f);
    let assign = |s: Strategy| bad.iter().map(|c| (*c, s.clone())).collect();
    match variant % 6 {
        0 => (BTreeMap::new(), false),
        1 => (BTreeMap::new(), true),
        2 => (assign(Strategy::WithholdRounds { probability: 0.3 }), true),
        3 => (
            assign(Strategy::SelectiveParents {
                favored: [CreatorId(0)].into_iter().collect(),
                shunned: [CreatorId(1)].into_iter().collect(),
            }),
            true,
        ),
        4 => (
            assign(Strategy::ConflictInjector {
                targets: vec![CreatorId(0), CreatorId(1)],
            }),
            false,
        ),
        _ => (
            assign(Strategy::ConflictInjector {
                targets: vec![CreatorId(1), CreatorId(2)],
            }),
            true,
        ),
    }
}

/// Seeded plans over n in {4, 7, 10}, f maximal, w_max in {2, 4, 8}; each log
/// stays within 200 vertices.
pub fn corpus(per_cell: u64) -> Vec<Instance> {
    let mut out = Vec::new();
    for n in SIZES_N {
        let f = RunConfig::max_faults(n);
        for w in SIZES_W {
            for variant in 0..per_cell {
                let seed = 1_000 * n as u64 + 100 * w + variant;
                let config = RunConfig::new(n, f, w, seed).unwrap();
                let wave = if n == 4 { 2 + variant % 3 } else { 2 };
                let rounds = ((200 / n as u64).saturating_sub(w)).min(16);
                let (strategies, thin) = strategies(variant, n, f);
                let plan = SimPlan {
                    config,
                    rounds,
                    wave_length: wave,
                    strategies,
                    seed,
                    thin_honest: thin,
                };
                let log = generate(&plan).unwrap();
                out.push(Instance {
                    label: format!("n{n}-w{w}-v{variant}"),
                    plan,
                    log,
                });
            }
        }
    }
    out
}

/// Dense honest creators plus f creators that reference the target creator's
/// vertices and avoid the rival creator's whenever a quorum allows.
pub struct AdversarialRun {
    pub instance: Instance,
    pub target: CreatorId,
    pub rival: CreatorId,
}

pub fn adversarial_corpus(count: u64) -> Vec<AdversarialRun> {
    (0..count)
        .map(|i| {
            let n = SIZES_N[(i % 3) as usize];
            let f = RunConfig::max_faults(n);
            let w = SIZES_W[((i / 3) % 3) as usize];
            let target = CreatorId((i % (n - f) as u64) as u32);
            let rival = CreatorId(((i + 1) % (n - f) as u64) as u32);
            let seed = 77_000 + i;
            let config = RunConfig::new(n, f, w, seed).unwrap();
            let strategy = Strategy::SelectiveParents {
                favored: BTreeSet::from([target]),
                shunned: BTreeSet::from([rival]),
            };
            let plan = SimPlan {
                config,
                rounds: 10,
                wave_length: 2,
                strategies: byzantine(n, f)
                    .into_iter()
                    .map(|c| (c, strategy.clone()))
                    .collect(),
                seed,
                thin_honest: false,
            };
            let log = generate(&plan).unwrap();
            AdversarialRun {
                instance: Instance {
                    label: format!("adv-n{n}-w{w}-{i}"),
                    plan,
                    log,
                },
                target,
                rival,
            }
        })
        .collect()
}
