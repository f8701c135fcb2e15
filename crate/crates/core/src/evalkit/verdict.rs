//! Seed-majority votes over result tables.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ablation::{Arm, ArmResult, CrossDomainResult, CrossDomainVariant};
use super::harness::{LeeRow, RetrievalReport, SweepResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Votes {
    pub agree: usize,
    pub total: usize,
}

impl Votes {
    fn count<K>(per_seed: BTreeMap<K, bool>) -> Self {
        Votes { agree: per_seed.values().filter(|&&ok| ok).count(), total: per_seed.len() }
    }

    /// At least `need` of 10 seeds, scaled to the seeds present.
    pub fn passes(&self, need_of_ten: usize) -> bool {
        self.total > 0 && self.agree * 10 >= need_of_ten * self.total
    }
}

impl fmt::Display for Votes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.agree, self.total)
    }
}

/// Row-ordering checks of the transfer ablation, each voted per seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmVotes {
    pub full_over_sum_dual: Votes,
    pub sum_dual_over_baseline: Votes,
    pub sum_same_under_baseline: Votes,
    pub aggregation_helps: Votes,
    /// All four on the same seed.
    pub all: Votes,
}

pub fn arm_votes(rows: &[ArmResult]) -> ArmVotes {
    let mut by_seed: BTreeMap<u64, BTreeMap<Arm, f64>> = BTreeMap::new();
    for r in rows {
        by_seed.entry(r.seed).or_default().insert(r.arm, r.auc);
    }
    let check = |f: &dyn Fn(&BTreeMap<Arm, f64>) -> Option<bool>| {
        Votes::count(by_seed.iter().map(|(s, m)| (*s, f(m).unwrap_or(false))).collect())
    };
    let gt = |m: &BTreeMap<Arm, f64>, a: Arm, b: Arm| Some(m.get(&a)? > m.get(&b)?);
    let conds: [&dyn Fn(&BTreeMap<Arm, f64>) -> Option<bool>; 4] = [
        &|m| gt(m, Arm::Lfm4ads, Arm::SumDualBranch),
        &|m| gt(m, Arm::SumDualBranch, Arm::Baseline),
        &|m| gt(m, Arm::Baseline, Arm::SumSameBranch),
        &|m| gt(m, Arm::Lfm4ads, Arm::Lfm4adsNoAgg),
    ];
    ArmVotes {
        full_over_sum_dual: check(conds[0]),
        sum_dual_over_baseline: check(conds[1]),
        sum_same_under_baseline: check(conds[2]),
        aggregation_helps: check(conds[3]),
        all: check(&|m| Some(conds.iter().all(|c| c(m) == Some(true)))),
    }
}

/// Best DNN-tap lift at least the best cross-tap lift and the best
/// embedding-concat lift.
pub fn sweep_votes(rows: &[SweepResult]) -> Votes {
    let mut best: BTreeMap<u64, BTreeMap<&str, f64>> = BTreeMap::new();
    for r in rows {
        let family = r.tap.split('/').next().unwrap_or("");
        let slot = best.entry(r.seed).or_default().entry(family).or_insert(f64::NEG_INFINITY);
        *slot = slot.max(r.auc_lift);
    }
    Votes::count(
        best.into_iter()
            .map(|(s, m)| {
                let get = |k: &str| m.get(k).copied();
                let ok = match (get("dnn"), get("cross"), get("embed_concat")) {
                    (Some(d), Some(c), Some(e)) => d >= c && d >= e,
                    _ => false,
                };
                (s, ok)
            })
            .collect(),
    )
}

/// Strictly increasing AUC along baseline, content-only, ads-only, combined.
pub fn cross_domain_votes(rows: &[CrossDomainResult]) -> Votes {
    let mut by_seed: BTreeMap<u64, BTreeMap<CrossDomainVariant, f64>> = BTreeMap::new();
    for r in rows {
        by_seed.entry(r.seed).or_default().insert(r.variant, r.auc);
    }
    Votes::count(
        by_seed
            .into_iter()
            .map(|(s, m)| {
                let seq: Option<Vec<f64>> = CrossDomainVariant::ALL.iter().map(|v| m.get(v).copied()).collect();
                (s, seq.is_some_and(|v| v.windows(2).all(|w| w[0] < w[1])))
            })
            .collect(),
    )
}

/// Proxy and full evaluation pick the same best and the same worst variant.
pub fn lee_votes(rows: &[LeeRow]) -> Votes {
    let mut by_seed: BTreeMap<u64, Vec<&LeeRow>> = BTreeMap::new();
    for r in rows {
        by_seed.entry(r.seed).or_default().push(r);
    }
    let arg = |rs: &[&LeeRow], key: fn(&LeeRow) -> f64, max: bool| {
        let cmp = |a: &&&LeeRow, b: &&&LeeRow| key(a).total_cmp(&key(b));
        if max { rs.iter().max_by(cmp) } else { rs.iter().min_by(cmp) }.map(|r| r.variant)
    };
    Votes::count(
        by_seed
            .into_iter()
            .map(|(s, rs)| {
                let ok = rs.len() >= 2
                    && arg(&rs, |r| r.proxy_auc, true) == arg(&rs, |r| r.full_auc, true)
                    && arg(&rs, |r| r.proxy_auc, false) == arg(&rs, |r| r.full_auc, false);
                (s, ok)
            })
            .collect(),
    )
}

/// Trained recall above `multiple ×` chance.
pub fn retrieval_votes(rows: &[RetrievalReport], multiple: f64) -> Votes {
    Votes::count(rows.iter().filter(|r| r.trained).map(|r| (r.seed, r.recall > multiple * r.chance)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arm_rows(seed: u64, aucs: [f64; 6]) -> Vec<ArmResult> {
        Arm::ALL.iter().zip(aucs).map(|(&arm, auc)| ArmResult { seed, arm, auc, freezes: 0 }).collect()
    }

    #[test]
    fn arm_votes_check_each_ordering() {
        // baseline, sum_same, sum_dual, linear, no_agg, full
        let mut rows = arm_rows(0, [0.70, 0.69, 0.71, 0.72, 0.715, 0.73]);
        rows.extend(arm_rows(1, [0.70, 0.71, 0.71, 0.72, 0.74, 0.73]));
        let v = arm_votes(&rows);
        assert_eq!(v.full_over_sum_dual, Votes { agree: 2, total: 2 });
        assert_eq!(v.sum_same_under_baseline, Votes { agree: 1, total: 2 });
        assert_eq!(v.aggregation_helps, Votes { agree: 1, total: 2 });
        assert_eq!(v.all, Votes { agree: 1, total: 2 });
    }

    #[test]
    fn majority_threshold_scales_with_seed_count() {
        assert!(Votes { agree: 8, total: 10 }.passes(8));
        assert!(!Votes { agree: 7, total: 10 }.passes(8));
        assert!(Votes { agree: 4, total: 5 }.passes(8));
        assert!(!Votes { agree: 2, total: 3 }.passes(8));
        assert!(!Votes { agree: 0, total: 0 }.passes(0));
    }

    #[test]
    fn sweep_votes_compare_tap_families() {
        let row = |seed, tap: &str, lift| SweepResult { seed, tap: tap.into(), output_dim: 16, auc: 0.7, auc_lift: lift };
        let rows = vec![
            row(0, "embed_concat", 0.01),
            row(0, "cross/0", 0.02),
            row(0, "dnn/0", 0.03),
            row(1, "embed_concat", 0.05),
            row(1, "cross/1", 0.02),
            row(1, "dnn/1", 0.03),
        ];
        assert_eq!(sweep_votes(&rows), Votes { agree: 1, total: 2 });
    }
}
