//! Per-pass metrics and the JSON optimization report.

use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::interp;

/// One log entry per committed rewrite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleFire {
    pub rule: String,
    pub sweep: u32,
    pub fires: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PassReport {
    pub name: String,
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub bytes_before: u64,
    pub bytes_after: u64,
    pub mults_before: u64,
    pub mults_after: u64,
    pub rule_fires: Vec<RuleFire>,
    /// Set when a fixpoint driver stopped at its sweep limit.
    pub iteration_limit_hit: bool,
}

impl PassReport {
    pub fn begin(name: &str, g: &Graph) -> Self {
        let mults = interp::count_multiplications(g)
            .map(|s| s.total.mults)
            .unwrap_or(0);
        PassReport {
            name: name.to_string(),
            nodes_before: g.total_operator_count(),
            bytes_before: g.payload_bytes(),
            mults_before: mults,
            ..Default::default()
        }
    }

    pub fn finish(&mut self, g: &Graph) {
        self.nodes_after = g.total_operator_count();
        self.bytes_after = g.payload_bytes();
        self.mults_after = interp::count_multiplications(g)
            .map(|s| s.total.mults)
            .unwrap_or(0);
    }

    pub fn log_fire(&mut self, rule: &str, sweep: u32, fires: u32) {
        if fires > 0 {
            self.rule_fires.push(RuleFire {
                rule: rule.to_string(),
                sweep,
                fires,
            });
        }
    }

    pub fn total_fires(&self) -> u32 {
        self.rule_fires.iter().map(|f| f.fires).sum()
    }
}

/// Stable-key JSON over the whole pipeline, with byte totals and the
/// resulting compression ratio (1.0 for an empty pipeline).
pub fn emit_report(reports: &[PassReport]) -> String {
    let passes: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| {
            serde_json::json!({
                "name": r.name,
                "nodes_before": r.nodes_before,
                "nodes_after": r.nodes_after,
                "bytes_before": r.bytes_before,
                "bytes_after": r.bytes_after,
                "mults_before": r.mults_before,
                "mults_after": r.mults_after,
                "rule_fires": r.rule_fires,
                "iteration_limit_hit": r.iteration_limit_hit,
            })
        })
        .collect();
    let bytes_before = reports.first().map(|r| r.bytes_before).unwrap_or(0);
    let bytes_after = reports.last().map(|r| r.bytes_after).unwrap_or(0);
    let ratio = if bytes_after == 0 {
        1.0
    } else {
        bytes_before as f64 / bytes_after as f64
    };
    let doc = serde_json::json!({
        "passes": passes,
        "totals": {
            "bytes_before": bytes_before,
            "bytes_after": bytes_after,
            "compression_ratio": ratio,
        },
    });
    serde_json::to_string_pretty(&doc).expect("report json")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_pipeline_ratio_one() {
        let text = emit_report(&[]);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["totals"]["compression_ratio"], 1.0);
    }

    #[test]
    fn key_order_stable() {
        let r = PassReport {
            name: "x".into(),
            ..Default::default()
        };
        assert_eq!(emit_report(&[r.clone()]), emit_report(&[r]));
    }
}
