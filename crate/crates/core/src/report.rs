//! Experiment records and the tables/charts built from them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::entropy::EntropyReport;
use crate::error::{Error, Result};
use crate::nn::{EpochStats, LayerKind, Network};
use crate::prune::IterationLog;
use crate::reduce::{FusionPlan, PlanStatus, Verification};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Train,
    Prune,
    Reduce,
    Scratch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerStates {
    pub layer_index: usize,
    pub n_neurons: usize,
    pub mixed: usize,
    pub always_off: usize,
    pub always_on: usize,
    pub mean_entropy: f64,
}

pub fn layer_states(report: &EntropyReport) -> Vec<LayerStates> {
    report
        .layers
        .iter()
        .map(|l| {
            let c = l.counts();
            LayerStates {
                layer_index: l.layer_index,
                n_neurons: l.states.len(),
                mixed: c.mixed,
                always_off: c.always_off,
                always_on: c.always_on,
                mean_entropy: l.mean_entropy,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub edits: usize,
    pub layers_removed: usize,
    pub layers_linearized: usize,
    pub considered_layers: usize,
    pub status: PlanStatus,
    pub verification: Option<Verification>,
    pub plan_hash: String,
}

impl From<&FusionPlan> for PlanSummary {
    fn from(p: &FusionPlan) -> Self {
        Self {
            edits: p.edits.len(),
            layers_removed: p.layers_removed_count,
            layers_linearized: p.layers_linearized_count,
            considered_layers: p.considered_layers,
            status: p.status,
            verification: p.verification,
            plan_hash: p.edits_hash(),
        }
    }
}

/// Everything one command learned, written next to its outputs.
///
/// `config` holds the configuration file text exactly as read.
/// `wall_clock_seconds` is the only field that varies between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRecord {
    pub stage: Stage,
    pub name: String,
    pub model: String,
    pub dataset: String,
    /// `dense`, `egp`, `vanilla` or `scratch`.
    pub mode: String,
    pub seed: u64,
    pub config: String,
    pub topology: Vec<String>,
    pub sparsity_pct: f64,
    #[serde(default)]
    pub train_history: Vec<EpochStats>,
    #[serde(default)]
    pub iterations: Vec<IterationLog>,
    #[serde(default)]
    pub entropy: Vec<LayerStates>,
    #[serde(default)]
    pub plan: Option<PlanSummary>,
    #[serde(default)]
    pub accuracy_before_reduction: Option<f64>,
    /// Test-split accuracy of the command's output network.
    pub top1: f64,
    pub wall_clock_seconds: f64,
}

impl ExperimentRecord {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("record serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// `k/L` with `k` fused layers and `L` ReLU layers, if a plan was applied.
    pub fn layers_removed(&self) -> Option<String> {
        self.plan
            .as_ref()
            .map(|p| format!("{}/{}", p.layers_removed, p.considered_layers))
    }
}

/// Architecture label such as `16-256-256-4` or `1x8x8-c4-10`.
pub fn model_label(net: &Network) -> String {
    let mut parts = vec![net
        .input_shape()
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")];
    for l in &net.layers {
        match l.kind {
            LayerKind::Dense => parts.push(l.out_shape[0].to_string()),
            LayerKind::Conv2d => parts.push(format!("c{}", l.out_shape[0])),
            LayerKind::Flatten => {}
        }
    }
    parts.join("-")
}

/// Report files produced from a set of records.
#[derive(Debug, Clone, PartialEq)]
pub struct Reports {
    pub results_csv: String,
    pub states_csv: String,
    pub states_svg: String,
    /// Present when some scratch record has an EGP counterpart.
    pub ablation_csv: Option<String>,
}

fn csv_string(rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// One results row per record.
pub fn results_table(records: &[ExperimentRecord]) -> Result<String> {
    let mut rows = vec![["model", "dataset", "sparsity", "mode", "layers_removed", "top1"]
        .map(String::from)
        .to_vec()];
    for r in records {
        rows.push(vec![
            r.model.clone(),
            r.dataset.clone(),
            format!("{}", r.sparsity_pct),
            r.mode.clone(),
            r.layers_removed().unwrap_or_default(),
            pct(r.top1),
        ]);
    }
    csv_string(rows)
}

fn record_label(i: usize, r: &ExperimentRecord) -> String {
    format!("{i}:{}:{}", r.name, r.mode)
}

/// Per-layer state counts of every record that carries an entropy report.
pub fn states_table(records: &[ExperimentRecord]) -> Result<String> {
    let mut rows = vec![[
        "record", "stage", "layer_index", "n_neurons", "mixed", "always_off", "always_on",
    ]
    .map(String::from)
    .to_vec()];
    for (i, r) in records.iter().enumerate() {
        for l in &r.entropy {
            rows.push(vec![
                record_label(i, r),
                serde_json::to_value(r.stage)?.as_str().unwrap_or_default().to_owned(),
                l.layer_index.to_string(),
                l.n_neurons.to_string(),
                l.mixed.to_string(),
                l.always_off.to_string(),
                l.always_on.to_string(),
            ]);
        }
    }
    csv_string(rows)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const STATE_COLORS: [(&str, &str); 3] = [
    ("mixed", "#4c72b0"),
    ("always_off", "#c44e52"),
    ("always_on", "#55a868"),
];

/// Stacked bars (mixed, always-OFF, always-ON) per layer, one panel per
/// record. Bar heights are fractions of the layer's neuron count.
pub fn states_svg(records: &[ExperimentRecord]) -> String {
    const BAR: usize = 24;
    const GAP: usize = 8;
    const PLOT_H: usize = 160;
    const TOP: usize = 40;
    const PANEL_GAP: usize = 40;
    let panels: Vec<(usize, &ExperimentRecord)> =
        records.iter().enumerate().filter(|(_, r)| !r.entropy.is_empty()).collect();
    let panel_w = |r: &ExperimentRecord| r.entropy.len() * (BAR + GAP) + GAP;
    let width = 40 + panels.iter().map(|(_, r)| panel_w(r) + PANEL_GAP).sum::<usize>().max(200);
    let height = TOP + PLOT_H + 60;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"  <rect width="{width}" height="{height}" fill="white"/>"#);
    for (k, (name, color)) in STATE_COLORS.iter().enumerate() {
        let x = 40 + k * 110;
        let _ = writeln!(s, r#"  <rect x="{x}" y="8" width="12" height="12" fill="{color}"/>"#);
        let _ = writeln!(
            s,
            r#"  <text x="{}" y="18" font-family="sans-serif" font-size="11">{name}</text>"#,
            x + 16
        );
    }
    let base_y = TOP + PLOT_H;
    let mut x0 = 40;
    for (i, r) in &panels {
        let _ = writeln!(s, r#"  <g>"#);
        for (j, l) in r.entropy.iter().enumerate() {
            let x = x0 + GAP + j * (BAR + GAP);
            let n = l.n_neurons.max(1) as f64;
            let mut y = base_y as f64;
            for ((name, color), count) in STATE_COLORS.iter().zip([l.mixed, l.always_off, l.always_on]) {
                let h = PLOT_H as f64 * count as f64 / n;
                y -= h;
                let _ = writeln!(
                    s,
                    r#"    <rect x="{x}" y="{y:.3}" width="{BAR}" height="{h:.3}" fill="{color}"><title>layer {} {name}: {count}</title></rect>"#,
                    l.layer_index
                );
            }
            let _ = writeln!(
                s,
                r#"    <text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">L{}</text>"#,
                x + BAR / 2,
                base_y + 14,
                l.layer_index
            );
        }
        let _ = writeln!(
            s,
            r#"    <text x="{x0}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            base_y + 34,
            xml_escape(&record_label(*i, r))
        );
        let _ = writeln!(s, r#"  </g>"#);
        x0 += panel_w(r) + PANEL_GAP;
    }
    s.push_str("</svg>\n");
    s
}

/// Pairs each scratch record with the reduced EGP record of the same name.
/// The two must share a topology.
pub fn ablation_table(records: &[ExperimentRecord]) -> Result<Option<String>> {
    let mut rows = vec![[
        "model", "dataset", "sparsity", "egp_top1", "scratch_top1", "egp_minus_scratch",
    ]
    .map(String::from)
    .to_vec()];
    for scratch in records.iter().filter(|r| r.stage == Stage::Scratch) {
        for egp in records
            .iter()
            .filter(|r| r.stage == Stage::Reduce && r.mode == "egp" && r.name == scratch.name)
        {
            if egp.topology != scratch.topology {
                return Err(Error::Report(format!(
                    "ablation pair '{}' has mismatched topologies: [{}] vs [{}]",
                    scratch.name,
                    egp.topology.join(", "),
                    scratch.topology.join(", ")
                )));
            }
            rows.push(vec![
                egp.model.clone(),
                egp.dataset.clone(),
                format!("{}", egp.sparsity_pct),
                pct(egp.top1),
                pct(scratch.top1),
                format!("{:.2}", 100.0 * (egp.top1 - scratch.top1)),
            ]);
        }
    }
    if rows.len() == 1 {
        return Ok(None);
    }
    csv_string(rows).map(Some)
}

pub fn build_reports(records: &[ExperimentRecord]) -> Result<Reports> {
    if records.is_empty() {
        return Err(Error::Report("no records given".into()));
    }
    Ok(Reports {
        results_csv: results_table(records)?,
        states_csv: states_table(records)?,
        states_svg: states_svg(records),
        ablation_csv: ablation_table(records)?,
    })
}
