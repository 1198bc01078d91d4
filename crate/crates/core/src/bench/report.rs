use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::{BenchReport, BenchResults};
use crate::error::{Error, Result};
use crate::reliability::Statistic;

pub const REPORT_SCHEMA_VERSION: &str = "1.0";

/// JSON Schema every emitted `report.json` conforms to.
pub const REPORT_SCHEMA: &str = r##"{
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "benchmark report",
  "type": "object",
  "required": ["provenance", "gates", "results", "diagnostics"],
  "properties": {
    "provenance": {
      "type": "object",
      "required": ["benchmark", "config_hash", "schema_version", "report_schema_version",
                   "tool_version", "seeds", "layout_id", "dataset_versions", "run_timestamp"],
      "properties": {
        "benchmark": {"enum": ["B1", "B2", "B3"]},
        "benchmark_id": {"type": ["string", "null"]},
        "config_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "schema_version": {"type": "string"},
        "report_schema_version": {"const": "1.0"},
        "tool_version": {"type": "string"},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "layout_id": {"type": "string"},
        "dataset_versions": {"type": "object", "additionalProperties": {"type": "string"}},
        "shards": {"type": "object"},
        "settings": {"type": "object", "additionalProperties": {"type": "string"}},
        "run_timestamp": {"type": "string"}
      }
    },
    "gates": {
      "type": "array",
      "items": {
        "type": "object",
        "required": ["gate", "scope", "passed", "reason"],
        "properties": {
          "gate": {"enum": ["GATE_NO_QRELS", "GATE_NO_SESSION_STRUCTURE"]},
          "scope": {"type": "string"},
          "passed": {"type": "boolean"},
          "reason": {"type": "string"}
        }
      }
    },
    "results": {
      "type": "object",
      "oneOf": [
        {"required": ["b1"], "properties": {"b1": {"type": "array", "items": {"$ref": "#/$defs/b1cell"}}}},
        {"required": ["b2", "summary"], "properties": {"b2": {"type": "array", "items": {"$ref": "#/$defs/b2cell"}}}},
        {"required": ["b3", "correlations"], "properties": {"b3": {"type": "array", "items": {"$ref": "#/$defs/b3record"}}}}
      ]
    },
    "diagnostics": {"type": "object"}
  },
  "$defs": {
    "metric": {
      "type": "object",
      "required": ["value"],
      "properties": {
        "value": {"type": "number"},
        "ci": {"type": ["array", "null"], "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
      }
    },
    "b1cell": {
      "type": "object",
      "required": ["dataset", "simulator", "seed", "report"],
      "properties": {
        "report": {
          "type": "object",
          "required": ["layout_id", "config_hash", "metrics", "inapplicable", "diagnostics"],
          "properties": {
            "metrics": {"type": "object", "additionalProperties": {"$ref": "#/$defs/metric"}},
            "diagnostics": {"type": "object", "additionalProperties": {"$ref": "#/$defs/metric"}},
            "inapplicable": {"type": "object", "additionalProperties": {"type": "string"}}
          }
        }
      }
    },
    "b2cell": {
      "type": "object",
      "required": ["dataset", "seed", "systems", "trusted_means", "testers", "rate"],
      "properties": {
        "rate": {"type": "object", "required": ["weights", "consensus_ranking", "iterations", "converged"]}
      }
    },
    "b3record": {
      "type": "object",
      "required": ["dataset", "simulator", "seed", "tau", "metrics"],
      "properties": {
        "tau": {"type": ["number", "null"]},
        "metrics": {"type": "object", "additionalProperties": {"type": "number"}}
      }
    }
  }
}"##;

/// Check a report value against [`REPORT_SCHEMA`].
pub fn validate_report(report: &Value) -> Result<()> {
    let schema: Value = serde_json::from_str(REPORT_SCHEMA)?;
    let validator = jsonschema::validator_for(&schema).map_err(|e| Error::ReportSchema(e.to_string()))?;
    let errors: Vec<String> = validator
        .iter_errors(report)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Error::ReportSchema(errors.join("; ")))
    }
}

/// A flat table emitted as CSV (or TSV for plot data).
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub tsv: bool,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            tsv: false,
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}.{}", self.name, if self.tsv { "tsv" } else { "csv" })
    }

    fn write(&self, path: &Path, config_hash: &str) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        writeln!(w, "# config_hash={config_hash}").map_err(|e| Error::io(path, e))?;
        let mut cw = csv::WriterBuilder::new()
            .delimiter(if self.tsv { b'\t' } else { b',' })
            .from_writer(w);
        cw.write_record(&self.header)?;
        for r in &self.rows {
            cw.write_record(r)?;
        }
        cw.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        "NA".into()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "NA".into())
}

impl BenchReport {
    /// The CSV/TSV tables derived from the results.
    pub fn tables(&self) -> Vec<Table> {
        match &self.results {
            BenchResults::B1(r) => {
                let mut ids: Vec<&String> = r.b1.iter().flat_map(|c| c.report.metrics.keys()).collect();
                ids.sort();
                ids.dedup();
                let mut head = vec!["dataset", "simulator", "seed"];
                head.extend(ids.iter().map(|s| s.as_str()));
                let mut realism = Table::new("b1_realism", &head);
                let mut ci = Table::new("b1_realism_ci", &["dataset", "simulator", "seed", "metric", "value", "lo", "hi", "flags"]);
                let mut audit = Table::new(
                    "b1_audit",
                    &["dataset", "simulator", "seed", "auc_main", "auc_metadata", "auc_structural", "auc_masked", "auc_permutation", "verdict"],
                );
                for c in &r.b1 {
                    let mut row = vec![c.dataset.clone(), c.simulator.clone(), c.seed.to_string()];
                    row.extend(ids.iter().map(|id| opt(c.report.metrics.get(*id).map(|m| m.value))));
                    realism.rows.push(row);
                    for (id, m) in &c.report.metrics {
                        ci.rows.push(vec![
                            c.dataset.clone(),
                            c.simulator.clone(),
                            c.seed.to_string(),
                            id.clone(),
                            num(m.value),
                            opt(m.ci.map(|x| x.0)),
                            opt(m.ci.map(|x| x.1)),
                            m.flags.join("|"),
                        ]);
                    }
                    if let Some(a) = &c.report.audit {
                        audit.rows.push(vec![
                            c.dataset.clone(),
                            c.simulator.clone(),
                            c.seed.to_string(),
                            num(a.auc_main),
                            num(a.auc_metadata),
                            num(a.auc_structural),
                            num(a.auc_masked),
                            num(a.auc_permutation),
                            serde_json::to_value(a.verdict).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                        ]);
                    }
                }
                vec![realism, ci, audit]
            }
            BenchResults::B2(r) => {
                let mut head = vec!["dataset", "seed", "tester"];
                for s in Statistic::ALL {
                    head.push(s.id());
                }
                head.extend(["tau_lo", "tau_hi"]);
                let mut agree = Table::new("b2_agreement", &head);
                let mut weights = Table::new("b2_rate_weights", &["dataset", "seed", "tester", "weight", "iterations", "converged"]);
                let mut summary = Table::new("b2_summary", &["dataset", "tester", "mean_kendall_tau", "mean_rate_weight", "seeds"]);
                for c in &r.b2 {
                    for (id, t) in &c.testers {
                        let mut row = vec![c.dataset.clone(), c.seed.to_string(), id.clone()];
                        match &t.agreement {
                            Some(a) => {
                                row.extend([a.kendall_tau, a.spearman_rho, a.pearson_r, a.tau_ap, a.pairwise_concordance].map(num));
                                let ci = a.ci95.get(&Statistic::KendallTau);
                                row.push(opt(ci.map(|c| c.lo)));
                                row.push(opt(ci.map(|c| c.hi)));
                            }
                            None => row.extend(std::iter::repeat_n("NA".to_string(), Statistic::ALL.len() + 2)),
                        }
                        agree.rows.push(row);
                    }
                    for (id, w) in &c.rate.weights {
                        weights.rows.push(vec![
                            c.dataset.clone(),
                            c.seed.to_string(),
                            id.clone(),
                            num(*w),
                            c.rate.iterations.to_string(),
                            c.rate.converged.to_string(),
                        ]);
                    }
                }
                for (d, m) in &r.summary {
                    for (id, s) in m {
                        summary.rows.push(vec![
                            d.clone(),
                            id.clone(),
                            opt(s.mean_kendall_tau),
                            opt(s.mean_rate_weight),
                            s.seeds.to_string(),
                        ]);
                    }
                }
                vec![agree, weights, summary]
            }
            BenchResults::B3(r) => {
                let mut corr = Table::new("b3_correlations", &["metric", "scope", "r", "p", "n", "flags"]);
                let mut scatter = Table::new("b3_scatter", &["metric", "value", "tau", "dataset", "simulator", "seed"]);
                scatter.tsv = true;
                for (m, c) in &r.correlations {
                    corr.rows.push(vec![
                        m.clone(),
                        "pooled".into(),
                        opt(c.pooled.map(|x| x.r)),
                        opt(c.pooled.map(|x| x.p)),
                        c.pooled.map(|x| x.n.to_string()).unwrap_or_else(|| "0".into()),
                        c.flags.join("|"),
                    ]);
                    for (d, x) in &c.per_dataset {
                        corr.rows.push(vec![
                            m.clone(),
                            d.clone(),
                            opt(x.map(|x| x.r)),
                            opt(x.map(|x| x.p)),
                            x.map(|x| x.n.to_string()).unwrap_or_else(|| "0".into()),
                            String::new(),
                        ]);
                    }
                }
                for rec in &r.b3 {
                    for (m, v) in &rec.metrics {
                        scatter.rows.push(vec![
                            m.clone(),
                            num(*v),
                            opt(rec.tau),
                            rec.dataset.clone(),
                            rec.simulator.clone(),
                            rec.seed.to_string(),
                        ]);
                    }
                }
                vec![corr, scatter]
            }
        }
    }
}

/// Write `report.json` plus derived tables into `dir`; returns the files written.
pub fn emit_report(report: &BenchReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let value = serde_json::to_value(report)?;
    validate_report(&value)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hash = &report.provenance.config_hash;

    let mut written = Vec::new();
    let path = dir.join("report.json");
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &value)?;
    written.push(path);
    for t in report.tables() {
        let path = dir.join(t.file_name());
        t.write(&path, hash)?;
        written.push(path);
    }
    Ok(written)
}
