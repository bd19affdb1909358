//! Report serialization and aggregation: the scheme x architecture x task
//! accuracy grid, confusion-matrix CSV blocks, personalization pre/post
//! statistics, and a scriptable plot-description file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalReport;

pub const RUN_CSV_HEADER: &str = "scheme,architecture,task,split,n,accuracy,mean_abs_bin_distance";
pub const PERSONALIZATION_CSV_HEADER: &str = "subject_id,scheme,architecture,task,pre_accuracy,\
post_accuracy,orig_test_pre_accuracy,orig_test_post_accuracy";

/// One grid row of the accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub scheme: String,
    pub architecture: String,
    pub task: String,
    pub split: String,
    pub n: usize,
    pub accuracy: f64,
    pub mean_abs_bin_distance: f64,
}

impl RunRow {
    pub fn from_report(report: &EvalReport) -> Self {
        RunRow {
            scheme: report.scheme.clone(),
            architecture: report.architecture.clone(),
            task: report.task.clone(),
            split: report.split.clone(),
            n: report.n_samples,
            accuracy: report.accuracy,
            mean_abs_bin_distance: report.mean_abs_bin_distance,
        }
    }

    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6}",
            self.scheme,
            self.architecture,
            self.task,
            self.split,
            self.n,
            self.accuracy,
            self.mean_abs_bin_distance
        )
    }

    pub fn parse_csv(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Format {
                offset: 0,
                message: format!("run row needs 7 fields, got {}: {line}", fields.len()),
            });
        }
        Ok(RunRow {
            scheme: fields[0].to_string(),
            architecture: fields[1].to_string(),
            task: fields[2].to_string(),
            split: fields[3].to_string(),
            n: fields[4]
                .parse()
                .map_err(|e| Error::Format { offset: 0, message: format!("bad n: {e}") })?,
            accuracy: fields[5]
                .parse()
                .map_err(|e| Error::Format { offset: 0, message: format!("bad accuracy: {e}") })?,
            mean_abs_bin_distance: fields[6].parse().map_err(|e| Error::Format {
                offset: 0,
                message: format!("bad bin distance: {e}"),
            })?,
        })
    }
}

/// Per-subject personalization outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizationRow {
    pub subject_id: u32,
    pub scheme: String,
    pub architecture: String,
    pub task: String,
    /// Accuracy of the pretrained model on the subject's held-out test half.
    pub pre_accuracy: f64,
    /// Accuracy of the personalized model on the same test half.
    pub post_accuracy: f64,
    /// Accuracy of the pretrained model on the original test split.
    pub orig_test_pre_accuracy: f64,
    /// Accuracy of the personalized model on the original test split
    /// (generalization retention).
    pub orig_test_post_accuracy: f64,
}

impl PersonalizationRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            self.subject_id,
            self.scheme,
            self.architecture,
            self.task,
            self.pre_accuracy,
            self.post_accuracy,
            self.orig_test_pre_accuracy,
            self.orig_test_post_accuracy
        )
    }

    pub fn parse_csv(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Format {
                offset: 0,
                message: format!("personalization row needs 8 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|e| Error::Format {
                offset: 0,
                message: format!("bad float '{s}': {e}"),
            })
        };
        Ok(PersonalizationRow {
            subject_id: fields[0].parse().map_err(|e| Error::Format {
                offset: 0,
                message: format!("bad subject id: {e}"),
            })?,
            scheme: fields[1].to_string(),
            architecture: fields[2].to_string(),
            task: fields[3].to_string(),
            pre_accuracy: parse_f(fields[4])?,
            post_accuracy: parse_f(fields[5])?,
            orig_test_pre_accuracy: parse_f(fields[6])?,
            orig_test_post_accuracy: parse_f(fields[7])?,
        })
    }
}

/// Mean/std of pre/post accuracy over a group of personalization rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub scheme: String,
    /// None for cross-architecture averages.
    pub architecture: Option<String>,
    pub task: String,
    pub n: usize,
    pub pre_mean: f64,
    pub pre_std: f64,
    pub post_mean: f64,
    pub post_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregated summary: grid rows, per-subject rows, group statistics and
/// cross-architecture run averages.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub runs: Vec<RunRow>,
    pub personalization: Vec<PersonalizationRow>,
    pub by_scheme_architecture: Vec<GroupStats>,
    pub by_scheme: Vec<GroupStats>,
    /// Run accuracies averaged over architectures per (scheme, task, split).
    pub run_scheme_means: Vec<(String, String, String, usize, f64, f64)>,
}

/// Aggregates evaluation rows and personalization outcomes.
///
/// Every scheme name must map to a single bin structure across the input;
/// mixed definitions under one name are rejected.
pub fn aggregate_report(
    reports: &[EvalReport],
    personalization: &[PersonalizationRow],
) -> Result<Summary> {
    if reports.is_empty() && personalization.is_empty() {
        return Err(Error::Config("nothing to aggregate".into()));
    }
    let mut scheme_bins: BTreeMap<String, usize> = BTreeMap::new();
    for r in reports {
        let bins = r.confusion_raw.len();
        if let Some(&known) = scheme_bins.get(&r.scheme) {
            if known != bins {
                return Err(Error::Shape(format!(
                    "scheme '{}' appears with both {known} and {bins} bins",
                    r.scheme
                )));
            }
        } else {
            scheme_bins.insert(r.scheme.clone(), bins);
        }
    }

    let runs: Vec<RunRow> = reports.iter().map(RunRow::from_report).collect();
    aggregate_rows(&runs, personalization)
}

/// Row-level aggregation, usable on rows parsed back from CSV files.
pub fn aggregate_rows(
    runs: &[RunRow],
    personalization: &[PersonalizationRow],
) -> Result<Summary> {
    if runs.is_empty() && personalization.is_empty() {
        return Err(Error::Config("nothing to aggregate".into()));
    }
    let mut runs = runs.to_vec();
    runs.sort_by(|a, b| {
        (&a.scheme, &a.architecture, &a.task, &a.split).cmp(&(
            &b.scheme,
            &b.architecture,
            &b.task,
            &b.split,
        ))
    });

    let mut personalization = personalization.to_vec();
    personalization.sort_by(|a, b| {
        (&a.scheme, &a.architecture, &a.task, a.subject_id).cmp(&(
            &b.scheme,
            &b.architecture,
            &b.task,
            b.subject_id,
        ))
    });

    let mut by_arch: BTreeMap<(String, String, String), Vec<&PersonalizationRow>> = BTreeMap::new();
    let mut by_scheme_key: BTreeMap<(String, String), Vec<&PersonalizationRow>> = BTreeMap::new();
    for row in &personalization {
        by_arch
            .entry((row.scheme.clone(), row.architecture.clone(), row.task.clone()))
            .or_default()
            .push(row);
        by_scheme_key
            .entry((row.scheme.clone(), row.task.clone()))
            .or_default()
            .push(row);
    }

    let group_stats = |rows: &[&PersonalizationRow],
                       scheme: &str,
                       architecture: Option<String>,
                       task: &str| {
        let pre: Vec<f64> = rows.iter().map(|r| r.pre_accuracy).collect();
        let post: Vec<f64> = rows.iter().map(|r| r.post_accuracy).collect();
        let (pre_mean, pre_std) = mean_std(&pre);
        let (post_mean, post_std) = mean_std(&post);
        GroupStats {
            scheme: scheme.to_string(),
            architecture,
            task: task.to_string(),
            n: rows.len(),
            pre_mean,
            pre_std,
            post_mean,
            post_std,
        }
    };

    let by_scheme_architecture: Vec<GroupStats> = by_arch
        .iter()
        .map(|((scheme, arch, task), rows)| group_stats(rows, scheme, Some(arch.clone()), task))
        .collect();
    let by_scheme: Vec<GroupStats> = by_scheme_key
        .iter()
        .map(|((scheme, task), rows)| group_stats(rows, scheme, None, task))
        .collect();

    let mut run_groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for r in &runs {
        run_groups
            .entry((r.scheme.clone(), r.task.clone(), r.split.clone()))
            .or_default()
            .push(r.accuracy);
    }
    let run_scheme_means = run_groups
        .into_iter()
        .map(|((scheme, task, split), accs)| {
            let (mean, std) = mean_std(&accs);
            (scheme, task, split, accs.len(), mean, std)
        })
        .collect();

    Ok(Summary {
        runs,
        personalization,
        by_scheme_architecture,
        by_scheme,
        run_scheme_means,
    })
}

/// Writes one run's report: the grid row followed by confusion blocks.
/// Rows are ground truth, columns are predictions (stated in the header).
pub fn write_report_csv(path: &Path, report: &EvalReport, run_id: &str) -> Result<()> {
    let mut out = String::new();
    out.push_str(RUN_CSV_HEADER);
    out.push('\n');
    out.push_str(&RunRow::from_report(report).to_csv());
    out.push('\n');

    writeln!(
        out,
        "# confusion run={run_id} rows=ground_truth cols=predicted type=raw"
    )
    .unwrap();
    for row in &report.confusion_raw {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    let zero_rows = if report.zero_rows.is_empty() {
        "none".to_string()
    } else {
        report
            .zero_rows
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(";")
    };
    writeln!(
        out,
        "# confusion run={run_id} rows=ground_truth cols=predicted type=row_normalized zero_rows={zero_rows}"
    )
    .unwrap();
    for row in &report.confusion_normalized {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_personalization_csv(path: &Path, rows: &[PersonalizationRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str(PERSONALIZATION_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reference test accuracies reported for the full-scale MIMIC-III benchmark.
/// Desk-scale runs cannot reproduce them; they are emitted as an informational
/// footnote and never asserted.
pub const REFERENCE_FULL_SCALE: &[(&str, &str, [f64; 4])] = &[
    ("hph", "classification", [0.45, 0.44, 0.45, 0.44]),
    ("even4", "classification", [0.36, 0.36, 0.37, 0.36]),
    ("dgk", "classification", [0.24, 0.24, 0.25, 0.23]),
    ("even10", "classification", [0.16, 0.15, 0.16, 0.16]),
    ("hph", "regression", [0.42, 0.46, 0.45, 0.45]),
    ("even4", "regression", [0.36, 0.36, 0.37, 0.38]),
    ("dgk", "regression", [0.25, 0.25, 0.25, 0.25]),
    ("even10", "regression", [0.14, 0.16, 0.16, 0.16]),
];

pub const REFERENCE_ARCHITECTURES: [&str; 4] = ["alexnet", "resnet18", "resnet34", "resnet50"];

/// Footnote lookup: reference accuracy for (scheme, task, architecture).
pub fn reference_accuracy(scheme: &str, task: &str, architecture: &str) -> Option<f64> {
    let arch_idx = REFERENCE_ARCHITECTURES
        .iter()
        .position(|&a| a == architecture)?;
    REFERENCE_FULL_SCALE
        .iter()
        .find(|(s, t, _)| *s == scheme && *t == task)
        .map(|(_, _, accs)| accs[arch_idx])
}

/// Writes the aggregated summary as comment-separated CSV tables plus the
/// reference footnote.
pub fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    let mut out = String::new();

    out.push_str("# table: runs\n");
    out.push_str(RUN_CSV_HEADER);
    out.push('\n');
    for row in &summary.runs {
        out.push_str(&row.to_csv());
        out.push('\n');
    }

    out.push_str("# table: personalization\n");
    out.push_str(PERSONALIZATION_CSV_HEADER);
    out.push('\n');
    for row in &summary.personalization {
        out.push_str(&row.to_csv());
        out.push('\n');
    }

    out.push_str("# table: personalization_by_scheme_architecture\n");
    out.push_str("scheme,architecture,task,n_subjects,pre_mean,pre_std,post_mean,post_std\n");
    for g in &summary.by_scheme_architecture {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            g.scheme,
            g.architecture.as_deref().unwrap_or("all"),
            g.task,
            g.n,
            g.pre_mean,
            g.pre_std,
            g.post_mean,
            g.post_std
        )
        .unwrap();
    }

    out.push_str("# table: personalization_by_scheme\n");
    out.push_str("scheme,task,n_subjects,pre_mean,pre_std,post_mean,post_std\n");
    for g in &summary.by_scheme {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            g.scheme, g.task, g.n, g.pre_mean, g.pre_std, g.post_mean, g.post_std
        )
        .unwrap();
    }

    out.push_str("# table: accuracy_by_scheme\n");
    out.push_str("scheme,task,split,n_runs,accuracy_mean,accuracy_std\n");
    for (scheme, task, split, n, mean, std) in &summary.run_scheme_means {
        writeln!(out, "{scheme},{task},{split},{n},{mean:.6},{std:.6}").unwrap();
    }

    out.push_str("# reference full-scale accuracies (informational; not reproducible at desk scale)\n");
    out.push_str("# scheme,task,alexnet,resnet18,resnet34,resnet50\n");
    for (scheme, task, accs) in REFERENCE_FULL_SCALE {
        writeln!(
            out,
            "# {scheme},{task},{:.2},{:.2},{:.2},{:.2}",
            accs[0], accs[1], accs[2], accs[3]
        )
        .unwrap();
    }

    fs::write(path, out)?;
    Ok(())
}

/// Emits a scriptable plot description (grouped pre/post bars per scheme and
/// architecture) instead of rendering figures directly.
pub fn write_plot_spec(path: &Path, summary: &Summary) -> Result<()> {
    #[derive(Serialize)]
    struct Series<'a> {
        label: &'a str,
        mean: Vec<f64>,
        std: Vec<f64>,
    }
    #[derive(Serialize)]
    struct Figure<'a> {
        id: String,
        kind: &'a str,
        title: String,
        groups: Vec<String>,
        series: Vec<Series<'a>>,
    }

    let mut figures = Vec::new();
    for task in ["classification", "regression"] {
        let groups: Vec<&GroupStats> = summary
            .by_scheme_architecture
            .iter()
            .filter(|g| g.task == task)
            .collect();
        if !groups.is_empty() {
            figures.push(Figure {
                id: format!("personalization_by_architecture_{task}"),
                kind: "grouped_bar",
                title: format!("Test accuracy before/after personalization ({task})"),
                groups: groups
                    .iter()
                    .map(|g| {
                        format!("{}/{}", g.scheme, g.architecture.as_deref().unwrap_or("all"))
                    })
                    .collect(),
                series: vec![
                    Series {
                        label: "pre",
                        mean: groups.iter().map(|g| g.pre_mean).collect(),
                        std: groups.iter().map(|g| g.pre_std).collect(),
                    },
                    Series {
                        label: "post",
                        mean: groups.iter().map(|g| g.post_mean).collect(),
                        std: groups.iter().map(|g| g.post_std).collect(),
                    },
                ],
            });
        }
        let groups: Vec<&GroupStats> = summary.by_scheme.iter().filter(|g| g.task == task).collect();
        if !groups.is_empty() {
            figures.push(Figure {
                id: format!("personalization_by_scheme_{task}"),
                kind: "grouped_bar",
                title: format!(
                    "Accuracy before/after personalization, averaged over architectures ({task})"
                ),
                groups: groups.iter().map(|g| g.scheme.clone()).collect(),
                series: vec![
                    Series {
                        label: "pre",
                        mean: groups.iter().map(|g| g.pre_mean).collect(),
                        std: groups.iter().map(|g| g.pre_std).collect(),
                    },
                    Series {
                        label: "post",
                        mean: groups.iter().map(|g| g.post_mean).collect(),
                        std: groups.iter().map(|g| g.post_std).collect(),
                    },
                ],
            });
        }
    }

    let json = serde_json::json!({ "figures": figures });
    fs::write(
        path,
        serde_json::to_string_pretty(&json)
            .map_err(|e| Error::Config(format!("plot spec serialization: {e}")))?
            + "\n",
    )?;
    Ok(())
}
