//! Multi-seed comparison tables.

use std::fmt::Write as _;

use super::record::RunRecord;

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `"mean (std)"` with two decimals.
pub fn format_mean_std(values: &[f64]) -> String {
    let (m, s) = mean_std(values);
    format!("{m:.2} ({s:.2})")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub runs: usize,
    /// Percentages.
    pub top1: (f64, f64),
    pub minority: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
}

/// Groups records by run name (in order of first appearance) and summarizes
/// top-1 and minority-class accuracy, in percent, across seeds.
pub fn compare_report(records: &[RunRecord]) -> Report {
    let mut methods: Vec<&str> = Vec::new();
    for r in records {
        if !methods.contains(&r.name.as_str()) {
            methods.push(&r.name);
        }
    }
    let mut report = Report::default();
    for m in methods {
        let group: Vec<&RunRecord> = records.iter().filter(|r| r.name == m).collect();
        let top1: Vec<f64> = group.iter().map(|r| 100.0 * r.metrics.top1).collect();
        let minority: Vec<f64> = group
            .iter()
            .filter_map(|r| r.metrics.minority_mean.map(|v| 100.0 * v))
            .collect();
        if minority.is_empty() {
            report
                .warnings
                .push(format!("{m}: no minority classes; minority column omitted"));
        } else if minority.len() < group.len() {
            report.warnings.push(format!(
                "{m}: minority accuracy available for {} of {} runs",
                minority.len(),
                group.len()
            ));
        }
        report.rows.push(ReportRow {
            method: m.to_string(),
            runs: group.len(),
            top1: mean_std(&top1),
            minority: (!minority.is_empty()).then(|| mean_std(&minority)),
        });
    }
    report
}

fn cell((m, s): (f64, f64)) -> String {
    format!("{m:.2} ({s:.2})")
}

impl Report {
    pub fn to_text(&self) -> String {
        let header = ["method", "runs", "top1", "minority"];
        let body: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.method.clone(),
                    r.runs.to_string(),
                    cell(r.top1),
                    r.minority.map(cell).unwrap_or_else(|| "-".into()),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: [&str; 4]| {
            let _ = writeln!(
                out,
                "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
                cells[0],
                cells[1],
                cells[2],
                cells[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            );
        };
        line(&mut out, header);
        for row in &body {
            line(&mut out, [&row[0], &row[1], &row[2], &row[3]]);
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,runs,top1_mean,top1_std,minority_mean,minority_std\n");
        for r in &self.rows {
            let (mm, ms) = match r.minority {
                Some((m, s)) => (format!("{m:.2}"), format!("{s:.2}")),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(
                out,
                "{},{},{:.2},{:.2},{mm},{ms}",
                r.method, r.runs, r.top1.0, r.top1.1
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_examples() {
        assert_eq!(format_mean_std(&[70.0, 72.0, 74.0]), "72.00 (1.63)");
        assert_eq!(format_mean_std(&[55.5]), "55.50 (0.00)");
        assert_eq!(format_mean_std(&[3.0, 3.0, 3.0]), "3.00 (0.00)");
    }
}
