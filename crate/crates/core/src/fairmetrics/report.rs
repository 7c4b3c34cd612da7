//! Audit reports and their CSV / Markdown / plot-data renderings.
//!
//! Every file starts with comment lines: a schema line, `generated_at=`,
//! and `harness_version=`. [`canonicalize`] drops the timestamp line so two
//! renderings of the same inputs compare byte-for-byte.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use super::metrics::{
    demographic_parity, join_predictions, subgroup_accuracy, DisparityRow, SubgroupMetrics,
};
use crate::adapters::PredictionRecord;
use crate::cohort::{Attribute, CohortSpec, Manifest};
use crate::{Error, Result, HARNESS_VERSION};

pub const AUDIT_SCHEMA: &str = "fairgen-audit v1";
pub const PLOTDATA_SCHEMA: &str = "fairgen-plotdata v1";
pub const COMPARISON_SCHEMA: &str = "fairgen-comparison v1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub model_id: String,
    pub disparities: Vec<DisparityRow>,
    pub subgroups: Vec<SubgroupMetrics>,
    pub spec: CohortSpec,
    pub config_echo: Option<String>,
    /// RFC 3339, UTC.
    pub generated_at: String,
    pub harness_version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    PlotData,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "plotdata" => Ok(ReportFormat::PlotData),
            other => Err(Error::Input(format!("unknown report format `{other}`"))),
        }
    }
}

/// Joins, aggregates and computes one disparity row per attribute whose
/// vocabulary has at least two values.
pub fn build_report(
    model_id: &str,
    manifest: &Manifest,
    records: &[PredictionRecord],
) -> Result<AuditReport> {
    let joined = join_predictions(manifest, records)?;
    let mut disparities = Vec::new();
    let mut subgroups = Vec::new();
    for attr in Attribute::GRID_ORDER {
        let groups = subgroup_accuracy(&joined, attr.name())?;
        if manifest.vocabulary().cardinality(attr) >= 2 {
            disparities.push(demographic_parity(&groups)?);
        }
        subgroups.extend(groups);
    }
    Ok(AuditReport {
        model_id: model_id.to_string(),
        disparities,
        subgroups,
        spec: manifest.spec.clone(),
        config_echo: manifest.config_echo.clone(),
        generated_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        harness_version: HARNESS_VERSION.to_string(),
    })
}

pub fn emit_report(report: &AuditReport, format: ReportFormat) -> Result<Vec<u8>> {
    if report.subgroups.is_empty() || report.disparities.is_empty() {
        return Err(Error::Input(format!(
            "report for `{}` has no subgroups",
            report.model_id
        )));
    }
    match format {
        ReportFormat::Csv | ReportFormat::Markdown => Ok(wide_table(
            AUDIT_SCHEMA,
            &report.generated_at,
            &report.harness_version,
            std::slice::from_ref(report),
            format,
        )?
        .into_bytes()),
        ReportFormat::PlotData => {
            let mut out = preamble(
                PLOTDATA_SCHEMA,
                &report.generated_at,
                &report.harness_version,
                "#",
            );
            let mut w = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| Error::Input(e.to_string());
            w.write_record([
                "attribute",
                "group",
                "n",
                "correct",
                "accuracy",
                "ci_low",
                "ci_high",
            ])
            .map_err(csv_err)?;
            for g in &report.subgroups {
                w.write_record([
                    g.attribute.name().to_string(),
                    g.value.clone(),
                    g.n.to_string(),
                    g.correct.to_string(),
                    format!("{:.4}", g.accuracy),
                    format!("{:.4}", g.ci_low),
                    format!("{:.4}", g.ci_high),
                ])
                .map_err(csv_err)?;
            }
            out.push_str(
                &String::from_utf8(w.into_inner().map_err(|e| Error::Input(e.to_string()))?)
                    .expect("utf-8"),
            );
            Ok(out.into_bytes())
        }
    }
}

/// One row per report, like [`emit_report`]'s CSV and Markdown tables.
/// Columns are the union of the reports' attributes in grid order.
pub fn emit_comparison(reports: &[AuditReport], format: ReportFormat) -> Result<Vec<u8>> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Input("comparison needs at least one report".into()))?;
    if format == ReportFormat::PlotData {
        return Err(Error::Input("comparison tables are csv or markdown".into()));
    }
    Ok(wide_table(
        COMPARISON_SCHEMA,
        &first.generated_at,
        &first.harness_version,
        reports,
        format,
    )?
    .into_bytes())
}

fn preamble(schema: &str, generated_at: &str, version: &str, marker: &str) -> String {
    let (open, close) = if marker == "#" {
        ("# ", "")
    } else {
        ("<!-- ", " -->")
    };
    format!("{open}{schema}{close}\n{open}generated_at={generated_at}{close}\n{open}harness_version={version}{close}\n")
}

fn wide_table(
    schema: &str,
    generated_at: &str,
    version: &str,
    reports: &[AuditReport],
    format: ReportFormat,
) -> Result<String> {
    let attrs: Vec<Attribute> = Attribute::GRID_ORDER
        .into_iter()
        .filter(|a| {
            reports
                .iter()
                .any(|r| r.disparities.iter().any(|d| d.attribute == *a))
        })
        .collect();
    let mut header = vec!["Model".to_string()];
    for a in &attrs {
        for col in ["Max", "Min", "DP"] {
            header.push(format!("{} {col}", a.title()));
        }
    }
    let mut rows = Vec::with_capacity(reports.len());
    for r in reports {
        let mut row = vec![r.model_id.clone()];
        for a in &attrs {
            match r.disparities.iter().find(|d| d.attribute == *a) {
                Some(d) => {
                    row.extend([d.max_accuracy, d.min_accuracy, d.dp].map(|v| format!("{v:.4}")))
                }
                None => row.extend(["", "", ""].map(String::from)),
            }
        }
        rows.push(row);
    }
    match format {
        ReportFormat::Csv => {
            let mut out = preamble(schema, generated_at, version, "#");
            let mut w = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| Error::Input(e.to_string());
            w.write_record(&header).map_err(csv_err)?;
            for row in &rows {
                w.write_record(row).map_err(csv_err)?;
            }
            out.push_str(
                &String::from_utf8(w.into_inner().map_err(|e| Error::Input(e.to_string()))?)
                    .expect("utf-8"),
            );
            Ok(out)
        }
        ReportFormat::Markdown => {
            let mut out = preamble(schema, generated_at, version, "<!--");
            out.push('\n');
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let _ = writeln!(
                out,
                "|{}|",
                header
                    .iter()
                    .enumerate()
                    .map(|(i, _)| if i == 0 { " --- " } else { " ---: " })
                    .collect::<Vec<_>>()
                    .join("|")
            );
            for row in &rows {
                let cells: Vec<String> = row.iter().map(|c| c.replace('|', "\\|")).collect();
                let _ = writeln!(out, "| {} |", cells.join(" | "));
            }
            Ok(out)
        }
        ReportFormat::PlotData => unreachable!("handled by callers"),
    }
}

/// Removes the `generated_at=` line.
pub fn canonicalize(bytes: &[u8]) -> Vec<u8> {
    let text = String::from_utf8_lossy(bytes);
    let mut out = String::with_capacity(text.len());
    for line in text.split_inclusive('\n') {
        if !line.contains("generated_at=") {
            out.push_str(line);
        }
    }
    out.into_bytes()
}

/// One parsed row of an audit or comparison CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAuditRow {
    pub model_id: String,
    /// (attribute, max, min, dp) in column order; blank cells are skipped.
    pub cells: Vec<(Attribute, f64, f64, f64)>,
}

/// Reads back the CSV written by [`emit_report`] or [`emit_comparison`].
pub fn parse_audit_csv(bytes: &[u8]) -> Result<Vec<ParsedAuditRow>> {
    let bad = |d: String| Error::format("audit csv", d);
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(bytes);
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.get(0) != Some("Model") || (header.len() - 1) % 3 != 0 {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut attrs = Vec::new();
    for i in (1..header.len()).step_by(3) {
        let title = header[i]
            .strip_suffix(" Max")
            .ok_or_else(|| bad(format!("column {}", &header[i])))?;
        let attr = Attribute::GRID_ORDER
            .into_iter()
            .find(|a| a.title() == title)
            .ok_or_else(|| bad(format!("unknown attribute column `{title}`")))?;
        if header[i + 1] != format!("{title} Min") || header[i + 2] != format!("{title} DP") {
            return Err(bad(format!("columns for {title} out of order")));
        }
        attrs.push(attr);
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let mut cells = Vec::new();
        for (k, attr) in attrs.iter().enumerate() {
            let raw = [&rec[1 + 3 * k], &rec[2 + 3 * k], &rec[3 + 3 * k]];
            if raw.iter().all(|c| c.is_empty()) {
                continue;
            }
            let v = raw
                .iter()
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| bad(format!("`{c}` is not a number")))
                })
                .collect::<Result<Vec<_>>>()?;
            cells.push((*attr, v[0], v[1], v[2]));
        }
        out.push(ParsedAuditRow {
            model_id: rec[0].to_string(),
            cells,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{build_manifest, CohortSpec};

    fn row(attribute: Attribute, max: f64, min: f64) -> DisparityRow {
        DisparityRow {
            attribute,
            max_accuracy: max,
            min_accuracy: min,
            dp: max - min,
            argmax_group: String::new(),
            argmin_group: String::new(),
        }
    }

    fn deepguide() -> AuditReport {
        let m = build_manifest(&CohortSpec {
            n_per_cell: 1,
            ..CohortSpec::default()
        })
        .unwrap();
        AuditReport {
            model_id: "DeepGuide".into(),
            disparities: vec![
                row(Attribute::Sex, 0.0179, 0.0031),
                row(Attribute::Age, 0.0258, 0.0017),
                row(Attribute::SkinType, 0.0312, 0.0038),
            ],
            subgroups: vec![SubgroupMetrics::new(Attribute::Sex, "male", 0, 179, 10_000).unwrap()],
            spec: m.spec,
            config_echo: None,
            generated_at: "2024-01-01T00:00:00Z".into(),
            harness_version: "0.1.0".into(),
        }
    }

    #[test]
    fn markdown_renders_the_table_line_verbatim() {
        let md =
            String::from_utf8(emit_report(&deepguide(), ReportFormat::Markdown).unwrap()).unwrap();
        assert!(md.contains("| Model | Sex Max | Sex Min | Sex DP | Age Max | Age Min | Age DP | Skin Type Max | Skin Type Min | Skin Type DP |"));
        assert!(md.contains("| DeepGuide | 0.0179 | 0.0031 | 0.0148 | 0.0258 | 0.0017 | 0.0241 | 0.0312 | 0.0038 | 0.0274 |"), "{md}");
    }

    #[test]
    fn csv_round_trips_at_four_decimals() {
        let r = deepguide();
        let bytes = emit_report(&r, ReportFormat::Csv).unwrap();
        let parsed = parse_audit_csv(&bytes).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].model_id, "DeepGuide");
        for (d, (attr, max, min, dp)) in r.disparities.iter().zip(&parsed[0].cells) {
            assert_eq!(d.attribute, *attr);
            assert!((d.max_accuracy - max).abs() <= 5e-5);
            assert!((d.min_accuracy - min).abs() <= 5e-5);
            assert!((d.dp - dp).abs() <= 5e-5);
        }
    }

    #[test]
    fn empty_reports_and_unknown_formats_are_errors() {
        let mut r = deepguide();
        r.subgroups.clear();
        assert!(matches!(
            emit_report(&r, ReportFormat::Csv),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            "pdf".parse::<ReportFormat>(),
            Err(Error::Input(_))
        ));
        assert!(emit_comparison(&[], ReportFormat::Csv).is_err());
    }

    #[test]
    fn canonicalize_drops_only_the_timestamp() {
        let mut a = deepguide();
        let mut b = deepguide();
        b.generated_at = "2031-05-05T12:00:00Z".into();
        for f in [
            ReportFormat::Csv,
            ReportFormat::Markdown,
            ReportFormat::PlotData,
        ] {
            let (x, y) = (emit_report(&a, f).unwrap(), emit_report(&b, f).unwrap());
            assert_ne!(x, y);
            assert_eq!(canonicalize(&x), canonicalize(&y));
        }
        a.model_id = "Other".into();
        assert_ne!(
            canonicalize(&emit_report(&a, ReportFormat::Csv).unwrap()),
            canonicalize(&emit_report(&b, ReportFormat::Csv).unwrap())
        );
    }

    #[test]
    fn comparison_has_one_row_per_report() {
        let a = deepguide();
        let mut b = deepguide();
        b.model_id = "MelaNet".into();
        let bytes = emit_comparison(&[a, b], ReportFormat::Csv).unwrap();
        let rows = parse_audit_csv(&bytes).unwrap();
        assert_eq!(
            rows.iter().map(|r| r.model_id.as_str()).collect::<Vec<_>>(),
            ["DeepGuide", "MelaNet"]
        );
    }

    #[test]
    fn build_report_with_perfect_predictions_has_zero_dp() {
        let m = build_manifest(&CohortSpec {
            n_per_cell: 2,
            ..CohortSpec::default()
        })
        .unwrap();
        let recs: Vec<_> = m
            .rows
            .iter()
            .map(|r| PredictionRecord {
                sample_id: r.sample_id.clone(),
                predicted_label: "melanoma".into(),
                score: 1.0,
            })
            .collect();
        let rep = build_report("perfect", &m, &recs).unwrap();
        let attrs: Vec<_> = rep.disparities.iter().map(|d| d.attribute).collect();
        assert_eq!(attrs, [Attribute::Sex, Attribute::Age, Attribute::SkinType]);
        assert!(rep.disparities.iter().all(|d| d.dp == 0.0));
        assert_eq!(rep.subgroups.len(), 2 + 8 + 7 + 1 + 1);
        let again = build_report("perfect", &m, &recs).unwrap();
        assert_eq!(
            canonicalize(&emit_report(&rep, ReportFormat::Csv).unwrap()),
            canonicalize(&emit_report(&again, ReportFormat::Csv).unwrap())
        );
    }
}
