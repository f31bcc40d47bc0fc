//! Text and CSV rendering of evaluation and clustering results.
//!
//! Match tables have a Method column followed by P/R/F1 groups for Overall
//! and then EN, CN, ID, MS. Scores are percentages at one decimal, rounded
//! half-up. With two or more rows the best F1 (or NMI) in each group is
//! wrapped in `**…**` and the second best in `_…_`.

use crate::corpus::Language;
use crate::dyclu::ClusterOutcome;
use crate::eval::{round_half_up, MatchReport, Scores};

/// Column order of the per-language groups.
pub const LANGUAGE_COLUMNS: [Language; 4] = [Language::En, Language::Cn, Language::Id, Language::Ms];

pub const NO_CLUSTERS: &str = "no clusters";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("input is neither a match report nor a cluster output: {0}")]
    SchemaMismatch(String),
}

/// A parsed `eval` or `cluster` output.
#[derive(Debug, Clone, PartialEq)]
pub enum ReportInput {
    Match(MatchReport),
    Cluster(ClusterOutcome),
}

pub fn parse_report_input(json: &str) -> Result<ReportInput, ReportError> {
    let value: serde_json::Value = serde_json::from_str(json).map_err(|e| ReportError::SchemaMismatch(e.to_string()))?;
    if value.get("partition").is_some() {
        serde_json::from_value(value).map(ReportInput::Cluster)
    } else {
        serde_json::from_value(value).map(ReportInput::Match)
    }
    .map_err(|e| ReportError::SchemaMismatch(e.to_string()))
}

/// Percentage at one decimal, e.g. 0.3456 → "34.6".
pub fn pct(x: f64) -> String {
    format!("{:.1}", round_half_up(x * 100.0, 1))
}

/// "P R F1" for one score group.
pub fn scores_row(s: &Scores) -> String {
    format!("{} {} {}", pct(s.precision), pct(s.recall), pct(s.f1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rank {
    Best,
    Second,
    Other,
}

/// Ranks values (already rounded for display) by descending order; ties share a rank.
fn rank_column(values: &[Option<f64>]) -> Vec<Rank> {
    let present = values.iter().flatten().count();
    if present < 2 {
        return vec![Rank::Other; values.len()];
    }
    let mut distinct: Vec<f64> = values.iter().flatten().copied().collect();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    let best = distinct[0];
    let second = distinct.get(1).copied();
    values
        .iter()
        .map(|v| match *v {
            Some(v) if v == best => Rank::Best,
            Some(v) if Some(v) == second => Rank::Second,
            _ => Rank::Other,
        })
        .collect()
}

fn mark(cell: String, rank: Rank) -> String {
    match rank {
        Rank::Best => format!("**{cell}**"),
        Rank::Second => format!("_{cell}_"),
        Rank::Other => cell,
    }
}

fn groups_for(report: &MatchReport, with_languages: bool) -> Vec<Option<Scores>> {
    let mut groups = vec![Some(report.overall)];
    if with_languages {
        groups.extend(LANGUAGE_COLUMNS.iter().map(|l| report.per_language.get(l).copied()));
    }
    groups
}

fn group_names(with_languages: bool) -> Vec<&'static str> {
    let mut names = vec!["Overall"];
    if with_languages {
        names.extend(LANGUAGE_COLUMNS.iter().map(|l| l.code()));
    }
    names
}

fn column_widths(rows: &[Vec<String>]) -> Vec<usize> {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect()
}

fn pad_rows(rows: &[Vec<String>], widths: &[usize]) -> String {
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                let pad = widths[i] - cell.chars().count();
                if i == 0 {
                    format!("{cell}{}", " ".repeat(pad))
                } else {
                    format!("{}{cell}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(line.join(" ").trim_end());
        out.push('\n');
    }
    out
}

fn pad_table(rows: &[Vec<String>]) -> String {
    pad_rows(rows, &column_widths(rows))
}

/// Renders a P/R/F1 table. Language groups are shown when any row has a
/// per-language breakdown; missing cells print as "-".
pub fn render_match_table(rows: &[(String, MatchReport)]) -> String {
    let with_languages = rows.iter().any(|(_, r)| !r.per_language.is_empty());
    let names = group_names(with_languages);
    let groups: Vec<Vec<Option<Scores>>> = rows.iter().map(|(_, r)| groups_for(r, with_languages)).collect();

    let ranks: Vec<Vec<Rank>> = (0..names.len())
        .map(|g| {
            let f1s: Vec<Option<f64>> =
                groups.iter().map(|row| row[g].map(|s| round_half_up(s.f1 * 100.0, 1))).collect();
            rank_column(&f1s)
        })
        .collect();

    let mut header = vec![String::new()];
    for _ in &names {
        header.extend(["|", "P", "R", "F1"].map(String::from));
    }
    let mut table = vec![header];
    for (i, (method, _)) in rows.iter().enumerate() {
        let mut line = vec![method.clone()];
        for (g, scores) in groups[i].iter().enumerate() {
            line.push("|".into());
            match scores {
                Some(s) => {
                    line.push(pct(s.precision));
                    line.push(pct(s.recall));
                    line.push(mark(pct(s.f1), ranks[g][i]));
                }
                None => line.extend(["-", "-", "-"].map(String::from)),
            }
        }
        table.push(line);
    }
    let mut widths = column_widths(&table);
    widths[0] = widths[0].max("Method".len());

    // group titles centred over their P R F1 span
    let mut title = format!("{:<w$}", "Method", w = widths[0]);
    for (g, name) in names.iter().enumerate() {
        let base = 1 + 4 * g;
        let span = widths[base + 1] + widths[base + 2] + widths[base + 3] + 2;
        title.push_str(&format!(" | {name:^span$}"));
    }
    format!("{}\n{}", title.trim_end(), pad_rows(&table, &widths))
}

pub fn match_table_csv(rows: &[(String, MatchReport)]) -> String {
    let mut out = String::from("method,overall_p,overall_r,overall_f1");
    for l in LANGUAGE_COLUMNS {
        let c = l.code().to_lowercase();
        out.push_str(&format!(",{c}_p,{c}_r,{c}_f1"));
    }
    out.push('\n');
    for (method, report) in rows {
        out.push_str(&csv_field(method));
        for s in groups_for(report, true) {
            match s {
                Some(s) => out.push_str(&format!(",{},{},{}", pct(s.precision), pct(s.recall), pct(s.f1))),
                None => out.push_str(",,,"),
            }
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// NMI × 100 at two decimals.
pub fn nmi_cell(nmi: f64) -> String {
    format!("{:.2}", round_half_up(nmi * 100.0, 2))
}

/// Renders an NMI table; a run with no clusters prints a sentinel row.
pub fn render_cluster_table(rows: &[(String, ClusterOutcome)]) -> String {
    let nmis: Vec<Option<f64>> = rows
        .iter()
        .map(|(_, o)| if o.clusters.clusters.is_empty() { None } else { o.nmi.map(|v| round_half_up(v * 100.0, 2)) })
        .collect();
    let ranks = rank_column(&nmis);
    let mut table = vec![["Method", "|", "NMI", "Clusters", "Scored", "Trivial"].map(String::from).to_vec()];
    for (i, (method, o)) in rows.iter().enumerate() {
        if o.clusters.clusters.is_empty() {
            table.push(vec![method.clone(), "|".into(), NO_CLUSTERS.into()]);
            continue;
        }
        let nmi = o.nmi.map_or_else(|| "n/a".to_string(), |v| mark(nmi_cell(v), ranks[i]));
        table.push(vec![
            method.clone(),
            "|".into(),
            nmi,
            o.clusters.clusters.len().to_string(),
            o.scored.to_string(),
            o.trivial_excluded.to_string(),
        ]);
    }
    pad_table(&table)
}

pub fn cluster_table_csv(rows: &[(String, ClusterOutcome)]) -> String {
    let mut out = String::from("method,nmi,clusters,scored,trivial_excluded\n");
    for (method, o) in rows {
        let nmi = o.nmi.map(nmi_cell).unwrap_or_default();
        out.push_str(&format!(
            "{},{nmi},{},{},{}\n",
            csv_field(method),
            o.clusters.clusters.len(),
            o.scored,
            o.trivial_excluded
        ));
    }
    out
}
