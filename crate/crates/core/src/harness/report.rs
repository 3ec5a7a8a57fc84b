use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::harness::{CommitteeReport, ExperimentReport, HarnessError};
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(HarnessError::usage("report", format!("unknown report format {other:?}"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "markdown",
        })
    }
}

/// A row of an emitted table with a fixed column layout.
pub trait TableRow: Sized {
    const HEADER: &'static [&'static str];

    fn cells(&self) -> Vec<String>;

    fn from_cells(cells: &[&str]) -> Result<Self, HarnessError>;
}

fn bad_cell(column: &str, value: &str) -> HarnessError {
    HarnessError::data("report", format!("cannot parse {column} value {value:?}"))
}

fn parse_num<T: FromStr>(column: &str, value: &str) -> Result<T, HarnessError> {
    value.trim().parse().map_err(|_| bad_cell(column, value))
}

/// One line of a gap table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub ws: usize,
    pub tw: usize,
    pub tm: usize,
    /// Mean accuracy of the pre-trained arm.
    pub acc: f64,
    pub gap: f64,
}

impl GapRow {
    pub fn from_report(r: &ExperimentReport) -> Self {
        Self { ws: r.overlap.ws, tw: r.overlap.tw, tm: r.overlap.tm, acc: r.pretrained.mean, gap: r.gap }
    }

    /// Mean accuracy of the scratch arm, recovered from the row.
    pub fn scratch_acc(&self) -> f64 {
        self.acc - self.gap
    }
}

impl TableRow for GapRow {
    const HEADER: &'static [&'static str] = &["W_S", "T_W", "T_M", "Acc", "Gap"];

    fn cells(&self) -> Vec<String> {
        vec![self.ws.to_string(), self.tw.to_string(), self.tm.to_string(), self.acc.to_string(), self.gap.to_string()]
    }

    fn from_cells(c: &[&str]) -> Result<Self, HarnessError> {
        Ok(Self {
            ws: parse_num("W_S", c[0])?,
            tw: parse_num("T_W", c[1])?,
            tm: parse_num("T_M", c[2])?,
            acc: parse_num("Acc", c[3])?,
            gap: parse_num("Gap", c[4])?,
        })
    }
}

/// One line of a committee table: a member, or the committee itself, whose
/// first cell reads `committee`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CommitteeRow {
    Member {
        blocks: usize,
        conv_layers: usize,
        /// Filters and kernel of the first front-end layer.
        filters: Option<usize>,
        kernel: Option<(usize, usize)>,
        heads: usize,
        acc: f64,
    },
    Committee {
        acc: f64,
    },
}

const NONE_CELL: &str = "-";
const COMMITTEE_CELL: &str = "committee";

impl CommitteeRow {
    pub fn member(config: &ModelConfig, acc: f64) -> Self {
        let first = config.conv_layers.first();
        CommitteeRow::Member {
            blocks: config.blocks,
            conv_layers: config.conv_layers.len(),
            filters: first.map(|l| l.filters),
            kernel: first.map(|l| l.kernel),
            heads: config.heads,
            acc,
        }
    }

    /// Member rows in order, then the committee row.
    pub fn from_report(r: &CommitteeReport) -> Vec<Self> {
        let mut rows: Vec<Self> = r.members.iter().map(|m| Self::member(&m.model, m.accuracy.mean)).collect();
        rows.push(CommitteeRow::Committee { acc: r.committee.mean });
        rows
    }
}

fn opt_cell<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| NONE_CELL.to_string(), |x| x.to_string())
}

fn is_none_cell(s: &str) -> bool {
    matches!(s.trim(), "-" | "–" | "")
}

fn parse_kernel(s: &str) -> Result<Option<(usize, usize)>, HarnessError> {
    if is_none_cell(s) {
        return Ok(None);
    }
    let (a, b) = s.split_once(['×', 'x']).ok_or_else(|| bad_cell("kernel", s))?;
    Ok(Some((parse_num("kernel", a)?, parse_num("kernel", b)?)))
}

impl TableRow for CommitteeRow {
    const HEADER: &'static [&'static str] = &["BERT blocks", "CLs", "d", "kernel", "heads", "Acc"];

    fn cells(&self) -> Vec<String> {
        match *self {
            CommitteeRow::Member { blocks, conv_layers, filters, kernel, heads, acc } => vec![
                blocks.to_string(),
                conv_layers.to_string(),
                opt_cell(filters),
                opt_cell(kernel.map(|(h, w)| format!("{h}×{w}"))),
                heads.to_string(),
                acc.to_string(),
            ],
            CommitteeRow::Committee { acc } => {
                let mut v = vec![COMMITTEE_CELL.to_string()];
                v.extend(std::iter::repeat_n(NONE_CELL.to_string(), 4));
                v.push(acc.to_string());
                v
            }
        }
    }

    fn from_cells(c: &[&str]) -> Result<Self, HarnessError> {
        let acc = parse_num("Acc", c[5])?;
        if c[0].trim() == COMMITTEE_CELL {
            return Ok(CommitteeRow::Committee { acc });
        }
        Ok(CommitteeRow::Member {
            blocks: parse_num("BERT blocks", c[0])?,
            conv_layers: parse_num("CLs", c[1])?,
            filters: if is_none_cell(c[2]) { None } else { Some(parse_num("d", c[2])?) },
            kernel: parse_kernel(c[3])?,
            heads: parse_num("heads", c[4])?,
            acc,
        })
    }
}

fn to_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}

fn to_markdown(header: &[&str], rows: &[Vec<String>]) -> String {
    let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
    let mut out = line(&header.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    out += &line(&vec!["---".to_string(); header.len()]);
    for r in rows {
        out += &line(r);
    }
    out
}

/// Renders `rows` under the row type's header. An empty slice gives a
/// header-only table.
pub fn emit_report<R: TableRow>(rows: &[R], format: ReportFormat) -> String {
    let cells: Vec<Vec<String>> = rows.iter().map(TableRow::cells).collect();
    match format {
        ReportFormat::Csv => to_csv(R::HEADER, &cells),
        ReportFormat::Markdown => to_markdown(R::HEADER, &cells),
    }
}

pub fn write_report<R: TableRow>(path: impl AsRef<Path>, rows: &[R], format: ReportFormat) -> Result<(), HarnessError> {
    let path = path.as_ref();
    fs::write(path, emit_report(rows, format))
        .map_err(|e| HarnessError::data("report", format!("cannot write {}: {e}", path.display())))
}

/// Rewrites a pipe table as CSV, dropping the separator line.
fn markdown_to_csv(text: &str) -> Result<String, HarnessError> {
    let mut rows = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let inner = line
            .strip_prefix('|')
            .and_then(|l| l.strip_suffix('|'))
            .ok_or_else(|| HarnessError::data("report", format!("not a table line: {line:?}")))?;
        let cells: Vec<String> = inner.split('|').map(|c| c.trim().to_string()).collect();
        if cells.iter().all(|c| !c.is_empty() && c.chars().all(|ch| matches!(ch, '-' | ':'))) {
            continue;
        }
        rows.push(cells);
    }
    let Some((header, body)) = rows.split_first() else { return Ok(String::new()) };
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    Ok(to_csv(&header, body))
}

/// Parses a table emitted by [`emit_report`]. The header must match the
/// row type's exactly.
pub fn parse_table<R: TableRow>(text: &str, format: ReportFormat) -> Result<Vec<R>, HarnessError> {
    let csv_text = match format {
        ReportFormat::Csv => text.to_string(),
        ReportFormat::Markdown => markdown_to_csv(text)?,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_text.as_bytes());
    let header = reader.headers().map_err(|e| HarnessError::data("report", e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != R::HEADER {
        return Err(HarnessError::data("report", format!("unexpected columns {:?}, want {:?}", header, R::HEADER)));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| HarnessError::data("report", e.to_string()))?;
        let cells: Vec<&str> = record.iter().collect();
        rows.push(R::from_cells(&cells)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConvLayerSpec;

    fn gap_rows() -> Vec<GapRow> {
        vec![
            GapRow { ws: 90_000, tw: 17_183, tm: 42, acc: 0.891, gap: 0.051 },
            GapRow { ws: 0, tw: 0, tm: 17_072, acc: 0.1 + 0.2, gap: 0.0 },
        ]
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(emit_report::<GapRow>(&[], ReportFormat::Csv), "W_S,T_W,T_M,Acc,Gap\n");
        let md = emit_report::<GapRow>(&[], ReportFormat::Markdown);
        assert_eq!(md.lines().count(), 2);
        assert!(parse_table::<GapRow>(&md, ReportFormat::Markdown).unwrap().is_empty());
    }

    #[test]
    fn one_gap_row_is_five_columns() {
        let csv = emit_report(&gap_rows()[..1], ReportFormat::Csv);
        assert_eq!(csv, "W_S,T_W,T_M,Acc,Gap\n90000,17183,42,0.891,0.051\n");
    }

    #[test]
    fn gap_tables_round_trip_in_both_formats() {
        for f in [ReportFormat::Csv, ReportFormat::Markdown] {
            let back: Vec<GapRow> = parse_table(&emit_report(&gap_rows(), f), f).unwrap();
            assert_eq!(back, gap_rows(), "{f}");
        }
    }

    #[test]
    fn committee_rows_round_trip() {
        let with_conv = ModelConfig::bert(1, 8).with_conv(vec![ConvLayerSpec::new(64, 3, 3), ConvLayerSpec::new(64, 3, 3)]);
        let rows = vec![
            CommitteeRow::member(&with_conv, 0.846),
            CommitteeRow::member(&ModelConfig::bert(1, 24), 0.841),
            CommitteeRow::Committee { acc: 0.866 },
        ];
        let md = emit_report(&rows, ReportFormat::Markdown);
        assert!(md.contains("| 1 | 2 | 64 | 3×3 | 8 | 0.846 |"));
        assert!(md.contains("| 1 | 0 | - | - | 24 | 0.841 |"));
        for f in [ReportFormat::Csv, ReportFormat::Markdown] {
            assert_eq!(parse_table::<CommitteeRow>(&emit_report(&rows, f), f).unwrap(), rows);
        }
    }

    #[test]
    fn wrong_columns_are_rejected() {
        assert!(parse_table::<GapRow>("W_S,T_W,Acc\n1,2,0.5\n", ReportFormat::Csv).is_err());
        assert!(parse_table::<GapRow>("W_S,T_W,T_M,Acc,Gap\n1,2,3,abc,0\n", ReportFormat::Csv).is_err());
    }
}
