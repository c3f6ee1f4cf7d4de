//! Result rows and their serialized forms. Rows are append-only and
//! keyed by (experiment id, cell, realization, metric); the writers sort
//! by that key so output bytes never depend on execution order. Floats
//! are printed in shortest round-trip form.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResultRow {
    pub id: String,
    /// Grid coordinates of the cell this row belongs to.
    pub cell: BTreeMap<String, f64>,
    pub realization: u64,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    /// Qualitative notes, `;`-separated `key` or `key=value` entries.
    pub flags: String,
}

/// Sort rows by (cell coordinates in name order, realization, metric).
/// The id is constant within a run.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        let ka = a.cell.values().copied().collect::<Vec<_>>();
        let kb = b.cell.values().copied().collect::<Vec<_>>();
        let cell_cmp = ka
            .iter()
            .zip(&kb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal);
        cell_cmp
            .then(a.realization.cmp(&b.realization))
            .then(a.metric.cmp(&b.metric))
    });
}

/// Column names: `id`, one column per grid axis, `realization`, `seed`,
/// `metric`, `value`, `flags`.
pub fn csv_header(grid_names: &[String]) -> String {
    let mut cols = vec!["id".to_string()];
    cols.extend(grid_names.iter().cloned());
    cols.extend(
        ["realization", "seed", "metric", "value", "flags"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols.join(",")
}

pub fn to_csv(rows: &[ResultRow], grid_names: &[String]) -> String {
    let mut out = csv_header(grid_names);
    out.push('\n');
    for row in rows {
        out.push_str(&row.id);
        for name in grid_names {
            out.push(',');
            if let Some(v) = row.cell.get(name) {
                out.push_str(&format_f64(*v));
            }
        }
        out.push_str(&format!(
            ",{},{},{},{},{}\n",
            row.realization,
            row.seed,
            row.metric,
            format_f64(row.value),
            row.flags
        ));
    }
    out
}

pub fn to_ndjson(rows: &[ResultRow]) -> String {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("row serializes"));
        out.push('\n');
    }
    out
}

pub fn from_ndjson(text: &str) -> Result<Vec<ResultRow>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Shortest representation that round-trips through parsing. Non-finite
/// values are rejected upstream; this keeps them printable regardless.
pub fn format_f64(v: f64) -> String {
    format!("{v}")
}

/// One summary line: named columns rendered in the given order.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub columns: Vec<(String, String)>,
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let header: Vec<&str> = first.columns.iter().map(|(k, _)| k.as_str()).collect();
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        debug_assert!(row.columns.iter().map(|(k, _)| k.as_str()).eq(header
            .iter()
            .copied()));
        let vals: Vec<&str> = row.columns.iter().map(|(_, v)| v.as_str()).collect();
        out.push_str(&vals.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(side: f64, realization: u64, metric: &str, value: f64) -> ResultRow {
        let mut cell = BTreeMap::new();
        cell.insert("side".to_string(), side);
        ResultRow {
            id: "t".into(),
            cell,
            realization,
            seed: 7,
            metric: metric.into(),
            value,
            flags: String::new(),
        }
    }

    #[test]
    fn sorting_is_by_cell_then_realization_then_metric() {
        let mut rows = vec![
            row(20.0, 0, "b", 1.0),
            row(10.0, 1, "a", 2.0),
            row(10.0, 0, "b", 3.0),
            row(10.0, 0, "a", 4.0),
        ];
        sort_rows(&mut rows);
        let order: Vec<(f64, u64, String)> = rows
            .iter()
            .map(|r| (r.cell["side"], r.realization, r.metric.clone()))
            .collect();
        assert_eq!(
            order,
            vec![
                (10.0, 0, "a".to_string()),
                (10.0, 0, "b".to_string()),
                (10.0, 1, "a".to_string()),
                (20.0, 0, "b".to_string()),
            ]
        );
    }

    #[test]
    fn csv_and_ndjson_round_trip() {
        let rows = vec![row(10.0, 0, "count", 0.1 + 0.2)];
        let csv = to_csv(&rows, &["side".to_string()]);
        assert!(csv.starts_with("id,side,realization,seed,metric,value,flags\n"));
        // Shortest round-trip form preserves the exact bits.
        assert!(csv.contains("0.30000000000000004"));
        let back = from_ndjson(&to_ndjson(&rows)).unwrap();
        assert_eq!(back, rows);
        assert_eq!(back[0].value, 0.1 + 0.2);
    }

    #[test]
    fn summary_csv_renders_in_column_order() {
        let rows = vec![SummaryRow {
            columns: vec![
                ("side".to_string(), "10".to_string()),
                ("point".to_string(), "0.5".to_string()),
            ],
        }];
        assert_eq!(summary_csv(&rows), "side,point\n10,0.5\n");
        assert_eq!(summary_csv(&[]), "");
    }
}
