//! The `plot` verb: read a results directory and emit a standalone SVG.
//! Four plot kinds cover the standard result families; each names the
//! rows or summary columns it needs and fails with that name when they
//! are absent. An empty result set yields an empty-axes plot.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use loclab::stats::fit_line;

use crate::rows::{from_ndjson, ResultRow};
use crate::svg::{Canvas, Frame};
use crate::CliError;

const SERIES_COLORS: [&str; 6] = [
    "#1b6ca8", "#c2452d", "#3a8f4d", "#8a5fb0", "#b58a2c", "#4f6d7a",
];

/// Floor for log plots; everything at or below is dropped.
const LOG_FLOOR: f64 = 1e-300;

pub fn plot(dir: &Path, kind: &str) -> Result<PathBuf, CliError> {
    let out = dir.join(format!("plot_{kind}.svg"));
    let svg = match kind {
        "decay" => decay_plot(&load_rows(dir)?),
        "probability" => probability_plot(&load_summary(dir)?)?,
        "moments" => moments_plot(&load_rows(dir)?),
        "stability" => stability_plot(&load_rows(dir)?)?,
        other => {
            return Err(CliError::Spec(format!(
                "unknown plot kind '{other}' (known: decay, probability, moments, stability)"
            )));
        }
    };
    std::fs::write(&out, svg)
        .map_err(|e| CliError::Exec(format!("cannot write {}: {e}", out.display())))?;
    Ok(out)
}

fn load_rows(dir: &Path) -> Result<Vec<ResultRow>, CliError> {
    let path = dir.join("rows.ndjson");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Spec(format!("cannot read {}: {e}", path.display())))?;
    from_ndjson(&text).map_err(|e| CliError::Spec(format!("{}: {e}", path.display())))
}

/// Summary rows as column name → value maps.
fn load_summary(dir: &Path) -> Result<Vec<BTreeMap<String, String>>, CliError> {
    let path = dir.join("summary.csv");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Spec(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        return Ok(Vec::new());
    };
    let names: Vec<&str> = header.split(',').collect();
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        out.push(
            names
                .iter()
                .zip(&fields)
                .map(|(n, f)| (n.to_string(), f.to_string()))
                .collect(),
        );
    }
    Ok(out)
}

fn need_column(
    rows: &[BTreeMap<String, String>],
    name: &str,
    plot: &str,
) -> Result<Vec<f64>, CliError> {
    rows.iter()
        .map(|r| {
            r.get(name)
                .ok_or_else(|| {
                    CliError::Spec(format!("{plot} plot needs summary column '{name}'"))
                })
                .and_then(|v| {
                    v.parse::<f64>().map_err(|_| {
                        CliError::Spec(format!(
                            "{plot} plot: column '{name}' value '{v}' is not a number"
                        ))
                    })
                })
        })
        .collect()
}

/// Log local norm against distance from the localization center, one
/// faint polyline per (realization, state), with a pooled straight-line
/// fit annotated by its slope.
fn decay_plot(rows: &[ResultRow]) -> String {
    // Profile rows carry the distance in the flags (`r=<dist>`).
    let mut series: BTreeMap<(u64, String), Vec<(f64, f64)>> = BTreeMap::new();
    for row in rows {
        let Some((state, _)) = row.metric.split_once(".profile@") else {
            continue;
        };
        let Some(r) = row
            .flags
            .split(';')
            .find_map(|f| f.strip_prefix("r=").and_then(|v| v.parse::<f64>().ok()))
        else {
            continue;
        };
        if row.value > LOG_FLOOR {
            series
                .entry((row.realization, state.to_string()))
                .or_default()
                .push((r, row.value.ln()));
        }
    }
    let mut canvas = Canvas::new();
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    for pts in series.values() {
        pooled.extend(pts.iter().copied());
    }
    let frame = Frame::around(&pooled);
    frame.draw_axes(
        &mut canvas,
        "local norm decay",
        "distance from localization center",
        "ln local norm",
    );
    for (i, pts) in series.values_mut().enumerate() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        canvas.polyline(
            &frame.map_all(pts),
            SERIES_COLORS[i % SERIES_COLORS.len()],
            0.8,
            None,
        );
    }
    if pooled.len() >= 2 {
        let xs: Vec<f64> = pooled.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pooled.iter().map(|p| p.1).collect();
        let fit = fit_line(&xs, &ys);
        let x0 = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let x1 = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let line = [
            (x0, fit.intercept + fit.slope * x0),
            (x1, fit.intercept + fit.slope * x1),
        ];
        canvas.polyline(&frame.map_all(&line), "black", 1.6, Some("6,4"));
        canvas.text(
            crate::svg::WIDTH - 30.0,
            54.0,
            13.0,
            "end",
            &format!("fit slope {:.3} (R^2 {:.3})", fit.slope, fit.r_squared),
        );
    }
    canvas.finish()
}

/// Good-box probability against box side, with 95% score intervals and
/// the reference curve 1 - L^(-(3/8)d + eps).
fn probability_plot(summary: &[BTreeMap<String, String>]) -> Result<String, CliError> {
    let mut canvas = Canvas::new();
    if summary.is_empty() {
        let frame = Frame::around(&[]);
        frame.draw_axes(&mut canvas, "good-box probability", "L", "estimate");
        return Ok(canvas.finish());
    }
    // The x axis is whichever sweep coordinate the summary carries.
    let x_name = if summary[0].contains_key("side") {
        "side"
    } else {
        "density"
    };
    let xs = need_column(summary, x_name, "probability")?;
    let points = need_column(summary, "point", "probability")?;
    let lo = need_column(summary, "wilson_lo", "probability")?;
    let hi = need_column(summary, "wilson_hi", "probability")?;
    let reference = need_column(summary, "reference", "probability")?;
    let dims = need_column(summary, "dim", "probability")?;
    let epss = need_column(summary, "eps_slack", "probability")?;

    let mut all: Vec<(f64, f64)> = Vec::new();
    for i in 0..xs.len() {
        all.push((xs[i], points[i]));
        all.push((xs[i], lo[i]));
        all.push((xs[i], hi[i]));
        all.push((xs[i], reference[i].max(0.0)));
    }
    let frame = Frame::around(&all);
    frame.draw_axes(
        &mut canvas,
        "good-box probability",
        x_name,
        "P(box is good)",
    );

    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));

    // Reference curve, densely sampled when x is the box side.
    let d = dims[0];
    let eps = epss[0];
    if x_name == "side" {
        let x0 = xs[order[0]];
        let x1 = xs[*order.last().unwrap()];
        let curve: Vec<(f64, f64)> = (0..=100)
            .map(|i| {
                let l = x0 + (x1 - x0) * i as f64 / 100.0;
                (l, (1.0 - l.powf(-(0.375 * d - eps))).max(0.0))
            })
            .collect();
        canvas.polyline(&frame.map_all(&curve), SERIES_COLORS[1], 1.4, Some("2,3"));
    } else {
        let pts: Vec<(f64, f64)> = order
            .iter()
            .map(|&i| (xs[i], reference[i].max(0.0)))
            .collect();
        canvas.polyline(&frame.map_all(&pts), SERIES_COLORS[1], 1.4, Some("2,3"));
    }
    canvas.text(
        crate::svg::WIDTH - 30.0,
        54.0,
        13.0,
        "end",
        &format!("reference 1 - L^(-(3/8)d + eps), d={d}, eps={eps}"),
    );

    // Estimates with score-interval whiskers.
    let est: Vec<(f64, f64)> = order.iter().map(|&i| (xs[i], points[i])).collect();
    canvas.polyline(&frame.map_all(&est), SERIES_COLORS[0], 1.6, None);
    for &i in &order {
        let (px, py) = frame.map(xs[i], points[i]);
        canvas.circle(px, py, 3.0, SERIES_COLORS[0]);
        let (_, pl) = frame.map(xs[i], lo[i]);
        let (_, ph) = frame.map(xs[i], hi[i]);
        canvas.line((px, pl), (px, ph), SERIES_COLORS[0], 1.2);
        canvas.line((px - 4.0, pl), (px + 4.0, pl), SERIES_COLORS[0], 1.2);
        canvas.line((px - 4.0, ph), (px + 4.0, ph), SERIES_COLORS[0], 1.2);
    }
    Ok(canvas.finish())
}

/// Moment trajectories on log-log axes, one polyline per realization.
fn moments_plot(rows: &[ResultRow]) -> String {
    let mut series: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for row in rows {
        let Some(t) = row
            .metric
            .strip_prefix("moment@")
            .and_then(|v| v.parse::<f64>().ok())
        else {
            continue;
        };
        if t > 0.0 && row.value > LOG_FLOOR {
            series
                .entry(row.realization)
                .or_default()
                .push((t.log10(), row.value.log10()));
        }
    }
    let mut canvas = Canvas::new();
    let pooled: Vec<(f64, f64)> = series.values().flatten().copied().collect();
    let frame = Frame::around(&pooled);
    frame.draw_axes(
        &mut canvas,
        "moment trajectories",
        "log10 t",
        "log10 moment",
    );
    for (i, pts) in series.values_mut().enumerate() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        canvas.polyline(
            &frame.map_all(pts),
            SERIES_COLORS[i % SERIES_COLORS.len()],
            1.2,
            None,
        );
    }
    if pooled.len() >= 2 {
        let xs: Vec<f64> = pooled.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pooled.iter().map(|p| p.1).collect();
        let fit = fit_line(&xs, &ys);
        canvas.text(
            crate::svg::WIDTH - 30.0,
            54.0,
            13.0,
            "end",
            &format!("log-log growth exponent {:.3}", fit.slope),
        );
    }
    canvas.finish()
}

/// Max eigenvalue shift against delta on log-log axes with the fitted
/// slope annotated.
fn stability_plot(rows: &[ResultRow]) -> Result<String, CliError> {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    let mut saw_metric = false;
    for row in rows {
        if row.metric != "max_shift" {
            continue;
        }
        saw_metric = true;
        let Some(&delta) = row.cell.get("delta") else {
            return Err(CliError::Spec(
                "stability plot needs 'delta' as a grid parameter".to_string(),
            ));
        };
        if delta > 0.0 && row.value > LOG_FLOOR {
            pts.push((delta.log10(), row.value.log10()));
        }
    }
    if !rows.is_empty() && !saw_metric {
        return Err(CliError::Spec(
            "stability plot needs rows with metric 'max_shift'".to_string(),
        ));
    }
    let mut canvas = Canvas::new();
    let frame = Frame::around(&pts);
    frame.draw_axes(
        &mut canvas,
        "eigenvalue stability",
        "log10 delta",
        "log10 max shift",
    );
    for &(x, y) in &pts {
        let (px, py) = frame.map(x, y);
        canvas.circle(px, py, 3.0, SERIES_COLORS[0]);
    }
    if let Some(fit) = crate::kinds::stability_loglog(rows) {
        // The fit is in natural logs; the slope is scale free.
        let x0 = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let x1 = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let ln10 = std::f64::consts::LN_10;
        let y_at = |x10: f64| (fit.intercept + fit.slope * (x10 * ln10)) / ln10;
        canvas.polyline(
            &frame.map_all(&[(x0, y_at(x0)), (x1, y_at(x1))]),
            "black",
            1.6,
            Some("6,4"),
        );
        canvas.text(
            crate::svg::WIDTH - 30.0,
            54.0,
            13.0,
            "end",
            &format!("log-log slope {:.3}", fit.slope),
        );
    }
    Ok(canvas.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile_row(realization: u64, r: f64, value: f64) -> ResultRow {
        ResultRow {
            id: "t".into(),
            cell: BTreeMap::new(),
            realization,
            seed: 0,
            metric: format!("s0.profile@{r}"),
            value,
            flags: format!("r={r}"),
        }
    }

    #[test]
    fn synthetic_exponential_decay_fits_slope_minus_one() {
        let rows: Vec<ResultRow> = (0..30)
            .map(|i| {
                let r = i as f64 * 0.5;
                profile_row(0, r, (-r).exp())
            })
            .collect();
        let svg = decay_plot(&rows);
        let tag = svg
            .lines()
            .find(|l| l.contains("fit slope"))
            .expect("annotation present");
        let value: f64 = tag
            .split("fit slope ")
            .nth(1)
            .unwrap()
            .split_whitespace()
            .next()
            .unwrap()
            .parse()
            .unwrap();
        assert!((value + 1.0).abs() < 1e-6, "slope {value}");
    }

    #[test]
    fn empty_results_still_produce_axes() {
        let svg = decay_plot(&[]);
        assert!(svg.contains("<svg"));
        assert!(svg.contains("local norm decay"));
        assert!(!svg.contains("fit slope"));
        let svg = probability_plot(&[]).unwrap();
        assert!(svg.contains("good-box probability"));
    }

    #[test]
    fn probability_plot_draws_reference_curve() {
        let mk = |side: f64, point: f64| -> BTreeMap<String, String> {
            [
                ("side", side.to_string()),
                ("point", point.to_string()),
                ("wilson_lo", (point - 0.05).to_string()),
                ("wilson_hi", (point + 0.02).to_string()),
                ("reference", "0.5".to_string()),
                ("dim", "1".to_string()),
                ("eps_slack", "0.1".to_string()),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
        };
        let svg = probability_plot(&[mk(20.0, 0.9), mk(40.0, 0.95)]).unwrap();
        assert!(svg.contains("reference 1 - L^(-(3/8)d + eps)"));
    }

    #[test]
    fn probability_plot_names_missing_columns() {
        let row: BTreeMap<String, String> =
            [("side".to_string(), "20".to_string())].into_iter().collect();
        let err = probability_plot(&[row]).unwrap_err();
        assert!(err.to_string().contains("'point'"));
    }

    #[test]
    fn stability_plot_requires_delta_cells() {
        let rows = vec![ResultRow {
            id: "t".into(),
            cell: BTreeMap::new(),
            realization: 0,
            seed: 0,
            metric: "max_shift".into(),
            value: 0.1,
            flags: String::new(),
        }];
        let err = stability_plot(&rows).unwrap_err();
        assert!(err.to_string().contains("delta"));
    }

    #[test]
    fn stability_plot_annotates_unit_slope() {
        let mut rows = Vec::new();
        for (i, delta) in [1e-2, 1e-3, 1e-4].iter().enumerate() {
            let mut cell = BTreeMap::new();
            cell.insert("delta".to_string(), *delta);
            rows.push(ResultRow {
                id: "t".into(),
                cell,
                realization: i as u64,
                seed: 0,
                metric: "max_shift".into(),
                value: 3.0 * delta,
                flags: String::new(),
            });
        }
        let svg = stability_plot(&rows).unwrap();
        let tag = svg.lines().find(|l| l.contains("log-log slope")).unwrap();
        assert!(tag.contains("1.000"), "{tag}");
    }
}
