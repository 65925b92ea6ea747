//! Per-cell aggregation and a markdown digest of result tables.

use std::fmt::Write as _;

use serde::Serialize;

use super::results::ResultRow;
use super::median;
use crate::evalmetrics::fit_loglog_slope;

/// Aggregate of all trials in one `(experiment, method, p, h, n, d, s_min, delta)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub experiment: String,
    pub method: String,
    pub p: usize,
    pub h: usize,
    pub n: usize,
    pub d: usize,
    pub s_min: f64,
    pub delta: f64,
    pub trials: usize,
    pub success_fraction: f64,
    pub support_fraction: f64,
    pub rank_fraction: f64,
    pub median_op_norm_error: f64,
    pub median_frob_error_s: f64,
    pub median_frob_error_l: f64,
    pub median_iterations: f64,
}

/// Groups rows by cell; output is ordered like the sorted table.
pub fn summarize(rows: &[ResultRow]) -> Vec<CellSummary> {
    let mut sorted = rows.to_vec();
    super::sort_rows(&mut sorted);
    sorted
        .chunk_by(|a, b| a.cell_cmp(b).is_eq())
        .map(|g| {
            let t = g.len() as f64;
            let frac = |f: fn(&ResultRow) -> bool| g.iter().filter(|r| f(r)).count() as f64 / t;
            let r0 = &g[0];
            CellSummary {
                experiment: r0.experiment.clone(),
                method: r0.method.clone(),
                p: r0.p,
                h: r0.h,
                n: r0.n,
                d: r0.d,
                s_min: r0.s_min,
                delta: r0.delta,
                trials: g.len(),
                success_fraction: frac(ResultRow::success),
                support_fraction: frac(|r| r.exact_signed_support),
                rank_fraction: frac(|r| r.rank_recovered),
                median_op_norm_error: median(g.iter().map(|r| r.op_norm_error)),
                median_frob_error_s: median(g.iter().map(|r| r.frob_error_s)),
                median_frob_error_l: median(g.iter().map(|r| r.frob_error_l)),
                median_iterations: median(g.iter().map(|r| r.iterations as f64)),
            }
        })
        .collect()
}

fn num(x: f64) -> String {
    if x.is_nan() {
        "-".into()
    } else {
        format!("{x:.4}")
    }
}

/// Markdown tables of cell summaries, plus log-log slopes of the median
/// operator-norm error wherever a series spans several `n`.
pub fn markdown_report(rows: &[ResultRow]) -> String {
    let cells = summarize(rows);
    let mut out = String::from("# Results\n\n");
    if cells.is_empty() {
        out.push_str("No rows.\n");
        return out;
    }
    out.push_str(
        "| experiment | method | p | h | n | d | s_min | delta | trials | success | support | rank | op err | frob S | frob L | iters |\n",
    );
    out.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|\n");
    for c in &cells {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {:.2} | {:.2} | {:.2} | {} | {} | {} | {} |",
            c.experiment,
            c.method,
            c.p,
            c.h,
            c.n,
            c.d,
            c.s_min,
            c.delta,
            c.trials,
            c.success_fraction,
            c.support_fraction,
            c.rank_fraction,
            num(c.median_op_norm_error),
            num(c.median_frob_error_s),
            num(c.median_frob_error_l),
            num(c.median_iterations),
        );
    }
    let mut slopes = String::new();
    for series in cells.chunk_by(|a, b| {
        (&a.experiment, &a.method, a.p, a.h, a.d, a.s_min.to_bits(), a.delta.to_bits())
            == (&b.experiment, &b.method, b.p, b.h, b.d, b.s_min.to_bits(), b.delta.to_bits())
    }) {
        let pts: Vec<(f64, f64)> = series
            .iter()
            .filter(|c| c.n > 0 && c.median_op_norm_error > 0.0 && c.median_op_norm_error.is_finite())
            .map(|c| (c.n as f64, c.median_op_norm_error))
            .collect();
        if pts.len() < 2 {
            continue;
        }
        if let Ok(fit) = fit_loglog_slope(&pts) {
            let c = &series[0];
            let _ = writeln!(
                slopes,
                "| {} | {} | {} | {} | {:.3} | {:.3} |",
                c.experiment, c.method, c.p, c.h, fit.slope, fit.r_squared
            );
        }
    }
    if !slopes.is_empty() {
        out.push_str("\n## Error scaling in n\n\n| experiment | method | p | h | slope | r² |\n|---|---|---|---|---|---|\n");
        out.push_str(&slopes);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(n: usize, trial: u32, ok: bool, err: f64) -> ResultRow {
        ResultRow {
            experiment: "e".into(),
            p: 5,
            h: 1,
            n,
            d: 2,
            s_min: 0.3,
            delta: 0.0,
            trial,
            seed: trial as u64,
            method: "lvglasso".into(),
            lambda: 0.1,
            gamma: 1.0,
            exact_signed_support: ok,
            support_precision: 1.0,
            support_recall: 1.0,
            sign_errors: 0,
            rank_recovered: true,
            effective_rank: 1,
            op_norm_error: err,
            frob_error_s: err,
            frob_error_l: f64::NAN,
            iterations: 10,
            wall_ms: 0.0,
        }
    }

    #[test]
    fn cells_aggregate_trials() {
        let rows = vec![
            row(100, 0, true, 1.0),
            row(400, 0, true, 0.5),
            row(100, 1, false, 3.0),
            row(100, 2, true, f64::NAN),
        ];
        let cells = summarize(&rows);
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].n, 100);
        assert_eq!(cells[0].trials, 3);
        assert!((cells[0].success_fraction - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(cells[0].median_op_norm_error, 2.0);
        assert!(cells[0].median_frob_error_l.is_nan());
        let md = markdown_report(&rows);
        assert!(md.contains("| e | lvglasso | 5 | 1 | 100 |"));
        // slope of (100, 2) -> (400, 0.5) is -1
        assert!(md.contains("-1.000"));
    }

    #[test]
    fn empty_report() {
        assert!(markdown_report(&[]).contains("No rows"));
    }
}
