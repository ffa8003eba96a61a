//! Aligned plain-text rendering of a results table.
//!
//! The text is a view of the JSON results: every number printed here is a
//! rounded copy of a value stored in the table.

use std::fmt::Write;

use crate::dataset::Meta;
use crate::domain::SearchSpace;
use crate::infer::{ResultsTable, Tail};

/// Fixed decimals with trailing zeros (and a bare point) removed.
fn short(x: f64, decimals: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{x:.decimals$}");
    let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
    if s == "-0" { "0".into() } else { s }
}

fn pad_table(rows: &[Vec<String>]) -> String {
    let ncol = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncol).map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().enumerate().map(|(c, cell)| format!("{cell:>w$}", w = widths[c])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Position column labels: `"axis (unit)"` per lattice axis, `x y z` on meshes.
pub fn axis_headers(meta: &Meta, space: &SearchSpace) -> Vec<String> {
    match space {
        SearchSpace::Lattice(_) => meta.axes.iter().zip(&meta.units).map(|(a, u)| if u.is_empty() { a.clone() } else { format!("{a} ({u})") }).collect(),
        SearchSpace::Mesh(m) => ["x", "y", "z"].iter().take(m.vertices().first().map_or(0, Vec::len)).map(|s| s.to_string()).collect(),
    }
}

/// Renders the peak table, cluster list and footnote block. `axis_headers`
/// label the position columns (for example `"time (ms)"`).
pub fn render_report(table: &ResultsTable, axis_headers: &[String]) -> String {
    let mut out = String::new();
    let two_sided = table.peaks.iter().any(|p| p.tail == Tail::Negative) || table.clusters.iter().any(|c| c.tail == Tail::Negative);

    out.push_str("Peak level\n");
    let mut header: Vec<String> = ["p(FWE-corr)", "q(FDR-corr)", "T", "Z", "p(uncorr)", "cluster"].map(String::from).to_vec();
    if two_sided {
        header.push("sign".into());
    }
    header.extend(axis_headers.iter().cloned());
    let mut rows = vec![header];
    for p in &table.peaks {
        let mut row = vec![
            format!("{:.3}", p.p_fwe),
            format!("{:.3}", p.q_fdr),
            format!("{:.2}", p.t),
            format!("{:.2}", p.z),
            format!("{:.3}", p.p_unc),
            p.cluster_id.to_string(),
        ];
        if two_sided {
            row.push(if p.tail == Tail::Positive { "+".into() } else { "-".into() });
        }
        row.extend(p.position.iter().map(|&x| short(x, 3)));
        rows.push(row);
    }
    out.push_str(&pad_table(&rows));
    if table.peaks.is_empty() {
        out.push_str("(no local maxima above the height threshold)\n");
    }

    out.push_str("\nCluster level\n");
    let mut rows = vec![["cluster", "k (bins)", "peak T", "peak vertex"].map(String::from).to_vec()];
    for c in &table.clusters {
        rows.push(vec![c.id.to_string(), c.size_vertices.to_string(), format!("{:.2}", c.peak_t), c.peak_vertex.to_string()]);
    }
    out.push_str(&pad_table(&rows));

    let f = &table.footnote;
    out.push('\n');
    let dof = match f.dof {
        Some(d) => format!("Degrees of freedom = {}", short(d, 2)),
        None => "Gaussian field".to_string(),
    };
    let _ = writeln!(out, "Height threshold: T = {:.2}, p = {:.3}; {dof}", f.height_threshold, f.height_p);
    if !f.fwhm.is_empty() {
        let fwhm: Vec<String> = f.fwhm.iter().map(|&x| short(x, 1)).collect();
        let _ = writeln!(out, "Smoothness FWHM = {} {{bins}}", fwhm.join(" "));
    }
    let _ = writeln!(
        out,
        "Expected bins per cluster, <k> = {:.3}; Search vol.: {} bins; {:.1} resels",
        f.expected_bins_per_cluster, f.search_volume_bins, f.resels
    );
    let _ = writeln!(out, "Expected number of clusters, <c> = {:.2}", f.expected_clusters);
    if let Some(q) = f.expected_fdr {
        let _ = writeln!(out, "Expected false discovery rate, <= {:.2}", q);
    }
    let ct = &table.corrected_threshold;
    let _ = writeln!(out, "FWE-corrected height threshold: T = {:.2} at alpha = {}", ct.t, short(ct.alpha, 4));
    if let Some(p) = table.p_fwe {
        let _ = writeln!(out, "FWE p-value of the global maximum = {:.3}", p);
    }
    if !table.notes.is_empty() {
        out.push_str("\nNotes\n");
        for n in &table.notes {
            let _ = writeln!(out, "  {n}");
        }
    }
    out
}
