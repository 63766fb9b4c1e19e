//! Deterministic emission of results: CSV tables with commented metadata
//! headers, JSONL streams, and self-contained SVG heatmaps. Identical
//! inputs always produce byte-identical files.

use anyhow::{Context, Result};
use serde::Serialize;
use std::io::Write;
use std::path::Path;

use crate::dataset::PipelineReport;
use crate::sweep::SweepResult;

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let file = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))?;
    Ok(std::io::BufWriter::new(file))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Sweep table: `#`-prefixed metadata, one column-header row, one row per
/// grid cell in lexicographic (x, y) order. An empty sweep yields only the
/// headers.
pub fn write_sweep_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let cfg = &result.config;
    writeln!(out, "# synthetic sweep")?;
    writeln!(
        out,
        "# partition_sizes: {}",
        cfg.partition_sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",")
    )?;
    writeln!(out, "# n_seeds: {}", cfg.n_seeds)?;
    writeln!(out, "# trials_per_cell: {}", cfg.trials_per_cell)?;
    writeln!(out, "# master_seed: {}", cfg.master_seed)?;
    writeln!(
        out,
        "# control: {}",
        match cfg.control.as_config() {
            None => "none (baseline)".to_string(),
            Some(c) => format!(
                "alpha={} lambda={} solver={:?} max_steps={}",
                c.alpha, c.lambda, c.solver, c.max_steps
            ),
        }
    )?;
    writeln!(
        out,
        "# collation: grid cells are weighted equally when averaged"
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "x",
        "y",
        "skipped",
        "feasible_at_start",
        "true_mean",
        "true_se",
        "true_low_fraction",
        "true_low_se",
        "false_mean",
        "false_se",
        "false_low_fraction",
        "false_low_se",
    ])?;
    for cell in &result.cells {
        let t = cell.true_stats.as_ref();
        let f = cell.false_stats.as_ref();
        w.write_record([
            cell.x.to_string(),
            cell.y.to_string(),
            cell.skipped.clone().unwrap_or_default(),
            cell.feasible_at_start
                .map(|b| b.to_string())
                .unwrap_or_default(),
            fmt_opt(t.map(|s| s.mean_normalized)),
            fmt_opt(t.map(|s| s.se_normalized)),
            fmt_opt(t.map(|s| s.low_fraction)),
            fmt_opt(t.map(|s| s.se_low)),
            fmt_opt(f.map(|s| s.mean_normalized)),
            fmt_opt(f.map(|s| s.se_normalized)),
            fmt_opt(f.map(|s| s.low_fraction)),
            fmt_opt(f.map(|s| s.se_low)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sweep as JSONL: first line carries the config, then one line per cell.
pub fn write_sweep_jsonl(result: &SweepResult, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    #[derive(Serialize)]
    struct Meta<'a> {
        meta: &'a crate::config::SyntheticConfig,
    }
    serde_json::to_writer(&mut out, &Meta { meta: &result.config })?;
    out.write_all(b"\n")?;
    for cell in &result.cells {
        serde_json::to_writer(&mut out, cell)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Map a value in [0, 1] to a blue-to-red heat color.
fn heat_color(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    // Two-segment lerp: deep blue -> warm yellow -> red.
    let (r, g, b) = if v < 0.5 {
        let t = v / 0.5;
        (
            (40.0 + t * (250.0 - 40.0)) as u8,
            (60.0 + t * (210.0 - 60.0)) as u8,
            (150.0 - t * (150.0 - 60.0)) as u8,
        )
    } else {
        let t = (v - 0.5) / 0.5;
        (
            250u8,
            (210.0 - t * (210.0 - 60.0)) as u8,
            (60.0 - t * 30.0) as u8,
        )
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Side-by-side heatmaps of the true- and false-content mean normalized
/// cascade sizes across the sweep grid. Skipped cells render gray.
pub fn write_sweep_svg(result: &SweepResult, path: &Path) -> Result<()> {
    let nx = result.config.x_range.subdivisions;
    let ny = result.config.y_range.subdivisions;
    let cell_px = 24.0_f64;
    let margin = 40.0_f64;
    let panel_w = nx as f64 * cell_px;
    let panel_h = ny as f64 * cell_px;
    let gap = 60.0;
    let width = margin * 2.0 + panel_w * 2.0 + gap;
    let height = margin * 2.0 + panel_h + 30.0;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (panel, title) in [(0usize, "true content"), (1usize, "false content")] {
        let x0 = margin + panel as f64 * (panel_w + gap);
        let y0 = margin;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\">mean \
             normalized cascade size, {title}</text>\n",
            x0,
            y0 - 12.0
        ));
        for (i, cell) in result.cells.iter().enumerate() {
            let ix = i / ny;
            let iy = i % ny;
            let fill = match (
                &cell.skipped,
                if panel == 0 {
                    cell.true_stats.as_ref()
                } else {
                    cell.false_stats.as_ref()
                },
            ) {
                (Some(_), _) | (_, None) => "#bbbbbb".to_string(),
                (None, Some(stats)) => heat_color(stats.mean_normalized),
            };
            // y axis grows upward: larger y at the top.
            let px = x0 + ix as f64 * cell_px;
            let py = y0 + (ny - 1 - iy) as f64 * cell_px;
            svg.push_str(&format!(
                "<rect x=\"{px}\" y=\"{py}\" width=\"{cell_px}\" height=\"{cell_px}\" \
                 fill=\"{fill}\" stroke=\"white\" stroke-width=\"1\"><title>x={} y={}</title>\
                 </rect>\n",
                cell.x, cell.y
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">x: {} .. {}\
             </text>\n",
            x0,
            y0 + panel_h + 16.0,
            result.config.x_range.min,
            result.config.x_range.max
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             transform=\"rotate(-90 {} {})\">y: {} .. {}</text>\n",
            x0 - 8.0,
            y0 + panel_h,
            x0 - 8.0,
            y0 + panel_h,
            result.config.y_range.min,
            result.config.y_range.max
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Pipeline metrics table: metadata header plus one row per policy.
pub fn write_pipeline_csv(report: &PipelineReport, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "# fit-and-replay pipeline")?;
    writeln!(out, "# total_cascades: {}", report.total_cascades)?;
    writeln!(
        out,
        "# classes: {} before merge, {} after",
        report.classes_before_merge, report.classes_after_merge
    )?;
    writeln!(out, "# low_threshold: R_inf < {}", report.low_threshold)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "policy",
        "samples_per_label",
        "true_mean_r_inf",
        "true_low_prob",
        "false_mean_r_inf",
        "false_low_prob",
    ])?;
    for m in &report.policies {
        w.write_record([
            m.policy.clone(),
            m.samples_per_label.to_string(),
            m.true_mean_r_inf.to_string(),
            m.true_low_prob.to_string(),
            m.false_mean_r_inf.to_string(),
            m.false_low_prob.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON line per policy.
pub fn write_pipeline_jsonl(report: &PipelineReport, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    for m in &report.policies {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Any serializable records, one JSON line each.
pub fn write_records_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    let mut out = create(path)?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// A small named-column table, used for simulate/control summaries and
/// the extinction-bound check.
pub fn write_table_csv(
    comments: &[String],
    header: &[&str],
    rows: &[Vec<String>],
    path: &Path,
) -> Result<()> {
    let mut out = create(path)?;
    for line in comments {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SyntheticConfig;

    #[test]
    fn empty_sweep_yields_header_only_csv() {
        let result = SweepResult {
            config: SyntheticConfig::balanced_two_class(),
            cells: Vec::new(),
        };
        let dir = std::env::temp_dir().join("dropcast-output-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.csv");
        write_sweep_csv(&result, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let data_lines: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.is_empty())
            .collect();
        assert_eq!(data_lines.len(), 1);
        assert!(data_lines[0].starts_with("x,y,"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn heat_colors_span_the_gradient() {
        assert_eq!(heat_color(0.0), "#283c96");
        assert_ne!(heat_color(0.5), heat_color(1.0));
        assert_eq!(heat_color(2.0), heat_color(1.0));
    }
}
