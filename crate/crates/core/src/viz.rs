//! SVG panels for runs on the quadratic task: sampled actions, the policy mean
//! and its one-standard-deviation ellipse.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::{
    read_csv, write_atomic, DidacticRow, ExperimentConfig, PgTraceRow, CONFIG_FILE, DIDACTIC_FILE, PG_TRACE_FILE,
};

pub const DIDACTIC_SVG: &str = "didactic.svg";
pub const PG_TRACE_SVG: &str = "pg_trace.svg";

const PANEL: f64 = 160.0;
const PAD: f64 = 8.0;
const COLUMNS: usize = 10;
/// Half width of the plotted action square.
const EXTENT: f64 = 1.5;

/// One panel's content.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub samples: Vec<[f64; 2]>,
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

/// Groups didactic rows into one panel per iteration.
pub fn panels_from_rows(rows: &[DidacticRow]) -> Vec<Panel> {
    let mut by_iter: BTreeMap<usize, Panel> = BTreeMap::new();
    for row in rows {
        let panel = by_iter.entry(row.iteration).or_insert_with(|| Panel {
            title: format!("iteration {}", row.iteration),
            samples: Vec::new(),
            mean: [row.mean0, row.mean1],
            std: [row.std0, row.std1],
        });
        if let (Some(a0), Some(a1)) = (row.a0, row.a1) {
            panel.samples.push([a0, a1]);
        }
    }
    by_iter.into_values().collect()
}

/// Panels in a grid. Each panel draws in action coordinates, so ellipse radii
/// are the per-dimension standard deviations themselves.
pub fn render_panels(panels: &[Panel]) -> String {
    let cols = COLUMNS.min(panels.len().max(1));
    let rows = panels.len().div_ceil(cols).max(1);
    let cell = PANEL + PAD;
    let scale = PANEL / (2.0 * EXTENT);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="10">"#,
        w = cols as f64 * cell + PAD,
        h = rows as f64 * (cell + 12.0) + PAD
    );
    for (i, p) in panels.iter().enumerate() {
        let x0 = PAD + (i % cols) as f64 * cell;
        let y0 = PAD + (i / cols) as f64 * (cell + 12.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, x0, y0 + 9.0, p.title);
        let _ = writeln!(
            svg,
            r##"<rect x="{x0}" y="{}" width="{PANEL}" height="{PANEL}" fill="#fafafa" stroke="#999"/>"##,
            y0 + 12.0
        );
        let _ = writeln!(
            svg,
            r#"<g transform="translate({} {}) scale({scale} {})">"#,
            x0 + PANEL / 2.0,
            y0 + 12.0 + PANEL / 2.0,
            -scale
        );
        let _ = writeln!(
            svg,
            r##"<path d="M{e} 0H{f}M0 {e}V{f}" stroke="#ccc" vector-effect="non-scaling-stroke"/>"##,
            e = -EXTENT,
            f = EXTENT
        );
        for s in &p.samples {
            if s[0].abs() <= EXTENT && s[1].abs() <= EXTENT {
                let _ = writeln!(
                    svg,
                    r##"<circle class="sample" cx="{}" cy="{}" r="{}" fill="#3060c0" fill-opacity="0.6"/>"##,
                    s[0],
                    s[1],
                    1.5 / scale
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<ellipse class="policy" cx="{}" cy="{}" rx="{}" ry="{}" fill="none" stroke="black" vector-effect="non-scaling-stroke"/>"#,
            p.mean[0], p.mean[1], p.std[0], p.std[1]
        );
        let _ = writeln!(
            svg,
            r#"<circle class="mean" cx="{}" cy="{}" r="{}" fill="black"/>"#,
            p.mean[0],
            p.mean[1],
            2.5 / scale
        );
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    svg
}

/// Ellipses of every minibatch step in one panel, with the mean's path, plus
/// a line chart of the mean's norm.
pub fn render_pg_trace(trace: &[PgTraceRow], samples: &[[f64; 2]]) -> String {
    let scale = PANEL * 2.0 / (2.0 * EXTENT);
    let size = PANEL * 2.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="10">"#,
        2.0 * size + 3.0 * PAD,
        size + 2.0 * PAD + 12.0
    );
    let _ = writeln!(svg, r#"<text x="{PAD}" y="{}">policy over minibatch steps</text>"#, PAD + 9.0);
    let _ = writeln!(
        svg,
        r#"<g transform="translate({} {}) scale({scale} {})">"#,
        PAD + size / 2.0,
        PAD + 12.0 + size / 2.0,
        -scale
    );
    for s in samples {
        let _ = writeln!(
            svg,
            r##"<circle class="sample" cx="{}" cy="{}" r="{}" fill="#3060c0" fill-opacity="0.5"/>"##,
            s[0],
            s[1],
            1.5 / scale
        );
    }
    for row in trace {
        let _ = writeln!(
            svg,
            r#"<ellipse class="policy" cx="{}" cy="{}" rx="{}" ry="{}" fill="none" stroke="black" stroke-opacity="0.3" vector-effect="non-scaling-stroke"/>"#,
            row.mean0, row.mean1, row.std0, row.std1
        );
    }
    if !trace.is_empty() {
        let points: Vec<String> = trace.iter().map(|r| format!("{},{}", r.mean0, r.mean1)).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="red" vector-effect="non-scaling-stroke"/>"#,
            points.join(" ")
        );
    }
    svg.push_str("</g>\n");

    let x0 = 2.0 * PAD + size;
    let y0 = PAD + 12.0;
    let _ = writeln!(svg, r#"<text x="{x0}" y="{}">mean norm per step</text>"#, PAD + 9.0);
    let _ = writeln!(
        svg,
        r##"<rect x="{x0}" y="{y0}" width="{size}" height="{size}" fill="none" stroke="#999"/>"##
    );
    let top = trace.iter().map(|r| r.mu_norm).fold(0.0, f64::max).max(1e-12);
    let steps = trace.len().max(2) as f64 - 1.0;
    let points: Vec<String> = trace
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{:.3},{:.3}", x0 + size * i as f64 / steps, y0 + size * (1.0 - r.mu_norm / top)))
        .collect();
    let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="black"/>"#, points.join(" "));
    svg.push_str("</svg>\n");
    svg
}

/// Writes the figures for a quadratic-task run directory and returns their
/// paths.
pub fn emit_didactic_viz(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let config = ExperimentConfig::load(&run_dir.join(CONFIG_FILE))?;
    if config.env != "quadratic" {
        return Err(Error::InvalidArgument(format!(
            "figures need a quadratic-task run, {} ran {:?}",
            run_dir.display(),
            config.env
        )));
    }
    let rows: Vec<DidacticRow> = read_csv(&run_dir.join(DIDACTIC_FILE))?;
    let panels = panels_from_rows(&rows);
    let mut written = Vec::new();
    let path = run_dir.join(DIDACTIC_SVG);
    write_atomic(&path, render_panels(&panels).as_bytes())?;
    written.push(path);

    let trace_path = run_dir.join(PG_TRACE_FILE);
    if trace_path.exists() {
        let trace: Vec<PgTraceRow> = read_csv(&trace_path)?;
        let samples = panels.first().map(|p| p.samples.clone()).unwrap_or_default();
        let path = run_dir.join(PG_TRACE_SVG);
        write_atomic(&path, render_pg_trace(&trace, &samples).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(tag: &str, name: &str) -> f64 {
        let start = tag.find(&format!(" {name}=\"")).unwrap() + name.len() + 3;
        let end = start + tag[start..].find('"').unwrap();
        tag[start..end].parse().unwrap()
    }

    fn row(iteration: usize, a: Option<[f64; 2]>, std: [f64; 2]) -> DidacticRow {
        DidacticRow {
            iteration,
            a0: a.map(|a| a[0]),
            a1: a.map(|a| a[1]),
            mean0: 0.1,
            mean1: -0.2,
            std0: std[0],
            std1: std[1],
        }
    }

    #[test]
    fn empty_iteration_draws_only_the_ellipse() {
        let panels = panels_from_rows(&[row(1, None, [0.3, 0.4])]);
        assert_eq!(panels.len(), 1);
        let svg = render_panels(&panels);
        assert_eq!(svg.matches("class=\"sample\"").count(), 0);
        assert_eq!(svg.matches("class=\"policy\"").count(), 1);
    }

    #[test]
    fn ellipse_radii_are_the_standard_deviations() {
        let rows = vec![
            row(1, None, [0.3, 0.4]),
            row(1, Some([0.5, 0.5]), [0.3, 0.4]),
            row(2, None, [0.25, 0.125]),
        ];
        let svg = render_panels(&panels_from_rows(&rows));
        let ellipses: Vec<&str> = svg.lines().filter(|l| l.contains("class=\"policy\"")).collect();
        assert_eq!(ellipses.len(), 2);
        for (tag, std) in ellipses.iter().zip([[0.3, 0.4], [0.25, 0.125]]) {
            assert_eq!(attr(tag, "rx"), std[0]);
            assert_eq!(attr(tag, "ry"), std[1]);
            assert_eq!(attr(tag, "cx"), 0.1);
        }
        assert_eq!(svg.matches("class=\"sample\"").count(), 1);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn trace_has_one_ellipse_per_step() {
        let trace: Vec<PgTraceRow> = (1..=5)
            .map(|s| PgTraceRow {
                step: s,
                loss: 0.0,
                mean0: 0.1 * s as f64,
                mean1: 0.0,
                std0: 0.5,
                std1: 0.5,
                mu_norm: 0.1 * s as f64,
            })
            .collect();
        let svg = render_pg_trace(&trace, &[[0.0, 0.0]]);
        assert_eq!(svg.matches("class=\"policy\"").count(), 5);
    }
}
