//! SVG heatmap of a correlation matrix: semantic metrics as rows, spatial
//! metrics as columns, cell color on a blue-white-red scale over [-1, 1].

use std::fmt::Write;

use crate::analysis::CorrelationMatrix;

const CELL_W: u32 = 96;
const CELL_H: u32 = 48;
const LEFT: u32 = 104;
const TOP: u32 = 72;
const LEGEND_H: u32 = 56;

pub const POSITIVE: (u8, u8, u8) = (178, 24, 43);
pub const NEGATIVE: (u8, u8, u8) = (33, 102, 172);
pub const MISSING_FILL: &str = "#cccccc";

/// Linear blend from white at 0 to the end color at |rho| = 1.
pub fn rho_color(rho: f64) -> String {
    let t = rho.abs().min(1.0);
    let end = if rho >= 0.0 { POSITIVE } else { NEGATIVE };
    let mix = |c: u8| (255.0 + (f64::from(c) - 255.0) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(end.0), mix(end.1), mix(end.2))
}

pub fn format_rho(rho: f64) -> String {
    let s = format!("{rho:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn render_heatmap(m: &CorrelationMatrix) -> String {
    let cols = m.cols.len() as u32;
    let rows = m.rows.len() as u32;
    let width = LEFT + cols * CELL_W + 16;
    let height = TOP + rows * CELL_H + LEGEND_H;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r##"<rect width="{width}" height="{height}" fill="#ffffff"/>"##);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-size="16" text-anchor="middle">Spearman correlation: {} (n = {})</text>"#,
        width / 2,
        escape(&m.condition),
        m.total_pairs
    );
    for (j, c) in m.cols.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            LEFT + j as u32 * CELL_W + CELL_W / 2,
            TOP - 10,
            c.name()
        );
    }
    for (i, r) in m.rows.iter().enumerate() {
        let y = TOP + i as u32 * CELL_H;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{}</text>"#,
            LEFT - 8,
            y + CELL_H / 2 + 4,
            r.name()
        );
        for (j, cell) in m.cells[i].iter().enumerate() {
            let x = LEFT + j as u32 * CELL_W;
            let (fill, label, ink) = match cell.rho {
                Some(rho) => (
                    rho_color(rho),
                    format_rho(rho),
                    if rho.abs() > 0.6 { "#ffffff" } else { "#000000" },
                ),
                None => (MISSING_FILL.to_string(), "\u{2013}".to_string(), "#000000"),
            };
            let _ = writeln!(
                svg,
                r##"<g class="cell" data-row="{}" data-col="{}" data-n="{}"><rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{fill}" stroke="#ffffff"/><text x="{}" y="{}" font-size="13" text-anchor="middle" fill="{ink}">{label}</text></g>"##,
                r.name(),
                cell.spatial.name(),
                cell.n_pairs,
                x + CELL_W / 2,
                y + CELL_H / 2 + 5,
            );
        }
    }
    // Legend: -1, 0, +1 swatches.
    let ly = TOP + rows * CELL_H + 16;
    for (k, v) in [-1.0, -0.5, 0.0, 0.5, 1.0].iter().enumerate() {
        let x = LEFT + k as u32 * 40;
        let _ = writeln!(
            svg,
            r#"<rect x="{x}" y="{ly}" width="40" height="14" fill="{}"/><text x="{}" y="{}" font-size="10" text-anchor="middle">{}</text>"#,
            rho_color(*v),
            x + 20,
            ly + 26,
            format_rho(*v)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
