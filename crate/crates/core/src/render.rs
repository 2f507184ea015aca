//! SVG rendering of credibility maps.
//!
//! The lattice is drawn in cell units inside a scaled group: one gray
//! background rectangle plus one rectangle per horizontal run of equal
//! non-gray flags. Row 0 is the largest `λ`; columns run from the oldest
//! time point on the left to the youngest on the right.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scale_space::{CredibilityMap, Flag};

const PLOT_W: f64 = 900.0;
const PLOT_H: f64 = 450.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 20.0;
const MARGIN_B: f64 = 60.0;

const GRAY: &str = "#bdbdbd";
const RED: &str = "#d7301f";
const BLUE: &str = "#2b6cb0";

fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

/// Render `map`; `markers` are level indices drawn as horizontal lines.
pub fn render_map_svg_string(map: &CredibilityMap, markers: &[usize]) -> Result<String> {
    let rows = map.levels();
    let cols = map.points();
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("cannot render an empty map"));
    }
    let sx = PLOT_W / cols as f64;
    let sy = PLOT_H / rows as f64;
    let width = MARGIN_L + PLOT_W + MARGIN_R;
    let height = MARGIN_T + PLOT_H + MARGIN_B;

    let mut s = String::with_capacity(64 * rows * 8);
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<g id="lattice" transform="translate({MARGIN_L},{MARGIN_T}) scale({sx},{sy})" shape-rendering="crispEdges">"#
    );
    let _ = writeln!(s, r#"<rect class="none" x="0" y="0" width="{cols}" height="{rows}" fill="{GRAY}"/>"#);
    for row in 0..rows {
        let level = rows - 1 - row;
        let flags = &map.flags[level];
        let mut j = 0;
        while j < cols {
            let f = flags[j];
            let mut end = j + 1;
            while end < cols && flags[end] == f {
                end += 1;
            }
            let (class, color) = match f {
                Flag::Increasing => ("inc", RED),
                Flag::Decreasing => ("dec", BLUE),
                Flag::None => ("", ""),
            };
            if !class.is_empty() {
                let _ = writeln!(
                    s,
                    r#"<rect class="{class}" x="{j}" y="{row}" width="{}" height="1" fill="{color}"/>"#,
                    end - j
                );
            }
            j = end;
        }
    }
    let _ = writeln!(s, "</g>");

    // frame
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{PLOT_W}" height="{PLOT_H}" fill="none" stroke="black"/>"#
    );

    // markers
    for &m in markers {
        if m >= rows {
            return Err(Error::invalid(format!("marker level {m} outside the map")));
        }
        let y = MARGIN_T + ((rows - 1 - m) as f64 + 0.5) * sy;
        let _ = writeln!(
            s,
            r#"<line class="marker" x1="{MARGIN_L}" y1="{y}" x2="{}" y2="{y}" stroke="black" stroke-dasharray="6,4"/>"#,
            MARGIN_L + PLOT_W
        );
    }

    // time axis in years BP, oldest on the left
    let pts = map.times.points();
    let (s0, s1) = (pts[0], pts[cols - 1]);
    let x_of = |date: f64| {
        let frac = if s1 > s0 { (date - s0) / (s1 - s0) } else { 0.0 };
        MARGIN_L + (frac * (cols - 1) as f64 + 0.5) * sx
    };
    let (young, old) = (-s1, -s0);
    let step = nice_step((old - young).abs().max(f64::MIN_POSITIVE), 6);
    let mut tick = (young / step).ceil() * step;
    let y_axis = MARGIN_T + PLOT_H;
    while tick <= old + 1e-9 * step {
        let x = x_of(-tick);
        let label = if tick == 0.0 { 0.0 } else { tick };
        let _ = writeln!(s, r#"<line x1="{x}" y1="{y_axis}" x2="{x}" y2="{}" stroke="black"/>"#, y_axis + 5.0);
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{label}</text>"#, y_axis + 18.0);
        tick += step;
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">age (years BP)</text>"#,
        MARGIN_L + PLOT_W / 2.0,
        y_axis + 40.0
    );

    // scale axis: log10 λ
    let lambdas = map.scales.lambdas();
    let (l0, l1) = (lambdas[0].log10(), lambdas[rows - 1].log10());
    let y_of = |level: f64| MARGIN_T + ((rows as f64 - 1.0 - level) + 0.5) * sy;
    let level_of = |lg: f64| if l1 > l0 { (lg - l0) / (l1 - l0) * (rows - 1) as f64 } else { 0.0 };
    let mut labels: Vec<f64> = ((l0.ceil() as i64)..=(l1.floor() as i64)).map(|e| e as f64).collect();
    if labels.len() < 2 {
        labels = vec![l0, l1];
    }
    for lg in labels {
        let y = y_of(level_of(lg));
        let _ = writeln!(s, r#"<line x1="{}" y1="{y}" x2="{MARGIN_L}" y2="{y}" stroke="black"/>"#, MARGIN_L - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.1}</text>"#, MARGIN_L - 8.0, y + 4.0, lg);
    }
    let _ = writeln!(
        s,
        r#"<text transform="translate(18,{}) rotate(-90)" text-anchor="middle">log10(lambda)</text>"#,
        MARGIN_T + PLOT_H / 2.0
    );
    let _ = writeln!(s, "</svg>");
    Ok(s)
}

pub fn render_map_svg(map: &CredibilityMap, markers: &[usize], path: &Path) -> Result<()> {
    std::fs::write(path, render_map_svg_string(map, markers)?)?;
    Ok(())
}

fn attr(tag: &str, name: &str) -> Option<f64> {
    let key = format!(" {name}=\"");
    let start = tag.find(&key)? + key.len();
    let end = tag[start..].find('"')? + start;
    tag[start..end].parse().ok()
}

/// Recover the flag lattice from rendered SVG, indexed `[level][point]` like
/// [`CredibilityMap::flags`].
pub fn parse_svg_lattice(svg: &str) -> Result<Vec<Vec<Flag>>> {
    let bad = || Error::invalid("SVG does not contain a rendered lattice");
    let g_start = svg.find(r#"<g id="lattice""#).ok_or_else(bad)?;
    let g_end = svg[g_start..].find("</g>").ok_or_else(bad)? + g_start;
    let body = &svg[g_start..g_end];
    let mut cells: Option<Vec<Vec<Flag>>> = None;
    for tag in body.split("<rect").skip(1) {
        let class = if tag.contains(r#"class="none""#) {
            Flag::None
        } else if tag.contains(r#"class="inc""#) {
            Flag::Increasing
        } else if tag.contains(r#"class="dec""#) {
            Flag::Decreasing
        } else {
            continue;
        };
        let (x, y, w, h) = (
            attr(tag, "x").ok_or_else(bad)? as usize,
            attr(tag, "y").ok_or_else(bad)? as usize,
            attr(tag, "width").ok_or_else(bad)? as usize,
            attr(tag, "height").ok_or_else(bad)? as usize,
        );
        match (&mut cells, class) {
            (None, Flag::None) => cells = Some(vec![vec![Flag::None; w]; h]),
            (Some(c), f) if f != Flag::None => {
                let rows = c.len();
                c[rows - 1 - y][x..x + w].fill(f);
            }
            _ => return Err(bad()),
        }
    }
    cells.ok_or_else(bad)
}
