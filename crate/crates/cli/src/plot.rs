//! Static SVG scatter plot of one projected layer.

use std::fmt::Write;

use vistrace_core::phases::phase_of_layer;
use vistrace_core::projection::LayerProjection;
use vistrace_core::{phase_name, Category, TraceAnalysis};

use crate::format_float;

pub fn color(category: Category) -> &'static str {
    match category {
        Category::Question => "#1f77b4",
        Category::SupportingFact => "#2ca02c",
        Category::Context => "#7f7f7f",
        Category::Answer => "#9467bd",
    }
}

pub fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && !matches!(c, '\t' | '\n' | '\r') => {}
            c => out.push(c),
        }
    }
    out
}

/// Data-space bounds `(min_x, min_y, width, height)` padded by 5% per side.
/// A zero extent is widened to 1 so the box never collapses.
pub fn view_box(points: &[[f64; 2]]) -> (f64, f64, f64, f64) {
    if points.is_empty() {
        return (-0.5, -0.5, 1.0, 1.0);
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        // SVG y grows downwards; plot -y so "up" stays up.
        y0 = y0.min(-p[1]);
        y1 = y1.max(-p[1]);
    }
    let pad = |lo: f64, hi: f64| {
        let w = if hi > lo { hi - lo } else { 1.0 };
        let c = (lo + hi) / 2.0;
        let lo = if hi > lo { lo } else { c - 0.5 };
        (lo - 0.05 * w, w * 1.1)
    };
    let (x, w) = pad(x0, x1);
    let (y, h) = pad(y0, y1);
    (x, y, w, h)
}

pub fn render_svg(analysis: &TraceAnalysis, projection: &LayerProjection) -> String {
    let m = &analysis.trace().manifest;
    let block = m.block_of(projection.layer_index);
    let phase = phase_of_layer(block, m.num_layers).unwrap_or(1);
    let title = format!(
        "{}: layer {} of {}, phase {} ({})",
        m.model_name,
        block,
        m.num_layers,
        phase,
        phase_name(phase)
    );

    let (x, y, w, h) = view_box(&projection.points);
    let unit = w.max(h);
    let radius = unit * 0.008;
    let font = unit * 0.022;
    let f = format_float;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{} {} {} {}" width="800" height="{}">"#,
        f(x),
        f(y),
        f(w),
        f(h),
        (800.0 * h / w).round().max(1.0)
    );
    let _ = writeln!(svg, "<title>{}</title>", escape_xml(&title));
    let _ = writeln!(
        svg,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="white"/>"#,
        f(x),
        f(y),
        f(w),
        f(h)
    );
    let _ = writeln!(
        svg,
        r#"<text class="title" x="{}" y="{}" font-size="{}" font-family="sans-serif">{}</text>"#,
        f(x + font * 0.5),
        f(y + font * 1.2),
        f(font),
        escape_xml(&title)
    );

    let _ = writeln!(svg, r#"<g class="points">"#);
    // Projections made without special tokens have fewer rows than the trace.
    let indices = analysis.token_indices(projection.len() == m.num_tokens);
    let categories = &analysis.categories().categories;
    for (&i, p) in indices.iter().zip(&projection.points) {
        let cat = categories[i];
        let _ = writeln!(
            svg,
            r#"<circle cx="{}" cy="{}" r="{}" fill="{}" data-category="{}"><title>{}</title></circle>"#,
            f(p[0]),
            f(-p[1]),
            f(radius),
            color(cat),
            cat.as_str(),
            escape_xml(&m.tokens[i].text)
        );
    }
    let _ = writeln!(svg, "</g>");

    let _ = writeln!(
        svg,
        r#"<g class="legend" font-family="sans-serif" font-size="{}">"#,
        f(font)
    );
    for (row, cat) in Category::ALL.into_iter().enumerate() {
        let top = y + font * (2.0 + 1.4 * row as f64);
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            f(x + font * 0.5),
            f(top),
            f(font),
            f(font),
            color(cat),
            f(x + font * 2.0),
            f(top + font * 0.85),
            escape_xml(cat.label())
        );
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    svg
}
