//! Minimal SVG rendering of a homophily histogram.

use std::fmt::Write as _;

use crate::homophily::CITESEER_REFERENCE;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

/// Bars over [0, 1] with a dashed reference line at the Citeseer constant.
pub fn histogram_svg(counts: &[usize], title: &str) -> String {
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bar_w = if counts.is_empty() { 0.0 } else { plot_w / counts.len() as f64 };
    let base = HEIGHT - MARGIN;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"  <title>{}</title>"#, escape(title));
    let _ = writeln!(s, r#"  <rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"  <text x="{}" y="{}" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        MARGIN / 2.0,
        escape(title)
    );
    for (i, &c) in counts.iter().enumerate() {
        let h = plot_h * c as f64 / max;
        let _ = writeln!(
            s,
            r##"  <rect class="bar" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4c72b0" stroke="white"><title>{}</title></rect>"##,
            MARGIN + i as f64 * bar_w,
            base - h,
            bar_w,
            h,
            c
        );
    }
    // Axes and tick labels.
    let _ = writeln!(
        s,
        r#"  <line x1="{MARGIN}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        WIDTH - MARGIN
    );
    let _ = writeln!(s, r#"  <line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{base}" stroke="black"/>"#);
    for k in 0..=5 {
        let x = MARGIN + plot_w * k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"  <text x="{x:.2}" y="{:.2}" text-anchor="middle">{:.1}</text>"#,
            base + 18.0,
            k as f64 / 5.0
        );
    }
    let _ = writeln!(
        s,
        r#"  <text x="{:.2}" y="{:.2}" text-anchor="middle">node homophily H(v)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        s,
        r#"  <text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
        MARGIN - 6.0,
        MARGIN + 4.0,
        max as usize
    );

    let rx = MARGIN + plot_w * CITESEER_REFERENCE;
    let _ = writeln!(
        s,
        r#"  <line id="citeseer-reference" x1="{rx:.2}" y1="{MARGIN}" x2="{rx:.2}" y2="{base}" stroke="firebrick" stroke-width="2" stroke-dasharray="6,4"/>"#
    );
    let _ = writeln!(
        s,
        r#"  <text x="{:.2}" y="{:.2}" fill="firebrick">Citeseer benchmark ({CITESEER_REFERENCE})</text>"#,
        rx + 4.0,
        MARGIN + 12.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
