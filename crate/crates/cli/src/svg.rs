//! Dependency-free SVG output: layouts, trajectory strips and line plots.

use std::fmt::Write;

use heterodiff::corpus::{JsonCanvas, JsonElement};

use crate::trace::{Frame, MASK_NAME};

/// Width of one rendered canvas in user units.
const CANVAS_W: f64 = 180.0;
const STRIP_GAP: f64 = 12.0;
const LABEL_H: f64 = 16.0;

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
    "#bcbd22", "#7f7f7f", "#393b79", "#e7ba52",
];

/// Common element types get distinct colors; other names hash into the
/// palette.
const PINNED: [&str; 12] = [
    "text", "image", "button", "toolbar", "title", "list", "table", "figure", "icon", "input", "background",
    "advertisement",
];

/// Fill color of a type. Depends on the name alone, so a type keeps its
/// color across vocabularies and files.
pub fn type_color(name: &str) -> &'static str {
    if let Some(i) = PINNED.iter().position(|&p| p == name) {
        return PALETTE[i];
    }
    // FNV-1a.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    PALETTE[(h % PALETTE.len() as u64) as usize]
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn canvas_height(canvas: &JsonCanvas) -> f64 {
    if canvas.w > 0.0 && canvas.h > 0.0 {
        CANVAS_W * canvas.h / canvas.w
    } else {
        CANVAS_W
    }
}

const DEFS: &str = concat!(
    "<defs><pattern id=\"mask-hatch\" patternUnits=\"userSpaceOnUse\" width=\"6\" height=\"6\" ",
    "patternTransform=\"rotate(45)\"><path d=\"M0 0V6\" stroke=\"#808080\" stroke-width=\"2\"/>",
    "</pattern></defs>\n"
);

/// One canvas at `(x0, y0)`: outline plus one `rect` per element.
fn canvas_group(out: &mut String, elements: &[JsonElement], h: f64, x0: f64, y0: f64) {
    let _ = writeln!(out, "<g transform=\"translate({x0:.2} {y0:.2})\">");
    let _ = writeln!(
        out,
        "<path d=\"M0 0H{w:.2}V{h:.2}H0Z\" fill=\"#ffffff\" stroke=\"#333333\" stroke-width=\"1\"/>",
        w = CANVAS_W
    );
    for e in elements {
        let (l, r) = (e.l.min(e.r), e.l.max(e.r));
        let (t, b) = (e.t.min(e.b), e.t.max(e.b));
        let (fill, stroke) = if e.type_name == MASK_NAME {
            ("url(#mask-hatch)", "#808080")
        } else {
            let c = type_color(&e.type_name);
            (c, c)
        };
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{fill}\" fill-opacity=\"0.5\" stroke=\"{stroke}\" stroke-width=\"1\"><title>{}</title></rect>",
            l * CANVAS_W,
            t * h,
            (r - l) * CANVAS_W,
            (b - t) * h,
            escape(&e.type_name)
        );
    }
    out.push_str("</g>\n");
}

fn header(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w:.2} {h:.2}\" width=\"{w:.0}\" height=\"{h:.0}\">"
    );
    out.push_str(DEFS);
}

pub fn render_layout(elements: &[JsonElement], canvas: &JsonCanvas) -> String {
    let h = canvas_height(canvas);
    let mut out = String::new();
    header(&mut out, CANVAS_W, h);
    canvas_group(&mut out, elements, h, 0.0, 0.0);
    out.push_str("</svg>\n");
    out
}

/// Frames side by side, each labelled with its timestep.
pub fn render_strip(frames: &[Frame], canvas: &JsonCanvas) -> String {
    let h = canvas_height(canvas);
    let n = frames.len().max(1) as f64;
    let w = n * CANVAS_W + (n - 1.0) * STRIP_GAP;
    let mut out = String::new();
    header(&mut out, w, h + LABEL_H);
    for (i, f) in frames.iter().enumerate() {
        let x0 = i as f64 * (CANVAS_W + STRIP_GAP);
        canvas_group(&mut out, &f.elements, h, x0, LABEL_H);
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"12\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">t = {}</text>",
            x0 + CANVAS_W / 2.0,
            f.t
        );
    }
    out.push_str("</svg>\n");
    out
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Line plot with linear axes; `log_y` plots `log10(y)` of positive values.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> String {
    let (w, h) = (640.0, 400.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 30.0, 45.0);
    let tf = |y: f64| if log_y { y.log10() } else { y };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|&(x, y)| x.is_finite() && y.is_finite() && (!log_y || y > 0.0))
        .map(|(x, y)| (x, tf(y)))
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 <= 0.0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);
    let fmt_y = |y: f64| {
        let v = if log_y { 10f64.powf(y) } else { y };
        format!("{v:.3e}")
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(out, "<text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">{}</text>", w / 2.0, escape(title));
    let _ = writeln!(
        out,
        "<path d=\"M{ml} {mt}V{b}H{r}\" fill=\"none\" stroke=\"#333333\"/>",
        b = h - mb,
        r = w - mr
    );
    for (v, anchor_y) in [(y0, h - mb), (y1, mt)] {
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>", ml - 4.0, anchor_y + 4.0, fmt_y(v));
    }
    for (v, anchor_x) in [(x0, ml), (x1, w - mr)] {
        let _ = writeln!(out, "<text x=\"{anchor_x}\" y=\"{}\" text-anchor=\"middle\">{v}</text>", h - mb + 14.0);
    }
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", (ml + w - mr) / 2.0, h - 8.0, escape(x_label));
    let _ = writeln!(
        out,
        "<text x=\"14\" y=\"{y}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {y})\">{}</text>",
        escape(&if log_y { format!("{y_label} (log scale)") } else { y_label.to_string() }),
        y = (mt + h - mb) / 2.0
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .filter(|&&(x, y)| x.is_finite() && y.is_finite() && (!log_y || y > 0.0))
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(tf(y))))
            .collect();
        let _ = writeln!(out, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>", coords.join(" "));
        let ly = mt + 14.0 * i as f64 + 6.0;
        let _ = writeln!(
            out,
            "<path d=\"M{} {ly}h18\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{}\" y=\"{}\">{}</text>",
            w - mr - 150.0,
            w - mr - 128.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}
