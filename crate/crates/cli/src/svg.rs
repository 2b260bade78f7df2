//! Minimal static SVG plots: scatter with identity line, and Bland–Altman.

use std::fmt::Write;

use mwnet_core::eval::BlandAltman;

const W: f64 = 480.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: &[f64], ys: &[f64]) -> Self {
        let span = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() || !hi.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let m = 0.05 * (hi - lo);
                (lo - m, hi + m)
            }
        };
        Frame { x: span(xs), y: span(ys) }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * PAD)
    }
}

fn open(out: &mut String, title: &str, xlabel: &str, ylabel: &str, f: &Frame) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    for (v, x, y, anchor) in [
        (f.x.0, PAD, H - PAD + 15.0, "start"),
        (f.x.1, W - PAD, H - PAD + 15.0, "end"),
    ] {
        let _ = writeln!(out, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{v:.3}</text>"#);
    }
    for (v, y) in [(f.y.0, H - PAD), (f.y.1, PAD + 10.0)] {
        let _ = writeln!(out, r#"<text x="{}" y="{y}" text-anchor="end">{v:.3}</text>"#, PAD - 4.0);
    }
}

fn points(out: &mut String, f: &Frame, xs: &[f64], ys: &[f64]) {
    for (&x, &y) in xs.iter().zip(ys) {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="steelblue" fill-opacity="0.5"/>"#,
            f.px(x),
            f.py(y)
        );
    }
}

fn hline(out: &mut String, f: &Frame, y: f64, dash: bool) {
    let style = if dash { r#" stroke-dasharray="4 3""# } else { "" };
    let _ = writeln!(
        out,
        r#"<line x1="{PAD}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="firebrick"{style}/>"#,
        f.py(y),
        W - PAD,
        f.py(y)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Prediction against reference with the identity line.
pub fn scatter(title: &str, reference: &[f64], pred: &[f64]) -> String {
    let all: Vec<f64> = reference.iter().chain(pred).copied().collect();
    let mut f = Frame::new(&all, &all);
    f.y = f.x;
    let mut out = String::new();
    open(&mut out, title, "conventional", "surrogate", &f);
    let _ = writeln!(
        out,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="firebrick"/>"#,
        f.px(f.x.0),
        f.py(f.x.0),
        f.px(f.x.1),
        f.py(f.x.1)
    );
    points(&mut out, &f, reference, pred);
    out.push_str("</svg>\n");
    out
}

/// Difference against mean, with the bias and 95% limits of agreement.
pub fn bland_altman(title: &str, reference: &[f64], pred: &[f64], ba: &BlandAltman) -> String {
    let means: Vec<f64> = reference.iter().zip(pred).map(|(r, p)| 0.5 * (r + p)).collect();
    let diffs: Vec<f64> = reference.iter().zip(pred).map(|(r, p)| p - r).collect();
    let mut ys = diffs.clone();
    ys.extend([ba.lower, ba.upper]);
    let f = Frame::new(&means, &ys);
    let mut out = String::new();
    open(&mut out, title, "mean of methods", "surrogate − conventional", &f);
    points(&mut out, &f, &means, &diffs);
    hline(&mut out, &f, ba.mean_difference, false);
    hline(&mut out, &f, ba.lower, true);
    hline(&mut out, &f, ba.upper, true);
    out.push_str("</svg>\n");
    out
}
