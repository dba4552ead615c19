//! B-H overlay plots as standalone SVG.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 360.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 32.0;
const BOTTOM: f64 = 44.0;

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit<'a>(series: impl Iterator<Item = &'a f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in series.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Self { lo: -1.0, hi: 1.0 };
        }
        let pad = ((hi - lo) * 0.05).max(1e-12);
        Self {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn map(&self, v: f64, from: f64, to: f64) -> f64 {
        from + (v - self.lo) / (self.hi - self.lo) * (to - from)
    }
}

fn polyline(out: &mut String, x: &[f64], y: &[f64], ax: &Axis, ay: &Axis, style: &str) {
    out.push_str("<polyline fill=\"none\" ");
    out.push_str(style);
    out.push_str(" points=\"");
    // Closed loop: repeat the first point.
    for i in (0..x.len()).chain(std::iter::once(0)) {
        if !(x[i].is_finite() && y[i].is_finite()) {
            continue;
        }
        let px = ax.map(x[i], LEFT, W - RIGHT);
        let py = ay.map(y[i], H - BOTTOM, TOP);
        let _ = write!(out, "{px:.2},{py:.2} ");
    }
    out.push_str("\"/>\n");
}

/// H on the horizontal axis, B vertical; reference solid, prediction dashed.
pub fn loop_svg(title: &str, b: &[f64], h_ref: &[f64], h_pred: &[f64]) -> String {
    let ax = Axis::fit(h_ref.iter().chain(h_pred));
    let ay = Axis::fit(b.iter());
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">{title}</text>",
        W / 2.0
    );
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        s,
        "<rect x=\"{x0}\" y=\"{y0}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        x1 - x0,
        y1 - y0
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let hv = ax.lo + f * (ax.hi - ax.lo);
        let px = ax.map(hv, x0, x1);
        let _ = writeln!(
            s,
            "<line x1=\"{px:.2}\" y1=\"{y1}\" x2=\"{px:.2}\" y2=\"{}\" stroke=\"black\"/>",
            y1 + 4.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{px:.2}\" y=\"{}\" text-anchor=\"middle\">{hv:.3e}</text>",
            y1 + 16.0
        );
        let bv = ay.lo + f * (ay.hi - ay.lo);
        let py = ay.map(bv, y1, y0);
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{py:.2}\" x2=\"{x0}\" y2=\"{py:.2}\" stroke=\"black\"/>",
            x0 - 4.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{bv:.2}</text>",
            x0 - 6.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">H (A/m)</text>",
        (x0 + x1) / 2.0,
        H - 6.0
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {0})\">B (T)</text>",
        (y0 + y1) / 2.0
    );
    polyline(
        &mut s,
        h_ref,
        b,
        &ax,
        &ay,
        "stroke=\"#1f77b4\" stroke-width=\"1.5\" class=\"reference\"",
    );
    polyline(
        &mut s,
        h_pred,
        b,
        &ax,
        &ay,
        "stroke=\"#d62728\" stroke-width=\"1.5\" stroke-dasharray=\"5,3\" class=\"predicted\"",
    );
    let lx = x0 + 10.0;
    let _ = writeln!(
        s,
        "<line x1=\"{lx}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>",
        y0 + 14.0,
        lx + 20.0
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">reference</text>", lx + 26.0, y0 + 18.0);
    let _ = writeln!(
        s,
        "<line x1=\"{lx}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"#d62728\" stroke-width=\"1.5\" stroke-dasharray=\"5,3\"/>",
        y0 + 30.0,
        lx + 20.0
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">predicted</text>", lx + 26.0, y0 + 34.0);
    s.push_str("</svg>\n");
    s
}
