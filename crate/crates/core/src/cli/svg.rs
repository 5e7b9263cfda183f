use std::fmt::Write as _;

const SIZE: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn px(a_s: f64, a_u: f64) -> (f64, f64) {
    (MARGIN + a_s * SIZE, MARGIN + (1.0 - a_u) * SIZE)
}

/// Seen accuracy on x, unseen accuracy on y, both over `[0, 1]`.
pub fn render_curve_svg(polyline: &[(f64, f64)], auc: f64) -> String {
    let total = SIZE + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    let _ = writeln!(s, r#"<rect width="{total}" height="{total}" fill="white"/>"#);
    let (x0, y0) = px(0.0, 0.0);
    let (x1, y1) = px(1.0, 1.0);
    let _ = writeln!(
        s,
        r#"<path d="M {x0} {y1} L {x0} {y0} L {x1} {y0}" fill="none" stroke="black" stroke-width="1.5"/>"#
    );
    for t in 0..=4 {
        let v = t as f64 / 4.0;
        let (tx, _) = px(v, 0.0);
        let (_, ty) = px(0.0, v);
        let _ = writeln!(
            s,
            r#"<text x="{tx}" y="{}" font-size="12" text-anchor="middle">{v:.2}</text>"#,
            y0 + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{v:.2}</text>"#,
            x0 - 6.0,
            ty + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">seen accuracy</text>"#,
        (x0 + x1) / 2.0,
        y0 + 40.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" font-size="14" text-anchor="middle" transform="rotate(-90 16 {})">unseen accuracy</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    let pts: Vec<String> = polyline
        .iter()
        .map(|&(a, b)| {
            let (x, y) = px(a, b);
            format!("{x:.3},{y:.3}")
        })
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        pts.join(" ")
    );
    for &(a, b) in polyline {
        let (x, y) = px(a, b);
        let _ = writeln!(s, r#"<circle cx="{x:.3}" cy="{y:.3}" r="2.5" fill="steelblue"/>"#);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="end">AUC = {auc:.4}</text>"#,
        x1,
        y1 + 14.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_formed_and_deterministic() {
        let line = [(0.0, 0.9), (0.5, 0.5), (1.0, 0.0)];
        let a = render_curve_svg(&line, 0.6);
        assert_eq!(a, render_curve_svg(&line, 0.6));
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<circle").count(), 3);
        assert!(a.contains("AUC = 0.6000"));
    }
}
