//! SVG and CSV renderings of report data.

use std::fmt::Write;

/// Heatmap of a row-major `rows × cols` array, white at zero and dark blue
/// at the maximum. Thin lines mark where `row_groups` / `col_groups` change.
pub fn heatmap_svg(values: &[f64], rows: usize, cols: usize, row_groups: &[usize], col_groups: &[usize], title: &str) -> String {
    const PX: f64 = 4.0;
    const MARGIN: f64 = 24.0;
    let max = values.iter().copied().fold(0.0, f64::max);
    let w = cols as f64 * PX + 2.0 * MARGIN;
    let h = rows as f64 * PX + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
        MARGIN - 8.0,
        escape(title)
    );
    for r in 0..rows {
        for c in 0..cols {
            let v = values[r * cols + c];
            let t = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
            let mix = |hi: f64| (255.0 + (hi - 255.0) * t).round() as u8;
            let _ = writeln!(
                s,
                r##"<rect x="{}" y="{}" width="{PX}" height="{PX}" fill="#{:02x}{:02x}{:02x}"/>"##,
                MARGIN + c as f64 * PX,
                MARGIN + r as f64 * PX,
                mix(8.0),
                mix(48.0),
                mix(107.0)
            );
        }
    }
    let line = |s: &mut String, x1: f64, y1: f64, x2: f64, y2: f64| {
        let _ = writeln!(
            s,
            r#"<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="red" stroke-width="0.5"/>"#
        );
    };
    for r in 1..rows.min(row_groups.len()) {
        if row_groups[r] != row_groups[r - 1] {
            let y = MARGIN + r as f64 * PX;
            line(&mut s, MARGIN, y, MARGIN + cols as f64 * PX, y);
        }
    }
    for c in 1..cols.min(col_groups.len()) {
        if col_groups[c] != col_groups[c - 1] {
            let x = MARGIN + c as f64 * PX;
            line(&mut s, x, MARGIN, x, MARGIN + rows as f64 * PX);
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Plain CSV with a header row.
pub fn csv<S: AsRef<str>>(header: &[S], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = header.iter().map(|h| h.as_ref()).collect::<Vec<_>>().join(",");
    s.push('\n');
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Indices of `n` items spread evenly over `0..len` (all of them if fewer).
pub fn spread(len: usize, n: usize) -> Vec<usize> {
    if len <= n {
        return (0..len).collect();
    }
    (0..n).map(|k| k * len / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_one_rect_per_cell() {
        let svg = heatmap_svg(&[0.0, 1.0, 0.5, 0.25], 2, 2, &[0, 1], &[0, 0], "a < b");
        assert_eq!(svg.matches("<rect").count(), 5);
        assert!(svg.contains("#08306b"));
        assert!(svg.contains("#ffffff"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<line").count(), 1);
    }

    #[test]
    fn spread_and_csv() {
        assert_eq!(spread(3, 5), vec![0, 1, 2]);
        assert_eq!(spread(10, 4), vec![0, 2, 5, 7]);
        let text = csv(&["a", "b"], vec![vec!["1".into(), "2".into()]]);
        assert_eq!(text, "a,b\n1,2\n");
    }
}
