//! Static figures as SVG, each with a CSV twin carrying the plotted series.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::circumplex::CircumplexFit;
use crate::psychometrics::Dendrogram;

/// An SVG document and the CSV of the data it draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub svg: String,
    pub csv: String,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn open(w: f64, h: f64, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n<title>{}</title>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        esc(title)
    )
}

/// Eigenvalues by component with the elbow marked.
pub fn scree(eigenvalues: &[f64], elbow: usize) -> Figure {
    let mut csv = String::from("component,eigenvalue,elbow\n");
    for (i, e) in eigenvalues.iter().enumerate() {
        let _ = writeln!(csv, "{},{:.10},{}", i + 1, e, u8::from(i + 1 == elbow));
    }
    let (w, h, m) = (640.0, 400.0, 50.0);
    let n = eigenvalues.len().max(2);
    let top = eigenvalues.iter().copied().fold(1e-12f64, f64::max);
    let x = |i: usize| m + (w - 2.0 * m) * i as f64 / (n - 1) as f64;
    let y = |v: f64| h - m - (h - 2.0 * m) * v.max(0.0) / top;
    let mut svg = open(w, h, "Scree plot");
    let _ = writeln!(
        svg,
        "<line x1=\"{m}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/><line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{0}\" stroke=\"black\"/>",
        h - m,
        w - m
    );
    let pts: Vec<String> = eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &e)| format!("{:.2},{:.2}", x(i), y(e)))
        .collect();
    let _ = writeln!(svg, "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>", pts.join(" "));
    for (i, &e) in eigenvalues.iter().enumerate() {
        let marked = i + 1 == elbow;
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{}\" fill=\"{}\"{}/>",
            x(i),
            y(e),
            if marked { 6 } else { 3 },
            if marked { "crimson" } else { "steelblue" },
            if marked { format!(" data-elbow=\"{elbow}\"") } else { String::new() }
        );
    }
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">component</text>", w / 2.0, h - 15.0);
    let _ = writeln!(svg, "<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">eigenvalue</text>", h / 2.0, h / 2.0);
    svg.push_str("</svg>\n");
    Figure { svg, csv }
}

fn diverging(v: f64) -> String {
    let t = v.clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        (255.0 * (1.0 - t) + 178.0 * t, 255.0 * (1.0 - t) + 24.0 * t, 255.0 * (1.0 - t) + 43.0 * t)
    } else {
        let s = -t;
        (255.0 * (1.0 - s) + 33.0 * s, 255.0 * (1.0 - s) + 102.0 * s, 255.0 * (1.0 - s) + 172.0 * s)
    };
    format!("rgb({},{},{})", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// Correlation heatmap; the CSV is the full labelled matrix.
pub fn heatmap(labels: &[String], r: &DMatrix<f64>) -> Figure {
    let n = labels.len();
    let mut csv = String::from("value");
    for l in labels {
        csv.push(',');
        csv.push_str(&csv_field(l));
    }
    csv.push('\n');
    for i in 0..n {
        csv.push_str(&csv_field(&labels[i]));
        for j in 0..n {
            let _ = write!(csv, ",{:.10}", r[(i, j)]);
        }
        csv.push('\n');
    }
    let cell = (600.0 / n.max(1) as f64).clamp(4.0, 24.0);
    let margin = 140.0;
    let size = margin + cell * n as f64 + 10.0;
    let mut svg = open(size, size, "Correlation heatmap");
    for i in 0..n {
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"{:.1}\">{}</text>",
            margin - 4.0,
            margin + cell * (i as f64 + 0.75),
            (cell * 0.8).min(11.0),
            esc(&labels[i])
        );
        let cx = margin + cell * (i as f64 + 0.5);
        let _ = writeln!(
            svg,
            "<text x=\"{cx:.2}\" y=\"{:.2}\" transform=\"rotate(-60 {cx:.2} {:.2})\" font-size=\"{:.1}\">{}</text>",
            margin - 4.0,
            margin - 4.0,
            (cell * 0.8).min(11.0),
            esc(&labels[i])
        );
        for j in 0..n {
            let _ = writeln!(
                svg,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"{}\"/>",
                margin + cell * j as f64,
                margin + cell * i as f64,
                diverging(r[(i, j)])
            );
        }
    }
    svg.push_str("</svg>\n");
    Figure { svg, csv }
}

/// Dendrogram drawn left to right in leaf order; heights on the x axis.
pub fn dendrogram(d: &Dendrogram) -> Figure {
    let mut csv = String::from("step,left,right,height,size\n");
    for (i, m) in d.merges.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{},{:.10},{}", i, m.left, m.right, m.height, m.size);
    }
    let n = d.n_leaves();
    let row = 16.0;
    let (label_w, plot_w) = (160.0, 420.0);
    let h = row * n as f64 + 40.0;
    let top = d.merges.iter().map(|m| m.height).fold(1e-12f64, f64::max);
    let xh = |height: f64| label_w + plot_w * height / top;
    let mut ypos = vec![0.0; n + d.merges.len()];
    let mut xpos = vec![label_w; n + d.merges.len()];
    let mut svg = open(label_w + plot_w + 20.0, h, "Dendrogram");
    for (rank, &leaf) in d.leaf_order().iter().enumerate() {
        ypos[leaf] = 20.0 + row * rank as f64;
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            label_w - 4.0,
            ypos[leaf] + 4.0,
            esc(&d.labels[leaf])
        );
    }
    for (i, m) in d.merges.iter().enumerate() {
        let id = n + i;
        let x = xh(m.height);
        ypos[id] = 0.5 * (ypos[m.left] + ypos[m.right]);
        xpos[id] = x;
        let _ = writeln!(
            svg,
            "<path d=\"M{:.2},{:.2} H{x:.2} V{:.2} H{:.2}\" fill=\"none\" stroke=\"black\"/>",
            xpos[m.left],
            ypos[m.left],
            ypos[m.right],
            xpos[m.right]
        );
    }
    svg.push_str("</svg>\n");
    Figure { svg, csv }
}

/// Factors placed on the unit circle at their fitted angles.
pub fn circumplex(fit: &CircumplexFit) -> Figure {
    let mut csv = String::from("factor,angle_deg,x,y\n");
    for (f, a) in fit.factors.iter().zip(&fit.angles) {
        let _ = writeln!(csv, "{},{:.6},{:.6},{:.6}", csv_field(f), a.to_degrees(), a.cos(), a.sin());
    }
    let (size, radius) = (480.0, 170.0);
    let c = size / 2.0;
    let mut svg = open(size, size, "Circumplex");
    let _ = writeln!(svg, "<circle cx=\"{c}\" cy=\"{c}\" r=\"{radius}\" fill=\"none\" stroke=\"gray\"/>");
    for (f, &a) in fit.factors.iter().zip(&fit.angles) {
        // Screen y grows downward; negate so angles run counter-clockwise.
        let (x, y) = (c + radius * a.cos(), c - radius * a.sin());
        let (lx, ly) = (c + (radius + 24.0) * a.cos(), c - (radius + 24.0) * a.sin());
        let anchor = if (a - PI / 2.0).abs() < 0.3 || (a - 1.5 * PI).abs() < 0.3 {
            "middle"
        } else if a.cos() > 0.0 {
            "start"
        } else {
            "end"
        };
        let _ = writeln!(svg, "<line x1=\"{c}\" y1=\"{c}\" x2=\"{x:.2}\" y2=\"{y:.2}\" stroke=\"lightgray\"/>");
        let _ = writeln!(svg, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"5\" fill=\"darkorange\"/>");
        let _ = writeln!(svg, "<text x=\"{lx:.2}\" y=\"{ly:.2}\" text-anchor=\"{anchor}\">{}</text>", esc(f));
    }
    svg.push_str("</svg>\n");
    Figure { svg, csv }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scree_marks_elbow() {
        let f = scree(&[5.0, 3.0, 0.4, 0.3], 2);
        assert!(f.svg.contains("data-elbow=\"2\""));
        assert!(f.csv.lines().nth(2).unwrap().ends_with(",1"));
        assert_eq!(f.csv.lines().count(), 5);
    }

    #[test]
    fn labels_are_escaped() {
        let r = DMatrix::<f64>::identity(1, 1);
        let f = heatmap(&["a<b".to_string()], &r);
        assert!(f.svg.contains("a&lt;b"));
    }
}
