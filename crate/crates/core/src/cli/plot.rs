//! Deterministic SVG figures from the CSV outputs.

use anyhow::bail;
use std::fmt::Write;

use super::io::Table;

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 220.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Mean reward per epoch with a ±1 std band.
    Curve,
    /// One panel per output: each controller's `y` against the reference.
    Tracking,
    /// Oblique projection of the first three outputs.
    Path,
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    lo: (f64, f64),
    hi: (f64, f64),
}

impl Frame {
    fn new(top: f64, xs: &[f64], ys: &[f64]) -> Self {
        let range = |v: &[f64]| {
            let lo = v.iter().copied().filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (xl, xh) = range(xs);
        let (yl, yh) = range(ys);
        Self {
            x0: MARGIN,
            y0: top + 12.0,
            w: WIDTH - 1.5 * MARGIN,
            h: PANEL_HEIGHT - MARGIN,
            lo: (xl, yl),
            hi: (xh, yh),
        }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let px = self.x0 + (x - self.lo.0) / (self.hi.0 - self.lo.0) * self.w;
        let py = self.y0 + self.h - (y - self.lo.1) / (self.hi.1 - self.lo.1) * self.h;
        (px, py)
    }

    fn axes(&self, svg: &mut String, title: &str) {
        let _ = writeln!(
            svg,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
            self.x0, self.y0, self.w, self.h
        );
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="12">{title}</text>"#, self.x0, self.y0 - 3.0);
        let bottom = self.y0 + self.h + 14.0;
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{bottom:.2}" font-size="10">{}</text>"#, self.x0, fmt(self.lo.0));
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{bottom:.2}" font-size="10" text-anchor="end">{}</text>"#,
            self.x0 + self.w,
            fmt(self.hi.0)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
            self.x0 - 4.0,
            self.y0 + 10.0,
            fmt(self.hi.1)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
            self.x0 - 4.0,
            self.y0 + self.h,
            fmt(self.lo.1)
        );
    }

    fn polyline(&self, svg: &mut String, xs: &[f64], ys: &[f64], color: &str, dashed: bool) {
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| {
                let (px, py) = self.map(x, y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let dash = if dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.3"{dash} points="{}"/>"#,
            pts.join(" ")
        );
    }
}

fn fmt(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn document(height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" viewBox=\"0 0 {WIDTH} {height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

fn legend(svg: &mut String, labels: &[(&str, &str)], y: f64) {
    for (i, (label, color)) in labels.iter().enumerate() {
        let x = MARGIN + 130.0 * i as f64;
        let _ = writeln!(svg, r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/>"#, x + 18.0);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="11">{label}</text>"#, x + 22.0, y + 4.0);
    }
}

pub fn learning_curve(table: &Table) -> anyhow::Result<String> {
    if table.rows.is_empty() {
        bail!("learning curve has no rows");
    }
    let epochs = table.values("epoch")?;
    let mean = table.values("mean_reward")?;
    let std = table.values("std_reward")?;
    let upper: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| m + s).collect();
    let lower: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| m - s).collect();
    let mut ys = upper.clone();
    ys.extend(&lower);
    let frame = Frame::new(0.0, &epochs, &ys);
    let mut svg = String::new();
    frame.axes(&mut svg, "mean reward per epoch (±1 std)");
    let mut band: Vec<String> = Vec::new();
    for (e, u) in epochs.iter().zip(&upper) {
        let (x, y) = frame.map(*e, *u);
        band.push(format!("{x:.2},{y:.2}"));
    }
    for (e, l) in epochs.iter().zip(&lower).rev() {
        let (x, y) = frame.map(*e, *l);
        band.push(format!("{x:.2},{y:.2}"));
    }
    let _ = writeln!(svg, r#"<polygon fill="{}" fill-opacity="0.2" stroke="none" points="{}"/>"#, COLORS[0], band.join(" "));
    frame.polyline(&mut svg, &epochs, &mean, COLORS[0], false);
    Ok(document(PANEL_HEIGHT + 10.0, &svg))
}

/// `runs` pairs a label with a tracking table; the reference is taken from
/// the first.
pub fn tracking(runs: &[(String, Table)]) -> anyhow::Result<String> {
    let (_, first) = runs.first().ok_or_else(|| anyhow::anyhow!("no tracking tables given"))?;
    let outputs = first.numbered("y");
    if outputs.is_empty() {
        bail!("tracking table has no output columns (missing column `y1`)");
    }
    let mut svg = String::new();
    for (_, t) in runs {
        if t.rows.is_empty() {
            bail!("tracking table has no rows");
        }
        t.column("t")?;
        for k in 1..=outputs.len() {
            t.column(&format!("y{k}"))?;
            t.column(&format!("yref{k}"))?;
        }
    }
    for k in 1..=outputs.len() {
        let top = (k - 1) as f64 * PANEL_HEIGHT;
        let reference = first.values(&format!("yref{k}"))?;
        let mut xs = Vec::new();
        let mut ys = reference.clone();
        for (_, t) in runs {
            xs.extend(t.values("t")?);
            ys.extend(t.values(&format!("y{k}"))?);
        }
        let frame = Frame::new(top, &xs, &ys);
        frame.axes(&mut svg, &format!("output {k}"));
        for (i, (_, t)) in runs.iter().enumerate() {
            frame.polyline(&mut svg, &t.values("t")?, &t.values(&format!("y{k}"))?, COLORS[(i + 1) % COLORS.len()], false);
        }
        frame.polyline(&mut svg, &first.values("t")?, &reference, "#000", true);
    }
    let mut labels: Vec<(&str, &str)> = vec![("reference", "#000")];
    for (i, (name, _)) in runs.iter().enumerate() {
        labels.push((name.as_str(), COLORS[(i + 1) % COLORS.len()]));
    }
    let bottom = outputs.len() as f64 * PANEL_HEIGHT;
    legend(&mut svg, &labels, bottom);
    Ok(document(bottom + 20.0, &svg))
}

/// Oblique projection `(x + 0.5 y, z + 0.35 y)` of the first three outputs.
pub fn path(runs: &[(String, Table)]) -> anyhow::Result<String> {
    let (_, first) = runs.first().ok_or_else(|| anyhow::anyhow!("no tracking tables given"))?;
    let project = |t: &Table, prefix: &str| -> anyhow::Result<(Vec<f64>, Vec<f64>)> {
        let c: Vec<Vec<f64>> = (1..=3).map(|k| t.values(&format!("{prefix}{k}"))).collect::<Result<_, _>>()?;
        let px = c[0].iter().zip(&c[1]).map(|(x, y)| x + 0.5 * y).collect();
        let py = c[2].iter().zip(&c[1]).map(|(z, y)| z + 0.35 * y).collect();
        Ok((px, py))
    };
    let mut curves = vec![project(first, "yref")?];
    for (_, t) in runs {
        if t.rows.is_empty() {
            bail!("tracking table has no rows");
        }
        curves.push(project(t, "y")?);
    }
    let xs: Vec<f64> = curves.iter().flat_map(|c| c.0.iter().copied()).collect();
    let ys: Vec<f64> = curves.iter().flat_map(|c| c.1.iter().copied()).collect();
    let frame = Frame::new(0.0, &xs, &ys);
    let mut svg = String::new();
    frame.axes(&mut svg, "path (oblique projection of outputs 1-3)");
    frame.polyline(&mut svg, &curves[0].0, &curves[0].1, "#000", true);
    for (i, c) in curves.iter().enumerate().skip(1) {
        frame.polyline(&mut svg, &c.0, &c.1, COLORS[i % COLORS.len()], false);
    }
    let mut labels: Vec<(&str, &str)> = vec![("reference", "#000")];
    for (i, (name, _)) in runs.iter().enumerate() {
        labels.push((name.as_str(), COLORS[(i + 1) % COLORS.len()]));
    }
    legend(&mut svg, &labels, PANEL_HEIGHT);
    Ok(document(PANEL_HEIGHT + 20.0, &svg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve() -> Table {
        Table {
            header: ["epoch", "mean_reward", "std_reward", "wall_time_s"].map(String::from).to_vec(),
            rows: (0..5).map(|e| vec![e as f64, -1.0 / (e as f64 + 1.0), 0.1, 0.0]).collect(),
        }
    }

    #[test]
    fn curve_is_deterministic() {
        let a = learning_curve(&curve()).unwrap();
        assert_eq!(a, learning_curve(&curve()).unwrap());
        assert!(a.starts_with("<svg") && a.contains("<polygon"));
    }

    #[test]
    fn empty_inputs_rejected() {
        let mut t = curve();
        t.rows.clear();
        assert!(learning_curve(&t).is_err());
        assert!(tracking(&[]).is_err());
    }

    #[test]
    fn tracking_needs_reference_columns() {
        let t = Table {
            header: ["t", "y1", "u1", "err_l2"].map(String::from).to_vec(),
            rows: vec![vec![0.0, 1.0, 0.0, 0.0]],
        };
        let err = tracking(&[("a".into(), t)]).unwrap_err().to_string();
        assert!(err.contains("yref1"), "{err}");
    }
}
