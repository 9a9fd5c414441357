//! Static SVG plots rendered from the emitted CSVs.

use std::fmt::Write as _;

use crate::error::CliError;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

const COLORS: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Header names and one vector per column.
pub type Columns = (Vec<String>, Vec<Vec<Option<f64>>>);

/// Columns of a CSV with a header row; empty cells become `None`.
pub fn read_columns(csv: &str) -> Result<Columns, CliError> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::Artifacts("empty CSV".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut cols = vec![Vec::new(); header.len()];
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(CliError::Artifacts(format!("CSV row {} has {} cells, expected {}", i + 2, cells.len(), header.len())));
        }
        for (c, cell) in cells.iter().enumerate() {
            let cell = cell.trim();
            let v = if cell.is_empty() {
                None
            } else {
                Some(
                    cell.parse::<f64>()
                        .map_err(|_| CliError::Artifacts(format!("CSV row {}: `{cell}` is not a number", i + 2)))?,
                )
            };
            cols[c].push(v);
        }
    }
    Ok((header, cols))
}

fn column<'a>(header: &[String], cols: &'a [Vec<Option<f64>>], name: &str) -> Result<&'a [Option<f64>], CliError> {
    header
        .iter()
        .position(|h| h == name)
        .map(|i| cols[i].as_slice())
        .ok_or_else(|| CliError::Artifacts(format!("CSV has no `{name}` column")))
}

fn open_svg(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(out, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\">{title}</text>", W / 2.0);
    let _ = writeln!(
        out,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"black\"/>",
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn polyline(out: &mut String, pts: &[(f64, f64)], color: &str, closed: bool) {
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let tag = if closed { "polygon" } else { "polyline" };
    let _ = writeln!(
        out,
        "<{tag} points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
        coords.join(" ")
    );
}

/// Log-scale plot of `E_l2` and `e_s` against the iteration, read from a
/// `run.csv`. Non-positive or missing values are skipped.
pub fn error_plot(run_csv: &str) -> Result<String, CliError> {
    let (header, cols) = read_columns(run_csv)?;
    let iters = column(&header, &cols, "iteration")?;
    let series: Vec<(&str, Vec<(f64, f64)>)> = ["E_l2", "e_s"]
        .iter()
        .map(|name| -> Result<_, CliError> {
            let ys = column(&header, &cols, name)?;
            let pts = iters
                .iter()
                .zip(ys)
                .filter_map(|(x, y)| match (x, y) {
                    (Some(x), Some(y)) if *y > 0.0 => Some((*x, y.log10())),
                    _ => None,
                })
                .collect();
            Ok((*name, pts))
        })
        .collect::<Result<_, _>>()?;
    let xs: Vec<f64> = iters.iter().flatten().copied().collect();
    let (xmin, xmax) = match (xs.iter().copied().reduce(f64::min), xs.iter().copied().reduce(f64::max)) {
        (Some(a), Some(b)) if b > a => (a, b),
        (Some(a), _) => (a - 0.5, a + 0.5),
        _ => (0.0, 1.0),
    };
    let ys: Vec<f64> = series.iter().flat_map(|(_, p)| p.iter().map(|(_, y)| *y)).collect();
    let ymin = ys.iter().copied().reduce(f64::min).map_or(-1.0, f64::floor);
    let mut ymax = ys.iter().copied().reduce(f64::max).map_or(0.0, f64::ceil);
    if ymax <= ymin {
        ymax = ymin + 1.0;
    }
    let f = Frame {
        x0: xmin,
        x1: xmax,
        y0: ymin,
        y1: ymax,
    };
    let mut out = String::new();
    open_svg(&mut out, "error per iteration");
    let mut d = ymin as i64;
    let step = (((ymax - ymin) / 8.0).ceil() as i64).max(1);
    while d as f64 <= ymax {
        let y = f.py(d as f64);
        let _ = writeln!(out, "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{:.1}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>", W - RIGHT);
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.2}\" text-anchor=\"end\">1e{d}</text>", LEFT - 6.0, y + 4.0);
        d += step;
    }
    let xstep = (((xmax - xmin) / 10.0).ceil()).max(1.0);
    let mut x = xmin.ceil();
    while x <= xmax {
        let px = f.px(x);
        let _ = writeln!(out, "<text x=\"{px:.2}\" y=\"{:.1}\" text-anchor=\"middle\">{x}</text>", H - BOTTOM + 16.0);
        x += xstep;
    }
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">iteration</text>", W / 2.0, H - 10.0);
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let px: Vec<(f64, f64)> = pts.iter().map(|(x, y)| (f.px(*x), f.py(*y))).collect();
        if !px.is_empty() {
            polyline(&mut out, &px, color, false);
        }
        let ly = TOP + 16.0 + 16.0 * k as f64;
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{ly:.1}\" text-anchor=\"end\" fill=\"{color}\">{name}</text>",
            W - RIGHT - 8.0
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Nested-domain plot: one closed boundary per `x1,x2` CSV, drawn inside
/// the box with the given half widths.
pub fn domain_plot(half_widths: &[f64], boundaries: &[String]) -> Result<String, CliError> {
    if half_widths.len() != 2 {
        return Err(CliError::Artifacts("domain plots need a two-dimensional box".into()));
    }
    let f = Frame {
        x0: -half_widths[0],
        x1: half_widths[0],
        y0: -half_widths[1],
        y1: half_widths[1],
    };
    let mut out = String::new();
    open_svg(&mut out, "nested domains");
    for (v, label) in [(f.x0, -half_widths[0]), (0.0, 0.0), (f.x1, half_widths[0])] {
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.1}\" text-anchor=\"middle\">{label}</text>", f.px(v), H - BOTTOM + 16.0);
    }
    for (v, label) in [(f.y0, -half_widths[1]), (0.0, 0.0), (f.y1, half_widths[1])] {
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.2}\" text-anchor=\"end\">{label}</text>", LEFT - 6.0, f.py(v) + 4.0);
    }
    let n = boundaries.len().max(1);
    for (k, csv) in boundaries.iter().enumerate() {
        let (header, cols) = read_columns(csv)?;
        let xs = column(&header, &cols, "x1")?;
        let ys = column(&header, &cols, "x2")?;
        let pts: Vec<(f64, f64)> = xs
            .iter()
            .zip(ys)
            .filter_map(|(x, y)| Some((f.px((*x)?), f.py((*y)?))))
            .collect();
        // early domains light, late domains dark
        let shade = 200 - (200 * (k + 1) / n) as u32;
        polyline(&mut out, &pts, &format!("rgb({shade},{shade},255)"), true);
    }
    out.push_str("</svg>\n");
    Ok(out)
}
