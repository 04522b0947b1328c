//! CSV to SVG. Output depends only on the CSV text and the options.

use std::fmt::Write as _;

use gdl_core::{Error, Result};

const W: f64 = 820.0;
const H: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 10] =
    ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    Line,
    Heatmap,
}

#[derive(Debug, Clone, Default)]
pub struct PlotOptions {
    pub x: Option<String>,
    pub y: Vec<String>,
    pub group: Option<String>,
    pub title: Option<String>,
}

struct Table {
    comments: Vec<String>,
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn parse(text: &str) -> Result<Self> {
        let comments = text.lines().take_while(|l| l.starts_with('#')).map(|l| l[1..].trim().to_string()).collect();
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for r in rdr.records() {
            rows.push(r?.iter().map(str::to_string).collect());
        }
        if headers.is_empty() || rows.is_empty() {
            return Err(Error::Format("csv has no data rows".into()));
        }
        Ok(Self { comments, headers, rows })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("no column '{name}' (have {})", self.headers.join(","))))
    }

    /// Columns whose non-empty cells all parse as numbers.
    fn is_numeric(&self, c: usize) -> bool {
        let mut any = false;
        for r in &self.rows {
            let s = r[c].trim();
            if s.is_empty() {
                continue;
            }
            if s.parse::<f64>().is_err() {
                return false;
            }
            any = true;
        }
        any
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn num(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn open_svg(out: &mut String, comments: &[String], title: &str) {
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    for c in comments {
        out.push_str(&format!("<!-- {} -->\n", c.replace("--", "- -")));
    }
    out.push_str(&format!("<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        esc(title)
    ));
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    (0..=4).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
}

fn padded_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

pub fn line_svg(csv_text: &str, opts: &PlotOptions) -> Result<String> {
    let t = Table::parse(csv_text)?;
    let xc = match &opts.x {
        Some(x) => t.col(x)?,
        None => 0,
    };
    let gc = opts.group.as_deref().map(|g| t.col(g)).transpose()?;
    let ycols: Vec<usize> = if opts.y.is_empty() {
        (0..t.headers.len()).filter(|&c| c != xc && Some(c) != gc && t.is_numeric(c)).collect()
    } else {
        opts.y.iter().map(|y| t.col(y)).collect::<Result<_>>()?
    };
    if ycols.is_empty() {
        return Err(Error::InvalidInput("no numeric y columns to plot".into()));
    }
    if !t.is_numeric(xc) {
        return Err(Error::InvalidInput(format!("x column '{}' is not numeric", t.headers[xc])));
    }

    // rows sharing (series, x) are averaged
    let mut series: Vec<Series> = Vec::new();
    let mut sums: Vec<Vec<(f64, f64, usize)>> = Vec::new();
    for row in &t.rows {
        let Ok(x) = row[xc].trim().parse::<f64>() else { continue };
        for &yc in &ycols {
            let Ok(y) = row[yc].trim().parse::<f64>() else { continue };
            if !y.is_finite() {
                continue;
            }
            let label = match gc {
                Some(g) if ycols.len() == 1 => row[g].clone(),
                Some(g) => format!("{}/{}", row[g], t.headers[yc]),
                None => t.headers[yc].clone(),
            };
            let idx = match series.iter().position(|s| s.label == label) {
                Some(i) => i,
                None => {
                    series.push(Series { label, points: Vec::new() });
                    sums.push(Vec::new());
                    series.len() - 1
                }
            };
            match sums[idx].iter_mut().find(|e| e.0 == x) {
                Some(e) => {
                    e.1 += y;
                    e.2 += 1;
                }
                None => sums[idx].push((x, y, 1)),
            }
        }
    }
    for (s, acc) in series.iter_mut().zip(sums) {
        s.points = acc.into_iter().map(|(x, y, n)| (x, y / n as f64)).collect();
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::InvalidInput("no finite points to plot".into()));
    }

    let (x0, x1) = padded_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = padded_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let title = opts
        .title
        .clone()
        .unwrap_or_else(|| ycols.iter().map(|&c| t.headers[c].as_str()).collect::<Vec<_>>().join(", "));
    let mut out = String::new();
    open_svg(&mut out, &t.comments, &title);
    let _ =
        writeln!(out, "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#333\"/>");
    for v in ticks(x0, x1) {
        let x = sx(v);
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\"/>",
            num(x),
            TOP,
            num(x),
            TOP + ph
        );
        let _ =
            writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", num(x), TOP + ph + 16.0, num(v));
    }
    for v in ticks(y0, y1) {
        let y = sy(v);
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\"/>",
            LEFT,
            num(y),
            LEFT + pw,
            num(y)
        );
        let _ =
            writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>", LEFT - 6.0, num(y + 4.0), num(v));
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        LEFT + pw / 2.0,
        H - 12.0,
        esc(&t.headers[xc])
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{},{}", num(sx(x)), num(sy(y)))).collect();
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        );
        let ly = TOP + 14.0 + 16.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            lx,
            num(ly - 4.0),
            lx + 18.0,
            num(ly - 4.0)
        );
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\">{}</text>", lx + 24.0, num(ly), esc(&s.label));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// First column holds row labels, the remaining columns the matrix.
pub fn heatmap_svg(csv_text: &str, opts: &PlotOptions) -> Result<String> {
    let t = Table::parse(csv_text)?;
    if t.headers.len() < 2 {
        return Err(Error::InvalidInput("heatmap needs a label column and at least one value column".into()));
    }
    let mut m = Vec::with_capacity(t.rows.len());
    for row in &t.rows {
        let vals: Vec<f64> = row[1..]
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Format(format!("non-numeric cell '{s}'"))))
            .collect::<Result<_>>()?;
        m.push(vals);
    }
    let (nr, nc) = (m.len(), t.headers.len() - 1);
    let lo = m.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = m.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let (cw, ch) = (pw / nc as f64, ph / nr as f64);

    let mut out = String::new();
    open_svg(&mut out, &t.comments, opts.title.as_deref().unwrap_or("heatmap"));
    for (i, row) in m.iter().enumerate() {
        let y = TOP + ch * i as f64;
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            LEFT - 6.0,
            num(y + ch / 2.0 + 4.0),
            esc(&t.rows[i][0])
        );
        for (j, &v) in row.iter().enumerate() {
            let s = (v - lo) / span;
            let x = LEFT + cw * j as f64;
            let _ = writeln!(
                out,
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>",
                num(x),
                num(y),
                num(cw),
                num(ch),
                color(s)
            );
            if nr * nc <= 400 {
                let ink = if s > 0.6 { "black" } else { "white" };
                let _ = writeln!(
                    out,
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\" fill=\"{ink}\">{v:.2}</text>",
                    num(x + cw / 2.0),
                    num(y + ch / 2.0 + 3.0)
                );
            }
        }
    }
    for j in 0..nc {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            num(LEFT + cw * (j as f64 + 0.5)),
            TOP + ph + 16.0,
            esc(&t.headers[j + 1])
        );
    }
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\">min {}</text>", LEFT + pw + 12.0, TOP + 14.0, num(lo));
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\">max {}</text>", LEFT + pw + 12.0, TOP + 30.0, num(hi));
    out.push_str("</svg>\n");
    Ok(out)
}

// dark blue -> teal -> yellow
fn color(s: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 3] =
        [(0.0, [68.0, 1.0, 84.0]), (0.5, [33.0, 145.0, 140.0]), (1.0, [253.0, 231.0, 37.0])];
    let s = s.clamp(0.0, 1.0);
    let k = if s <= 0.5 { 0 } else { 1 };
    let (a, b) = (STOPS[k], STOPS[k + 1]);
    let f = (s - a.0) / (b.0 - a.0);
    let c: Vec<u8> = (0..3).map(|i| (a.1[i] + f * (b.1[i] - a.1[i])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

pub fn render(csv_text: &str, kind: PlotKind, opts: &PlotOptions) -> Result<String> {
    match kind {
        PlotKind::Line => line_svg(csv_text, opts),
        PlotKind::Heatmap => heatmap_svg(csv_text, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRACE: &str =
        "# gdl 0.1.0 train seed=3\nstep,kind,value,other\n0,a,1.0,2\n0,a,3.0,2\n1,a,2.5,1\n0,b,0.5,\n2,b,-1,0\n";

    #[test]
    fn averages_duplicates_and_groups() {
        let svg =
            line_svg(TRACE, &PlotOptions { y: vec!["value".into()], group: Some("kind".into()), ..Default::default() })
                .unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("<!-- gdl 0.1.0 train seed=3 -->"));
        assert!(svg.contains(">a</text>") && svg.contains(">b</text>"));
    }

    #[test]
    fn default_y_is_every_numeric_column() {
        let svg = line_svg(TRACE, &PlotOptions::default()).unwrap();
        // value and other; kind is text
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn byte_identical() {
        let o = PlotOptions::default();
        assert_eq!(line_svg(TRACE, &o).unwrap(), line_svg(TRACE, &o).unwrap());
    }

    #[test]
    fn heatmap_cells() {
        let csv = "class,0,1,2\n0,0.9,0.05,0.05\n1,0.1,0.8,0.1\n";
        let svg = heatmap_svg(csv, &PlotOptions::default()).unwrap();
        assert_eq!(svg.matches("<rect").count(), 1 + 6);
        assert!(svg.contains("#fde725"));
    }

    #[test]
    fn bad_inputs() {
        assert!(line_svg("a,b\n", &PlotOptions::default()).is_err());
        assert!(line_svg(TRACE, &PlotOptions { x: Some("nope".into()), ..Default::default() }).is_err());
        assert!(heatmap_svg("l,a\nx,oops\n", &PlotOptions::default()).is_err());
    }

    #[test]
    fn colors_at_ends() {
        assert_eq!(color(0.0), "#440154");
        assert_eq!(color(1.0), "#fde725");
    }
}
