//! CSV tables, SVG line charts and the per-run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

/// Shortest round-trip decimal, switching to exponent form outside
/// `[1e-5, 1e16)`. Independent of locale.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file: &str, header: &[&str]) -> Self {
        Table {
            file: file.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// Column `name` of every row.
    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j].as_str()).collect())
    }
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_log: bool,
    pub y_log: bool,
    pub series: Vec<Series>,
    /// Horizontal reference line in data units.
    pub hline: Option<f64>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn axis_value(v: f64, log: bool) -> Option<f64> {
    let t = if log { v.log10() } else { v };
    t.is_finite().then_some(t)
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let pts: Vec<Vec<(f64, f64)>> = self
            .series
            .iter()
            .map(|s| {
                s.points
                    .iter()
                    .filter_map(|&(x, y)| {
                        Some((axis_value(x, self.x_log)?, axis_value(y, self.y_log)?))
                    })
                    .collect()
            })
            .collect();
        let all = pts.iter().flatten();
        let (mut x0, mut x1, mut y0, mut y1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for &(x, y) in all {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if let Some(h) = self.hline.and_then(|h| axis_value(h, self.y_log)) {
            y0 = y0.min(h);
            y1 = y1.max(h);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        let (x0, x1) = padded(x0, x1);
        let (y0, y1) = padded(y0, y1);
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
        let py = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            escape(&self.title)
        );
        let (bx, by) = (H - BOTTOM, LEFT);
        let _ = writeln!(
            s,
            r#"<path d="M{by:.1},{TOP:.1} L{by:.1},{bx:.1} L{:.1},{bx:.1}" fill="none" stroke="black"/>"#,
            W - RIGHT
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let xt = if self.x_log {
                format!("1e{xv:.2}")
            } else {
                format!("{xv:.3}")
            };
            let yt = if self.y_log {
                format!("1e{yv:.2}")
            } else {
                format!("{yv:.3}")
            };
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xt}</text>"#,
                px(xv),
                bx + 16.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yt}</text>"#,
                by - 6.0,
                py(yv) + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (LEFT + W - RIGHT) / 2.0,
            H - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(&self.y_label)
        );
        if let Some(h) = self.hline.and_then(|h| axis_value(h, self.y_log)) {
            let _ = writeln!(
                s,
                r#"<line x1="{LEFT:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
                W - RIGHT,
                y = py(h)
            );
        }
        for (k, (series, p)) in self.series.iter().zip(&pts).enumerate() {
            let color = COLORS[k % COLORS.len()];
            if !p.is_empty() {
                let d: Vec<String> = p
                    .iter()
                    .enumerate()
                    .map(|(i, &(x, y))| {
                        format!(
                            "{}{:.2},{:.2}",
                            if i == 0 { "M" } else { "L" },
                            px(x),
                            py(y)
                        )
                    })
                    .collect();
                let _ = writeln!(
                    s,
                    r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    d.join(" ")
                );
                for &(x, y) in p {
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                        px(x),
                        py(y)
                    );
                }
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
                LEFT + 10.0,
                TOP + 14.0 * (k as f64 + 1.0),
                escape(&series.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Everything one command produced, ready to be written to a directory.
pub struct ResultBundle {
    pub command: String,
    pub config: Option<RunConfig>,
    pub seed: u64,
    pub tables: Vec<Table>,
    pub figures: Vec<(String, String)>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    artifact: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    created_unix: u64,
    files: Vec<&'a str>,
    config: Option<&'a RunConfig>,
}

fn write_file(path: PathBuf, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(&path, contents).map_err(|source| CliError::Io { path, source })
}

impl ResultBundle {
    pub fn new(command: &str, config: Option<RunConfig>, seed: u64) -> Self {
        ResultBundle {
            command: command.to_string(),
            config,
            seed,
            tables: Vec::new(),
            figures: Vec::new(),
        }
    }

    pub fn table(&self, file: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.file == file)
    }

    /// Writes tables, figures and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for t in &self.tables {
            write_file(dir.join(&t.file), t.to_csv().as_bytes())?;
        }
        for (name, svg) in &self.figures {
            write_file(dir.join(name), svg.as_bytes())?;
        }
        let files = self
            .tables
            .iter()
            .map(|t| t.file.as_str())
            .chain(self.figures.iter().map(|f| f.0.as_str()))
            .collect();
        let manifest = Manifest {
            artifact: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: &self.command,
            seed: self.seed,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            files,
            config: self.config.as_ref(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_file(dir.join("manifest.json"), text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_are_locale_free() {
        assert_eq!(num(0.5), "0.5");
        assert_eq!(num(2.0), "2.0");
        assert_eq!(num(1e-9), "1e-9");
        assert_eq!(num(f64::NAN), "NaN");
        assert_eq!(num(-1234.25), "-1234.25");
    }

    #[test]
    fn csv_quotes_embedded_commas() {
        let mut t = Table::new("x.csv", &["check", "detail"]);
        t.push(vec!["a".into(), "one, two".into()]);
        assert_eq!(t.to_csv(), "check,detail\na,\"one, two\"\n");
    }

    #[test]
    fn svg_is_well_formed() {
        let chart = Chart {
            title: "t <1>".into(),
            x_label: "R".into(),
            y_label: "tau".into(),
            x_log: true,
            y_log: true,
            series: vec![Series {
                label: "mean".into(),
                points: vec![(10.0, 50.0), (20.0, 100.0), (0.0, 1.0)],
            }],
            hline: None,
        };
        let svg = chart.to_svg();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("t &lt;1&gt;"));
        assert_eq!(svg.matches("<circle").count(), 2);
    }
}
