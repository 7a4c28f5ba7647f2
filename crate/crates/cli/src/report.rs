//! The `report` subcommand: median table and SVG line plots from a traces
//! CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hcl_core::pipeline::{median, Method, TRACE_COLUMNS};
use hcl_core::HclError;

use crate::bench::{median_table, SUMMARY_FILE};
use crate::error::{CliError, CliResult};

pub const ACCURACY_SVG: &str = "accuracy.svg";
pub const LOSS_SVG: &str = "loss.svg";

#[derive(Debug, Clone, PartialEq)]
struct Point {
    epoch: usize,
    accuracy: Option<f64>,
    loss: f64,
}

/// Parsed traces: method -> seed -> epochs in order.
type Traces = BTreeMap<Method, BTreeMap<u64, Vec<Point>>>;

#[derive(Debug)]
pub struct ReportFiles {
    pub summary: PathBuf,
    pub accuracy_svg: PathBuf,
    pub loss_svg: PathBuf,
}

pub fn cmd_report(input: &Path, out: &Path) -> CliResult<ReportFiles> {
    let text = fs::read_to_string(input).map_err(|e| CliError::io(input, e))?;
    let traces = parse_traces(&text)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;

    let rows: Vec<(Method, Vec<f64>, usize)> = traces
        .iter()
        .map(|(&m, seeds)| {
            let finals: Vec<f64> = seeds
                .values()
                .filter_map(|pts| pts.last().and_then(|p| p.accuracy))
                .collect();
            (m, finals, seeds.len())
        })
        .collect();
    let files = ReportFiles {
        summary: out.join(SUMMARY_FILE),
        accuracy_svg: out.join(ACCURACY_SVG),
        loss_svg: out.join(LOSS_SVG),
    };
    let write =
        |path: &Path, body: String| fs::write(path, body).map_err(|e| CliError::io(path, e));
    write(&files.summary, median_table(&rows))?;
    write(
        &files.accuracy_svg,
        line_plot(
            "target accuracy",
            &median_curves(&traces, |p| p.accuracy),
            Some((0.0, 1.0)),
        ),
    )?;
    write(
        &files.loss_svg,
        line_plot(
            "total loss",
            &median_curves(&traces, |p| Some(p.loss)),
            None,
        ),
    )?;
    Ok(files)
}

fn parse_err(line: u64, reason: impl Into<String>) -> CliError {
    HclError::Parse {
        line: line as usize,
        reason: reason.into(),
    }
    .into()
}

fn csv_err(e: csv::Error) -> CliError {
    let line = e.position().map_or(1, |p| p.line());
    parse_err(line, e.to_string())
}

fn parse_traces(text: &str) -> CliResult<Traces> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr.headers().map_err(csv_err)?.clone();
    let expected: Vec<&str> = ["method", "seed"]
        .into_iter()
        .chain(TRACE_COLUMNS)
        .collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(parse_err(
            1,
            format!("expected header `{}`", expected.join(",")),
        ));
    }
    let col = |name: &str| {
        expected
            .iter()
            .position(|c| *c == name)
            .expect("known column")
    };
    let (c_epoch, c_acc, c_loss) = (col("epoch"), col("target_accuracy"), col("total_loss"));

    let mut traces = Traces::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let method: Method = field(0)
            .parse()
            .map_err(|_| parse_err(line, format!("unknown method `{}`", field(0))))?;
        let num = |i: usize| -> CliResult<f64> {
            field(i).parse::<f64>().map_err(|_| {
                parse_err(
                    line,
                    format!("`{}` is not a number in column {}", field(i), expected[i]),
                )
            })
        };
        let seed: u64 = field(1)
            .parse()
            .map_err(|_| parse_err(line, format!("bad seed `{}`", field(1))))?;
        let epoch: usize = field(c_epoch)
            .parse()
            .map_err(|_| parse_err(line, format!("bad epoch `{}`", field(c_epoch))))?;
        let accuracy = if field(c_acc).is_empty() {
            None
        } else {
            Some(num(c_acc)?)
        };
        let point = Point {
            epoch,
            accuracy,
            loss: num(c_loss)?,
        };
        let series = traces.entry(method).or_default().entry(seed).or_default();
        if series.last().is_some_and(|p| p.epoch >= epoch) {
            return Err(parse_err(
                line,
                format!("epoch {epoch} out of order for {method} seed {seed}"),
            ));
        }
        series.push(point);
    }
    if traces.is_empty() {
        return Err(parse_err(2, "no trace rows"));
    }
    Ok(traces)
}

/// Per method, the median over seeds of `value` at every epoch that has at
/// least one value.
fn median_curves(
    traces: &Traces,
    value: impl Fn(&Point) -> Option<f64>,
) -> Vec<(Method, Vec<(f64, f64)>)> {
    traces
        .iter()
        .map(|(&m, seeds)| {
            let mut by_epoch: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for p in seeds.values().flatten() {
                if let Some(v) = value(p) {
                    by_epoch.entry(p.epoch).or_default().push(v);
                }
            }
            let pts = by_epoch
                .into_iter()
                .filter_map(|(e, vs)| median(&vs).map(|v| (e as f64, v)))
                .collect();
            (m, pts)
        })
        .collect()
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const LEGEND_W: f64 = 110.0;
const PALETTE: [&str; 7] = [
    "#7f7f7f", "#bcbd22", "#1f77b4", "#9467bd", "#2ca02c", "#ff7f0e", "#d62728",
];

fn color(m: Method) -> &'static str {
    PALETTE[Method::ALL.iter().position(|&x| x == m).unwrap_or(0) % PALETTE.len()]
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Self-contained SVG with one polyline per series.
fn line_plot(
    title: &str,
    series: &[(Method, Vec<(f64, f64)>)],
    y_range: Option<(f64, f64)>,
) -> String {
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (x_lo, x_hi) = all
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, _)| {
            (lo.min(x), hi.max(x))
        });
    let (x_lo, x_hi) = if x_lo.is_finite() {
        span(x_lo, x_hi)
    } else {
        (0.0, 1.0)
    };
    let (y_lo, y_hi) = match y_range {
        Some(r) => r,
        None => {
            let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| {
                (lo.min(y), hi.max(y))
            });
            if lo.is_finite() {
                span(lo, hi)
            } else {
                (0.0, 1.0)
            }
        }
    };
    let plot_w = WIDTH - 2.0 * MARGIN - LEGEND_W;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{title} vs epoch</text>"#,
        MARGIN + plot_w / 2.0,
        MARGIN / 2.0
    );
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, MARGIN + plot_w, MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{x0:.2},{y1:.2} L{x0:.2},{y0:.2} L{x1:.2},{y0:.2}" fill="none" stroke="black"/>"#
    );
    for (v, anchor_x) in [(x_lo, x0), (x_hi, x1)] {
        let _ = writeln!(
            s,
            r#"<text x="{anchor_x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 16.0,
            tick(v)
        );
    }
    for (v, anchor_y) in [(y_lo, y0), (y_hi, y1)] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            anchor_y + 4.0,
            tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#,
        MARGIN + plot_w / 2.0,
        HEIGHT - 12.0
    );

    for (i, (m, pts)) in series.iter().enumerate() {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline data-method="{m}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            color(*m),
            coords.join(" ")
        );
        let ly = MARGIN + 16.0 * i as f64;
        let lx = WIDTH - MARGIN - LEGEND_W + 20.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="2"/>"#,
            lx + 18.0,
            color(*m)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{m}</text>"#,
            lx + 24.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e6 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> String {
        format!("method,seed,{}\n", TRACE_COLUMNS.join(","))
    }

    fn row(method: &str, seed: u64, epoch: usize, acc: &str, loss: f64) -> String {
        format!("{method},{seed},{epoch},0.1,0.2,{loss},{acc},0.4,0.5,0.25,0.001\n")
    }

    #[test]
    fn parses_and_groups() {
        let text = header()
            + &row("hcl", 0, 0, "0.5", 2.0)
            + &row("hcl", 0, 1, "0.6", 1.5)
            + &row("plain_st", 3, 0, "", 1.0);
        let t = parse_traces(&text).unwrap();
        assert_eq!(t[&Method::Hcl][&0].len(), 2);
        assert_eq!(t[&Method::PlainSt][&3][0].accuracy, None);
        assert_eq!(t[&Method::Hcl][&0][1].loss, 1.5);
    }

    #[test]
    fn bad_number_reports_its_line() {
        let text = header() + &row("hcl", 0, 0, "0.5", 2.0) + &row("hcl", 0, 1, "zero", 1.5);
        match parse_traces(&text).unwrap_err() {
            CliError::Core(HclError::Parse { line, .. }) => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn ragged_row_reports_its_line() {
        let text = header() + &row("hcl", 0, 0, "0.5", 2.0) + "hcl,0,1\n";
        match parse_traces(&text).unwrap_err() {
            CliError::Core(HclError::Parse { line, .. }) => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn wrong_header_and_unknown_method_are_rejected() {
        assert!(matches!(
            parse_traces("a,b\n1,2\n").unwrap_err(),
            CliError::Core(HclError::Parse { line: 1, .. })
        ));
        let text = header() + &row("magic", 0, 0, "0.5", 1.0);
        assert!(matches!(
            parse_traces(&text).unwrap_err(),
            CliError::Core(HclError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn epochs_must_increase() {
        let text = header() + &row("hcl", 0, 1, "0.5", 2.0) + &row("hcl", 0, 1, "0.5", 2.0);
        assert!(parse_traces(&text).is_err());
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(parse_traces("").is_err());
        assert!(parse_traces(&header()).is_err());
    }

    #[test]
    fn one_polyline_per_method_with_one_point_per_epoch() {
        let mut text = header();
        for e in 0..30 {
            text += &row("hcl", 0, e, "0.5", 30.0 - e as f64);
        }
        let t = parse_traces(&text).unwrap();
        let svg = line_plot("loss", &median_curves(&t, |p| Some(p.loss)), None);
        assert_eq!(svg.matches("<polyline").count(), 1);
        let points = svg
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        assert_eq!(points.split(' ').count(), 30);
    }

    #[test]
    fn median_curve_takes_the_middle_seed() {
        let text = header()
            + &row("hcl", 0, 0, "0.1", 1.0)
            + &row("hcl", 1, 0, "0.9", 1.0)
            + &row("hcl", 2, 0, "0.4", 1.0);
        let t = parse_traces(&text).unwrap();
        let c = median_curves(&t, |p| p.accuracy);
        assert_eq!(c[0].1, vec![(0.0, 0.4)]);
    }
}
