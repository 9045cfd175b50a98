//! Self-contained SVG emission for convergence and similarity plots:
//! mean line plus a mean +/- std band per strategy, fixed color map,
//! deterministic byte output.

use super::{AggregateSeries, ReportError};
use std::fmt::Write as _;

/// Plot family: linear-accuracy convergence or log-scale similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Convergence,
    Similarity,
}

/// Floor applied to similarity values before the log transform.
pub const LOG_FLOOR: f64 = 1e-8;

const WIDTH: f64 = 840.0;
const HEIGHT: f64 = 520.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 180.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

/// Fixed strategy color map matching the figure conventions.
pub fn strategy_color(strategy: &str) -> &'static str {
    match strategy {
        "model-inversion" => "#1f77b4",
        "gradient-inversion" => "#ff7f0e",
        "reference" => "#2ca02c",
        "random" => "#000000",
        "drop" => "#d62728",
        "no-action" => "#7f7f7f",
        _ => "#9467bd",
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn to_px(&self, v: f64, px_lo: f64, px_hi: f64) -> f64 {
        let t = if self.hi > self.lo {
            (v - self.lo) / (self.hi - self.lo)
        } else {
            0.5
        };
        px_lo + t * (px_hi - px_lo)
    }
}

/// Renders one plot over a set of aggregate series.
pub fn render_svg(series: &[AggregateSeries], kind: PlotKind) -> Result<String, ReportError> {
    if series.is_empty() || series.iter().all(|s| s.rounds() == 0) {
        return Err(ReportError::Precondition("no series to plot".into()));
    }
    let max_round = series.iter().map(|s| s.rounds()).max().unwrap();

    let transform = |v: f64| -> f64 {
        match kind {
            PlotKind::Convergence => v,
            PlotKind::Similarity => v.max(LOG_FLOOR).log10(),
        }
    };

    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    let mut clamped = false;
    for s in series {
        for i in 0..s.rounds() {
            let (m, sd) = s.point(i, kind);
            let lo_raw = m - sd;
            let hi_raw = m + sd;
            if kind == PlotKind::Similarity && lo_raw <= LOG_FLOOR {
                clamped = true;
            }
            y_lo = y_lo.min(transform(lo_raw));
            y_hi = y_hi.max(transform(hi_raw));
        }
    }
    if !y_lo.is_finite() || !y_hi.is_finite() {
        return Err(ReportError::Precondition("non-finite plot data".into()));
    }
    if y_hi - y_lo < 1e-9 {
        y_hi = y_lo + 1.0;
    }
    let pad = 0.04 * (y_hi - y_lo);
    let y_axis = Axis {
        lo: y_lo - pad,
        hi: y_hi + pad,
    };
    let x_axis = Axis {
        lo: 1.0,
        hi: max_round.max(2) as f64,
    };

    let px = |round: f64| x_axis.to_px(round, MARGIN_L, WIDTH - MARGIN_R);
    let py = |v: f64| y_axis.to_px(v, HEIGHT - MARGIN_B, MARGIN_T);

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(
        out,
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>"
    );

    // Axes.
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let y0 = HEIGHT - MARGIN_B;
    let y1 = MARGIN_T;
    let _ = writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>",
        fmt(x0),
        fmt(y0),
        fmt(x1),
        fmt(y0)
    );
    let _ = writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>",
        fmt(x0),
        fmt(y0),
        fmt(x0),
        fmt(y1)
    );

    // Ticks: 5 on each axis.
    for t in 0..=5 {
        let frac = t as f64 / 5.0;
        let round = x_axis.lo + frac * (x_axis.hi - x_axis.lo);
        let x = px(round);
        let _ =
            writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>",
            fmt(x), fmt(y0), fmt(x), fmt(y0 + 5.0)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\" fill=\"#333333\">{}</text>",
            fmt(x), fmt(y0 + 18.0),
            round.round() as i64
        );

        let v = y_axis.lo + frac * (y_axis.hi - y_axis.lo);
        let y = py(v);
        let _ =
            writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>",
            fmt(x0 - 5.0), fmt(y), fmt(x0), fmt(y)
        );
        let label = match kind {
            PlotKind::Convergence => format!("{v:.2}"),
            PlotKind::Similarity => format!("1e{v:.1}"),
        };
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\" fill=\"#333333\">{label}</text>",
            fmt(x0 - 8.0), fmt(y + 4.0)
        );
    }

    let x_label = "communication round";
    let y_label = match kind {
        PlotKind::Convergence => "mean test accuracy".to_string(),
        PlotKind::Similarity => {
            let mut l = "mean pairwise parameter L2 (log scale)".to_string();
            if clamped {
                l.push_str(&format!(" [floor {LOG_FLOOR:.0e}]"));
            }
            l
        }
    };
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" fill=\"#333333\">{x_label}</text>",
        fmt((x0 + x1) / 2.0), fmt(HEIGHT - 12.0)
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" fill=\"#333333\" transform=\"rotate(-90 16 {})\">{y_label}</text>",
        fmt((y0 + y1) / 2.0), fmt((y0 + y1) / 2.0)
    );

    // Bands then lines, so lines draw on top.
    for s in series {
        let color = strategy_color(&s.strategy);
        let n = s.rounds();
        let mut band = String::new();
        for i in 0..n {
            let (m, sd) = s.point(i, kind);
            let _ = write!(
                band,
                "{},{} ",
                fmt(px((i + 1) as f64)),
                fmt(py(transform(m + sd)))
            );
        }
        for i in (0..n).rev() {
            let (m, sd) = s.point(i, kind);
            let _ = write!(
                band,
                "{},{} ",
                fmt(px((i + 1) as f64)),
                fmt(py(transform((m - sd).max(match kind {
                    PlotKind::Convergence => f64::NEG_INFINITY,
                    PlotKind::Similarity => LOG_FLOOR,
                }))))
            );
        }
        let _ = writeln!(
            out,
            "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>",
            band.trim_end()
        );
    }
    for s in series {
        let color = strategy_color(&s.strategy);
        let mut line = String::new();
        for i in 0..s.rounds() {
            let (m, _) = s.point(i, kind);
            let _ = write!(
                line,
                "{},{} ",
                fmt(px((i + 1) as f64)),
                fmt(py(transform(m)))
            );
        }
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            line.trim_end()
        );
    }

    // Legend.
    let lx = WIDTH - MARGIN_R + 16.0;
    for (i, s) in series.iter().enumerate() {
        let ly = MARGIN_T + 10.0 + i as f64 * 18.0;
        let color = strategy_color(&s.strategy);
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{color}\"/>",
            fmt(lx),
            fmt(ly - 10.0)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"#333333\">{}</text>",
            fmt(lx + 18.0),
            fmt(ly),
            s.strategy
        );
    }

    out.push_str("</svg>\n");
    Ok(out)
}
