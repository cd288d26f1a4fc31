//! PNG rendering. Every figure is drawn from data that is also written to a
//! CSV next to it, so plots can be regenerated without re-running anything.

use std::path::Path;
use std::sync::OnceLock;

use anyhow::{anyhow, Result};
use plotters::prelude::*;
use plotters::style::FontStyle;

const SIZE: (u32, u32) = (900, 650);

const FONT_CANDIDATES: &[&str] = &[
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/Library/Fonts/Arial.ttf",
    "C:\\Windows\\Fonts\\arial.ttf",
];

/// Registers a TTF for labels (`OTLAB_FONT` or a common system path).
/// Without one, figures are drawn with no text.
fn have_font() -> bool {
    static FONT: OnceLock<bool> = OnceLock::new();
    *FONT.get_or_init(|| {
        let env = std::env::var("OTLAB_FONT").ok();
        let candidates = env.iter().map(String::as_str).chain(FONT_CANDIDATES.iter().copied());
        for path in candidates {
            if let Ok(bytes) = std::fs::read(path) {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if plotters::style::register_font("sans-serif", FontStyle::Normal, bytes).is_ok() {
                    return true;
                }
            }
        }
        false
    })
}

const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

fn err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("plotting failed: {e:?}")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Line chart; `log_x` plots `log10(x)` on the horizontal axis.
pub fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool) -> Result<()> {
    let text = have_font();
    let tx = |x: f64| if log_x { x.log10() } else { x };
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| tx(p.0))));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let root = BitMapBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(15);
    if text {
        builder.caption(title, ("sans-serif", 22)).x_label_area_size(45).y_label_area_size(70);
    }
    let mut chart = builder.build_cartesian_2d(x0..x1, y0..y1).map_err(err)?;
    if text {
        let xl = if log_x { format!("log10 {x_label}") } else { x_label.to_string() };
        chart
            .configure_mesh()
            .x_desc(xl)
            .y_desc(y_label)
            .label_style(("sans-serif", 14))
            .draw()
            .map_err(err)?;
    } else {
        chart.configure_mesh().disable_x_mesh().disable_y_mesh().draw().map_err(err)?;
    }
    for (k, s) in series.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s.points.iter().map(|p| (tx(p.0), p.1)).collect();
        let drawn = chart.draw_series(LineSeries::new(pts.clone(), c.stroke_width(2))).map_err(err)?;
        if text {
            drawn.label(s.name.clone()).legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], c));
        }
        if pts.len() <= 50 {
            chart
                .draw_series(pts.iter().map(|&p| Circle::new(p, 3, c.filled())))
                .map_err(err)?;
        }
    }
    if text && series.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .label_font(("sans-serif", 14))
            .draw()
            .map_err(err)?;
    }
    root.present().map_err(err)?;
    Ok(())
}

/// Grid of 2-D scatter panels with the mixture means marked.
pub fn scatter_grid(path: &Path, panels: &[(String, Vec<[f64; 2]>)], means: &[[f64; 2]], extent: f64) -> Result<()> {
    let text = have_font();
    let cols = panels.len().clamp(1, 3);
    let rows = panels.len().div_ceil(cols).max(1);
    let root = BitMapBackend::new(path, (320 * cols as u32, 320 * rows as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    for (area, (title, pts)) in root.split_evenly((rows, cols)).iter().zip(panels) {
        let mut builder = ChartBuilder::on(area);
        builder.margin(8);
        if text {
            builder.caption(title, ("sans-serif", 16)).x_label_area_size(20).y_label_area_size(30);
        }
        let mut chart = builder.build_cartesian_2d(-extent..extent, -extent..extent).map_err(err)?;
        if text {
            chart.configure_mesh().label_style(("sans-serif", 10)).draw().map_err(err)?;
        } else {
            chart.configure_mesh().disable_x_mesh().disable_y_mesh().draw().map_err(err)?;
        }
        chart
            .draw_series(pts.iter().map(|p| Circle::new((p[0], p[1]), 1, PALETTE[0].mix(0.6).filled())))
            .map_err(err)?;
        chart
            .draw_series(means.iter().map(|m| Cross::new((m[0], m[1]), 5, PALETTE[3].stroke_width(2))))
            .map_err(err)?;
    }
    root.present().map_err(err)?;
    Ok(())
}

/// One box per entry: whiskers at min/max, box at the quartiles.
pub fn boxplot(path: &Path, title: &str, y_label: &str, boxes: &[(String, [f64; 5])]) -> Result<()> {
    let text = have_font();
    let (y0, y1) = bounds(boxes.iter().flat_map(|b| b.1.iter().copied()));
    let n = boxes.len().max(1) as f64;
    let root = BitMapBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(15);
    if text {
        builder.caption(title, ("sans-serif", 22)).x_label_area_size(45).y_label_area_size(70);
    }
    let mut chart = builder.build_cartesian_2d(-0.5..n - 0.5, y0..y1).map_err(err)?;
    if text {
        let labels: Vec<String> = boxes.iter().map(|b| b.0.clone()).collect();
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(boxes.len().max(1))
            .x_label_formatter(&|x| {
                let i = x.round();
                if (x - i).abs() < 1e-6 && i >= 0.0 {
                    labels.get(i as usize).cloned().unwrap_or_default()
                } else {
                    String::new()
                }
            })
            .y_desc(y_label)
            .label_style(("sans-serif", 14))
            .draw()
            .map_err(err)?;
    }
    for (i, (_, [lo, q1, med, q3, hi])) in boxes.iter().enumerate() {
        let x = i as f64;
        let c = PALETTE[0];
        chart
            .draw_series(std::iter::once(Rectangle::new([(x - 0.3, *q1), (x + 0.3, *q3)], c.mix(0.3).filled())))
            .map_err(err)?;
        let lines = [
            vec![(x - 0.3, *med), (x + 0.3, *med)],
            vec![(x, *lo), (x, *q1)],
            vec![(x, *q3), (x, *hi)],
            vec![(x - 0.15, *lo), (x + 0.15, *lo)],
            vec![(x - 0.15, *hi), (x + 0.15, *hi)],
        ];
        for l in lines {
            chart.draw_series(std::iter::once(PathElement::new(l, c.stroke_width(2)))).map_err(err)?;
        }
    }
    root.present().map_err(err)?;
    Ok(())
}

/// Segments from source points to their images.
pub fn segments(path: &Path, title: &str, segs: &[[f64; 4]], means: &[[f64; 2]], extent: f64) -> Result<()> {
    let text = have_font();
    let root = BitMapBackend::new(path, (700, 700)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(15);
    if text {
        builder.caption(title, ("sans-serif", 20)).x_label_area_size(30).y_label_area_size(40);
    }
    let mut chart = builder.build_cartesian_2d(-extent..extent, -extent..extent).map_err(err)?;
    if text {
        chart.configure_mesh().label_style(("sans-serif", 12)).draw().map_err(err)?;
    }
    chart
        .draw_series(
            segs.iter()
                .map(|s| PathElement::new(vec![(s[0], s[1]), (s[2], s[3])], BLACK.mix(0.25))),
        )
        .map_err(err)?;
    chart
        .draw_series(segs.iter().map(|s| Circle::new((s[0], s[1]), 2, PALETTE[2].filled())))
        .map_err(err)?;
    chart
        .draw_series(segs.iter().map(|s| Circle::new((s[2], s[3]), 2, PALETTE[0].filled())))
        .map_err(err)?;
    chart
        .draw_series(means.iter().map(|m| Cross::new((m[0], m[1]), 5, PALETTE[3].stroke_width(2))))
        .map_err(err)?;
    root.present().map_err(err)?;
    Ok(())
}
