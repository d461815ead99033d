//! Static SVG chart of the fairness gap, with the performance series and the
//! recommended stop when present.

use std::path::Path;

use anyhow::anyhow;
use plotters::prelude::*;

use fairdyn::report::{Report, StoppingSection};

const WIDTH: u32 = 900;
const HEIGHT: u32 = 420;

pub fn render(report: &Report, path: &Path) -> anyhow::Result<()> {
    let gap = report.gap.points();
    let (x0, x1) = match (gap.first(), gap.last()) {
        (Some(a), Some(b)) if b.step > a.step => (a.step as f64, b.step as f64),
        (Some(a), _) => (a.step as f64 - 1.0, a.step as f64 + 1.0),
        _ => return Err(anyhow!("empty gap series")),
    };
    let y_max = gap.iter().map(|p| p.mean + p.std.unwrap_or(0.0)).fold(0.0f64, f64::max).max(1e-3) * 1.1;

    let root = SVGBackend::new(path, (WIDTH, HEIGHT)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(x0..x1, 0.0..y_max)
        .map_err(|e| anyhow!("{e}"))?;
    chart.configure_mesh().draw().map_err(|e| anyhow!("{e}"))?;

    let band_hi: Vec<(f64, f64)> = gap.iter().map(|p| (p.step as f64, p.mean + p.std.unwrap_or(0.0))).collect();
    let band_lo: Vec<(f64, f64)> =
        gap.iter().rev().map(|p| (p.step as f64, (p.mean - p.std.unwrap_or(0.0)).max(0.0))).collect();
    chart
        .draw_series(std::iter::once(Polygon::new(
            band_hi.into_iter().chain(band_lo).collect::<Vec<_>>(),
            BLUE.mix(0.15).filled(),
        )))
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .draw_series(LineSeries::new(gap.iter().map(|p| (p.step as f64, p.mean)), BLUE.stroke_width(2)))
        .map_err(|e| anyhow!("{e}"))?;

    if let StoppingSection::Recommended(r) = &report.stopping {
        let x = r.recommended_step as f64;
        chart
            .draw_series(LineSeries::new([(x, 0.0), (x, y_max)], RED.stroke_width(1)))
            .map_err(|e| anyhow!("{e}"))?;
    }
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}
