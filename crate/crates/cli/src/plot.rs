use std::path::Path;

use icrlsm_core::{Error, Result};
use plotters::prelude::*;

/// Mean D_total against n with one-standard-deviation error bars.
pub fn scaling_svg(path: &Path, points: &[(usize, f64, f64)]) -> Result<()> {
    let err = |e: String| Error::Io {
        path: path.to_path_buf(),
        message: e,
    };
    let (lo, hi) = match (points.first(), points.last()) {
        (Some(a), Some(b)) => (a.0 as f64 - 0.5, b.0 as f64 + 0.5),
        _ => (0.0, 1.0),
    };
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Causal disentanglement against number of variables", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(lo..hi, 0f64..1.05)
        .map_err(|e| err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc("number of causal variables")
        .y_desc("D_total")
        .draw()
        .map_err(|e| err(e.to_string()))?;
    let xy: Vec<(f64, f64)> = points.iter().map(|&(n, m, _)| (n as f64, m)).collect();
    chart.draw_series(LineSeries::new(xy.clone(), &BLUE)).map_err(|e| err(e.to_string()))?;
    chart
        .draw_series(xy.iter().map(|&p| Circle::new(p, 3, BLUE.filled())))
        .map_err(|e| err(e.to_string()))?;
    chart
        .draw_series(
            points
                .iter()
                .map(|&(n, m, s)| ErrorBar::new_vertical(n as f64, m - s, m, m + s, BLUE.filled(), 8)),
        )
        .map_err(|e| err(e.to_string()))?;
    root.present().map_err(|e| err(e.to_string()))
}
