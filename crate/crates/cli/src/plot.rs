//! Raster plot of the schedule curves: cumulative alpha on top, log10 kappa
//! below, both against the timestep. No text is drawn.

use std::path::Path;

use difface::imageio;
use difface::schedule::NoiseSchedule;
use plotters::prelude::*;

use crate::error::{CliError, CliResult};

fn panel(
    area: &DrawingArea<BitMapBackend<'_>, plotters::coord::Shift>,
    xs: &[f64],
    ys: &[f64],
    color: &RGBColor,
) -> CliResult<()> {
    let (x0, x1) = (xs[0], *xs.last().expect("nonempty"));
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.05).max(1e-9);
    let (y0, y1) = (lo - pad, hi + pad);
    let mut chart = ChartBuilder::on(area)
        .margin(24)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    let frame = vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)];
    chart.draw_series(LineSeries::new(frame, &BLACK)).map_err(plot_err)?;
    for k in 1..10 {
        let x = x0 + (x1 - x0) * k as f64 / 10.0;
        chart
            .draw_series(LineSeries::new(vec![(x, y0), (x, y1)], &RGBColor(225, 225, 225)))
            .map_err(plot_err)?;
    }
    chart
        .draw_series(LineSeries::new(
            xs.iter().copied().zip(ys.iter().copied()),
            color.stroke_width(2),
        ))
        .map_err(plot_err)?;
    Ok(())
}

fn plot_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::data(format!("plot: {e}"))
}

const WIDTH: u32 = 900;
const HEIGHT: u32 = 640;

pub fn schedule_curves(schedule: &NoiseSchedule, path: &Path) -> CliResult<()> {
    let mut rgb = vec![0u8; (WIDTH * HEIGHT * 3) as usize];
    {
        let root = BitMapBackend::with_buffer(&mut rgb, (WIDTH, HEIGHT)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let xs: Vec<f64> = (1..=schedule.steps()).map(|t| t as f64).collect();
        let alpha: Vec<f64> = schedule.alphas_cum().to_vec();
        let kappa: Vec<f64> = alpha.iter().map(|a| (a / (1.0 - a)).log10()).collect();
        let areas = root.split_evenly((2, 1));
        panel(&areas[0], &xs, &alpha, &BLUE)?;
        panel(&areas[1], &xs, &kappa, &RED)?;
        root.present().map_err(plot_err)?;
    }
    let img = imageio::from_u8(&rgb, 3, HEIGHT as usize, WIDTH as usize)?;
    imageio::save_png(path, &img)?;
    Ok(())
}
