use std::path::Path;

use plotters::prelude::*;

use super::export::CurvePoint;
use super::HarnessError;
use crate::taskspace::TaskEmbedding;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Nll,
    Rmse,
}

impl Metric {
    fn label(self) -> &'static str {
        match self {
            Metric::Nll => "test NLL",
            Metric::Rmse => "test RMSE",
        }
    }

    fn get(self, c: &CurvePoint) -> (f64, f64) {
        match self {
            Metric::Nll => (c.nll_mean, c.nll_se),
            Metric::Rmse => (c.rmse_mean, c.rmse_se),
        }
    }
}

/// Curves of one environment. Points with strategy "oracle" are drawn as
/// a horizontal line.
#[derive(Clone, Debug)]
pub struct CurvePanel {
    pub title: String,
    pub curves: Vec<CurvePoint>,
}

fn plot_err<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Plot(e.to_string())
}

fn color(strategy: &str, k: usize) -> RGBColor {
    match strategy {
        "paml" => RGBColor(214, 39, 40),
        "uni" => RGBColor(31, 119, 180),
        "lhs" => RGBColor(44, 160, 44),
        "oracle" => RGBColor(0, 0, 0),
        _ => {
            let (r, g, b) = Palette99::pick(k).to_rgba().rgb();
            RGBColor(r, g, b)
        }
    }
}

/// Learning curves (mean ± one standard error against tasks added), one
/// panel per environment side by side.
pub fn plot_curves(path: &Path, panels: &[CurvePanel], metric: Metric) -> Result<(), HarnessError> {
    if panels.is_empty() {
        return Err(HarnessError::Plot("nothing to plot".into()));
    }
    let root = SVGBackend::new(path, (480 * panels.len() as u32, 380)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    for (area, panel) in root.split_evenly((1, panels.len())).iter().zip(panels) {
        let rounds = panel.curves.iter().map(|c| c.round).max().unwrap_or(0).max(1);
        let (lo, hi) = panel.curves.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            let (m, se) = metric.get(c);
            (lo.min(m - se), hi.max(m + se))
        });
        if !lo.is_finite() || !hi.is_finite() {
            continue;
        }
        let pad = ((hi - lo) * 0.08).max(1e-3);
        let mut chart = ChartBuilder::on(area)
            .caption(&panel.title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(52)
            .build_cartesian_2d(-0.3f64..rounds as f64 + 0.3, (lo - pad)..(hi + pad))
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("tasks added")
            .x_labels(rounds + 1)
            .x_label_formatter(&|x| format!("{x:.0}"))
            .y_desc(metric.label())
            .disable_mesh()
            .draw()
            .map_err(plot_err)?;
        let mut names: Vec<&str> = panel.curves.iter().map(|c| c.strategy.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        for (k, name) in names.iter().enumerate() {
            let col = color(name, k);
            let pts: Vec<&CurvePoint> = panel.curves.iter().filter(|c| c.strategy == *name).collect();
            if *name == "oracle" {
                let (m, _) = metric.get(pts[0]);
                chart
                    .draw_series(LineSeries::new(vec![(-0.3, m), (rounds as f64 + 0.3, m)], col.stroke_width(1)))
                    .map_err(plot_err)?
                    .label("oracle")
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], col));
                continue;
            }
            chart
                .draw_series(pts.iter().map(|c| {
                    let (m, se) = metric.get(c);
                    ErrorBar::new_vertical(c.round as f64, m - se, m, m + se, col.filled(), 6)
                }))
                .map_err(plot_err)?;
            chart
                .draw_series(LineSeries::new(
                    pts.iter().map(|c| (c.round as f64, metric.get(c).0)),
                    col.stroke_width(2),
                ))
                .map_err(plot_err)?
                .label(*name)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], col.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .position(SeriesLabelPosition::UpperRight)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Latent means of the training tasks with ±2σ bars in the first two
/// latent dimensions. The first `n_init` tasks are drawn hollow; acquired
/// tasks are numbered in the order they were picked.
pub fn plot_latents(path: &Path, embeddings: &[TaskEmbedding], n_init: usize, title: &str) -> Result<(), HarnessError> {
    if embeddings.is_empty() {
        return Err(HarnessError::Plot("no embeddings".into()));
    }
    let coords = |e: &TaskEmbedding| -> (f64, f64, f64, f64) {
        let sd = e.std();
        let y = if e.dim() > 1 { (e.mean[1], 2.0 * sd[1]) } else { (0.0, 0.0) };
        (e.mean[0], 2.0 * sd[0], y.0, y.1)
    };
    let pts: Vec<_> = embeddings.iter().map(coords).collect();
    let (x0, x1, y0, y1) = pts.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, dx, y, dy)| (a.min(x - dx), b.max(x + dx), c.min(y - dy), d.max(y + dy)),
    );
    let px = ((x1 - x0) * 0.1).max(0.1);
    let py = ((y1 - y0) * 0.1).max(0.1);
    let root = SVGBackend::new(path, (520, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d((x0 - px)..(x1 + px), (y0 - py)..(y1 + py))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("h1")
        .y_desc("h2")
        .disable_mesh()
        .draw()
        .map_err(plot_err)?;
    let grey = RGBColor(120, 120, 120);
    let red = RGBColor(214, 39, 40);
    let shade = |i: usize| if i < n_init { grey } else { red };
    chart
        .draw_series(pts.iter().enumerate().map(|(i, &(x, dx, y, _))| {
            ErrorBar::new_horizontal(y, x - dx, x, x + dx, shade(i).stroke_width(1), 4)
        }))
        .map_err(plot_err)?;
    chart
        .draw_series(pts.iter().enumerate().map(|(i, &(x, _, y, dy))| {
            ErrorBar::new_vertical(x, y - dy, y, y + dy, shade(i).stroke_width(1), 4)
        }))
        .map_err(plot_err)?;
    chart
        .draw_series(pts.iter().enumerate().map(|(i, &(x, _, y, _))| {
            if i < n_init {
                Circle::new((x, y), 4, grey.stroke_width(2))
            } else {
                Circle::new((x, y), 4, red.filled())
            }
        }))
        .map_err(plot_err)?;
    chart
        .draw_series(
            pts.iter()
                .enumerate()
                .skip(n_init)
                .map(|(i, &(x, _, y, _))| {
                    EmptyElement::at((x, y)) + Text::new(format!("{}", i - n_init + 1), (6, -16), ("sans-serif", 14))
                }),
        )
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
