//! SVG line charts of per-round series (`round\tdimension\tscope\tvalue`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, IoContext, Result};

/// One named line: `(round, value)` points in file order.
pub type Series = BTreeMap<String, Vec<(f64, f64)>>;

/// Reads a series file, keying each line by `dimension/scope`.
pub fn read_series(path: &Path) -> Result<Series> {
    let text = fs::read_to_string(path).io_context(|| format!("reading {}", path.display()))?;
    let mut series = Series::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: &str| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason: reason.into(),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(malformed("expected 4 tab-separated columns"));
        }
        let round: f64 = cols[0].parse().map_err(|_| malformed("round is not a number"))?;
        let value: f64 = cols[3].parse().map_err(|_| malformed("value is not a number"))?;
        series.entry(format!("{}/{}", cols[1], cols[2])).or_default().push((round, value));
    }
    Ok(series)
}

fn plot_error(e: impl std::fmt::Display) -> Error {
    Error::OutOfRange(format!("plotting: {e}"))
}

/// Draws every line of `series` into one SVG chart.
pub fn render(series: &Series, title: &str, out: &Path) -> Result<()> {
    let points: Vec<(f64, f64)> = series.values().flatten().copied().collect();
    if points.is_empty() {
        return Err(Error::EmptyInput("series to plot"));
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-3);
    let root = SVGBackend::new(out, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
        .map_err(plot_error)?;
    chart.configure_mesh().x_desc("round").draw().map_err(plot_error)?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(plot_error)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_error)?;
    root.present().map_err(plot_error)
}

/// Reads `input` and writes its chart to `out`.
pub fn plot_file(input: &Path, title: &str, out: &Path) -> Result<()> {
    render(&read_series(input)?, title, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_series_file() {
        let dir = tempfile::tempdir().unwrap();
        let tsv = dir.path().join("s.tsv");
        fs::write(&tsv, "round\tdimension\tscope\tvalue\n0\tspan-f1\toverall\t0.1\n1\tspan-f1\toverall\t0.2\n1\treward\tmean\t-0.3\n").unwrap();
        let series = read_series(&tsv).unwrap();
        assert_eq!(series["span-f1/overall"], vec![(0.0, 0.1), (1.0, 0.2)]);
        let svg = dir.path().join("s.svg");
        plot_file(&tsv, "test", &svg).unwrap();
        assert!(fs::read_to_string(&svg).unwrap().contains("<svg"));
    }
}
