use nalgebra::DMatrix;
use tpsml::persist::{ModelFile, StoredModel};
use tpsml::Result;

const SIZE: f64 = 600.0;
const MARGIN: f64 = 20.0;
const SAMPLES: usize = 60;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Image of scaled-space points under the model's learned map.
fn map_points(model: &ModelFile, pts: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match &model.model {
        StoredModel::Mmc { metric, .. } => Ok(pts * metric.factor()),
        StoredModel::TmlNn { transform, .. } => transform.apply_batch(pts),
        StoredModel::TmlSvm(m) => m.bank.members[0].1.map_batch(pts),
        StoredModel::KernelTmlSvm(_) => Err(tpsml::Error::Shape("kernel models have no planar map".into())),
    }
}

fn reference(model: &ModelFile) -> Option<(&DMatrix<f64>, &[usize])> {
    match &model.model {
        StoredModel::Mmc { reference, labels, .. } | StoredModel::TmlNn { reference, labels, .. } => {
            Some((reference, labels.as_slice()))
        }
        _ => None,
    }
}

/// SVG of the deformed unit grid (scaled feature space), with the mapped
/// training points when the model keeps them.
pub fn render(model: &ModelFile, lines: usize) -> Result<String> {
    let step = 1.0 / (lines - 1) as f64;
    let mut polylines: Vec<DMatrix<f64>> = Vec::new();
    for i in 0..lines {
        let c = i as f64 * step;
        let along = |t: usize| t as f64 / (SAMPLES - 1) as f64;
        let horizontal = DMatrix::from_fn(SAMPLES, 2, |t, k| if k == 0 { along(t) } else { c });
        let vertical = DMatrix::from_fn(SAMPLES, 2, |t, k| if k == 0 { c } else { along(t) });
        polylines.push(map_points(model, &horizontal)?);
        polylines.push(map_points(model, &vertical)?);
    }
    let points = match reference(model) {
        Some((r, l)) => Some((map_points(model, r)?, l)),
        None => None,
    };

    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let all = polylines.iter().chain(points.iter().map(|(p, _)| p));
    for m in all {
        for r in m.row_iter() {
            for k in 0..2 {
                lo[k] = lo[k].min(r[k]);
                hi[k] = hi[k].max(r[k]);
            }
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let to_px = |x: f64, y: f64| (MARGIN + (x - lo[0]) * scale, SIZE - MARGIN - (y - lo[1]) * scale);

    let mut svg = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<g class=\"grid\" fill=\"none\" stroke=\"#888\" stroke-width=\"1\">\n"
    );
    for pl in &polylines {
        let coords: Vec<String> = pl
            .row_iter()
            .map(|r| {
                let (x, y) = to_px(r[0], r[1]);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        svg.push_str(&format!("<polyline points=\"{}\"/>\n", coords.join(" ")));
    }
    svg.push_str("</g>\n");
    if let Some((p, labels)) = points {
        svg.push_str("<g class=\"points\" stroke=\"none\">\n");
        for (r, &l) in p.row_iter().zip(labels) {
            let (x, y) = to_px(r[0], r[1]);
            svg.push_str(&format!(
                "<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"2.5\" fill=\"{}\"/>\n",
                COLORS[l % COLORS.len()]
            ));
        }
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
