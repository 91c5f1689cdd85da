use spatialecon::geometry::{build_distance_matrix, Metric, Point, PointSet};
use spatialecon::models::{self, ModelFamily, ModelSpec};
use spatialecon::weights::{self, WeightsSpec};

fn main() -> spatialecon::Result<()> {
    let ids = (0..9).map(|i| format!("s{i}")).collect();
    let coords = (0..9)
        .map(|i| Point::new((i % 3) as f64, (i / 3) as f64))
        .collect();
    let mut points = PointSet::new(ids, coords)?;
    points.add_variable("x1", vec![0.0, 1.0, 2.0, 1.0, 3.0, 2.0, 2.0, 4.0, 3.0])?;
    points.add_variable("crime", vec![1.0, 3.0, 5.0, 3.1, 7.2, 5.4, 5.1, 9.3, 7.0])?;

    let d = build_distance_matrix(&points, Metric::Euclidean);
    let w = weights::row_standardize(&weights::transform(
        &d,
        &WeightsSpec::connectivity(1.0)?,
    )?);

    let spec = ModelSpec::new(ModelFamily::Sar, "crime", vec!["x1".into()], true)?;
    let fit = models::fit(&spec, &points, &w)?;
    println!("rho = {:?}, beta = {}", fit.rho, fit.coefficients);
    Ok(())
}
