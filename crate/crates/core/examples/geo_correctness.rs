//! Great-circle distances and the inclusive correctness radius.

use vprgate::dataset::{geo_distance, is_correct, DistanceThreshold, GeoRecord, LatLon};

fn record(id: &str, lat: f64, lon: f64) -> GeoRecord {
    GeoRecord {
        id: id.into(),
        lat,
        lon,
        descriptor_index: 0,
    }
}

fn main() -> vprgate::Result<()> {
    let d = geo_distance(LatLon::new(0.0, 0.0), LatLon::new(0.0, 1.0));
    println!("one degree of longitude at the equator: {d:.2} m");

    let query = record("q", 45.0, 7.0);
    let meters_north = |m: f64| 45.0 + (m / vprgate::dataset::EARTH_RADIUS_M).to_degrees();
    let near = record("near", meters_north(20.0), 7.0);
    let far = record("far", meters_north(60.0), 7.0);

    for tau in [DistanceThreshold::default(), DistanceThreshold::new(100.0)?] {
        for c in [&near, &far] {
            let d = geo_distance(query.position(), c.position());
            println!(
                "tau {:>5.1} m  {:<4}  {:>7.3} m  correct={}",
                tau.meters(),
                c.id,
                d,
                is_correct(&query, c, tau)
            );
        }
    }
    Ok(())
}
