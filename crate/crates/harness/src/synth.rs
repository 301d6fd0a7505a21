//! Synthetic geography for the population-transport experiment: a small
//! planet with two continents on a regular angular grid, and a population
//! point cloud clustered around a few hotspots. Stands in for licensed
//! geographic data at desk scale.

use std::path::Path;

use rand::Rng;

use monge_core::geo::SpherePoint;
use monge_core::rng::stream_rng;
use monge_core::{Error, Result};

/// Grid step of the synthetic land cells, radians.
pub const LAND_STEP: f64 = 0.025;

/// Two continents with wavy edges on a `LAND_STEP` grid.
pub fn synthetic_land() -> Vec<SpherePoint> {
    let mut points = Vec::new();
    let boxes: [(std::ops::Range<f64>, std::ops::Range<f64>, f64, f64); 2] = [
        // (theta range, phi range, edge wobble amplitude, wobble frequency)
        (0.8..2.4, 0.9..1.6, 0.12, 5.0),
        (3.4..4.6, 1.2..2.1, 0.10, 7.0),
    ];
    for (t_range, p_range, amp, freq) in boxes {
        let mut theta = t_range.start;
        while theta < t_range.end {
            let wobble = amp * (freq * theta).sin();
            let lo = p_range.start + wobble.max(0.0);
            let hi = p_range.end + wobble.min(0.0);
            let mut phi = lo;
            while phi < hi {
                points.push(SpherePoint::new(theta, phi).expect("grid in range"));
                phi += LAND_STEP;
            }
            theta += LAND_STEP;
        }
    }
    points
}

/// Population weights over land cells: a flat base plus density peaks
/// around a few hotspot cells.
pub fn synthetic_population(land: &[SpherePoint], seed: u64) -> Vec<(SpherePoint, f64)> {
    let mut gen = stream_rng(seed, 0x9091);
    let hotspots: Vec<SpherePoint> = (0..5)
        .map(|_| land[gen.gen_range(0..land.len())])
        .collect();
    land.iter()
        .map(|&p| {
            let mut w = 0.05;
            for h in &hotspots {
                let d = p.angular_euclid(h);
                w += (-d * d / 0.02).exp();
            }
            (p, w)
        })
        .collect()
}

pub fn write_land_csv(path: impl AsRef<Path>, points: &[SpherePoint]) -> Result<()> {
    let mut out = String::from("theta,phi\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.theta(), p.phi()));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_population_csv(
    path: impl AsRef<Path>,
    rows: &[(SpherePoint, f64)],
) -> Result<()> {
    let mut out = String::from("theta,phi,weight\n");
    for (p, w) in rows {
        out.push_str(&format!("{},{},{}\n", p.theta(), p.phi(), w));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a `theta,phi,weight` CSV into points and weights.
pub fn read_population_csv(
    path: impl AsRef<Path>,
) -> Result<(monge_core::Tensor, Vec<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Empty("population csv"))?;
    if header.trim() != "theta,phi,weight" {
        return Err(Error::Csv {
            line: 1,
            msg: "header must be `theta,phi,weight`".into(),
        });
    }
    let mut data = Vec::new();
    let mut weights = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::Csv {
                line: i + 1,
                msg: format!("expected 3 columns, got {}", cols.len()),
            });
        }
        let mut parsed = [0.0; 3];
        for (j, c) in cols.iter().enumerate() {
            parsed[j] = c.trim().parse().map_err(|_| Error::Csv {
                line: i + 1,
                msg: format!("bad float `{c}`"),
            })?;
        }
        data.push(parsed[0]);
        data.push(parsed[1]);
        weights.push(parsed[2]);
    }
    if weights.is_empty() {
        return Err(Error::Empty("population csv body"));
    }
    let n = weights.len();
    Ok((monge_core::Tensor::matrix(n, 2, data)?, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use monge_core::geo::LandSet;

    #[test]
    fn land_is_nonempty_and_loadable() {
        let pts = synthetic_land();
        assert!(pts.len() > 2000, "got {} cells", pts.len());
        let land = LandSet::from_points(pts.clone(), 2000, 7).unwrap();
        assert_eq!(land.anchor_indices().len(), 2000);
        // Every cell is land under the set's own membership rule.
        for p in pts.iter().step_by(97) {
            assert!(land.is_land(p));
        }
    }

    #[test]
    fn population_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let land = synthetic_land();
        let pop = synthetic_population(&land, 3);
        let path = dir.path().join("pop.csv");
        write_population_csv(&path, &pop).unwrap();
        let (points, weights) = read_population_csv(&path).unwrap();
        assert_eq!(points.rows(), pop.len());
        assert_eq!(weights.len(), pop.len());
        assert!((weights[0] - pop[0].1).abs() < 1e-15);
    }
}
