use std::collections::HashMap;

use crate::geom::Point;

/// Uniform hash grid for fixed-radius neighbour queries.
pub(crate) struct GridIndex<'a> {
    points: &'a [Point],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> GridIndex<'a> {
    pub fn new(points: &'a [Point], cell: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self {
            points,
            cell,
            cells,
        }
    }

    fn key(p: &Point, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    /// Indices with `‖p_i − q‖ ≤ radius`, ascending.
    pub fn within(&self, q: &Point, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i64;
        let k = Self::key(q, self.cell);
        let mut out = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(members) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        out.extend(
                            members
                                .iter()
                                .copied()
                                .filter(|&i| (self.points[i] - q).norm_squared() <= r2),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use rand::Rng;

    #[test]
    fn matches_linear_scan() {
        let mut rng = seeded_rng(1);
        let pts: Vec<Point> = (0..400)
            .map(|_| Point::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)))
            .collect();
        let grid = GridIndex::new(&pts, 1.3);
        for q in pts.iter().take(50) {
            let want: Vec<usize> = (0..pts.len()).filter(|&i| (pts[i] - q).norm() <= 1.3).collect();
            assert_eq!(grid.within(q, 1.3), want);
        }
    }
}
