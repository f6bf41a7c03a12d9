use rand::Rng;

use super::spatial::GridIndex;
use crate::autodiff::{Segments, Tensor};
use crate::error::{Error, Result};
use crate::geom::{Point, PointCloud};
use crate::seeded_rng;

/// Points of a local region, expressed relative to the region's center.
#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub center: Point,
    pub local_points: Vec<Point>,
}

impl Cluster {
    pub fn valid_count(&self) -> usize {
        self.local_points.len()
    }
}

/// Greedy farthest point sampling. The first index is drawn uniformly from
/// `seed`; each next pick maximizes the distance to the picked set, ties to
/// the lowest index. Returns all `N` indices when `k >= N`.
pub fn farthest_point_sample(cloud: &PointCloud, k: usize, seed: u64) -> Result<Vec<usize>> {
    let pts = cloud.points();
    if pts.is_empty() {
        return Err(Error::invalid("farthest point sampling on an empty cloud"));
    }
    if k == 0 {
        return Err(Error::invalid("farthest point sampling needs k >= 1"));
    }
    let k = k.min(pts.len());
    let first = seeded_rng(seed).random_range(0..pts.len());
    let mut picked = Vec::with_capacity(k);
    picked.push(first);
    let mut min_d2: Vec<f64> = pts.iter().map(|p| (p - pts[first]).norm_squared()).collect();
    while picked.len() < k {
        let mut best = 0;
        for (i, &d) in min_d2.iter().enumerate() {
            if d > min_d2[best] {
                best = i;
            }
        }
        picked.push(best);
        let c = pts[best];
        for (d, p) in min_d2.iter_mut().zip(pts) {
            *d = d.min((p - c).norm_squared());
        }
    }
    Ok(picked)
}

fn make_cluster<R: Rng + ?Sized>(
    pts: &[Point],
    center: Point,
    center_index: Option<usize>,
    mut members: Vec<usize>,
    cap: usize,
    rng: &mut R,
) -> Cluster {
    if members.len() > cap {
        let others: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| Some(i) != center_index)
            .collect();
        let keep = if center_index.is_some() { cap - 1 } else { cap };
        let mut chosen: Vec<usize> = rand::seq::index::sample(rng, others.len(), keep)
            .into_iter()
            .map(|j| others[j])
            .collect();
        chosen.extend(center_index);
        chosen.sort_unstable();
        members = chosen;
    }
    let local_points = if members.is_empty() {
        vec![Point::origin()]
    } else {
        members.iter().map(|&i| Point::from(pts[i] - center)).collect()
    };
    Cluster {
        center,
        local_points,
    }
}

fn check_group_params(r_cluster: f64, cap: usize) -> Result<()> {
    if !(r_cluster > 0.0) {
        return Err(Error::invalid("cluster radius must be positive"));
    }
    if cap == 0 {
        return Err(Error::invalid("cluster cap must be >= 1"));
    }
    Ok(())
}

/// Groups every point within `r_cluster` of each center. Over-full clusters
/// are subsampled uniformly to `cap` points, always retaining the center point.
pub fn ball_group<R: Rng + ?Sized>(
    cloud: &PointCloud,
    centers: &[usize],
    r_cluster: f64,
    cap: usize,
    rng: &mut R,
) -> Result<Vec<Cluster>> {
    check_group_params(r_cluster, cap)?;
    let pts = cloud.points();
    if let Some(&bad) = centers.iter().find(|&&c| c >= pts.len()) {
        return Err(Error::invalid(format!("center index {bad} out of range")));
    }
    let grid = GridIndex::new(pts, r_cluster);
    Ok(centers
        .iter()
        .map(|&c| {
            let members = grid.within(&pts[c], r_cluster);
            make_cluster(pts, pts[c], Some(c), members, cap, rng)
        })
        .collect())
}

/// Like [`ball_group`] but around arbitrary locations; a location with no
/// points nearby yields a singleton cluster at the local origin.
pub fn ball_group_at<R: Rng + ?Sized>(
    cloud: &PointCloud,
    centers: &[Point],
    r_cluster: f64,
    cap: usize,
    rng: &mut R,
) -> Result<Vec<Cluster>> {
    check_group_params(r_cluster, cap)?;
    let pts = cloud.points();
    let grid = GridIndex::new(pts, r_cluster);
    Ok(centers
        .iter()
        .map(|c| {
            let members = grid.within(c, r_cluster);
            make_cluster(pts, *c, None, members, cap, rng)
        })
        .collect())
}

/// [`ball_group`] with an independent random stream per center, derived from
/// `seed` and the center index, so a center's membership does not depend on
/// which other centers are grouped alongside it.
pub fn ball_group_seeded(cloud: &PointCloud, centers: &[usize], r_cluster: f64, cap: usize, seed: u64) -> Result<Vec<Cluster>> {
    check_group_params(r_cluster, cap)?;
    let pts = cloud.points();
    if let Some(&bad) = centers.iter().find(|&&c| c >= pts.len()) {
        return Err(Error::invalid(format!("center index {bad} out of range")));
    }
    let grid = GridIndex::new(pts, r_cluster);
    Ok(centers
        .iter()
        .map(|&c| {
            let members = grid.within(&pts[c], r_cluster);
            let mut rng = seeded_rng(seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            make_cluster(pts, pts[c], Some(c), members, cap, &mut rng)
        })
        .collect())
}

/// Clusters stacked into one `[Σ n_k, 3]` tensor with per-cluster segments.
pub(crate) struct ClusterBatch {
    pub points: Tensor,
    pub segments: Segments,
}

impl ClusterBatch {
    pub fn new(clusters: &[Cluster]) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::invalid("empty cluster batch"));
        }
        let segments = Segments::from_lengths(clusters.iter().map(|c| c.valid_count()))?;
        let data = clusters
            .iter()
            .flat_map(|c| c.local_points.iter().flat_map(|p| [p.x, p.y, p.z]))
            .collect();
        Ok(Self {
            points: Tensor::new(vec![segments.total_rows(), 3], data)?,
            segments,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = seeded_rng(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Point::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), rng.random_range(0.0..3.0)))
                .collect(),
        )
        .unwrap()
    }

    /// Recomputes every min-distance from scratch at each step.
    fn fps_oracle(pts: &[Point], k: usize, first: usize) -> Vec<usize> {
        let mut picked = vec![first];
        while picked.len() < k.min(pts.len()) {
            let mut best = (f64::NEG_INFINITY, 0);
            for i in 0..pts.len() {
                let d = picked.iter().map(|&j| (pts[i] - pts[j]).norm_squared()).fold(f64::INFINITY, f64::min);
                if d > best.0 {
                    best = (d, i);
                }
            }
            picked.push(best.1);
        }
        picked
    }

    #[test]
    fn fps_matches_oracle() {
        let cloud = random_cloud(256, 5);
        for seed in 0..20 {
            let got = farthest_point_sample(&cloud, 32, seed).unwrap();
            assert_eq!(got, fps_oracle(cloud.points(), 32, got[0]));
        }
    }

    #[test]
    fn fps_edge_cases() {
        let cloud = random_cloud(20, 1);
        let mut all = farthest_point_sample(&cloud, 20, 3).unwrap();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert_eq!(farthest_point_sample(&cloud, 50, 3).unwrap().len(), 20);
        assert!(farthest_point_sample(&PointCloud::empty(), 3, 0).is_err());

        let line = PointCloud::new([0.0, 1.0, 2.0, 10.0].iter().map(|&x| Point::new(x, 0.0, 0.0)).collect()).unwrap();
        let seed = (0..100)
            .find(|&s| farthest_point_sample(&line, 1, s).unwrap()[0] == 0)
            .unwrap();
        assert_eq!(farthest_point_sample(&line, 2, seed).unwrap(), vec![0, 3]);
    }

    #[test]
    fn ball_group_basic_cases() {
        let cloud = PointCloud::new(vec![
            Point::new(0.0, 0.0, 0.0),
            Point::new(0.5, 0.0, 0.0),
            Point::new(0.0, 1.0, 0.0),
            Point::new(0.0, 0.0, -1.5),
            Point::new(50.0, 0.0, 0.0),
        ])
        .unwrap();
        let mut rng = seeded_rng(0);
        let cl = ball_group(&cloud, &[4, 0], 2.0, 64, &mut rng).unwrap();
        assert_eq!(cl[0].local_points, vec![Point::origin()]);
        assert_eq!(cl[1].valid_count(), 4);
        assert!(cl[1].local_points.iter().all(|p| p.coords.norm() <= 2.0));

        let capped = ball_group(&cloud, &[1], 2.0, 2, &mut rng).unwrap();
        assert_eq!(capped[0].valid_count(), 2);
        assert!(capped[0].local_points.contains(&Point::origin()));

        let empty = ball_group_at(&cloud, &[Point::new(20.0, 0.0, 0.0)], 2.0, 8, &mut rng).unwrap();
        assert_eq!(empty[0].local_points, vec![Point::origin()]);
        assert!(ball_group(&cloud, &[9], 2.0, 8, &mut rng).is_err());
    }

    #[test]
    fn seeded_grouping_is_per_center() {
        let cloud = random_cloud(400, 9);
        let all = ball_group_seeded(&cloud, &[3, 50, 77], 3.0, 8, 11).unwrap();
        let one = ball_group_seeded(&cloud, &[50], 3.0, 8, 11).unwrap();
        assert_eq!(all[1], one[0]);
        assert_eq!(one[0].valid_count(), 8);
        assert!(one[0].local_points.contains(&Point::origin()));
    }

    #[test]
    fn ball_group_matches_linear_scan() {
        let cloud = random_cloud(600, 2);
        let centers: Vec<usize> = (0..40).map(|i| i * 13).collect();
        let cl = ball_group(&cloud, &centers, 1.5, usize::MAX, &mut seeded_rng(1)).unwrap();
        for (c, cluster) in centers.iter().zip(&cl) {
            let center = cloud.points()[*c];
            let want: Vec<Point> = cloud
                .points()
                .iter()
                .filter(|p| (*p - center).norm_squared() <= 1.5 * 1.5)
                .map(|p| Point::from(p - center))
                .collect();
            assert_eq!(cluster.local_points, want);
        }
    }
}
