use nalgebra::Vector3;
use proptest::prelude::*;

use f3dn::autodiff::checkpoint::{read_checkpoint, write_checkpoint};
use f3dn::autodiff::Tensor;
use f3dn::geom::{voxel_downsample, Point, PointCloud, RigidTransform};
use f3dn::register::{fit_rigid, nms_select, rte_rre};

fn point() -> impl Strategy<Value = Point> {
    (-20.0..20.0f64, -20.0..20.0f64, -5.0..5.0f64).prop_map(|(x, y, z)| Point::new(x, y, z))
}

fn transform() -> impl Strategy<Value = RigidTransform> {
    (
        (-1.0..1.0f64, -1.0..1.0f64, 0.1..1.0f64),
        -3.1..3.1f64,
        (-50.0..50.0f64, -50.0..50.0f64, -5.0..5.0f64),
    )
        .prop_map(|((ax, ay, az), angle, (tx, ty, tz))| {
            RigidTransform::from_axis_angle(Vector3::new(ax, ay, az), angle, Vector3::new(tx, ty, tz))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inverse_composes_to_identity(t in transform(), p in point()) {
        let back = t.inverse().compose(&t).apply(&p);
        prop_assert!((back - p).norm() < 1e-9);
        prop_assert!(t.validate().is_ok());
    }

    #[test]
    fn pose_error_of_self_is_zero(t in transform()) {
        prop_assert_eq!(rte_rre(&t, &t), (0.0, 0.0));
    }

    #[test]
    fn rigid_fit_is_proper(ps in prop::collection::vec(point(), 4..30), t in transform(), mirror in any::<bool>()) {
        let q: Vec<Point> = ps
            .iter()
            .map(|p| {
                let x = t.apply(p);
                if mirror { Point::new(-x.x, x.y, x.z) } else { x }
            })
            .collect();
        if let Ok(fit) = fit_rigid(&ps, &q) {
            prop_assert!((fit.rotation.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn voxel_output_has_one_point_per_cell(ps in prop::collection::vec(point(), 1..200), grid in 0.5..4.0f64) {
        let cloud = PointCloud::new(ps).unwrap();
        let out = voxel_downsample(&cloud, grid).unwrap();
        let mut cells: Vec<[i64; 3]> = cloud
            .points()
            .iter()
            .map(|p| [(p.x / grid).floor() as i64, (p.y / grid).floor() as i64, (p.z / grid).floor() as i64])
            .collect();
        cells.sort();
        cells.dedup();
        prop_assert_eq!(out.len(), cells.len());
    }

    #[test]
    fn nms_contract(
        field in prop::collection::vec((point(), 0.0..10.0f64), 1..150),
        r in 0.2..5.0f64,
        beta in 0.0..1.0f64,
        m in 1usize..40,
    ) {
        let (pts, att): (Vec<Point>, Vec<f64>) = field.into_iter().unzip();
        let kept = nms_select(&pts, &att, r, beta, m).unwrap();
        let max = att.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(kept.len() <= m);
        for (k, &i) in kept.iter().enumerate() {
            prop_assert!(att[i] >= beta * max);
            for &j in &kept[k + 1..] {
                prop_assert!((pts[i] - pts[j]).norm() > r);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip(vals in prop::collection::vec(-1e6f32..1e6f32, 1..64), rows in 1usize..4) {
        let cols = vals.len();
        let data: Vec<f64> = (0..rows).flat_map(|_| vals.iter().map(|&v| v as f64)).collect();
        let t = Tensor::new(vec![rows, cols], data).unwrap();
        let named = vec![("layer.w".to_string(), t), ("s".to_string(), Tensor::scalar(0.5))];
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &named).unwrap();
        prop_assert_eq!(read_checkpoint(&mut buf.as_slice()).unwrap(), named);
    }
}
