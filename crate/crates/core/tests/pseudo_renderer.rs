mod common;

use common::{random_scene, z_buffer_oracle};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shapeba::geometry::{CameraIntrinsics, PoseTwist};
use shapeba::pseudo_renderer::{validate_visible_set, visible_subset};
use shapeba::shape_prior::PointCloud;

#[test]
fn matches_brute_force_z_buffer() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let k = CameraIntrinsics::new(30.0, 30.0, 11.5, 11.5);
    for trial in 0..30 {
        let (cloud, pose) = random_scene(&mut rng, 500);
        for u in [1usize, 3, 5] {
            let vs = visible_subset(&cloud, &pose, &k, (24, 24), u as f64).unwrap();
            assert_eq!(vs.indices, z_buffer_oracle(&cloud, &pose, &k, 24, 24, u), "trial {trial} U={u}");
            validate_visible_set(&vs, &cloud, &k).unwrap();
            assert!(vs.len() <= cloud.len().min(u * u * 24 * 24));
        }
    }
}

#[test]
fn refining_the_grid_by_an_integer_factor_never_hides_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let k = CameraIntrinsics::new(30.0, 30.0, 11.5, 11.5);
    for _ in 0..50 {
        let (cloud, pose) = random_scene(&mut rng, 800);
        for (coarse, factor) in [(1.0, 2.0), (2.0, 2.0), (1.0, 5.0), (0.5, 3.0), (3.0, 2.0)] {
            let a = visible_subset(&cloud, &pose, &k, (24, 24), coarse).unwrap();
            let b = visible_subset(&cloud, &pose, &k, (24, 24), coarse * factor).unwrap();
            assert!(a.indices.iter().all(|i| b.indices.binary_search(i).is_ok()));
        }
    }
}

#[test]
fn non_nested_refinement_can_hide_a_point() {
    // cells at U=2 are [0,0.5),[0.5,1); at U=3 the middle cell [1/3,2/3) merges both points
    let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0);
    let cloud = PointCloud::new(vec![Vector3::new(0.4, 0.1, 1.0), Vector3::new(0.55 * 0.5, 0.1 * 0.5, 0.5)]);
    let a = visible_subset(&cloud, &PoseTwist::identity(), &k, (2, 2), 2.0).unwrap();
    let b = visible_subset(&cloud, &PoseTwist::identity(), &k, (2, 2), 3.0).unwrap();
    assert_eq!(a.indices, vec![0, 1]);
    assert_eq!(b.indices, vec![1]);
}
