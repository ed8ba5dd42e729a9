use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::diffmath::{finite_diff_check, GraphBuilder, Tensor};
use crate::error::Error;
use crate::rng;
use crate::transform::{Interval, Transform, TransformSampler};

fn random_texture(dims: (usize, usize), seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, "texture");
    Tensor::from_fn([dims.0, dims.1, 3], |_| r.random())
}

#[test]
fn cube_has_twelve_triangles() {
    let mesh = parse_obj(CUBE_OBJ).unwrap();
    assert_eq!(mesh.faces().len(), 12);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/cube.obj");
    let loaded = load_obj(path).unwrap();
    assert_eq!(loaded.faces().len(), 12);
    let max_norm = loaded
        .vertices()
        .iter()
        .map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    assert!((max_norm - 1.0).abs() < 1e-12);
    assert_eq!(loaded, Mesh::cube());
}

#[test]
fn quad_faces_are_fan_triangulated() {
    let obj = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 2 0\n\
               vt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\n\
               f 1/1 2/2 3/3 4/4\nf 1/1 3/3 -1/4\n";
    let mesh = parse_obj(obj).unwrap();
    assert_eq!(mesh.faces().len(), 3);
    assert_eq!(mesh.faces()[0], [0, 1, 2]);
    assert_eq!(mesh.faces()[1], [0, 2, 3]);
    assert_eq!(mesh.vertices()[mesh.faces()[2][2]], [0.0, 2.0, 0.0]);
}

#[test]
fn malformed_obj_is_rejected() {
    let head = "v 0 0 0\nv 1 0 0\nv 1 1 0\nvt 0 0\nvt 1 0\nvt 1 1\n";
    let err = |face: &str| parse_obj(&format!("{head}{face}\n")).unwrap_err();
    assert!(
        matches!(err("f 0/1 2/2 3/3"), Error::Obj { line: 7, reason } if reason.contains("1-based"))
    );
    assert!(matches!(err("f 1 2 3"), Error::Obj { reason, .. } if reason.contains("texture")));
    assert!(
        matches!(err("f 1//1 2//2 3//3"), Error::Obj { reason, .. } if reason.contains("texture"))
    );
    assert!(
        matches!(err("f 1/1 2/2 9/3"), Error::Obj { reason, .. } if reason.contains("out of range"))
    );
    assert!(matches!(err("f 1/1 2/2"), Error::Obj { .. }));
    assert!(matches!(err("f a/1 2/2 3/3"), Error::Obj { .. }));
    assert!(parse_obj(head).is_err());
    assert!(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 2\nf 1/1 2/1 3/1\n").is_err());
}

#[test]
fn default_poses_lie_in_range() {
    let cfg = Pose3DConfig::standard();
    let mut r = rng::stream(1, "pose");
    for _ in 0..1000 {
        let p = sample_pose(&cfg, &mut r);
        assert!((2.5..=3.0).contains(&p.camera_distance));
        assert!(p.xy_translation.0.abs() <= 0.05 && p.xy_translation.1.abs() <= 0.05);
        assert!(p.background.iter().all(|b| (0.1..=1.0).contains(b)));
        let n: f64 = p.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }
}

#[test]
fn degenerate_pose_config_is_constant() {
    let cfg = Pose3DConfig {
        camera_distance: Interval::point(2.7),
        translation: Interval::point(0.01),
        rotation: RotationRange::Fixed([0.0, 1.0, 0.0, 0.0]),
        background: [
            Interval::point(0.3),
            Interval::point(0.4),
            Interval::point(0.5),
        ],
    };
    let mut r = rng::stream(2, "pose");
    let first = sample_pose(&cfg, &mut r);
    for _ in 0..10 {
        assert_eq!(sample_pose(&cfg, &mut r), first);
    }
    assert_eq!(first.background, [0.3, 0.4, 0.5]);
}

#[test]
fn rotations_are_uniform() {
    let mut r = rng::stream(3, "so3");
    let n = 100_000;
    let mut axis_sum = [0.0; 3];
    let mut trace_sum = 0.0;
    let mut matrix_sum = [[0.0; 3]; 3];
    for _ in 0..n {
        let q = random_unit_quaternion(&mut r);
        // Canonical axis with a non-negative rotation angle.
        let s = if q[0] < 0.0 { -1.0 } else { 1.0 };
        let v = [q[1] * s, q[2] * s, q[3] * s];
        let len = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        for k in 0..3 {
            axis_sum[k] += v[k] / len;
        }
        let m = rotation_matrix(q);
        trace_sum += m[0][0] + m[1][1] + m[2][2];
        for i in 0..3 {
            for j in 0..3 {
                matrix_sum[i][j] += m[i][j];
            }
        }
    }
    let mean_axis = axis_sum.map(|v| v / n as f64);
    assert!(mean_axis.iter().map(|v| v * v).sum::<f64>().sqrt() < 0.02);
    // Haar measure: E[R] = 0 and E[tr R] = 0.
    assert!((trace_sum / n as f64).abs() < 0.02);
    for row in matrix_sum {
        for v in row {
            assert!((v / n as f64).abs() < 0.01);
        }
    }
}

#[test]
fn rotation_matrix_is_orthonormal_and_counter_clockwise() {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    // 90° about +z takes +x to +y.
    let m = rotation_matrix([h, 0.0, 0.0, h]);
    assert!((m[1][0] - 1.0).abs() < 1e-12 && m[0][0].abs() < 1e-12);
    let q = random_unit_quaternion(&mut rng::stream(4, "q"));
    let m = rotation_matrix(q);
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| m[i][k] * m[j][k]).sum();
            assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }
}

#[test]
fn screen_aligned_quad_maps_pixels_to_own_texels() {
    for dims in [(16, 16), (7, 7)] {
        let pose = Pose::front(2.7, [0.2, 0.3, 0.4]);
        let map: CoordinateMap<f64> =
            build_coordinate_map(&Mesh::screen_aligned_quad(2.7), &pose, dims, dims).unwrap();
        for r in 0..dims.0 {
            for c in 0..dims.1 {
                assert_eq!(map.pixel(r, c), vec![(r * dims.1 + c, 1.0)]);
            }
        }
        assert!(map.background().data().iter().all(|&b| b == 0.0));
        let tex = random_texture(dims, 5);
        assert_eq!(render_texture(&map, &tex).unwrap(), tex);
    }
}

#[test]
fn uncovered_pixels_take_the_background() {
    let pose = Pose::front(2.75, [0.25, 0.5, 0.75]);
    let map: CoordinateMap<f64> =
        build_coordinate_map(&Mesh::cube(), &pose, (8, 8), (32, 32)).unwrap();
    assert!(!map.is_covered(0, 0));
    assert!(map.pixel(0, 0).is_empty());
    assert_eq!(&map.background().data()[..3], &[0.25, 0.5, 0.75]);
    assert!(map.is_covered(16, 16));
    let zero = Tensor::zeros([8, 8, 3]);
    assert_eq!(&render_texture(&map, &zero).unwrap(), map.background());
}

#[test]
fn mesh_behind_camera_renders_background_only() {
    let pose = Pose::front(-5.0, [0.6, 0.6, 0.6]);
    let map: CoordinateMap<f64> =
        build_coordinate_map(&Mesh::cube(), &pose, (4, 4), (8, 8)).unwrap();
    assert_eq!(map.matrix().nnz(), 0);
    assert!(map.background().data().iter().all(|&b| b == 0.6));
}

fn random_map(seed: u64, tex: (usize, usize), img: (usize, usize)) -> (Pose, CoordinateMap<f64>) {
    let pose = sample_pose(&Pose3DConfig::standard(), &mut rng::stream(seed, "map"));
    let map = build_coordinate_map(&Mesh::cube(), &pose, tex, img).unwrap();
    (pose, map)
}

#[test]
fn covered_pixels_form_a_partition_of_unity() {
    let (tex, img) = ((12, 10), (24, 24));
    for seed in 0..100 {
        let (pose, map) = random_map(seed, tex, img);
        let mut covered = 0;
        for r in 0..img.0 {
            for c in 0..img.1 {
                let row = map.pixel(r, c);
                let b = &map.background().data()[(r * img.1 + c) * 3..][..3];
                if row.is_empty() {
                    assert_eq!(b, pose.background);
                    continue;
                }
                covered += 1;
                assert!(b.iter().all(|&v| v == 0.0));
                assert!(row.len() <= 4);
                assert!(row.iter().all(|&(_, w)| w > 0.0));
                let total: f64 = row.iter().map(|&(_, w)| w).sum();
                assert!((total - 1.0).abs() < 1e-9);
                // One 2×2 texel neighbourhood.
                let rows: Vec<usize> = row.iter().map(|&(i, _)| i / tex.1).collect();
                let cols: Vec<usize> = row.iter().map(|&(i, _)| i % tex.1).collect();
                assert!(rows.iter().max().unwrap() - rows.iter().min().unwrap() <= 1);
                assert!(cols.iter().max().unwrap() - cols.iter().min().unwrap() <= 1);
            }
        }
        assert!(covered > 50, "pose {seed} covers only {covered} pixels");
    }
}

#[test]
fn rendering_is_affine_in_the_texture() {
    for seed in 0..20 {
        let (_, map) = random_map(seed, (16, 16), (32, 32));
        let (x1, x2) = (
            random_texture((16, 16), seed),
            random_texture((16, 16), seed + 100),
        );
        let diff = Tensor::from_fn([16, 16, 3], |i| x1.data()[i] - x2.data()[i]);
        let lhs = Tensor::from_fn([32, 32, 3], |i| {
            render_texture(&map, &x1).unwrap().data()[i]
                - render_texture(&map, &x2).unwrap().data()[i]
        });
        assert!(lhs.max_abs_diff(&map.apply_linear(&diff).unwrap()).unwrap() < 1e-10);
    }
}

#[test]
fn ones_texture_renders_ones_on_the_object() {
    let (_, map) = random_map(7, (8, 8), (20, 20));
    let out = render_texture(&map, &Tensor::filled([8, 8, 3], 1.0)).unwrap();
    for r in 0..20 {
        for c in 0..20 {
            for ch in 0..3 {
                let v = out.data()[out.hwc_index(r, c, ch)];
                let b = map.background().data()[out.hwc_index(r, c, ch)];
                if map.is_covered(r, c) {
                    assert!((v - 1.0).abs() < 1e-9);
                } else {
                    assert_eq!(v, b);
                }
            }
        }
    }
}

#[test]
fn render_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let (_, map) = random_map(seed, (8, 8), (16, 16));
        let mut g = GraphBuilder::new();
        let x = g.input("texture", [8, 8, 3]);
        let img = map.append(&mut g, x).unwrap();
        let m = g.mean(img);
        g.output("m", m);
        let graph = g.build();
        let tex = random_texture((8, 8), seed);
        let err = finite_diff_check(&graph, &[("texture", &tex)], "texture", "m", 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }
}

#[test]
fn texture_shape_is_checked() {
    let (_, map) = random_map(1, (8, 8), (16, 16));
    assert!(matches!(
        render_texture(&map, &Tensor::zeros([8, 9, 3])),
        Err(Error::Shape(_))
    ));
}

/// Front triangle (texel 0) at z = +0.5 partly hiding a larger back
/// triangle (texel 1) at z = −0.5, on a 1×2 texture.
fn occlusion_fixture(front_first: bool) -> Mesh {
    let mut vertices = vec![
        [-0.3, -0.3, 0.5],
        [0.3, -0.3, 0.5],
        [0.0, 0.3, 0.5],
        [-0.9, -0.9, -0.5],
        [0.9, -0.9, -0.5],
        [0.0, 0.9, -0.5],
    ];
    let mut uvs = vec![[0.25, 0.5]; 3];
    uvs.extend([[0.75, 0.5]; 3]);
    if !front_first {
        vertices.rotate_left(3);
        uvs.rotate_left(3);
    }
    Mesh::new(vertices, uvs, vec![[0, 1, 2], [3, 4, 5]]).unwrap()
}

#[test]
fn z_buffer_keeps_the_nearest_surface() {
    let pose = Pose::front(2.5, [0.0; 3]);
    for front_first in [true, false] {
        let map: CoordinateMap<f64> =
            build_coordinate_map(&occlusion_fixture(front_first), &pose, (1, 2), (33, 33)).unwrap();
        let tex = Tensor::new([1, 2, 3], vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let out = render_texture(&map, &tex).unwrap();
        // Centre: both triangles overlap; only the front one shows.
        assert_eq!(map.pixel(16, 16), vec![(0, 1.0)]);
        assert_eq!(out.data()[out.hwc_index(16, 16, 0)], 1.0);
        // Low and wide: only the back triangle.
        assert_eq!(map.pixel(26, 10), vec![(1, 1.0)]);
        assert!(!map.is_covered(0, 0));
    }
}

#[test]
fn same_pose_gives_identical_map() {
    let (pose, a) = random_map(11, (8, 8), (16, 16));
    let b: CoordinateMap<f64> =
        build_coordinate_map(&Mesh::cube(), &pose, (8, 8), (16, 16)).unwrap();
    for r in 0..16 {
        for c in 0..16 {
            assert_eq!(a.pixel(r, c), b.pixel(r, c));
        }
    }
    assert_eq!(a.background(), b.background());
}

#[test]
fn identity_physical_effects_leave_the_image_unchanged() {
    let img = random_texture((6, 5), 12);
    assert_eq!(
        apply_physical_effects(&img, &PhysicalParams::identity()).unwrap(),
        img
    );
}

#[test]
fn per_channel_gain_scales_red() {
    let red = Tensor::from_fn([2, 2, 3], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
    let p = PhysicalParams {
        per_channel_mul: [0.7, 1.0, 1.0],
        ..PhysicalParams::identity()
    };
    let out = apply_physical_effects(&red, &p).unwrap();
    for px in out.data().chunks(3) {
        assert_eq!(px, [0.7, 0.0, 0.0]);
    }
    assert!(matches!(
        apply_physical_effects(&Tensor::<f64>::zeros([2, 2, 1]), &p),
        Err(Error::ChannelCount {
            expected: 3,
            got: 1
        })
    ));
}

#[test]
fn physical_effects_are_reproducible_and_bounded() {
    let cfg = PhysicalConfig::standard();
    let mut r = rng::stream(13, "phys");
    let img = random_texture((8, 8), 13);
    for _ in 0..50 {
        let p = sample_physical(&cfg, &mut r);
        assert!((0.5..=2.0).contains(&p.multiplicative_light));
        assert!(p.per_channel_mul.iter().all(|m| (0.7..=1.3).contains(m)));
        assert!(p.per_channel_add.iter().all(|a| a.abs() <= 0.15));
        assert!((0.0..=0.1).contains(&p.noise_stdev));
        let a = apply_physical_effects(&img, &p).unwrap();
        let b = apply_physical_effects(&img, &p.clone()).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn render_distribution_is_seeded() {
    let dist = Dist3D::new(
        Arc::new(Mesh::cube()),
        Pose3DConfig::standard(),
        Some(PhysicalConfig::standard()),
        (8, 8),
        (16, 16),
    )
    .unwrap();
    let tex = random_texture((8, 8), 14);
    let a: RenderTransform<f64> = dist.sample(&mut rng::stream(14, "d"));
    let b: RenderTransform<f64> = dist.sample(&mut rng::stream(14, "d"));
    assert_eq!(a.pose, b.pose);
    assert_eq!(a.apply(&tex).unwrap(), b.apply(&tex).unwrap());
    assert_eq!(
        Transform::<f64>::output_shape(&a, &[8, 8, 3]),
        vec![16, 16, 3]
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn f32_maps_agree_with_f64(seed in any::<u64>()) {
        let pose = sample_pose(&Pose3DConfig::standard(), &mut rng::stream(seed, "p"));
        let a: CoordinateMap<f64> = build_coordinate_map(&Mesh::cube(), &pose, (8, 8), (12, 12)).unwrap();
        let b: CoordinateMap<f32> = build_coordinate_map(&Mesh::cube(), &pose, (8, 8), (12, 12)).unwrap();
        for r in 0..12 {
            for c in 0..12 {
                let (ra, rb) = (a.pixel(r, c), b.pixel(r, c));
                prop_assert_eq!(ra.len(), rb.len());
                for ((ia, wa), (ib, wb)) in ra.iter().zip(&rb) {
                    prop_assert_eq!(ia, ib);
                    prop_assert!((wa - *wb as f64).abs() < 1e-6);
                }
            }
        }
    }
}
