use proptest::prelude::*;
use rtsa_core::{Envelope, Path, Vec3};

fn envelope() -> impl Strategy<Value = Envelope> {
    (
        -50.0..50.0f64,
        -50.0..50.0f64,
        -50.0..50.0f64,
        0.5..80.0f64,
        0.5..80.0f64,
        0.5..80.0f64,
    )
        .prop_map(|(x, y, z, w, d, h)| Envelope::new(Vec3::new(x, y, z), Vec3::new(x + w, y + d, z + h)).unwrap())
}

/// Envelope plus a point within a margin of it (inside or out).
fn envelope_and_point() -> impl Strategy<Value = (Envelope, Vec3)> {
    envelope().prop_flat_map(|env| {
        let (lo, hi) = (env.min_corner, env.max_corner);
        let m = 0.3 * env.diagonal();
        ((lo.x - m)..(hi.x + m), (lo.y - m)..(hi.y + m), (lo.z - m)..(hi.z + m))
            .prop_map(move |(x, y, z)| (env, Vec3::new(x, y, z)))
    })
}

fn envelope_and_interior_point() -> impl Strategy<Value = (Envelope, Vec3)> {
    envelope().prop_flat_map(|env| {
        let (lo, hi) = (env.min_corner, env.max_corner);
        (lo.x..=hi.x, lo.y..=hi.y, lo.z..=hi.z).prop_map(move |(x, y, z)| (env, Vec3::new(x, y, z)))
    })
}

/// Coarse-to-fine grid search for the closest point on the box surface.
fn brute_distance(env: &Envelope, p: &Vec3) -> f64 {
    let (lo, hi) = (env.min_corner, env.max_corner);
    let mut best = f64::INFINITY;
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [lo[axis], hi[axis]] {
            let (mut u0, mut u1, mut v0, mut v1) = (lo[u], hi[u], lo[v], hi[v]);
            let mut face = (f64::INFINITY, 0.0, 0.0);
            for _ in 0..12 {
                for i in 0..=12 {
                    for j in 0..=12 {
                        let mut q = Vec3::zeros();
                        q[axis] = side;
                        q[u] = u0 + (u1 - u0) * i as f64 / 12.0;
                        q[v] = v0 + (v1 - v0) * j as f64 / 12.0;
                        let d = (q - p).norm();
                        if d < face.0 {
                            face = (d, q[u], q[v]);
                        }
                    }
                }
                let (wu, wv) = ((u1 - u0) / 4.0, (v1 - v0) / 4.0);
                u0 = (face.1 - wu).max(lo[u]);
                u1 = (face.1 + wu).min(hi[u]);
                v0 = (face.2 - wv).max(lo[v]);
                v1 = (face.2 + wv).min(hi[v]);
            }
            best = best.min(face.0);
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn distance_matches_brute_force((env, p) in envelope_and_point()) {
        let q = env.boundary_query(&p);
        let brute = brute_distance(&env, &p);
        prop_assert!((q.distance - brute).abs() <= 1e-3 * env.diagonal(), "{} vs {}", q.distance, brute);
    }

    #[test]
    fn contains_agrees_with_inside_flag((env, p) in envelope_and_point()) {
        let q = env.boundary_query(&p);
        let by_coords = (0..3).all(|i| p[i] >= env.min_corner[i] && p[i] <= env.max_corner[i]);
        prop_assert_eq!(env.contains(&p), q.inside);
        prop_assert_eq!(by_coords, q.inside);
    }

    #[test]
    fn per_axis_minimum_is_the_distance((env, p) in envelope_and_interior_point()) {
        let per_axis = env.per_axis_boundary_distances(&p);
        prop_assert!(per_axis.iter().all(|d| *d >= 0.0));
        prop_assert!((per_axis.min() - env.boundary_query(&p).distance).abs() < 1e-12);
    }

    #[test]
    fn direction_points_at_the_closest_face((env, p) in envelope_and_point()) {
        let q = env.boundary_query(&p);
        prop_assume!(q.distance > 1e-6);
        prop_assert!((q.direction.norm() - 1.0).abs() < 1e-9);
        // stepping along the direction by the distance lands on the surface
        let hit = p + q.direction * q.distance;
        let on_surface = env.boundary_query(&hit).distance;
        prop_assert!(on_surface < 1e-6 * env.diagonal().max(1.0), "landed {on_surface} off the surface");
    }

    #[test]
    fn distance_is_one_lipschitz((env, p) in envelope_and_point(), dx in -1.0..1.0f64, dy in -1.0..1.0f64, dz in -1.0..1.0f64) {
        let q = p + Vec3::new(dx, dy, dz);
        let (a, b) = (env.boundary_query(&p).distance, env.boundary_query(&q).distance);
        prop_assert!((a - b).abs() <= (q - p).norm() + 1e-9);
    }

    #[test]
    fn projection_is_at_least_as_close_as_dense_samples(
        pts in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64, 0.0..30.0f64), 2..6),
        x in -60.0..60.0f64, y in -60.0..60.0f64, z in -10.0..40.0f64,
    ) {
        let pts: Vec<Vec3> = pts.into_iter().map(|(a, b, c)| Vec3::new(a, b, c)).collect();
        prop_assume!(pts.windows(2).all(|w| (w[1] - w[0]).norm() > 1e-3));
        let path = Path::new(&pts).unwrap();
        let p = Vec3::new(x, y, z);
        let s = path.project(&p);
        prop_assert!(s >= 0.0 && s <= path.length() + 1e-9);
        let best = (path.point_at(s) - p).norm();
        let n = 4000;
        for i in 0..=n {
            let c = path.point_at(path.length() * i as f64 / n as f64);
            prop_assert!(best <= (c - p).norm() + 1e-9);
        }
    }
}
