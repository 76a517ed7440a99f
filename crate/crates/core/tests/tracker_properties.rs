use isac_track::tracker::*;
use nalgebra::{Cholesky, Matrix2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M2 = [[f64; 2]; 2];

fn mul(a: M2, b: M2) -> M2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn add(a: M2, b: M2) -> M2 {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

fn t(a: M2) -> M2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn inv(a: M2) -> M2 {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]]
}

fn mv(a: M2, x: [f64; 2]) -> [f64; 2] {
    [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
}

/// Textbook Kalman filter with H = I.
struct Kalman {
    x: [f64; 2],
    p: M2,
}

impl Kalman {
    fn predict(&mut self, f: M2, q: M2) {
        self.x = mv(f, self.x);
        self.p = add(mul(mul(f, self.p), t(f)), q);
    }

    fn update(&mut self, z: [f64; 2], r: M2) {
        let s = add(self.p, r);
        let k = mul(self.p, inv(s));
        let nu = [z[0] - self.x[0], z[1] - self.x[1]];
        let dx = mv(k, nu);
        self.x = [self.x[0] + dx[0], self.x[1] + dx[1]];
        let kp = mul(k, self.p);
        self.p = [
            [self.p[0][0] - kp[0][0], self.p[0][1] - kp[0][1]],
            [self.p[1][0] - kp[1][0], self.p[1][1] - kp[1][1]],
        ];
    }
}

#[test]
fn single_object_reduces_to_kalman() {
    let dt = 0.01;
    let sigma_a: f64 = 1.0;
    let (sr, sv) = (0.5, 0.2);
    let motion = MotionModel::white_noise_acceleration(dt, sigma_a, 1.0);
    let measurement = MeasurementModel::new(sr, sv, 1.0, 0.0);
    let models = Models { motion, measurement };
    let cfg = PhdConfig::default();

    let f = [[1.0, dt], [0.0, 1.0]];
    let q2 = sigma_a * sigma_a;
    let q = [
        [q2 * dt * dt * dt / 3.0, q2 * dt * dt / 2.0],
        [q2 * dt * dt / 2.0, q2 * dt],
    ];
    let r = [[sr * sr, 0.0], [0.0, sv * sv]];

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p0 = [[4.0, 0.0], [0.0, 1.0]];
    let mut v = Intensity::new(vec![GaussianComponent::new(1.0, [30.0, 1.0], p0)]);
    let mut kf = Kalman { x: [30.0, 1.0], p: p0 };
    let mut truth = [30.0, 1.0];
    for frame in 0..300 {
        truth = [truth[0] + truth[1] * dt, truth[1]];
        let z = [
            truth[0] + sr * (rng.random::<f64>() - 0.5),
            truth[1] + sv * (rng.random::<f64>() - 0.5),
        ];
        let (post, _) = step(&v, &[z], &models, &cfg, &[]);
        kf.predict(f, q);
        kf.update(z, r);
        assert_eq!(post.len(), 1, "frame {frame}");
        let c = post.components[0];
        assert!((c.w - 1.0).abs() < 1e-9);
        for i in 0..2 {
            assert!((c.m[i] - kf.x[i]).abs() < 1e-9, "frame {frame} mean");
            for j in 0..2 {
                assert!((c.p[(i, j)] - kf.p[i][j]).abs() < 1e-9, "frame {frame} cov");
            }
        }
        v = post;
    }
}

#[test]
fn cardinality_matches_measurement_count() {
    let models = Models {
        motion: MotionModel::white_noise_acceleration(0.01, 1.0, 1.0),
        measurement: MeasurementModel::new(0.5, 0.2, 1.0, 0.0),
    };
    let cfg = PhdConfig::default();
    let p = [[1.0, 0.0], [0.0, 0.5]];
    let v = Intensity::new(
        [20.0, 30.0, 45.0]
            .iter()
            .map(|&r| GaussianComponent::new(1.0, [r, 0.5], p))
            .collect(),
    );
    let predicted = predict(&v, &models.motion, &Intensity::default());
    let zs = [[20.1, 0.4], [29.8, 0.6], [45.2, 0.5]];
    let post = update(&predicted, &zs, &models.measurement);
    assert!((post.total_weight() - 3.0).abs() < 1e-6);
    let _ = cfg;
}

fn component() -> impl Strategy<Value = GaussianComponent> {
    (
        0.0f64..2.0,
        15.0f64..60.0,
        -5.0f64..5.0,
        0.05f64..4.0,
        0.05f64..2.0,
        -0.9f64..0.9,
    )
        .prop_map(|(w, r, v, sr, sv, rho)| {
            let c = rho * sr.sqrt() * sv.sqrt();
            GaussianComponent::new(w, [r, v], [[sr, c], [c, sv]])
        })
}

fn is_pd(p: &Matrix2<f64>) -> bool {
    (p[(0, 1)] - p[(1, 0)]).abs() < 1e-12 && Cholesky::new(*p).is_some()
}

proptest! {
    #[test]
    fn covariances_stay_pd(
        comps in proptest::collection::vec(component(), 1..20),
        zs in proptest::collection::vec((15.0f64..60.0, -5.0f64..5.0), 0..8),
    ) {
        let motion = MotionModel::white_noise_acceleration(0.01, 1.0, 0.99);
        let meas = MeasurementModel::new(0.5, 0.2, 0.9, 0.01);
        let zs: Vec<[f64; 2]> = zs.into_iter().map(|(r, v)| [r, v]).collect();
        let v = Intensity::new(comps);
        let pred = predict(&v, &motion, &adaptive_births(&zs, &PhdConfig::default()));
        prop_assert!(pred.components.iter().all(|c| is_pd(&c.p)));
        let post = update(&pred, &zs, &meas);
        prop_assert!(post.components.iter().all(|c| is_pd(&c.p) && c.w.is_finite() && c.w >= 0.0));
        let merged = prune_merge(&post, &PhdConfig::default());
        prop_assert!(merged.components.iter().all(|c| is_pd(&c.p)));
    }

    #[test]
    fn merging_conserves_weight(comps in proptest::collection::vec(component(), 50)) {
        let cfg = PhdConfig { max_components: usize::MAX, ..Default::default() };
        let v = Intensity::new(comps);
        let pruned: f64 = v.components.iter().filter(|c| c.w >= cfg.prune_threshold).map(|c| c.w).sum();
        let out = prune_merge(&v, &cfg);
        prop_assert!((out.total_weight() - pruned).abs() < 1e-9);
    }

    #[test]
    fn prune_merge_is_idempotent(comps in proptest::collection::vec(component(), 1..30)) {
        let cfg = PhdConfig::default();
        let once = prune_merge(&Intensity::new(comps), &cfg);
        let twice = prune_merge(&once, &cfg);
        prop_assert_eq!(once.len(), twice.len());
        for (a, b) in once.components.iter().zip(&twice.components) {
            prop_assert!((a.w - b.w).abs() < 1e-12);
            prop_assert!((a.m - b.m).norm() < 1e-9);
            prop_assert!((a.p - b.p).norm() < 1e-9);
        }
    }

    #[test]
    fn extraction_scales_with_threshold(
        comps in proptest::collection::vec(component(), 1..20),
        scale in 0.1f64..10.0,
    ) {
        let cfg = PhdConfig { extraction_threshold: 0.5, ..Default::default() };
        let scaled_cfg = PhdConfig { extraction_threshold: 0.5 * scale, ..cfg };
        let v = Intensity::new(comps);
        let scaled = Intensity::new(
            v.components.iter().map(|c| GaussianComponent { w: c.w * scale, ..*c }).collect(),
        );
        let means = |e: Vec<Estimate>| {
            let mut m: Vec<(u64, u64)> = e.iter().map(|e| (e.range.to_bits(), e.speed.to_bits())).collect();
            m.sort();
            m.dedup();
            m
        };
        prop_assert_eq!(means(extract(&v, &cfg)), means(extract(&scaled, &scaled_cfg)));
    }

    #[test]
    fn predict_weight_identity(
        comps in proptest::collection::vec(component(), 0..20),
        births in proptest::collection::vec((15.0f64..60.0, -5.0f64..5.0), 0..5),
        ps in 0.0f64..=1.0,
    ) {
        let motion = MotionModel::white_noise_acceleration(0.01, 1.0, ps);
        let zs: Vec<[f64; 2]> = births.into_iter().map(|(r, v)| [r, v]).collect();
        let b = adaptive_births(&zs, &PhdConfig::default());
        let v = Intensity::new(comps);
        let out = predict(&v, &motion, &b);
        let expected = ps * v.total_weight() + b.total_weight();
        prop_assert!((out.total_weight() - expected).abs() < 1e-12);
    }
}
