//! Point-to-point rigid registration as a [`ResidualProblem`], plus seeded
//! synthetic instances with injected wrong correspondences.
//!
//! Pose updates are left perturbations `T <- exp(xi) * T` with
//! `xi = (omega, v)`, rotation part first. For a correspondence `(p, q)` the
//! block residual is `R p + t - q` and its Jacobian is `[-[R p + t]_x, I]`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::solver::ResidualProblem;

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Checks `R^T R = I` and `det R = 1` within `tol`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, tol: f64) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        if !pose.is_valid(tol) {
            return Err(domain("rotation is not orthonormal with det +1"));
        }
        Ok(pose)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        let det = (self.rotation.determinant() - 1.0).abs();
        ortho < tol && det < tol && self.translation.iter().all(|v| v.is_finite())
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// Exponential map of a twist `(omega, v)` (rotation part first).
pub fn se3_exp(twist: &[f64; 6]) -> Pose {
    let omega = Vector3::new(twist[0], twist[1], twist[2]);
    let v = Vector3::new(twist[3], twist[4], twist[5]);
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(&omega);
    let k2 = k * k;
    // a = sin t / t, b = (1 - cos t) / t^2, c = (t - sin t) / t^3
    let (a, b, c) = if theta < 1e-4 {
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
            1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0,
        )
    } else {
        let (s, co) = theta.sin_cos();
        (s / theta, (1.0 - co) / theta2, (theta - s) / (theta2 * theta))
    };
    let id = Matrix3::identity();
    Pose {
        rotation: id + k * a + k2 * b,
        translation: (id + k * b + k2 * c) * v,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(domain("point cloud is empty"));
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(domain("point cloud has non-finite coordinates"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    /// Largest pairwise distance, computed exhaustively.
    pub fn diameter(&self) -> f64 {
        let pts = &self.points;
        let mut best = 0.0f64;
        for (i, p) in pts.iter().enumerate() {
            for q in &pts[i + 1..] {
                best = best.max((p - q).norm_squared());
            }
        }
        best.sqrt()
    }

    /// Centers on the centroid and scales to unit diameter.
    pub fn normalize(&mut self) -> Result<()> {
        let d = self.diameter();
        if !(d > 0.0) {
            return Err(domain("cannot normalize a cloud of coincident points"));
        }
        let center = self.centroid();
        for p in &mut self.points {
            *p = (*p - center) / d;
        }
        Ok(())
    }

    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform(p)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pairs: Vec<(usize, usize)>,
    inlier_mask: Option<Vec<bool>>,
}

impl CorrespondenceSet {
    /// Indices must be in range and each source index may appear once.
    pub fn new(
        pairs: Vec<(usize, usize)>,
        inlier_mask: Option<Vec<bool>>,
        source_len: usize,
        target_len: usize,
    ) -> Result<Self> {
        let mut seen = vec![false; source_len];
        for &(s, t) in &pairs {
            if s >= source_len || t >= target_len {
                return Err(domain(format!(
                    "correspondence ({s}, {t}) out of range for clouds of size {source_len} and {target_len}"
                )));
            }
            if std::mem::replace(&mut seen[s], true) {
                return Err(domain(format!("duplicate source index {s}")));
            }
        }
        if let Some(mask) = &inlier_mask {
            if mask.len() != pairs.len() {
                return Err(domain("inlier mask length differs from pair count"));
            }
        }
        Ok(Self { pairs, inlier_mask })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn inlier_mask(&self) -> Option<&[bool]> {
        self.inlier_mask.as_deref()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn outlier_count(&self) -> Option<usize> {
        self.inlier_mask
            .as_ref()
            .map(|m| m.iter().filter(|&&inlier| !inlier).count())
    }
}

/// Residuals and Jacobian of a point-to-point problem at one pose.
#[derive(Debug, Clone)]
pub struct Linearization {
    /// `|R p + t - q|` per pair.
    pub distances: Vec<f64>,
    /// Stacked 3-vectors `R p + t - q`.
    pub blocks: DVector<f64>,
    /// `3n x 6`, columns ordered `(omega, v)`.
    pub jacobian: DMatrix<f64>,
}

/// Point-to-point registration over borrowed clouds.
#[derive(Debug, Clone, Copy)]
pub struct RegistrationProblem<'a> {
    source: &'a PointCloud,
    target: &'a PointCloud,
    correspondences: &'a CorrespondenceSet,
}

impl<'a> RegistrationProblem<'a> {
    pub fn new(
        source: &'a PointCloud,
        target: &'a PointCloud,
        correspondences: &'a CorrespondenceSet,
    ) -> Result<Self> {
        if correspondences.len() < 3 {
            return Err(Error::UnderConstrained {
                pairs: correspondences.len(),
            });
        }
        if correspondences
            .pairs()
            .iter()
            .any(|&(s, t)| s >= source.len() || t >= target.len())
        {
            return Err(domain("correspondence index out of range"));
        }
        Ok(Self {
            source,
            target,
            correspondences,
        })
    }

    fn blocks(&self, pose: &Pose) -> DVector<f64> {
        let pairs = self.correspondences.pairs();
        let mut r = DVector::zeros(3 * pairs.len());
        for (k, &(s, t)) in pairs.iter().enumerate() {
            let d = pose.transform(&self.source.points[s]) - self.target.points[t];
            r.fixed_rows_mut::<3>(3 * k).copy_from(&d);
        }
        r
    }

    fn block_jacobian(&self, pose: &Pose) -> DMatrix<f64> {
        let pairs = self.correspondences.pairs();
        let mut j = DMatrix::zeros(3 * pairs.len(), 6);
        for (k, &(s, _)) in pairs.iter().enumerate() {
            let y = pose.transform(&self.source.points[s]);
            j.fixed_view_mut::<3, 3>(3 * k, 0).copy_from(&(-skew(&y)));
            j.fixed_view_mut::<3, 3>(3 * k, 3)
                .copy_from(&Matrix3::identity());
        }
        j
    }

    pub fn linearize(&self, pose: &Pose) -> Linearization {
        let blocks = self.blocks(pose);
        let distances = crate::solver::kernel_residuals(3, &blocks);
        Linearization {
            distances,
            blocks,
            jacobian: self.block_jacobian(pose),
        }
    }
}

impl ResidualProblem for RegistrationProblem<'_> {
    type Param = Pose;

    fn dimension(&self) -> usize {
        6
    }

    fn block_dim(&self) -> usize {
        3
    }

    fn residuals(&self, pose: &Pose) -> Result<DVector<f64>> {
        Ok(self.blocks(pose))
    }

    fn jacobian(&self, pose: &Pose) -> Result<DMatrix<f64>> {
        Ok(self.block_jacobian(pose))
    }

    fn retract(&self, pose: &Pose, delta: &DVector<f64>) -> Pose {
        let xi = [delta[0], delta[1], delta[2], delta[3], delta[4], delta[5]];
        se3_exp(&xi).compose(pose)
    }
}

pub fn residuals_and_jacobian(
    pose: &Pose,
    source: &PointCloud,
    target: &PointCloud,
    correspondences: &CorrespondenceSet,
) -> Result<Linearization> {
    Ok(RegistrationProblem::new(source, target, correspondences)?.linearize(pose))
}

/// Missing fields take their [`Default`] values when deserialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_points: usize,
    /// Per-axis Gaussian noise on target points, normalized units.
    pub noise_sigma: f64,
    /// Fraction of pairs whose target index is re-drawn, in `[0, 1)`.
    pub outlier_fraction: f64,
    /// Bound on the truth rotation angle, radians.
    pub max_rotation: f64,
    /// Bound on the truth translation norm, normalized units.
    pub max_translation: f64,
    pub seed: u64,
    /// Number of random planar patches the source surface is built from.
    pub planar_patches: usize,
    /// Fraction of source points drawn uniformly in a box instead of on patches.
    pub box_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_points: 1000,
            noise_sigma: 0.005,
            outlier_fraction: 0.0,
            max_rotation: std::f64::consts::FRAC_PI_6,
            max_translation: 0.5,
            seed: 0,
            planar_patches: 6,
            box_fraction: 0.2,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 3 {
            return Err(domain("n_points must be at least 3"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(domain("noise_sigma must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(domain("outlier_fraction must lie in [0, 1)"));
        }
        if !(self.max_rotation.is_finite() && self.max_rotation > 0.0) {
            return Err(domain("max_rotation must be positive"));
        }
        if !(self.max_translation.is_finite() && self.max_translation > 0.0) {
            return Err(domain("max_translation must be positive"));
        }
        if !(0.0..=1.0).contains(&self.box_fraction) {
            return Err(domain("box_fraction must lie in [0, 1]"));
        }
        if self.planar_patches == 0 && self.box_fraction < 1.0 {
            return Err(domain("planar_patches must be positive unless box_fraction is 1"));
        }
        Ok(())
    }

    /// `floor(outlier_fraction * n_points)`.
    pub fn outlier_count(&self) -> usize {
        (self.outlier_fraction * self.n_points as f64 + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationInstance {
    pub source: PointCloud,
    pub target: PointCloud,
    pub correspondences: CorrespondenceSet,
    pub truth: Pose,
    /// Present for generated instances.
    pub config: Option<SyntheticConfig>,
}

impl RegistrationInstance {
    pub fn problem(&self) -> Result<RegistrationProblem<'_>> {
        RegistrationProblem::new(&self.source, &self.target, &self.correspondences)
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn sample_source(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let n_box = (cfg.box_fraction * cfg.n_points as f64).round() as usize;
    let n_patch = cfg.n_points - n_box.min(cfg.n_points);
    struct Patch {
        center: Vector3<f64>,
        u: Vector3<f64>,
        v: Vector3<f64>,
        half: (f64, f64),
    }
    let patches: Vec<Patch> = (0..cfg.planar_patches)
        .map(|_| {
            let center = Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            let normal = unit_vector(rng);
            let helper = if normal.x.abs() < 0.9 {
                Vector3::x()
            } else {
                Vector3::y()
            };
            let u = normal.cross(&helper).normalize();
            let v = normal.cross(&u);
            Patch {
                center,
                u,
                v,
                half: (rng.random_range(0.1..0.4), rng.random_range(0.1..0.4)),
            }
        })
        .collect();
    let mut points = Vec::with_capacity(cfg.n_points);
    for i in 0..n_patch {
        let p = &patches[i % patches.len()];
        let a = rng.random_range(-p.half.0..p.half.0);
        let b = rng.random_range(-p.half.1..p.half.1);
        points.push(p.center + p.u * a + p.v * b);
    }
    for _ in n_patch..cfg.n_points {
        points.push(Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        ));
    }
    points
}

/// Seeded instance: unit-diameter source, truth pose within the configured
/// bounds, noisy transformed target, `floor(f n)` re-drawn wrong targets.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<RegistrationInstance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut source = PointCloud::new(sample_source(cfg, &mut rng))?;
    source.normalize()?;

    let axis = unit_vector(&mut rng);
    let angle = rng.random_range(0.0..=cfg.max_rotation);
    let direction = unit_vector(&mut rng);
    let shift = rng.random_range(0.0..=cfg.max_translation);
    let omega = axis * angle;
    let mut truth = se3_exp(&[omega.x, omega.y, omega.z, 0.0, 0.0, 0.0]);
    truth.translation = direction * shift;

    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| domain(e.to_string()))?;
    let target_points: Vec<Vector3<f64>> = source
        .points()
        .iter()
        .map(|p| {
            let jitter = if cfg.noise_sigma > 0.0 {
                Vector3::new(
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                )
            } else {
                Vector3::zeros()
            };
            truth.transform(p) + jitter
        })
        .collect();
    let target = PointCloud::new(target_points)?;

    let n = cfg.n_points;
    let mut pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    let mut inlier = vec![true; n];
    let mut outliers = index::sample(&mut rng, n, cfg.outlier_count()).into_vec();
    outliers.sort_unstable();
    for i in outliers {
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        pairs[i].1 = j;
        inlier[i] = false;
    }
    let correspondences = CorrespondenceSet::new(pairs, Some(inlier), n, n)?;
    Ok(RegistrationInstance {
        source,
        target,
        correspondences,
        truth,
        config: Some(cfg.clone()),
    })
}

/// Point-transfer RMSE `sqrt(mean |T_est p - T_truth p|^2)` over all source points.
pub fn rmse(estimated: &Pose, instance: &RegistrationInstance) -> f64 {
    let pts = instance.source.points();
    let sum: f64 = pts
        .iter()
        .map(|p| (estimated.transform(p) - instance.truth.transform(p)).norm_squared())
        .sum();
    (sum / pts.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn clean(seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n_points: 200,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            seed,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(se3_exp(&[0.0; 6]), Pose::identity());
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let pose = se3_exp(&[0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0]);
        let oracle = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((pose.rotation - oracle).amax() < 1e-15);
        assert_eq!(pose.translation, Vector3::zeros());
    }

    #[test]
    fn exp_inverse_twist_cancels() {
        let xi = [0.3, -0.7, 0.2, 1.5, -0.4, 0.9];
        let neg = xi.map(|v| -v);
        let id = se3_exp(&xi).compose(&se3_exp(&neg));
        assert!((id.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(id.translation.amax() < 1e-12);
    }

    #[test]
    fn exp_small_angle_branch_is_continuous() {
        let a = se3_exp(&[0.99e-4, 0.0, 0.0, 1.0, 2.0, 3.0]);
        let b = se3_exp(&[1.01e-4, 0.0, 0.0, 1.0, 2.0, 3.0]);
        assert!((a.rotation - b.rotation).amax() < 1e-5);
        assert!((a.translation - b.translation).amax() < 1e-5);
    }

    #[test]
    fn pose_validation() {
        assert!(Pose::new(Matrix3::identity(), Vector3::zeros(), 1e-9).is_ok());
        assert!(Pose::new(Matrix3::identity() * 2.0, Vector3::zeros(), 1e-9).is_err());
        let reflect = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::new(reflect, Vector3::zeros(), 1e-9).is_err());
    }

    #[test]
    fn distance_residual_example() {
        let source = PointCloud::new(vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ])
        .unwrap();
        let target = PointCloud::new(vec![
            Vector3::new(1.0, 0.0, 0.1),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ])
        .unwrap();
        let corr = CorrespondenceSet::new(vec![(0, 0), (1, 1), (2, 2)], None, 3, 3).unwrap();
        let lin = residuals_and_jacobian(&Pose::identity(), &source, &target, &corr).unwrap();
        assert_relative_eq!(lin.distances[0], 0.1, epsilon = 1e-15);
        assert_eq!(lin.distances[1], 0.0);
        assert_eq!(lin.jacobian.shape(), (9, 6));
    }

    #[test]
    fn too_few_pairs() {
        let cloud = PointCloud::new(vec![Vector3::zeros(), Vector3::x()]).unwrap();
        let corr = CorrespondenceSet::new(vec![(0, 0), (1, 1)], None, 2, 2).unwrap();
        let err = residuals_and_jacobian(&Pose::identity(), &cloud, &cloud, &corr).unwrap_err();
        assert!(matches!(err, Error::UnderConstrained { pairs: 2 }));
    }

    #[test]
    fn correspondence_validation() {
        assert!(CorrespondenceSet::new(vec![(0, 0), (0, 1)], None, 2, 2).is_err());
        assert!(CorrespondenceSet::new(vec![(0, 2)], None, 2, 2).is_err());
        assert!(CorrespondenceSet::new(vec![(0, 0)], Some(vec![true, false]), 2, 2).is_err());
    }

    #[test]
    fn truth_pose_zeroes_clean_residuals() {
        let inst = generate_synthetic(&clean(4)).unwrap();
        let lin = inst.problem().unwrap().linearize(&inst.truth);
        assert!(lin.distances.iter().all(|&d| d < 1e-14));
    }

    #[test]
    fn generated_noise_level() {
        let cfg = SyntheticConfig {
            n_points: 2000,
            noise_sigma: 0.005,
            outlier_fraction: 0.0,
            seed: 9,
            ..SyntheticConfig::default()
        };
        let inst = generate_synthetic(&cfg).unwrap();
        let lin = inst.problem().unwrap().linearize(&inst.truth);
        let rms = (lin.distances.iter().map(|d| d * d).sum::<f64>() / 2000.0).sqrt();
        let expected = 0.005 * 3f64.sqrt();
        assert!((rms - expected).abs() < 0.1 * expected, "rms {rms}");
    }

    #[test]
    fn generation_is_deterministic_and_counts_outliers() {
        let cfg = SyntheticConfig {
            n_points: 100,
            outlier_fraction: 0.4,
            seed: 7,
            ..SyntheticConfig::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.correspondences.outlier_count(), Some(40));
        let mask = a.correspondences.inlier_mask().unwrap();
        for (&(s, t), &inlier) in a.correspondences.pairs().iter().zip(mask) {
            assert_eq!(s == t, inlier);
        }
        let other = generate_synthetic(&SyntheticConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.source, other.source);
    }

    #[test]
    fn generated_pose_within_bounds() {
        for seed in 0..20 {
            let inst = generate_synthetic(&clean(seed)).unwrap();
            let cfg = inst.config.as_ref().unwrap();
            let angle = ((inst.truth.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            assert!(angle <= cfg.max_rotation + 1e-12);
            assert!(inst.truth.translation.norm() <= cfg.max_translation + 1e-12);
            assert!(inst.truth.is_valid(1e-9));
        }
    }

    #[test]
    fn invalid_configs() {
        let base = SyntheticConfig::default();
        for bad in [
            SyntheticConfig { n_points: 2, ..base.clone() },
            SyntheticConfig { noise_sigma: -1.0, ..base.clone() },
            SyntheticConfig { outlier_fraction: 1.0, ..base.clone() },
            SyntheticConfig { max_rotation: 0.0, ..base.clone() },
            SyntheticConfig { max_translation: -0.1, ..base.clone() },
            SyntheticConfig { box_fraction: 1.5, ..base.clone() },
        ] {
            assert!(generate_synthetic(&bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn rmse_examples() {
        let inst = generate_synthetic(&clean(1)).unwrap();
        assert_eq!(rmse(&inst.truth, &inst), 0.0);
        let d = Vector3::new(0.01, -0.02, 0.005);
        let shifted = Pose {
            rotation: inst.truth.rotation,
            translation: inst.truth.translation + d,
        };
        assert_relative_eq!(rmse(&shifted, &inst), d.norm(), max_relative = 1e-12);
    }
}
