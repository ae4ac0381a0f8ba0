//! Rotated-rectangle obstacles and LiDAR ray casting.

use serde::{Deserialize, Serialize};

pub type Vec2 = [f64; 2];

pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

pub fn dist(a: Vec2, b: Vec2) -> f64 {
    norm(sub(a, b))
}

/// Rectangle with center, half-extents, and counter-clockwise rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec2,
    pub half: Vec2,
    pub angle: f64,
}

impl Obstacle {
    /// Maps a world point into the obstacle frame.
    fn to_local(&self, p: Vec2) -> Vec2 {
        let (s, c) = self.angle.sin_cos();
        let d = sub(p, self.center);
        [c * d[0] + s * d[1], -s * d[0] + c * d[1]]
    }

    fn dir_to_local(&self, d: Vec2) -> Vec2 {
        let (s, c) = self.angle.sin_cos();
        [c * d[0] + s * d[1], -s * d[0] + c * d[1]]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let q = self.to_local(p);
        q[0].abs() <= self.half[0] && q[1].abs() <= self.half[1]
    }

    /// Euclidean distance from `p` to the rectangle (0 inside).
    pub fn distance(&self, p: Vec2) -> f64 {
        let q = self.to_local(p);
        let dx = (q[0].abs() - self.half[0]).max(0.0);
        let dy = (q[1].abs() - self.half[1]).max(0.0);
        dx.hypot(dy)
    }

    /// Smallest `t >= 0` with `origin + t·dir` on the rectangle, for unit `dir`.
    /// An origin inside the rectangle hits at `t = 0`.
    pub fn ray_hit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        let o = self.to_local(origin);
        let d = self.dir_to_local(dir);
        let mut t_min = f64::NEG_INFINITY;
        let mut t_max = f64::INFINITY;
        for ax in 0..2 {
            if d[ax].abs() < 1e-15 {
                if o[ax].abs() > self.half[ax] {
                    return None;
                }
            } else {
                let t1 = (-self.half[ax] - o[ax]) / d[ax];
                let t2 = (self.half[ax] - o[ax]) / d[ax];
                t_min = t_min.max(t1.min(t2));
                t_max = t_max.min(t1.max(t2));
            }
        }
        if t_max < t_min || t_max < 0.0 {
            return None;
        }
        Some(t_min.max(0.0))
    }
}

/// One LiDAR return.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidarHit {
    pub ray: usize,
    pub distance: f64,
    pub point: Vec2,
}

/// Unit direction of ray `m` out of `n_rays`, measured from world +x.
pub fn ray_direction(m: usize, n_rays: usize) -> Vec2 {
    let a = 2.0 * std::f64::consts::PI * m as f64 / n_rays as f64;
    [a.cos(), a.sin()]
}

/// Nearest obstacle hit per ray within `range`, before the shortest-k selection.
pub fn cast_rays(origin: Vec2, obstacles: &[Obstacle], range: f64, n_rays: usize) -> Vec<LidarHit> {
    let mut hits = Vec::new();
    for m in 0..n_rays {
        let dir = ray_direction(m, n_rays);
        let best = obstacles
            .iter()
            .filter_map(|o| o.ray_hit(origin, dir))
            .fold(f64::INFINITY, f64::min);
        if best <= range {
            hits.push(LidarHit {
                ray: m,
                distance: best,
                point: [origin[0] + best * dir[0], origin[1] + best * dir[1]],
            });
        }
    }
    hits
}

/// Casts `n_rays` rays and keeps the `keep` shortest (ties by ray index).
pub fn lidar_scan(origin: Vec2, obstacles: &[Obstacle], range: f64, n_rays: usize, keep: usize) -> Vec<LidarHit> {
    let mut hits = cast_rays(origin, obstacles, range, n_rays);
    hits.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.ray.cmp(&b.ray)));
    hits.truncate(keep);
    hits
}
