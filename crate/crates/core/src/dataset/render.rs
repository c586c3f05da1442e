//! Deterministic stick-figure rendering for the synthetic dataset.
//!
//! A fixed pinhole camera projects the arm's link positions; links are drawn
//! as anti-aliased segments and the end effector as a disc whose projected
//! radius carries depth information.

use image::RgbImage;
use nalgebra::{Point3, Unit, Vector3};

/// Simple pinhole camera, right-handed, looking along +forward.
#[derive(Debug, Clone)]
pub struct Camera {
    pub position: Point3<f64>,
    forward: Vector3<f64>,
    right: Vector3<f64>,
    up: Vector3<f64>,
    pub focal_px: f64,
    pub resolution: u32,
}

impl Camera {
    pub fn look_at(
        position: Point3<f64>,
        target: Point3<f64>,
        fov_degrees: f64,
        resolution: u32,
    ) -> Self {
        let forward = Unit::new_normalize(target - position).into_inner();
        let world_up = Vector3::z();
        let right = Unit::new_normalize(forward.cross(&world_up)).into_inner();
        let up = right.cross(&forward);
        let focal_px =
            resolution as f64 / (2.0 * (fov_degrees.to_radians() / 2.0).tan());
        Self {
            position,
            forward,
            right,
            up,
            focal_px,
            resolution,
        }
    }

    /// Fixed viewpoint used for the bundled synthetic arm.
    pub fn synthetic_default(resolution: u32) -> Self {
        Self::look_at(
            Point3::new(1.35, 0.85, 0.75),
            Point3::new(0.10, 0.0, 0.05),
            46.0,
            resolution,
        )
    }

    /// Project a world point to (column, row, depth) in pixels/meters.
    /// Returns `None` for points at or behind the camera plane.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64, f64)> {
        let rel = p - self.position;
        let depth = rel.dot(&self.forward);
        if depth <= 1e-6 {
            return None;
        }
        let x = rel.dot(&self.right) / depth;
        let y = rel.dot(&self.up) / depth;
        let half = self.resolution as f64 / 2.0;
        Some((half + self.focal_px * x, half - self.focal_px * y, depth))
    }
}

/// Float RGB canvas, values in [0, 1].
pub struct Canvas {
    pub size: u32,
    data: Vec<f32>,
}

impl Canvas {
    pub fn filled(size: u32, background: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity((size * size * 3) as usize);
        for _ in 0..size * size {
            data.extend_from_slice(&background);
        }
        Self { size, data }
    }

    fn blend(&mut self, x: i64, y: i64, color: [f32; 3], alpha: f32) {
        if x < 0 || y < 0 || x >= self.size as i64 || y >= self.size as i64 || alpha <= 0.0 {
            return;
        }
        let idx = ((y as u32 * self.size + x as u32) * 3) as usize;
        let a = alpha.clamp(0.0, 1.0);
        for (slot, c) in self.data[idx..idx + 3].iter_mut().zip(color) {
            *slot = (1.0 - a) * *slot + a * c;
        }
    }

    /// Anti-aliased segment: sampled at sub-pixel steps, each sample splatted
    /// with bilinear weights onto its four neighbors.
    pub fn draw_line(&mut self, from: (f64, f64), to: (f64, f64), color: [f32; 3]) {
        let dx = to.0 - from.0;
        let dy = to.1 - from.1;
        let len = (dx * dx + dy * dy).sqrt();
        let steps = (len * 2.0).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let px = from.0 + t * dx;
            let py = from.1 + t * dy;
            let x0 = px.floor();
            let y0 = py.floor();
            let fx = (px - x0) as f32;
            let fy = (py - y0) as f32;
            let (xi, yi) = (x0 as i64, y0 as i64);
            self.blend(xi, yi, color, (1.0 - fx) * (1.0 - fy));
            self.blend(xi + 1, yi, color, fx * (1.0 - fy));
            self.blend(xi, yi + 1, color, (1.0 - fx) * fy);
            self.blend(xi + 1, yi + 1, color, fx * fy);
        }
    }

    /// Filled disc with a one-pixel soft edge.
    pub fn draw_disc(&mut self, center: (f64, f64), radius: f64, color: [f32; 3]) {
        let r = radius.max(0.6);
        let x_min = (center.0 - r - 1.0).floor() as i64;
        let x_max = (center.0 + r + 1.0).ceil() as i64;
        let y_min = (center.1 - r - 1.0).floor() as i64;
        let y_max = (center.1 + r + 1.0).ceil() as i64;
        for y in y_min..=y_max {
            for x in x_min..=x_max {
                let dx = x as f64 + 0.5 - center.0;
                let dy = y as f64 + 0.5 - center.1;
                let dist = (dx * dx + dy * dy).sqrt();
                let alpha = (r - dist + 0.5).clamp(0.0, 1.0) as f32;
                self.blend(x, y, color, alpha);
            }
        }
    }

    pub fn into_image(self) -> RgbImage {
        let raw: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        RgbImage::from_raw(self.size, self.size, raw).expect("canvas dimensions")
    }
}

const LINK_COLORS: [[f32; 3]; 4] = [
    [0.95, 0.35, 0.25],
    [0.30, 0.85, 0.35],
    [0.30, 0.45, 0.95],
    [0.90, 0.80, 0.25],
];

const BACKGROUND: [f32; 3] = [0.08, 0.08, 0.10];

/// Physical end-effector marker radius in meters; projected size encodes
/// depth.
const EEF_MARKER_RADIUS: f64 = 0.035;

/// Render the arm's link positions through `camera`. `tint` perturbs link
/// colors per participant to emulate demonstrator variation.
pub fn render_arm(points: &[Point3<f64>], camera: &Camera, tint: [f32; 3]) -> RgbImage {
    let mut canvas = Canvas::filled(camera.resolution, BACKGROUND);
    let projected: Vec<Option<(f64, f64, f64)>> =
        points.iter().map(|p| camera.project(p)).collect();
    for (i, pair) in projected.windows(2).enumerate() {
        if let (Some(a), Some(b)) = (pair[0], pair[1]) {
            let base = LINK_COLORS[i % LINK_COLORS.len()];
            let color = [
                (base[0] * tint[0]).clamp(0.0, 1.0),
                (base[1] * tint[1]).clamp(0.0, 1.0),
                (base[2] * tint[2]).clamp(0.0, 1.0),
            ];
            canvas.draw_line((a.0, a.1), (b.0, b.1), color);
        }
    }
    for p in projected.iter().take(points.len().saturating_sub(1)).flatten() {
        canvas.draw_disc((p.0, p.1), 1.2, [0.75, 0.75, 0.78]);
    }
    if let Some(Some((u, v, depth))) = projected.last() {
        let radius = camera.focal_px * EEF_MARKER_RADIUS / depth;
        canvas.draw_disc((*u, *v), radius, [1.0, 1.0, 1.0]);
    }
    canvas.into_image()
}
