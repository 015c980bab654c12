//! Viewport positions on the sphere and gnomonic rendering from
//! equirectangular images.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};

/// A point on the unit sphere: longitude in `[-pi, pi)`, latitude in
/// `[-pi/2, pi/2]`. Out-of-range inputs are normalized on construction
/// (latitude folds at the poles, longitude wraps).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereCoord {
    lon: f64,
    lat: f64,
}

impl SphereCoord {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !lon.is_finite() || !lat.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite sphere coordinate ({lon}, {lat})"
            )));
        }
        // Fold latitude at the poles; crossing a pole flips the longitude.
        let mut lat = wrap_signed(lat);
        let mut lon = lon;
        if lat > FRAC_PI_2 {
            lat = PI - lat;
            lon += PI;
        } else if lat < -FRAC_PI_2 {
            lat = -PI - lat;
            lon += PI;
        }
        Ok(SphereCoord {
            lon: wrap_lon(lon),
            lat,
        })
    }

    pub fn from_degrees(lon_deg: f64, lat_deg: f64) -> Result<Self> {
        SphereCoord::new(lon_deg.to_radians(), lat_deg.to_radians())
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon_deg(&self) -> f64 {
        self.lon.to_degrees()
    }

    pub fn lat_deg(&self) -> f64 {
        self.lat.to_degrees()
    }

    /// Unit vector with x toward (lon=0, lat=0) and z toward the north pole.
    pub fn to_unit_vector(&self) -> [f64; 3] {
        let (sin_lon, cos_lon) = self.lon.sin_cos();
        let (sin_lat, cos_lat) = self.lat.sin_cos();
        [cos_lat * cos_lon, cos_lat * sin_lon, sin_lat]
    }

    pub fn from_unit_vector(v: [f64; 3]) -> Result<Self> {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidArgument(
                "cannot derive sphere coordinate from zero vector".into(),
            ));
        }
        let lat = (v[2] / norm).clamp(-1.0, 1.0).asin();
        let lon = v[1].atan2(v[0]);
        SphereCoord::new(lon, lat)
    }
}

fn wrap_lon(lon: f64) -> f64 {
    let w = (lon + PI).rem_euclid(TAU) - PI;
    // rem_euclid can land exactly on PI for inputs just below -PI.
    if w >= PI {
        -PI
    } else {
        w
    }
}

fn wrap_signed(angle: f64) -> f64 {
    let w = (angle + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Central angle between two sphere points, in `[0, pi]`.
pub fn angular_distance(a: SphereCoord, b: SphereCoord) -> f64 {
    if a == b {
        // sin^2 + cos^2 can round just below 1; keep d(a, a) exactly zero.
        return 0.0;
    }
    let dot = a.lat.sin() * b.lat.sin() + a.lat.cos() * b.lat.cos() * (a.lon - b.lon).cos();
    dot.clamp(-1.0, 1.0).acos()
}

/// The 20 face-center directions of a regular icosahedron, ordered by
/// latitude descending then longitude ascending. These are the default
/// viewport centers; other counts require an explicit center list.
pub fn default_viewport_centers(n: usize) -> Result<Vec<SphereCoord>> {
    if n != 20 {
        return Err(Error::InvalidArgument(format!(
            "default viewport scheme supports exactly 20 centers, not {n}; \
             supply an explicit center list instead"
        )));
    }
    // Face centers of the icosahedron are the vertices of its dual, the
    // regular dodecahedron: (+-1,+-1,+-1), (0,+-1/phi,+-phi) and cyclic.
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let inv = 1.0 / phi;
    let mut dirs: Vec<[f64; 3]> = Vec::with_capacity(20);
    for &sx in &[-1.0, 1.0] {
        for &sy in &[-1.0, 1.0] {
            for &sz in &[-1.0, 1.0] {
                dirs.push([sx, sy, sz]);
            }
        }
    }
    for &s1 in &[-1.0, 1.0] {
        for &s2 in &[-1.0, 1.0] {
            dirs.push([0.0, s1 * inv, s2 * phi]);
            dirs.push([s1 * inv, s2 * phi, 0.0]);
            dirs.push([s1 * phi, 0.0, s2 * inv]);
        }
    }
    let mut centers: Vec<SphereCoord> = dirs
        .into_iter()
        .map(|v| SphereCoord::from_unit_vector(v).expect("dodecahedron vertex is nonzero"))
        .collect();
    centers.sort_by(|a, b| {
        b.lat
            .partial_cmp(&a.lat)
            .unwrap()
            .then(a.lon.partial_cmp(&b.lon).unwrap())
    });
    Ok(centers)
}

/// How a viewport is rendered: where it points, its field of view in
/// degrees, and the square output resolution in pixels.
#[derive(Debug, Clone, Copy)]
pub struct ViewportSpec {
    pub center: SphereCoord,
    pub fov_deg: f64,
    pub resolution: usize,
}

impl ViewportSpec {
    pub fn new(center: SphereCoord, fov_deg: f64, resolution: usize) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::InvalidArgument(format!(
                "viewport fov must lie in (0, 180) degrees, got {fov_deg}"
            )));
        }
        if resolution < 2 {
            return Err(Error::InvalidArgument(format!(
                "viewport resolution must be at least 2, got {resolution}"
            )));
        }
        Ok(ViewportSpec {
            center,
            fov_deg,
            resolution,
        })
    }

    pub fn with_center(center: SphereCoord) -> Self {
        ViewportSpec {
            center,
            fov_deg: 90.0,
            resolution: 256,
        }
    }
}

/// A full-sphere image in equirectangular layout: RGB, row-major, intensities
/// in `[0, 1]`, width exactly twice the height.
#[derive(Debug, Clone)]
pub struct EquirectImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl EquirectImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width != 2 * height {
            return Err(Error::InvalidArgument(format!(
                "equirectangular image must have 2:1 aspect, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "pixel buffer holds {} values, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "pixel intensities must lie in [0, 1]".into(),
            ));
        }
        Ok(EquirectImage {
            width,
            height,
            data,
        })
    }

    /// Load an 8-bit PNG or PPM image; intensities are value/255.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
        EquirectImage::new(w, h, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Bilinear sample at a sphere location, wrapping horizontally and
    /// clamping vertically at the poles.
    fn sample(&self, lon: f64, lat: f64) -> [f64; 3] {
        let w = self.width as f64;
        let h = self.height as f64;
        let u = (lon + PI) / TAU * w - 0.5;
        let v = (FRAC_PI_2 - lat) / PI * h - 0.5;
        let i0 = u.floor();
        let j0 = v.floor();
        let fu = u - i0;
        let fv = v - j0;
        let xi0 = (i0 as i64).rem_euclid(self.width as i64) as usize;
        let xi1 = (i0 as i64 + 1).rem_euclid(self.width as i64) as usize;
        let yj0 = (j0 as i64).clamp(0, self.height as i64 - 1) as usize;
        let yj1 = (j0 as i64 + 1).clamp(0, self.height as i64 - 1) as usize;
        let p00 = self.pixel(xi0, yj0);
        let p10 = self.pixel(xi1, yj0);
        let p01 = self.pixel(xi0, yj1);
        let p11 = self.pixel(xi1, yj1);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] * (1.0 - fu) + p10[c] * fu;
            let bot = p01[c] * (1.0 - fu) + p11[c] * fu;
            out[c] = top * (1.0 - fv) + bot * fv;
        }
        out
    }
}

/// Render a perspective viewport by gnomonic projection. Output is
/// `(resolution, resolution, 3)` with intensities in `[0, 1]`.
pub fn render_viewport(img: &EquirectImage, spec: &ViewportSpec) -> Array3<f64> {
    let res = spec.resolution;
    let t = (spec.fov_deg.to_radians() / 2.0).tan();
    let fwd = spec.center.to_unit_vector();
    let (sin_lon, cos_lon) = spec.center.lon().sin_cos();
    let (sin_lat, cos_lat) = spec.center.lat().sin_cos();
    let east = [-sin_lon, cos_lon, 0.0];
    let north = [-sin_lat * cos_lon, -sin_lat * sin_lon, cos_lat];

    let mut out = Array3::zeros((res, res, 3));
    for row in 0..res {
        let b = (1.0 - 2.0 * (row as f64 + 0.5) / res as f64) * t;
        for col in 0..res {
            let a = (2.0 * (col as f64 + 0.5) / res as f64 - 1.0) * t;
            let d = [
                fwd[0] + a * east[0] + b * north[0],
                fwd[1] + a * east[1] + b * north[1],
                fwd[2] + a * east[2] + b * north[2],
            ];
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let lat = (d[2] / norm).clamp(-1.0, 1.0).asin();
            let lon = d[1].atan2(d[0]);
            let rgb = img.sample(lon, lat);
            for c in 0..3 {
                out[[row, col, c]] = rgb[c];
            }
        }
    }
    out
}

/// Encode a rendered viewport as 8-bit PNG bytes.
pub fn viewport_to_png(viewport: &Array3<f64>) -> Result<Vec<u8>> {
    let (h, w, c) = viewport.dim();
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let mut raw = Vec::with_capacity(h * w * 3);
    for row in 0..h {
        for col in 0..w {
            for ch in 0..3 {
                let v = (viewport[[row, col, ch]].clamp(0.0, 1.0) * 255.0).round() as u8;
                raw.push(v);
            }
        }
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, raw)
        .expect("raw buffer sized from dimensions");
    let mut bytes = Vec::new();
    img.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Format(format!("png encode: {e}")))?;
    Ok(bytes)
}
