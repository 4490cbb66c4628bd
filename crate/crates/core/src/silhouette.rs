//! Silhouette data term: rasterize the posed mesh into a binary mask per
//! view, compute exact Euclidean distance transforms, and score the
//! bidirectional model-to-mask mismatch. The scoring form follows the energy
//! as written (squared distances from rendered pixels, absolute distances
//! from observed pixels); the solver sees a frozen, piecewise-smooth
//! surrogate built from silhouette-rim vertices and per-pixel anchor
//! correspondences.

use std::sync::Arc;

use crate::body::BodyModel;
use crate::camera::{project, Camera, MIN_DEPTH};
use crate::energy::ROBUST_EPS;
use crate::error::{Error, Result};
use crate::linalg::{Vec2, Vec3};
use crate::scalar::Real;

/// Binary occupancy grid; foreground marks the person.
#[derive(Clone, Debug, PartialEq)]
pub struct SilhouetteMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl SilhouetteMask {
    pub fn new(width: usize, height: usize) -> Self {
        SilhouetteMask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Foreground pixels on the strided grid (x % stride == 0 and
    /// y % stride == 0).
    pub fn strided_foreground(&self, stride: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut y = 0;
        while y < self.height {
            let mut x = 0;
            while x < self.width {
                if self.get(x, y) {
                    out.push((x, y));
                }
                x += stride;
            }
            y += stride;
        }
        out
    }

    /// Morphological dilation (radius > 0) or erosion (radius < 0) with a
    /// square structuring element.
    pub fn morph(&self, radius: i32) -> SilhouetteMask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius.unsigned_abs() as i64;
        let dilate = radius > 0;
        let mut out = SilhouetteMask::new(self.width, self.height);
        for y in 0..self.height as i64 {
            for x in 0..self.width as i64 {
                let mut hit = !dilate;
                'scan: for dy in -r..=r {
                    for dx in -r..=r {
                        let (nx, ny) = (x + dx, y + dy);
                        let inside = nx >= 0
                            && ny >= 0
                            && nx < self.width as i64
                            && ny < self.height as i64;
                        let v = inside && self.get(nx as usize, ny as usize);
                        if dilate && v {
                            hit = true;
                            break 'scan;
                        }
                        if !dilate && !v {
                            hit = false;
                            break 'scan;
                        }
                    }
                }
                out.set(x as usize, y as usize, hit);
            }
        }
        out
    }
}

/// Exact Euclidean distances (pixels) to the nearest foreground pixel, plus
/// that pixel's coordinates.
#[derive(Clone, Debug)]
pub struct DistanceField {
    pub width: usize,
    pub height: usize,
    pub dist: Vec<f64>,
    pub nearest: Vec<(u16, u16)>,
}

impl DistanceField {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.dist[y * self.width + x]
    }

    #[inline]
    pub fn nearest_at(&self, x: usize, y: usize) -> (u16, u16) {
        self.nearest[y * self.width + x]
    }

    /// Bilinear sample at a continuous pixel position, clamped at `clamp`.
    /// Grid values live at pixel centers (x + 0.5, y + 0.5); positions
    /// outside the image clamp to the border cells.
    pub fn sample_clamped<S: Real>(&self, p: Vec2<S>, clamp: f64) -> S {
        let gx = p.x - S::constant(0.5);
        let gy = p.y - S::constant(0.5);
        let x0f = gx.primal().floor().clamp(0.0, (self.width - 1) as f64);
        let y0f = gy.primal().floor().clamp(0.0, (self.height - 1) as f64);
        let x0 = x0f as usize;
        let y0 = y0f as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (gx - S::constant(x0f)).max(S::zero()).min(S::one());
        let fy = (gy - S::constant(y0f)).max(S::zero()).min(S::one());
        let v00 = S::constant(self.at(x0, y0).min(clamp));
        let v10 = S::constant(self.at(x1, y0).min(clamp));
        let v01 = S::constant(self.at(x0, y1).min(clamp));
        let v11 = S::constant(self.at(x1, y1).min(clamp));
        let one = S::one();
        (one - fy) * ((one - fx) * v00 + fx * v10) + fy * ((one - fx) * v01 + fx * v11)
    }
}

/// Exact Euclidean distance transform via per-row nearest scan followed by a
/// per-column lower-envelope pass, with nearest-site tracking.
pub fn distance_transform(mask: &SilhouetteMask) -> Result<DistanceField> {
    let (w, h) = (mask.width, mask.height);
    if mask.foreground_count() == 0 {
        return Err(Error::EmptySilhouette);
    }
    // Row pass: nearest foreground x within each row.
    let mut row_d2 = vec![f64::INFINITY; w * h];
    let mut row_site = vec![-1i64; w * h];
    for y in 0..h {
        let mut last: i64 = -1;
        for x in 0..w {
            if mask.get(x, y) {
                last = x as i64;
            }
            if last >= 0 {
                let d = x as i64 - last;
                row_d2[y * w + x] = (d * d) as f64;
                row_site[y * w + x] = last;
            }
        }
        last = -1;
        for x in (0..w).rev() {
            if mask.get(x, y) {
                last = x as i64;
            }
            if last >= 0 {
                let d = last - x as i64;
                let d2 = (d * d) as f64;
                if d2 < row_d2[y * w + x] {
                    row_d2[y * w + x] = d2;
                    row_site[y * w + x] = last;
                }
            }
        }
    }

    // Column pass: lower envelope of parabolas rooted at finite row
    // distances.
    let mut dist = vec![0.0; w * h];
    let mut nearest = vec![(0u16, 0u16); w * h];
    let mut v: Vec<usize> = Vec::with_capacity(h);
    let mut z: Vec<f64> = Vec::with_capacity(h + 1);
    for x in 0..w {
        v.clear();
        z.clear();
        for q in 0..h {
            let fq = row_d2[q * w + x];
            if !fq.is_finite() {
                continue;
            }
            let qf = q as f64;
            loop {
                match v.last() {
                    None => {
                        v.push(q);
                        z.push(f64::NEG_INFINITY);
                        z.push(f64::INFINITY);
                        break;
                    }
                    Some(&p) => {
                        let pf = p as f64;
                        let fp = row_d2[p * w + x];
                        let s = ((fq + qf * qf) - (fp + pf * pf)) / (2.0 * qf - 2.0 * pf);
                        if s <= z[v.len() - 1] {
                            v.pop();
                            z.pop();
                            z.pop();
                            z.push(f64::INFINITY);
                        } else {
                            *z.last_mut().unwrap() = s;
                            v.push(q);
                            z.push(f64::INFINITY);
                            break;
                        }
                    }
                }
            }
        }
        debug_assert!(!v.is_empty(), "nonempty mask guarantees a site per column");
        let mut k = 0;
        for q in 0..h {
            let qf = q as f64;
            while z[k + 1] < qf {
                k += 1;
            }
            let site_y = v[k];
            let dy = qf - site_y as f64;
            let d2 = dy * dy + row_d2[site_y * w + x];
            dist[q * w + x] = d2.sqrt();
            nearest[q * w + x] = (row_site[site_y * w + x] as u16, site_y as u16);
        }
    }

    Ok(DistanceField {
        width: w,
        height: h,
        dist,
        nearest,
    })
}

/// Rasterization output: binary mask plus per-pixel provenance used by the
/// differentiable surrogate.
#[derive(Clone, Debug)]
pub struct RenderedSilhouette {
    pub mask: SilhouetteMask,
    pub pixels: Vec<(u16, u16)>,
    /// True when nothing rasterized (body behind the camera or off screen).
    pub offscreen: bool,
    /// Face that won the depth test per pixel; u32::MAX on background.
    pub face_id: Vec<u32>,
    /// Barycentric coordinates (b1, b2) of the pixel center in that face.
    pub bary: Vec<[f32; 2]>,
    pub depth: Vec<f32>,
}

/// Fill all triangles whose projected vertices are in front of the camera.
/// A pixel belongs to a triangle when its center passes the inclusive edge
/// test for both windings.
pub fn rasterize_mesh(
    projected: &[Option<Vec2<f64>>],
    depths: &[f64],
    faces: &[[u32; 3]],
    width: usize,
    height: usize,
) -> RenderedSilhouette {
    let mut out = RenderedSilhouette {
        mask: SilhouetteMask::new(width, height),
        pixels: Vec::new(),
        offscreen: false,
        face_id: vec![u32::MAX; width * height],
        bary: vec![[0.0, 0.0]; width * height],
        depth: vec![f32::INFINITY; width * height],
    };
    for (fi, face) in faces.iter().enumerate() {
        let (a, b, c) = (
            projected[face[0] as usize],
            projected[face[1] as usize],
            projected[face[2] as usize],
        );
        let (a, b, c) = match (a, b, c) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => continue,
        };
        let area2 = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
        if area2.abs() < 1e-12 {
            continue;
        }
        let sign = area2.signum();
        let min_x = a.x.min(b.x).min(c.x).floor().max(0.0) as usize;
        let max_x = (a.x.max(b.x).max(c.x).ceil() as i64).clamp(0, width as i64 - 1) as usize;
        let min_y = a.y.min(b.y).min(c.y).floor().max(0.0) as usize;
        let max_y = (a.y.max(b.y).max(c.y).ceil() as i64).clamp(0, height as i64 - 1) as usize;
        if min_x > max_x || min_y > max_y {
            continue;
        }
        let (za, zb, zc) = (
            depths[face[0] as usize],
            depths[face[1] as usize],
            depths[face[2] as usize],
        );
        for py in min_y..=max_y {
            for px in min_x..=max_x {
                let p = Vec2::new(px as f64 + 0.5, py as f64 + 0.5);
                let e0 = ((b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)) * sign;
                let e1 = ((c.x - b.x) * (p.y - b.y) - (c.y - b.y) * (p.x - b.x)) * sign;
                let e2 = ((a.x - c.x) * (p.y - c.y) - (a.y - c.y) * (p.x - c.x)) * sign;
                if e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0 {
                    let idx = py * width + px;
                    let total = e0 + e1 + e2;
                    let b1 = e2 / total;
                    let b2 = e0 / total;
                    let z = (za * e1 + zb * e2 + zc * e0) / total;
                    if !out.mask.data[idx] {
                        out.pixels.push((px as u16, py as u16));
                    }
                    out.mask.data[idx] = true;
                    if (z as f32) < out.depth[idx] {
                        out.depth[idx] = z as f32;
                        out.face_id[idx] = fi as u32;
                        out.bary[idx] = [b1 as f32, b2 as f32];
                    }
                }
            }
        }
    }
    out.pixels.sort_unstable();
    out.offscreen = out.pixels.is_empty();
    out
}

/// Project the posed body into a view and rasterize it.
pub fn rasterize(
    model: &BodyModel,
    shape: &crate::body::ShapeParams,
    pose: &crate::body::PoseParams,
    cam: &Camera,
) -> Result<RenderedSilhouette> {
    let posed = model.forward(shape, pose)?;
    let (projected, depths) = project_vertices(&posed.vertices, cam);
    Ok(rasterize_mesh(
        &projected,
        &depths,
        &model.faces,
        cam.image_size.0 as usize,
        cam.image_size.1 as usize,
    ))
}

pub fn project_vertices(
    vertices: &[Vec3<f64>],
    cam: &Camera,
) -> (Vec<Option<Vec2<f64>>>, Vec<f64>) {
    let mut projected = Vec::with_capacity(vertices.len());
    let mut depths = Vec::with_capacity(vertices.len());
    for &v in vertices {
        let depth = cam.depth(v);
        depths.push(depth);
        projected.push(if depth > MIN_DEPTH {
            project(cam, v).ok()
        } else {
            None
        });
    }
    (projected, depths)
}

/// Vertices on the projected silhouette rim: endpoints of edges where the
/// two adjacent faces change screen-space orientation (or boundary edges of
/// open meshes).
pub fn rim_vertices(model: &BodyModel, projected: &[Option<Vec2<f64>>]) -> Vec<usize> {
    let mut orientation: Vec<i8> = Vec::with_capacity(model.faces.len());
    for face in &model.faces {
        let o = match (
            projected[face[0] as usize],
            projected[face[1] as usize],
            projected[face[2] as usize],
        ) {
            (Some(a), Some(b), Some(c)) => {
                let area2 = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
                if area2 > 1e-12 {
                    1
                } else if area2 < -1e-12 {
                    -1
                } else {
                    0
                }
            }
            _ => 0,
        };
        orientation.push(o);
    }
    let mut rim = vec![false; model.vertex_count()];
    for &(v0, v1, fa, fb) in model.edges() {
        let is_rim = if fb == u32::MAX {
            orientation[fa as usize] != 0
        } else {
            let (oa, ob) = (orientation[fa as usize], orientation[fb as usize]);
            oa * ob <= 0 && (oa != 0 || ob != 0)
        };
        if is_rim {
            rim[v0 as usize] = true;
            rim[v1 as usize] = true;
        }
    }
    (0..model.vertex_count()).filter(|&v| rim[v]).collect()
}

/// The bidirectional silhouette mismatch as written: squared distances from
/// rendered foreground pixels into the observed field, plus absolute
/// distances from observed foreground pixels into the rendered field, both
/// on the strided grid and clamped at `clamp` pixels.
pub fn silhouette_term(
    rendered: &RenderedSilhouette,
    observed: &SilhouetteMask,
    observed_field: &DistanceField,
    rendered_field: &DistanceField,
    stride: usize,
    clamp: f64,
) -> Result<f64> {
    if rendered.mask.width != observed.width || rendered.mask.height != observed.height {
        return Err(Error::DimensionMismatch(format!(
            "rendered {}x{} vs observed {}x{}",
            rendered.mask.width, rendered.mask.height, observed.width, observed.height
        )));
    }
    if observed_field.width != observed.width || rendered_field.width != observed.width {
        return Err(Error::DimensionMismatch(
            "distance field does not match mask dimensions".into(),
        ));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let mut total = 0.0;
    for &(x, y) in &rendered.pixels {
        let (x, y) = (x as usize, y as usize);
        if x % stride == 0 && y % stride == 0 {
            let d = observed_field.at(x, y).min(clamp);
            total += d * d;
        }
    }
    for (x, y) in observed.strided_foreground(stride) {
        total += rendered_field.at(x, y).min(clamp);
    }
    Ok(total)
}

/// Signed distance to the mask boundary in pixels: positive outside the
/// foreground, negative inside, linear zero crossing halfway between the
/// last foreground and first background pixel centers.
#[derive(Clone, Debug)]
pub struct SignedField {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl SignedField {
    pub fn compute(mask: &SilhouetteMask) -> Result<SignedField> {
        let outside = distance_transform(mask)?;
        let inverse = SilhouetteMask {
            width: mask.width,
            height: mask.height,
            data: mask.data.iter().map(|&b| !b).collect(),
        };
        let inside = distance_transform(&inverse).ok();
        let values = (0..mask.width * mask.height)
            .map(|i| match &inside {
                Some(f) => outside.dist[i] - f.dist[i],
                // All-foreground mask: everything is deep inside.
                None => -(mask.width.max(mask.height) as f64),
            })
            .collect();
        Ok(SignedField {
            width: mask.width,
            height: mask.height,
            values,
        })
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Bilinear sample at a continuous pixel position, symmetric clamp.
    pub fn sample_clamped<S: Real>(&self, p: Vec2<S>, clamp: f64) -> S {
        let gx = p.x - S::constant(0.5);
        let gy = p.y - S::constant(0.5);
        let x0f = gx.primal().floor().clamp(0.0, (self.width - 1) as f64);
        let y0f = gy.primal().floor().clamp(0.0, (self.height - 1) as f64);
        let x0 = x0f as usize;
        let y0 = y0f as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (gx - S::constant(x0f)).max(S::zero()).min(S::one());
        let fy = (gy - S::constant(y0f)).max(S::zero()).min(S::one());
        let cl = |v: f64| S::constant(v.clamp(-clamp, clamp));
        let v00 = cl(self.at(x0, y0));
        let v10 = cl(self.at(x1, y0));
        let v01 = cl(self.at(x0, y1));
        let v11 = cl(self.at(x1, y1));
        let one = S::one();
        (one - fy) * ((one - fx) * v00 + fx * v10) + fy * ((one - fx) * v01 + fx * v11)
    }
}

/// Precomputed per-view observation used by the frozen surrogate: the mask
/// plus its signed boundary-distance field.
#[derive(Clone)]
pub struct ObservedSilhouette {
    pub mask: Arc<SilhouetteMask>,
    pub signed_field: Arc<SignedField>,
}

impl ObservedSilhouette {
    pub fn prepare(mask: Arc<SilhouetteMask>) -> Result<ObservedSilhouette> {
        let signed_field = Arc::new(SignedField::compute(&mask)?);
        Ok(ObservedSilhouette { mask, signed_field })
    }
}

/// Per-view frozen state of the differentiable silhouette surrogate.
pub struct FrozenView {
    pub cam: Camera,
    /// Signed distance to the observed boundary; rims are pulled onto its
    /// zero crossing from both sides.
    pub signed_field: Arc<SignedField>,
    /// Vertex subset touched by this view (rims plus anchor face corners).
    pub vertex_set: Vec<usize>,
    /// Slots into `vertex_set` for rim vertices.
    pub rim_slots: Vec<usize>,
    /// Anchors for uncovered observed pixels: target pixel center, face
    /// corner slots and frozen barycentrics.
    anchors: Vec<([f64; 2], [usize; 3], [f64; 3])>,
}

/// Frozen silhouette surrogate over all views, built at the current iterate
/// and differentiable in (β, θ) until the next rebuild.
pub struct FrozenSilhouette {
    pub views: Vec<FrozenView>,
    pub weight_sqrt: f64,
    pub clamp: f64,
}

impl FrozenSilhouette {
    /// Rasterize the current estimate in every view and freeze rim vertices
    /// and nearest-pixel correspondences. Views with an empty observed mask
    /// are skipped (caller warns); views where the body renders empty
    /// contribute no surrogate residuals this round.
    pub fn build(
        model: &BodyModel,
        shape: &crate::body::ShapeParams,
        pose: &crate::body::PoseParams,
        cameras: &[Camera],
        observed: &[ObservedSilhouette],
        stride: usize,
        weight: f64,
        clamp: f64,
    ) -> Result<FrozenSilhouette> {
        let posed = model.forward(shape, pose)?;
        let mut views = Vec::new();
        for (cam, obs) in cameras.iter().zip(observed) {
            let mask = &obs.mask;
            let (projected, depths) = project_vertices(&posed.vertices, cam);
            // Work in a crop around the projected body: pixels farther than
            // the clamp distance from it behave as clamped constants anyway.
            let (img_w, img_h) = (cam.image_size.0 as usize, cam.image_size.1 as usize);
            let margin = clamp.ceil() as i64;
            let mut lo = (i64::MAX, i64::MAX);
            let mut hi = (i64::MIN, i64::MIN);
            for p in projected.iter().flatten() {
                lo.0 = lo.0.min(p.x.floor() as i64);
                lo.1 = lo.1.min(p.y.floor() as i64);
                hi.0 = hi.0.max(p.x.ceil() as i64);
                hi.1 = hi.1.max(p.y.ceil() as i64);
            }
            if lo.0 > hi.0 {
                continue;
            }
            let x0 = (lo.0 - margin).clamp(0, img_w as i64) as usize;
            let y0 = (lo.1 - margin).clamp(0, img_h as i64) as usize;
            let x1 = (hi.0 + margin).clamp(0, img_w as i64) as usize;
            let y1 = (hi.1 + margin).clamp(0, img_h as i64) as usize;
            if x1 <= x0 || y1 <= y0 {
                continue;
            }
            let (crop_w, crop_h) = (x1 - x0, y1 - y0);
            let shifted: Vec<Option<Vec2<f64>>> = projected
                .iter()
                .map(|p| p.map(|p| Vec2::new(p.x - x0 as f64, p.y - y0 as f64)))
                .collect();
            let rendered = rasterize_mesh(&shifted, &depths, &model.faces, crop_w, crop_h);
            if rendered.offscreen {
                continue;
            }
            let projected = shifted;
            // Keep only rims on the rendered outline: rims from overlapping
            // body parts project into the mask interior and must not be
            // pulled onto the observed contour.
            let on_outline = |v: usize| -> bool {
                let Some(px) = projected[v] else { return false };
                let (x, y) = (px.x.floor() as i64, px.y.floor() as i64);
                let mut saw_fg = false;
                let mut saw_bg = false;
                for dy in -1..=1i64 {
                    for dx in -1..=1i64 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0
                            || ny < 0
                            || nx >= rendered.mask.width as i64
                            || ny >= rendered.mask.height as i64
                            || !rendered.mask.get(nx as usize, ny as usize)
                        {
                            saw_bg = true;
                        } else {
                            saw_fg = true;
                        }
                    }
                }
                saw_fg && saw_bg
            };
            let rims: Vec<usize> = rim_vertices(model, &projected)
                .into_iter()
                .filter(|&v| on_outline(v))
                .collect();
            let rendered_field = distance_transform(&rendered.mask)?;

            let mut vertex_set: Vec<usize> = Vec::new();
            let mut slot_of = std::collections::HashMap::new();
            let mut slot = |v: usize, set: &mut Vec<usize>| -> usize {
                *slot_of.entry(v).or_insert_with(|| {
                    set.push(v);
                    set.len() - 1
                })
            };
            let rim_slots: Vec<usize> = rims.iter().map(|&v| slot(v, &mut vertex_set)).collect();

            let mut anchors = Vec::new();
            for (x, y) in mask.strided_foreground(stride) {
                // Observed pixels outside the crop are beyond the clamp
                // distance from the body and carry no gradient.
                if x < x0 || y < y0 || x >= x0 + crop_w || y >= y0 + crop_h {
                    continue;
                }
                let (cx, cy) = (x - x0, y - y0);
                if rendered.mask.get(cx, cy) {
                    continue;
                }
                let (qx, qy) = rendered_field.nearest_at(cx, cy);
                let idx = qy as usize * rendered.mask.width + qx as usize;
                let fi = rendered.face_id[idx];
                if fi == u32::MAX {
                    continue;
                }
                let face = model.faces[fi as usize];
                let b = rendered.bary[idx];
                let bary = [1.0 - b[0] as f64 - b[1] as f64, b[0] as f64, b[1] as f64];
                let slots = [
                    slot(face[0] as usize, &mut vertex_set),
                    slot(face[1] as usize, &mut vertex_set),
                    slot(face[2] as usize, &mut vertex_set),
                ];
                anchors.push(([x as f64 + 0.5, y as f64 + 0.5], slots, bary));
            }
            views.push(FrozenView {
                cam: cam.clone(),
                signed_field: obs.signed_field.clone(),
                vertex_set,
                rim_slots,
                anchors,
            });
        }
        Ok(FrozenSilhouette {
            views,
            weight_sqrt: weight.sqrt(),
            clamp,
        })
    }

    pub fn residual_count(&self) -> usize {
        self.views
            .iter()
            .map(|v| v.rim_slots.len() + 2 * v.anchors.len())
            .sum()
    }

    /// Emit the surrogate residuals: per rim vertex the sampled observed
    /// distance (squared by the solver), per anchor the pixel residual
    /// vector scaled so its squared norm is the absolute pixel distance
    /// between the observed pixel and its frozen surface point.
    pub fn residuals<S: Real>(
        &self,
        model: &BodyModel,
        beta: &[S],
        trans: Vec3<S>,
        rots: &[Vec3<S>],
        out: &mut Vec<S>,
    ) {
        let w = S::constant(self.weight_sqrt);
        let clamp_s = S::constant(self.clamp);
        let clamp_root = S::constant(self.clamp.sqrt());
        for view in &self.views {
            let verts = model
                .pose_vertex_subset(beta, trans, rots, &view.vertex_set)
                .expect("shape dimension already validated");
            for &slot in &view.rim_slots {
                // Signed boundary distance: zero exactly on the sub-pixel
                // boundary midline, so the rim is pulled there unbiased from
                // either side.
                let r = match project(&view.cam, verts[slot]) {
                    Ok(px) => view.signed_field.sample_clamped(px, self.clamp),
                    Err(_) => clamp_s,
                };
                out.push(w * r);
            }
            for &(target, slots, bary) in &view.anchors {
                let p = verts[slots[0]] * S::constant(bary[0])
                    + verts[slots[1]] * S::constant(bary[1])
                    + verts[slots[2]] * S::constant(bary[2]);
                match project(&view.cam, p) {
                    Ok(px) => {
                        let diff = px - Vec2::new(S::constant(target[0]), S::constant(target[1]));
                        let n2 = diff.dot(diff);
                        if n2.primal().sqrt() >= self.clamp {
                            out.push(w * clamp_root);
                            out.push(S::zero());
                        } else {
                            // diff * (‖diff‖² + ε)^(-1/4) squares to ≈ ‖diff‖.
                            let scale = S::one()
                                / (n2 + S::constant(ROBUST_EPS)).sqrt().sqrt();
                            out.push(w * diff.x * scale);
                            out.push(w * diff.y * scale);
                        }
                    }
                    Err(_) => {
                        out.push(w * clamp_root);
                        out.push(S::zero());
                    }
                }
            }
        }
    }
}

/// Stage-one scalar objective: E_M plus the weighted exact silhouette terms
/// over all views. Views with an empty observed mask are skipped; a view
/// where the body renders off screen scores the clamped maximum for every
/// strided observed pixel.
pub fn stage_one_objective(
    model: &BodyModel,
    shape: &crate::body::ShapeParams,
    pose: &crate::body::PoseParams,
    cameras: &[Camera],
    detections: &[crate::energy::JointDetections],
    masks: &[SilhouetteMask],
    prior: &crate::energy::PosePrior,
    config: &crate::energy::FitConfig,
) -> Result<f64> {
    let mut total =
        crate::energy::multiview_term(model, shape, pose, cameras, detections, prior, config)?;
    if config.silhouette_weight == 0.0 {
        return Ok(total);
    }
    if masks.len() != cameras.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} masks vs {} cameras",
            masks.len(),
            cameras.len()
        )));
    }
    for (cam, mask) in cameras.iter().zip(masks) {
        if mask.foreground_count() == 0 {
            continue;
        }
        let observed_field = distance_transform(mask)?;
        let rendered = rasterize(model, shape, pose, cam)?;
        let es = if rendered.offscreen {
            config.distance_clamp * mask.strided_foreground(config.silhouette_stride).len() as f64
        } else {
            let rendered_field = distance_transform(&rendered.mask)?;
            silhouette_term(
                &rendered,
                mask,
                &observed_field,
                &rendered_field,
                config.silhouette_stride,
                config.distance_clamp,
            )?
        };
        total += config.silhouette_weight * es;
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// PGM mask files
// ---------------------------------------------------------------------------

/// Write a mask as binary PGM (P5, maxval 255): 0 background, 255 foreground.
pub fn write_pgm(mask: &SilhouetteMask, w: &mut impl std::io::Write) -> std::io::Result<()> {
    write!(w, "P5\n{} {}\n255\n", mask.width, mask.height)?;
    let bytes: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    w.write_all(&bytes)
}

/// Read a mask from raw file bytes: binary PGM (P5) or 8-bit grayscale PNG,
/// gray values thresholded at 128.
pub fn read_mask_bytes(bytes: &[u8], path: &str) -> Result<SilhouetteMask> {
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        return read_png(bytes, path);
    }
    read_pgm(bytes, path)
}

fn read_png(bytes: &[u8], path: &str) -> Result<SilhouetteMask> {
    let err = |detail: String| Error::Parse {
        path: path.to_string(),
        detail,
    };
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder.read_info().map_err(|e| err(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| err(e.to_string()))?;
    let (width, height) = (info.width as usize, info.height as usize);
    let channels = info.buffer_size() / (width * height).max(1);
    if channels == 0 || info.bit_depth != png::BitDepth::Eight {
        return Err(err("expected an 8-bit grayscale PNG".into()));
    }
    let data = (0..width * height)
        .map(|i| buf[i * channels] >= 128)
        .collect();
    Ok(SilhouetteMask {
        width,
        height,
        data,
    })
}

/// Read a binary PGM (P5) mask; gray values threshold at 128.
pub fn read_pgm(bytes: &[u8], path: &str) -> Result<SilhouetteMask> {
    let err = |detail: &str| Error::Parse {
        path: path.to_string(),
        detail: detail.to_string(),
    };
    // Header: magic, width, height, maxval, single whitespace, then raster.
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        tokens.push(&bytes[start..pos]);
    }
    if tokens.len() < 4 || tokens[0] != b"P5" {
        return Err(err("expected binary PGM (P5) header"));
    }
    let parse = |t: &[u8], what: &str| -> Result<usize> {
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(&format!("bad {what} field")))
    };
    let width = parse(tokens[1], "width")?;
    let height = parse(tokens[2], "height")?;
    let maxval = parse(tokens[3], "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(err("unsupported maxval"));
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() < pos + width * height {
        return Err(err("truncated raster data"));
    }
    let data = bytes[pos..pos + width * height]
        .iter()
        .map(|&b| b >= 128)
        .collect();
    Ok(SilhouetteMask {
        width,
        height,
        data,
    })
}
