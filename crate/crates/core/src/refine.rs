//! Photometric mesh refinement: gradient descent on a pairwise ZNCC
//! reprojection energy, restricted to pixels free of moving objects, with
//! umbrella-operator smoothing.

use crate::geom::CameraView;
use crate::mesh::{TriangleMesh, MIN_FACE_AREA};
use crate::prelude::*;
use crate::raster::{is_visible, rasterize_view, ray_plane_barycentric, DepthMap};

/// Per-pixel variance below which a patch counts as flat.
const FLAT_VARIANCE: f64 = 1e-10;
/// Smallest step before the descent stops.
pub const MIN_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RefineConfig {
    /// ZNCC patch half-width in pixels (5 gives 11×11 patches).
    pub patch_half_width: usize,
    /// Largest photometric vertex displacement per iteration, in meters.
    pub step: f64,
    pub iterations: usize,
    /// Umbrella smoothing weight λ_s.
    pub smoothing: f64,
    /// Each view is paired with this many nearest views.
    pub pairs: usize,
    /// Pixels with |n·d| below this are left out of the gradient.
    pub grazing: f64,
    /// Occlusion tolerance (meters) when checking visibility in view j.
    pub visibility_tolerance: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            patch_half_width: 5,
            step: 0.02,
            iterations: 30,
            smoothing: 0.3,
            pairs: 2,
            grazing: 0.05,
            visibility_tolerance: 1e-2,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_half_width < 1 {
            return Err(Error::InvalidParameter("patch half-width must be at least 1"));
        }
        if !(self.step > 0.0) {
            return Err(Error::InvalidParameter("refinement step must be positive"));
        }
        if !(self.smoothing >= 0.0) {
            return Err(Error::InvalidParameter("smoothing weight must be non-negative"));
        }
        if !(self.grazing >= 0.0 && self.grazing < 1.0) {
            return Err(Error::InvalidParameter("grazing threshold must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Image j warped into view i through the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Reprojection {
    pub width: usize,
    pub height: usize,
    /// Sampled intensity of image j (0 outside the domain).
    pub values: Vec<f64>,
    /// Ω: a surface point exists, is unoccluded in view j and lands inside
    /// view j's frame.
    pub domain: Vec<bool>,
    /// View j's moving mask carried through the mesh into view i.
    pub moving: Vec<bool>,
    hits: Vec<Option<Hit>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Hit {
    face: usize,
    position: Point3,
    barycentric: [f64; 3],
    /// Position in view j's image.
    uv: [f64; 2],
}

impl Reprojection {
    /// Λ: the domain minus both moving masks.
    pub fn masked_domain(&self, view_i: &CameraView) -> Vec<bool> {
        let m = view_i.moving_mask.bits();
        (0..self.domain.len()).map(|p| self.domain[p] && !m[p] && !self.moving[p]).collect()
    }
}

pub fn reproject(view_i: &CameraView, view_j: &CameraView, mesh: &TriangleMesh) -> Reprojection {
    let map_i = rasterize_view(mesh, view_i);
    let map_j = rasterize_view(mesh, view_j);
    reproject_with_maps(view_i, &map_i, view_j, &map_j, mesh, RefineConfig::default().visibility_tolerance)
}

fn reproject_with_maps(
    view_i: &CameraView,
    map_i: &DepthMap,
    view_j: &CameraView,
    map_j: &DepthMap,
    mesh: &TriangleMesh,
    tolerance: f64,
) -> Reprojection {
    let (w, h) = (view_i.width(), view_i.height());
    let mut out = Reprojection {
        width: w,
        height: h,
        values: vec![0.0; w * h],
        domain: vec![false; w * h],
        moving: vec![false; w * h],
        hits: vec![None; w * h],
    };
    let center = view_i.center();
    for y in 0..h {
        for x in 0..w {
            let Some(face) = map_i.face_at(x, y) else { continue };
            let dir = view_i.pixel_ray(x as f64, y as f64);
            let tri = mesh.face_points(face);
            let Some((t, barycentric)) = ray_plane_barycentric(&center, &dir, &tri) else { continue };
            let position = center + dir * t;
            let Some(uv) = view_j.project(&position) else { continue };
            let Some(value) = view_j.image.bilinear(uv.x, uv.y) else { continue };
            if !is_visible(map_j, mesh, view_j, &position, face, tolerance) {
                continue;
            }
            let p = y * w + x;
            out.values[p] = value;
            out.domain[p] = true;
            // Any masked tap would leak moving content into the value or its gradient.
            if let Some((x0, y0, _, _)) = view_j.image.bilinear_taps(uv.x, uv.y) {
                let m = &view_j.moving_mask;
                out.moving[p] = m.get(x0, y0) || m.get(x0 + 1, y0) || m.get(x0, y0 + 1) || m.get(x0 + 1, y0 + 1);
            }
            out.hits[p] = Some(Hit { face, position, barycentric, uv: [uv.x, uv.y] });
        }
    }
    out
}

/// Clipped box sums of half-width `r`.
fn box_sum(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut rows = vec![0.0; w * h];
    let mut prefix = vec![0.0; w.max(h) + 1];
    for y in 0..h {
        for x in 0..w {
            prefix[x + 1] = prefix[x] + src[y * w + x];
        }
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r + 1).min(w));
            rows[y * w + x] = prefix[hi] - prefix[lo];
        }
    }
    let mut out = vec![0.0; w * h];
    for x in 0..w {
        for y in 0..h {
            prefix[y + 1] = prefix[y] + rows[y * w + x];
        }
        for y in 0..h {
            let (lo, hi) = (y.saturating_sub(r), (y + r + 1).min(h));
            out[y * w + x] = prefix[hi] - prefix[lo];
        }
    }
    out
}

/// Dissimilarity `1 − ZNCC` summed over the domain and its derivative with
/// respect to every pixel of the second image.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotoError {
    pub energy: f64,
    /// Per-pixel `1 − ZNCC` (0 outside the domain and on flat patches).
    pub err: Vec<f64>,
    /// ∂E/∂second at each pixel.
    pub d_second: Vec<f64>,
}

/// Patches are the `(2·half+1)²` squares around each domain pixel,
/// restricted to domain pixels.
pub fn photo_error(
    first: &[f64],
    second: &[f64],
    width: usize,
    height: usize,
    domain: &[bool],
    half: usize,
) -> Result<PhotoError> {
    let n_px = width * height;
    if first.len() != n_px || second.len() != n_px {
        return Err(Error::LengthMismatch { left: first.len(), right: second.len() });
    }
    if domain.len() != n_px {
        return Err(Error::LengthMismatch { left: domain.len(), right: n_px });
    }
    let ind: Vec<f64> = domain.iter().map(|&d| if d { 1.0 } else { 0.0 }).collect();
    let a: Vec<f64> = (0..n_px).map(|p| first[p] * ind[p]).collect();
    let b: Vec<f64> = (0..n_px).map(|p| second[p] * ind[p]).collect();
    let sq = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(x, y)| x * y).collect() };
    let n = box_sum(&ind, width, height, half);
    let sa = box_sum(&a, width, height, half);
    let sb = box_sum(&b, width, height, half);
    let saa = box_sum(&sq(&a, &a), width, height, half);
    let sbb = box_sum(&sq(&b, &b), width, height, half);
    let sab = box_sum(&sq(&a, &b), width, height, half);

    let mut err = vec![0.0; n_px];
    let mut alpha = vec![0.0; n_px];
    let mut beta = vec![0.0; n_px];
    let mut gamma = vec![0.0; n_px];
    let mut energy = 0.0;
    for p in 0..n_px {
        if !domain[p] {
            continue;
        }
        let k = n[p];
        let (ma, mb) = (sa[p] / k, sb[p] / k);
        let va = saa[p] - sa[p] * ma;
        let vb = sbb[p] - sb[p] * mb;
        if !(va > FLAT_VARIANCE * k && vb > FLAT_VARIANCE * k) {
            continue;
        }
        let cov = sab[p] - sa[p] * mb;
        let (da, db) = (va.sqrt(), vb.sqrt());
        let ncc = cov / (da * db);
        err[p] = 1.0 - ncc;
        energy += err[p];
        // ∂err_p/∂b_q = α·a_q + β·b_q + γ for every q in the patch.
        alpha[p] = -1.0 / (da * db);
        beta[p] = ncc / vb;
        gamma[p] = ma / (da * db) - ncc * mb / vb;
    }
    let s_alpha = box_sum(&alpha, width, height, half);
    let s_beta = box_sum(&beta, width, height, half);
    let s_gamma = box_sum(&gamma, width, height, half);
    let d_second = (0..n_px)
        .map(|q| if domain[q] { first[q] * s_alpha[q] + second[q] * s_beta[q] + s_gamma[q] } else { 0.0 })
        .collect();
    Ok(PhotoError { energy, err, d_second })
}

/// Ordered `(i, j)` pairs: each view with its `w` nearest views by camera
/// center distance (ties broken by index).
pub fn select_pairs(views: &[CameraView], w: usize) -> Vec<(usize, usize)> {
    let centers: Vec<Point3> = views.iter().map(|v| v.center()).collect();
    let mut pairs = Vec::new();
    for i in 0..views.len() {
        let mut others: Vec<usize> = (0..views.len()).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| {
            let da = (centers[a] - centers[i]).norm_squared();
            let db = (centers[b] - centers[i]).norm_squared();
            da.total_cmp(&db).then(a.cmp(&b))
        });
        pairs.extend(others.into_iter().take(w).map(|j| (i, j)));
    }
    pairs
}

/// Energy of one view pair and, optionally, its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTerm {
    pub energy: f64,
    pub gradient: Vec<Vec3>,
    /// Σφ over contributing pixels per vertex.
    pub weight: Vec<f64>,
}

/// dE_photo/dX per vertex with the accumulated barycentric weights.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexGradient {
    pub gradient: Vec<Vec3>,
    pub weight: Vec<f64>,
}

/// Runs the independent per-pair evaluations; implementations may run them
/// concurrently but must return results in job order.
pub trait PairExecutor {
    fn run(&self, jobs: usize, job: &(dyn Fn(usize) -> PairTerm + Sync)) -> Vec<PairTerm>;
}

pub struct Sequential;

impl PairExecutor for Sequential {
    fn run(&self, jobs: usize, job: &(dyn Fn(usize) -> PairTerm + Sync)) -> Vec<PairTerm> {
        (0..jobs).map(job).collect()
    }
}

fn pair_term(
    mesh: &TriangleMesh,
    views: &[CameraView],
    maps: &[DepthMap],
    (i, j): (usize, usize),
    config: &RefineConfig,
    with_gradient: bool,
) -> Result<PairTerm> {
    let (vi, vj) = (&views[i], &views[j]);
    let rep = reproject_with_maps(vi, &maps[i], vj, &maps[j], mesh, config.visibility_tolerance);
    let lambda = rep.masked_domain(vi);
    let pe = photo_error(vi.image.data(), &rep.values, rep.width, rep.height, &lambda, config.patch_half_width)?;
    let nv = mesh.vertices().len();
    let mut term = PairTerm { energy: pe.energy, gradient: Vec::new(), weight: Vec::new() };
    if !with_gradient {
        return Ok(term);
    }
    term.gradient = vec![Vec3::zeros(); nv];
    term.weight = vec![0.0; nv];
    let center = vi.center();
    for p in 0..lambda.len() {
        let g = pe.d_second[p];
        if !lambda[p] || g == 0.0 {
            continue;
        }
        let Some(hit) = rep.hits[p] else { continue };
        let Ok(n) = mesh.face_normal(hit.face) else { continue };
        let d = (hit.position - center).normalize();
        let nd = n.dot(&d);
        if nd.abs() < config.grazing {
            continue;
        }
        let Some((_, grad)) = vj.image.bilinear_with_gradient(hit.uv[0], hit.uv[1]) else { continue };
        let Ok(jac) = vj.projection_jacobian(&hit.position) else { continue };
        let duv = jac * d;
        // Moving vertex k by δ slides the hit along d by φ_k·(n·δ)/(n·d).
        let s = g * (grad[0] * duv.x + grad[1] * duv.y) / nd;
        let face = mesh.faces()[hit.face];
        for k in 0..3 {
            term.gradient[face[k]] += n * (s * hit.barycentric[k]);
            term.weight[face[k]] += hit.barycentric[k];
        }
    }
    Ok(term)
}

fn evaluate(
    mesh: &TriangleMesh,
    views: &[CameraView],
    pairs: &[(usize, usize)],
    config: &RefineConfig,
    with_gradient: bool,
    exec: &dyn PairExecutor,
) -> Result<(f64, VertexGradient)> {
    let maps: Vec<DepthMap> = views.iter().map(|v| rasterize_view(mesh, v)).collect();
    let failure = core::sync::atomic::AtomicBool::new(false);
    let job = |k: usize| match pair_term(mesh, views, &maps, pairs[k], config, with_gradient) {
        Ok(t) => t,
        Err(_) => {
            failure.store(true, core::sync::atomic::Ordering::Relaxed);
            PairTerm { energy: 0.0, gradient: Vec::new(), weight: Vec::new() }
        }
    };
    let terms = exec.run(pairs.len(), &job);
    if failure.load(core::sync::atomic::Ordering::Relaxed) {
        return Err(Error::InvalidImage("view and reprojection sizes differ"));
    }
    let nv = mesh.vertices().len();
    let mut total = VertexGradient { gradient: vec![Vec3::zeros(); nv], weight: vec![0.0; nv] };
    let mut energy = 0.0;
    for t in &terms {
        energy += t.energy;
        for (acc, g) in total.gradient.iter_mut().zip(&t.gradient) {
            *acc += g;
        }
        for (acc, w) in total.weight.iter_mut().zip(&t.weight) {
            *acc += w;
        }
    }
    Ok((energy, total))
}

fn check_views(views: &[CameraView], pairs: &[(usize, usize)]) -> Result<()> {
    for &(i, j) in pairs {
        if i >= views.len() || j >= views.len() {
            return Err(Error::InvalidParameter("view pair index out of range"));
        }
        if views[i].width() != views[j].width() || views[i].height() != views[j].height() {
            return Err(Error::InvalidImage("paired views must share the image size"));
        }
    }
    Ok(())
}

/// E_photo summed over `pairs`.
pub fn photo_energy(mesh: &TriangleMesh, views: &[CameraView], pairs: &[(usize, usize)], config: &RefineConfig) -> Result<f64> {
    check_views(views, pairs)?;
    Ok(evaluate(mesh, views, pairs, config, false, &Sequential)?.0)
}

/// E_photo and its gradient with respect to every vertex.
pub fn photo_gradient(
    mesh: &TriangleMesh,
    views: &[CameraView],
    pairs: &[(usize, usize)],
    config: &RefineConfig,
) -> Result<(f64, VertexGradient)> {
    check_views(views, pairs)?;
    evaluate(mesh, views, pairs, config, true, &Sequential)
}

/// Δ_i = λ·(mean of the one-ring − X_i); isolated vertices stay put.
pub fn umbrella_step(mesh: &TriangleMesh, lambda: f64) -> Vec<Vec3> {
    umbrella_with_rings(mesh, &mesh.one_rings(), lambda)
}

fn umbrella_with_rings(mesh: &TriangleMesh, rings: &[Vec<usize>], lambda: f64) -> Vec<Vec3> {
    let v = mesh.vertices();
    rings
        .iter()
        .enumerate()
        .map(|(i, ring)| {
            if ring.is_empty() {
                return Vec3::zeros();
            }
            let mean = ring.iter().fold(Vec3::zeros(), |acc, &k| acc + v[k].coords) / ring.len() as f64;
            (mean - v[i].coords) * lambda
        })
        .collect()
}

/// Σ‖mean of the one-ring − X_i‖².
pub fn laplacian_energy(mesh: &TriangleMesh) -> f64 {
    umbrella_step(mesh, 1.0).iter().map(|u| u.norm_squared()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutput {
    pub mesh: TriangleMesh,
    /// E_photo at the start and after every accepted iteration.
    pub energy: Vec<f64>,
    /// E_photo + λ_s·Laplacian magnitude, aligned with `energy`.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub final_step: f64,
    /// Descent stopped early because a face degenerated.
    pub aborted: bool,
}

pub fn refine(mesh: &TriangleMesh, views: &[CameraView], config: &RefineConfig) -> Result<RefineOutput> {
    refine_with(mesh, views, config, &Sequential)
}

pub fn refine_with(
    mesh: &TriangleMesh,
    views: &[CameraView],
    config: &RefineConfig,
    exec: &dyn PairExecutor,
) -> Result<RefineOutput> {
    config.validate()?;
    if mesh.faces().is_empty() {
        return Err(Error::EmptyMesh);
    }
    let pairs = select_pairs(views, config.pairs);
    check_views(views, &pairs)?;
    let rings = mesh.one_rings();
    let objective = |m: &TriangleMesh, e: f64| {
        e + config.smoothing * umbrella_with_rings(m, &rings, 1.0).iter().map(|u| u.norm_squared()).sum::<f64>()
    };
    let mut current = mesh.clone();
    let (mut energy, mut grad) = evaluate(&current, views, &pairs, config, true, exec)?;
    let mut out = RefineOutput {
        mesh: current.clone(),
        energy: vec![energy],
        objective: vec![objective(&current, energy)],
        iterations: 0,
        final_step: config.step,
        aborted: false,
    };
    let mut step = config.step;
    'outer: for _ in 0..config.iterations {
        let direction = descent_direction(&grad);
        // Vertices no view pair observes keep their carved position.
        let mut umbrella = umbrella_with_rings(&current, &rings, config.smoothing);
        for (u, &w) in umbrella.iter_mut().zip(&grad.weight) {
            if w <= 0.0 {
                *u = Vec3::zeros();
            }
        }
        loop {
            if step < MIN_STEP {
                break 'outer;
            }
            let scale = step / config.step;
            let mut candidate = current.clone();
            for (k, p) in candidate.vertices_mut().iter_mut().enumerate() {
                *p += direction[k] * step + umbrella[k] * scale;
            }
            if (0..candidate.faces().len()).any(|f| !(candidate.face_area(f) >= MIN_FACE_AREA)) {
                out.aborted = true;
                break 'outer;
            }
            let (e, g) = evaluate(&candidate, views, &pairs, config, true, exec)?;
            let obj = objective(&candidate, e);
            if e <= energy && obj <= *out.objective.last().expect("objective trace starts non-empty") {
                current = candidate;
                energy = e;
                grad = g;
                out.energy.push(e);
                out.objective.push(obj);
                out.iterations += 1;
                break;
            }
            step *= 0.5;
        }
    }
    out.final_step = step;
    out.mesh = current;
    if out.aborted {
        out.mesh.flag_manifold();
    }
    Ok(out)
}

/// Per-vertex gradient averaged over the pixels that observe it, scaled so
/// that the 95th-percentile displacement is one unit, clamped to one unit.
fn descent_direction(grad: &VertexGradient) -> Vec<Vec3> {
    let avg: Vec<Vec3> = grad
        .gradient
        .iter()
        .zip(&grad.weight)
        .map(|(g, &w)| if w > 0.0 { -g / w.max(1.0) } else { Vec3::zeros() })
        .collect();
    let mut norms: Vec<f64> = avg.iter().map(|d| d.norm()).filter(|&n| n > 0.0).collect();
    if norms.is_empty() {
        return avg;
    }
    norms.sort_by(f64::total_cmp);
    let reference = norms[((norms.len() - 1) as f64 * 0.95).round() as usize];
    avg.into_iter()
        .map(|d| {
            let s = d / reference;
            let n = s.norm();
            if n > 1.0 { s / n } else { s }
        })
        .collect()
}
