//! Two-parameter minimizers used by the GPD fits: a damped Newton method
//! with backtracking and a Nelder–Mead simplex.

pub(crate) type Vec2 = [f64; 2];
pub(crate) type Mat2 = [[f64; 2]; 2];

pub(crate) const MAX_ITER: usize = 500;

pub(crate) trait Objective {
    /// Objective value; `+∞` for infeasible points.
    fn value(&self, x: Vec2) -> f64;

    /// Gradient, `None` when infeasible.
    fn gradient(&self, x: Vec2) -> Option<Vec2>;

    /// Hessian; defaults to central differences of the gradient.
    fn hessian(&self, x: Vec2) -> Option<Mat2> {
        let mut h = [[0.0; 2]; 2];
        for j in 0..2 {
            let step = 1e-5 * (1.0 + x[j].abs());
            let mut up = x;
            let mut dn = x;
            up[j] += step;
            dn[j] -= step;
            let gu = self.gradient(up)?;
            let gd = self.gradient(dn)?;
            for i in 0..2 {
                h[i][j] = (gu[i] - gd[i]) / (2.0 * step);
            }
        }
        let off = 0.5 * (h[0][1] + h[1][0]);
        h[0][1] = off;
        h[1][0] = off;
        Some(h)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Outcome {
    pub x: Vec2,
    pub value: f64,
    pub gradient: Vec2,
    pub iterations: usize,
    pub converged: bool,
}

#[inline]
fn inf_norm(v: Vec2) -> f64 {
    v[0].abs().max(v[1].abs())
}

/// Gradient tolerance relative to the objective scale.
#[inline]
pub(crate) fn gradient_tolerance(value: f64) -> f64 {
    1e-6 * (1.0 + value.abs())
}

/// Solves `(H + λI) d = -g`, raising `λ` until the shifted matrix is
/// positive definite.
fn damped_direction(h: Mat2, g: Vec2) -> Option<Vec2> {
    let scale = h[0][0].abs().max(h[1][1].abs()).max(1e-12);
    let mut lambda = 0.0;
    for _ in 0..60 {
        let a = h[0][0] + lambda;
        let d = h[1][1] + lambda;
        let b = h[0][1];
        let det = a * d - b * b;
        if a > 0.0 && det > 0.0 && det.is_finite() {
            return Some([-(d * g[0] - b * g[1]) / det, -(a * g[1] - b * g[0]) / det]);
        }
        lambda = if lambda == 0.0 { 1e-6 * scale } else { lambda * 10.0 };
    }
    None
}

pub(crate) fn newton<O: Objective>(obj: &O, start: Vec2) -> Outcome {
    let mut x = start;
    let mut f = obj.value(x);
    let mut g = match obj.gradient(x) {
        Some(g) if f.is_finite() => g,
        _ => return Outcome { x, value: f, gradient: [f64::NAN; 2], iterations: 0, converged: false },
    };
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        if inf_norm(g) <= 1e-11 * (1.0 + f.abs()) {
            break;
        }
        let h = match obj.hessian(x) {
            Some(h) => h,
            None => break,
        };
        let mut dir = match damped_direction(h, g) {
            Some(d) => d,
            None => [-g[0], -g[1]],
        };
        let mut slope = dir[0] * g[0] + dir[1] * g[1];
        if !(slope < 0.0) {
            dir = [-g[0], -g[1]];
            slope = -(g[0] * g[0] + g[1] * g[1]);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = [x[0] + t * dir[0], x[1] + t * dir[1]];
            let fc = obj.value(cand);
            if fc.is_finite() && fc <= f + 1e-4 * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        let dx = inf_norm([cand[0] - x[0], cand[1] - x[1]]);
        let df = f - fc;
        x = cand;
        f = fc;
        g = match obj.gradient(x) {
            Some(g) => g,
            None => break,
        };
        if dx < 1e-12 && df <= 1e-14 * (1.0 + f.abs()) {
            break;
        }
    }
    let converged = f.is_finite() && inf_norm(g) <= gradient_tolerance(f);
    Outcome { x, value: f, gradient: g, iterations, converged }
}

/// Nelder–Mead in two dimensions with standard coefficients. Terminates on
/// objective spread below 1e-10 and simplex diameter below 1e-8, or after
/// [`MAX_ITER`] iterations.
pub(crate) fn nelder_mead<O: Objective>(obj: &O, start: Vec2, step: Vec2) -> Outcome {
    let mut pts = [start, [start[0] + step[0], start[1]], [start[0], start[1] + step[1]]];
    let mut vals = pts.map(|p| obj.value(p));
    let mut iterations = 0;
    let mut done = false;
    while iterations < MAX_ITER {
        iterations += 1;
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.map(|i| pts[i]);
        vals = order.map(|i| vals[i]);
        let spread = vals[2] - vals[0];
        let diam = (1..3).map(|i| inf_norm([pts[i][0] - pts[0][0], pts[i][1] - pts[0][1]])).fold(0.0, f64::max);
        if vals[0].is_finite() && spread.abs() < 1e-10 && diam < 1e-8 {
            done = true;
            break;
        }
        let centroid = [(pts[0][0] + pts[1][0]) / 2.0, (pts[0][1] + pts[1][1]) / 2.0];
        let along = |c: f64| [centroid[0] + c * (pts[2][0] - centroid[0]), centroid[1] + c * (pts[2][1] - centroid[1])];
        let refl = along(-1.0);
        let fr = obj.value(refl);
        if fr < vals[0] {
            let exp = along(-2.0);
            let fe = obj.value(exp);
            if fe < fr {
                pts[2] = exp;
                vals[2] = fe;
            } else {
                pts[2] = refl;
                vals[2] = fr;
            }
            continue;
        }
        if fr < vals[1] {
            pts[2] = refl;
            vals[2] = fr;
            continue;
        }
        let (contr, fc) = if fr < vals[2] {
            let c = along(-0.5);
            (c, obj.value(c))
        } else {
            let c = along(0.5);
            (c, obj.value(c))
        };
        if fc < vals[2].min(fr) {
            pts[2] = contr;
            vals[2] = fc;
            continue;
        }
        for i in 1..3 {
            pts[i] = [(pts[i][0] + pts[0][0]) / 2.0, (pts[i][1] + pts[0][1]) / 2.0];
            vals[i] = obj.value(pts[i]);
        }
    }
    let best = (0..3).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    let x = pts[best];
    Outcome { x, value: vals[best], gradient: obj.gradient(x).unwrap_or([f64::NAN; 2]), iterations, converged: done }
}

/// Inverse of a symmetric positive definite 2×2 matrix.
pub(crate) fn invert_spd(m: Mat2) -> Option<Mat2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(m[0][0] > 0.0 && det > 0.0 && det.is_finite()) {
        return None;
    }
    Some([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}
