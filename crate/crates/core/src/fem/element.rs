//! Element matrices for lowest-order Nédélec (Whitney) edge elements and
//! continuous P1 nodal elements on a single tetrahedron or triangle.
//!
//! Local edge `l` runs from local vertex `TET_EDGES[l][0]` to
//! `TET_EDGES[l][1]`; the Whitney function of edge `(a, b)` is
//! `λa ∇λb - λb ∇λa` and its curl is `2 ∇λa × ∇λb`.

use crate::error::{Error, Result};
use crate::fem::quadrature::{tet_degree4, tri_degree4};
use crate::mesh::TET_EDGES;

pub type Vec3 = [f64; 3];
pub type Mat6 = [[f64; 6]; 6];

/// Local edges of a triangle.
pub const TRI_EDGES: [[usize; 2]; 3] = [[0, 1], [0, 2], [1, 2]];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn axpy(alpha: f64, x: Vec3, y: Vec3) -> Vec3 {
    [alpha * x[0] + y[0], alpha * x[1] + y[1], alpha * x[2] + y[2]]
}

/// Affine geometry of a positively oriented tetrahedron.
#[derive(Clone, Copy, Debug)]
pub struct TetGeometry {
    pub coords: [Vec3; 4],
    pub volume: f64,
    /// Gradients of the barycentric coordinates.
    pub grads: [Vec3; 4],
}

impl TetGeometry {
    /// `id` is only used to label a degenerate-element error.
    pub fn new(coords: [Vec3; 4], id: usize) -> Result<Self> {
        let e1 = sub(coords[1], coords[0]);
        let e2 = sub(coords[2], coords[0]);
        let e3 = sub(coords[3], coords[0]);
        let det = dot(e1, cross(e2, e3));
        let volume = det / 6.0;
        let scale = [e1, e2, e3]
            .iter()
            .map(|e| dot(*e, *e).sqrt())
            .fold(0.0, f64::max);
        if !(volume > 1e-12 * scale.powi(3)) {
            return Err(Error::DegenerateElement {
                element: id,
                volume,
            });
        }
        // rows of the inverse Jacobian
        let g1 = cross(e2, e3).map(|c| c / det);
        let g2 = cross(e3, e1).map(|c| c / det);
        let g3 = cross(e1, e2).map(|c| c / det);
        let g0 = [
            -g1[0] - g2[0] - g3[0],
            -g1[1] - g2[1] - g3[1],
            -g1[2] - g2[2] - g3[2],
        ];
        Ok(Self {
            coords,
            volume,
            grads: [g0, g1, g2, g3],
        })
    }

    pub fn point(&self, bary: [f64; 4]) -> Vec3 {
        let mut p = [0.0; 3];
        for (l, c) in bary.iter().zip(&self.coords) {
            p = axpy(*l, *c, p);
        }
        p
    }

    /// Whitney functions of the six local edges at a barycentric point.
    pub fn whitney(&self, bary: [f64; 4]) -> [Vec3; 6] {
        TET_EDGES.map(|[a, b]| axpy(-bary[b], self.grads[a], self.grads[b].map(|x| bary[a] * x)))
    }

    /// Constant curls of the six local Whitney functions.
    pub fn curls(&self) -> [Vec3; 6] {
        TET_EDGES.map(|[a, b]| cross(self.grads[a], self.grads[b]).map(|x| 2.0 * x))
    }
}

/// ∫ μ⁻¹ curl Ni · curl Nj over the element.
pub fn local_curl_curl(geom: &TetGeometry, mu: f64) -> Mat6 {
    let c = geom.curls();
    let mut k = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            k[i][j] = geom.volume / mu * dot(c[i], c[j]);
        }
    }
    k
}

/// ∫ w Ni · Nj with `w` linear, given by its four vertex values.
pub fn local_edge_mass(geom: &TetGeometry, weight: [f64; 4]) -> Mat6 {
    let mut m = [[0.0; 6]; 6];
    if weight.iter().all(|&w| w == 0.0) {
        return m;
    }
    for (bary, qw) in tet_degree4() {
        let w: f64 = (0..4).map(|i| weight[i] * bary[i]).sum::<f64>() * qw * geom.volume;
        let n = geom.whitney(*bary);
        for i in 0..6 {
            for j in i..6 {
                m[i][j] += w * dot(n[i], n[j]);
            }
        }
    }
    for i in 0..6 {
        for j in 0..i {
            m[i][j] = m[j][i];
        }
    }
    m
}

/// ∫ ε Ni · ∇λp: rows are local edges, columns local vertices.
pub fn local_grad_coupling(geom: &TetGeometry, eps: f64) -> [[f64; 4]; 6] {
    let mut b = [[0.0; 4]; 6];
    for (bary, qw) in tet_degree4() {
        let n = geom.whitney(*bary);
        for i in 0..6 {
            for p in 0..4 {
                b[i][p] += eps * qw * geom.volume * dot(n[i], geom.grads[p]);
            }
        }
    }
    b
}

/// Coefficients of ∇λp in the local Whitney basis: `G[l][p] = +1` if `p` is
/// the head of edge `l`, `-1` if it is the tail.
pub fn local_incidence() -> [[f64; 4]; 6] {
    let mut g = [[0.0; 4]; 6];
    for (l, [a, b]) in TET_EDGES.iter().enumerate() {
        g[l][*a] = -1.0;
        g[l][*b] = 1.0;
    }
    g
}

/// P1 stiffness and mass, both scaled by `coeff`.
pub fn local_p1(geom: &TetGeometry, coeff: f64) -> ([[f64; 4]; 4], [[f64; 4]; 4]) {
    let mut k = [[0.0; 4]; 4];
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            k[i][j] = coeff * geom.volume * dot(geom.grads[i], geom.grads[j]);
            m[i][j] = coeff * geom.volume / 20.0 * if i == j { 2.0 } else { 1.0 };
        }
    }
    (k, m)
}

/// ∫ (tangential trace Ni)·(tangential trace Nj) over a triangle, for the
/// local edges [`TRI_EDGES`]. This is the 2D Whitney mass of the triangle.
pub fn face_tangential_mass(tri: [Vec3; 3]) -> Result<[[f64; 3]; 3]> {
    let t1 = sub(tri[1], tri[0]);
    let t2 = sub(tri[2], tri[0]);
    let n = cross(t1, t2);
    let area = 0.5 * dot(n, n).sqrt();
    let scale = dot(t1, t1).max(dot(t2, t2));
    if !(area > 1e-12 * scale) {
        return Err(Error::DegenerateElement {
            element: usize::MAX,
            volume: area,
        });
    }
    // surface gradients from the inverse metric
    let (g11, g12, g22) = (dot(t1, t1), dot(t1, t2), dot(t2, t2));
    let det = g11 * g22 - g12 * g12;
    let grad1 = axpy(g22 / det, t1, t2.map(|x| -g12 / det * x));
    let grad2 = axpy(-g12 / det, t1, t2.map(|x| g11 / det * x));
    let grad0 = [
        -grad1[0] - grad2[0],
        -grad1[1] - grad2[1],
        -grad1[2] - grad2[2],
    ];
    let grads = [grad0, grad1, grad2];
    let mut m = [[0.0; 3]; 3];
    for (bary, qw) in tri_degree4() {
        let n: Vec<Vec3> = TRI_EDGES
            .iter()
            .map(|&[a, b]| axpy(-bary[b], grads[a], grads[b].map(|x| bary[a] * x)))
            .collect();
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += qw * area * dot(n[i], n[j]);
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Independent integration routes: collapsed tensor Gauss–Legendre
    //! quadrature and barycentric coordinates from sub-volume ratios.

    use super::*;
    use crate::mesh::barycentric;

    /// Gauss–Legendre nodes and weights on [0, 1] by Newton iteration.
    pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            out.push(((1.0 - x) / 2.0, 1.0 / ((1.0 - x * x) * dp * dp)));
        }
        out
    }

    /// Integrates `f(x)` over a tetrahedron with a Duffy-collapsed rule.
    pub fn integrate_tet(tet: [Vec3; 4], n: usize, f: impl Fn(Vec3) -> f64) -> f64 {
        let gl = gauss_legendre(n);
        let e = [sub(tet[1], tet[0]), sub(tet[2], tet[0]), sub(tet[3], tet[0])];
        let jac = dot(e[0], cross(e[1], e[2])).abs();
        let mut sum = 0.0;
        for &(u, wu) in &gl {
            for &(v, wv) in &gl {
                for &(w, ww) in &gl {
                    // (u, v, w) in the unit cube -> reference tet
                    let a = u;
                    let b = v * (1.0 - u);
                    let c = w * (1.0 - u) * (1.0 - v);
                    let jw = (1.0 - u).powi(2) * (1.0 - v);
                    let p = axpy(c, e[2], axpy(b, e[1], axpy(a, e[0], tet[0])));
                    sum += wu * wv * ww * jw * f(p);
                }
            }
        }
        sum * jac
    }

    pub fn integrate_tri(tri: [Vec3; 3], n: usize, f: impl Fn(Vec3) -> f64) -> f64 {
        let gl = gauss_legendre(n);
        let e = [sub(tri[1], tri[0]), sub(tri[2], tri[0])];
        let c = cross(e[0], e[1]);
        let jac = dot(c, c).sqrt();
        let mut sum = 0.0;
        for &(u, wu) in &gl {
            for &(v, wv) in &gl {
                let a = u;
                let b = v * (1.0 - u);
                let p = axpy(b, e[1], axpy(a, e[0], tri[0]));
                sum += wu * wv * (1.0 - u) * f(p);
            }
        }
        sum * jac
    }

    /// Barycentric gradients from outward face normals: ∇λi = -nᵢ|Fᵢ| / (3V).
    pub fn bary_grads(tet: [Vec3; 4]) -> [Vec3; 4] {
        let vol = dot(sub(tet[1], tet[0]), cross(sub(tet[2], tet[0]), sub(tet[3], tet[0]))) / 6.0;
        let mut g = [[0.0; 3]; 4];
        for i in 0..4 {
            let f: Vec<usize> = (0..4).filter(|&k| k != i).collect();
            let mut n = cross(sub(tet[f[1]], tet[f[0]]), sub(tet[f[2]], tet[f[0]]));
            // orient away from vertex i
            if dot(n, sub(tet[i], tet[f[0]])) > 0.0 {
                n = n.map(|x| -x);
            }
            g[i] = n.map(|x| -x / 2.0 / (3.0 * vol));
        }
        g
    }

    pub fn whitney_at(tet: [Vec3; 4], l: usize, p: Vec3) -> Vec3 {
        let lam = barycentric(&tet, p);
        let g = bary_grads(tet);
        let [a, b] = TET_EDGES[l];
        axpy(-lam[b], g[a], g[b].map(|x| lam[a] * x))
    }

    pub fn curl_at(tet: [Vec3; 4], l: usize) -> Vec3 {
        // curl by central differences of the (linear) Whitney field
        let h = 1e-3;
        let c = tet[0];
        let d = |i: usize, j: usize| {
            let mut pp = c;
            let mut pm = c;
            pp[j] += h;
            pm[j] -= h;
            (whitney_at(tet, l, pp)[i] - whitney_at(tet, l, pm)[i]) / (2.0 * h)
        };
        [d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)]
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use crate::mesh::barycentric;
    use proptest::prelude::*;

    const REF: [Vec3; 4] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    const SKEW: [Vec3; 4] = [
        [0.1, -0.2, 0.05],
        [1.3, 0.1, -0.1],
        [0.2, 0.9, 0.3],
        [0.4, 0.3, 1.1],
    ];

    fn geom(c: [Vec3; 4]) -> TetGeometry {
        TetGeometry::new(c, 0).unwrap()
    }

    fn rel_close(a: f64, b: f64, scale: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * scale
    }

    fn max_abs<const N: usize, const M: usize>(m: &[[f64; M]; N]) -> f64 {
        m.iter().flatten().fold(0.0, |a, &b| a.max(b.abs()))
    }

    #[test]
    fn degenerate_tet_rejected() {
        let flat = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        assert!(matches!(
            TetGeometry::new(flat, 7),
            Err(Error::DegenerateElement { element: 7, .. })
        ));
        let mut neg = REF;
        neg.swap(1, 2);
        assert!(TetGeometry::new(neg, 1).is_err());
    }

    #[test]
    fn curls_match_finite_differences() {
        let g = geom(SKEW);
        let c = g.curls();
        for l in 0..6 {
            let fd = curl_at(SKEW, l);
            for k in 0..3 {
                assert!((c[l][k] - fd[k]).abs() < 1e-9, "{l} {k}");
            }
        }
    }

    #[test]
    fn whitney_values_match_oracle() {
        let g = geom(SKEW);
        let p = [0.4, 0.25, 0.35];
        let lam = barycentric(&SKEW, p);
        let n = g.whitney(lam);
        for l in 0..6 {
            let o = whitney_at(SKEW, l, p);
            for k in 0..3 {
                assert!((n[l][k] - o[k]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn curl_curl_matches_quadrature_oracle() {
        for tet in [REF, SKEW] {
            let k = local_curl_curl(&geom(tet), 1.0);
            let scale = max_abs(&k);
            for i in 0..6 {
                for j in 0..6 {
                    let o = integrate_tet(tet, 4, |_| dot(curl_at(tet, i), curl_at(tet, j)));
                    // the FD curl oracle is exact for linear fields up to rounding
                    assert!(rel_close(k[i][j], o, scale, 1e-9), "{i}{j} {} {o}", k[i][j]);
                }
            }
        }
    }

    #[test]
    fn curl_curl_rank_at_most_three() {
        let k = local_curl_curl(&geom(SKEW), 2.0);
        // Gram matrix of six vectors in R^3: every 4x4 principal minor vanishes
        let det4 = |idx: [usize; 4]| {
            let m: Vec<Vec<f64>> = idx.iter().map(|&i| idx.iter().map(|&j| k[i][j]).collect()).collect();
            det(m)
        };
        let scale = max_abs(&k).powi(4);
        assert!(det4([0, 1, 2, 3]).abs() < 1e-12 * scale);
        assert!(det4([0, 2, 4, 5]).abs() < 1e-12 * scale);
    }

    fn det(mut m: Vec<Vec<f64>>) -> f64 {
        let n = m.len();
        let mut d = 1.0;
        for c in 0..n {
            let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
            if m[p][c] == 0.0 {
                return 0.0;
            }
            if p != c {
                m.swap(p, c);
                d = -d;
            }
            d *= m[c][c];
            for r in c + 1..n {
                let f = m[r][c] / m[c][c];
                for k in c..n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
        d
    }

    #[test]
    fn curl_curl_scales_inversely_with_size() {
        // curls scale as s^-2, the volume as s^3
        let s = 2.5;
        let scaled = SKEW.map(|p| p.map(|x| s * x));
        let a = local_curl_curl(&geom(SKEW), 1.0);
        let b = local_curl_curl(&geom(scaled), 1.0);
        for i in 0..6 {
            for j in 0..6 {
                assert!((b[i][j] - a[i][j] / s).abs() < 1e-12 * max_abs(&a));
            }
        }
    }

    #[test]
    fn edge_mass_matches_quadrature_oracle() {
        for (tet, w) in [
            (REF, [1.0; 4]),
            (REF, [0.0, 1.0, 0.0, 0.0]),
            (SKEW, [0.5, 2.0, 1.5, 0.1]),
        ] {
            let m = local_edge_mass(&geom(tet), w);
            let scale = max_abs(&m);
            for i in 0..6 {
                for j in 0..6 {
                    let o = integrate_tet(tet, 5, |p| {
                        let lam = barycentric(&tet, p);
                        let wp: f64 = (0..4).map(|k| w[k] * lam[k]).sum();
                        wp * dot(whitney_at(tet, i, p), whitney_at(tet, j, p))
                    });
                    assert!(rel_close(m[i][j], o, scale, 1e-12), "{i}{j}: {} vs {o}", m[i][j]);
                }
            }
        }
    }

    #[test]
    fn edge_mass_zero_weight() {
        assert_eq!(local_edge_mass(&geom(SKEW), [0.0; 4]), [[0.0; 6]; 6]);
    }

    #[test]
    fn edge_mass_psd_for_hat_weight() {
        let m = local_edge_mass(&geom(REF), [0.0, 1.0, 0.0, 0.0]);
        let mut rng_state = 12345u64;
        for _ in 0..200 {
            let x: Vec<f64> = (0..6)
                .map(|_| {
                    rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            let q: f64 = (0..6).flat_map(|i| (0..6).map(move |j| (i, j))).map(|(i, j)| x[i] * m[i][j] * x[j]).sum();
            assert!(q >= -1e-15);
        }
    }

    #[test]
    fn grad_coupling_is_mass_times_incidence() {
        let g = geom(SKEW);
        let b = local_grad_coupling(&g, 1.7);
        let m = local_edge_mass(&g, [1.7; 4]);
        let inc = local_incidence();
        for i in 0..6 {
            for p in 0..4 {
                let mg: f64 = (0..6).map(|k| m[i][k] * inc[k][p]).sum();
                assert!((b[i][p] - mg).abs() < 1e-13 * max_abs(&m));
            }
        }
        assert_eq!(local_grad_coupling(&g, 0.0), [[0.0; 4]; 6]);
    }

    #[test]
    fn grad_coupling_matches_quadrature_oracle() {
        let b = local_grad_coupling(&geom(REF), 1.0);
        let gr = bary_grads(REF);
        for i in 0..6 {
            for p in 0..4 {
                let o = integrate_tet(REF, 4, |x| dot(whitney_at(REF, i, x), gr[p]));
                assert!((b[i][p] - o).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn p1_reference_values() {
        let g = geom(REF);
        let (k, m) = local_p1(&g, 1.0);
        let v = 1.0 / 6.0;
        for i in 0..4 {
            assert!((k[i].iter().sum::<f64>()).abs() < 1e-15);
            for j in 0..4 {
                let expect = if i == j { v / 10.0 } else { v / 20.0 };
                assert!((m[i][j] - expect).abs() < 1e-16);
                let ko = integrate_tet(REF, 2, |_| dot(bary_grads(REF)[i], bary_grads(REF)[j]));
                assert!((k[i][j] - ko).abs() < 1e-14);
                let mo = integrate_tet(REF, 3, |p| {
                    let l = barycentric(&REF, p);
                    l[i] * l[j]
                });
                assert!((m[i][j] - mo).abs() < 1e-15);
            }
        }
    }

    const TRI: [Vec3; 3] = [[0.0, 0.0, 0.2], [1.0, 0.0, 0.2], [0.0, 1.0, 0.2]];

    fn tri_whitney(tri: [Vec3; 3], l: usize, p: Vec3) -> Vec3 {
        // embed as a tet with an apex above the face; the tangential part of
        // the tet Whitney function on the face is the 2D Whitney function
        let n = cross(sub(tri[1], tri[0]), sub(tri[2], tri[0]));
        let apex = axpy(1.0, n, tri[0]);
        let tet = [tri[0], tri[1], tri[2], apex];
        let le = TET_EDGES.iter().position(|e| *e == TRI_EDGES[l]).unwrap();
        let w = whitney_at(tet, le, p);
        let nn = dot(n, n);
        axpy(-dot(w, n) / nn, n, w)
    }

    #[test]
    fn face_mass_matches_oracle() {
        let skew_tri = [[0.3, -0.1, 0.2], [1.1, 0.4, 0.5], [-0.2, 0.9, 0.1]];
        for tri in [TRI, skew_tri] {
            let m = face_tangential_mass(tri).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let o = integrate_tri(tri, 4, |p| dot(tri_whitney(tri, i, p), tri_whitney(tri, j, p)));
                    assert!((m[i][j] - o).abs() < 1e-12, "{i}{j}: {} vs {o}", m[i][j]);
                }
            }
        }
    }

    #[test]
    fn face_mass_scale_invariant() {
        let m1 = face_tangential_mass(TRI).unwrap();
        let m2 = face_tangential_mass(TRI.map(|p| p.map(|x| 3.0 * x))).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((m1[i][j] - m2[i][j]).abs() < 1e-13);
            }
        }
    }

    proptest! {
        #[test]
        fn face_mass_spd(
            pts in proptest::array::uniform9(-1.0f64..1.0)
        ) {
            let tri = [[pts[0], pts[1], pts[2]], [pts[3], pts[4], pts[5]], [pts[6], pts[7], pts[8]]];
            let n = cross(sub(tri[1], tri[0]), sub(tri[2], tri[0]));
            prop_assume!(dot(n, n).sqrt() > 0.05);
            let m = face_tangential_mass(tri).unwrap();
            // Sylvester: leading principal minors positive
            let d1 = m[0][0];
            let d2 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let d3 = det(m.iter().map(|r| r.to_vec()).collect());
            prop_assert!(d1 > 0.0 && d2 > 0.0 && d3 > 0.0);
            for i in 0..3 { for j in 0..3 { prop_assert!((m[i][j] - m[j][i]).abs() < 1e-14); } }
        }

        #[test]
        fn edge_mass_spd_for_positive_weight(w in proptest::array::uniform4(0.1f64..3.0)) {
            let m = local_edge_mass(&geom(SKEW), w);
            let x = [0.3, -1.0, 0.2, 0.7, -0.4, 0.9];
            let q: f64 = (0..6).flat_map(|i| (0..6).map(move |j| (i, j))).map(|(i, j)| x[i] * m[i][j] * x[j]).sum();
            prop_assert!(q > 0.0);
        }
    }
}
