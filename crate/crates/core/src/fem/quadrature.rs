//! Quadrature rules on the reference simplices, in barycentric coordinates.
//! Weights are normalized to sum to one; multiply by the measure.

/// Degree-4 rule on the tetrahedron (Keast, 11 points; one negative weight).
pub fn tet_degree4() -> &'static [([f64; 4], f64)] {
    use std::sync::OnceLock;
    static RULE: OnceLock<Vec<([f64; 4], f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let mut pts = vec![([0.25; 4], -148.0 / 1875.0)];
        let (a, b) = (1.0 / 14.0, 11.0 / 14.0);
        for i in 0..4 {
            let mut p = [a; 4];
            p[i] = b;
            pts.push((p, 343.0 / 7500.0));
        }
        let s = (5.0f64 / 14.0).sqrt();
        let (c, d) = ((1.0 + s) / 4.0, (1.0 - s) / 4.0);
        for (i, j) in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] {
            let mut p = [d; 4];
            p[i] = c;
            p[j] = c;
            pts.push((p, 56.0 / 375.0));
        }
        pts
    })
}

/// Degree-4 rule on the triangle (Dunavant, 6 points).
pub fn tri_degree4() -> &'static [([f64; 3], f64)] {
    const A: f64 = 0.445_948_490_915_965;
    const B: f64 = 0.091_576_213_509_771;
    const WA: f64 = 0.223_381_589_678_011;
    const WB: f64 = 0.109_951_743_655_322;
    &[
        ([A, A, 1.0 - 2.0 * A], WA),
        ([A, 1.0 - 2.0 * A, A], WA),
        ([1.0 - 2.0 * A, A, A], WA),
        ([B, B, 1.0 - 2.0 * B], WB),
        ([B, 1.0 - 2.0 * B, B], WB),
        ([1.0 - 2.0 * B, B, B], WB),
    ]
}
