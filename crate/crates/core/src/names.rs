//! Canonical variable names shared by every module.
//!
//! All indices are 0-based in code and 1-based in the printed names, so the
//! first base coordinate is `x1`, the jet coordinate of fibre direction 0
//! along frame direction 0 is `y1_1`, and so on. Formal derivative symbols
//! follow the convention that the differentiation direction is the LAST
//! index: `yd2_1_3` is the total derivative of `y2_1` in frame direction 3,
//! `ud1_2` is the partial of `u1` along `x2`, `mud1_2_1` the partial of
//! `mu1_2` along `x1`.

/// Base coordinate `x{i+1}`.
pub fn x(i: usize) -> String {
    format!("x{}", i + 1)
}

/// Fibre coordinate `u{a+1}`.
pub fn u(a: usize) -> String {
    format!("u{}", a + 1)
}

/// Jet coordinate `y{alpha+1}_{a+1}`.
pub fn y(alpha: usize, a: usize) -> String {
    format!("y{}_{}", alpha + 1, a + 1)
}

/// Formal second jet `yd{alpha+1}_{a+1}_{b+1}`: total derivative of
/// `y(alpha, a)` in frame direction `b`.
pub fn yd(alpha: usize, a: usize, b: usize) -> String {
    format!("yd{}_{}_{}", alpha + 1, a + 1, b + 1)
}

/// Momentum coordinate `mu{alpha+1}_{a+1}` (paper index order `mu^a_alpha`).
pub fn mu(alpha: usize, a: usize) -> String {
    format!("mu{}_{}", alpha + 1, a + 1)
}

/// Affine dual coordinate.
pub const MU0: &str = "mu0";

/// Formal field derivative `ud{a+1}_{i+1}`: partial of `u{a+1}` along `x{i+1}`.
pub fn ud(a: usize, i: usize) -> String {
    format!("ud{}_{}", a + 1, i + 1)
}

/// Formal momentum derivative `mud{alpha+1}_{a+1}_{i+1}`: partial of
/// `mu{alpha+1}_{a+1}` along `x{i+1}`.
pub fn mud(alpha: usize, a: usize, i: usize) -> String {
    format!("mud{}_{}_{}", alpha + 1, a + 1, i + 1)
}
