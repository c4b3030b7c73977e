//! Pair-type encodings and the 4x4 distortion/correction matrices.
//!
//! Component order everywhere is (1,1), (1,0), (0,1), (0,0).

use crate::error::{Error, Result};

pub type Mat4 = [[f64; 4]; 4];

pub const IDENTITY4: Mat4 = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

/// One-hot encoding of the type of an item pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairEncoding(pub [u8; 4]);

impl PairEncoding {
    /// Position of the hot component.
    pub fn index(self) -> usize {
        self.0.iter().position(|&v| v == 1).expect("one-hot")
    }

    pub fn to_f64(self) -> [f64; 4] {
        self.0.map(f64::from)
    }
}

pub fn pair_encoding(b1: bool, b2: bool) -> PairEncoding {
    let (b1, b2) = (u8::from(b1), u8::from(b2));
    PairEncoding([b1 * b2, b1 * (1 - b2), (1 - b1) * b2, (1 - b1) * (1 - b2)])
}

/// Maps the relevance-pair encoding to the click-pair encoding for the
/// given examination outcome.
pub fn b_matrix(e1: bool, e2: bool) -> [[u8; 4]; 4] {
    let (e1, e2) = (u8::from(e1), u8::from(e2));
    [
        [e1 * e2, 0, 0, 0],
        [e1 * (1 - e2), e1, 0, 0],
        [(1 - e1) * e2, 0, e2, 0],
        [(1 - e1) * (1 - e2), 1 - e1, 1 - e2, 1],
    ]
}

pub fn apply_binary(m: &[[u8; 4]; 4], s: PairEncoding) -> PairEncoding {
    let mut out = [0u8; 4];
    for (row, o) in m.iter().zip(out.iter_mut()) {
        *o = row.iter().zip(s.0.iter()).map(|(a, b)| a * b).sum();
    }
    PairEncoding(out)
}

pub fn matmul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn check_probabilities(p_i: f64, p_j: f64, p_ij: f64) -> Result<()> {
    for (name, p) in [("p_i", p_i), ("p_j", p_j), ("p_ij", p_ij)] {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Domain(format!("{name} = {p} is not in (0, 1]")));
        }
    }
    // Allow for rounding in tables produced by products of probabilities.
    let bound = p_i.min(p_j);
    if p_ij > bound * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "joint probability {p_ij} exceeds min marginal {bound}"
        )));
    }
    Ok(())
}

/// Conditional expectation of [`b_matrix`] given the examination probabilities.
pub fn expected_b(p_i: f64, p_j: f64, p_ij: f64) -> Result<Mat4> {
    check_probabilities(p_i, p_j, p_ij)?;
    Ok([
        [p_ij, 0.0, 0.0, 0.0],
        [p_i - p_ij, p_i, 0.0, 0.0],
        [p_j - p_ij, 0.0, p_j, 0.0],
        [1.0 - p_i - p_j + p_ij, 1.0 - p_i, 1.0 - p_j, 1.0],
    ])
}

/// Inverse of [`expected_b`], assembled directly from inverse propensities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCorrectionMatrix {
    pub a_i: f64,
    pub a_j: f64,
    pub a_ij: f64,
}

impl PairCorrectionMatrix {
    pub fn matrix(&self) -> Mat4 {
        let Self { a_i, a_j, a_ij } = *self;
        [
            [a_ij, 0.0, 0.0, 0.0],
            [a_i - a_ij, a_i, 0.0, 0.0],
            [a_j - a_ij, 0.0, a_j, 0.0],
            [1.0 - a_i - a_j + a_ij, 1.0 - a_i, 1.0 - a_j, 1.0],
        ]
    }

    /// `A * s` for a one-hot `s`, i.e. the selected column.
    pub fn apply(&self, s: PairEncoding) -> [f64; 4] {
        let Self { a_i, a_j, a_ij } = *self;
        match s.index() {
            0 => [a_ij, a_i - a_ij, a_j - a_ij, 1.0 - a_i - a_j + a_ij],
            1 => [0.0, a_i, 0.0, 1.0 - a_i],
            2 => [0.0, 0.0, a_j, 1.0 - a_j],
            _ => [0.0, 0.0, 0.0, 1.0],
        }
    }
}

pub fn correction_matrix(p_i: f64, p_j: f64, p_ij: f64) -> Result<PairCorrectionMatrix> {
    check_probabilities(p_i, p_j, p_ij)?;
    Ok(PairCorrectionMatrix {
        a_i: 1.0 / p_i,
        a_j: 1.0 / p_j,
        a_ij: 1.0 / p_ij,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix4;
    use proptest::prelude::*;

    fn to_na(m: &Mat4) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| m[i][j])
    }

    #[test]
    fn encodings() {
        assert_eq!(pair_encoding(true, true).0, [1, 0, 0, 0]);
        assert_eq!(pair_encoding(true, false).0, [0, 1, 0, 0]);
        assert_eq!(pair_encoding(false, true).0, [0, 0, 1, 0]);
        assert_eq!(pair_encoding(false, false).0, [0, 0, 0, 1]);
    }

    #[test]
    fn b_examples() {
        let s11 = pair_encoding(true, true);
        assert_eq!(apply_binary(&b_matrix(true, false), s11), pair_encoding(true, false));
        assert_eq!(b_matrix(true, true), [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]);
        for r1 in [false, true] {
            for r2 in [false, true] {
                assert_eq!(
                    apply_binary(&b_matrix(false, false), pair_encoding(r1, r2)),
                    pair_encoding(false, false)
                );
            }
        }
    }

    #[test]
    fn factorization_all_sixteen_cases() {
        for bits in 0u8..16 {
            let [e1, e2, r1, r2] = [0, 1, 2, 3].map(|k| bits >> k & 1 == 1);
            assert_eq!(
                pair_encoding(e1 && r1, e2 && r2),
                apply_binary(&b_matrix(e1, e2), pair_encoding(r1, r2))
            );
        }
    }

    #[test]
    fn expected_b_hand_values() {
        let m = expected_b(0.5, 1.0 / 3.0, 1.0 / 3.0).unwrap();
        let want = [
            [1.0 / 3.0, 0.0, 0.0, 0.0],
            [1.0 / 6.0, 0.5, 0.0, 0.0],
            [0.0, 0.0, 1.0 / 3.0, 0.0],
            [0.5, 0.5, 2.0 / 3.0, 1.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(m[i][j], want[i][j], epsilon = 1e-15);
            }
        }
        assert_eq!(expected_b(1.0, 1.0, 1.0).unwrap(), IDENTITY4);
    }

    #[test]
    fn correction_hand_values_and_inverse_oracle() {
        let a = correction_matrix(0.5, 1.0 / 3.0, 1.0 / 3.0).unwrap().matrix();
        let want = [
            [3.0, 0.0, 0.0, 0.0],
            [-1.0, 2.0, 0.0, 0.0],
            [0.0, 0.0, 3.0, 0.0],
            [-1.0, -1.0, -2.0, 1.0],
        ];
        let inv = to_na(&expected_b(0.5, 1.0 / 3.0, 1.0 / 3.0).unwrap())
            .try_inverse()
            .unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(a[i][j], want[i][j], epsilon = 1e-12);
                assert_abs_diff_eq!(a[i][j], inv[(i, j)], epsilon = 1e-12);
            }
        }
        assert_eq!(correction_matrix(1.0, 1.0, 1.0).unwrap().matrix(), IDENTITY4);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(correction_matrix(0.0, 0.5, 0.1), Err(Error::Domain(_))));
        assert!(matches!(correction_matrix(0.5, -0.1, 0.1), Err(Error::Domain(_))));
        assert!(matches!(correction_matrix(0.5, 0.4, 0.45), Err(Error::Domain(_))));
        assert!(matches!(expected_b(0.5, 0.4, 0.0), Err(Error::Domain(_))));
        assert!(matches!(expected_b(1.5, 0.4, 0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn apply_matches_full_product() {
        let c = correction_matrix(0.7, 0.4, 0.3).unwrap();
        let m = c.matrix();
        for (b1, b2) in [(true, true), (true, false), (false, true), (false, false)] {
            let s = pair_encoding(b1, b2);
            let col = c.apply(s);
            let sv = s.to_f64();
            for i in 0..4 {
                let full: f64 = (0..4).map(|k| m[i][k] * sv[k]).sum();
                assert_eq!(col[i], full);
            }
        }
    }

    proptest! {
        #[test]
        fn correction_inverts_expectation(p_i in 1e-3f64..=1.0, p_j in 1e-3f64..=1.0, u in 1e-3f64..=1.0) {
            let p_ij = u * p_i.min(p_j);
            let prod = matmul(
                &correction_matrix(p_i, p_j, p_ij).unwrap().matrix(),
                &expected_b(p_i, p_j, p_ij).unwrap(),
            );
            for i in 0..4 {
                for j in 0..4 {
                    prop_assert!((prod[i][j] - IDENTITY4[i][j]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn correction_lower_triangular_with_ordered_diagonal(p_i in 1e-3f64..=1.0, p_j in 1e-3f64..=1.0, u in 1e-3f64..=1.0) {
            let p_ij = u * p_i.min(p_j);
            let c = correction_matrix(p_i, p_j, p_ij).unwrap();
            let m = c.matrix();
            for i in 0..4 {
                for j in (i + 1)..4 {
                    prop_assert_eq!(m[i][j], 0.0);
                }
            }
            prop_assert_eq!([m[0][0], m[1][1], m[2][2], m[3][3]], [c.a_ij, c.a_i, c.a_j, 1.0]);
            prop_assert!(c.a_ij >= c.a_i.max(c.a_j) * (1.0 - 1e-12));
        }
    }
}
