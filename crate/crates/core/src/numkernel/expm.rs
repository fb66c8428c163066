use super::matrix::{matmul, Matrix};
use super::solve::lu_solve;
use super::NumError;

// Degree-13 Pade numerator coefficients (Higham, "The scaling and squaring
// method for the matrix exponential revisited").
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// 1-norm bound under which the [13/13] approximant is accurate to unit
// roundoff.
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling-and-squaring with the degree-13 Pade
/// approximant.
pub fn expm(a: &Matrix) -> Result<Matrix, NumError> {
    if !a.is_square() {
        return Err(NumError::DimensionMismatch(format!(
            "expm needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let norm = a.one_norm();
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a.scale(0.5f64.powi(squarings as i32));

    let n = a.rows();
    let id = Matrix::identity(n);
    let a2 = matmul(&scaled, &scaled)?;
    let a4 = matmul(&a2, &a2)?;
    let a6 = matmul(&a2, &a4)?;

    // U = A (A6 (b13 A6 + b11 A4 + b9 A2) + b7 A6 + b5 A4 + b3 A2 + b1 I)
    let inner_u = a6
        .scale(B13[13])
        .add(&a4.scale(B13[11]))?
        .add(&a2.scale(B13[9]))?;
    let u_poly = matmul(&a6, &inner_u)?
        .add(&a6.scale(B13[7]))?
        .add(&a4.scale(B13[5]))?
        .add(&a2.scale(B13[3]))?
        .add(&id.scale(B13[1]))?;
    let u = matmul(&scaled, &u_poly)?;

    // V = A6 (b12 A6 + b10 A4 + b8 A2) + b6 A6 + b4 A4 + b2 A2 + b0 I
    let inner_v = a6
        .scale(B13[12])
        .add(&a4.scale(B13[10]))?
        .add(&a2.scale(B13[8]))?;
    let v = matmul(&a6, &inner_v)?
        .add(&a6.scale(B13[6]))?
        .add(&a4.scale(B13[4]))?
        .add(&a2.scale(B13[2]))?
        .add(&id.scale(B13[0]))?;

    // r = (V - U)^{-1} (V + U), then undo the scaling by repeated squaring.
    let mut r = lu_solve(&v.sub(&u)?, &v.add(&u)?)?;
    for _ in 0..squarings {
        r = matmul(&r, &r)?;
    }
    Ok(r)
}
