//! Finite-difference derivatives used as fallbacks and test oracles.

/// Central difference step `1e-6 · max(1, |x|)`.
pub fn central_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Second-order central gradient.
pub fn central_gradient<E>(f: impl Fn(&[f64]) -> Result<f64, E>, z: &[f64]) -> Result<Vec<f64>, E> {
    let mut w = z.to_vec();
    let mut g = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        let h = central_step(z[i]);
        w[i] = z[i] + h;
        let fp = f(&w)?;
        w[i] = z[i] - h;
        let fm = f(&w)?;
        w[i] = z[i];
        g.push((fp - fm) / (2.0 * h));
    }
    Ok(g)
}

/// Fourth-order five-point derivative of a vector-valued map; column `j`
/// of the result is the derivative along coordinate `j`.
pub fn jacobian5<E>(f: impl Fn(&[f64]) -> Result<Vec<f64>, E>, z: &[f64], step: f64) -> Result<Vec<Vec<f64>>, E> {
    let mut w = z.to_vec();
    let mut cols = Vec::with_capacity(z.len());
    for j in 0..z.len() {
        let h = step * z[j].abs().max(1.0);
        let mut at = |s: f64| -> Result<Vec<f64>, E> {
            w[j] = z[j] + s * h;
            let v = f(&w);
            w[j] = z[j];
            v
        };
        let (p1, m1, p2, m2) = (at(1.0)?, at(-1.0)?, at(2.0)?, at(-2.0)?);
        cols.push(
            (0..p1.len())
                .map(|i| (8.0 * (p1[i] - m1[i]) - (p2[i] - m2[i])) / (12.0 * h))
                .collect(),
        );
    }
    Ok(cols)
}

/// Fourth-order five-point gradient of a scalar map.
pub fn gradient5<E>(f: impl Fn(&[f64]) -> Result<f64, E>, z: &[f64], step: f64) -> Result<Vec<f64>, E> {
    Ok(jacobian5(|w| f(w).map(|v| vec![v]), z, step)?.into_iter().map(|c| c[0]).collect())
}
