//! Post-processing checks on sampled trajectories.

use crate::odeint::Trajectory;
use crate::Error;

/// Finite-difference weights for derivatives `0..=order` at `t` over the
/// nodes `nodes` (Fornberg's recursion).
fn weights(t: f64, nodes: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - t;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - t;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// First and second derivatives of samples on a possibly non-uniform grid.
/// Interior points use the three-point stencil; the end points use the
/// four nearest samples so both stay second-order accurate.
pub fn derivatives(times: &[f64], values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = times.len();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    if n < 4 {
        return (d1, d2);
    }
    for k in 0..n {
        let range = match k {
            0 => 0..4,
            _ if k == n - 1 => n - 4..n,
            _ => k - 1..k + 2,
        };
        let w = weights(times[k], &times[range.clone()], 2);
        for (j, idx) in range.enumerate() {
            d1[k] += w[1][j] * values[idx];
            d2[k] += w[2][j] * values[idx];
        }
    }
    (d1, d2)
}

/// Removes `2π` jumps from a sequence of angles.
pub fn unwrap(angles: &[f64]) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    let mut out = Vec::with_capacity(angles.len());
    let mut shift = 0.0;
    for (k, a) in angles.iter().enumerate() {
        if k > 0 {
            let d = a - angles[k - 1];
            shift -= tau * (d / tau).round();
        }
        out.push(a + shift);
    }
    out
}

/// `θ̈ + k r sin θ` with `ẋ = r sin θ`, `y¹ = r cos θ`.
pub fn martinet_pendulum(times: &[f64], xdot: &[f64], y1: &[f64], k: &[f64]) -> Vec<f64> {
    let theta = unwrap(&xdot.iter().zip(y1).map(|(a, b)| a.atan2(*b)).collect::<Vec<_>>());
    let (_, dd) = derivatives(times, &theta);
    (0..times.len()).map(|i| dd[i] + k[i] * xdot[i].hypot(y1[i]) * theta[i].sin()).collect()
}

/// Residuals `θ̇ − p₅` and `θ̈ + r sin(θ − φ)` with `y¹ = cos θ`,
/// `y² = sin θ` and `r e^{iφ} = (y¹ − p₄) + i (y² + p₃)`.
pub struct PlateBallCheck {
    pub rate: Vec<f64>,
    pub pendulum: Vec<f64>,
}

pub fn plate_ball_pendulum(times: &[f64], y1: &[f64], y2: &[f64], p3: &[f64], p4: &[f64], p5: &[f64]) -> PlateBallCheck {
    let theta = unwrap(&y2.iter().zip(y1).map(|(a, b)| a.atan2(*b)).collect::<Vec<_>>());
    let (d, dd) = derivatives(times, &theta);
    let mut rate = Vec::with_capacity(times.len());
    let mut pendulum = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        let (k1, k2) = (y1[i] - p4[i], y2[i] + p3[i]);
        let (r, phi) = (k1.hypot(k2), k2.atan2(k1));
        rate.push(d[i] - p5[i]);
        pendulum.push(dd[i] + r * (theta[i] - phi).sin());
    }
    PlateBallCheck { rate, pendulum }
}

fn column(traj: &Trajectory, label: &str) -> Result<Vec<f64>, Error> {
    traj.component(label).ok_or_else(|| Error::Invalid(format!("trajectory has no component '{label}'")))
}

/// Pendulum residual channel for a vakonomic Martinet trajectory with
/// state labels `x, e1, e2, p3`.
pub fn martinet_channel(traj: &Trajectory) -> Result<Vec<f64>, Error> {
    Ok(martinet_pendulum(&traj.times, &column(traj, "e1")?, &column(traj, "e2")?, &column(traj, "p3")?))
}

/// Pendulum residual channels for a vakonomic plate-ball trajectory.
pub fn plate_ball_channels(traj: &Trajectory) -> Result<PlateBallCheck, Error> {
    let c = |l| column(traj, l);
    Ok(plate_ball_pendulum(&traj.times, &c("e1")?, &c("e2")?, &c("p3")?, &c("p4")?, &c("p5")?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_match_textbook_stencil() {
        let w = weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_eq!(w[1], vec![-0.5, 0.0, 0.5]);
        assert_eq!(w[2], vec![1.0, -2.0, 1.0]);
    }

    #[test]
    fn quadratic_is_exact_on_uneven_grid() {
        let t = [0.0, 0.1, 0.25, 0.3, 0.7];
        let f: Vec<f64> = t.iter().map(|t| 3.0 * t * t - t + 2.0).collect();
        let (d1, d2) = derivatives(&t, &f);
        for (k, t) in t.iter().enumerate() {
            assert!((d1[k] - (6.0 * t - 1.0)).abs() < 1e-12);
            assert!((d2[k] - 6.0).abs() < 1e-10);
        }
    }

    #[test]
    fn unwrap_removes_jumps() {
        let a: Vec<f64> = (0..100).map(|k| 0.1 * k as f64).collect();
        let wrapped: Vec<f64> = a.iter().map(|x| x.sin().atan2(x.cos())).collect();
        for (u, v) in unwrap(&wrapped).iter().zip(&a) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
