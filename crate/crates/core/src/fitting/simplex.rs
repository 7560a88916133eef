//! Nelder–Mead simplex minimization inside a box.

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOptions {
    /// Stop when the largest pairwise vertex distance falls below this.
    pub tolerance: f64,
    pub max_iter: usize,
    pub initial_step: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn clamp_into(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn diameter(simplex: &[Vec<f64>]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..simplex.len() {
        for j in i + 1..simplex.len() {
            let dist = simplex[i]
                .iter()
                .zip(&simplex[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            d = d.max(dist);
        }
    }
    d
}

/// Standard coefficients (reflection 1, expansion 2, contraction ½, shrink ½).
/// Points are projected onto the box before evaluation; non-finite values
/// count as +∞. The start point stays in the simplex until something better
/// is found, so the result never exceeds `f(start)`.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: F, start: &[f64], opts: &SimplexOptions) -> SimplexResult {
    let n = start.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut first = start.to_vec();
    clamp_into(&mut first, &opts.lower, &opts.upper);
    let mut simplex = vec![first.clone()];
    for i in 0..n {
        let mut v = first.clone();
        v[i] += opts.initial_step[i];
        if v[i] > opts.upper[i] {
            v[i] = first[i] - opts.initial_step[i];
        }
        clamp_into(&mut v, &opts.lower, &opts.upper);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        if diameter(&simplex) < opts.tolerance {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect();
            clamp_into(&mut p, &opts.lower, &opts.upper);
            p
        };

        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(-0.5);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            for j in 0..n {
                simplex[i][j] = simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]);
            }
            values[i] = eval(&simplex[i]);
        }
    }
    SimplexResult {
        x: simplex[0].clone(),
        value: values[0],
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(n: usize) -> SimplexOptions {
        SimplexOptions {
            tolerance: 1e-8,
            max_iter: 2000,
            initial_step: vec![0.5; n],
            lower: vec![-10.0; n],
            upper: vec![10.0; n],
        }
    }

    #[test]
    fn finds_rosenbrock_minimum() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = minimize(f, &[-1.2, 1.0], &opts(2));
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn respects_box() {
        let f = |x: &[f64]| x[0] + x[1].powi(2);
        let r = minimize(f, &[0.0, 3.0], &opts(2));
        assert!((r.x[0] + 10.0).abs() < 1e-6);
        assert!(r.x[1].abs() < 1e-3);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64]| (x[0] - 2.0).abs();
        let r = minimize(f, &[2.0], &opts(1));
        assert_eq!(r.value, 0.0);
    }
}
