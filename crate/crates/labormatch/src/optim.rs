//! Derivative-free minimization by the Nelder-Mead simplex method, used for
//! the low-dimensional likelihood maximizations.

/// Stopping rules and step sizes.
#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Stop when the spread of simplex function values falls below this.
    pub f_tol: f64,
    /// Stop when the simplex diameter falls below this.
    pub x_tol: f64,
    /// Initial displacement along each coordinate.
    pub init_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_iter: 400,
            f_tol: 1e-10,
            x_tol: 1e-8,
            init_step: 0.25,
        }
    }
}

/// Minimum found by one simplex run.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Minimizes `f` from `x0` with the standard reflection/expansion/
/// contraction/shrink coefficients (1, 2, 1/2, 1/2).
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> Minimum {
    let dim = x0.len();
    assert!(dim >= 1, "need at least one dimension");
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    for d in 0..dim {
        let mut v = x0.to_vec();
        v[d] += opts.init_step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        // Order so that values[order[0]] is best.
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];

        let spread = values[worst] - values[best];
        let diameter = simplex
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[best])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread < opts.f_tol && diameter < opts.x_tol {
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; dim];
        for (i, v) in simplex.iter().enumerate() {
            if i == worst {
                continue;
            }
            for d in 0..dim {
                centroid[d] += v[d] / dim as f64;
            }
        }

        let blend = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
        };
        // Reflection through the centroid.
        let reflected = blend(&centroid, &simplex[worst], -1.0);
        let f_reflected = f(&reflected);
        if f_reflected < values[best] {
            let expanded = blend(&centroid, &simplex[worst], -2.0);
            let f_expanded = f(&expanded);
            if f_expanded < f_reflected {
                simplex[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_reflected;
            }
            continue;
        }
        if f_reflected < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = f_reflected;
            continue;
        }
        // Contraction toward the better of worst/reflected.
        let contracted = if f_reflected < values[worst] {
            blend(&centroid, &reflected, 0.5)
        } else {
            blend(&centroid, &simplex[worst], 0.5)
        };
        let f_contracted = f(&contracted);
        if f_contracted < values[worst].min(f_reflected) {
            simplex[worst] = contracted;
            values[worst] = f_contracted;
            continue;
        }
        // Shrink everything toward the best vertex.
        let best_vertex = simplex[best].clone();
        for (i, v) in simplex.iter_mut().enumerate() {
            if i == best {
                continue;
            }
            *v = blend(&best_vertex, v, 0.5);
            values[i] = f(v);
        }
    }

    let (arg, _) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    Minimum {
        x: simplex[arg].clone(),
        value: values[arg],
        iterations,
    }
}

/// Runs [`nelder_mead`] from several starts and keeps the best minimum.
pub fn nelder_mead_multistart(
    mut f: impl FnMut(&[f64]) -> f64,
    starts: &[Vec<f64>],
    opts: &NelderMeadOptions,
) -> Minimum {
    assert!(!starts.is_empty(), "need at least one start");
    let mut best: Option<Minimum> = None;
    for x0 in starts {
        let m = nelder_mead(&mut f, x0, opts);
        if best.as_ref().map_or(true, |b| m.value < b.value) {
            best = Some(m);
        }
    }
    best.unwrap()
}
