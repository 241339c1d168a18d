#![allow(dead_code)]

use rand::Rng;
use subfins::expr::{Func, ScalarExpr};

pub const VARS: [&str; 3] = ["x", "y", "z"];

/// A random expression over `x, y, z` together with the arguments of every
/// `abs` call, which mark kinks.
pub struct RandomExpr {
    pub source: String,
    pub kinks: Vec<String>,
}

fn number<R: Rng>(rng: &mut R) -> String {
    if rng.gen_bool(0.5) {
        format!("{}", rng.gen_range(1..6))
    } else {
        format!("{:.2}", rng.gen_range(0.1..3.0))
    }
}

fn node<R: Rng>(rng: &mut R, depth: usize, kinks: &mut Vec<String>) -> String {
    if depth == 0 || rng.gen_bool(0.25) {
        return if rng.gen_bool(0.7) {
            VARS[rng.gen_range(0..3)].to_string()
        } else {
            number(rng)
        };
    }
    match rng.gen_range(0..10) {
        0..=4 => {
            let op = ["+", "-", "*", "/"][rng.gen_range(0..4)];
            let a = node(rng, depth - 1, kinks);
            let b = node(rng, depth - 1, kinks);
            format!("({a} {op} {b})")
        }
        5 => {
            let a = node(rng, depth - 1, kinks);
            let e = ["2", "3", "0.5", "1.5", "-1"][rng.gen_range(0..5)];
            format!("({a})^{e}")
        }
        6 => format!("-({})", node(rng, depth - 1, kinks)),
        _ => {
            let f = Func::ALL[rng.gen_range(0..Func::ALL.len())];
            let a = node(rng, depth - 1, kinks);
            if f == Func::Abs {
                kinks.push(a.clone());
            }
            format!("{}({a})", f.name())
        }
    }
}

pub fn random_expr<R: Rng>(rng: &mut R, depth: usize) -> RandomExpr {
    let mut kinks = Vec::new();
    let source = node(rng, depth, &mut kinks);
    RandomExpr { source, kinks }
}

/// Central difference of `f` in coordinate `i` by Ridders' Richardson
/// tableau, started from several initial steps; keeps the estimate with the
/// smallest error estimate.
pub fn richardson<F: Fn(&[f64]) -> Option<f64>>(f: &F, x: &[f64], i: usize) -> Option<f64> {
    [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
        .iter()
        .filter_map(|&h| ridders(f, x, i, h))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(d, _)| d)
}

fn ridders<F: Fn(&[f64]) -> Option<f64>>(f: &F, x: &[f64], i: usize, h0: f64) -> Option<(f64, f64)> {
    let cd = |h: f64| -> Option<f64> {
        let mut p = x.to_vec();
        let mut m = x.to_vec();
        p[i] += h;
        m[i] -= h;
        Some((f(&p)? - f(&m)?) / (2.0 * h))
    };
    const CON: f64 = 1.4;
    const CON2: f64 = CON * CON;
    const NTAB: usize = 12;
    let mut h = h0;
    let mut a = vec![vec![0.0; NTAB]; NTAB];
    a[0][0] = cd(h)?;
    let mut best = a[0][0];
    let mut err = f64::INFINITY;
    for i in 1..NTAB {
        h /= CON;
        a[0][i] = cd(h)?;
        let mut fac = CON2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= CON2;
            let e = (a[j][i] - a[j - 1][i]).abs().max((a[j][i] - a[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    Some((best, err))
}

/// A random expression and point where the expression is smooth, finite and
/// moderately sized, with AD value and gradient there.
pub struct Sample {
    pub expr: ScalarExpr,
    pub point: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
}

pub fn smooth_sample<R: Rng>(rng: &mut R) -> Sample {
    loop {
        let r = random_expr(rng, 4);
        let expr = ScalarExpr::parse(&r.source, &VARS).expect("generated expressions parse");
        let kinks: Vec<ScalarExpr> = r.kinks.iter().map(|k| ScalarExpr::parse(k, &VARS).unwrap()).collect();
        for _ in 0..5 {
            let point: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if kinks.iter().any(|k| k.eval_f64(&point).map_or(true, |v| v.abs() < 1e-2)) {
                continue;
            }
            let bind: Vec<(&str, f64)> = VARS.iter().cloned().zip(point.iter().cloned()).collect();
            let Ok((value, gradient)) = expr.eval_with_derivatives(&bind, &VARS) else {
                continue;
            };
            if !value.is_finite() || value.abs() > 1e3 || gradient.iter().any(|g| !g.is_finite() || g.abs() > 1e3) {
                continue;
            }
            return Sample {
                expr,
                point,
                value,
                gradient,
            };
        }
    }
}
