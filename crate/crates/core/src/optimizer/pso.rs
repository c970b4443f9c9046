use rand::Rng;

use crate::hand_model::{random_unit_quaternion, NUM_PARAMS};

/// Flat hypothesis vector.
pub type Hypothesis = [f64; NUM_PARAMS];

/// Quaternion slots in the flat hypothesis.
pub const QUAT_DIMS: std::ops::Range<usize> = 3..7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsoConfig {
    pub particles: usize,
    /// Generation 1 is the evaluation of the initial swarm.
    pub generations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
}

impl PsoConfig {
    /// Constriction-form coefficients.
    pub fn canonical(particles: usize, generations: usize) -> Self {
        Self {
            particles,
            generations,
            inertia: 0.7298,
            cognitive: 1.49618,
            social: 1.49618,
        }
    }

    /// Objective evaluations a run performs.
    pub fn evaluations(&self) -> usize {
        self.particles.max(1) * self.generations.max(1)
    }
}

/// Bounds for every dimension plus the dimensions the swarm may move.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub lower: Hypothesis,
    pub upper: Hypothesis,
    pub active: Vec<usize>,
}

impl SearchSpace {
    fn quaternion_active(&self) -> bool {
        QUAT_DIMS.clone().all(|d| self.active.contains(&d))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoResult {
    pub best: Hypothesis,
    pub best_score: f64,
    pub evaluations: usize,
    /// Global best after each generation.
    pub trace: Vec<f64>,
}

/// Renormalizes the quaternion slots in place; a zero vector becomes the
/// identity.
pub fn normalize_quaternion(h: &mut Hypothesis) {
    let n = h[QUAT_DIMS].iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 1e-12 && n.is_finite() {
        for v in &mut h[QUAT_DIMS] {
            *v /= n;
        }
    } else {
        h[QUAT_DIMS].copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
    }
}

fn sanitize(score: f64) -> f64 {
    if score.is_nan() {
        f64::NEG_INFINITY
    } else {
        score
    }
}

/// Global-best particle swarm maximizing `score` over the active
/// dimensions of `space`; inactive dimensions keep the values of `base`.
/// The first particles start at `seeds` with zero velocity, the rest
/// uniformly inside the bounds.
pub fn pso_optimize<F, R>(
    score: F,
    space: &SearchSpace,
    base: &Hypothesis,
    cfg: &PsoConfig,
    seeds: &[Hypothesis],
    rng: &mut R,
) -> PsoResult
where
    F: Fn(&Hypothesis) -> f64,
    R: Rng + ?Sized,
{
    let n = cfg.particles.max(1);
    let generations = cfg.generations.max(1);
    let quat = space.quaternion_active();
    let clamp = |x: &mut Hypothesis, v: &mut Hypothesis| {
        for &d in &space.active {
            if x[d] < space.lower[d] {
                x[d] = space.lower[d];
                v[d] = 0.0;
            } else if x[d] > space.upper[d] {
                x[d] = space.upper[d];
                v[d] = 0.0;
            }
        }
        if quat {
            normalize_quaternion(x);
        }
    };

    let mut pos: Vec<Hypothesis> = Vec::with_capacity(n);
    let mut vel: Vec<Hypothesis> = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = *base;
        let mut v = [0.0; NUM_PARAMS];
        if let Some(seed) = seeds.get(i) {
            for &d in &space.active {
                x[d] = seed[d];
            }
        } else {
            for &d in &space.active {
                let (lo, hi) = (space.lower[d], space.upper[d]);
                x[d] = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                v[d] = (hi - lo) * rng.gen_range(-0.5..=0.5);
            }
            if quat {
                let q = random_unit_quaternion(rng);
                x[QUAT_DIMS].copy_from_slice(&[q.w, q.i, q.j, q.k]);
            }
        }
        clamp(&mut x, &mut v);
        pos.push(x);
        vel.push(v);
    }

    let mut pbest = pos.clone();
    let mut pbest_score: Vec<f64> = pos.iter().map(|x| sanitize(score(x))).collect();
    let mut g = 0;
    for i in 1..n {
        if pbest_score[i] > pbest_score[g] {
            g = i;
        }
    }
    let mut gbest = pbest[g];
    let mut gbest_score = pbest_score[g];
    let mut trace = vec![gbest_score];

    for _ in 1..generations {
        for i in 0..n {
            let (x, v) = (&mut pos[i], &mut vel[i]);
            for &d in &space.active {
                let r1: f64 = rng.gen();
                let r2: f64 = rng.gen();
                let span = space.upper[d] - space.lower[d];
                v[d] = (cfg.inertia * v[d]
                    + cfg.cognitive * r1 * (pbest[i][d] - x[d])
                    + cfg.social * r2 * (gbest[d] - x[d]))
                    .clamp(-span, span);
                x[d] += v[d];
            }
            clamp(x, v);
        }
        for i in 0..n {
            let s = sanitize(score(&pos[i]));
            if s > pbest_score[i] {
                pbest_score[i] = s;
                pbest[i] = pos[i];
            }
        }
        for i in 0..n {
            if pbest_score[i] > gbest_score {
                gbest_score = pbest_score[i];
                gbest = pbest[i];
            }
        }
        trace.push(gbest_score);
    }

    PsoResult {
        best: gbest,
        best_score: gbest_score,
        evaluations: n * generations,
        trace,
    }
}
