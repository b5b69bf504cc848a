//! Gravity model and explicit Runge-Kutta schemes for the particle demo.
//!
//! Particles have unit mass and move independently under the pull of a few
//! fixed suns. The integrators all have a strictly subdiagonal coefficient
//! pattern, so a particle carries only its step start, the single current
//! stage value, and the running weighted sum of stage derivatives.

/// One fixed attractor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sun {
    pub pos: [f64; 3],
    pub mass: f64,
}

/// The gravitational environment.
#[derive(Clone, Debug, PartialEq)]
pub struct SunSet {
    pub suns: Vec<Sun>,
    pub gamma: f64,
}

impl Default for SunSet {
    fn default() -> Self {
        SunSet {
            suns: vec![
                Sun { pos: [0.48, 0.58, 0.59], mass: 0.049 },
                Sun { pos: [0.58, 0.41, 0.46], mass: 0.167 },
                Sun { pos: [0.51, 0.52, 0.42], mass: 0.060 },
            ],
            gamma: 1.0,
        }
    }
}

impl SunSet {
    /// Acceleration at position `x`: sum of gamma * m * (s - x) / |s - x|^3.
    pub fn accel(&self, x: &[f64; 3]) -> [f64; 3] {
        let mut a = [0.0; 3];
        for s in &self.suns {
            let d = [s.pos[0] - x[0], s.pos[1] - x[1], s.pos[2] - x[2]];
            let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            let inv = self.gamma * s.mass / (r2 * r2.sqrt()).max(f64::MIN_POSITIVE);
            for i in 0..3 {
                a[i] += inv * d[i];
            }
        }
        a
    }
}

/// Coefficients of an explicit scheme whose only nonzero internal
/// coefficients sit on the first subdiagonal.
#[derive(Clone, Debug)]
pub struct RkScheme {
    /// Subdiagonal entries; stage i+1 evaluates at y0 + dt*sub[i]*f(Y_i).
    pub sub: Vec<f64>,
    /// Quadrature weights, one per stage.
    pub weights: Vec<f64>,
}

impl RkScheme {
    /// Euler (1), Heun second order (2), Heun third order (3), or the
    /// classical fourth-order method (4).
    pub fn of_order(order: u8) -> RkScheme {
        match order {
            1 => RkScheme { sub: vec![], weights: vec![1.0] },
            2 => RkScheme {
                sub: vec![1.0],
                weights: vec![0.5, 0.5],
            },
            3 => RkScheme {
                sub: vec![1.0 / 3.0, 2.0 / 3.0],
                weights: vec![0.25, 0.0, 0.75],
            },
            4 => RkScheme {
                sub: vec![0.5, 0.5, 1.0],
                weights: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
            },
            _ => panic!("Runge-Kutta order must be 1 to 4"),
        }
    }

    pub fn stages(&self) -> usize {
        self.weights.len()
    }
}

/// Phase-space state of one particle within a step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Particle {
    /// Stable identity assigned at creation.
    pub id: u64,
    /// Position and velocity at the start of the current step.
    pub pos0: [f64; 3],
    pub vel0: [f64; 3],
    /// Current stage value (the one preceding stage that is stored).
    pub stage_pos: [f64; 3],
    pub stage_vel: [f64; 3],
    /// Accumulated weighted sum of stage derivatives.
    pub sum_pos: [f64; 3],
    pub sum_vel: [f64; 3],
}

impl Particle {
    pub fn at_rest(id: u64, pos: [f64; 3]) -> Particle {
        Particle {
            id,
            pos0: pos,
            vel0: [0.0; 3],
            stage_pos: pos,
            stage_vel: [0.0; 3],
            sum_pos: [0.0; 3],
            sum_vel: [0.0; 3],
        }
    }

    /// Advance through stage `stage` of the scheme: fold this stage's
    /// derivative into the running sums, then either move to the next
    /// stage value or, on the last stage, complete the step. The tracked
    /// position afterwards is `stage_pos`.
    pub fn advance(&mut self, suns: &SunSet, rk: &RkScheme, dt: f64, stage: usize) {
        let a = suns.accel(&self.stage_pos);
        let b = rk.weights[stage];
        for i in 0..3 {
            self.sum_pos[i] += b * self.stage_vel[i];
            self.sum_vel[i] += b * a[i];
        }
        if stage + 1 == rk.stages() {
            for i in 0..3 {
                self.pos0[i] += dt * self.sum_pos[i];
                self.vel0[i] += dt * self.sum_vel[i];
            }
            self.stage_pos = self.pos0;
            self.stage_vel = self.vel0;
            self.sum_pos = [0.0; 3];
            self.sum_vel = [0.0; 3];
        } else {
            let c = dt * rk.sub[stage];
            for i in 0..3 {
                self.stage_pos[i] = self.pos0[i] + c * self.stage_vel[i];
                self.stage_vel[i] = self.vel0[i] + c * a[i];
            }
        }
    }
}

/// Serialized particle size in bytes: id plus six 3-vectors.
pub const PARTICLE_BYTES: usize = 8 + 6 * 3 * 8;

pub fn encode_particle(out: &mut Vec<u8>, p: &Particle) {
    out.extend_from_slice(&p.id.to_le_bytes());
    for v in [
        &p.pos0, &p.vel0, &p.stage_pos, &p.stage_vel, &p.sum_pos, &p.sum_vel,
    ] {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

pub fn decode_particle(bytes: &[u8]) -> Particle {
    assert_eq!(bytes.len(), PARTICLE_BYTES);
    let f = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    let vec3 = |i: usize| [f(i), f(i + 8), f(i + 16)];
    Particle {
        id: u64::from_le_bytes(bytes[0..8].try_into().unwrap()),
        pos0: vec3(8),
        vel0: vec3(32),
        stage_pos: vec3(56),
        stage_vel: vec3(80),
        sum_pos: vec3(104),
        sum_vel: vec3(128),
    }
}

/// Integrate one standalone particle for `steps` steps; used for scheme
/// verification without any mesh involvement.
pub fn integrate_single(
    suns: &SunSet,
    mut p: Particle,
    order: u8,
    dt: f64,
    steps: usize,
) -> Particle {
    let rk = RkScheme::of_order(order);
    for _ in 0..steps {
        for s in 0..rk.stages() {
            p.advance(suns, &rk, dt, s);
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn massless_suns_leave_particles_still() {
        let suns = SunSet {
            suns: vec![Sun { pos: [0.5; 3], mass: 0.0 }],
            gamma: 1.0,
        };
        let p0 = Particle::at_rest(1, [0.2, 0.3, 0.4]);
        for order in 1..=4 {
            let p = integrate_single(&suns, p0, order, 0.01, 100);
            assert_eq!(p.pos0, p0.pos0);
            assert_eq!(p.vel0, [0.0; 3]);
        }
    }

    #[test]
    fn particle_codec_roundtrip() {
        let mut p = Particle::at_rest(0xBEEF, [0.1, 0.2, 0.3]);
        p.vel0 = [1.5, -2.5, 0.25];
        p.sum_vel = [0.125, 0.0, -8.0];
        let mut bytes = Vec::new();
        encode_particle(&mut bytes, &p);
        assert_eq!(bytes.len(), PARTICLE_BYTES);
        assert_eq!(decode_particle(&bytes), p);
    }

    /// Circular orbit around a single sun: position error after a quarter
    /// orbit shrinks with the scheme's nominal order under dt halving.
    #[test]
    fn convergence_orders_on_circular_orbit() {
        let m = 1.0;
        let r = 0.25;
        let suns = SunSet {
            suns: vec![Sun { pos: [0.0; 3], mass: m }],
            gamma: 1.0,
        };
        let v = (m / r).sqrt();
        let omega = v / r;
        let t_end = 0.5 * std::f64::consts::PI / omega; // quarter period
        let exact = |t: f64| [r * (omega * t).cos(), r * (omega * t).sin(), 0.0];
        for (order, nominal) in [(1u8, 1.0), (2, 2.0), (3, 3.0), (4, 4.0)] {
            let mut errs = Vec::new();
            for halvings in 0..3 {
                let steps = 64usize << halvings;
                let dt = t_end / steps as f64;
                let mut p = Particle::at_rest(0, [r, 0.0, 0.0]);
                p.vel0 = [0.0, v, 0.0];
                p.stage_vel = p.vel0;
                let p = integrate_single(&suns, p, order, dt, steps);
                let e = exact(t_end);
                let err = (0..3)
                    .map(|i| (p.pos0[i] - e[i]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                errs.push(err);
            }
            let measured = (errs[0] / errs[2]).log2() / 2.0;
            assert!(
                (measured - nominal).abs() <= 0.2 * nominal,
                "order {}: measured {:.3}",
                order,
                measured
            );
        }
    }
}
