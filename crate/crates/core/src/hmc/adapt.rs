/// Nesterov dual averaging of `log eps` toward a target acceptance rate.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    mu: f64,
    target: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    t: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
}

impl DualAveraging {
    pub fn new(eps0: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps0).ln(),
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            t: 0.0,
            h_bar: 0.0,
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
        }
    }

    /// Feeds one acceptance statistic and returns the next step size.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        self.t += 1.0;
        let w = 1.0 / (self.t + self.t0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_stat);
        self.log_eps = self.mu - self.t.sqrt() / self.gamma * self.h_bar;
        let eta = self.t.powf(-self.kappa);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
        self.log_eps.exp()
    }

    pub fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    /// Averaged step size, used once adaptation ends.
    pub fn final_step(&self) -> f64 {
        if self.t == 0.0 {
            self.current()
        } else {
            self.log_eps_bar.exp()
        }
    }
}

/// Running per-coordinate variance (Welford).
#[derive(Debug, Clone)]
pub struct WelfordVar {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl WelfordVar {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / self.n as f64;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// Sample variance shrunk toward `1e-3`: `n/(n+5) var + 1e-3 * 5/(n+5)`.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|m| {
                let var = if self.n > 1 { m / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_averaging_moves_in_the_right_direction() {
        let mut da = DualAveraging::new(1.0, 0.8);
        for _ in 0..50 {
            da.update(0.2);
        }
        assert!(da.final_step() < 1.0);
        let mut da = DualAveraging::new(1.0, 0.8);
        for _ in 0..50 {
            da.update(1.0);
        }
        assert!(da.final_step() > 1.0);
    }

    #[test]
    fn dual_averaging_finds_the_target_on_a_monotone_response() {
        // accept(eps) = exp(-eps): the fixed point is eps = -ln 0.8.
        let mut da = DualAveraging::new(1.0, 0.8);
        let mut eps = da.current();
        for _ in 0..2000 {
            eps = da.update((-eps).exp());
        }
        assert!((da.final_step() - (-(0.8f64).ln())).abs() < 0.01);
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [[1.0, 2.0], [3.0, -1.0], [4.5, 0.0], [-2.0, 7.0]];
        let mut w = WelfordVar::new(2);
        xs.iter().for_each(|x| w.push(x));
        for j in 0..2 {
            let m = xs.iter().map(|x| x[j]).sum::<f64>() / 4.0;
            let v = xs.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / 3.0;
            let reg = 4.0 / 9.0 * v + 1e-3 * 5.0 / 9.0;
            assert!((w.regularized_variance()[j] - reg).abs() < 1e-12);
        }
    }
}
