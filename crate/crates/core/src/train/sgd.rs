use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v ← momentum·v + g + wd·θ`, `θ ← θ − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocities: Vec<Tensor>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocities: Vec::new(),
        }
    }

    pub fn velocities(&self) -> &[Tensor] {
        &self.velocities
    }

    pub fn set_velocities(&mut self, v: Vec<Tensor>) {
        self.velocities = v;
    }

    /// Updates `params` in place. `names` label the parameters in error
    /// messages. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], names: &[String]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(
                "sgd",
                format!("{} parameters but {} gradients", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "sgd",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                let name = names.get(i).map_or("?", String::as_str);
                return Err(Error::Training(format!("non-finite gradient in {name}")));
            }
        }
        if self.velocities.is_empty() {
            self.velocities = grads.iter().map(Tensor::zeros_like).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocities) {
            for ((pi, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *pi;
                *pi -= self.lr * *vi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["w".into()]
    }

    #[test]
    fn vanilla_step() {
        let mut p = Tensor::from_vec(vec![1.0, -2.0]);
        let g = Tensor::from_vec(vec![0.5, 0.25]);
        Sgd::new(0.1, 0.0, 0.0).step(vec![&mut p], &[g], &names()).unwrap();
        assert_eq!(p.data(), &[1.0 - 0.05, -2.0 - 0.025]);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Tensor::from_vec(vec![3.0]);
        let mut opt = Sgd::new(0.1, 0.9, 0.0);
        for _ in 0..3 {
            opt.step(vec![&mut p], &[Tensor::zeros(&[1])], &names()).unwrap();
        }
        assert_eq!(p.data(), &[3.0]);
    }

    #[test]
    fn two_momentum_steps_by_hand() {
        let mut p = Tensor::from_vec(vec![1.0]);
        let mut opt = Sgd::new(0.1, 0.9, 0.01);
        opt.step(vec![&mut p], &[Tensor::from_vec(vec![2.0])], &names()).unwrap();
        // v = 2 + 0.01 = 2.01; p = 1 - 0.201 = 0.799
        assert!((p.data()[0] - 0.799).abs() < 1e-12);
        opt.step(vec![&mut p], &[Tensor::from_vec(vec![-1.0])], &names()).unwrap();
        // v = 0.9*2.01 - 1 + 0.00799 = 0.81699; p = 0.799 - 0.081699
        assert!((p.data()[0] - 0.717301).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_the_layer() {
        let mut p = Tensor::from_vec(vec![1.0]);
        let err = Sgd::new(0.1, 0.0, 0.0)
            .step(vec![&mut p], &[Tensor::from_vec(vec![f64::NAN])], &["3.conv2d.weight".into()])
            .unwrap_err();
        assert!(err.to_string().contains("3.conv2d.weight"));
        assert_eq!(p.data(), &[1.0]);
    }
}
