/// Accumulated least-squares statistics `G = sum m_t m_t^T`, `b = sum y_t m_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    n: usize,
    gram: Vec<f64>,
    moment: Vec<f64>,
    steps: usize,
}

impl SufficientStats {
    pub fn new(n: usize) -> Self {
        SufficientStats {
            n,
            gram: vec![0.0; n * n],
            moment: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn update(&mut self, y: f64, column: &[f64]) {
        assert_eq!(column.len(), self.n, "column length");
        for (i, &mi) in column.iter().enumerate() {
            let row = &mut self.gram[i * self.n..(i + 1) * self.n];
            for (g, &mj) in row.iter_mut().zip(column) {
                *g += mi * mj;
            }
            self.moment[i] += y * mi;
        }
        self.steps += 1;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Row-major `n x n`, exactly symmetric.
    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    pub fn moment(&self) -> &[f64] {
        &self.moment
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_is_symmetric_psd_sum_of_outer_products() {
        let mut s = SufficientStats::new(3);
        s.update(1.0, &[1.0, 2.0, 3.0]);
        s.update(-2.0, &[0.5, -1.0, 0.0]);
        assert_eq!(s.steps(), 2);
        assert_eq!(s.moment(), &[0.0, 4.0, 3.0]);
        let g = s.gram();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g[i * 3 + j], g[j * 3 + i]);
            }
        }
        assert_eq!(g[0], 1.25);
        assert_eq!(g[1], 1.5);
        // x^T G x >= 0 along a few directions
        for x in [[1.0, -1.0, 0.3], [0.0, 3.0, -2.0], [-1.0, 0.5, 0.5]] {
            let q: f64 = (0..3).map(|i| (0..3).map(|j| x[i] * g[i * 3 + j] * x[j]).sum::<f64>()).sum();
            assert!(q >= -1e-12);
        }
    }
}
