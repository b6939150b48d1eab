//! Dense row-major f64 tensor plus the matmul kernels the tape builds on.

/// Dense row-major array of f64 with an explicit shape (1 to 4 axes).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(
            !shape.is_empty() && shape.len() <= 4,
            "tensor rank must be 1..=4, got {}",
            shape.len()
        );
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Self {
        assert!(
            !shape.is_empty() && shape.len() <= 4,
            "tensor rank must be 1..=4, got {}",
            shape.len()
        );
        let len: usize = shape.iter().product();
        assert_eq!(len, data.len(), "shape {shape:?} does not match {} elements", data.len());
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The single value of a 1-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Rows and columns of a 2-D tensor.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected matrix, got shape {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, n) = self.dims2();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        let (_, n) = self.dims2();
        self.data[i * n + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        let (_, n) = self.dims2();
        self.data[i * n + j] = v;
    }

    pub fn transpose2(&self) -> Tensor {
        let (m, n) = self.dims2();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::from_vec(out, &[n, m])
    }

    pub fn reshaped(&self, shape: &[usize]) -> Tensor {
        Tensor::from_vec(self.data.clone(), shape)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise self += c * other.
    pub fn add_scaled(&mut self, other: &Tensor, c: f64) {
        assert_eq!(self.shape, other.shape, "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += c * b;
        }
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for v in self.data.iter_mut() {
            *v *= c;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// C = A * B for 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, ka) = a.dims2();
    let (kb, n) = b.dims2();
    assert_eq!(ka, kb, "matmul inner extents differ: {ka} vs {kb}");
    let mut c = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * ka..(i + 1) * ka];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                *cv += av * bv;
            }
        }
    }
    Tensor::from_vec(c, &[m, n])
}

/// C = A * B^T; B is given untransposed (n x k). The usual linear-layer shape.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, ka) = a.dims2();
    let (n, kb) = b.dims2();
    assert_eq!(ka, kb, "matmul_nt inner extents differ: {ka} vs {kb}");
    let mut c = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * ka..(i + 1) * ka];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &bd[j * kb..(j + 1) * kb];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow.iter()) {
                acc += av * bv;
            }
            *cv = acc;
        }
    }
    Tensor::from_vec(c, &[m, n])
}

/// C = A^T * B; A is given untransposed (m x n), B is m x p.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (ma, n) = a.dims2();
    let (mb, p) = b.dims2();
    assert_eq!(ma, mb, "matmul_tn outer extents differ: {ma} vs {mb}");
    let mut c = vec![0.0; n * p];
    let ad = a.data();
    let bd = b.data();
    for r in 0..ma {
        let arow = &ad[r * n..(r + 1) * n];
        let brow = &bd[r * p..(r + 1) * p];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * p..(i + 1) * p];
            for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                *cv += av * bv;
            }
        }
    }
    Tensor::from_vec(c, &[n, p])
}
