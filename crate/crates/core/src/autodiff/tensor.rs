use std::fmt;

/// Shape of a dense array of rank 0, 1 or 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn numel(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    /// Row/column view used by matrix ops. A vector is a single row.
    pub fn as_rows_cols(&self) -> (usize, usize) {
        match *self {
            Shape::Scalar => (1, 1),
            Shape::Vector(n) => (1, n),
            Shape::Matrix(r, c) => (r, c),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Shape::Scalar => write!(f, "[]"),
            Shape::Vector(n) => write!(f, "[{n}]"),
            Shape::Matrix(r, c) => write!(f, "[{r}x{c}]"),
        }
    }
}

/// Dense row-major `f64` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.numel(),
            data.len(),
            "tensor of shape {shape} cannot hold {} values",
            data.len()
        );
        Self { shape, data }
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(Shape::Scalar, vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self::new(Shape::Vector(data.len()), data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self::new(Shape::Matrix(rows, cols), data)
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::new(shape, vec![0.0; shape.numel()])
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self::new(shape, vec![value; shape.numel()])
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "ragged rows");
            data.extend_from_slice(row);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.as_rows_cols().0
    }

    pub fn cols(&self) -> usize {
        self.shape.as_rows_cols().1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {}", self.shape);
        self.data[0]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let cols = self.cols();
        &self.data[row * cols..(row + 1) * cols]
    }

    /// Same data under a new shape with the same element count.
    pub fn reshaped(mut self, shape: Shape) -> Self {
        assert_eq!(shape.numel(), self.data.len());
        self.shape = shape;
        self
    }

    /// Gathers the listed rows of a matrix into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Tensor {
        let cols = self.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor::matrix(indices.len(), cols, data)
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut carry = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Column sums of a row-major `rows x cols` buffer, each compensated.
pub(crate) fn column_sums(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut sum = vec![0.0; cols];
    let mut carry = vec![0.0; cols];
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        for c in 0..cols {
            let v = row[c];
            let t = sum[c] + v;
            if sum[c].abs() >= v.abs() {
                carry[c] += (sum[c] - t) + v;
            } else {
                carry[c] += (v - t) + sum[c];
            }
            sum[c] = t;
        }
    }
    sum.iter().zip(&carry).map(|(s, c)| s + c).collect()
}
