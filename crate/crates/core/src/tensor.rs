use serde::{Deserialize, Serialize};

/// Dense row-major 3-tensor indexed `[trial][time][channel]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Copy + Default> Tensor3<T> {
    pub fn zeros(d0: usize, d1: usize, d2: usize) -> Self {
        Self {
            dims: [d0, d1, d2],
            data: vec![T::default(); d0 * d1 * d2],
        }
    }
}

impl<T: Copy> Tensor3<T> {
    /// Returns `None` when `data.len()` does not match the dimensions.
    pub fn from_vec(dims: [usize; 3], data: Vec<T>) -> Option<Self> {
        (dims[0] * dims[1] * dims[2] == data.len()).then_some(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, t: usize, n: usize) -> usize {
        debug_assert!(i < self.dims[0] && t < self.dims[1] && n < self.dims[2]);
        (i * self.dims[1] + t) * self.dims[2] + n
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize, n: usize) -> T {
        self.data[self.offset(i, t, n)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, t: usize, n: usize, v: T) {
        let o = self.offset(i, t, n);
        self.data[o] = v;
    }

    /// The `T x N` block of one trial.
    pub fn trial(&self, i: usize) -> &[T] {
        let len = self.dims[1] * self.dims[2];
        &self.data[i * len..(i + 1) * len]
    }

    pub fn trial_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.dims[1] * self.dims[2];
        &mut self.data[i * len..(i + 1) * len]
    }

    /// One time step of one trial.
    pub fn row(&self, i: usize, t: usize) -> &[T] {
        let o = self.offset(i, t, 0);
        &self.data[o..o + self.dims[2]]
    }

    /// Gather a subset of trials and channels into a new tensor.
    pub fn select(&self, trials: &[usize], channels: &[usize]) -> Tensor3<T> {
        let mut data = Vec::with_capacity(trials.len() * self.dims[1] * channels.len());
        for &i in trials {
            for t in 0..self.dims[1] {
                let row = self.row(i, t);
                data.extend(channels.iter().map(|&c| row[c]));
            }
        }
        Tensor3 {
            dims: [trials.len(), self.dims[1], channels.len()],
            data,
        }
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Tensor3<U> {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor3::from_vec([2, 3, 2], (0..12).collect::<Vec<u32>>()).unwrap();
        assert_eq!(t.get(1, 2, 1), 11);
        assert_eq!(t.get(0, 1, 0), 2);
        assert_eq!(t.trial(1), &[6, 7, 8, 9, 10, 11]);
        assert_eq!(t.row(1, 0), &[6, 7]);
        let s = t.select(&[1], &[1]);
        assert_eq!(s.dims(), [1, 3, 1]);
        assert_eq!(s.data(), &[7, 9, 11]);
        assert!(Tensor3::<u32>::from_vec([2, 2, 2], vec![0; 7]).is_none());
    }
}
