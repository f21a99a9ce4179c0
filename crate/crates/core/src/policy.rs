use crate::error::Result;

/// Maps a per-route document count to a rate vector in the schedulable region.
pub trait AllocationPolicy: Send + Sync {
    fn num_routes(&self) -> usize;

    /// Rates at state `n`. Implementations return zero on routes with `n_r = 0`.
    fn allocate(&self, n: &[u32]) -> Result<Vec<f64>>;
}

impl<P: AllocationPolicy + ?Sized> AllocationPolicy for &P {
    fn num_routes(&self) -> usize {
        (**self).num_routes()
    }

    fn allocate(&self, n: &[u32]) -> Result<Vec<f64>> {
        (**self).allocate(n)
    }
}

impl<P: AllocationPolicy + ?Sized> AllocationPolicy for Box<P> {
    fn num_routes(&self) -> usize {
        (**self).num_routes()
    }

    fn allocate(&self, n: &[u32]) -> Result<Vec<f64>> {
        (**self).allocate(n)
    }
}
