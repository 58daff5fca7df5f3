//! Switches between `rayon` parallel iterators and plain iterators depending
//! on the `parallel` feature. Results are identical either way; only the
//! execution schedule differs.

/// Iterator over `&T` (parallel when the `parallel` feature is enabled).
#[macro_export]
macro_rules! maybe_par_iter {
    ($e:expr) => {{
        #[cfg(feature = "parallel")]
        let it = {
            use rayon::prelude::*;
            $e.par_iter()
        };
        #[cfg(not(feature = "parallel"))]
        let it = $e.iter();
        it
    }};
}

/// Iterator over `&mut T`.
#[macro_export]
macro_rules! maybe_par_iter_mut {
    ($e:expr) => {{
        #[cfg(feature = "parallel")]
        let it = {
            use rayon::prelude::*;
            $e.par_iter_mut()
        };
        #[cfg(not(feature = "parallel"))]
        let it = $e.iter_mut();
        it
    }};
}

/// Consuming iterator (ranges, vectors).
#[macro_export]
macro_rules! maybe_par_into_iter {
    ($e:expr) => {{
        #[cfg(feature = "parallel")]
        let it = {
            use rayon::prelude::*;
            $e.into_par_iter()
        };
        #[cfg(not(feature = "parallel"))]
        let it = $e.into_iter();
        it
    }};
}

/// Runs `f` on a single worker so parallel and sequential schedules can be
/// compared in one binary. Without the `parallel` feature this is just `f()`.
pub fn run_single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("single-thread pool")
            .install(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        f()
    }
}

/// Glob-import this where the macros above are used so the parallel
/// iterator adaptors resolve.
pub mod prelude {
    #[cfg(feature = "parallel")]
    pub use rayon::prelude::*;
}
