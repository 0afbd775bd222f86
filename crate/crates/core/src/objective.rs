//! Benchmark objectives and a name-keyed registry for the CLI.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{CboError, Result};
use crate::scalar::Real;

type ObjectiveFn<T> = dyn Fn(&[T]) -> T + Send + Sync;

/// A deterministic map `R^D -> R` with a name and an optional known minimizer.
#[derive(Clone)]
pub struct ObjectiveHandle<T> {
    name: String,
    evaluate: Arc<ObjectiveFn<T>>,
    min_dim: usize,
    known_minimizer: Option<fn(usize) -> Vec<T>>,
}

impl<T: Real> ObjectiveHandle<T> {
    pub fn new(name: impl Into<String>, f: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            evaluate: Arc::new(f),
            min_dim: 1,
            known_minimizer: None,
        }
    }

    pub fn with_min_dim(mut self, min_dim: usize) -> Self {
        self.min_dim = min_dim;
        self
    }

    pub fn with_minimizer(mut self, minimizer: fn(usize) -> Vec<T>) -> Self {
        self.known_minimizer = Some(minimizer);
        self
    }

    #[inline]
    pub fn evaluate(&self, x: &[T]) -> T {
        (self.evaluate)(x)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn min_dim(&self) -> usize {
        self.min_dim
    }

    /// Global minimizer in dimension `dim`, when known.
    pub fn known_minimizer(&self, dim: usize) -> Option<Vec<T>> {
        self.known_minimizer.map(|m| m(dim))
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if dim < self.min_dim {
            return Err(CboError::Dimension(format!(
                "objective `{}` needs D >= {}, got {dim}",
                self.name, self.min_dim
            )));
        }
        Ok(())
    }
}

impl<T> fmt::Debug for ObjectiveHandle<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObjectiveHandle")
            .field("name", &self.name)
            .field("min_dim", &self.min_dim)
            .finish_non_exhaustive()
    }
}

/// `10 D + Σ (x_d² − 10 cos(2π x_d))`.
pub fn rastrigin<T: Real>(x: &[T]) -> T {
    let ten = T::lit(10.0);
    let two_pi = T::TAU();
    let d = T::from_count(x.len());
    ten * d
        + x.iter()
            .map(|&xi| xi * xi - ten * (two_pi * xi).cos())
            .sum::<T>()
}

/// `Σ_{d<D} (1 − x_d)² + 100 (x_{d+1} − x_d²)²`; needs `D >= 2`.
pub fn rosenbrock<T: Real>(x: &[T]) -> Result<T> {
    if x.len() < 2 {
        return Err(CboError::Dimension(format!(
            "rosenbrock needs D >= 2, got {}",
            x.len()
        )));
    }
    Ok(rosenbrock_unchecked(x))
}

fn rosenbrock_unchecked<T: Real>(x: &[T]) -> T {
    let hundred = T::lit(100.0);
    x.windows(2)
        .map(|w| {
            let a = T::one() - w[0];
            let b = w[1] - w[0] * w[0];
            a * a + hundred * b * b
        })
        .sum()
}

/// `−exp(Σ 5 x_d)` when every coordinate is `<= 1/2`, else `0`.
pub fn discontinuous_integrand<T: Real>(x: &[T]) -> T {
    let half = T::lit(0.5);
    if x.iter().all(|&xi| xi <= half) {
        let s: T = x.iter().map(|&xi| T::lit(5.0) * xi).sum();
        -s.exp()
    } else {
        T::zero()
    }
}

pub fn rastrigin_handle<T: Real>() -> ObjectiveHandle<T> {
    ObjectiveHandle::new("rastrigin", rastrigin::<T>).with_minimizer(|d| vec![T::zero(); d])
}

pub fn rosenbrock_handle<T: Real>() -> ObjectiveHandle<T> {
    ObjectiveHandle::new("rosenbrock", rosenbrock_unchecked::<T>)
        .with_min_dim(2)
        .with_minimizer(|d| vec![T::one(); d])
}

pub fn discontinuous_handle<T: Real>() -> ObjectiveHandle<T> {
    ObjectiveHandle::new("discontinuous", discontinuous_integrand::<T>)
        .with_minimizer(|d| vec![T::lit(0.5); d])
}

/// `f ≡ 0`; gives uniform weights, making the stochastic dynamics linear.
pub fn constant_handle<T: Real>() -> ObjectiveHandle<T> {
    ObjectiveHandle::new("constant", |_: &[T]| T::zero())
}

/// Name-keyed collection of objectives.
#[derive(Debug, Clone)]
pub struct ObjectiveRegistry<T> {
    entries: BTreeMap<String, ObjectiveHandle<T>>,
}

impl<T: Real> ObjectiveRegistry<T> {
    /// Registry holding `rastrigin`, `rosenbrock`, `discontinuous` and `constant`.
    pub fn with_builtins() -> Self {
        let mut entries = BTreeMap::new();
        for h in [
            rastrigin_handle(),
            rosenbrock_handle(),
            discontinuous_handle(),
            constant_handle(),
        ] {
            entries.insert(h.name().to_owned(), h);
        }
        Self { entries }
    }

    /// Adds a user objective; names must be unique.
    pub fn register(&mut self, handle: ObjectiveHandle<T>) -> Result<()> {
        if self.entries.contains_key(handle.name()) {
            return Err(CboError::Config(format!(
                "objective `{}` already registered",
                handle.name()
            )));
        }
        self.entries.insert(handle.name().to_owned(), handle);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&ObjectiveHandle<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| CboError::UnknownObjective(name.to_owned()))
    }

    /// Looks up `name` and checks it is defined in dimension `dim`.
    pub fn resolve(&self, name: &str, dim: usize) -> Result<ObjectiveHandle<T>> {
        let h = self.get(name)?;
        h.check_dim(dim)?;
        Ok(h.clone())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

impl<T: Real> Default for ObjectiveRegistry<T> {
    fn default() -> Self {
        Self::with_builtins()
    }
}
