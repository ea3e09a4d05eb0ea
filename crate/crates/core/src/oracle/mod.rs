//! Uniform blackbox access: probability vectors in, nothing else out.
//!
//! An [`OracleHandle`] wraps one of three backends:
//!
//! * an in-process [`Mlp`], which additionally exposes input gradients so a
//!   generator can be trained through it;
//! * a remote oracle reached over the line-delimited JSON protocol in
//!   [`wire`], which answers queries only;
//! * an arbitrary function, handy for tests and toy blackboxes.
//!
//! Every successful `classify` bumps an atomic query counter.

pub mod wire;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::netcore::{Mlp, NetError};
use crate::prob::{ProbError, ProbVector};

pub use wire::{serve, OracleServer, RemoteOracle};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("record has {got} features, oracle expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("oracle timed out after {0:?}")]
    Timeout(Duration),
    #[error("malformed oracle reply: {0}")]
    MalformedReply(String),
    #[error("oracle returned an invalid probability vector: {0}")]
    InvalidProbs(#[from] ProbError),
    #[error("oracle returned {got} classes, expected {expected}")]
    ClassCount { expected: usize, got: usize },
    #[error("remote oracle error: {0}")]
    Remote(String),
    #[error("oracle i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("an oracle needs at least 2 classes and 1 feature")]
    BadShape,
}

type ProbFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

pub enum Backend {
    InProcess(Arc<Mlp>),
    Remote(RemoteOracle),
    Function(Arc<ProbFn>),
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backend::InProcess(_) => f.write_str("InProcess"),
            Backend::Remote(r) => write!(f, "Remote({})", r.addr()),
            Backend::Function(_) => f.write_str("Function"),
        }
    }
}

/// Query statistics for a handle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleStats {
    pub total_queries: u64,
    pub total_wall: Duration,
}

impl OracleStats {
    pub fn seconds_per_query(&self) -> f64 {
        if self.total_queries == 0 {
            0.0
        } else {
            self.total_wall.as_secs_f64() / self.total_queries as f64
        }
    }
}

#[derive(Debug)]
pub struct OracleHandle {
    backend: Backend,
    class_count: usize,
    feature_count: usize,
    queries: AtomicU64,
    wall_nanos: AtomicU64,
}

impl OracleHandle {
    fn with_backend(
        backend: Backend,
        feature_count: usize,
        class_count: usize,
    ) -> Result<Self, OracleError> {
        if class_count < 2 || feature_count == 0 {
            return Err(OracleError::BadShape);
        }
        Ok(OracleHandle {
            backend,
            class_count,
            feature_count,
            queries: AtomicU64::new(0),
            wall_nanos: AtomicU64::new(0),
        })
    }

    pub fn in_process(net: Arc<Mlp>) -> Result<Self, OracleError> {
        let (f, c) = (net.input_dim(), net.output_dim());
        OracleHandle::with_backend(Backend::InProcess(net), f, c)
    }

    /// Connects to a remote oracle. The shape is not discoverable over the
    /// protocol, so it must be supplied.
    pub fn remote(
        addr: &str,
        timeout: Duration,
        feature_count: usize,
        class_count: usize,
    ) -> Result<Self, OracleError> {
        let remote = RemoteOracle::connect(addr, timeout)?;
        OracleHandle::with_backend(Backend::Remote(remote), feature_count, class_count)
    }

    pub fn from_fn<F>(feature_count: usize, class_count: usize, f: F) -> Result<Self, OracleError>
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        OracleHandle::with_backend(Backend::Function(Arc::new(f)), feature_count, class_count)
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    /// The underlying network when the backend can provide input
    /// gradients. Remote and function backends return `None`.
    pub fn differentiable(&self) -> Option<&Mlp> {
        match &self.backend {
            Backend::InProcess(net) => Some(net),
            _ => None,
        }
    }

    pub fn supports_gradients(&self) -> bool {
        self.differentiable().is_some()
    }

    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn stats(&self) -> OracleStats {
        OracleStats {
            total_queries: self.query_count(),
            total_wall: Duration::from_nanos(self.wall_nanos.load(Ordering::Relaxed)),
        }
    }

    /// One blackbox query.
    pub fn classify(&self, record: &[f64]) -> Result<ProbVector, OracleError> {
        if record.len() != self.feature_count {
            return Err(OracleError::DimensionMismatch {
                expected: self.feature_count,
                got: record.len(),
            });
        }
        let start = Instant::now();
        let probs = match &self.backend {
            Backend::InProcess(net) => net.predict_proba(record)?,
            Backend::Remote(r) => ProbVector::new(r.query(record)?)?,
            Backend::Function(f) => ProbVector::new(f(record))?,
        };
        if probs.len() != self.class_count {
            return Err(OracleError::ClassCount {
                expected: self.class_count,
                got: probs.len(),
            });
        }
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.wall_nanos
            .fetch_add(start.elapsed().as_nanos() as u64, Ordering::Relaxed);
        Ok(probs)
    }

    /// Predicted class (ties to the lowest index).
    pub fn predict(&self, record: &[f64]) -> Result<usize, OracleError> {
        Ok(self.classify(record)?.top().0)
    }
}
