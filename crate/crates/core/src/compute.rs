//! The directory of reviewed compute functions, shared by the escrow and the
//! offload servers it controls.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::Dataframe;

/// Output of a compute function. The escrow treats the payload as opaque.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutput {
    pub content_type: String,
    pub payload: Vec<u8>,
}

impl RunOutput {
    pub fn new(content_type: impl Into<String>, payload: Vec<u8>) -> Self {
        Self {
            content_type: content_type.into(),
            payload,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComputeError {
    #[error("input has the wrong shape: {0}")]
    BadShape(String),
    #[error("compute failed: {0}")]
    Failed(String),
}

pub type ComputeFn = Arc<dyn Fn(&Dataframe) -> Result<RunOutput, ComputeError> + Send + Sync>;

#[derive(Clone)]
pub struct RegisteredFn {
    pub func: ComputeFn,
    pub deterministic: bool,
}

impl fmt::Debug for RegisteredFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegisteredFn")
            .field("deterministic", &self.deterministic)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("compute signature already registered: {0}")]
    DuplicateSignature(String),
    #[error("unknown compute signature: {0}")]
    UnknownSignature(String),
}

/// The signatures a server hosts, as published in its manifest file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryManifest {
    pub server_id: String,
    pub signatures: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ComputeRegistry {
    fns: BTreeMap<String, RegisteredFn>,
}

impl ComputeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, sig: &str, func: F, deterministic: bool) -> Result<(), RegistryError>
    where
        F: Fn(&Dataframe) -> Result<RunOutput, ComputeError> + Send + Sync + 'static,
    {
        self.register_arc(sig, Arc::new(func), deterministic)
    }

    pub fn register_arc(&mut self, sig: &str, func: ComputeFn, deterministic: bool) -> Result<(), RegistryError> {
        if self.fns.contains_key(sig) {
            return Err(RegistryError::DuplicateSignature(sig.to_string()));
        }
        self.fns.insert(sig.to_string(), RegisteredFn { func, deterministic });
        Ok(())
    }

    pub fn get(&self, sig: &str) -> Option<&RegisteredFn> {
        self.fns.get(sig)
    }

    pub fn contains(&self, sig: &str) -> bool {
        self.fns.contains_key(sig)
    }

    pub fn is_empty(&self) -> bool {
        self.fns.is_empty()
    }

    pub fn signatures(&self) -> Vec<String> {
        self.fns.keys().cloned().collect()
    }

    pub fn manifest(&self, server_id: &str) -> RegistryManifest {
        RegistryManifest {
            server_id: server_id.to_string(),
            signatures: self.signatures(),
        }
    }

    /// The subset of this registry named by a manifest.
    pub fn restrict_to(&self, manifest: &RegistryManifest) -> Result<ComputeRegistry, RegistryError> {
        let mut out = ComputeRegistry::new();
        for sig in &manifest.signatures {
            let f = self
                .get(sig)
                .ok_or_else(|| RegistryError::UnknownSignature(sig.clone()))?;
            out.fns.insert(sig.clone(), f.clone());
        }
        Ok(out)
    }
}
