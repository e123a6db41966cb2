use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use crate::codebooks::{
    dft_codebook, read_codebook, spherical_codebook, write_codebook, Codebook, CodebookKind, Precision,
};
use crate::error::Result;
use crate::model::ScenarioGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Key {
    kind: CodebookKind,
    n_t: usize,
    n_r: usize,
    wavelength: u64,
    beta: u64,
    r_min: u64,
    r_max: u64,
}

impl Key {
    fn file_name(&self) -> String {
        format!(
            "{}_{}x{}_{:016x}_{:016x}_{:016x}_{:016x}.nfcb",
            self.kind.name(),
            self.n_t,
            self.n_r,
            self.wavelength,
            self.beta,
            self.r_min,
            self.r_max
        )
    }
}

/// Location-independent codebooks shared across trials, optionally persisted.
///
/// Keys use the exact bit patterns of the parameters, so a cached codebook is
/// only reused for an identical construction.
#[derive(Debug, Default)]
pub struct CodebookCache {
    dir: Option<PathBuf>,
    entries: Mutex<HashMap<Key, Arc<Codebook>>>,
}

impl CodebookCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        CodebookCache {
            dir,
            entries: Mutex::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dft(&self, geom: &ScenarioGeometry, beta: f64) -> Result<Arc<Codebook>> {
        let key = Key {
            kind: CodebookKind::Dft,
            n_t: geom.n_t(),
            n_r: geom.n_r(),
            wavelength: 0,
            beta: beta.to_bits(),
            r_min: 0,
            r_max: 0,
        };
        self.get_or_build(key, || dft_codebook(geom.n_t(), geom.n_r(), beta))
    }

    /// Polar-domain codebook. It depends on the arrays only, not on the UE position.
    pub fn spherical(&self, geom: &ScenarioGeometry, beta: f64, r_min: f64, r_max: f64) -> Result<Arc<Codebook>> {
        let key = Key {
            kind: CodebookKind::Spherical,
            n_t: geom.n_t(),
            n_r: geom.n_r(),
            wavelength: geom.wavelength.to_bits(),
            beta: beta.to_bits(),
            r_min: r_min.to_bits(),
            r_max: r_max.to_bits(),
        };
        self.get_or_build(key, || spherical_codebook(geom, beta, r_min, r_max))
    }

    fn get_or_build(&self, key: Key, build: impl FnOnce() -> Result<Codebook>) -> Result<Arc<Codebook>> {
        if let Some(cb) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(cb));
        }
        let cb = match &self.dir {
            Some(dir) => {
                let path = dir.join(key.file_name());
                if path.exists() {
                    read_codebook(&path)?
                } else {
                    let cb = build()?;
                    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
                    write_codebook(&cb, &path, Precision::Complex128)?;
                    cb
                }
            }
            None => build()?,
        };
        let cb = Arc::new(cb);
        let mut entries = self.entries.lock().expect("cache lock");
        Ok(Arc::clone(entries.entry(key).or_insert(cb)))
    }
}
