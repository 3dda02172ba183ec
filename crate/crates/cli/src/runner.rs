use std::fs::{self, File, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::Recipe;
use crate::recipes;

const LOCK: &str = ".grsd.lock";

pub const SEED_SCHEME: &str = "derive_seed(parent, stream) = splitmix64(parent ^ splitmix64(stream ^ 0x9E3779B97F4A7C15)); \
named streams hash their label with 64-bit FNV-1a; ensemble members and replicates use their index as the stream";

/// Exclusive claim on a run directory, released on drop.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => anyhow::bail!(
                "run directory {} is in use by another process (remove {} if it is stale)",
                dir.display(),
                path.display()
            ),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub enum RunFailure {
    /// The run directory could not be prepared; nothing was written.
    Setup(anyhow::Error),
    /// A diagnostic failed; `error.json` was written.
    Runtime(anyhow::Error),
}

fn remove_if_present(path: &Path) -> std::io::Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != ErrorKind::NotFound => Err(e),
        _ => Ok(()),
    }
}

/// Removes a previous run's manifest along with every artifact it lists.
fn retract_previous(dir: &Path) -> anyhow::Result<()> {
    let path = dir.join("manifest.json");
    let Ok(text) = fs::read(&path) else { return Ok(()) };
    if let Ok(old) = serde_json::from_slice::<Value>(&text) {
        let names = old["artifacts"].as_array().into_iter().flatten().filter_map(|a| a["file"].as_str());
        for name in names.filter(|n| Path::new(n).file_name() == Some(n.as_ref())) {
            remove_if_present(&dir.join(name))?;
        }
    }
    remove_if_present(&path)?;
    Ok(())
}

fn write_error(dir: &Path, recipe: &Recipe, err: &anyhow::Error) -> anyhow::Result<()> {
    retract_previous(dir)?;
    let body = json!({
        "recipe": recipe.recipe,
        "seed": recipe.seed,
        "error": err.to_string(),
        "chain": err.chain().skip(1).map(|e| e.to_string()).collect::<Vec<_>>(),
    });
    fs::write(dir.join("error.json"), serde_json::to_vec_pretty(&body)?)?;
    Ok(())
}

/// Runs `recipe` into `out`, writing artifacts and a manifest of their digests.
pub fn execute(recipe: &Recipe, out: &Path, threads: Option<usize>) -> Result<Value, RunFailure> {
    fs::create_dir_all(out).map_err(|e| RunFailure::Setup(e.into()))?;
    let _lock = DirLock::acquire(out).map_err(RunFailure::Setup)?;

    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| RunFailure::Setup(e.into()))?
    };
    let outcome = pool.install(|| recipes::run(recipe)).map_err(anyhow::Error::from);
    let result = outcome.and_then(|o| write_outputs(recipe, out, o));
    match result {
        Ok(manifest) => Ok(manifest),
        Err(e) => {
            if let Err(w) = write_error(out, recipe, &e) {
                return Err(RunFailure::Runtime(e.context(format!("also failed to write error.json: {w}"))));
            }
            Err(RunFailure::Runtime(e))
        }
    }
}

fn write_outputs(recipe: &Recipe, out: &Path, o: recipes::Outcome) -> anyhow::Result<Value> {
    let mut files = o.artifacts;
    let summary = json!({ "recipe": recipe.recipe, "seed": recipe.seed, "summary": o.summary });
    files.push(("summary.json".into(), serde_json::to_vec_pretty(&summary)?));
    files.push(("summary.txt".into(), o.text.into_bytes()));
    files.push(("recipe.toml".into(), recipe.to_toml().into_bytes()));
    files.sort_by(|a, b| a.0.cmp(&b.0));

    let mut listed = Vec::with_capacity(files.len());
    for (name, bytes) in &files {
        let mut f = File::create(out.join(name))?;
        std::io::Write::write_all(&mut f, bytes)?;
        listed.push(json!({ "file": name, "sha256": sha256_hex(bytes), "bytes": bytes.len() }));
    }
    remove_if_present(&out.join("error.json"))?;
    let manifest = json!({
        "tool": "grsd",
        "version": env!("CARGO_PKG_VERSION"),
        "recipe": recipe.recipe,
        "seed": recipe.seed,
        "seed_scheme": SEED_SCHEME,
        "derived_seeds": o.seeds,
        "params": serde_json::to_value(&recipe.params)?,
        "artifacts": listed,
    });
    fs::write(out.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}
