//! Checkpoint directories: `config.txt`, `manifest.txt` and one NTF1 file
//! per tensor.
//!
//! The manifest starts with `size<TAB>H<TAB>W`, followed by one
//! `name<TAB>d0,d1,..<TAB>file` line per tensor.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::ntf;
use crate::params::ParamStore;
use crate::tensor::Tensor;

fn stores(model: &Model) -> Vec<&ParamStore> {
    let mut v = vec![model.net.store(), model.disc.store()];
    if model.config.backbone.trainable {
        v.push(model.backbone.store());
    }
    v
}

fn shape_str(s: &[usize]) -> String {
    s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

pub fn save(dir: impl AsRef<Path>, model: &Model) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.txt"), model.config.to_kv_string())?;
    let (h, w) = model.size();
    let mut manifest = format!("size\t{h}\t{w}\n");
    for store in stores(model) {
        for id in store.ids() {
            let name = store.name(id);
            let file = format!("{name}.ntf");
            ntf::save(store.get(id), dir.join(&file))?;
            let _ = writeln!(manifest, "{name}\t{}\t{file}", shape_str(store.get(id).shape()));
        }
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

struct Manifest {
    size: (usize, usize),
    entries: Vec<(String, Vec<usize>, String)>,
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(dir.join("manifest.txt"))?;
    let bad = |n: usize, why: &str| Error::Checkpoint(format!("manifest line {}: {why}", n + 1));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let size = match lines.next() {
        Some((n, l)) => {
            let f: Vec<&str> = l.split('\t').collect();
            match f[..] {
                ["size", h, w] => (
                    h.parse().map_err(|_| bad(n, "bad height"))?,
                    w.parse().map_err(|_| bad(n, "bad width"))?,
                ),
                _ => return Err(bad(n, "expected size header")),
            }
        }
        None => return Err(Error::Checkpoint("empty manifest".into())),
    };
    let mut entries = Vec::new();
    for (n, l) in lines {
        let f: Vec<&str> = l.split('\t').collect();
        let [name, shape, file] = f[..] else {
            return Err(bad(n, "expected name, shape and file"));
        };
        let shape = shape
            .split(',')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(n, "bad shape"))?;
        entries.push((name.to_string(), shape, file.to_string()));
    }
    Ok(Manifest { size, entries })
}

/// Input size the checkpoint was built for.
pub fn checkpoint_size(dir: impl AsRef<Path>) -> Result<(usize, usize)> {
    Ok(read_manifest(dir.as_ref())?.size)
}

pub fn load_config(dir: impl AsRef<Path>) -> Result<Config> {
    Config::load(dir.as_ref().join("config.txt"))
}

/// Overwrite `model`'s parameters from `dir`. Every parameter must be
/// present with the same shape, and the checkpoint may not contain extras.
pub fn load_weights(dir: impl AsRef<Path>, model: &mut Model) -> Result<()> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    let mut table: HashMap<&str, (&[usize], &str)> = m
        .entries
        .iter()
        .map(|(n, s, f)| (n.as_str(), (s.as_slice(), f.as_str())))
        .collect();
    let trainable_backbone = model.config.backbone.trainable;
    let mut loaded: Vec<(usize, crate::params::ParamId, Tensor)> = Vec::new();
    {
        let mut all = vec![model.net.store(), model.disc.store()];
        if trainable_backbone {
            all.push(model.backbone.store());
        }
        for (si, store) in all.into_iter().enumerate() {
            for id in store.ids() {
                let name = store.name(id);
                let (shape, file) = table
                    .remove(name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
                let want = store.get(id).shape();
                if shape != want {
                    return Err(Error::Checkpoint(format!("{name}: checkpoint shape {shape:?}, model expects {want:?}")));
                }
                let t = ntf::load(dir.join(file))?;
                if t.shape() != want {
                    return Err(Error::Checkpoint(format!("{name}: file shape {:?}, model expects {want:?}", t.shape())));
                }
                loaded.push((si, id, t));
            }
        }
    }
    if let Some(extra) = table.keys().min() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    for (si, id, t) in loaded {
        let store = match si {
            0 => model.net.store_mut(),
            1 => model.disc.store_mut(),
            _ => model.backbone.store_mut(),
        };
        *store.get_mut(id) = t;
    }
    Ok(())
}

/// Rebuild a model from a checkpoint directory.
pub fn load(dir: impl AsRef<Path>) -> Result<Model> {
    let dir = dir.as_ref();
    let cfg = load_config(dir)?;
    let (h, w) = checkpoint_size(dir)?;
    let mut model = Model::new(&cfg, h, w)?;
    load_weights(dir, &mut model)?;
    Ok(model)
}
