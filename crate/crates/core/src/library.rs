//! The curated clip palette: `library.json` (human-editable metadata) next to
//! `latents.bin` (one DMWB tensor per clip) and the audio files themselves.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{mel_spectrogram_image, read_wav, AudioClip, CLIP_SECONDS};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::neural::container::{self, Entry};
use crate::neural::{spectrogram_tensor, LatentVec, Tensor, WeightBundle, LATENT_DIM};

pub const MANIFEST_FILE: &str = "library.json";
pub const LATENTS_FILE: &str = "latents.bin";
pub const MANIFEST_VERSION: u32 = 1;
const LATENT_PREFIX: &str = "latent/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    /// Relative to the library directory.
    pub file: String,
    pub sha256: String,
    pub duration_s: f64,
    /// Lives in the sidecar, not in the JSON.
    #[serde(skip, default = "LatentVec::zeros")]
    pub latent: LatentVec,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub gain_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryManifest {
    pub version: u32,
    /// Content hash of the bundle the latents were computed with.
    pub weights_hash: String,
    pub clips: Vec<ClipEntry>,
}

/// Derive a clip id from a file name: lowercase stem, anything outside
/// `[a-z0-9]` replaced by `_`.
pub fn clip_id_from_path(path: &Path) -> Result<String> {
    let stem = path
        .file_stem()
        .ok_or_else(|| Error::invalid(format!("{} has no file stem", path.display())))?
        .to_string_lossy()
        .to_lowercase();
    let id: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    if id.is_empty() {
        return Err(Error::invalid(format!("{} yields an empty id", path.display())));
    }
    Ok(id)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn apply_gain(clip: AudioClip, gain_db: f64) -> Result<AudioClip> {
    if gain_db == 0.0 {
        return Ok(clip);
    }
    let g = 10f64.powf(gain_db / 20.0) as f32;
    let sr = clip.sample_rate();
    AudioClip::from_clamped(clip.into_samples().into_iter().map(|s| s * g).collect(), sr)
}

/// Audio latent (posterior mean) of a library-length clip.
pub fn encode_clip(bundle: &WeightBundle, clip: &AudioClip) -> Result<LatentVec> {
    let image = mel_spectrogram_image(clip)?;
    Ok(bundle.audio_encoder().encode(&spectrogram_tensor(&image))?.0)
}

/// A loaded library directory.
#[derive(Debug, Clone)]
pub struct ClipLibrary {
    root: PathBuf,
    manifest: LibraryManifest,
}

impl ClipLibrary {
    /// Encode every `*.wav` in `dir` (sorted by file name) and write the
    /// manifest and sidecar into the same directory.
    pub fn build(dir: &Path, bundle: &WeightBundle) -> Result<Self> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
            })
            .collect();
        files.sort();

        let mut lib = Self {
            root: dir.to_path_buf(),
            manifest: LibraryManifest {
                version: MANIFEST_VERSION,
                weights_hash: bundle.content_hash(),
                clips: Vec::new(),
            },
        };
        for path in &files {
            let id = clip_id_from_path(path)?;
            if lib.get(&id).is_some() {
                return Err(Error::DuplicateId(id));
            }
            match lib.make_entry(path, id, Vec::new(), 0.0, bundle) {
                Ok(entry) => lib.insert(entry),
                Err(e) => warn!("skipping {}: {e}", path.display()),
            }
        }
        if lib.is_empty() {
            return Err(Error::EmptyLibrary);
        }
        lib.save()?;
        info!("built library of {} clips in {}", lib.len(), dir.display());
        Ok(lib)
    }

    /// Read and validate `library.json` + `latents.bin`.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let mut manifest: LibraryManifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Integrity(format!(
                "manifest version {} is not supported",
                manifest.version
            )));
        }

        let latents_path = dir.join(LATENTS_FILE);
        let bytes = std::fs::read(&latents_path).map_err(|e| Error::io(&latents_path, e))?;
        let mut latents: BTreeMap<String, Tensor> = BTreeMap::new();
        for (name, entry) in container::decode(&bytes)? {
            match (name.strip_prefix(LATENT_PREFIX), entry) {
                (Some(id), Entry::F32(t)) => {
                    latents.insert(id.to_string(), t);
                }
                _ => return Err(Error::Integrity(format!("unexpected sidecar entry `{name}`"))),
            }
        }

        let mut seen = std::collections::BTreeSet::new();
        for clip in &mut manifest.clips {
            if !seen.insert(clip.id.clone()) {
                return Err(Error::DuplicateId(clip.id.clone()));
            }
            let t = latents
                .remove(&clip.id)
                .ok_or_else(|| Error::Integrity(format!("no latent for clip `{}`", clip.id)))?;
            if t.dims() != [LATENT_DIM] {
                return Err(Error::Integrity(format!(
                    "latent for `{}` has shape {:?}",
                    clip.id,
                    t.dims()
                )));
            }
            clip.latent = LatentVec::new(t.into_data())?;
            let path = dir.join(&clip.file);
            let audio = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let digest = sha256_hex(&audio);
            if digest != clip.sha256 {
                return Err(Error::Integrity(format!(
                    "{} hash {digest} does not match manifest {}",
                    clip.file, clip.sha256
                )));
            }
        }
        if let Some(id) = latents.keys().next() {
            return Err(Error::Integrity(format!("sidecar latent `{id}` has no manifest entry")));
        }
        manifest.clips.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self {
            root: dir.to_path_buf(),
            manifest,
        })
    }

    /// Load, re-encoding every clip if the latents came from other weights.
    pub fn load_for(dir: &Path, bundle: &WeightBundle) -> Result<Self> {
        let mut lib = Self::load(dir)?;
        let hash = bundle.content_hash();
        if lib.manifest.weights_hash != hash {
            warn!(
                "library latents were computed with weights {}, loaded weights are {hash}; rebuilding",
                lib.manifest.weights_hash
            );
            lib.reencode(bundle)?;
        }
        Ok(lib)
    }

    /// Recompute all latents with `bundle` and save.
    pub fn reencode(&mut self, bundle: &WeightBundle) -> Result<()> {
        for i in 0..self.manifest.clips.len() {
            let audio = self.load_audio(&self.manifest.clips[i])?;
            self.manifest.clips[i].latent = encode_clip(bundle, &audio)?;
        }
        self.manifest.weights_hash = bundle.content_hash();
        self.save()
    }

    fn make_entry(
        &self,
        path: &Path,
        id: String,
        tags: Vec<String>,
        gain_db: f64,
        bundle: &WeightBundle,
    ) -> Result<ClipEntry> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let audio = apply_gain(read_wav(path)?.center_crop(CLIP_SECONDS)?, gain_db)?;
        let latent = encode_clip(bundle, &audio)?;
        let file = path
            .strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned();
        Ok(ClipEntry {
            id,
            file,
            sha256: sha256_hex(&bytes),
            duration_s: audio.duration_s(),
            latent,
            tags,
            gain_db,
        })
    }

    fn insert(&mut self, entry: ClipEntry) {
        let pos = self
            .manifest
            .clips
            .binary_search_by(|c| c.id.as_str().cmp(&entry.id))
            .unwrap_or_else(|p| p);
        self.manifest.clips.insert(pos, entry);
    }

    /// Add a WAV file; files outside the library directory are copied in.
    pub fn add_clip(
        &mut self,
        source: &Path,
        tags: Vec<String>,
        gain_db: f64,
        bundle: &WeightBundle,
    ) -> Result<ClipEntry> {
        if bundle.content_hash() != self.manifest.weights_hash {
            return Err(Error::Integrity(
                "bundle differs from the one the library was encoded with".into(),
            ));
        }
        let id = clip_id_from_path(source)?;
        if self.get(&id).is_some() {
            return Err(Error::DuplicateId(id));
        }
        let in_root = source.parent().map(|p| same_dir(p, &self.root)).unwrap_or(false);
        let path = if in_root {
            source.to_path_buf()
        } else {
            let name = source
                .file_name()
                .ok_or_else(|| Error::invalid(format!("{} has no file name", source.display())))?;
            let dest = self.root.join(name);
            if dest.exists() {
                return Err(Error::invalid(format!("{} already exists", dest.display())));
            }
            std::fs::copy(source, &dest).map_err(|e| Error::io(&dest, e))?;
            dest
        };
        let entry = self.make_entry(&path, id, tags, gain_db, bundle)?;
        self.insert(entry.clone());
        self.save()?;
        Ok(entry)
    }

    /// Drop a clip from the manifest; the audio file stays on disk.
    pub fn remove_clip(&mut self, id: &str) -> Result<ClipEntry> {
        let pos = self
            .manifest
            .clips
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))?;
        let entry = self.manifest.clips.remove(pos);
        self.save()?;
        Ok(entry)
    }

    pub fn latents_bytes(&self) -> Vec<u8> {
        let entries: Vec<(String, Entry)> = self
            .manifest
            .clips
            .iter()
            .map(|c| {
                let t = Tensor::new(vec![LATENT_DIM], c.latent.as_slice().to_vec()).expect("latent shape");
                (format!("{LATENT_PREFIX}{}", c.id), Entry::F32(t))
            })
            .collect();
        container::encode(&entries)
    }

    pub fn manifest_bytes(&self) -> Vec<u8> {
        let mut s = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        s.push('\n');
        s.into_bytes()
    }

    /// Sidecar first, so a crash never leaves a manifest naming missing latents.
    pub fn save(&self) -> Result<()> {
        write_atomic(&self.root.join(LATENTS_FILE), &self.latents_bytes())?;
        write_atomic(&self.root.join(MANIFEST_FILE), &self.manifest_bytes())
    }

    /// Hash over manifest and sidecar bytes.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.manifest_bytes());
        h.update(self.latents_bytes());
        hex::encode(h.finalize())
    }

    /// Center-cropped, gain-adjusted audio of an entry.
    pub fn load_audio(&self, entry: &ClipEntry) -> Result<AudioClip> {
        let clip = read_wav(&self.root.join(&entry.file))?.center_crop(CLIP_SECONDS)?;
        apply_gain(clip, entry.gain_db)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &LibraryManifest {
        &self.manifest
    }

    pub fn weights_hash(&self) -> &str {
        &self.manifest.weights_hash
    }

    /// Entries sorted by id.
    pub fn clips(&self) -> &[ClipEntry] {
        &self.manifest.clips
    }

    pub fn get(&self, id: &str) -> Option<&ClipEntry> {
        self.manifest
            .clips
            .binary_search_by(|c| c.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.manifest.clips[i])
    }

    pub fn len(&self) -> usize {
        self.manifest.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.clips.is_empty()
    }
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => a == b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_sanitized() {
        assert_eq!(clip_id_from_path(Path::new("a/Kick Loop-01.wav")).unwrap(), "kick_loop_01");
        assert_eq!(clip_id_from_path(Path::new("x.WAV")).unwrap(), "x");
    }

    #[test]
    fn gain_scales_amplitude() {
        let c = AudioClip::new(vec![0.5, -0.25], 22050).unwrap();
        let g = apply_gain(c, -20.0 * 2f64.log10()).unwrap();
        assert!((g.samples()[0] - 0.25).abs() < 1e-6);
        assert!((g.samples()[1] + 0.125).abs() < 1e-6);
    }
}
