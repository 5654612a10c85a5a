//! Model zoo: a manifest of pretrained artifacts and a verifying
//! fetcher.
//!
//! The manifest is a JSON document, readable from a local path or over
//! HTTP. Fetches stream to a `.part` file so an interrupted download
//! resumes with a byte-range request on the next attempt; the artifact
//! only takes its final name after its size and sha256 match the
//! manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::json::{self, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct ZooEntry {
    pub model_id: String,
    pub task: String,
    pub config_path: String,
    pub artifact_url: String,
    pub byte_size: u64,
    pub sha256: String,
    /// Headline metric values, as published.
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ZooManifest {
    pub entries: Vec<ZooEntry>,
}

fn zoo_err(message: impl Into<String>) -> Error {
    Error::Zoo(message.into())
}

fn entry_str(map: &BTreeMap<String, Value>, key: &str, id: &str) -> Result<String> {
    map.get(key)
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| zoo_err(format!("manifest entry {id} needs a string \"{key}\"")))
}

fn parse_entry(v: &Value, index: usize) -> Result<ZooEntry> {
    let map = v
        .as_map()
        .ok_or_else(|| zoo_err(format!("manifest entry {index} must be a mapping")))?;
    let id = format!("{index}");
    let model_id = entry_str(map, "model_id", &id)?;
    let byte_size = map
        .get("byte_size")
        .and_then(|v| v.as_i64())
        .filter(|n| *n >= 0)
        .ok_or_else(|| {
            zoo_err(format!(
                "manifest entry \"{model_id}\" needs a non-negative integer \"byte_size\""
            ))
        })? as u64;
    let sha256 = entry_str(map, "sha256", &model_id)?;
    if sha256.len() != 64 || !sha256.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()) {
        return Err(zoo_err(format!(
            "manifest entry \"{model_id}\" sha256 must be 64 lowercase hex characters"
        )));
    }
    let mut metrics = BTreeMap::new();
    if let Some(v) = map.get("metrics") {
        let metric_map = v
            .as_map()
            .ok_or_else(|| zoo_err(format!("manifest entry \"{model_id}\" metrics must be a mapping")))?;
        for (name, value) in metric_map {
            let value = value.as_f64().ok_or_else(|| {
                zoo_err(format!(
                    "manifest entry \"{model_id}\" metric \"{name}\" must be a number"
                ))
            })?;
            metrics.insert(name.clone(), value);
        }
    }
    Ok(ZooEntry {
        task: entry_str(map, "task", &model_id)?,
        config_path: entry_str(map, "config_path", &model_id)?,
        artifact_url: entry_str(map, "artifact_url", &model_id)?,
        model_id,
        byte_size,
        sha256,
        metrics,
    })
}

impl ZooManifest {
    pub fn parse(doc: &Value) -> Result<ZooManifest> {
        let root = doc
            .as_map()
            .ok_or_else(|| zoo_err("manifest must be a mapping with an \"entries\" list"))?;
        let list = root
            .get("entries")
            .and_then(|v| v.as_list())
            .ok_or_else(|| zoo_err("manifest needs an \"entries\" list"))?;
        let entries: Vec<ZooEntry> = list
            .iter()
            .enumerate()
            .map(|(i, v)| parse_entry(v, i))
            .collect::<Result<_>>()?;
        let mut seen = BTreeMap::new();
        for entry in &entries {
            if seen.insert(entry.model_id.as_str(), ()).is_some() {
                return Err(zoo_err(format!(
                    "manifest lists model \"{}\" twice",
                    entry.model_id
                )));
            }
        }
        Ok(ZooManifest { entries })
    }

    /// Reads the manifest from a local path or, for `http(s)://`
    /// sources, over HTTP.
    pub fn load(source: &str) -> Result<ZooManifest> {
        let text = if is_url(source) {
            fetch_text(source)?
        } else {
            fs::read_to_string(source).map_err(|e| Error::io(Path::new(source), e))?
        };
        ZooManifest::parse(&json::parse_named(&text, source)?)
    }

    pub fn entry(&self, model_id: &str) -> Result<&ZooEntry> {
        self.entries
            .iter()
            .find(|e| e.model_id == model_id)
            .ok_or_else(|| Error::UnknownType {
                registry: "zoo".into(),
                key: model_id.into(),
                known: self
                    .entries
                    .iter()
                    .map(|e| e.model_id.as_str())
                    .collect::<Vec<_>>()
                    .join(", "),
            })
    }
}

fn is_url(source: &str) -> bool {
    source.starts_with("http://") || source.starts_with("https://")
}

fn http_err(url: &str, e: impl std::fmt::Display) -> Error {
    Error::Http {
        url: url.to_string(),
        message: e.to_string(),
    }
}

fn fetch_text(url: &str) -> Result<String> {
    ureq::get(url)
        .call()
        .map_err(|e| http_err(url, e))?
        .body_mut()
        .read_to_string()
        .map_err(|e| http_err(url, e))
}

/// Artifact file name: the last path segment of its URL, falling back
/// to the model id for opaque URLs.
fn artifact_file_name(entry: &ZooEntry) -> String {
    entry
        .artifact_url
        .rsplit('/')
        .next()
        .filter(|s| !s.is_empty() && !s.contains(':'))
        .unwrap_or(&entry.model_id)
        .to_string()
}

fn file_sha256_hex(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(hex)
}

fn verify(path: &Path, entry: &ZooEntry) -> Result<()> {
    let len = fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    if len != entry.byte_size {
        return Err(zoo_err(format!(
            "artifact \"{}\" is {len} bytes, the manifest says {}",
            entry.model_id, entry.byte_size
        )));
    }
    let actual = file_sha256_hex(path)?;
    if actual != entry.sha256 {
        return Err(Error::ChecksumMismatch {
            model_id: entry.model_id.clone(),
            expected: entry.sha256.clone(),
            actual,
        });
    }
    Ok(())
}

/// Streams `url` into `part`, appending from byte `have` when the
/// server honors the range request. A short read keeps the partial
/// file so the next attempt resumes.
fn download(url: &str, part: &Path, have: u64) -> Result<()> {
    let request = ureq::get(url);
    let request = if have > 0 {
        request.header("Range", format!("bytes={have}-"))
    } else {
        request
    };
    let mut response = request.call().map_err(|e| http_err(url, e))?;
    let status = response.status().as_u16();
    let mut file = match (status, have > 0) {
        // Server ignored the range request; restart from scratch.
        (200, _) => fs::File::create(part).map_err(|e| Error::io(part, e))?,
        (206, true) => fs::OpenOptions::new()
            .append(true)
            .open(part)
            .map_err(|e| Error::io(part, e))?,
        _ => return Err(http_err(url, format!("unexpected status {status}"))),
    };
    let mut reader = response.body_mut().as_reader();
    std::io::copy(&mut reader, &mut file).map_err(|e| http_err(url, e))?;
    file.flush().map_err(|e| Error::io(part, e))?;
    Ok(())
}

/// Downloads an entry's artifact under `dest`, verifying size and
/// sha256. Returns the artifact path. Already-verified files are left
/// untouched; a failed verification deletes the offending file.
pub fn fetch(entry: &ZooEntry, dest: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dest).map_err(|e| Error::io(dest, e))?;
    let final_path = dest.join(artifact_file_name(entry));
    if final_path.exists() {
        match verify(&final_path, entry) {
            Ok(()) => return Ok(final_path),
            Err(_) => fs::remove_file(&final_path).map_err(|e| Error::io(&final_path, e))?,
        }
    }
    let part = final_path.with_file_name(format!("{}.part", artifact_file_name(entry)));
    let mut have = match fs::metadata(&part) {
        Ok(meta) => meta.len(),
        Err(_) => 0,
    };
    if have > entry.byte_size {
        fs::remove_file(&part).map_err(|e| Error::io(&part, e))?;
        have = 0;
    }
    if have < entry.byte_size {
        download(&entry.artifact_url, &part, have)?;
    }
    if let Err(e) = verify(&part, entry) {
        let _ = fs::remove_file(&part);
        return Err(e);
    }
    fs::rename(&part, &final_path).map_err(|e| Error::io(&final_path, e))?;
    Ok(final_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::sha256_hex;
    use std::io::{BufRead, BufReader};
    use std::net::TcpListener;
    use std::sync::mpsc;
    use std::thread;
    use tempfile::TempDir;

    /// How one accepted connection answers.
    enum Serve {
        /// Full body with a 200.
        Full,
        /// Full Content-Length header, then only this many bytes.
        Cut(usize),
        /// Honor a `Range: bytes=N-` request with a 206.
        Range,
    }

    /// One-thread test server that answers `plan.len()` connections in
    /// order, then exits. Reports each request's Range header.
    fn serve(body: Vec<u8>, plan: Vec<Serve>) -> (String, mpsc::Receiver<Option<u64>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for mode in plan {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut range = None;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    // Header names arrive lowercased.
                    if let Some(rest) = line.to_ascii_lowercase().strip_prefix("range: bytes=") {
                        range = rest.strip_suffix('-').and_then(|n| n.parse::<u64>().ok());
                    }
                }
                tx.send(range).unwrap();
                let mut stream = reader.into_inner();
                match mode {
                    Serve::Full => {
                        let head = format!(
                            "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                            body.len()
                        );
                        stream.write_all(head.as_bytes()).unwrap();
                        stream.write_all(&body).unwrap();
                    }
                    Serve::Cut(n) => {
                        let head = format!(
                            "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                            body.len()
                        );
                        stream.write_all(head.as_bytes()).unwrap();
                        stream.write_all(&body[..n]).unwrap();
                        // Dropping the stream closes the connection early.
                    }
                    Serve::Range => {
                        let from = range.unwrap() as usize;
                        let head = format!(
                            "HTTP/1.1 206 Partial Content\r\nContent-Length: {}\r\nContent-Range: bytes {}-{}/{}\r\nConnection: close\r\n\r\n",
                            body.len() - from,
                            from,
                            body.len() - 1,
                            body.len()
                        );
                        stream.write_all(head.as_bytes()).unwrap();
                        stream.write_all(&body[from..]).unwrap();
                    }
                }
            }
        });
        (addr, rx)
    }

    fn entry_for(url: &str, body: &[u8]) -> ZooEntry {
        ZooEntry {
            model_id: "demo_model".into(),
            task: "attribute".into(),
            config_path: "configs/attribute.json".into(),
            artifact_url: format!("{url}/weights/demo.ckpt"),
            byte_size: body.len() as u64,
            sha256: sha256_hex(body),
            metrics: BTreeMap::new(),
        }
    }

    fn manifest_doc(sha: &str) -> String {
        format!(
            r#"{{"entries": [
                {{"model_id": "a", "task": "attribute", "config_path": "c.json",
                  "artifact_url": "http://h/a.ckpt", "byte_size": 3, "sha256": "{sha}",
                  "metrics": {{"recall_top3": 0.9}}}}
            ]}}"#
        )
    }

    #[test]
    fn manifest_parses_and_validates() {
        let good = manifest_doc(&"ab".repeat(32));
        let manifest = ZooManifest::parse(&json::parse(&good).unwrap()).unwrap();
        assert_eq!(manifest.entries.len(), 1);
        assert_eq!(manifest.entries[0].metrics["recall_top3"], 0.9);
        assert!(manifest.entry("a").is_ok());
        assert!(matches!(
            manifest.entry("missing"),
            Err(Error::UnknownType { .. })
        ));

        let short = manifest_doc("abcd");
        assert!(matches!(
            ZooManifest::parse(&json::parse(&short).unwrap()),
            Err(Error::Zoo(_))
        ));
        let upper = manifest_doc(&"AB".repeat(32));
        assert!(matches!(
            ZooManifest::parse(&json::parse(&upper).unwrap()),
            Err(Error::Zoo(_))
        ));
    }

    #[test]
    fn duplicate_model_ids_are_rejected() {
        let sha = "ab".repeat(32);
        let doc = format!(
            r#"{{"entries": [
                {{"model_id": "a", "task": "t", "config_path": "c", "artifact_url": "u", "byte_size": 1, "sha256": "{sha}"}},
                {{"model_id": "a", "task": "t", "config_path": "c", "artifact_url": "u", "byte_size": 1, "sha256": "{sha}"}}
            ]}}"#
        );
        assert!(matches!(
            ZooManifest::parse(&json::parse(&doc).unwrap()),
            Err(Error::Zoo(_))
        ));
    }

    #[test]
    fn fetch_verifies_and_is_idempotent() {
        let body: Vec<u8> = (0u32..4096).map(|i| (i % 251) as u8).collect();
        let (url, _rx) = serve(body.clone(), vec![Serve::Full]);
        let entry = entry_for(&url, &body);
        let dest = TempDir::new().unwrap();
        let path = fetch(&entry, dest.path()).unwrap();
        assert_eq!(fs::read(&path).unwrap(), body);
        assert_eq!(path.file_name().unwrap(), "demo.ckpt");
        // Second call verifies the existing file without a request (the
        // server already exited).
        assert_eq!(fetch(&entry, dest.path()).unwrap(), path);
    }

    #[test]
    fn tampered_artifact_is_deleted() {
        let body = vec![7u8; 1024];
        let mut tampered = body.clone();
        tampered[100] ^= 0xFF;
        let (url, _rx) = serve(tampered, vec![Serve::Full]);
        let entry = entry_for(&url, &body);
        let dest = TempDir::new().unwrap();
        let err = fetch(&entry, dest.path()).unwrap_err();
        assert!(matches!(err, Error::ChecksumMismatch { .. }), "{err}");
        assert_eq!(fs::read_dir(dest.path()).unwrap().count(), 0);
    }

    #[test]
    fn interrupted_download_resumes_with_a_range_request() {
        let body: Vec<u8> = (0u32..10_000).map(|i| (i % 199) as u8).collect();
        let (url, rx) = serve(body.clone(), vec![Serve::Cut(2048), Serve::Range]);
        let entry = entry_for(&url, &body);
        let dest = TempDir::new().unwrap();

        let err = fetch(&entry, dest.path()).unwrap_err();
        assert!(matches!(err, Error::Http { .. }), "{err}");
        assert_eq!(rx.recv().unwrap(), None);
        let part = dest.path().join("demo.ckpt.part");
        let have = fs::metadata(&part).unwrap().len();
        assert!(have > 0 && have < body.len() as u64);

        let path = fetch(&entry, dest.path()).unwrap();
        assert_eq!(rx.recv().unwrap(), Some(have));
        assert_eq!(fs::read(&path).unwrap(), body);
        assert!(!part.exists());
    }

    #[test]
    fn size_mismatch_is_a_zoo_error() {
        let body = vec![1u8; 256];
        let (url, _rx) = serve(body.clone(), vec![Serve::Full]);
        let mut entry = entry_for(&url, &body);
        entry.byte_size += 1;
        let dest = TempDir::new().unwrap();
        let err = fetch(&entry, dest.path()).unwrap_err();
        assert!(matches!(err, Error::Zoo(_)), "{err}");
        assert_eq!(fs::read_dir(dest.path()).unwrap().count(), 0);
    }
}
