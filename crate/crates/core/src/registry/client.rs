use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Mutex;

use base64::Engine as _;
use log::debug;
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use ureq::http::Response;
use ureq::{Agent, Body};

use super::auth::Challenge;
use super::{temp_name, ImageReference, RegistryOptions};
use crate::digest::{Digest, Hasher};
use crate::error::{Error, Result};
use crate::image_io::media_types::manifest_accept;
use crate::image_io::Descriptor;

const MANIFEST_LIMIT: u64 = 8 << 20;

pub(crate) struct Client {
    agent: Agent,
    base: String,
    repository: String,
    username: Option<String>,
    password: Option<String>,
    authorization: Mutex<Option<String>>,
}

impl Client {
    pub fn new(reference: &ImageReference, opts: &RegistryOptions) -> Result<Self> {
        let scheme = if opts.plain_http || reference.is_loopback() {
            "http"
        } else {
            "https"
        };
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(opts.timeout))
            .user_agent(concat!("stratascan/", env!("CARGO_PKG_VERSION")))
            .build()
            .into();
        Ok(Client {
            agent,
            base: format!("{scheme}://{}", reference.api_host()),
            repository: reference.repository.clone(),
            username: opts.username.clone(),
            password: opts.password.clone(),
            authorization: Mutex::new(None),
        })
    }

    fn basic_header(&self) -> Option<String> {
        let user = self.username.as_deref()?;
        let pass = self.password.as_deref().unwrap_or_default();
        let token = base64::engine::general_purpose::STANDARD.encode(format!("{user}:{pass}"));
        Some(format!("Basic {token}"))
    }

    fn get(&self, url: &str, accept: Option<&str>) -> Result<Response<Body>> {
        for attempt in 0..2 {
            let mut req = self.agent.get(url);
            if let Some(a) = accept {
                req = req.header("Accept", a);
            }
            let auth = self.authorization.lock().expect("poisoned").clone();
            if let Some(h) = auth {
                req = req.header("Authorization", h);
            }
            let resp = req
                .call()
                .map_err(|e| Error::Registry(format!("GET {url}: {e}")))?;
            let status = resp.status().as_u16();
            if status == 401 && attempt == 0 {
                let header = resp
                    .headers()
                    .get("www-authenticate")
                    .and_then(|v| v.to_str().ok())
                    .unwrap_or_default()
                    .to_string();
                self.authenticate(&header)?;
                continue;
            }
            if status == 401 || status == 403 {
                return Err(Error::AuthFailed(format!("{url} answered {status}")));
            }
            return Ok(resp);
        }
        Err(Error::AuthFailed(format!("{url}: credentials rejected")))
    }

    fn authenticate(&self, header: &str) -> Result<()> {
        let challenge = Challenge::parse(header)
            .ok_or_else(|| Error::AuthFailed("401 without a WWW-Authenticate challenge".into()))?;
        let value = match challenge.scheme.as_str() {
            "bearer" => format!("Bearer {}", self.fetch_token(&challenge)?),
            "basic" => self
                .basic_header()
                .ok_or_else(|| Error::AuthFailed("registry requires credentials".into()))?,
            other => return Err(Error::AuthFailed(format!("unsupported auth scheme {other}"))),
        };
        *self.authorization.lock().expect("poisoned") = Some(value);
        Ok(())
    }

    fn fetch_token(&self, challenge: &Challenge) -> Result<String> {
        let realm = challenge
            .realm()
            .ok_or_else(|| Error::AuthFailed("bearer challenge has no realm".into()))?;
        let default_scope = format!("repository:{}:pull", self.repository);
        let scope = challenge
            .params
            .get("scope")
            .cloned()
            .unwrap_or(default_scope);
        let mut url = format!(
            "{realm}{}scope={}",
            if realm.contains('?') { '&' } else { '?' },
            utf8_percent_encode(&scope, NON_ALPHANUMERIC)
        );
        if let Some(service) = challenge.params.get("service") {
            url.push_str(&format!(
                "&service={}",
                utf8_percent_encode(service, NON_ALPHANUMERIC)
            ));
        }
        debug!("requesting token from {realm}");
        let mut req = self.agent.get(&url);
        if let Some(basic) = self.basic_header() {
            req = req.header("Authorization", basic);
        }
        let mut resp = req
            .call()
            .map_err(|e| Error::AuthFailed(format!("token request: {e}")))?;
        if !resp.status().is_success() {
            return Err(Error::AuthFailed(format!(
                "token endpoint answered {}",
                resp.status().as_u16()
            )));
        }
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(MANIFEST_LIMIT)
            .read_to_vec()
            .map_err(|e| Error::AuthFailed(format!("token response: {e}")))?;
        let body: serde_json::Value = serde_json::from_slice(&bytes)
            .map_err(|e| Error::AuthFailed(format!("token response: {e}")))?;
        body.get("token")
            .or_else(|| body.get("access_token"))
            .and_then(|t| t.as_str())
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .ok_or_else(|| Error::AuthFailed("token response carries no token".into()))
    }

    /// Returns the manifest bytes and their media type.
    pub fn manifest(&self, reference: &str, expect: Option<&Digest>) -> Result<(Vec<u8>, String)> {
        let url = format!("{}/v2/{}/manifests/{reference}", self.base, self.repository);
        let mut resp = self.get(&url, Some(&manifest_accept()))?;
        let status = resp.status().as_u16();
        if status == 404 {
            return Err(Error::ManifestNotFound(format!("{}:{reference}", self.repository)));
        }
        if !resp.status().is_success() {
            return Err(Error::Registry(format!("GET {url} answered {status}")));
        }
        let media_type = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .map(|v| v.split(';').next().unwrap_or_default().trim().to_string())
            .filter(|v| v.starts_with("application/vnd."))
            .unwrap_or_default();
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(MANIFEST_LIMIT)
            .read_to_vec()
            .map_err(|e| Error::Registry(format!("reading {url}: {e}")))?;
        if let Some(d) = expect {
            d.verify(&bytes, "manifest")?;
        }
        Ok((bytes, media_type))
    }

    /// Streams a blob into `dir`, renaming it into place once verified.
    pub fn blob_to_dir(&self, desc: &Descriptor, dir: &Path) -> Result<()> {
        let url = format!("{}/v2/{}/blobs/{}", self.base, self.repository, desc.digest);
        let resp = self.get(&url, None)?;
        let status = resp.status().as_u16();
        if !resp.status().is_success() {
            return Err(Error::Registry(format!("GET {url} answered {status}")));
        }
        let tmp = temp_name(dir, &desc.digest);
        let outcome = (|| -> Result<Digest> {
            let mut reader = resp.into_body().into_reader();
            let mut out = BufWriter::new(File::create(&tmp)?);
            let mut hasher = Hasher::new();
            let mut buf = vec![0u8; 64 * 1024];
            let mut total = 0u64;
            loop {
                let n = match reader.read(&mut buf) {
                    Ok(0) => break,
                    Ok(n) => n,
                    Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                    Err(e) => return Err(Error::Registry(format!("reading {url}: {e}"))),
                };
                hasher.update(&buf[..n]);
                out.write_all(&buf[..n])?;
                total += n as u64;
            }
            out.flush()?;
            if total != desc.size {
                debug!("{}: expected {} bytes, got {total}", desc.digest, desc.size);
            }
            Ok(hasher.finish())
        })();
        let actual = match outcome {
            Ok(d) => d,
            Err(e) => {
                let _ = fs::remove_file(&tmp);
                return Err(e);
            }
        };
        if actual != desc.digest {
            let _ = fs::remove_file(&tmp);
            return Err(Error::DigestMismatch {
                what: format!("blob from {url}"),
                expected: desc.digest.to_string(),
                actual: actual.to_string(),
            });
        }
        fs::rename(&tmp, dir.join(desc.digest.hex()))?;
        Ok(())
    }
}
