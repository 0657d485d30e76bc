use std::io::{self, Read};

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use super::media_types::*;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compression {
    None,
    Gzip,
    Zstd,
}

impl Compression {
    pub fn from_media_type(media_type: &str) -> Result<Self> {
        if media_type.ends_with("+encrypted") {
            return Err(Error::UnsupportedMediaType(format!(
                "{media_type} (encrypted layers are not supported)"
            )));
        }
        let base = media_type.strip_prefix("application/vnd.oci.image.layer.nondistributable.v1.");
        let c = match media_type {
            OCI_LAYER_TAR | DOCKER_LAYER_TAR => Compression::None,
            OCI_LAYER_GZIP | DOCKER_LAYER_GZIP | DOCKER_FOREIGN_LAYER_GZIP => Compression::Gzip,
            OCI_LAYER_ZSTD => Compression::Zstd,
            _ => match base {
                Some("tar") => Compression::None,
                Some("tar+gzip") => Compression::Gzip,
                Some("tar+zstd") => Compression::Zstd,
                _ => return Err(Error::UnsupportedMediaType(media_type.to_string())),
            },
        };
        Ok(c)
    }

    pub fn oci_media_type(self) -> &'static str {
        match self {
            Compression::None => OCI_LAYER_TAR,
            Compression::Gzip => OCI_LAYER_GZIP,
            Compression::Zstd => OCI_LAYER_ZSTD,
        }
    }
}

/// Guesses the compression of a blob from its leading magic bytes.
pub fn sniff_compression(blob: &[u8]) -> Compression {
    if blob.starts_with(&[0x1f, 0x8b]) {
        Compression::Gzip
    } else if blob.starts_with(&[0x28, 0xb5, 0x2f, 0xfd]) {
        Compression::Zstd
    } else {
        Compression::None
    }
}

/// Decompresses a layer blob according to its declared media type.
pub fn decompress_layer(blob: &[u8], media_type: &str) -> Result<Vec<u8>> {
    decompress(blob, Compression::from_media_type(media_type)?)
}

pub(crate) fn decompress(blob: &[u8], compression: Compression) -> Result<Vec<u8>> {
    let map = |e: io::Error, what: &str| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::TruncatedStream(format!("{what} stream ended early")),
        _ => Error::TruncatedStream(format!("{what} stream is corrupt: {e}")),
    };
    match compression {
        Compression::None => Ok(blob.to_vec()),
        Compression::Gzip => {
            let mut out = Vec::with_capacity(blob.len().saturating_mul(3));
            MultiGzDecoder::new(blob)
                .read_to_end(&mut out)
                .map_err(|e| map(e, "gzip"))?;
            Ok(out)
        }
        Compression::Zstd => {
            let mut out = Vec::with_capacity(blob.len().saturating_mul(3));
            zstd::stream::read::Decoder::new(blob)
                .map_err(|e| map(e, "zstd"))?
                .read_to_end(&mut out)
                .map_err(|e| map(e, "zstd"))?;
            Ok(out)
        }
    }
}
