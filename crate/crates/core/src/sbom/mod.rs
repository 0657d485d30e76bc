//! SPDX 2.3 JSON documents.
//!
//! The image is one package; every analyzed package and every download
//! found in the build history is a component it CONTAINS. The layer a
//! package first appeared in, and whether it was later obscured, are
//! recorded as package annotations.

mod purl;

use std::collections::BTreeSet;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::analyzers::{sort_packages, Ecosystem, OsRelease, Package, Provenance};
use crate::containerfile::ExternalPackageRef;
use crate::digest::Digest;

pub use purl::{package_purl, Purl};

pub const SPDX_VERSION: &str = "SPDX-2.3";
pub const DATA_LICENSE: &str = "CC0-1.0";
pub const NAMESPACE_BASE: &str = "https://stratascan.local/spdxdocs";
pub const NOASSERTION: &str = "NOASSERTION";
pub const IMAGE_SPDX_ID: &str = "SPDXRef-Image";
pub const DOCUMENT_SPDX_ID: &str = "SPDXRef-DOCUMENT";

pub fn tool_name() -> String {
    format!("stratascan-{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SbomDocument {
    pub spdx_version: String,
    pub data_license: String,
    #[serde(rename = "SPDXID")]
    pub spdx_id: String,
    pub name: String,
    pub document_namespace: String,
    pub creation_info: CreationInfo,
    pub document_describes: Vec<String>,
    pub packages: Vec<SpdxPackage>,
    pub relationships: Vec<Relationship>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CreationInfo {
    pub created: String,
    pub creators: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SpdxPackage {
    #[serde(rename = "SPDXID")]
    pub spdx_id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version_info: Option<String>,
    pub supplier: String,
    pub download_location: String,
    pub files_analyzed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_package_purpose: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub external_refs: Vec<ExternalRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<Annotation>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExternalRef {
    pub reference_category: String,
    pub reference_type: String,
    pub reference_locator: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Annotation {
    pub annotation_date: String,
    pub annotation_type: String,
    pub annotator: String,
    pub comment: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Relationship {
    pub spdx_element_id: String,
    pub relationship_type: String,
    pub related_spdx_element: String,
}

/// What the document says about the image itself.
#[derive(Clone, Debug)]
pub struct ImageMetadata {
    pub name: String,
    pub digest: Digest,
    pub os: Option<OsRelease>,
}

/// The component a download found in the build history becomes.
pub fn ref_package(r: &ExternalPackageRef) -> Package {
    let mut p = Package::new(Ecosystem::External, r.inferred_name.clone(), r.inferred_version.clone())
        .with_provenance(Provenance::External);
    p.source_layer = r.layer.unwrap_or(0);
    p.download_location = Some(r.url.clone());
    p
}

/// Analyzed packages plus one component per download, in document order.
pub fn components(packages: &[Package], refs: &[ExternalPackageRef]) -> Vec<Package> {
    let mut all: Vec<Package> = packages.to_vec();
    all.extend(refs.iter().map(ref_package));
    sort_packages(&mut all);
    all
}

fn sanitize_id(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '-' })
        .collect()
}

/// The last path component of an image name, without tag or digest.
fn image_short_name(name: &str) -> &str {
    let no_digest = name.split('@').next().unwrap_or(name);
    let last = no_digest.rsplit('/').next().unwrap_or(no_digest);
    last.split(':').next().unwrap_or(last)
}

pub fn document_namespace(meta: &ImageMetadata) -> String {
    format!("{NAMESPACE_BASE}/{}-{}", sanitize_id(image_short_name(&meta.name)), meta.digest.hex())
}

pub fn format_clock(clock: DateTime<Utc>) -> String {
    clock.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn emit_spdx(
    packages: &[Package],
    refs: &[ExternalPackageRef],
    meta: &ImageMetadata,
    clock: DateTime<Utc>,
) -> SbomDocument {
    let created = format_clock(clock);
    let annotator = format!("Tool: {}", tool_name());
    let annotate = |comment: String| Annotation {
        annotation_date: created.clone(),
        annotation_type: "OTHER".into(),
        annotator: annotator.clone(),
        comment,
    };

    let image_purl = Purl::new("oci", image_short_name(&meta.name), Some(meta.digest.to_string()));
    let mut spdx_packages = vec![SpdxPackage {
        spdx_id: IMAGE_SPDX_ID.into(),
        name: meta.name.clone(),
        version_info: Some(meta.digest.to_string()),
        supplier: NOASSERTION.into(),
        download_location: NOASSERTION.into(),
        files_analyzed: false,
        primary_package_purpose: Some("CONTAINER".into()),
        external_refs: vec![purl_ref(image_purl.to_string())],
        annotations: vec![],
    }];
    let mut relationships = vec![Relationship {
        spdx_element_id: DOCUMENT_SPDX_ID.into(),
        relationship_type: "DESCRIBES".into(),
        related_spdx_element: IMAGE_SPDX_ID.into(),
    }];

    let mut used: BTreeSet<String> = BTreeSet::from([IMAGE_SPDX_ID.to_string()]);
    for p in components(packages, refs) {
        let base = format!(
            "SPDXRef-Package-{}-{}{}",
            p.ecosystem,
            sanitize_id(&p.name),
            p.version.as_deref().map(|v| format!("-{}", sanitize_id(v))).unwrap_or_default()
        );
        let mut id = base.clone();
        let mut n = 2;
        while !used.insert(id.clone()) {
            id = format!("{base}-{n}");
            n += 1;
        }
        let mut annotations = vec![annotate(format!("source-layer: {}", p.source_layer))];
        if p.obscured {
            annotations.push(annotate("obscured: true".into()));
        }
        for flag in &p.flags {
            annotations.push(annotate(format!("flag: {flag}")));
        }
        relationships.push(Relationship {
            spdx_element_id: IMAGE_SPDX_ID.into(),
            relationship_type: "CONTAINS".into(),
            related_spdx_element: id.clone(),
        });
        spdx_packages.push(SpdxPackage {
            spdx_id: id,
            name: p.name.clone(),
            version_info: p.version.clone(),
            supplier: NOASSERTION.into(),
            download_location: p.download_location.clone().unwrap_or_else(|| NOASSERTION.into()),
            files_analyzed: false,
            primary_package_purpose: None,
            external_refs: vec![purl_ref(package_purl(&p, meta.os.as_ref()).to_string())],
            annotations,
        });
    }

    SbomDocument {
        spdx_version: SPDX_VERSION.into(),
        data_license: DATA_LICENSE.into(),
        spdx_id: DOCUMENT_SPDX_ID.into(),
        name: meta.name.clone(),
        document_namespace: document_namespace(meta),
        creation_info: CreationInfo { created, creators: vec![format!("Tool: {}", tool_name())] },
        document_describes: vec![IMAGE_SPDX_ID.into()],
        packages: spdx_packages,
        relationships,
    }
}

fn purl_ref(locator: String) -> ExternalRef {
    ExternalRef {
        reference_category: "PACKAGE-MANAGER".into(),
        reference_type: "purl".into(),
        reference_locator: locator,
    }
}

impl SbomDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("document serializes");
        s.push('\n');
        s
    }

    /// Component packages, excluding the image itself.
    pub fn components(&self) -> impl Iterator<Item = &SpdxPackage> {
        self.packages.iter().filter(|p| p.spdx_id != IMAGE_SPDX_ID)
    }
}
