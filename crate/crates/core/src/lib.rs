pub mod b64;
pub mod cert;
pub mod credential;
pub mod crypto;
pub mod derive;
pub mod domain;
pub mod encoding;
pub mod envelope;
pub mod gateway;
pub mod guard;
pub mod harness;
pub mod ltca;
pub mod pca;
pub mod ra;
pub mod records;
pub mod service;
pub mod transport;
pub mod vehicle;
