use hmac::{Hmac, Mac};
use sha2::Sha256;

use super::DtsError;

type HmacSha256 = Hmac<Sha256>;

/// A key the boot chain trusts for device-tree signatures.
#[derive(Clone, PartialEq, Eq)]
pub struct TrustedKey(pub Vec<u8>);

impl std::fmt::Debug for TrustedKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TrustedKey({} bytes)", self.0.len())
    }
}

/// HMAC-SHA256 of the exact file bytes.
pub fn keyed_hash(key: &TrustedKey, bytes: &[u8]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(&key.0).expect("HMAC accepts any key length");
    mac.update(bytes);
    mac.finalize().into_bytes().into()
}

pub fn verify_signature(text: &[u8], signature: &[u8; 32], trusted_keys: &[TrustedKey]) -> bool {
    trusted_keys.iter().any(|k| {
        let mut mac = HmacSha256::new_from_slice(&k.0).expect("HMAC accepts any key length");
        mac.update(text);
        mac.verify_slice(signature).is_ok()
    })
}

/// Parses a signature sidecar: 64 hex characters on one line.
pub fn parse_signature(text: &str) -> Result<[u8; 32], DtsError> {
    let line = text.trim_end_matches(['\n', '\r']);
    let bad = |msg: &str| DtsError::Syntax {
        line: 1,
        msg: format!("signature: {msg}"),
    };
    if line.contains('\n') {
        return Err(bad("expected a single line"));
    }
    if line.len() != 64 {
        return Err(bad("expected 64 hex characters"));
    }
    let mut out = [0u8; 32];
    hex::decode_to_slice(line, &mut out).map_err(|_| bad("not hex"))?;
    Ok(out)
}

/// One hex-encoded key per line; blank lines and `#` comments are ignored.
pub fn parse_key_file(text: &str) -> Result<Vec<TrustedKey>, DtsError> {
    let mut keys = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bytes = hex::decode(line).map_err(|_| DtsError::Syntax {
            line: i + 1,
            msg: "key is not hex".into(),
        })?;
        if bytes.is_empty() {
            continue;
        }
        keys.push(TrustedKey(bytes));
    }
    Ok(keys)
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: &[u8] = b"/ { };\n";

    #[test]
    fn accepts_trusted_key() {
        let k = TrustedKey(b"board-key".to_vec());
        assert!(verify_signature(T, &keyed_hash(&k, T), &[k]));
    }

    #[test]
    fn rejects_flipped_byte() {
        let k = TrustedKey(b"board-key".to_vec());
        let mut tampered = T.to_vec();
        tampered[2] ^= 1;
        assert!(!verify_signature(T, &keyed_hash(&k, &tampered), &[k]));
    }

    #[test]
    fn rejects_untrusted_key() {
        let k1 = TrustedKey(b"one".to_vec());
        let k2 = TrustedKey(b"two".to_vec());
        assert!(!verify_signature(T, &keyed_hash(&k2, T), std::slice::from_ref(&k1)));
        assert!(verify_signature(T, &keyed_hash(&k2, T), &[k1, k2]));
    }

    #[test]
    fn sidecar_and_key_files() {
        let sig = "ab".repeat(32);
        assert_eq!(parse_signature(&format!("{sig}\n")).unwrap(), [0xab; 32]);
        assert!(parse_signature("abcd").is_err());
        assert!(parse_signature(&"zz".repeat(32)).is_err());
        let keys = parse_key_file("# keys\n00ff\n\n  1234 # second\n").unwrap();
        assert_eq!(keys, vec![TrustedKey(vec![0, 0xff]), TrustedKey(vec![0x12, 0x34])]);
        assert!(parse_key_file("xyz").is_err());
    }
}
