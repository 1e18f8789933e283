//! Toy key schedule.
//!
//! `shared = H(client_random || server_random)`, `forward_secure_key =
//! H(shared || "fs")`, FIN MAC = `HMAC(forward_secure_key, transcript)`.
//! The transcript is the concatenation of encoded handshake frames in
//! exchange order, so the two FIN MACs cover different prefixes: the server
//! signs CLIENTHELLO||SERVERHELLO, the client signs
//! CLIENTHELLO||SERVERHELLO||server-FIN. This exercises message flow only
//! and provides no real confidentiality.

use hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};

fn derive_shared(client_random: &[u8; 32], server_random: &[u8; 32]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(client_random);
    h.update(server_random);
    h.finalize().into()
}

/// Derives the forward-secure key both sides arrive at.
pub fn derive_forward_secure_key(client_random: &[u8; 32], server_random: &[u8; 32]) -> [u8; 32] {
    let shared = derive_shared(client_random, server_random);
    let mut h = Sha256::new();
    h.update(shared);
    h.update(b"fs");
    h.finalize().into()
}

/// MAC over the handshake transcript so far, keyed by the forward-secure key.
pub fn transcript_mac(forward_secure_key: &[u8; 32], transcript: &[u8]) -> [u8; 32] {
    let mut mac = Hmac::<Sha256>::new_from_slice(forward_secure_key)
        .expect("hmac accepts any key length");
    mac.update(transcript);
    mac.finalize().into_bytes().into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_deterministic_and_order_sensitive() {
        let a = [1u8; 32];
        let b = [2u8; 32];
        assert_eq!(derive_forward_secure_key(&a, &b), derive_forward_secure_key(&a, &b));
        assert_ne!(derive_forward_secure_key(&a, &b), derive_forward_secure_key(&b, &a));
    }

    #[test]
    fn forward_secure_key_differs_from_shared() {
        let a = [3u8; 32];
        let b = [4u8; 32];
        assert_ne!(derive_forward_secure_key(&a, &b), derive_shared(&a, &b));
    }

    #[test]
    fn transcript_mac_depends_on_key_and_transcript() {
        let k1 = [5u8; 32];
        let k2 = [6u8; 32];
        let t = b"frame bytes";
        assert_eq!(transcript_mac(&k1, t), transcript_mac(&k1, t));
        assert_ne!(transcript_mac(&k1, t), transcript_mac(&k2, t));
        assert_ne!(transcript_mac(&k1, t), transcript_mac(&k1, b"frame bytes!"));
    }
}
