//! Message transport for offload connections: plain frames on loopback, or
//! frames sealed with a pre-shared key.
//!
//! The sealed mode opens with a nonce exchange (`"ESCA" | client nonce[32]`,
//! answered by `server nonce[32]`). Direction keys come from HKDF-SHA256 over
//! the PSK salted with both nonces; each frame then travels as
//! `u32 len | ChaCha20-Poly1305 ciphertext` with a per-direction counter nonce.

use std::io::{self, Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use rand::RngCore;
use sha2::Sha256;

use super::wire::{read_frame, WireError};

const HELLO: &[u8; 4] = b"ESCA";
const TAG_LEN: usize = 16;

#[derive(Clone, PartialEq, Eq, Default)]
pub enum ChannelSecurity {
    /// Unencrypted frames; only accepted on loopback addresses.
    #[default]
    Plain,
    Authenticated {
        psk: [u8; 32],
    },
}

impl std::fmt::Debug for ChannelSecurity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChannelSecurity::Plain => f.write_str("Plain"),
            ChannelSecurity::Authenticated { .. } => f.write_str("Authenticated"),
        }
    }
}

impl ChannelSecurity {
    /// Derive a 32-byte key from a passphrase.
    pub fn from_passphrase(passphrase: &str) -> Self {
        use sha2::Digest;
        ChannelSecurity::Authenticated {
            psk: Sha256::digest(passphrase.as_bytes()).into(),
        }
    }
}

struct Sealer {
    send: ChaCha20Poly1305,
    recv: ChaCha20Poly1305,
    send_ctr: u64,
    recv_ctr: u64,
}

fn nonce(counter: u64) -> Nonce {
    let mut n = [0u8; 12];
    n[4..].copy_from_slice(&counter.to_le_bytes());
    n.into()
}

fn derive(psk: &[u8; 32], client_nonce: &[u8; 32], server_nonce: &[u8; 32], label: &[u8]) -> ChaCha20Poly1305 {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(client_nonce);
    salt[32..].copy_from_slice(server_nonce);
    let hk = Hkdf::<Sha256>::new(Some(&salt), psk);
    let mut key = [0u8; 32];
    hk.expand(label, &mut key).expect("32 bytes is a valid HKDF length");
    ChaCha20Poly1305::new(Key::from_slice(&key))
}

/// A duplex byte stream carrying whole frames.
pub struct MessageStream<S> {
    inner: S,
    sealer: Option<Sealer>,
    max_frame: usize,
}

impl<S: Read + Write> MessageStream<S> {
    pub fn client(mut inner: S, security: &ChannelSecurity, max_frame: usize) -> Result<Self, WireError> {
        let sealer = match security {
            ChannelSecurity::Plain => None,
            ChannelSecurity::Authenticated { psk } => {
                let mut cn = [0u8; 32];
                rand::thread_rng().fill_bytes(&mut cn);
                let mut hello = Vec::with_capacity(36);
                hello.extend_from_slice(HELLO);
                hello.extend_from_slice(&cn);
                inner.write_all(&hello)?;
                inner.flush()?;
                let mut sn = [0u8; 32];
                inner.read_exact(&mut sn)?;
                Some(Sealer {
                    send: derive(psk, &cn, &sn, b"escrow offload c2s"),
                    recv: derive(psk, &cn, &sn, b"escrow offload s2c"),
                    send_ctr: 0,
                    recv_ctr: 0,
                })
            }
        };
        Ok(Self {
            inner,
            sealer,
            max_frame,
        })
    }

    pub fn server(mut inner: S, security: &ChannelSecurity, max_frame: usize) -> Result<Self, WireError> {
        let sealer = match security {
            ChannelSecurity::Plain => None,
            ChannelSecurity::Authenticated { psk } => {
                let mut hello = [0u8; 36];
                inner.read_exact(&mut hello)?;
                if &hello[..4] != HELLO {
                    return Err(WireError::BadMagic);
                }
                let cn: [u8; 32] = hello[4..].try_into().unwrap();
                let mut sn = [0u8; 32];
                rand::thread_rng().fill_bytes(&mut sn);
                inner.write_all(&sn)?;
                inner.flush()?;
                Some(Sealer {
                    send: derive(psk, &cn, &sn, b"escrow offload s2c"),
                    recv: derive(psk, &cn, &sn, b"escrow offload c2s"),
                    send_ctr: 0,
                    recv_ctr: 0,
                })
            }
        };
        Ok(Self {
            inner,
            sealer,
            max_frame,
        })
    }

    pub fn get_ref(&self) -> &S {
        &self.inner
    }

    pub fn send(&mut self, frame: &[u8]) -> Result<(), WireError> {
        match &mut self.sealer {
            None => self.inner.write_all(frame)?,
            Some(s) => {
                let ct = s
                    .send
                    .encrypt(&nonce(s.send_ctr), frame)
                    .map_err(|_| WireError::AuthFailed)?;
                s.send_ctr += 1;
                let len = u32::try_from(ct.len()).map_err(|_| WireError::FrameTooLarge(ct.len()))?;
                self.inner.write_all(&len.to_le_bytes())?;
                self.inner.write_all(&ct)?;
            }
        }
        self.inner.flush()?;
        Ok(())
    }

    /// Receive one frame; `None` on clean close.
    pub fn recv(&mut self) -> Result<Option<Vec<u8>>, WireError> {
        let Some(s) = &mut self.sealer else {
            return read_frame(&mut self.inner, self.max_frame);
        };
        let mut len = [0u8; 4];
        match read_full(&mut self.inner, &mut len)? {
            0 => return Ok(None),
            4 => {}
            _ => return Err(WireError::Truncated),
        }
        let len = u32::from_le_bytes(len) as usize;
        if len < TAG_LEN || len - TAG_LEN > self.max_frame + super::wire::FRAME_HEADER_LEN {
            return Err(WireError::FrameTooLarge(len));
        }
        let mut ct = vec![0u8; len];
        self.inner.read_exact(&mut ct).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => WireError::Truncated,
            _ => WireError::Io(e),
        })?;
        let pt = s
            .recv
            .decrypt(&nonce(s.recv_ctr), ct.as_slice())
            .map_err(|_| WireError::AuthFailed)?;
        s.recv_ctr += 1;
        Ok(Some(pt))
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize, WireError> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(got)
}

static TAP_TOTAL: AtomicU64 = AtomicU64::new(0);
static TAP_UNTRUSTED: AtomicU64 = AtomicU64::new(0);

/// Process-wide totals of bytes written by offload clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapCounters {
    pub total_bytes: u64,
    pub untrusted_bytes: u64,
}

pub fn tap_counters() -> TapCounters {
    TapCounters {
        total_bytes: TAP_TOTAL.load(Ordering::SeqCst),
        untrusted_bytes: TAP_UNTRUSTED.load(Ordering::SeqCst),
    }
}

/// Counts every byte a client writes, keyed by the trust flag of the
/// descriptor the connection was opened for.
pub struct TapStream<S> {
    inner: S,
    trusted: bool,
}

impl<S> TapStream<S> {
    pub fn new(inner: S, trusted: bool) -> Self {
        Self { inner, trusted }
    }

    pub fn get_ref(&self) -> &S {
        &self.inner
    }
}

impl<S: Write> Write for TapStream<S> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        TAP_TOTAL.fetch_add(n as u64, Ordering::SeqCst);
        if !self.trusted {
            TAP_UNTRUSTED.fetch_add(n as u64, Ordering::SeqCst);
        }
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

impl<S: Read> Read for TapStream<S> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.inner.read(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::{TcpListener, TcpStream};
    use std::thread;

    fn pair(client_sec: ChannelSecurity, server_sec: ChannelSecurity) -> (Result<Vec<u8>, String>, Vec<u8>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = thread::spawn(move || {
            let (s, _) = listener.accept().unwrap();
            let mut ms = MessageStream::server(s, &server_sec, 1 << 20).unwrap();
            let got = ms.recv().map_err(|e| e.to_string()).and_then(|f| f.ok_or_else(|| "closed".to_string()));
            if got.is_ok() {
                ms.send(b"pong").unwrap();
            }
            got
        });
        let s = TcpStream::connect(addr).unwrap();
        let mut ms = MessageStream::client(s, &client_sec, 1 << 20).unwrap();
        ms.send(b"ping frame").unwrap();
        let reply = ms.recv().ok().flatten().unwrap_or_default();
        (server.join().unwrap(), reply)
    }

    #[test]
    fn sealed_round_trip() {
        let sec = ChannelSecurity::from_passphrase("correct horse");
        let (got, reply) = pair(sec.clone(), sec);
        assert_eq!(got.unwrap(), b"ping frame");
        assert_eq!(reply, b"pong");
    }

    #[test]
    fn wrong_key_fails_authentication() {
        let (got, reply) = pair(
            ChannelSecurity::from_passphrase("a"),
            ChannelSecurity::from_passphrase("b"),
        );
        assert!(got.unwrap_err().contains("authentication"));
        assert!(reply.is_empty());
    }

    #[test]
    fn debug_hides_key() {
        let s = format!("{:?}", ChannelSecurity::from_passphrase("secret"));
        assert_eq!(s, "Authenticated");
    }
}
